//! Experiment run configuration: a single strict-mode JSON document.
//!
//! Unknown keys are rejected everywhere (`deny_unknown_fields`), and every
//! output file embeds the SHA-256 hash of the canonical serialized config.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::TrigPoly;
use crate::form::MetricRecipe;
use crate::grid::MAX_AXES;
use crate::herm::HMat;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Experiment id; see the catalog.
    pub experiment: String,
    pub grid: GridConfig,
    pub class: ClassConfig,
    pub metric: MetricConfig,
    /// Probe potentials u (one per entry), as Fourier mode lists.
    #[serde(default)]
    pub probes: Vec<ProbeConfig>,
    pub epsilons: EpsilonSchedule,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Seed for any sampled check.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory (the CLI --out flag overrides this).
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Hypothesis exponent delta for the mixed-integral recursion fits.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Monge-Ampere route for the h-tilde experiment: "cherrier" or "tw".
    #[serde(default)]
    pub route: Option<String>,
    /// Volume-density modes for the normalized family (positive, mean 1).
    #[serde(default)]
    pub volume_density_modes: Option<Vec<ModeConfig>>,
    /// Decreasing delta schedule for exponential-regularization checks.
    #[serde(default)]
    pub exponential_deltas: Option<Vec<f64>>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    /// Hermitian n x n matrix, entries as [re, im] pairs, row-major.
    pub matrix: Vec<Vec<[f64; 2]>>,
    /// Fourier modes of the class potential f.
    #[serde(default)]
    pub potential_modes: Vec<ModeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub name: String,
    #[serde(default)]
    pub modes: Vec<ModeConfig>,
    /// Shorthand: the semipositivity witness -f (overrides modes).
    #[serde(default)]
    pub negated_class_potential: bool,
}

/// A Fourier mode. Either a raw complex coefficient at frequency k (`re`,
/// `im`; the conjugate partner must be listed too), or the real shorthands
/// `cos`/`sin` which expand to a conjugate pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub k: Vec<i32>,
    #[serde(default)]
    pub re: Option<f64>,
    #[serde(default)]
    pub im: Option<f64>,
    #[serde(default)]
    pub cos: Option<f64>,
    #[serde(default)]
    pub sin: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    /// "flat", "gauduchon", or "generic".
    pub recipe: String,
    /// gauduchon: modes of the potential rho.
    #[serde(default)]
    pub rho_modes: Vec<ModeConfig>,
    /// generic: perturbation amplitude.
    #[serde(default)]
    pub amplitude: Option<f64>,
}

/// Epsilon schedule: either an explicit decreasing list, or geometric
/// start * ratio^{-k} for `count` points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative Morse-gap target.
    #[serde(default = "d_morse_gap")]
    pub morse_gap_rel: f64,
    /// Relative tolerance of Stokes-type steps.
    #[serde(default = "d_stokes")]
    pub stokes_rel: f64,
    /// Relative tolerance of the per-row inequality chain.
    #[serde(default = "d_chain")]
    pub chain_rel: f64,
    /// Slack added to fitted exponents.
    #[serde(default = "d_slack")]
    pub fit_slack: f64,
    /// |slope| bound certifying a uniformly bounded norm.
    #[serde(default = "d_flat_slope")]
    pub flat_slope: f64,
}

fn d_morse_gap() -> f64 {
    0.02
}
fn d_stokes() -> f64 {
    0.02
}
fn d_chain() -> f64 {
    0.05
}
fn d_slack() -> f64 {
    0.2
}
fn d_flat_slope() -> f64 {
    0.05
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            morse_gap_rel: d_morse_gap(),
            stokes_rel: d_stokes(),
            chain_rel: d_chain(),
            fit_slack: d_slack(),
            flat_slope: d_flat_slope(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Euler step factor tau/h^2 used by the experiment driver. The fixed
    /// point does not depend on it; 0.9 converges ~3.6x faster than the
    /// reference 0.25 and stays monotone.
    #[serde(default = "d_tau")]
    pub envelope_tau_factor: f64,
    /// Absolute envelope tolerance (sup of one update); None = scaled default.
    #[serde(default)]
    pub envelope_tol: Option<f64>,
    #[serde(default)]
    pub envelope_max_iter: Option<usize>,
    /// Stencil refinement radius (1 = default, 2 = refined).
    #[serde(default = "d_radius")]
    pub stencil_radius: i32,
    /// Coarsest level of the multigrid cascade.
    #[serde(default = "d_coarse")]
    pub coarse_start: usize,
    #[serde(default = "d_newton_tol")]
    pub newton_tol: f64,
}

fn d_tau() -> f64 {
    0.9
}
fn d_radius() -> i32 {
    1
}
fn d_coarse() -> usize {
    16
}
fn d_newton_tol() -> f64 {
    1e-10
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            envelope_tau_factor: d_tau(),
            envelope_tol: None,
            envelope_max_iter: None,
            stencil_radius: d_radius(),
            coarse_start: d_coarse(),
            newton_tol: d_newton_tol(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!(
                "config parse error at line {}, column {}: {}",
                e.line(),
                e.column(),
                e
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        crate::experiments::ExperimentId::parse(&self.experiment)?;
        let n = self.grid.n;
        if self.class.matrix.len() != n || self.class.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidConfig(format!(
                "class.matrix must be {n} x {n} to match grid.n"
            )));
        }
        match self.metric.recipe.as_str() {
            "flat" | "gauduchon" | "generic" => {}
            other => {
                return Err(Error::InvalidConfig(format!(
                    "metric.recipe must be one of flat|gauduchon|generic, got {other:?}"
                )))
            }
        }
        if let Some(route) = &self.route {
            if route != "cherrier" && route != "tw" {
                return Err(Error::InvalidConfig(format!(
                    "route must be cherrier or tw, got {route:?}"
                )));
            }
        }
        self.epsilon_values()?;
        Ok(())
    }

    /// Resolve the epsilon schedule (strictly decreasing).
    pub fn epsilon_values(&self) -> Result<Vec<f64>> {
        let e = &self.epsilons;
        let values = match (&e.values, e.start, e.count) {
            (Some(v), None, None) => v.clone(),
            (None, start, count) => {
                let start = start.unwrap_or(0.5);
                let count = count.unwrap_or(7);
                let ratio = e.ratio.unwrap_or(2.0);
                if ratio <= 1.0 {
                    return Err(Error::InvalidConfig("epsilons.ratio must exceed 1".into()));
                }
                (0..count).map(|k| start / ratio.powi(k as i32)).collect()
            }
            _ => {
                return Err(Error::InvalidConfig(
                    "epsilons: give either values or start/count/ratio, not both".into(),
                ))
            }
        };
        if values.is_empty() || values.iter().any(|v| *v <= 0.0) {
            return Err(Error::InvalidConfig("epsilon schedule must be positive".into()));
        }
        if values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig(
                "epsilon schedule must be strictly decreasing".into(),
            ));
        }
        Ok(values)
    }

    /// Canonical serialized form (field order fixed by the struct).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_json().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn class_matrix(&self) -> Result<HMat> {
        let rows: Vec<Vec<Complex64>> = self
            .class
            .matrix
            .iter()
            .map(|r| r.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
            .collect();
        HMat::from_rows(&rows, 1e-13)
            .map_err(|e| Error::InvalidConfig(format!("class.matrix: {e}")))
    }

    pub fn class_potential(&self) -> Result<TrigPoly> {
        modes_to_poly(2 * self.grid.n, &self.class.potential_modes)
    }

    pub fn metric_recipe(&self) -> Result<MetricRecipe> {
        match self.metric.recipe.as_str() {
            "flat" => Ok(MetricRecipe::Flat),
            "gauduchon" => Ok(MetricRecipe::Gauduchon {
                rho: modes_to_poly(2 * self.grid.n, &self.metric.rho_modes)?,
            }),
            "generic" => Ok(MetricRecipe::Generic {
                amplitude: self.metric.amplitude.ok_or_else(|| {
                    Error::InvalidConfig("generic metric needs metric.amplitude".into())
                })?,
            }),
            other => Err(Error::InvalidConfig(format!("unknown metric recipe {other:?}"))),
        }
    }

    /// Resolve probe potentials; every run gets the zero probe first.
    pub fn probe_polys(&self) -> Result<Vec<(String, TrigPoly)>> {
        let axes = 2 * self.grid.n;
        let mut out = vec![("zero".to_string(), TrigPoly::new(axes))];
        for p in &self.probes {
            let poly = if p.negated_class_potential {
                self.class_potential()?.scale_real(-1.0)
            } else {
                modes_to_poly(axes, &p.modes)?
            };
            out.push((p.name.clone(), poly));
        }
        Ok(out)
    }
}

/// Expand mode configs into a trig polynomial.
pub fn modes_to_poly(axes: usize, modes: &[ModeConfig]) -> Result<TrigPoly> {
    let mut poly = TrigPoly::new(axes);
    for m in modes {
        if m.k.len() != axes {
            return Err(Error::InvalidConfig(format!(
                "mode {:?} must have {} frequency components (2n)",
                m.k, axes
            )));
        }
        let raw = m.re.is_some() || m.im.is_some();
        let sugar = m.cos.is_some() || m.sin.is_some();
        if raw && sugar {
            return Err(Error::InvalidConfig(format!(
                "mode {:?}: give either re/im or cos/sin, not both",
                m.k
            )));
        }
        if sugar {
            if let Some(a) = m.cos {
                poly = poly.add(&TrigPoly::cosine(axes, &m.k, a));
            }
            if let Some(a) = m.sin {
                poly = poly.add(&TrigPoly::sine(axes, &m.k, a));
            }
        } else {
            let mut k = [0i32; MAX_AXES];
            k[..axes].copy_from_slice(&m.k);
            poly.add_term(k, Complex64::new(m.re.unwrap_or(0.0), m.im.unwrap_or(0.0)));
        }
    }
    // realness is validated on evaluation; fail early with a clear message
    poly.check_real(1e-12)
        .map_err(|e| Error::InvalidConfig(format!("mode list is not real: {e}")))?;
    Ok(poly)
}
