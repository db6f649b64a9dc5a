//! Shared machinery of the experiment runners: context resolution from a
//! config, envelope solves with warm starts and coarse-to-fine cascades, and
//! the constant-coefficient gate context.

use std::sync::Arc;

use crate::calculus::{default_eta, integrate_top};
use crate::config::RunConfig;
use crate::envelope::{
    envelope_from, envelope_multilevel, EnvelopeParams, EnvelopeResult, StencilSet,
};
use crate::error::{Error, Result};
use crate::field::{ScalarField, TrigPoly};
use crate::form::{
    i_ddbar_spectral, make_class_form, make_hermitian_metric, ClassSpec, FormField, MetricRecipe,
};
use crate::grid::Grid;
use crate::herm::HMat;
use crate::ma::NewtonParams;

use super::report::GridSummary;

/// Resolved experiment inputs.
pub struct ExpContext {
    pub grid: Arc<Grid>,
    pub n: usize,
    pub class_a: HMat,
    pub class_f: TrigPoly,
    pub recipe: MetricRecipe,
    pub alpha: FormField,
    pub omega: Arc<FormField>,
    pub alpha_top: f64,
    pub probes: Vec<(String, TrigPoly)>,
    pub epsilons: Vec<f64>,
    pub stencil: StencilSet,
    pub eta: f64,
    pub env_params: EnvelopeParams,
    pub newton: NewtonParams,
    pub coarse_start: usize,
    pub seed: u64,
}

impl ExpContext {
    pub fn from_config(cfg: &RunConfig) -> Result<ExpContext> {
        let grid = Grid::new(cfg.grid.n, cfg.grid.points)?;
        let n = grid.dim();
        let class_a = cfg.class_matrix()?;
        let class_f = cfg.class_potential()?;
        let recipe = cfg.metric_recipe()?;
        let alpha = make_class_form(&grid, &ClassSpec::new(class_a, class_f.clone()))?;
        let omega = Arc::new(make_hermitian_metric(&grid, &recipe)?);
        let alpha_top = integrate_top(&alpha)?;
        let probes = cfg.probe_polys()?;
        let epsilons = cfg.epsilon_values()?;
        let stencil = StencilSet::new(n, cfg.solver.stencil_radius)?;
        let eta = default_eta(&grid);
        let env_params = EnvelopeParams {
            tau_factor: cfg.solver.envelope_tau_factor,
            tol_abs: cfg.solver.envelope_tol,
            max_iter: cfg.solver.envelope_max_iter,
            eta: Some(eta),
            ..EnvelopeParams::default()
        };
        let newton = NewtonParams {
            tol: cfg.solver.newton_tol,
            ..NewtonParams::default()
        };
        Ok(ExpContext {
            grid,
            n,
            class_a,
            class_f,
            recipe,
            alpha,
            omega,
            alpha_top,
            probes,
            epsilons,
            stencil,
            eta,
            env_params,
            newton,
            coarse_start: cfg.solver.coarse_start,
            seed: cfg.seed,
        })
    }

    pub fn grid_summary(&self) -> GridSummary {
        GridSummary {
            n: self.n,
            points_per_axis: self.grid.points_per_axis(),
            spacing: self.grid.spacing(),
            total_points: self.grid.len(),
        }
    }

    /// beta = alpha + i ddbar u for a spectral probe.
    pub fn beta(&self, probe: &TrigPoly) -> Result<FormField> {
        if probe.is_zero() {
            return Ok(self.alpha.clone());
        }
        self.alpha.add(&i_ddbar_spectral(&self.grid, probe)?)
    }

    /// beta + eps omega on the context grid.
    pub fn beta_eps(&self, probe: &TrigPoly, eps: f64) -> Result<FormField> {
        self.beta(probe)?.add_metric(&self.omega, eps)
    }

    /// Rebuild beta + eps omega on an arbitrary grid (multilevel cascades).
    pub fn beta_eps_on(&self, grid: &Arc<Grid>, probe: &TrigPoly, eps: f64) -> Result<FormField> {
        let alpha = make_class_form(grid, &ClassSpec::new(self.class_a, self.class_f.clone()))?;
        let omega = Arc::new(make_hermitian_metric(grid, &self.recipe)?);
        let beta = if probe.is_zero() {
            alpha
        } else {
            alpha.add(&i_ddbar_spectral(grid, probe)?)
        };
        beta.add_metric(&omega, eps)
    }

    /// Envelope solve: multilevel cascade on a cold start, plain iteration on
    /// a warm start from the previous (larger) epsilon.
    pub fn solve_envelope(
        &self,
        probe: &TrigPoly,
        eps: f64,
        warm: Option<&ScalarField>,
    ) -> Result<(FormField, EnvelopeResult)> {
        let beta_eps = self.beta_eps(probe, eps)?;
        let result = match warm {
            Some(u_prev) => envelope_from(&beta_eps, &self.stencil, &self.env_params, u_prev)?,
            None => {
                if self.coarse_start < self.grid.points_per_axis() {
                    envelope_multilevel(
                        &|g| self.beta_eps_on(g, probe, eps),
                        &self.grid,
                        self.coarse_start,
                        &self.stencil,
                        &self.env_params,
                    )?
                } else {
                    envelope_from(
                        &beta_eps,
                        &self.stencil,
                        &self.env_params,
                        &ScalarField::zeros(self.grid.clone()),
                    )?
                }
            }
        };
        Ok((beta_eps, result))
    }

    /// The semipositivity witness v = -f (alpha + i ddbar v = A >= 0) when
    /// the constant part is positive semidefinite.
    pub fn semipositive_witness(&self) -> Option<TrigPoly> {
        if self.class_a.min_eig() >= 0.0 {
            Some(self.class_f.scale_real(-1.0))
        } else {
            None
        }
    }

    /// A potential h with alpha + eps omega + i ddbar h > 0 for every
    /// scheduled eps (used as the nef-realization input): h = -f works
    /// whenever A is positive definite.
    pub fn nef_potential(&self) -> Result<TrigPoly> {
        if self.class_a.min_eig() > 0.0 {
            Ok(self.class_f.scale_real(-1.0))
        } else {
            Err(Error::Experiment(
                "class matrix is not positive definite; supply a nef potential".into(),
            ))
        }
    }
}

/// Constant-coefficient gate context: same dimension and metric family as
/// the run, N = 8, A = diag(1, 1.5, 0.75), f = 0, zero probe. All gate
/// identities must hold at 1e-12 before the nontrivial run starts.
pub fn gate_context(cfg: &RunConfig) -> Result<ExpContext> {
    let mut gate_cfg = cfg.clone();
    gate_cfg.grid.points = 8;
    let n = cfg.grid.n;
    let diag = [1.0, 1.5, 0.75];
    gate_cfg.class.matrix = (0..n)
        .map(|j| {
            (0..n)
                .map(|k| if j == k { [diag[j], 0.0] } else { [0.0, 0.0] })
                .collect()
        })
        .collect();
    gate_cfg.class.potential_modes = Vec::new();
    gate_cfg.metric = crate::config::MetricConfig {
        recipe: "flat".into(),
        rho_modes: Vec::new(),
        amplitude: None,
    };
    gate_cfg.probes = Vec::new();
    gate_cfg.epsilons = crate::config::EpsilonSchedule {
        values: Some(vec![0.5, 0.25]),
        start: None,
        count: None,
        ratio: None,
    };
    ExpContext::from_config(&gate_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn cfg_json() -> &'static str {
        r#"{
            "experiment": "morse_gap",
            "grid": {"n": 1, "points": 32},
            "class": {
                "matrix": [[[1.0, 0.0]]],
                "potential_modes": [{"k": [1, 0], "cos": -0.2026423672846756}]
            },
            "metric": {"recipe": "flat"},
            "probes": [{"name": "witness", "negated_class_potential": true}],
            "epsilons": {"start": 0.5, "count": 4}
        }"#
    }

    #[test]
    fn context_resolution() {
        let cfg = RunConfig::from_json(cfg_json()).unwrap();
        let ctx = ExpContext::from_config(&cfg).unwrap();
        assert_eq!(ctx.n, 1);
        assert_eq!(ctx.probes.len(), 2);
        assert_eq!(ctx.probes[0].0, "zero");
        // alpha_top = 2 det(A) = 2 at n=1
        assert!((ctx.alpha_top - 2.0).abs() < 1e-10);
        assert!(ctx.semipositive_witness().is_some());
        // witness probe equals -f
        let w = ctx.semipositive_witness().unwrap();
        assert!(w.sub(&ctx.probes[1].1).sup_bound() < 1e-15);
    }

    #[test]
    fn warm_start_family_is_monotone() {
        let cfg = RunConfig::from_json(cfg_json()).unwrap();
        let ctx = ExpContext::from_config(&cfg).unwrap();
        let zero = ctx.probes[0].1.clone();
        let mut warm: Option<ScalarField> = None;
        let mut prev_sup: Option<f64> = None;
        for &eps in &ctx.epsilons {
            let (_, res) = ctx.solve_envelope(&zero, eps, warm.as_ref()).unwrap();
            assert!(res.converged);
            // u_eps decreases pointwise as eps shrinks, so sup|u| grows
            if let Some(p) = prev_sup {
                assert!(res.u_eps.sup_norm() >= p - 1e-10);
            }
            prev_sup = Some(res.u_eps.sup_norm());
            warm = Some(res.u_eps.clone());
        }
    }
}
