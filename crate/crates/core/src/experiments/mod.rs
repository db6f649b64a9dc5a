//! Paper-level experiments: each runner resolves a config into grids,
//! classes, and metrics, runs its constant-coefficient identity gate, then
//! sweeps the epsilon schedule and renders named verdicts.

pub mod eps_scaling;
pub mod htilde;
pub mod ijk;
pub mod morse_gap;
pub mod n3;
pub mod prop_bd;
pub mod report;
pub mod support;

use std::time::Instant;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub use report::{ExperimentReport, Fit, Row, Verdict};
pub use support::ExpContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    MorseGap,
    EpsScaling,
    IjkTable,
    N3Remark,
    HtildeScaling,
    PropBd,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::MorseGap,
        ExperimentId::EpsScaling,
        ExperimentId::IjkTable,
        ExperimentId::N3Remark,
        ExperimentId::HtildeScaling,
        ExperimentId::PropBd,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ExperimentId::MorseGap => "morse_gap",
            ExperimentId::EpsScaling => "eps_scaling",
            ExperimentId::IjkTable => "ijk_table",
            ExperimentId::N3Remark => "n3_remark",
            ExperimentId::HtildeScaling => "htilde_scaling",
            ExperimentId::PropBd => "prop_bd",
        }
    }

    pub fn parse(s: &str) -> Result<ExperimentId> {
        Self::ALL
            .iter()
            .find(|e| e.id() == s)
            .copied()
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|e| e.id()).collect();
                Error::InvalidConfig(format!(
                    "unknown experiment {s:?}; valid ids: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn description(&self) -> &'static str {
        match self {
            ExperimentId::MorseGap => {
                "Morse-gap equality: envelope-corrected masses, contact-set integrals, \
                 and the infimum of Morse-type integrals over probe potentials vs the class integral"
            }
            ExperimentId::EpsScaling => {
                "epsilon-scaling of envelope norms: sup/L1 growth exponents, uniform bounds \
                 in the semipositive case, and mass convergence"
            }
            ExperimentId::IjkTable => {
                "mixed wedge-integral tables I(j,k): integration-by-parts identity, base-case \
                 inequality, iterated growth fits, and the Stokes expansion identity"
            }
            ExperimentId::N3Remark => {
                "n=3 expansion with a pluriclosed metric: the 4-term identity, the Stokes \
                 replacement of the quadratic term, and its O(eps^2) decay"
            }
            ExperimentId::HtildeScaling => {
                "scaling of Monge-Ampere potentials (Cherrier or constant-problem route), \
                 the maximum-principle bounds, and the envelope sandwich inequality"
            }
            ExperimentId::PropBd => {
                "lower bound of the Monge-Ampere constant: C_eps >= class integral, with the \
                 full restricted-integral inequality chain"
            }
        }
    }

    pub fn required_keys(&self) -> &'static [&'static str] {
        match self {
            ExperimentId::MorseGap => &["grid", "class", "metric", "probes", "epsilons"],
            ExperimentId::EpsScaling => &["grid", "class", "metric", "probes", "epsilons"],
            ExperimentId::IjkTable => &["grid", "class", "metric", "probes", "epsilons", "delta"],
            ExperimentId::N3Remark => &["grid (n=3)", "class", "metric (gauduchon)", "epsilons"],
            ExperimentId::HtildeScaling => &["grid", "class", "metric", "epsilons", "route"],
            ExperimentId::PropBd => {
                &["grid", "class", "metric", "epsilons", "volume_density_modes"]
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentInfo {
    pub id: &'static str,
    pub description: &'static str,
    pub required_keys: &'static [&'static str],
}

/// Human/machine-readable catalog of the experiments.
pub fn catalog() -> Vec<ExperimentInfo> {
    ExperimentId::ALL
        .iter()
        .map(|e| ExperimentInfo {
            id: e.id(),
            description: e.description(),
            required_keys: e.required_keys(),
        })
        .collect()
}

/// Run the experiment named by the config.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport> {
    let id = ExperimentId::parse(&cfg.experiment)?;
    let start = Instant::now();
    let mut report = match id {
        ExperimentId::MorseGap => morse_gap::run(cfg)?,
        ExperimentId::EpsScaling => eps_scaling::run(cfg)?,
        ExperimentId::IjkTable => ijk::run(cfg)?,
        ExperimentId::N3Remark => n3::run(cfg)?,
        ExperimentId::HtildeScaling => htilde::run(cfg)?,
        ExperimentId::PropBd => prop_bd::run(cfg)?,
    };
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Run only the constant-coefficient identity gate of the named experiment.
pub fn run_gate_only(cfg: &RunConfig) -> Result<ExperimentReport> {
    let id = ExperimentId::parse(&cfg.experiment)?;
    let start = Instant::now();
    let ctx = support::gate_context(cfg)?;
    let mut report = ExperimentReport::new(
        &format!("{}:gate", id.id()),
        &cfg.hash(),
        ctx.grid_summary(),
    );
    report.alpha_top = ctx.alpha_top;
    report.gate = match id {
        ExperimentId::MorseGap => morse_gap::gate(&ctx)?,
        ExperimentId::EpsScaling => eps_scaling::gate(&ctx)?,
        ExperimentId::IjkTable => ijk::gate(&ctx)?,
        ExperimentId::N3Remark => n3::gate(&ctx)?,
        ExperimentId::HtildeScaling => htilde::gate(&ctx)?,
        ExperimentId::PropBd => prop_bd::gate(&ctx)?,
    };
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
