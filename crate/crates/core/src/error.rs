use thiserror::Error;

/// Errors produced by grid construction, field/form builders, and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("aliasing: mode {mode:?} has |k| = {freq} >= N/2 = {limit} on axis {axis}")]
    Aliasing {
        mode: Vec<i32>,
        axis: usize,
        freq: i32,
        limit: i32,
    },

    #[error("field is not real: {0}")]
    NonRealField(String),

    #[error("matrix is not Hermitian: max asymmetry {0:.3e}")]
    NonHermitian(f64),

    #[error(
        "form is not positive definite: eigenvalue {eigenvalue:.6e} at grid point {point} {coords:?}"
    )]
    NotPositiveDefinite {
        point: usize,
        coords: Vec<usize>,
        eigenvalue: f64,
    },

    #[error("grid mismatch between operands: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("spectral data required: {0}")]
    SpectralRequired(String),

    #[error("envelope solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConverged { residual: f64, iterations: usize },

    #[error("Monge-Ampere solve failed: {reason} (positivity margin {margin:.3e}, residual {residual:.3e})")]
    MaSolveFailed {
        reason: String,
        margin: f64,
        residual: f64,
    },

    #[error("balayage ball rejected: {0}")]
    BallRejected(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
