//! Error taxonomy shared across the library.

use thiserror::Error;

use crate::ldp::MCEstimate;
use crate::skeleton::RateResult;

#[derive(Debug, Error)]
pub enum SgbhError {
    #[error("degenerate grid: n_interior = {0}, need at least 3")]
    DegenerateGrid(usize),

    #[error("aliasing: mode {j} exceeds grid resolution n = {n}")]
    Aliasing { j: usize, n: usize },

    #[error("singular time: kernel evaluation needs t > 0, got {0}")]
    SingularTime(f64),

    #[error("trace condition violated: eta = {0}, need eta > 1/4")]
    TraceCondition(f64),

    #[error("time {t} is not an integer multiple of dt = {dt}")]
    Alignment { t: f64, dt: f64 },

    #[error("blowup at step {step}: field exceeded {threshold:e} or became non-finite")]
    Blowup { step: usize, threshold: f64 },

    #[error("CFL violation at step {step}: alpha*max|u|^delta*dt/h = {value:.3e} > 1")]
    Cfl { step: usize, value: f64 },

    #[error("fixed-point iteration stagnated: residual {residual:e} after {iterations} iterations")]
    NoContraction { residual: f64, iterations: usize },

    #[error("optimizer did not converge: grad_norm {grad_norm:e} after {iterations} iterations")]
    NonConvergence {
        grad_norm: f64,
        iterations: usize,
        best: Box<RateResult>,
    },

    #[error("estimability guard failed at eps = {eps}: p_hat = {p_hat} < {threshold}")]
    Unestimable {
        eps: f64,
        p_hat: f64,
        threshold: f64,
        partial: Vec<MCEstimate>,
    },

    #[error("trajectory carries no noise record")]
    NoNoiseRecord,

    #[error("invalid argument: {0}")]
    Invalid(String),
}

impl SgbhError {
    /// Stable machine-readable tag for diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            SgbhError::DegenerateGrid(_) => "degenerate-grid",
            SgbhError::Aliasing { .. } => "aliasing",
            SgbhError::SingularTime(_) => "singular-time",
            SgbhError::TraceCondition(_) => "trace-condition",
            SgbhError::Alignment { .. } => "alignment",
            SgbhError::Blowup { .. } => "blowup",
            SgbhError::Cfl { .. } => "cfl",
            SgbhError::NoContraction { .. } => "no-contraction",
            SgbhError::NonConvergence { .. } => "nonconvergence",
            SgbhError::Unestimable { .. } => "unestimable",
            SgbhError::NoNoiseRecord => "no-noise-record",
            SgbhError::Invalid(_) => "invalid-argument",
        }
    }
}
