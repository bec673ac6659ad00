use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("sample size exceeds cap of {cap} (epsilon={epsilon}, beta={beta}, dim={dim})")]
    SampleCapExceeded {
        cap: u64,
        epsilon: f64,
        beta: f64,
        dim: u64,
    },

    #[error("allocation did not converge after {iterations} iterations")]
    NonConvergence { iterations: usize },

    #[error("budget violated: {0}")]
    Budget(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("uncertainty domain is empty: {0}")]
    EmptyDomain(String),

    #[error("LP solver failed after {iterations} iterations (primal residual {primal:.3e}, dual residual {dual:.3e}, gap {gap:.3e})")]
    Numerical {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },

    #[error("sampled program is infeasible")]
    ProgramInfeasible,

    #[error("sampled program is unbounded")]
    ProgramUnbounded,

    #[error("sampled program is infeasible at stage {stage}")]
    StageInfeasible { stage: usize },

    #[error("sampled program is unbounded at stage {stage}")]
    StageUnbounded { stage: usize },

    #[error("validation stream (seed {seed}, stream {stream}) collides with a training stream")]
    StreamCollision { seed: u64, stream: u64 },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
