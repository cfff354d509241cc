use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: usize, right: usize },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("riccati iteration did not converge after {iterations} iterations ({pair})")]
    RiccatiNoConvergence { iterations: usize, pair: String },

    #[error("closed loop unstable: spectral radius {radius}")]
    UnstableClosedLoop { radius: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("environment has no terminal reach ball")]
    NoTerminalBall,

    #[error("sample {index} (seed {seed:#018x}) failed: {source}")]
    Sample {
        index: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
