use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rendered cloud is empty: no ray hit any surface")]
    EmptyCloud,
    #[error("grasp has no visible seed point (all cone votes are zero)")]
    NoSeed,
    #[error("no object points in cloud")]
    NoObjectPoints,
    #[error("no grasp labels available")]
    NoLabels,
    #[error("non-finite value in velocity field at denoising step {step}")]
    NonFiniteVelocity { step: usize },
    #[error("non-finite loss at iteration {iteration}: L_o={l_o} L_g={l_g} L_d={l_d} L_theta={l_theta}")]
    NonFiniteLoss {
        iteration: usize,
        l_o: f64,
        l_g: f64,
        l_d: f64,
        l_theta: f64,
    },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("index {index} out of range 1..={max}")]
    OutOfRange { index: usize, max: usize },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
