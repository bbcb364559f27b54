use thiserror::Error;

/// Errors raised by estimation, monitoring and the supporting numerics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("information matrix is singular (smallest eigenvalue {min_eigenvalue:e} below floor {floor:e})")]
    SingularInformation { min_eigenvalue: f64, floor: f64 },

    #[error("optimizer did not converge (projected gradient norm {grad_norm:e}, objective {objective})")]
    OptimizationFailure {
        /// Best iterate found across all starts.
        theta: Vec<f64>,
        objective: f64,
        grad_norm: f64,
    },

    #[error("delay ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
