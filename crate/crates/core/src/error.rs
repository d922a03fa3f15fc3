use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Sizing(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("expression error at column {column}: {message}")]
    Parse { column: usize, message: String },

    #[error("derivative order out of range: dt_order={dt_order}, dx_order={dx_order}")]
    OrderOutOfRange { dt_order: usize, dx_order: usize },

    #[error("expression `{expr}` is not finite at (t={t}, x={x})")]
    NotFinite { expr: String, t: f64, x: f64 },

    #[error("dispersion coefficient is not coercive: alpha={value} at (t={t}, x={x})")]
    NonCoercive { value: f64, t: f64, x: f64 },

    #[error("value {y} lies outside the sampled range [{lo}, {hi}] of the straightening map")]
    OutOfRange { y: f64, lo: f64, hi: f64 },

    #[error("solution mass reaches the domain edge: outer-band fraction {fraction:e}")]
    SupportOverflow { fraction: f64 },

    #[error("time step {dt} violates the stability rule (limit {limit})")]
    Stability { dt: f64, limit: f64 },

    #[error("non-finite state at t={t}")]
    BlowUp { t: f64 },

    #[error("negative weight sample {value} at index {index}")]
    NegativeWeight { value: f64, index: usize },

    #[error("test function support violation: {0}")]
    Support(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Column of a parse error, if this is one.
    pub fn column(&self) -> Option<usize> {
        match self {
            Error::Parse { column, .. } => Some(*column),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
