use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid PSK order {0}: must be a power of two and at least 2")]
    InvalidOrder(usize),

    #[error("singular channel: {0}")]
    SingularChannel(&'static str),

    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("unsupported constellation: half-angle {theta} rad makes the quantization-noise covariance singular")]
    UnsupportedConstellation { theta: f64 },

    #[error("Lloyd-Max ({bits} bits) did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        bits: u32,
        iterations: usize,
        residual: f64,
        levels: Vec<f64>,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("energy efficiency is infinite: zero transmit energy with positive throughput")]
    InfiniteEnergyEfficiency,

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown sweep preset `{0}`")]
    UnknownPreset(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::UnknownPreset(_)
            | Error::InvalidOrder(_)
            | Error::Domain { .. } => 2,
            Error::UnsupportedConstellation { .. } => 2,
            _ => 3,
        }
    }
}
