use thiserror::Error;

/// Errors raised by model construction, chain building, design and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch between {left} and {right}: {detail}")]
    DimensionMismatch {
        left: &'static str,
        right: &'static str,
        detail: String,
    },

    #[error("invalid plant: {0}")]
    InvalidPlant(String),

    #[error("invalid delay distribution for sensor {sensor}: {detail}")]
    InvalidDistribution { sensor: usize, detail: String },

    #[error("outcome set too large: {count} states exceeds the cap of {cap}")]
    StateOverflow { count: u128, cap: usize },

    #[error("degenerate distribution: tail probability Pr{{tau_{sensor} > {delay}}} is zero")]
    DegenerateDistribution { sensor: usize, delay: usize },

    #[error("stationary distribution did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("invalid observation window: {0}")]
    InvalidWindow(String),

    #[error("state {0} has zero stationary probability")]
    ZeroProbabilityState(usize),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("singular system in gain update for group {group}")]
    SingularSystem { group: usize },

    #[error("synthesis diverged: objective {objective:e} exceeds ceiling {ceiling:e}")]
    Divergence { objective: f64, ceiling: f64 },

    #[error("schedule does not match chain/model: {0}")]
    ScheduleMismatch(String),

    #[error("covariance ceiling exceeded: trace {trace:e} > {ceiling:e}")]
    CovarianceDivergence { trace: f64, ceiling: f64 },

    #[error("nonpositive baseline trace {0}")]
    NonPositiveDenominator(f64),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("config validation failed at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidPlant(_) => "invalid_plant",
            Error::InvalidDistribution { .. } => "invalid_distribution",
            Error::StateOverflow { .. } => "state_overflow",
            Error::DegenerateDistribution { .. } => "degenerate_distribution",
            Error::NonConvergence { .. } => "non_convergence",
            Error::InvalidWindow(_) => "invalid_window",
            Error::ZeroProbabilityState(_) => "zero_probability_state",
            Error::UnknownStrategy(_) => "unknown_strategy",
            Error::SingularSystem { .. } => "singular_system",
            Error::Divergence { .. } => "divergence",
            Error::ScheduleMismatch(_) => "schedule_mismatch",
            Error::CovarianceDivergence { .. } => "covariance_divergence",
            Error::NonPositiveDenominator(_) => "nonpositive_denominator",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
