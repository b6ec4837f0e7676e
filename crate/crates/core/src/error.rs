use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MathError {
    #[error("{0} is not a probability in [0, 1]")]
    NotAProbability(f64),
    #[error("{0} is not a correlation in [-1, 1]")]
    NotACorrelation(f64),
    #[error("normal quantile requires 0 < p < 1, got {0}")]
    QuantileDomain(f64),
    #[error("beta shape parameters must be positive and finite, got a = {a}, b = {b}")]
    BetaShape { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrBinError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("cell probabilities sum to {sum} > 1")]
    InvalidSpecification { sum: f64 },
    #[error("phi = {phi} is outside the attainable range [{lower}, {upper}] for these marginals")]
    InfeasibleCorrelation { phi: f64, lower: f64, upper: f64 },
    #[error("marginal probability {0} must lie strictly inside (0, 1)")]
    DegenerateMarginal(f64),
    #[error("table has a degenerate marginal; diagnostics are undefined")]
    DegenerateDistribution,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("successes ({successes}) exceed trials ({trials})")]
    CountsInconsistent { successes: u32, trials: u32 },
    #[error("invalid decision rules: {0}")]
    InvalidRules(String),
    #[error(transparent)]
    Dependence(#[from] CorrBinError),
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
}

impl ModelError {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
