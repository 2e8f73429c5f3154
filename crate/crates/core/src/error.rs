use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("bump size must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("particle count {count} exceeded the cap {cap} at step {step}")]
    MassExplosion { step: usize, count: usize, cap: usize },
    #[error("time {time} outside [{lo}, {hi}]")]
    TimeOutOfRange { time: f64, lo: f64, hi: f64 },
    #[error("terminal field takes the negative value {0}")]
    NegativeInput(f64),
    #[error("log-Laplace solution became negative ({value}) at s = {s}")]
    NonConvergence { s: f64, value: f64 },
    #[error("integrand bound {bound} exceeds the configured limit {limit} at step {step}")]
    UnboundedIntegrand { step: usize, bound: f64, limit: f64 },
    #[error("functional `{0}` is not flagged as a martingale")]
    NotAMartingaleFunctional(String),
    #[error("need at least {needed} replicates, got {got}")]
    TooFewReplicates { needed: usize, got: usize },
    #[error("functional `{name}` provides no {what} and numeric fallback is disabled")]
    MissingDerivative { name: String, what: &'static str },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
