use thiserror::Error;

/// Errors raised by the simulation and verification routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("step {h} exceeds the explicit stability bound {h_max}")]
    Stability { h: f64, h_max: f64 },

    #[error("numerical divergence on path {path} at step {step}")]
    Divergence { path: usize, step: usize },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("rate fit error: {0}")]
    RateFit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("resolution error: window {eps} needs at least {min_steps} steps of size {h}")]
    Resolution { eps: f64, h: f64, min_steps: usize },

    #[error("tangency failure at t={t}: best bracket {bracket} exceeds budget {budget}")]
    TangencyFailure { t: f64, bracket: f64, budget: f64 },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
