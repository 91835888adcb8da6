use thiserror::Error;

/// Errors raised by models, samplers and estimation engines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("parameter violates its constraint: {0}")]
    Constraint(String),

    #[error("finite-difference step must lie in (0, 1e-3], got {0}")]
    InvalidStep(f64),

    #[error("model does not provide {0}")]
    Capability(&'static str),

    #[error("all importance weights are zero; proposal does not cover the target")]
    DegenerateWeights,

    #[error("rejection budget exhausted: {accepted} of {requested} accepted after {consumed} proposals")]
    BudgetExhausted { accepted: usize, requested: usize, consumed: usize },

    #[error("initial state lies outside the support of the target")]
    InvalidInit,

    #[error("optimizer failed: {message} (last iterate {iterate:?})")]
    Optimization { message: String, iterate: Vec<f64> },

    #[error("need a Monte Carlo sample of size at least {needed}, got {got}")]
    InsufficientSample { needed: usize, got: usize },

    #[error(
        "pilot maximizer at iteration {maximizer} leaves fewer than {followers} followers in a pilot of {pilot_len}"
    )]
    InsufficientPilot { maximizer: usize, pilot_len: usize, followers: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("augmentation stalled at iteration {iteration} with M = {mc_size} (theta {theta:?})")]
    AugmentationStall { iteration: usize, mc_size: usize, theta: Vec<f64> },

    #[error("information estimate is not positive definite (eigenvalues {eigenvalues:?})")]
    IndefiniteInformation { eigenvalues: Vec<f64> },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("score root finding failed: {0}")]
    RootFailure(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
