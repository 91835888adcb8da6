//! Maximum-likelihood estimation for missing-data models: deterministic EM,
//! four Monte Carlo EM controllers, stochastic approximation EM, Monte Carlo
//! maximum likelihood, and Louis-identity standard errors.
//!
//! Models implement [`Model`]; engines only evaluate complete-data
//! likelihood quantities at missing-data points the samplers produce.

pub mod em;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mcem;
pub mod mcml;
pub mod model;
pub mod models;
pub mod optim;
pub mod parallel;
pub mod rng;
pub mod saem;
pub mod sample;
pub mod samplers;
pub mod stats;
pub mod theta;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{ExactConditional, Model};
pub use rng::{StreamKey, StreamRng};
pub use sample::{SamplerKind, WeightedSample};
pub use theta::{Constraint, Theta};
pub use trajectory::{TerminationReason, Trajectory, TrajectoryRecord};

/// Version of this crate, recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
