//! Benchmark models with closed-form oracles.

pub mod blood;
pub mod censored;

pub use blood::{BloodData, BloodMissing, BloodModel, BloodRandomWalk};
pub use censored::{CensoredData, CensoredModel, ShiftedExponential};
