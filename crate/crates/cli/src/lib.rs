//! Seeded experiment runner for the `mcem` toolkit.
//!
//! A JSON config selects a model, one or more estimation methods, a sampler,
//! seeds and an output directory. Each run writes a trajectory table, a
//! summary, and a metadata sidecar; replicate and comparison tables
//! aggregate the final estimates across seeds.

pub mod config;
pub mod run;
pub mod table;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("engine error in {run}")]
    Engine {
        run: String,
        #[source]
        source: mcem::Error,
    },

    #[error("malformed table: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config { key: key.to_string(), message: message.into() }
    }

    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Engine { source: mcem::Error::Config(_), .. } => 2,
            _ => 1,
        }
    }
}
