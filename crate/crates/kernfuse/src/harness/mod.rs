//! Experiment harness: configuration files, synthetic data, runs, metrics
//! and file outputs. Comparisons against the true function `f*` are
//! oracle-only diagnostics; a deployed system never sees `f*`.

pub mod config;
pub mod experiment;
pub mod output;
pub mod svg;

use thiserror::Error;

use crate::learning_runtime::RuntimeError;
use crate::rkhs_core::RkhsError;

pub use config::{parse_config, ConfigError, ConfigErrors, ExperimentConfig};
pub use experiment::{assemble, dump_operators, generate_data, run_experiment, simulate, RunSummary, Simulation};
pub use output::{parse_checkpoint, write_checkpoint, Checkpoint};

/// Bundled configuration reproducing the two-agent polynomial/exponential example.
pub const BUNDLED_CONFIG: &str = include_str!("../../../../configs/section4.cfg");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    /// The configuration parsed but does not describe a usable system.
    #[error("{context}: {source}")]
    Setup {
        context: String,
        #[source]
        source: RkhsError,
    },
    #[error("run stopped: {error}")]
    Run { error: RuntimeError, summary: Box<RunSummary> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Configuration problems are validation errors; everything else is a
    /// runtime error.
    pub fn is_validation(&self) -> bool {
        matches!(self, HarnessError::Config(_) | HarnessError::Setup { .. })
    }
}
