//! Orchestration for decentralized world-model agents: replay, the training
//! loop, evaluation, scalability sweeps, checkpoints and metrics.

pub mod eval;
pub mod metrics;
pub mod policy;
pub mod replay;
pub mod trainer;

use diffnn::DiffError;
use dwm::coord::CoordError;
use swipt_core::env::EnvError;
use swipt_core::ConfigError;
use thiserror::Error;

pub use eval::{evaluate_policy, sweep, EvalSummary, Stat, SweepRow};
pub use metrics::{MetricsRow, MetricsSink};
pub use policy::{JointPolicy, PolicyContext, PolicyRegistry};
pub use replay::{EpisodeSequence, ReplayBuffer};
pub use trainer::{TrainOptions, TrainReport, Trainer};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<DiffError> for HarnessError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFiniteValue { .. } | DiffError::NonFiniteGradient { .. } => {
                HarnessError::Numerical(e.to_string())
            }
            DiffError::Io(io) => HarnessError::Io(io),
            other => HarnessError::Checkpoint(other.to_string()),
        }
    }
}

impl From<CoordError> for HarnessError {
    fn from(e: CoordError) -> Self {
        match e {
            CoordError::Diff(d) => d.into(),
            CoordError::Env(env) => HarnessError::Env(env),
            other => HarnessError::Validation(other.to_string()),
        }
    }
}

impl HarnessError {
    /// Process exit code: 2 for invalid input, 3 for numerical aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Validation(_) | HarnessError::Checkpoint(_) => 2,
            HarnessError::Numerical(_) => 3,
            _ => 1,
        }
    }
}
