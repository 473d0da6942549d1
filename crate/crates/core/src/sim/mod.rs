//! Synthetic workloads, a ground-truth cost oracle and the drift harness.

pub mod candidates;
pub mod drift;
pub mod experiment;
pub mod metrics;
pub mod oracle;
pub mod workload;

pub use candidates::{generate_candidates, optimal_plan, JoinTree};
pub use drift::{DriftMode, DriftScript, ScheduleEntry};
pub use experiment::*;
pub use metrics::{stability_metrics, StabilityMetrics};
pub use oracle::{CostOracle, OracleConstants};
pub use workload::{generate_workloads, sample_queries, Regime, SyntheticQuery, SyntheticWorkload, WorkloadParams};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("metric series needs at least 3 points, got {0}")]
    SeriesTooShort(usize),
    #[error(transparent)]
    Trainer(#[from] crate::trainer::TrainerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
