//! Lifelong modular learned plan-cost prediction.
//!
//! Plans are split at break operators into tasks, each task is encoded and
//! routed to a module in the hub of its kind, and the module outputs are
//! merged by attention into one cost estimate. A two-phase trainer keeps the
//! model current under workload and data drift; [`sim`] provides a synthetic
//! environment to exercise it.

pub mod checkpoint;
pub mod config;
pub mod decompose;
pub mod encode;
pub mod hub;
pub mod nn;
pub mod plan;
pub mod predictor;
pub mod selfcheck;
pub mod sim;
pub mod trainer;
pub mod util;

pub use config::{ConfigError, ExperimentConfig, SystemKind};
pub use decompose::{decompose, BreakOperatorSet, Task, TaskKind};
pub use encode::TaskEncoding;
pub use hub::{HubKind, HubParams, ModuleHub, ModuleId};
pub use plan::{OperatorKind, PlanTree, QueryProps, TableId, WorkloadSchema};
pub use predictor::{CostEstimate, CostModel, Decomposition, ModelDims};
pub use trainer::{Trainer, TrainerConfig, TrainerMode};

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Plan(#[from] plan::PlanError),
    #[error(transparent)]
    Predict(#[from] predictor::PredictError),
    #[error(transparent)]
    Trainer(#[from] trainer::TrainerError),
    #[error(transparent)]
    Sim(#[from] sim::SimError),
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}
