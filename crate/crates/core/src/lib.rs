//! agesim — discrete-event simulator of CPU core aging in LLM inference clusters.
//!
//! Models NBTI-induced frequency degradation of server CPU cores under
//! inference-task load, and compares an aging-aware core-management policy
//! (idle-score task mapping + reaction-function selective deep idling)
//! against two baselines (linux-style probabilistic placement, least-aged
//! placement). Reports frequency CV, mean degradation, CPU oversubscription,
//! and the yearly embodied-carbon estimate implied by the aging results.

pub mod aging;
pub mod baselines;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod report;
pub mod variation;
pub mod workload;

pub use aging::{AgingParams, CoreAging, CoreState};
pub use config::ExperimentConfig;
pub use engine::{run_simulation, RunResult};
pub use error::SimError;
pub use policy::{IdleState, ManagedCore, ReactionParams};
pub use variation::VariationGrid;
pub use workload::{InferenceTask, Request, TaskDurationModel, TaskType};
