//! Closed-loop DC / PTGC episodes, run metrics and experiment batches.

pub mod datagen;
pub mod episode;
pub mod experiment;
pub mod metrics;
pub mod predictors;

pub use episode::{run_episode, Mode, RunHeader, RunLog, ScenarioConfig, TickRow};
pub use experiment::{experiment_batch, BatchOutcome, Cell, Protocol};
pub use metrics::{check_validity, compute_run_metrics, improvement, Improvement, MetricTriple, RunMetrics, Validity};
pub use predictors::{CtraPredictor, PredictionRequest, ReferencePath, TrajectoryPredictor};
