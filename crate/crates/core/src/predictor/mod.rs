//! Intended-trajectory prediction: CTRA baseline, neural model, losses,
//! dataset construction, training and evaluation.

pub mod ctra;
pub mod dataset;
pub mod eval;
pub mod history;
pub mod loss;
pub mod model;
pub mod nn;
pub mod train;

pub use ctra::ctra_predict;
pub use history::{DatasetRecord, MotionHistory};
pub use loss::{
    classification_loss, regression_loss, total_loss, winner_index, CandidateSet, RegressionKind,
};
pub use model::{ModelConfig, ModelInput, ModelParams, Variant};
