pub mod bev;
pub mod config;
pub mod delay;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod lidar;
pub mod operator;
pub mod par;
pub mod predictor;
pub mod track;
pub mod tracker;
pub mod vehicle;

pub use error::{Error, Result};
