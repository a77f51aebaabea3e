use std::io;

use thiserror::Error;

/// Errors raised by the simulator, predictor, and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("delay of {delay_s:.3} s is not shorter than the prediction horizon {horizon_s:.3} s")]
    DelayExceedsHorizon { delay_s: f64, horizon_s: f64 },

    #[error("horizon {horizon_s} s exceeds the predicted span {max_s} s")]
    HorizonTooLong { horizon_s: f64, max_s: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss} (learning rate too high?)")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("channel contract violated: send at tick {now} after a send at tick {last}")]
    OutOfOrderSend { now: u64, last: u64 },

    #[error("runtime error: {0}")]
    Runtime(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
