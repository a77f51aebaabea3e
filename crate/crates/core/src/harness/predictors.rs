//! Predictors the PTGC loop can call.

use crate::bev::{BevImage, BevParams};
use crate::error::Result;
use crate::geometry::Pose2;
use crate::predictor::ctra::ctra_predict;
use crate::predictor::history::MotionHistory;
use crate::predictor::ModelParams;
use crate::vehicle::VehicleState;

/// Everything the vehicle side knows when it asks for a prediction.
pub struct PredictionRequest<'a> {
    /// Delay-aligned history in the anchor frame, oldest first.
    pub history: &'a MotionHistory,
    /// World pose of the newest history state.
    pub anchor: Pose2,
    pub anchor_tick: u64,
    /// BEV rendered at the anchor state, when the predictor asked for one.
    pub bev: Option<&'a BevImage>,
}

pub trait TrajectoryPredictor: Sync {
    fn label(&self) -> String;
    /// Past steps `T_h`; requests carry `T_h + 1` samples.
    fn history_len(&self) -> usize;
    /// Predicted steps `T`.
    fn horizon(&self) -> usize;
    fn needs_bev(&self) -> bool;
    /// Most likely future positions at `dt_pred` steps, anchor frame.
    fn predict_path(&self, req: &PredictionRequest) -> Result<Vec<[f64; 2]>>;
}

impl TrajectoryPredictor for ModelParams {
    fn label(&self) -> String {
        self.variant.label().to_string()
    }

    fn history_len(&self) -> usize {
        self.config.history_len
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn needs_bev(&self) -> bool {
        self.variant.context_on()
    }

    fn predict_path(&self, req: &PredictionRequest) -> Result<Vec<[f64; 2]>> {
        let blank;
        let bev = match req.bev {
            Some(b) => b,
            None => {
                blank = BevImage::empty(BevParams::with_grid(self.grid));
                &blank
            }
        };
        Ok(self.predict(req.history, bev)?.best().to_vec())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CtraPredictor {
    pub history_len: usize,
    pub horizon: usize,
    pub dt_pred: f64,
}

impl TrajectoryPredictor for CtraPredictor {
    fn label(&self) -> String {
        "CTRA".into()
    }

    fn history_len(&self) -> usize {
        self.history_len
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn needs_bev(&self) -> bool {
        false
    }

    fn predict_path(&self, req: &PredictionRequest) -> Result<Vec<[f64; 2]>> {
        ctra_predict(req.history, self.horizon, self.dt_pred)
    }
}

/// Replays a recorded path: the future is whatever the recording did after
/// its point nearest to the anchor. Used to separate tracking quality from
/// prediction quality.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    /// World positions, one per simulation tick.
    pub points: Vec<[f64; 2]>,
    /// Simulation ticks per prediction step.
    pub decimation: usize,
    pub history_len: usize,
    pub horizon: usize,
}

impl ReferencePath {
    pub fn from_states(states: &[VehicleState], decimation: usize, history_len: usize, horizon: usize) -> Self {
        ReferencePath {
            points: states.iter().map(|s| [s.x, s.y]).collect(),
            decimation,
            history_len,
            horizon,
        }
    }
}

impl TrajectoryPredictor for ReferencePath {
    fn label(&self) -> String {
        "reference".into()
    }

    fn history_len(&self) -> usize {
        self.history_len
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn needs_bev(&self) -> bool {
        false
    }

    fn predict_path(&self, req: &PredictionRequest) -> Result<Vec<[f64; 2]>> {
        let (ax, ay) = (req.anchor.x, req.anchor.y);
        let nearest = self
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| {
                let da = (a.1[0] - ax).hypot(a.1[1] - ay);
                let db = (b.1[0] - ax).hypot(b.1[1] - ay);
                da.total_cmp(&db)
            })
            .map_or(0, |(i, _)| i);
        let last = self.points.len().saturating_sub(1);
        Ok((1..=self.horizon)
            .map(|k| {
                let p = self.points[(nearest + k * self.decimation).min(last)];
                let (x, y) = req.anchor.to_local(p[0], p[1]);
                [x, y]
            })
            .collect())
    }
}
