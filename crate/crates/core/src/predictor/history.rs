//! Motion histories and dataset records expressed in the newest-state frame.

use crate::bev::BevImage;
use crate::geometry::{wrap_angle, Pose2};
use crate::vehicle::{ControlCommand, VehicleState};

/// `(x, y, v, theta)` rows oldest first; the newest row is `(0, 0, v, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionHistory {
    pub states: Vec<[f64; 4]>,
    /// `(steer, throttle, brake)` rows aligned with `states`.
    pub commands: Vec<[f64; 3]>,
}

impl MotionHistory {
    /// Anchors world-frame samples (oldest first) in the frame of the last state.
    pub fn from_world(states: &[VehicleState], commands: &[ControlCommand]) -> (Self, Pose2) {
        assert_eq!(states.len(), commands.len(), "history lengths differ");
        let anchor = states.last().expect("non-empty history").pose();
        let states = states
            .iter()
            .map(|s| {
                let (x, y) = anchor.to_local(s.x, s.y);
                [x, y, s.v, wrap_angle(s.theta - anchor.theta)]
            })
            .collect();
        let commands = commands
            .iter()
            .map(|c| [c.steer, c.throttle, c.brake])
            .collect();
        (MotionHistory { states, commands }, anchor)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn newest(&self) -> [f64; 4] {
        *self.states.last().expect("non-empty history")
    }
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub history: MotionHistory,
    pub bev: BevImage,
    /// Future `(x, y)` at `dt_pred` steps, same frame as the history.
    pub future: Vec<[f64; 2]>,
}

/// Transforms world positions into an anchor frame.
pub fn to_anchor_frame(anchor: &Pose2, points: &[(f64, f64)]) -> Vec<[f64; 2]> {
    points
        .iter()
        .map(|&(x, y)| {
            let (lx, ly) = anchor.to_local(x, y);
            [lx, ly]
        })
        .collect()
}
