//! Kinematic bicycle vehicle model.

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose2};

/// Vehicle state. `(x, y)` is the rear-axle reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Speed, m/s, never negative.
    pub v: f64,
    /// Heading in `(-pi, pi]`.
    pub theta: f64,
    /// Current front-wheel angle, rad.
    pub wheel_angle: f64,
}

impl VehicleState {
    pub fn at_rest(pose: Pose2) -> Self {
        VehicleState {
            x: pose.x,
            y: pose.y,
            v: 0.0,
            theta: wrap_angle(pose.theta),
            wheel_angle: 0.0,
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.v.is_finite()
            && self.theta.is_finite()
            && self.wheel_angle.is_finite()
    }
}

/// Normalized driver command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ControlCommand {
    /// Steering in `[-1, 1]`; positive turns left.
    pub steer: f64,
    /// Throttle in `[0, 1]`.
    pub throttle: f64,
    /// Brake in `[0, 1]`.
    pub brake: f64,
}

impl ControlCommand {
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        ControlCommand {
            steer,
            throttle,
            brake,
        }
    }

    /// Clamps every channel into its legal range.
    pub fn clamped(self) -> Self {
        ControlCommand {
            steer: self.steer.clamp(-1.0, 1.0),
            throttle: self.throttle.clamp(0.0, 1.0),
            brake: self.brake.clamp(0.0, 1.0),
        }
    }

    pub fn in_range(&self) -> bool {
        (-1.0..=1.0).contains(&self.steer)
            && (0.0..=1.0).contains(&self.throttle)
            && (0.0..=1.0).contains(&self.brake)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Wheelbase, m.
    pub wheelbase: f64,
    /// Maximum front-wheel angle, rad.
    pub wheel_angle_max: f64,
    /// Front-wheel slew rate, rad/s.
    pub steer_rate: f64,
    /// Acceleration at full throttle, m/s^2.
    pub accel_max: f64,
    /// Deceleration at full brake, m/s^2.
    pub brake_max: f64,
    /// Linear drag coefficient, 1/s.
    pub drag: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.8,
            wheel_angle_max: 0.6,
            steer_rate: 1.2,
            accel_max: 3.0,
            brake_max: 6.0,
            drag: 0.05,
        }
    }
}

impl VehicleParams {
    /// Throttle that holds speed `v` against drag.
    pub fn cruise_throttle(&self, v: f64) -> f64 {
        (self.drag * v / self.accel_max).clamp(0.0, 1.0)
    }
}

/// Advances the vehicle by one explicit Euler step of length `dt`.
///
/// Panics if the resulting state is not finite; that can only come from a
/// simulation bug upstream.
pub fn step_vehicle(
    state: &VehicleState,
    cmd: &ControlCommand,
    dt: f64,
    params: &VehicleParams,
) -> VehicleState {
    debug_assert!(dt > 0.0, "dt must be positive");
    let cmd = cmd.clamped();
    let VehicleState {
        x,
        y,
        v,
        theta,
        wheel_angle,
    } = *state;

    let (s, c) = theta.sin_cos();
    let yaw_rate = v * wheel_angle.tan() / params.wheelbase;
    let accel = params.accel_max * cmd.throttle - params.brake_max * cmd.brake - params.drag * v;

    let target = cmd.steer * params.wheel_angle_max;
    let max_delta = params.steer_rate * dt;
    let wheel = (wheel_angle + (target - wheel_angle).clamp(-max_delta, max_delta))
        .clamp(-params.wheel_angle_max, params.wheel_angle_max);

    let next = VehicleState {
        x: x + v * c * dt,
        y: y + v * s * dt,
        v: (v + accel * dt).max(0.0),
        theta: wrap_angle(theta + yaw_rate * dt),
        wheel_angle: wheel,
    };
    assert!(next.is_finite(), "non-finite vehicle state: {next:?}");
    next
}
