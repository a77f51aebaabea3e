//! Scripted teleoperator: pure-pursuit steering toward a centerline preview
//! point and a curvature-aware speed regulator, both acting on the (possibly
//! stale) feedback frame the operator last received.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::track::Track;
use crate::vehicle::{ControlCommand, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseStd {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl NoiseStd {
    pub const ZERO: NoiseStd = NoiseStd {
        steer: 0.0,
        throttle: 0.0,
        brake: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorParams {
    /// Lookahead time for the pure-pursuit preview point, s.
    pub preview_time: f64,
    /// Lower bound on the lookahead distance, m.
    pub min_lookahead: f64,
    /// First-order lag on the steering output, s.
    pub reaction_tau: f64,
    pub steering_gain: f64,
    /// Desired speed on straights, m/s.
    pub target_speed_base: f64,
    /// Speed is divided by `1 + gain * |curvature|`, gain in m.
    pub curvature_slowdown_gain: f64,
    /// Extra time beyond the preview point scanned for curvature, s.
    pub speed_preview_time: f64,
    /// Throttle per m/s of speed error.
    pub speed_gain: f64,
    pub noise_std: NoiseStd,
    pub seed: u64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        OperatorParams {
            preview_time: 1.0,
            min_lookahead: 5.0,
            reaction_tau: 0.1,
            steering_gain: 1.0,
            target_speed_base: 12.0,
            curvature_slowdown_gain: 10.0,
            speed_preview_time: 1.5,
            speed_gain: 0.3,
            noise_std: NoiseStd {
                steer: 0.02,
                throttle: 0.02,
                brake: 0.0,
            },
            seed: 0,
        }
    }
}

impl OperatorParams {
    pub fn validate(&self) -> crate::Result<()> {
        let n = &self.noise_std;
        if !(self.preview_time > 0.0)
            || !(self.reaction_tau >= 0.0)
            || !(self.min_lookahead > 0.0)
            || !(n.steer >= 0.0 && n.throttle >= 0.0 && n.brake >= 0.0)
            || !(self.target_speed_base > 0.0)
        {
            return Err(crate::Error::config(format!("invalid operator params {self:?}")));
        }
        Ok(())
    }

    /// Same parameters with noise switched off.
    pub fn noiseless(mut self) -> Self {
        self.noise_std = NoiseStd::ZERO;
        self
    }
}

/// A stateful operator instance; one per episode.
#[derive(Debug, Clone)]
pub struct Operator {
    params: OperatorParams,
    vehicle: VehicleParams,
    steer_filtered: f64,
    rng: ChaCha8Rng,
}

impl Operator {
    pub fn new(params: OperatorParams, vehicle: VehicleParams) -> Self {
        Operator {
            params,
            vehicle,
            steer_filtered: 0.0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
        }
    }

    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    /// Computes the next command from the newest feedback frame available.
    pub fn step(&mut self, delayed_state: &VehicleState, track: &Track, dt: f64) -> ControlCommand {
        let p = &self.params;
        let st = delayed_state;
        let proj = track.project(st.x, st.y);

        if proj.e.abs() > 4.0 * track.lane_half_width {
            self.steer_filtered = 0.0;
            return ControlCommand::new(0.0, 0.0, 1.0);
        }

        let lookahead = (st.v * p.preview_time).max(p.min_lookahead);
        let target = track.pose_at(proj.s + lookahead);
        let (dx, dy) = st.pose().to_local(target.x, target.y);
        let curvature = 2.0 * dy / (dx * dx + dy * dy);
        let wheel = (self.vehicle.wheelbase * curvature).atan();
        let steer_target = (p.steering_gain * wheel / self.vehicle.wheel_angle_max).clamp(-1.0, 1.0);

        self.steer_filtered = if p.reaction_tau > 0.0 {
            self.steer_filtered + dt / (p.reaction_tau + dt) * (steer_target - self.steer_filtered)
        } else {
            steer_target
        };

        let kappa = track.max_abs_curvature(
            proj.s,
            proj.s + lookahead + st.v * p.speed_preview_time,
        );
        let v_target = p.target_speed_base / (1.0 + p.curvature_slowdown_gain * kappa);
        let u = p.speed_gain * (v_target - st.v) + self.vehicle.cruise_throttle(st.v);
        let (throttle, brake) = if u >= 0.0 {
            (u, 0.0)
        } else {
            (0.0, -u * self.vehicle.accel_max / self.vehicle.brake_max)
        };

        let mut cmd = ControlCommand::new(self.steer_filtered, throttle, brake);
        let n = p.noise_std;
        cmd.steer += draw(&mut self.rng, n.steer);
        cmd.throttle += draw(&mut self.rng, n.throttle);
        cmd.brake += draw(&mut self.rng, n.brake);
        cmd.clamped()
    }
}

fn draw(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}
