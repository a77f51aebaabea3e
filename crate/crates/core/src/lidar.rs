//! Synthetic LiDAR: samples the road surface and its edge berms directly
//! instead of ray casting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::track::Track;
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    /// Forward, m (vehicle frame).
    pub x: f64,
    /// Left, m.
    pub y: f64,
    /// Up from the road surface, m.
    pub z: f64,
    pub ground: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorParams {
    /// Maximum 3D range, m.
    pub range: f64,
    /// Road-surface points per square metre.
    pub ground_density: f64,
    /// Berm points per metre of road edge, per side.
    pub edge_density: f64,
    /// Lateral thickness of the berm beyond the road edge, m.
    pub berm_width: f64,
    pub edge_z_min: f64,
    pub edge_z_max: f64,
    /// Arclength sampling step, m.
    pub step: f64,
}

impl Default for SensorParams {
    fn default() -> Self {
        SensorParams {
            range: 24.0,
            ground_density: 2.0,
            edge_density: 6.0,
            berm_width: 0.5,
            edge_z_min: 0.3,
            edge_z_max: 2.0,
            step: 0.5,
        }
    }
}

/// Per-tick cloud seed derived from an episode seed (splitmix64 finalizer).
pub fn tick_seed(base: u64, tick: u64) -> u64 {
    let mut z = base ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a deterministic vehicle-frame cloud of road and berm points.
pub fn synth_point_cloud(
    track: &Track,
    state: &VehicleState,
    params: &SensorParams,
    seed: u64,
) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = state.pose();
    let hw = track.lane_half_width;
    let reach = params.range + hw + params.berm_width + params.step;
    let n_steps = (track.total_length / params.step).ceil() as usize;
    let ground_per_step = params.ground_density * params.step * 2.0 * hw;
    let edge_per_step = params.edge_density * params.step;

    let mut points = Vec::new();
    let emit = |s: f64, lat: f64, z: f64, ground: bool, points: &mut Vec<CloudPoint>| {
        let c = track.pose_at(s);
        let (wx, wy) = c.to_world(0.0, lat);
        let (x, y) = pose.to_local(wx, wy);
        if (x * x + y * y + z * z).sqrt() <= params.range {
            points.push(CloudPoint { x, y, z, ground });
        }
    };
    for i in 0..n_steps {
        let s = i as f64 * params.step;
        let c = track.pose_at(s);
        if (c.x - pose.x).hypot(c.y - pose.y) > reach {
            continue;
        }
        // fractional counts carry to the next step through a Bernoulli draw
        let n_ground = stochastic_round(ground_per_step, &mut rng);
        for _ in 0..n_ground {
            let ds = rng.gen::<f64>() * params.step;
            let lat = (rng.gen::<f64>() * 2.0 - 1.0) * hw;
            emit(s + ds, lat, 0.0, true, &mut points);
        }
        for side in [-1.0, 1.0] {
            let n_edge = stochastic_round(edge_per_step, &mut rng);
            for _ in 0..n_edge {
                let ds = rng.gen::<f64>() * params.step;
                let lat = side * (hw + rng.gen::<f64>() * params.berm_width);
                let z = params.edge_z_min + rng.gen::<f64>() * (params.edge_z_max - params.edge_z_min);
                emit(s + ds, lat, z, false, &mut points);
            }
        }
    }
    PointCloud { points }
}

fn stochastic_round(x: f64, rng: &mut ChaCha8Rng) -> usize {
    let base = x.floor();
    let frac = x - base;
    base as usize + usize::from(frac > 0.0 && rng.gen::<f64>() < frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::track::{build_test_track, TrackSpec};

    fn setup() -> (Track, VehicleState) {
        let t = build_test_track(&TrackSpec::default()).unwrap();
        let p = t.pose_at(70.0); // middle of the first straight
        (t, VehicleState::at_rest(p))
    }

    #[test]
    fn deterministic_for_seed() {
        let (t, s) = setup();
        let p = SensorParams::default();
        let a = synth_point_cloud(&t, &s, &p, 7);
        let b = synth_point_cloud(&t, &s, &p, 7);
        assert_eq!(a, b);
        assert!(!a.is_empty());
        let c = synth_point_cloud(&t, &s, &p, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_edge_density_gives_only_ground() {
        let (t, s) = setup();
        let p = SensorParams {
            edge_density: 0.0,
            ..Default::default()
        };
        let c = synth_point_cloud(&t, &s, &p, 1);
        assert!(!c.is_empty());
        assert!(c.points.iter().all(|q| q.ground && q.z == 0.0));
    }

    #[test]
    fn points_within_range_and_flags_consistent() {
        let (t, s) = setup();
        let p = SensorParams::default();
        let c = synth_point_cloud(&t, &s, &p, 3);
        for q in &c.points {
            assert!((q.x * q.x + q.y * q.y + q.z * q.z).sqrt() <= p.range);
            if q.ground {
                assert_eq!(q.z, 0.0);
            } else {
                assert!((p.edge_z_min..=p.edge_z_max).contains(&q.z));
            }
        }
    }

    #[test]
    fn berm_points_sit_at_road_edges() {
        let (t, s) = setup();
        let p = SensorParams::default();
        let c = synth_point_cloud(&t, &s, &p, 11);
        let pose: Pose2 = s.pose();
        let mut n = 0;
        for q in c.points.iter().filter(|q| !q.ground) {
            let (wx, wy) = pose.to_world(q.x, q.y);
            let e = t.project(wx, wy).e.abs();
            assert!(
                e >= t.lane_half_width - 1e-6 && e <= t.lane_half_width + p.berm_width + 1e-6,
                "e = {e}"
            );
            n += 1;
        }
        assert!(n > 100);
    }
}
