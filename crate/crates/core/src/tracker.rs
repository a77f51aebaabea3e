//! Guidance truncation and Stanley lateral tracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};
use crate::vehicle::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerParams {
    /// Stanley cross-track gain.
    pub k: f64,
    /// Speed floor inside the arcsin term.
    pub v_min: f64,
    pub reference: ReferencePoint,
}

/// Where the closed loop measures tracking errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferencePoint {
    /// Front axle against the nearest guidance point. The vehicle state is
    /// the rear axle, and with the rear axle the preview point of a freshly
    /// anchored guidance coincides with the vehicle, leaving no cross-track
    /// signal at small delays.
    #[default]
    FrontAxle,
    /// Rear axle against the split point (guidance offset 0).
    SplitPoint,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            k: 1.0,
            v_min: 0.5,
            reference: ReferencePoint::FrontAxle,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !(self.v_min > 0.0) {
            return Err(Error::config("tracker: k and v_min must be > 0"));
        }
        Ok(())
    }
}

/// World-frame waypoints `(offset_s, x, y)`; offset 0 is "now".
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceTrajectory {
    pub waypoints: Vec<(f64, f64, f64)>,
    /// Tick whose state anchored the prediction.
    pub source_tick: u64,
    /// Time covered after truncation.
    pub valid_horizon: f64,
}

/// Drops the stale first `t_d` seconds of a predicted trajectory.
///
/// `pred` holds waypoints at `dt_pred, 2 dt_pred, ...` in the anchor frame; the
/// anchor itself is prepended as the offset-0 point before cutting.
pub fn truncate_guidance(
    pred: &[[f64; 2]],
    anchor: &Pose2,
    source_tick: u64,
    t_d: f64,
    dt_pred: f64,
) -> Result<GuidanceTrajectory> {
    let horizon = pred.len() as f64 * dt_pred;
    if !(t_d >= 0.0) || t_d >= horizon {
        return Err(Error::DelayExceedsHorizon {
            delay_s: t_d,
            horizon_s: horizon,
        });
    }
    let pts: Vec<[f64; 2]> = std::iter::once([0.0, 0.0]).chain(pred.iter().copied()).collect();
    let pos = t_d / dt_pred;
    let mut i = pos.floor() as usize;
    let mut frac = pos - i as f64;
    // snap to the grid point when t_d is a multiple of dt_pred up to rounding
    if frac > 1.0 - 1e-9 {
        i += 1;
        frac = 0.0;
    } else if frac < 1e-9 {
        frac = 0.0;
    }
    let split = if frac == 0.0 {
        pts[i]
    } else {
        let (a, b) = (pts[i], pts[i + 1]);
        [a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]
    };
    let to_world = |p: [f64; 2], off: f64| {
        let (x, y) = anchor.to_world(p[0], p[1]);
        (off, x, y)
    };
    let mut waypoints = vec![to_world(split, 0.0)];
    for (k, p) in pts.iter().enumerate().skip(i + 1) {
        waypoints.push(to_world(*p, k as f64 * dt_pred - t_d));
    }
    Ok(GuidanceTrajectory {
        valid_horizon: horizon - t_d,
        waypoints,
        source_tick,
    })
}

fn direction(guidance: &GuidanceTrajectory, from: usize) -> f64 {
    let w = &guidance.waypoints;
    let (_, x0, y0) = w[from];
    for &(_, x, y) in &w[from + 1..] {
        if (x - x0).hypot(y - y0) > 1e-9 {
            return (y - y0).atan2(x - x0);
        }
    }
    // all remaining points coincide: look backwards instead
    for j in (0..from).rev() {
        let (_, x, y) = w[j];
        if (x - x0).hypot(y - y0) > 1e-9 {
            return (y0 - y).atan2(x0 - x);
        }
    }
    0.0
}

/// Cross-track and heading error against the preview point (guidance offset 0).
///
/// `e` is positive when the guidance line lies to the vehicle's left, i.e. a
/// vehicle 1 m left of the line sees `e = -1` and must steer right.
pub fn tracking_error(state: &VehicleState, guidance: &GuidanceTrajectory) -> (f64, f64) {
    assert!(guidance.waypoints.len() >= 2, "guidance needs two waypoints");
    let (_, px, py) = guidance.waypoints[0];
    let theta_p = direction(guidance, 0);
    let (_, lateral) = Pose2::new(px, py, theta_p).to_local(state.x, state.y);
    (-lateral, wrap_angle(theta_p - state.theta))
}

/// Errors for the configured reference point.
pub fn closed_loop_error(
    state: &VehicleState,
    guidance: &GuidanceTrajectory,
    params: &TrackerParams,
    wheelbase: f64,
) -> (f64, f64) {
    match params.reference {
        ReferencePoint::FrontAxle => front_axle_error(state, guidance, wheelbase),
        ReferencePoint::SplitPoint => tracking_error(state, guidance),
    }
}

/// Front-axle variant: errors of the point `wheelbase` ahead of the reference
/// point, measured against the nearest point of the guidance polyline (the end
/// segments extend indefinitely). Same sign conventions as [`tracking_error`].
pub fn front_axle_error(state: &VehicleState, guidance: &GuidanceTrajectory, wheelbase: f64) -> (f64, f64) {
    let w = &guidance.waypoints;
    assert!(w.len() >= 2, "guidance needs two waypoints");
    let fx = state.x + wheelbase * state.theta.cos();
    let fy = state.y + wheelbase * state.theta.sin();
    let last = w.len() - 2;
    let mut best: Option<(f64, f64, f64)> = None; // (distance, lateral, heading)
    for j in 0..=last {
        let (_, ax, ay) = w[j];
        let (_, bx, by) = w[j + 1];
        let (dx, dy) = (bx - ax, by - ay);
        let len2 = dx * dx + dy * dy;
        if len2 < 1e-18 {
            continue;
        }
        let mut u = ((fx - ax) * dx + (fy - ay) * dy) / len2;
        if j > 0 {
            u = u.max(0.0);
        }
        if j < last {
            u = u.min(1.0);
        }
        let (px, py) = (ax + u * dx, ay + u * dy);
        let dist = (fx - px).hypot(fy - py);
        let len = len2.sqrt();
        let lateral = (dx * (fy - ay) - dy * (fx - ax)) / len;
        if best.is_none_or(|b| dist < b.0) {
            best = Some((dist, lateral, dy.atan2(dx)));
        }
    }
    match best {
        Some((_, lateral, heading)) => (-lateral, wrap_angle(heading - state.theta)),
        None => (0.0, 0.0),
    }
}

/// Stanley wheel angle (rad) before normalization, saturated at `wheel_max`.
pub fn stanley_wheel_angle(e: f64, theta_e: f64, v: f64, params: &TrackerParams, wheel_max: f64) -> f64 {
    let arg = (params.k * e / v.max(params.v_min)).clamp(-1.0, 1.0);
    (theta_e + arg.asin()).clamp(-wheel_max, wheel_max)
}

/// Normalized steering command in `[-1, 1]`.
pub fn stanley_steering(e: f64, theta_e: f64, v: f64, params: &TrackerParams, wheel_max: f64) -> f64 {
    stanley_wheel_angle(e, theta_e, v, params, wheel_max) / wheel_max
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn straight(n: usize) -> Vec<[f64; 2]> {
        (1..=n).map(|k| [k as f64, 0.0]).collect()
    }

    #[test]
    fn zero_delay_keeps_everything() {
        let pred = straight(10);
        let g = truncate_guidance(&pred, &Pose2::new(0.0, 0.0, 0.0), 7, 0.0, 0.1).unwrap();
        assert_eq!(g.waypoints.len(), 11);
        assert_eq!(g.waypoints[0], (0.0, 0.0, 0.0));
        assert_eq!(g.waypoints[3], (0.30000000000000004, 3.0, 0.0));
        assert_eq!(g.source_tick, 7);
    }

    #[test]
    fn grid_aligned_cut() {
        let pred: Vec<[f64; 2]> = (1..=10).map(|k| [k as f64, (k * k) as f64]).collect();
        let g = truncate_guidance(&pred, &Pose2::new(0.0, 0.0, 0.0), 0, 0.4, 0.1).unwrap();
        assert_eq!(g.waypoints.len(), 7);
        assert_eq!((g.waypoints[0].1, g.waypoints[0].2), (4.0, 16.0));
        assert_abs_diff_eq!(g.waypoints[1].0, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(g.valid_horizon, 0.6, epsilon = 1e-12);
    }

    #[test]
    fn interpolated_cut() {
        let pred: Vec<[f64; 2]> = (1..=10).map(|k| [k as f64, (k * k) as f64]).collect();
        let g = truncate_guidance(&pred, &Pose2::new(0.0, 0.0, 0.0), 0, 0.25, 0.1).unwrap();
        assert_abs_diff_eq!(g.waypoints[0].1, 2.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.waypoints[0].2, 6.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.waypoints[1].0, 0.05, epsilon = 1e-12);
    }

    #[test]
    fn cut_beyond_horizon_fails() {
        let r = truncate_guidance(&straight(10), &Pose2::new(0.0, 0.0, 0.0), 0, 1.0, 0.1);
        assert!(matches!(r, Err(Error::DelayExceedsHorizon { .. })));
    }

    #[test]
    fn world_transform_uses_anchor() {
        let anchor = Pose2::new(10.0, 5.0, FRAC_PI_2);
        let g = truncate_guidance(&straight(5), &anchor, 0, 0.1, 0.1).unwrap();
        assert_abs_diff_eq!(g.waypoints[0].1, 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.waypoints[0].2, 6.0, epsilon = 1e-12);
    }

    fn guidance(points: &[(f64, f64)]) -> GuidanceTrajectory {
        GuidanceTrajectory {
            waypoints: points.iter().enumerate().map(|(k, &(x, y))| (k as f64 * 0.1, x, y)).collect(),
            source_tick: 0,
            valid_horizon: 1.0,
        }
    }

    #[test]
    fn error_conventions() {
        let g = guidance(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let at = |x, y, th| VehicleState {
            x,
            y,
            theta: th,
            ..Default::default()
        };
        assert_eq!(tracking_error(&at(0.0, 0.0, 0.0), &g), (0.0, 0.0));
        let (e, th) = tracking_error(&at(0.0, 1.0, 0.0), &g);
        assert_abs_diff_eq!(e, -1.0, epsilon = 1e-12);
        assert_eq!(th, 0.0);
        let (_, th) = tracking_error(&at(0.0, 0.0, 3.0), &g);
        assert_abs_diff_eq!(th, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_points_use_next_distinct() {
        let g = guidance(&[(0.0, 0.0), (0.0, 0.0), (0.0, 1.0)]);
        let st = VehicleState {
            x: 1.0,
            ..Default::default()
        };
        let (e, th) = tracking_error(&st, &g);
        assert_abs_diff_eq!(e, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(th, FRAC_PI_2, epsilon = 1e-12);
    }

    #[test]
    fn front_axle_nearest_point() {
        let g = guidance(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        // rear axle at x = -1, so the front axle sits on the line at x = 1.8
        let st = VehicleState {
            x: -1.0,
            y: 0.5,
            ..Default::default()
        };
        let (e, th) = front_axle_error(&st, &g, 2.8);
        assert_abs_diff_eq!(e, -0.5, epsilon = 1e-12);
        assert_eq!(th, 0.0);
        // beyond the last waypoint the final segment extends
        let far = VehicleState { x: 10.0, y: -2.0, ..Default::default() };
        assert_abs_diff_eq!(front_axle_error(&far, &g, 2.8).0, 2.0, epsilon = 1e-12);
        // on a corner the heading follows the segment nearest the front axle
        let bend = guidance(&[(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (2.0, 4.0)]);
        let st = VehicleState { x: 2.0, y: -1.0, theta: FRAC_PI_2, ..Default::default() };
        let (e, th) = front_axle_error(&st, &bend, 2.8);
        assert_abs_diff_eq!(e, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(th, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn stanley_examples() {
        let p = TrackerParams::default();
        assert_eq!(stanley_wheel_angle(0.0, 0.0, 5.0, &p, 0.6), 0.0);
        assert_abs_diff_eq!(stanley_wheel_angle(0.0, 0.1, 5.0, &p, 0.6), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(stanley_wheel_angle(1.0, 0.0, 2.0, &p, 1.0), 0.5f64.asin(), epsilon = 1e-15);
        assert_abs_diff_eq!(0.5f64.asin(), 0.5236, epsilon = 1e-4);
        let p2 = TrackerParams { k: 2.0, ..p };
        assert_eq!(stanley_wheel_angle(10.0, 0.0, 1.0, &p2, 10.0), FRAC_PI_2);
        assert_eq!(stanley_wheel_angle(10.0, 0.0, 1.0, &p2, 0.6), 0.6);
        assert_eq!(stanley_steering(10.0, 0.0, 1.0, &p2, 0.6), 1.0);
        // low speed uses the floor
        assert_eq!(
            stanley_wheel_angle(0.1, 0.0, 0.0, &p, 1.0),
            stanley_wheel_angle(0.1, 0.0, 0.5, &p, 1.0)
        );
    }
}
