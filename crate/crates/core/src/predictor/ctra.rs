//! Constant turn rate and acceleration (CTRA) baseline predictor.

use crate::error::{Error, Result};
use crate::predictor::history::MotionHistory;

/// Below this |yaw rate| the closed form loses precision and a series
/// expansion around the straight-line limit is used instead.
pub const SMALL_YAW_RATE: f64 = 1e-4;

/// Number of samples in the 0.5 s fit window at the 0.1 s grid.
const FIT_WINDOW: usize = 6;

/// Yaw rate and acceleration estimated from a history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CtraEstimate {
    pub v: f64,
    pub accel: f64,
    pub yaw_rate: f64,
}

/// Least-squares slopes of heading and speed over the final 0.5 s.
pub fn estimate(history: &MotionHistory, dt_pred: f64) -> Result<CtraEstimate> {
    let n = history.len();
    if n < 3 {
        return Err(Error::Shape(format!(
            "CTRA needs at least 3 history states, got {n}"
        )));
    }
    let window = &history.states[n - FIT_WINDOW.min(n)..];
    let m = window.len();
    let times: Vec<f64> = (0..m).map(|i| (i as f64 - (m - 1) as f64) * dt_pred).collect();
    let mut theta = Vec::with_capacity(m);
    let mut prev = window[0][3];
    let mut acc = prev;
    for s in window {
        acc += crate::geometry::wrap_angle(s[3] - prev);
        prev = s[3];
        theta.push(acc);
    }
    let speeds: Vec<f64> = window.iter().map(|s| s[2]).collect();
    Ok(CtraEstimate {
        v: history.newest()[2],
        accel: slope(&times, &speeds),
        yaw_rate: slope(&times, &theta),
    })
}

fn slope(t: &[f64], y: &[f64]) -> f64 {
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        num += (ti - tm) * (yi - ym);
        den += (ti - tm) * (ti - tm);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Position at time `t` of a CTRA motion starting at the origin with heading 0.
pub fn ctra_position(v: f64, accel: f64, yaw_rate: f64, t: f64) -> [f64; 2] {
    let w = yaw_rate;
    if w.abs() < SMALL_YAW_RATE {
        // Taylor expansion of the integrals of (v + a s) (cos ws, sin ws) ds
        let (t2, t3, t4, t5, t6) = (t * t, t.powi(3), t.powi(4), t.powi(5), t.powi(6));
        let w2 = w * w;
        let x = v * t + accel * t2 / 2.0 - w2 / 2.0 * (v * t3 / 3.0 + accel * t4 / 4.0)
            + w2 * w2 / 24.0 * (v * t5 / 5.0 + accel * t6 / 6.0);
        let y = w * (v * t2 / 2.0 + accel * t3 / 3.0) - w2 * w / 6.0 * (v * t4 / 4.0 + accel * t5 / 5.0);
        return [x, y];
    }
    let (s, c) = (w * t).sin_cos();
    let x = ((v * w + accel * w * t) * s + accel * c - accel) / (w * w);
    let y = ((-v * w - accel * w * t) * c + accel * s + v * w) / (w * w);
    [x, y]
}

/// Predicts `horizon` waypoints at `dt_pred` spacing from the newest state.
pub fn ctra_predict(history: &MotionHistory, horizon: usize, dt_pred: f64) -> Result<Vec<[f64; 2]>> {
    let est = estimate(history, dt_pred)?;
    if est.v.abs() < 1e-6 && est.accel.abs() < 1e-6 {
        return Ok(vec![[0.0, 0.0]; horizon]);
    }
    Ok((1..=horizon)
        .map(|k| ctra_position(est.v, est.accel, est.yaw_rate, k as f64 * dt_pred))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(v: f64, a: f64, w: f64, dt: f64) -> MotionHistory {
        // exact CTRA motion sampled backwards from the origin
        let n = 21;
        let mut states = Vec::new();
        for i in 0..n {
            let t = (i as f64 - (n - 1) as f64) * dt;
            states.push([0.0, 0.0, v + a * t, w * t]);
        }
        MotionHistory {
            states,
            commands: vec![[0.0; 3]; n],
        }
    }

    #[test]
    fn stationary_history() {
        let p = ctra_predict(&history(0.0, 0.0, 0.0, 0.1), 10, 0.1).unwrap();
        assert!(p.iter().all(|w| *w == [0.0, 0.0]));
    }

    #[test]
    fn straight_line_limit() {
        let p = ctra_predict(&history(10.0, 0.0, 0.0, 0.1), 10, 0.1).unwrap();
        for (k, w) in p.iter().enumerate() {
            assert!((w[0] - (k + 1) as f64).abs() < 1e-12);
            assert_eq!(w[1], 0.0);
        }
    }

    #[test]
    fn circular_arc() {
        let p = ctra_predict(&history(10.0, 0.0, 0.5, 0.1), 10, 0.1).unwrap();
        // R = 20: (R sin 0.5, R (1 - cos 0.5))
        let (ex, ey) = (20.0 * 0.5_f64.sin(), 20.0 * (1.0 - 0.5_f64.cos()));
        assert!((ex - 9.589).abs() < 5e-4 && (ey - 2.448).abs() < 5e-4);
        assert!((p[9][0] - ex).abs() < 1e-6 && (p[9][1] - ey).abs() < 1e-6);
    }

    #[test]
    fn estimates_rates() {
        let e = estimate(&history(8.0, 1.5, -0.3, 0.1), 0.1).unwrap();
        assert!((e.accel - 1.5).abs() < 1e-9);
        assert!((e.yaw_rate + 0.3).abs() < 1e-9);
        assert_eq!(e.v, 8.0);
    }

    #[test]
    fn needs_three_states() {
        let h = MotionHistory {
            states: vec![[0.0; 4]; 2],
            commands: vec![[0.0; 3]; 2],
        };
        assert!(ctra_predict(&h, 5, 0.1).is_err());
    }

    #[test]
    fn series_and_closed_form_agree_at_threshold() {
        for &(v, a) in &[(10.0, 0.0), (3.0, 2.0), (20.0, -1.0)] {
            let lo = ctra_position(v, a, SMALL_YAW_RATE * 0.999_999, 2.0);
            let hi = ctra_position(v, a, SMALL_YAW_RATE * 1.000_001, 2.0);
            assert!((lo[0] - hi[0]).abs() < 1e-8 && (lo[1] - hi[1]).abs() < 1e-8);
        }
    }
}
