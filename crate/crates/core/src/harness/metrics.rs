//! Lap metrics, run validity and improvement scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::harness::episode::RunLog;

/// Minimum continuous off-road time that invalidates a run, s.
pub const OFF_ROAD_LIMIT_S: f64 = 5.0;
/// Runs slower than this on average are invalid, m/s (18 km/h).
pub const MIN_MEAN_SPEED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    Ok,
    OffRoad,
    Slow,
    Timeout,
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Ok
    }
}

impl fmt::Display for Validity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Validity::Ok => "ok",
            Validity::OffRoad => "off-road",
            Validity::Slow => "slow",
            Validity::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    /// Lap time, s; `None` if the lap was not completed.
    pub tct: Option<f64>,
    /// Area between path and centerline over the lap, m^2.
    pub d2c: Option<f64>,
    /// Mean |operator steering| over the lap.
    pub se: Option<f64>,
    pub mean_speed: f64,
    pub validity: Validity,
    /// Always false: the kinematic model cannot roll over.
    pub rollover: bool,
}

impl RunMetrics {
    pub fn valid(&self) -> bool {
        self.validity.is_valid()
    }
}

/// Index of the first row at or past the finish line.
fn crossing(log: &RunLog) -> Option<usize> {
    let total = log.header.total_length;
    log.rows.iter().position(|r| r.progress >= total).filter(|&c| c > 0)
}

fn lap_rows(log: &RunLog) -> &[crate::harness::episode::TickRow] {
    match crossing(log) {
        Some(c) => &log.rows[..c],
        None => &log.rows,
    }
}

fn mean_speed(log: &RunLog) -> f64 {
    let rows = lap_rows(log);
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|r| r.v).sum::<f64>() / rows.len() as f64
}

/// Longest run of consecutive ticks with |e| beyond the lane envelope, s.
pub fn longest_off_road(log: &RunLog) -> f64 {
    let hw = log.header.lane_half_width;
    let mut best = 0usize;
    let mut cur = 0usize;
    for r in lap_rows(log) {
        if r.e.abs() > hw {
            cur += 1;
            best = best.max(cur);
        } else {
            cur = 0;
        }
    }
    best as f64 * log.header.dt
}

pub fn check_validity(log: &RunLog) -> Validity {
    if crossing(log).is_none() {
        Validity::Timeout
    } else if longest_off_road(log) >= OFF_ROAD_LIMIT_S {
        Validity::OffRoad
    } else if mean_speed(log) < MIN_MEAN_SPEED {
        Validity::Slow
    } else {
        Validity::Ok
    }
}

/// TCT, D2C and SE over the completed lap. Quantities at the finish line are
/// interpolated between the last two ticks.
pub fn compute_run_metrics(log: &RunLog) -> RunMetrics {
    let validity = check_validity(log);
    let speed = mean_speed(log);
    let Some(c) = crossing(log) else {
        return RunMetrics {
            tct: None,
            d2c: None,
            se: None,
            mean_speed: speed,
            validity,
            rollover: false,
        };
    };
    let total = log.header.total_length;
    let rows = &log.rows;
    let (a, b) = (&rows[c - 1], &rows[c]);
    let frac = if b.progress > a.progress {
        (total - a.progress) / (b.progress - a.progress)
    } else {
        1.0
    };
    let tct = a.time + frac * (b.time - a.time);

    let mut d2c = 0.0;
    for w in rows[..c].windows(2) {
        d2c += 0.5 * (w[0].e.abs() + w[1].e.abs()) * (w[1].progress - w[0].progress);
    }
    let e_end = a.e.abs() + frac * (b.e.abs() - a.e.abs());
    d2c += 0.5 * (a.e.abs() + e_end) * (total - a.progress);

    let lap = &rows[..c];
    let se = lap.iter().map(|r| r.op_steer.abs()).sum::<f64>() / lap.len() as f64;
    RunMetrics {
        tct: Some(tct),
        d2c: Some(d2c),
        se: Some(se),
        mean_speed: speed,
        validity,
        rollover: false,
    }
}

/// One metric under the candidate condition, the delayed baseline and the
/// zero-delay benchmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub candidate: f64,
    pub delayed: f64,
    pub benchmark: f64,
}

impl MetricTriple {
    pub fn new(candidate: f64, delayed: f64, benchmark: f64) -> Self {
        MetricTriple {
            candidate,
            delayed,
            benchmark,
        }
    }

    /// `|r_c - r_d| / |r_d - r_0|`, undefined when the delay changed nothing.
    pub fn score(&self) -> Option<f64> {
        let den = (self.delayed - self.benchmark).abs();
        (den > 1e-12).then(|| (self.candidate - self.delayed).abs() / den)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Improvement {
    pub d2c: Option<f64>,
    pub tct: Option<f64>,
    pub se: Option<f64>,
    pub overall: Option<f64>,
}

impl Improvement {
    /// Combines per-metric scores. `keep[k] == false` zeroes that metric (for
    /// example when an external test found it not significant); undefined
    /// scores are left out of the mean.
    pub fn from_scores(d2c: Option<f64>, tct: Option<f64>, se: Option<f64>, keep: Option<[bool; 3]>) -> Self {
        let keep = keep.unwrap_or([true; 3]);
        let gated: Vec<Option<f64>> = [d2c, tct, se]
            .into_iter()
            .zip(keep)
            .map(|(p, k)| p.map(|v| if k { v } else { 0.0 }))
            .collect();
        let defined: Vec<f64> = gated.iter().flatten().copied().collect();
        let overall = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Improvement {
            d2c: gated[0],
            tct: gated[1],
            se: gated[2],
            overall,
        }
    }
}

pub fn improvement(d2c: MetricTriple, tct: MetricTriple, se: MetricTriple, keep: Option<[bool; 3]>) -> Improvement {
    Improvement::from_scores(d2c.score(), tct.score(), se.score(), keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::episode::{Mode, RunHeader, TickRow};
    use approx::assert_abs_diff_eq;

    fn header(total: f64) -> RunHeader {
        RunHeader {
            config_hash: String::new(),
            seed: 0,
            mode: Mode::Dc,
            delay_ms: 0,
            uplink_ticks: 0,
            downlink_ticks: 0,
            dt: 0.05,
            lane_half_width: 7.0,
            total_length: total,
            cloud_seed: 0,
            horizon_exceeded_ticks: 0,
        }
    }

    /// Synthetic log at constant speed; `e_at` and `steer_at` take progress.
    fn synthetic(v: f64, total: f64, e_at: impl Fn(f64) -> f64, steer_at: impl Fn(f64) -> f64) -> RunLog {
        let dt = 0.05;
        let mut rows = Vec::new();
        for n in 0u64.. {
            let p = v * dt * n as f64;
            rows.push(TickRow {
                tick: n,
                time: n as f64 * dt,
                x: 0.0,
                y: 0.0,
                v,
                theta: 0.0,
                wheel_angle: 0.0,
                op_steer: steer_at(p),
                op_throttle: 0.0,
                op_brake: 0.0,
                feedback_tick: Some(n),
                cmd_origin_tick: Some(n),
                applied_steer: 0.0,
                applied_throttle: 0.0,
                applied_brake: 0.0,
                e: e_at(p),
                s: p % total,
                progress: p,
                guidance_age: None,
            });
            if p >= total {
                break;
            }
        }
        RunLog {
            header: header(total),
            rows,
        }
    }

    #[test]
    fn centerline_lap() {
        let log = synthetic(10.0, 622.0, |_| 0.0, |_| 0.0);
        let m = compute_run_metrics(&log);
        assert_abs_diff_eq!(m.tct.unwrap(), 62.2, epsilon = 1e-9);
        assert_eq!(m.d2c, Some(0.0));
        assert!(m.valid());
        assert!(!m.rollover);
    }

    #[test]
    fn stretch_of_constant_offset() {
        let log = synthetic(10.0, 622.0, |p| if (100.0..=200.0).contains(&p) { 0.5 } else { 0.0 }, |_| 0.0);
        // the two edge ticks add half a 0.5 m step of ramp each
        assert_abs_diff_eq!(compute_run_metrics(&log).d2c.unwrap(), 50.0, epsilon = 0.5 * 0.5 + 1e-9);
        let fine = synthetic(0.2, 622.0, |p| if (100.0..=200.0).contains(&p) { 0.5 } else { 0.0 }, |_| 0.0);
        assert_abs_diff_eq!(compute_run_metrics(&fine).d2c.unwrap(), 50.0, epsilon = 0.01 * 0.5 + 1e-9);
    }

    #[test]
    fn constant_steer_effort() {
        let log = synthetic(10.0, 622.0, |_| 0.0, |_| 0.2);
        assert_abs_diff_eq!(compute_run_metrics(&log).se.unwrap(), 0.2, epsilon = 1e-12);
        let flipped = synthetic(10.0, 622.0, |_| 0.0, |_| -0.2);
        assert_eq!(compute_run_metrics(&log).se, compute_run_metrics(&flipped).se);
    }

    #[test]
    fn off_road_streak() {
        // 6 s off-road at 10 m/s spans 60 m
        let log = synthetic(10.0, 622.0, |p| if (300.0..360.0).contains(&p) { 8.0 } else { 0.0 }, |_| 0.0);
        assert_eq!(check_validity(&log), Validity::OffRoad);
        let short = synthetic(10.0, 622.0, |p| if (300.0..340.0).contains(&p) { 8.0 } else { 0.0 }, |_| 0.0);
        assert_eq!(check_validity(&short), Validity::Ok);
    }

    #[test]
    fn slow_and_timeout() {
        let slow = synthetic(4.0, 622.0, |_| 0.0, |_| 0.0);
        assert_eq!(check_validity(&slow), Validity::Slow);
        assert_eq!(Validity::Slow.to_string(), "slow");
        let mut cut = synthetic(10.0, 622.0, |_| 0.0, |_| 0.0);
        cut.rows.truncate(100);
        let m = compute_run_metrics(&cut);
        assert_eq!(m.validity, Validity::Timeout);
        assert_eq!((m.tct, m.d2c, m.se), (None, None, None));
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(MetricTriple::new(4.0, 4.0, 1.0).score(), Some(0.0));
        assert_abs_diff_eq!(MetricTriple::new(2.0, 4.0, 1.0).score().unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(MetricTriple::new(2.0, 1.0, 1.0).score(), None);
        let p = Improvement::from_scores(Some(0.41), Some(0.48), Some(0.0), None);
        assert_abs_diff_eq!(p.overall.unwrap(), 0.2967, epsilon = 1e-4);
        assert_eq!((p.overall.unwrap() * 100.0).round(), 30.0);
    }

    #[test]
    fn gating_and_undefined_terms() {
        let p = Improvement::from_scores(Some(0.6), Some(0.3), Some(0.9), Some([true, true, false]));
        assert_eq!(p.se, Some(0.0));
        assert_abs_diff_eq!(p.overall.unwrap(), 0.3, epsilon = 1e-15);
        let p = improvement(
            MetricTriple::new(2.0, 4.0, 1.0),
            MetricTriple::new(1.0, 1.0, 1.0),
            MetricTriple::new(1.0, 3.0, 1.0),
            None,
        );
        assert_eq!(p.tct, None);
        assert_abs_diff_eq!(p.overall.unwrap(), (2.0 / 3.0 + 1.0) / 2.0, epsilon = 1e-15);
    }
}
