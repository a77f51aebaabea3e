//! Top-level configuration. Every section has defaults and rejects unknown keys.

use serde::{Deserialize, Serialize};

use crate::bev::BevParams;
use crate::delay::ms_to_ticks;
use crate::error::{Error, Result};
use crate::lidar::SensorParams;
use crate::operator::OperatorParams;
use crate::predictor::train::TrainConfig;
use crate::predictor::ModelConfig;
use crate::track::{build_test_track, Track, TrackSpec};
use crate::tracker::TrackerParams;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Control tick, s.
    pub dt: f64,
    /// Episodes stop here if the lap is not finished, s.
    pub max_time_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.05,
            max_time_s: 150.0,
        }
    }
}

impl SimConfig {
    /// Tick length in whole milliseconds.
    pub fn tick_ms(&self) -> Result<u64> {
        let ms = self.dt * 1000.0;
        if !(self.dt > 0.0) || (ms - ms.round()).abs() > 1e-9 {
            return Err(Error::config(format!("sim.dt {} is not a whole number of ms", self.dt)));
        }
        Ok(ms.round() as u64)
    }

    pub fn max_ticks(&self) -> u64 {
        (self.max_time_s / self.dt).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DelayConfig {
    /// Operator to vehicle, ms.
    pub uplink_ms: u64,
    /// Vehicle to operator, ms.
    pub downlink_ms: u64,
    /// Upper bound of extra random per-message delay, ms (0 disables jitter).
    pub jitter_max_ms: u64,
}

impl DelayConfig {
    /// Splits a round trip evenly; an odd tick goes to the downlink.
    pub fn round_trip(total_ms: u64, tick_ms: u64) -> Self {
        let ticks = total_ms / tick_ms;
        let up = ticks / 2;
        DelayConfig {
            uplink_ms: up * tick_ms,
            downlink_ms: total_ms - up * tick_ms,
            jitter_max_ms: 0,
        }
    }

    pub fn total_ms(&self) -> u64 {
        self.uplink_ms + self.downlink_ms
    }

    /// `(uplink, downlink, jitter)` in ticks.
    pub fn ticks(&self, tick_ms: u64) -> Result<(u64, u64, u64)> {
        Ok((
            ms_to_ticks(self.uplink_ms, tick_ms)?,
            ms_to_ticks(self.downlink_ms, tick_ms)?,
            ms_to_ticks(self.jitter_max_ms, tick_ms)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredConfig {
    /// Prediction grid step, s; must be a whole number of control ticks.
    pub dt_pred: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for PredConfig {
    fn default() -> Self {
        PredConfig {
            dt_pred: 0.1,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PredConfig {
    /// Control ticks per prediction step.
    pub fn decimation(&self, dt: f64) -> Result<usize> {
        let r = self.dt_pred / dt;
        if !(r >= 1.0) || (r - r.round()).abs() > 1e-9 {
            return Err(Error::config(format!(
                "pred.dt_pred {} is not a whole multiple of sim.dt {dt}",
                self.dt_pred
            )));
        }
        Ok(r.round() as usize)
    }

    pub fn horizon_s(&self) -> f64 {
        self.model.horizon as f64 * self.dt_pred
    }
}

/// Scripted-operator episodes used to build the training set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub episodes: usize,
    /// Straight-line target speed is drawn per episode from this range, m/s.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Operator preview time is drawn per episode from this range, s.
    pub preview_min: f64,
    pub preview_max: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            episodes: 16,
            speed_min: 10.0,
            speed_max: 14.0,
            preview_min: 0.9,
            preview_max: 1.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// Trained network loaded from a model file.
    #[default]
    Neural,
    /// Constant turn rate and acceleration extrapolation.
    Ctra,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Round-trip delay levels, ms. 0 runs DC only unless `ptgc_at_zero`.
    pub delays_ms: Vec<u64>,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub ptgc_at_zero: bool,
    pub predictor: PredictorKind,
    /// Worker threads for batches (0 = all cores, 1 = single worker).
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            delays_ms: vec![0, 200, 400, 600, 800, 1000],
            repeats: 3,
            seeds: vec![0],
            ptgc_at_zero: false,
            predictor: PredictorKind::Neural,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub sim: SimConfig,
    pub track: TrackSpec,
    pub vehicle: VehicleParams,
    pub operator: OperatorParams,
    pub delay: DelayConfig,
    pub sensor: SensorParams,
    pub bev: BevParams,
    pub pred: PredConfig,
    pub tracker: TrackerParams,
    pub experiment: ExperimentConfig,
    pub data: DataConfig,
}

impl GlobalConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GlobalConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks cross-section consistency and builds nothing permanent.
    pub fn validate(&self) -> Result<()> {
        let tick = self.sim.tick_ms()?;
        if !(self.sim.max_time_s > 0.0) {
            return Err(Error::config("sim.max_time_s must be > 0"));
        }
        self.delay.ticks(tick)?;
        for &d in &self.experiment.delays_ms {
            ms_to_ticks(d, tick)?;
        }
        build_test_track(&self.track)?;
        self.operator.validate()?;
        self.bev.validate()?;
        self.pred.decimation(self.sim.dt)?;
        self.pred.model.validate(self.bev.grid)?;
        self.pred.train.validate()?;
        self.tracker.validate()?;
        if self.data.speed_min > self.data.speed_max || !(self.data.speed_min > 0.0) {
            return Err(Error::config("data.speed_min must be > 0 and <= data.speed_max"));
        }
        if self.data.preview_min > self.data.preview_max || !(self.data.preview_min > 0.0) {
            return Err(Error::config("data.preview_min must be > 0 and <= data.preview_max"));
        }
        if self.experiment.repeats == 0 {
            return Err(Error::config("experiment.repeats must be >= 1"));
        }
        Ok(())
    }

    pub fn build_track(&self) -> Result<Track> {
        build_test_track(&self.track)
    }

    /// Every leaf key with its value, dotted, sorted by key.
    pub fn flattened(&self) -> Vec<(String, String)> {
        fn walk(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
            match v {
                serde_json::Value::Object(map) => {
                    for (k, child) in map {
                        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                other => out.push((prefix.to_string(), other.to_string())),
            }
        }
        let mut out = Vec::new();
        walk("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GlobalConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(GlobalConfig::from_json(r#"{"sim": {"dt": 0.05, "bogus": 1}}"#).is_err());
        assert!(GlobalConfig::from_json(r#"{"simulation": {}}"#).is_err());
        let c = GlobalConfig::from_json(r#"{"tracker": {"k": 2.0}}"#).unwrap();
        assert_eq!(c.tracker.k, 2.0);
        assert_eq!(c.tracker.v_min, 0.5);
    }

    #[test]
    fn round_trip_split() {
        let d = DelayConfig::round_trip(800, 50);
        assert_eq!((d.uplink_ms, d.downlink_ms), (400, 400));
        let d = DelayConfig::round_trip(250, 50);
        assert_eq!((d.uplink_ms, d.downlink_ms), (100, 150));
        assert_eq!(d.ticks(50).unwrap(), (2, 3, 0));
        assert!(DelayConfig { uplink_ms: 30, ..Default::default() }.ticks(50).is_err());
    }

    #[test]
    fn flattened_lists_nested_keys() {
        let keys: Vec<String> = GlobalConfig::default().flattened().into_iter().map(|(k, _)| k).collect();
        for k in ["sim.dt", "delay.uplink_ms", "pred.model.hidden", "pred.train.lr", "tracker.k", "experiment.delays_ms"] {
            assert!(keys.iter().any(|x| x == k), "missing {k}");
        }
    }
}
