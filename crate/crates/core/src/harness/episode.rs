//! One closed-loop episode in DC or PTGC mode.
//!
//! Per tick `n` the vehicle publishes its state on the downlink, the operator
//! reacts to the newest feedback it has and sends a command stamped with that
//! feedback's tick, and the vehicle consumes whatever the uplink delivers. In
//! DC mode the newest command drives the vehicle. In PTGC mode the vehicle
//! pairs each command with its own state at the echoed tick, predicts the
//! operator's intended path from that anchor, cuts the part that is already in
//! the past and steers along the rest with the Stanley law; throttle and brake
//! still come straight from the operator.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bev::{rasterize, BevParams};
use crate::config::{DelayConfig, GlobalConfig, SimConfig};
use crate::delay::{DelayChannel, Jitter, TimestampedMessage};
use crate::error::{Error, Result};
use crate::geometry::Pose2;
use crate::harness::predictors::{PredictionRequest, TrajectoryPredictor};
use crate::lidar::{synth_point_cloud, tick_seed, SensorParams};
use crate::operator::{Operator, OperatorParams};
use crate::predictor::dataset::DrivingLog;
use crate::predictor::history::MotionHistory;
use crate::track::{arclength_delta, build_test_track, TrackSpec};
use crate::tracker::{stanley_steering, closed_loop_error, truncate_guidance, GuidanceTrajectory, TrackerParams};
use crate::vehicle::{step_vehicle, ControlCommand, VehicleParams, VehicleState};

// Independent random streams derived from the episode seed.
const STREAM_OPERATOR: u64 = 1;
const STREAM_CLOUD: u64 = 2;
const STREAM_UPLINK: u64 = 3;
const STREAM_DOWNLINK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dc,
    Ptgc,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Dc => "dc",
            Mode::Ptgc => "ptgc",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dc" => Ok(Mode::Dc),
            "ptgc" => Ok(Mode::Ptgc),
            other => Err(Error::config(format!("unknown control mode '{other}' (dc, ptgc)"))),
        }
    }
}

/// Everything that determines an episode, apart from the predictor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub delay: DelayConfig,
    pub seed: u64,
    pub sim: SimConfig,
    pub track: TrackSpec,
    pub vehicle: VehicleParams,
    pub operator: OperatorParams,
    pub tracker: TrackerParams,
    pub sensor: SensorParams,
    pub bev: BevParams,
    pub dt_pred: f64,
    /// Name of the predictor in PTGC mode; part of the config hash.
    pub predictor: String,
}

impl ScenarioConfig {
    /// Scenario for one run. The operator's noise seed is derived from `seed`.
    pub fn from_global(g: &GlobalConfig, mode: Mode, round_trip_ms: u64, seed: u64, predictor: &str) -> Result<Self> {
        let tick_ms = g.sim.tick_ms()?;
        let mut delay = DelayConfig::round_trip(round_trip_ms, tick_ms);
        delay.jitter_max_ms = g.delay.jitter_max_ms;
        Ok(ScenarioConfig {
            mode,
            delay,
            seed,
            sim: g.sim,
            track: g.track.clone(),
            vehicle: g.vehicle,
            operator: OperatorParams {
                seed: tick_seed(seed, STREAM_OPERATOR),
                ..g.operator
            },
            tracker: g.tracker,
            sensor: g.sensor,
            bev: g.bev,
            dt_pred: g.pred.dt_pred,
            predictor: predictor.to_string(),
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cloud_seed(&self) -> u64 {
        tick_seed(self.seed, STREAM_CLOUD)
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub theta: f64,
    pub wheel_angle: f64,
    /// Command the operator issued this tick.
    pub op_steer: f64,
    pub op_throttle: f64,
    pub op_brake: f64,
    /// Origin tick of the feedback frame the operator looked at.
    pub feedback_tick: Option<u64>,
    /// Origin tick of the newest command the vehicle has received.
    pub cmd_origin_tick: Option<u64>,
    pub applied_steer: f64,
    pub applied_throttle: f64,
    pub applied_brake: f64,
    /// Signed lateral offset from the centerline, left positive.
    pub e: f64,
    pub s: f64,
    /// Unwrapped distance along the centerline since the start.
    pub progress: f64,
    /// Ticks since the anchor of the guidance in use (PTGC only).
    pub guidance_age: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub delay_ms: u64,
    pub uplink_ticks: u64,
    pub downlink_ticks: u64,
    pub dt: f64,
    pub lane_half_width: f64,
    pub total_length: f64,
    pub cloud_seed: u64,
    /// Ticks on which the guidance was stale beyond the prediction horizon.
    pub horizon_exceeded_ticks: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub rows: Vec<TickRow>,
}

impl RunLog {
    pub fn lap_complete(&self) -> bool {
        self.rows.last().is_some_and(|r| r.progress >= self.header.total_length)
    }

    /// Comment line with the header, then one CSV row per tick.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let h = &self.header;
        writeln!(
            w,
            "# config_hash={} seed={} mode={} delay_ms={} uplink_ticks={} downlink_ticks={} horizon_exceeded_ticks={}",
            h.config_hash, h.seed, h.mode, h.delay_ms, h.uplink_ticks, h.downlink_ticks, h.horizon_exceeded_ticks
        )?;
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// States and applied commands, for dataset construction.
    pub fn driving_log(&self) -> DrivingLog {
        DrivingLog {
            states: self
                .rows
                .iter()
                .map(|r| VehicleState {
                    x: r.x,
                    y: r.y,
                    v: r.v,
                    theta: r.theta,
                    wheel_angle: r.wheel_angle,
                })
                .collect(),
            commands: self
                .rows
                .iter()
                .map(|r| ControlCommand::new(r.applied_steer, r.applied_throttle, r.applied_brake))
                .collect(),
            cloud_seed: self.header.cloud_seed,
        }
    }
}

struct Plan {
    anchor_tick: u64,
    anchor: Pose2,
    waypoints: Vec<[f64; 2]>,
}

/// Vehicle-side record of what it knows: its own states and the commands
/// received, keyed by the feedback tick each command reacted to.
struct VehicleMemory {
    states: Vec<VehicleState>,
    cmd_by_echo: Vec<Option<ControlCommand>>,
}

impl VehicleMemory {
    fn record_command(&mut self, echo: u64, cmd: ControlCommand) {
        let i = echo as usize;
        if self.cmd_by_echo.len() <= i {
            self.cmd_by_echo.resize(i + 1, None);
        }
        self.cmd_by_echo[i] = Some(cmd);
    }

    /// Command paired with state `tick`; falls back to the closest older one.
    fn command_for(&self, tick: usize) -> ControlCommand {
        self.cmd_by_echo[..=tick.min(self.cmd_by_echo.len().saturating_sub(1))]
            .iter()
            .rev()
            .find_map(|c| *c)
            .unwrap_or_default()
    }

    /// `T_h + 1` aligned pairs ending at `anchor`, `step` ticks apart. Ticks
    /// before the start repeat the oldest available pair.
    fn history(&self, anchor: u64, history_len: usize, step: usize) -> (MotionHistory, Pose2) {
        let ticks: Vec<usize> = (0..=history_len)
            .rev()
            .map(|i| (anchor as i64 - (i * step) as i64).max(0) as usize)
            .collect();
        let states: Vec<VehicleState> = ticks.iter().map(|&t| self.states[t]).collect();
        let cmds: Vec<ControlCommand> = ticks.iter().map(|&t| self.command_for(t)).collect();
        MotionHistory::from_world(&states, &cmds)
    }
}

/// Runs one lap (or until `sim.max_time_s`).
pub fn run_episode(cfg: &ScenarioConfig, predictor: Option<&dyn TrajectoryPredictor>) -> Result<RunLog> {
    let track = build_test_track(&cfg.track)?;
    cfg.operator.validate()?;
    cfg.tracker.validate()?;
    let dt = cfg.sim.dt;
    let tick_ms = cfg.sim.tick_ms()?;
    let (up, down, jitter) = cfg.delay.ticks(tick_ms)?;
    let ratio = cfg.dt_pred / dt;
    if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
        return Err(Error::config("dt_pred must be a whole number of ticks"));
    }
    let step = ratio.round() as usize;
    let predictor = match (cfg.mode, predictor) {
        (Mode::Ptgc, None) => return Err(Error::config("PTGC mode needs a predictor")),
        (Mode::Ptgc, p) => p,
        (Mode::Dc, _) => None,
    };

    let mut uplink: DelayChannel<ControlCommand> = DelayChannel::new(up);
    let mut downlink: DelayChannel<VehicleState> = DelayChannel::new(down);
    if jitter > 0 {
        uplink = uplink.with_jitter(Jitter::new(jitter, tick_seed(cfg.seed, STREAM_UPLINK)));
        downlink = downlink.with_jitter(Jitter::new(jitter, tick_seed(cfg.seed, STREAM_DOWNLINK)));
    }
    let mut operator = Operator::new(cfg.operator, cfg.vehicle);
    let mut state = VehicleState::at_rest(track.start_pose());
    let mut memory = VehicleMemory {
        states: Vec::new(),
        cmd_by_echo: Vec::new(),
    };
    let mut feedback: Option<TimestampedMessage<VehicleState>> = None;
    let mut latest_cmd: Option<TimestampedMessage<ControlCommand>> = None;
    let mut plan: Option<Plan> = None;
    let mut guidance: Option<GuidanceTrajectory> = None;
    let mut exceeded = 0u64;
    let mut rows = Vec::new();
    let mut prev_s = track.project(state.x, state.y).s;
    let mut progress = 0.0;
    let max_ticks = cfg.sim.max_ticks();

    for n in 0u64.. {
        memory.states.push(state);
        let proj = track.project(state.x, state.y);
        progress += arclength_delta(prev_s, proj.s, track.total_length);
        prev_s = proj.s;

        // vehicle -> operator
        downlink.send(TimestampedMessage::new(state, n), n)?;
        if let Some(m) = downlink.deliver_due(n).pop() {
            feedback = Some(m);
        }
        let op_cmd = match &feedback {
            Some(fb) => operator.step(&fb.payload, &track, dt),
            None => ControlCommand::default(),
        };
        let echo = feedback.as_ref().map(|f| f.origin_tick);
        uplink.send(TimestampedMessage::with_echo(op_cmd, n, echo), n)?;

        // operator -> vehicle
        for m in uplink.deliver_due(n) {
            if let Some(e) = m.feedback_echo_tick {
                memory.record_command(e, m.payload);
            }
            latest_cmd = Some(m);
        }
        let mut applied = latest_cmd.as_ref().map(|m| m.payload).unwrap_or_default();
        let mut guidance_age = None;

        if let Some(pred) = predictor {
            let anchor_tick = latest_cmd.as_ref().and_then(|m| m.feedback_echo_tick);
            if let Some(a) = anchor_tick {
                let newer = plan.as_ref().is_none_or(|p| a > p.anchor_tick);
                if n % step as u64 == 0 && newer {
                    let (history, anchor) = memory.history(a, pred.history_len(), step);
                    let bev = pred.needs_bev().then(|| {
                        let cloud = synth_point_cloud(
                            &track,
                            &memory.states[a as usize],
                            &cfg.sensor,
                            tick_seed(cfg.cloud_seed(), a),
                        );
                        rasterize(&cloud, &cfg.bev).image
                    });
                    let waypoints = pred.predict_path(&PredictionRequest {
                        history: &history,
                        anchor,
                        anchor_tick: a,
                        bev: bev.as_ref(),
                    })?;
                    plan = Some(Plan {
                        anchor_tick: a,
                        anchor,
                        waypoints,
                    });
                }
            }
            if let Some(p) = &plan {
                // the anchor is the feedback frame the operator was reacting to,
                // so its age is the round trip this command experienced
                let lag = n - p.anchor_tick;
                match truncate_guidance(&p.waypoints, &p.anchor, p.anchor_tick, lag as f64 * dt, cfg.dt_pred) {
                    Ok(g) => guidance = Some(g),
                    Err(Error::DelayExceedsHorizon { .. }) => exceeded += 1,
                    Err(e) => return Err(e),
                }
            }
            if let Some(g) = &guidance {
                let (e, theta_e) = closed_loop_error(&state, g, &cfg.tracker, cfg.vehicle.wheelbase);
                applied.steer = stanley_steering(e, theta_e, state.v, &cfg.tracker, cfg.vehicle.wheel_angle_max);
                guidance_age = Some(n - g.source_tick);
            }
        }

        rows.push(TickRow {
            tick: n,
            time: n as f64 * dt,
            x: state.x,
            y: state.y,
            v: state.v,
            theta: state.theta,
            wheel_angle: state.wheel_angle,
            op_steer: op_cmd.steer,
            op_throttle: op_cmd.throttle,
            op_brake: op_cmd.brake,
            feedback_tick: echo,
            cmd_origin_tick: latest_cmd.as_ref().map(|m| m.origin_tick),
            applied_steer: applied.steer,
            applied_throttle: applied.throttle,
            applied_brake: applied.brake,
            e: proj.e,
            s: proj.s,
            progress,
            guidance_age,
        });
        if progress >= track.total_length || n >= max_ticks {
            break;
        }
        state = step_vehicle(&state, &applied, dt, &cfg.vehicle);
    }

    Ok(RunLog {
        header: RunHeader {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            mode: cfg.mode,
            delay_ms: cfg.delay.total_ms(),
            uplink_ticks: up,
            downlink_ticks: down,
            dt,
            lane_half_width: track.lane_half_width,
            total_length: track.total_length,
            cloud_seed: cfg.cloud_seed(),
            horizon_exceeded_ticks: exceeded,
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dc(delay_ms: u64, seed: u64) -> ScenarioConfig {
        ScenarioConfig::from_global(&GlobalConfig::default(), Mode::Dc, delay_ms, seed, "none").unwrap()
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("PTGC".parse::<Mode>().unwrap(), Mode::Ptgc);
        assert!("auto".parse::<Mode>().is_err());
    }

    #[test]
    fn ptgc_without_predictor_is_rejected() {
        let mut cfg = dc(0, 0);
        cfg.mode = Mode::Ptgc;
        assert!(run_episode(&cfg, None).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        assert_eq!(dc(0, 1).hash(), dc(0, 1).hash());
        assert_ne!(dc(0, 1).hash(), dc(200, 1).hash());
        assert_eq!(dc(0, 1).hash().len(), 64);
    }

    #[test]
    fn history_pads_with_oldest_pair() {
        let mut m = VehicleMemory {
            states: (0..5)
                .map(|k| VehicleState {
                    x: k as f64,
                    v: 1.0,
                    ..Default::default()
                })
                .collect(),
            cmd_by_echo: Vec::new(),
        };
        m.record_command(2, ControlCommand::new(0.5, 0.1, 0.0));
        let (h, anchor) = m.history(4, 3, 2);
        assert_eq!(anchor.x, 4.0);
        let xs: Vec<f64> = h.states.iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![-4.0, -4.0, -2.0, 0.0]);
        let steers: Vec<f64> = h.commands.iter().map(|c| c[0]).collect();
        assert_eq!(steers, vec![0.0, 0.0, 0.5, 0.5]);
    }
}
