//! Sliding-window dataset construction and the binary record format.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bev::{rasterize, BevImage, BevParams, BitGrid};
use crate::error::{Error, Result};
use crate::lidar::{synth_point_cloud, tick_seed, SensorParams};
use crate::predictor::history::{to_anchor_frame, DatasetRecord, MotionHistory};
use crate::track::Track;
use crate::vehicle::{ControlCommand, VehicleState};

const DATASET_MAGIC: &[u8; 8] = b"PTGCDS1\0";

/// A zero-delay driving log at the simulation rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingLog {
    pub states: Vec<VehicleState>,
    /// Command applied at each tick.
    pub commands: Vec<ControlCommand>,
    /// Base seed for the per-tick point clouds.
    pub cloud_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    /// Past steps `T_h` (the window holds `T_h + 1` past samples).
    pub history_len: usize,
    /// Future steps `T`.
    pub horizon: usize,
    /// Simulation ticks per prediction step.
    pub decimation: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            history_len: 20,
            horizon: 20,
            decimation: 2,
        }
    }
}

impl WindowParams {
    pub fn window_len(&self) -> usize {
        self.history_len + 1 + self.horizon
    }

    /// Samples left after decimating `ticks` simulation ticks.
    pub fn resampled_len(&self, ticks: usize) -> usize {
        ticks.div_ceil(self.decimation)
    }

    pub fn window_count(&self, ticks: usize) -> usize {
        (self.resampled_len(ticks) + 1).saturating_sub(self.window_len())
    }
}

/// Records built from a set of logs.
#[derive(Debug, Clone, Default)]
pub struct BuiltDataset {
    pub records: Vec<DatasetRecord>,
    /// Logs too short for a single window.
    pub skipped_logs: usize,
}

/// Cuts one log into records, each with the BEV rendered at its anchor tick.
pub fn records_from_log(
    track: &Track,
    log: &DrivingLog,
    window: &WindowParams,
    sensor: &SensorParams,
    bev: &BevParams,
) -> Vec<DatasetRecord> {
    assert_eq!(log.states.len(), log.commands.len(), "log lengths differ");
    let d = window.decimation;
    let samples: Vec<usize> = (0..log.states.len()).step_by(d).collect();
    (0..window.window_count(log.states.len()))
        .map(|w| {
            let past = &samples[w..=w + window.history_len];
            let states: Vec<VehicleState> = past.iter().map(|&k| log.states[k]).collect();
            let commands: Vec<ControlCommand> = past.iter().map(|&k| log.commands[k]).collect();
            let (history, anchor) = MotionHistory::from_world(&states, &commands);
            let future: Vec<(f64, f64)> = samples[w + window.history_len + 1..w + window.window_len()]
                .iter()
                .map(|&k| (log.states[k].x, log.states[k].y))
                .collect();
            let anchor_tick = *past.last().expect("window");
            let cloud = synth_point_cloud(
                track,
                &log.states[anchor_tick],
                sensor,
                tick_seed(log.cloud_seed, anchor_tick as u64),
            );
            DatasetRecord {
                history,
                bev: rasterize(&cloud, bev).image,
                future: to_anchor_frame(&anchor, &future),
            }
        })
        .collect()
}

pub fn build_dataset(
    track: &Track,
    logs: &[DrivingLog],
    window: &WindowParams,
    sensor: &SensorParams,
    bev: &BevParams,
) -> BuiltDataset {
    let mut out = BuiltDataset::default();
    for log in logs {
        if window.window_count(log.states.len()) == 0 {
            out.skipped_logs += 1;
            continue;
        }
        out.records.extend(records_from_log(track, log, window, sensor, bev));
    }
    out
}

/// Seeded 3:1:1 split into train / validation / test indices.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    (idx, val, test)
}

/// Header of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub count: u32,
    pub history_len: u32,
    pub horizon: u32,
    pub grid: u32,
}

fn put_f32s(w: &mut impl Write, vals: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in vals {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_dataset<W: Write>(mut w: W, records: &[DatasetRecord], window: &WindowParams, grid: usize) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    for v in [records.len(), window.history_len, window.horizon, grid] {
        let v = u32::try_from(v).map_err(|_| Error::format("dataset", "header field exceeds u32"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    let steps = window.history_len + 1;
    for (i, r) in records.iter().enumerate() {
        if r.history.len() != steps || r.history.commands.len() != steps || r.future.len() != window.horizon {
            return Err(Error::Shape(format!("record {i} does not match the window")));
        }
        if r.bev.side() != grid {
            return Err(Error::Shape(format!("record {i} has BEV side {}", r.bev.side())));
        }
        put_f32s(&mut w, r.history.states.iter().flatten().copied())?;
        put_f32s(&mut w, r.history.commands.iter().flatten().copied())?;
        w.write_all(r.bev.ground.as_packed())?;
        w.write_all(r.bev.nonground.as_packed())?;
        put_f32s(&mut w, r.future.iter().flatten().copied())?;
    }
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32s<const K: usize>(r: &mut impl Read, rows: usize) -> Result<Vec<[f64; K]>> {
    let mut buf = vec![0u8; rows * K * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(K * 4)
        .map(|row| std::array::from_fn(|k| f32::from_le_bytes(row[4 * k..4 * k + 4].try_into().unwrap()) as f64))
        .collect())
}

/// Reads a dataset file; `bev` supplies the geometry the planes were made with.
pub fn read_dataset<R: Read>(mut r: R, bev: &BevParams) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(Error::format("dataset", "bad magic"));
    }
    let header = DatasetHeader {
        count: get_u32(&mut r)?,
        history_len: get_u32(&mut r)?,
        horizon: get_u32(&mut r)?,
        grid: get_u32(&mut r)?,
    };
    let grid = header.grid as usize;
    if grid == 0 || grid % 8 != 0 {
        return Err(Error::format("dataset", format!("grid side {grid}")));
    }
    if grid != bev.grid {
        return Err(Error::Shape(format!("dataset grid {grid} but BEV config grid {}", bev.grid)));
    }
    let steps = header.history_len as usize + 1;
    let plane = grid * grid / 8;
    let mut records = Vec::with_capacity(header.count as usize);
    let mut bits = vec![0u8; plane];
    for _ in 0..header.count {
        let states = get_f32s::<4>(&mut r, steps)?;
        let commands = get_f32s::<3>(&mut r, steps)?;
        r.read_exact(&mut bits)?;
        let ground = BitGrid::from_packed(grid, &bits)?;
        r.read_exact(&mut bits)?;
        let nonground = BitGrid::from_packed(grid, &bits)?;
        let future = get_f32s::<2>(&mut r, header.horizon as usize)?;
        records.push(DatasetRecord {
            history: MotionHistory { states, commands },
            bev: BevImage {
                ground,
                nonground,
                params: *bev,
            },
            future,
        });
    }
    Ok((header, records))
}
