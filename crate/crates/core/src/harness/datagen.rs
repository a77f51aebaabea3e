//! Zero-delay scripted-operator episodes for building training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::GlobalConfig;
use crate::error::{Error, Result};
use crate::harness::episode::{run_episode, Mode, ScenarioConfig};
use crate::lidar::tick_seed;
use crate::par;
use crate::predictor::dataset::{records_from_log, BuiltDataset, WindowParams};

/// Scenarios for `episodes` data runs; target speed and preview time vary
/// per episode within the `data` ranges.
pub fn data_scenarios(g: &GlobalConfig, episodes: usize, seed: u64) -> Result<Vec<ScenarioConfig>> {
    let mut rng = ChaCha8Rng::seed_from_u64(tick_seed(seed, 0xDA7A));
    let d = &g.data;
    (0..episodes)
        .map(|ep| {
            let mut cfg = ScenarioConfig::from_global(g, Mode::Dc, 0, tick_seed(seed, ep as u64 + 1), "")?;
            cfg.operator.target_speed_base = rng.gen_range(d.speed_min..=d.speed_max);
            cfg.operator.preview_time = rng.gen_range(d.preview_min..=d.preview_max);
            Ok(cfg)
        })
        .collect()
}

pub fn window_params(g: &GlobalConfig) -> Result<WindowParams> {
    Ok(WindowParams {
        history_len: g.pred.model.history_len,
        horizon: g.pred.model.horizon,
        decimation: g.pred.decimation(g.sim.dt)?,
    })
}

/// Runs the data episodes and cuts them into records.
pub fn generate_dataset(g: &GlobalConfig, episodes: usize, seed: u64) -> Result<BuiltDataset> {
    if episodes == 0 {
        return Err(Error::config("at least one episode is required"));
    }
    let track = g.build_track()?;
    let window = window_params(g)?;
    let scenarios = data_scenarios(g, episodes, seed)?;
    let per_episode: Vec<Result<_>> = par::map(&scenarios, |cfg| {
        let log = run_episode(cfg, None)?;
        let drive = log.driving_log();
        if window.window_count(drive.states.len()) == 0 {
            return Ok(None);
        }
        Ok(Some(records_from_log(&track, &drive, &window, &g.sensor, &g.bev)))
    });
    let mut out = BuiltDataset::default();
    for r in per_episode {
        match r? {
            Some(records) => out.records.extend(records),
            None => out.skipped_logs += 1,
        }
    }
    if out.records.is_empty() {
        return Err(Error::Runtime("no episode was long enough for a single window".into()));
    }
    Ok(out)
}
