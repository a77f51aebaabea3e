//! Batches of episodes over delay levels, control modes, repeats and seeds.

use std::io::Write;

use serde::Serialize;

use crate::config::GlobalConfig;
use crate::error::Result;
use crate::harness::episode::{run_episode, Mode, ScenarioConfig};
use crate::harness::metrics::{compute_run_metrics, Improvement, MetricTriple, RunMetrics};
use crate::harness::predictors::TrajectoryPredictor;
use crate::lidar::tick_seed;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub mode: Mode,
    pub delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub cells: Vec<Cell>,
    pub repeats: usize,
    pub seeds: Vec<u64>,
}

impl Protocol {
    /// DC at every delay level and PTGC at every non-zero one (or at zero too
    /// when asked).
    pub fn from_config(g: &GlobalConfig) -> Self {
        let exp = &g.experiment;
        let mut cells = Vec::new();
        for &d in &exp.delays_ms {
            cells.push(Cell { mode: Mode::Dc, delay_ms: d });
            if d > 0 || exp.ptgc_at_zero {
                cells.push(Cell {
                    mode: Mode::Ptgc,
                    delay_ms: d,
                });
            }
        }
        Protocol {
            cells,
            repeats: exp.repeats,
            seeds: exp.seeds.clone(),
        }
    }

    /// Every run in canonical order: seed, cell, repeat.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &cell in &self.cells {
                for repeat in 0..self.repeats {
                    out.push(Job { cell, seed, repeat });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Job {
    pub cell: Cell,
    pub seed: u64,
    pub repeat: usize,
}

impl Job {
    /// Depends on seed and repeat only, so DC and PTGC runs of the same repeat
    /// face the same operator noise and sensor draws.
    pub fn episode_seed(&self) -> u64 {
        tick_seed(self.seed, self.repeat as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub job: Job,
    pub metrics: RunMetrics,
}

/// Runs `jobs` (in parallel when enabled); results come back in job order.
pub fn run_jobs(g: &GlobalConfig, jobs: &[Job], predictor: Option<&dyn TrajectoryPredictor>) -> Result<Vec<RunResult>> {
    let label = predictor.map(|p| p.label()).unwrap_or_default();
    par::map(jobs, |job| {
        let cfg = ScenarioConfig::from_global(g, job.cell.mode, job.cell.delay_ms, job.episode_seed(), &label)?;
        let log = run_episode(&cfg, predictor)?;
        Ok(RunResult {
            job: *job,
            metrics: compute_run_metrics(&log),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(vals: &[f64]) -> Option<MeanStd> {
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = if vals.len() > 1 {
        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(MeanStd { mean, std: var.sqrt() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub runs: usize,
    pub valid: usize,
    pub tct: Option<MeanStd>,
    pub d2c: Option<MeanStd>,
    pub se: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayScores {
    pub delay_ms: u64,
    pub scores: Improvement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub results: Vec<RunResult>,
    pub cells: Vec<CellSummary>,
    /// PTGC against DC at each non-zero delay, benchmarked on DC at 0 ms.
    pub scores: Vec<DelayScores>,
}

pub fn summarize(cells: &[Cell], results: &[RunResult]) -> (Vec<CellSummary>, Vec<DelayScores>) {
    let summaries: Vec<CellSummary> = cells
        .iter()
        .map(|&cell| {
            let runs: Vec<&RunResult> = results.iter().filter(|r| r.job.cell == cell).collect();
            let ok: Vec<&RunMetrics> = runs.iter().map(|r| &r.metrics).filter(|m| m.valid()).collect();
            let col = |f: fn(&RunMetrics) -> Option<f64>| mean_std(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
            CellSummary {
                cell,
                runs: runs.len(),
                valid: ok.len(),
                tct: col(|m| m.tct),
                d2c: col(|m| m.d2c),
                se: col(|m| m.se),
            }
        })
        .collect();
    let find = |mode, delay_ms| summaries.iter().find(|s| s.cell == Cell { mode, delay_ms });
    let mut scores = Vec::new();
    if let Some(base) = find(Mode::Dc, 0) {
        for s in &summaries {
            if s.cell.mode != Mode::Ptgc || s.cell.delay_ms == 0 {
                continue;
            }
            let Some(dc) = find(Mode::Dc, s.cell.delay_ms) else { continue };
            let triple = |f: fn(&CellSummary) -> Option<MeanStd>| match (f(s), f(dc), f(base)) {
                (Some(c), Some(d), Some(b)) => Some(MetricTriple::new(c.mean, d.mean, b.mean)),
                _ => None,
            };
            // a cell without valid runs still gets a row, with every score undefined
            let score = |f: fn(&CellSummary) -> Option<MeanStd>| triple(f).and_then(|t| t.score());
            scores.push(DelayScores {
                delay_ms: s.cell.delay_ms,
                scores: Improvement::from_scores(score(|c| c.d2c), score(|c| c.tct), score(|c| c.se), None),
            });
        }
    }
    (summaries, scores)
}

/// Runs every cell of the protocol. Invalid runs are kept in the results with
/// their reason but left out of the summaries.
pub fn experiment_batch(
    g: &GlobalConfig,
    protocol: &Protocol,
    predictor: Option<&dyn TrajectoryPredictor>,
) -> Result<BatchOutcome> {
    let results = run_jobs(g, &protocol.jobs(), predictor)?;
    let (cells, scores) = summarize(&protocol.cells, &results);
    Ok(BatchOutcome { results, cells, scores })
}

#[derive(Serialize)]
struct ResultRow {
    seed: u64,
    mode: Mode,
    delay_ms: u64,
    repeat: usize,
    valid: bool,
    reason: String,
    tct_s: Option<f64>,
    d2c_m2: Option<f64>,
    se: Option<f64>,
    mean_speed_mps: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    mode: Mode,
    delay_ms: u64,
    runs: usize,
    valid: usize,
    tct_mean: Option<f64>,
    tct_std: Option<f64>,
    d2c_mean: Option<f64>,
    d2c_std: Option<f64>,
    se_mean: Option<f64>,
    se_std: Option<f64>,
}

#[derive(Serialize)]
struct ScoreRow {
    delay_ms: u64,
    p_d2c: Option<f64>,
    p_tct: Option<f64>,
    p_se: Option<f64>,
    p_ove: Option<f64>,
}

impl BatchOutcome {
    pub fn write_results_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.results {
            let m = &r.metrics;
            out.serialize(ResultRow {
                seed: r.job.seed,
                mode: r.job.cell.mode,
                delay_ms: r.job.cell.delay_ms,
                repeat: r.job.repeat,
                valid: m.valid(),
                reason: m.validity.to_string(),
                tct_s: m.tct,
                d2c_m2: m.d2c,
                se: m.se,
                mean_speed_mps: m.mean_speed,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(SummaryRow {
                mode: c.cell.mode,
                delay_ms: c.cell.delay_ms,
                runs: c.runs,
                valid: c.valid,
                tct_mean: c.tct.map(|m| m.mean),
                tct_std: c.tct.map(|m| m.std),
                d2c_mean: c.d2c.map(|m| m.mean),
                d2c_std: c.d2c.map(|m| m.std),
                se_mean: c.se.map(|m| m.mean),
                se_std: c.se.map(|m| m.std),
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_scores_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.scores.is_empty() {
            out.write_record(["delay_ms", "p_d2c", "p_tct", "p_se", "p_ove"])?;
        }
        for s in &self.scores {
            out.serialize(ScoreRow {
                delay_ms: s.delay_ms,
                p_d2c: s.scores.d2c,
                p_tct: s.scores.tct,
                p_se: s.scores.se,
                p_ove: s.scores.overall,
            })?;
        }
        out.flush()?;
        Ok(())
    }
}
