//! Parallel vs. sequential execution of the two hot paths: a batch of
//! closed-loop episodes and a pass of the network over a record set.
//!
//! "sequential" pins the pool to one worker; building with
//! `--no-default-features` removes rayon entirely and should match it.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ptgc_core::config::GlobalConfig;
use ptgc_core::harness::datagen::generate_dataset;
use ptgc_core::harness::experiment::{run_jobs, Protocol};
use ptgc_core::harness::CtraPredictor;
use ptgc_core::par;
use ptgc_core::predictor::train::{prepare, score_set};
use ptgc_core::predictor::{ModelParams, RegressionKind, Variant};

fn episodes(c: &mut Criterion) {
    let mut g = GlobalConfig::default();
    g.experiment.delays_ms = vec![0, 400, 800];
    g.experiment.repeats = 2;
    let jobs = Protocol::from_config(&g).jobs();
    let ctra = CtraPredictor {
        history_len: g.pred.model.history_len,
        horizon: g.pred.model.horizon,
        dt_pred: g.pred.dt_pred,
    };

    let mut group = c.benchmark_group("episode_batch");
    group.sample_size(10);
    for (name, workers) in [("sequential", 1), ("parallel", 0)] {
        group.bench_with_input(BenchmarkId::new(name, jobs.len()), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || run_jobs(&g, &jobs, Some(&ctra)).unwrap()))
        });
    }
    group.finish();
}

fn network_pass(c: &mut Criterion) {
    let g = GlobalConfig::default();
    let ds = generate_dataset(&g, 1, 0).unwrap();
    let records: Vec<_> = ds.records.into_iter().take(256).collect();
    let model = ModelParams::init(g.pred.model.clone(), Variant::Mc, g.bev.grid, 0).unwrap();
    let samples = prepare(&model, &records).unwrap();

    let mut group = c.benchmark_group("network_pass");
    group.sample_size(10);
    for (name, workers) in [("sequential", 1), ("parallel", 0)] {
        group.bench_with_input(BenchmarkId::new(name, samples.len()), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || score_set(&model, &samples, 1.0, RegressionKind::Euclidean)))
        });
    }
    group.finish();
}

criterion_group!(benches, episodes, network_pass);
criterion_main!(benches);
