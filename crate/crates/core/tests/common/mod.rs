//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use ptgc_core::bev::{BevImage, BevParams};
use ptgc_core::predictor::{ModelConfig, ModelParams, MotionHistory, RegressionKind, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
// Gradients smaller than this are compared in absolute terms.
pub const DENOM_FLOOR: f64 = 1e-5;

pub fn reduced() -> ModelConfig {
    ModelConfig {
        history_len: 6,
        horizon: 3,
        modes: 2,
        embed: 4,
        hidden: 8,
        conv_channels: [2, 3, 3, 4],
        encoder_grid: 32,
        context_dim: 6,
        decoder_hidden: 8,
        output_scale: 2.0,
    }
}

fn random_history(rng: &mut ChaCha8Rng, n: usize) -> MotionHistory {
    MotionHistory {
        states: (0..n)
            .map(|_| {
                [
                    rng.gen_range(-15.0..0.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(0.0..15.0),
                    rng.gen_range(-0.5..0.5),
                ]
            })
            .collect(),
        commands: (0..n)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect(),
    }
}

fn random_bev(rng: &mut ChaCha8Rng) -> BevImage {
    let mut bev = BevImage::empty(BevParams::with_grid(32));
    for _ in 0..120 {
        bev.ground.set(rng.gen_range(0..32), rng.gen_range(0..32));
        bev.nonground.set(rng.gen_range(0..32), rng.gen_range(0..32));
    }
    bev
}

/// Worst relative disagreement between backpropagation and central finite
/// differences over every parameter of a randomized reduced model.
pub fn max_relative_error(variant: Variant, point: u64) -> f64 {
    let cfg = reduced();
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + point);
    let mut model = ModelParams::init(cfg.clone(), variant, 32, point).unwrap();
    for v in model.values_mut() {
        *v += rng.gen_range(-0.2..0.2);
    }
    let inputs: Vec<_> = (0..2)
        .map(|_| {
            model
                .encode_input(&random_history(&mut rng, cfg.history_len + 1), &random_bev(&mut rng))
                .unwrap()
        })
        .collect();
    let targets: Vec<Vec<[f64; 2]>> = (0..2)
        .map(|_| {
            (0..cfg.horizon)
                .map(|_| [rng.gen_range(-2.0..6.0), rng.gen_range(-2.0..2.0)])
                .collect()
        })
        .collect();
    let inp: Vec<_> = inputs.iter().collect();
    let tgt: Vec<&[[f64; 2]]> = targets.iter().map(|t| t.as_slice()).collect();
    let kind = RegressionKind::Euclidean;

    let (_, analytic) = model.loss_and_grad(&inp, &tgt, 1.0, kind);
    let mut worst: f64 = 0.0;
    for i in 0..model.num_params() {
        let orig = model.values()[i];
        model.values_mut()[i] = orig + H;
        let up = model.loss(&inp, &tgt, 1.0, kind);
        model.values_mut()[i] = orig - H;
        let down = model.loss(&inp, &tgt, 1.0, kind);
        model.values_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        let denom = analytic[i].abs().max(numeric.abs()).max(DENOM_FLOOR);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
