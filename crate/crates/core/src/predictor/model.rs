//! Motion + context trajectory prediction network.
//!
//! * motion encoder: linear embedding of the per-step 7-vector
//!   `(x, y, v, theta, steer, throttle, brake)` followed by a single LSTM layer;
//!   the last hidden state is the motion feature.
//! * context encoder: fixed max-pool stem down to `encoder_grid`, four
//!   stride-2 residual blocks of 3x3 convolutions, global average pooling and a
//!   projection to `context_dim`.
//! * decoder: one hidden ELU layer on the concatenated feature, then a linear
//!   head of size `(2T + 1) * N` laid out per mode as
//!   `[x_1, y_1, ..., x_T, y_T, logit]`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::bev::BevImage;
use crate::error::{Error, Result};
use crate::predictor::history::MotionHistory;
use crate::predictor::loss::{softmax, total_loss_grad, CandidateSet, RegressionKind};
use crate::predictor::nn::{elu, elu_grad_from_output, Conv2d, Dense, Lstm, LstmCache, ParamLayout, Spatial};

/// Per-step motion features.
pub const MOTION_FEATURES: usize = 7;
const STATE_SCALE: [f64; 4] = [0.1, 0.1, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Past steps `T_h`; the history holds `T_h + 1` samples.
    pub history_len: usize,
    /// Predicted steps `T`.
    pub horizon: usize,
    /// Candidate trajectories `N`.
    pub modes: usize,
    pub embed: usize,
    pub hidden: usize,
    pub conv_channels: [usize; 4],
    /// Side of the BEV after the max-pool stem.
    pub encoder_grid: usize,
    pub context_dim: usize,
    pub decoder_hidden: usize,
    /// Metres per unit of raw waypoint output.
    pub output_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history_len: 20,
            horizon: 20,
            modes: 3,
            embed: 32,
            hidden: 128,
            conv_channels: [8, 16, 32, 64],
            encoder_grid: 32,
            context_dim: 512,
            decoder_hidden: 256,
            output_scale: 3.0,
        }
    }
}

impl ModelConfig {
    pub fn output_len(&self) -> usize {
        (2 * self.horizon + 1) * self.modes
    }

    pub fn feature_len(&self) -> usize {
        self.hidden + self.context_dim
    }

    pub fn validate(&self, grid: usize) -> Result<()> {
        if self.horizon == 0 || self.modes == 0 || self.history_len < 2 {
            return Err(Error::config("horizon, modes must be >0 and history_len >= 2"));
        }
        if self.encoder_grid % 16 != 0 || self.encoder_grid == 0 {
            return Err(Error::config("encoder_grid must be a positive multiple of 16"));
        }
        if grid % self.encoder_grid != 0 {
            return Err(Error::config(format!(
                "BEV grid {grid} is not a multiple of encoder_grid {}",
                self.encoder_grid
            )));
        }
        if self.conv_channels.iter().any(|&c| c == 0) || self.embed == 0 || self.hidden == 0 {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Which encoders feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Motion and context.
    Mc,
    /// Motion only.
    M,
    /// Context only.
    C,
    /// Neither; the output is a constant of the decoder.
    None,
}

impl Variant {
    pub fn motion_on(self) -> bool {
        matches!(self, Variant::Mc | Variant::M)
    }

    pub fn context_on(self) -> bool {
        matches!(self, Variant::Mc | Variant::C)
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Mc => "MC-model",
            Variant::M => "M-model",
            Variant::C => "C-model",
            Variant::None => "null-model",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mc => "mc",
            Variant::M => "m",
            Variant::C => "c",
            Variant::None => "none",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(Variant::Mc),
            "m" => Ok(Variant::M),
            "c" => Ok(Variant::C),
            "none" => Ok(Variant::None),
            other => Err(Error::config(format!("unknown model mode '{other}' (mc, m, c)"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
}

#[derive(Debug, Clone)]
struct MotionLayers {
    embed: Dense,
    lstm: Lstm,
}

#[derive(Debug, Clone)]
struct ContextLayers {
    blocks: Vec<ResBlock>,
    proj: Dense,
}

#[derive(Debug, Clone)]
struct Layers {
    motion: Option<MotionLayers>,
    context: Option<ContextLayers>,
    fc1: Dense,
    fc2: Dense,
}

/// Network weights plus the architecture they belong to.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub variant: Variant,
    /// BEV grid side the model consumes.
    pub grid: usize,
    layout: ParamLayout,
    values: Vec<f64>,
    layers: Layers,
}

/// A record's network input, prepared once.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `T_h + 1` rows of normalized motion features.
    pub motion: Vec<[f64; MOTION_FEATURES]>,
    /// Two max-pooled occupancy channels, `2 x g x g`, values 0/1.
    pub pooled: Vec<u8>,
}

fn build_layers(cfg: &ModelConfig, variant: Variant) -> (ParamLayout, Layers) {
    let mut layout = ParamLayout::default();
    let motion = variant.motion_on().then(|| MotionLayers {
        embed: Dense::register(&mut layout, "motion.embed", MOTION_FEATURES, cfg.embed),
        lstm: Lstm::register(&mut layout, "motion.lstm", cfg.embed, cfg.hidden),
    });
    let context = variant.context_on().then(|| {
        let mut c_in = 2;
        let blocks = cfg
            .conv_channels
            .iter()
            .enumerate()
            .map(|(i, &c_out)| {
                let name = format!("context.block{}", i + 1);
                let b = ResBlock {
                    conv1: Conv2d::register(&mut layout, &format!("{name}.conv1"), c_in, c_out, 3, 2, 1),
                    conv2: Conv2d::register(&mut layout, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1),
                    skip: Conv2d::register(&mut layout, &format!("{name}.skip"), c_in, c_out, 1, 2, 0),
                };
                c_in = c_out;
                b
            })
            .collect();
        ContextLayers {
            blocks,
            proj: Dense::register(&mut layout, "context.proj", c_in, cfg.context_dim),
        }
    });
    let fc1 = Dense::register(&mut layout, "decoder.fc1", cfg.feature_len(), cfg.decoder_hidden);
    let fc2 = Dense::register(&mut layout, "decoder.fc2", cfg.decoder_hidden, cfg.output_len());
    (
        layout,
        Layers {
            motion,
            context,
            fc1,
            fc2,
        },
    )
}

struct BlockCache {
    input_shape: Spatial,
    cols1: Vec<f64>,
    h1: Vec<f64>,
    cols2: Vec<f64>,
    cols_skip: Vec<f64>,
    out: Vec<f64>,
}

struct ContextCache {
    blocks: Vec<BlockCache>,
    gap: Vec<f64>,
    feature: Vec<f64>,
}

/// Activations of one forward pass over a batch.
pub struct ForwardPass {
    batch: usize,
    motion_inputs: Vec<Vec<f64>>,
    embedded: Vec<Vec<f64>>,
    lstm: Option<LstmCache>,
    context: Option<ContextCache>,
    features: Vec<f64>,
    hidden: Vec<f64>,
    /// Raw head output `[(2T+1)N x B]`.
    pub raw: Vec<f64>,
}

impl ModelParams {
    /// Fresh weights drawn from `seed`.
    pub fn init(config: ModelConfig, variant: Variant, grid: usize, seed: u64) -> Result<Self> {
        config.validate(grid)?;
        let (layout, layers) = build_layers(&config, variant);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = |slice: &mut [f64], std: f64| {
            let d = Normal::new(0.0, std).expect("finite std");
            for v in slice {
                *v = d.sample(&mut rng);
            }
        };
        let dense_w = |d: &Dense| d.w..d.w + d.n_in * d.n_out;
        let conv_w = |c: &Conv2d| c.w..c.w + c.c_out * c.fan_in();
        if let Some(m) = &layers.motion {
            normal(&mut values[dense_w(&m.embed)], (1.0 / MOTION_FEATURES as f64).sqrt());
        }
        if let Some(c) = &layers.context {
            for b in &c.blocks {
                normal(&mut values[conv_w(&b.conv1)], (2.0 / b.conv1.fan_in() as f64).sqrt());
                normal(&mut values[conv_w(&b.conv2)], (1.0 / b.conv2.fan_in() as f64).sqrt());
                normal(&mut values[conv_w(&b.skip)], (1.0 / b.skip.fan_in() as f64).sqrt());
            }
            normal(&mut values[dense_w(&c.proj)], (1.0 / c.proj.n_in as f64).sqrt());
        }
        normal(&mut values[dense_w(&layers.fc1)], (2.0 / layers.fc1.n_in as f64).sqrt());
        normal(&mut values[dense_w(&layers.fc2)], (0.1 / layers.fc2.n_in as f64).sqrt());
        if let Some(m) = &layers.motion {
            let h = m.lstm.hidden;
            let bound = 1.0 / (h as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            let n = 4 * h * (m.lstm.n_in + h);
            for v in &mut values[m.lstm.wx..m.lstm.wx + n] {
                *v = u.sample(&mut rng);
            }
            // forget-gate bias starts at 1
            values[m.lstm.b + h..m.lstm.b + 2 * h].fill(1.0);
        }
        Ok(ModelParams {
            config,
            variant,
            grid,
            layout,
            values,
            layers,
        })
    }

    /// Rebuilds a model around stored weights; used by the model file reader.
    pub fn from_parts(config: ModelConfig, variant: Variant, grid: usize, values: Vec<f64>) -> Result<Self> {
        config.validate(grid)?;
        let (layout, layers) = build_layers(&config, variant);
        if values.len() != layout.len {
            return Err(Error::Shape(format!(
                "expected {} weights, got {}",
                layout.len,
                values.len()
            )));
        }
        Ok(ModelParams {
            config,
            variant,
            grid,
            layout,
            values,
            layers,
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn num_params(&self) -> usize {
        self.layout.len
    }

    fn pool_factor(&self) -> usize {
        self.grid / self.config.encoder_grid
    }

    /// Normalizes the history and max-pools the BEV.
    pub fn encode_input(&self, history: &MotionHistory, bev: &BevImage) -> Result<ModelInput> {
        let want = self.config.history_len + 1;
        if history.len() != want || history.commands.len() != want {
            return Err(Error::Shape(format!(
                "history has {} states, model expects {want}",
                history.len()
            )));
        }
        if bev.side() != self.grid {
            return Err(Error::Shape(format!(
                "BEV side {} but model expects {}",
                bev.side(),
                self.grid
            )));
        }
        let motion = history
            .states
            .iter()
            .zip(&history.commands)
            .map(|(s, c)| {
                [
                    s[0] * STATE_SCALE[0],
                    s[1] * STATE_SCALE[1],
                    s[2] * STATE_SCALE[2],
                    s[3] * STATE_SCALE[3],
                    c[0],
                    c[1],
                    c[2],
                ]
            })
            .collect();
        let g = self.config.encoder_grid;
        let f = self.pool_factor();
        let mut pooled = vec![0u8; 2 * g * g];
        for (ch, plane) in [&bev.ground, &bev.nonground].into_iter().enumerate() {
            for (r, c) in plane.occupied() {
                pooled[ch * g * g + (r / f) * g + c / f] = 1;
            }
        }
        Ok(ModelInput { motion, pooled })
    }

    /// Forward pass over a batch of prepared inputs.
    pub fn forward(&self, inputs: &[&ModelInput]) -> ForwardPass {
        let cfg = &self.config;
        let p = &self.values;
        let batch = inputs.len();
        let steps = cfg.history_len + 1;

        let mut motion_inputs = Vec::new();
        let mut embedded = Vec::new();
        let mut lstm = None;
        let mut features = vec![0.0; cfg.feature_len() * batch];

        if let Some(m) = &self.layers.motion {
            for t in 0..steps {
                let mut x = vec![0.0; MOTION_FEATURES * batch];
                for (b, inp) in inputs.iter().enumerate() {
                    for f in 0..MOTION_FEATURES {
                        x[f * batch + b] = inp.motion[t][f];
                    }
                }
                embedded.push(m.embed.forward(p, &x, batch));
                motion_inputs.push(x);
            }
            let cache = m.lstm.forward(p, &embedded, batch);
            features[..cfg.hidden * batch].copy_from_slice(cache.last_hidden());
            lstm = Some(cache);
        }

        let context = self.layers.context.as_ref().map(|c| {
            let g = cfg.encoder_grid;
            let mut x = vec![0.0; 2 * batch * g * g];
            for ch in 0..2 {
                for (b, inp) in inputs.iter().enumerate() {
                    let src = &inp.pooled[ch * g * g..(ch + 1) * g * g];
                    let dst = &mut x[(ch * batch + b) * g * g..][..g * g];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = f64::from(s);
                    }
                }
            }
            let mut shape = Spatial { batch, h: g, w: g };
            let mut blocks = Vec::with_capacity(c.blocks.len());
            for blk in &c.blocks {
                let (mut h1, cols1) = blk.conv1.forward(p, &x, shape);
                h1.iter_mut().for_each(|v| *v = elu(*v));
                let mid = blk.conv1.out_shape(shape);
                let (a2, cols2) = blk.conv2.forward(p, &h1, mid);
                let (sk, cols_skip) = blk.skip.forward(p, &x, shape);
                let out: Vec<f64> = a2.iter().zip(&sk).map(|(a, s)| elu(a + s)).collect();
                blocks.push(BlockCache {
                    input_shape: shape,
                    cols1,
                    h1,
                    cols2,
                    cols_skip,
                    out: out.clone(),
                });
                x = out;
                shape = mid;
            }
            let hw = shape.h * shape.w;
            let c_last = c.proj.n_in;
            let mut gap = vec![0.0; c_last * batch];
            for ch in 0..c_last {
                for b in 0..batch {
                    let s: f64 = x[(ch * batch + b) * hw..][..hw].iter().sum();
                    gap[ch * batch + b] = s / hw as f64;
                }
            }
            let mut feature = c.proj.forward(p, &gap, batch);
            feature.iter_mut().for_each(|v| *v = elu(*v));
            features[cfg.hidden * batch..].copy_from_slice(&feature);
            ContextCache {
                blocks,
                gap,
                feature,
            }
        });

        let mut hidden = self.layers.fc1.forward(p, &features, batch);
        hidden.iter_mut().for_each(|v| *v = elu(*v));
        let raw = self.layers.fc2.forward(p, &hidden, batch);
        ForwardPass {
            batch,
            motion_inputs,
            embedded,
            lstm,
            context,
            features,
            hidden,
            raw,
        }
    }

    /// Splits column `b` of the raw head output into a candidate set.
    pub fn decode(&self, pass: &ForwardPass, b: usize) -> CandidateSet {
        let cfg = &self.config;
        let stride = 2 * cfg.horizon + 1;
        let at = |r: usize| pass.raw[r * pass.batch + b];
        let trajectories = (0..cfg.modes)
            .map(|j| {
                (0..cfg.horizon)
                    .map(|k| {
                        [
                            cfg.output_scale * at(j * stride + 2 * k),
                            cfg.output_scale * at(j * stride + 2 * k + 1),
                        ]
                    })
                    .collect()
            })
            .collect();
        let logits: Vec<f64> = (0..cfg.modes).map(|j| at(j * stride + 2 * cfg.horizon)).collect();
        CandidateSet {
            trajectories,
            probs: softmax(&logits),
        }
    }

    /// Predicts the candidate set for one history and BEV.
    pub fn predict(&self, history: &MotionHistory, bev: &BevImage) -> Result<CandidateSet> {
        let input = self.encode_input(history, bev)?;
        Ok(self.predict_input(&input))
    }

    pub fn predict_input(&self, input: &ModelInput) -> CandidateSet {
        let pass = self.forward(&[input]);
        self.decode(&pass, 0)
    }

    /// Backpropagates `d_raw` (same layout as `pass.raw`) into a gradient vector.
    pub fn backward(&self, pass: &ForwardPass, d_raw: &[f64]) -> Vec<f64> {
        let cfg = &self.config;
        let p = &self.values;
        let batch = pass.batch;
        let mut g = vec![0.0; self.layout.len];

        let mut d_hidden = self
            .layers
            .fc2
            .backward(p, &mut g, &pass.hidden, d_raw, batch, true)
            .expect("dx requested");
        for (d, &h) in d_hidden.iter_mut().zip(&pass.hidden) {
            *d *= elu_grad_from_output(h);
        }
        let need_features = self.layers.motion.is_some() || self.layers.context.is_some();
        let d_features = self
            .layers
            .fc1
            .backward(p, &mut g, &pass.features, &d_hidden, batch, need_features);
        let Some(d_features) = d_features else {
            return g;
        };

        if let (Some(m), Some(cache)) = (&self.layers.motion, &pass.lstm) {
            let d_last = &d_features[..cfg.hidden * batch];
            let d_embedded = m.lstm.backward(p, &mut g, &pass.embedded, cache, d_last);
            for (x, dz) in pass.motion_inputs.iter().zip(&d_embedded) {
                m.embed.backward(p, &mut g, x, dz, batch, false);
            }
        }

        if let (Some(c), Some(cache)) = (&self.layers.context, &pass.context) {
            let mut d_feat = d_features[cfg.hidden * batch..].to_vec();
            for (d, &y) in d_feat.iter_mut().zip(&cache.feature) {
                *d *= elu_grad_from_output(y);
            }
            let d_gap = c
                .proj
                .backward(p, &mut g, &cache.gap, &d_feat, batch, true)
                .expect("dx requested");
            let last = cache.blocks.last().expect("blocks");
            let out_shape = c.blocks.last().expect("blocks").conv1.out_shape(last.input_shape);
            let hw = out_shape.h * out_shape.w;
            let mut d_out = vec![0.0; c.proj.n_in * batch * hw];
            for (i, &dg) in d_gap.iter().enumerate() {
                d_out[i * hw..(i + 1) * hw].fill(dg / hw as f64);
            }
            for (k, (blk, bc)) in c.blocks.iter().zip(&cache.blocks).enumerate().rev() {
                let mid = blk.conv1.out_shape(bc.input_shape);
                for (d, &y) in d_out.iter_mut().zip(&bc.out) {
                    *d *= elu_grad_from_output(y);
                }
                let want_dx = k > 0;
                let mut d_h1 = blk
                    .conv2
                    .backward(p, &mut g, &bc.cols2, &d_out, mid, true)
                    .expect("dx requested");
                for (d, &y) in d_h1.iter_mut().zip(&bc.h1) {
                    *d *= elu_grad_from_output(y);
                }
                let dx1 = blk.conv1.backward(p, &mut g, &bc.cols1, &d_h1, bc.input_shape, want_dx);
                let dxs = blk.skip.backward(p, &mut g, &bc.cols_skip, &d_out, bc.input_shape, want_dx);
                if let (Some(mut a), Some(b)) = (dx1, dxs) {
                    a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                    d_out = a;
                }
            }
        }
        g
    }

    /// Mean total loss over the batch and its gradient.
    pub fn loss_and_grad(
        &self,
        inputs: &[&ModelInput],
        targets: &[&[[f64; 2]]],
        alpha: f64,
        kind: RegressionKind,
    ) -> (f64, Vec<f64>) {
        let (sum, grad) = self.loss_and_grad_sum(inputs, targets, alpha, kind);
        let n = inputs.len() as f64;
        (sum / n, grad.into_iter().map(|v| v / n).collect())
    }

    /// Summed (not averaged) loss and gradient; used for chunked accumulation.
    pub fn loss_and_grad_sum(
        &self,
        inputs: &[&ModelInput],
        targets: &[&[[f64; 2]]],
        alpha: f64,
        kind: RegressionKind,
    ) -> (f64, Vec<f64>) {
        let cfg = &self.config;
        let pass = self.forward(inputs);
        let batch = inputs.len();
        let stride = 2 * cfg.horizon + 1;
        let mut d_raw = vec![0.0; cfg.output_len() * batch];
        let mut total = 0.0;
        for (b, gt) in targets.iter().enumerate() {
            let cands = self.decode(&pass, b);
            let lg = total_loss_grad(&cands, gt, alpha, kind);
            total += lg.loss;
            for j in 0..cfg.modes {
                for k in 0..cfg.horizon {
                    let [dx, dy] = lg.d_waypoints[j][k];
                    d_raw[(j * stride + 2 * k) * batch + b] = cfg.output_scale * dx;
                    d_raw[(j * stride + 2 * k + 1) * batch + b] = cfg.output_scale * dy;
                }
                d_raw[(j * stride + 2 * cfg.horizon) * batch + b] = lg.d_logits[j];
            }
        }
        (total, self.backward(&pass, &d_raw))
    }

    /// Mean total loss without gradients.
    pub fn loss(&self, inputs: &[&ModelInput], targets: &[&[[f64; 2]]], alpha: f64, kind: RegressionKind) -> f64 {
        let pass = self.forward(inputs);
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(b, gt)| crate::predictor::loss::total_loss_with(&self.decode(&pass, b), gt, alpha, kind))
            .sum();
        total / inputs.len() as f64
    }
}

const MODEL_MAGIC: &[u8; 8] = b"PTGCNN1\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

/// Architecture plus the ordered tensor list, stored as JSON in the file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    variant: Variant,
    grid: usize,
    tensors: Vec<ManifestEntry>,
}

impl ModelParams {
    fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            variant: self.variant,
            grid: self.grid,
            tensors: self
                .layout
                .tensors
                .iter()
                .map(|t| ManifestEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        }
    }

    /// Tensor names in manifest order.
    pub fn tensor_names(&self) -> Vec<&str> {
        self.layout.tensors.iter().map(|t| t.name.as_str()).collect()
    }

    /// Magic, `u32` manifest length, JSON manifest, then `f32` weights in manifest order.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest())?;
        w.write_all(MODEL_MAGIC)?;
        let len = u32::try_from(manifest.len()).map_err(|_| Error::format("model", "manifest too large"))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&manifest)?;
        for v in &self.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::format("model", "bad magic"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)?;
        let manifest: Manifest = serde_json::from_slice(&buf)?;
        let (layout, _) = build_layers(&manifest.config, manifest.variant);
        let expected: Vec<(&str, &[usize])> = layout
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        let stored: Vec<(&str, &[usize])> = manifest
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), t.shape.as_slice()))
            .collect();
        if expected != stored {
            return Err(Error::format("model", "tensor manifest does not match the architecture"));
        }
        let mut raw = vec![0u8; layout.len * 4];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::format("model", "trailing bytes after weights"));
        }
        ModelParams::from_parts(manifest.config, manifest.variant, manifest.grid, values)
    }
}
