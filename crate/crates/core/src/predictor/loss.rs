//! Winner-takes-all multimodal trajectory loss.
//!
//! Only the candidate closest to the ground truth (summed per-step Euclidean
//! distance) receives a regression penalty; the mode probabilities are trained
//! with cross-entropy toward that winner.

use serde::{Deserialize, Serialize};

/// `N` candidate trajectories of `T` waypoints plus their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub probs: Vec<f64>,
}

impl CandidateSet {
    pub fn modes(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    /// Index of the most probable candidate; ties go to the smaller index.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (j, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = j;
            }
        }
        best
    }

    pub fn best(&self) -> &[[f64; 2]] {
        &self.trajectories[self.best_index()]
    }
}

/// Per-step distance used by the regression term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    /// Plain Euclidean norm.
    #[default]
    Euclidean,
    /// Huber-smoothed norm with transition at `delta` metres.
    Huber { delta: f64 },
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Summed per-step distance between one trajectory and the ground truth.
pub fn trajectory_distance(traj: &[[f64; 2]], gt: &[[f64; 2]]) -> f64 {
    traj.iter().zip(gt).map(|(&w, &g)| dist(w, g)).sum()
}

/// Candidate minimizing the summed distance; ties go to the smallest index.
pub fn winner_index(cands: &CandidateSet, gt: &[[f64; 2]]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, traj) in cands.trajectories.iter().enumerate() {
        let d = trajectory_distance(traj, gt);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

fn step_penalty(d: f64, kind: RegressionKind) -> f64 {
    match kind {
        RegressionKind::Euclidean => d,
        RegressionKind::Huber { delta } => {
            if d <= delta {
                0.5 * d * d / delta
            } else {
                d - 0.5 * delta
            }
        }
    }
}

fn step_penalty_grad(d: f64, kind: RegressionKind) -> f64 {
    match kind {
        RegressionKind::Euclidean => 1.0,
        RegressionKind::Huber { delta } => (d / delta).min(1.0),
    }
}

/// Regression penalty of the winning candidate.
pub fn regression_loss(cands: &CandidateSet, gt: &[[f64; 2]]) -> f64 {
    regression_loss_with(cands, gt, RegressionKind::Euclidean)
}

pub fn regression_loss_with(cands: &CandidateSet, gt: &[[f64; 2]], kind: RegressionKind) -> f64 {
    let j = winner_index(cands, gt);
    cands.trajectories[j]
        .iter()
        .zip(gt)
        .map(|(&w, &g)| step_penalty(dist(w, g), kind))
        .sum()
}

pub const PROB_FLOOR: f64 = 1e-12;

/// Cross-entropy of the winner's probability.
pub fn classification_loss(cands: &CandidateSet, winner: usize) -> f64 {
    -cands.probs[winner].max(PROB_FLOOR).ln()
}

pub fn total_loss(cands: &CandidateSet, gt: &[[f64; 2]], alpha: f64) -> f64 {
    total_loss_with(cands, gt, alpha, RegressionKind::Euclidean)
}

pub fn total_loss_with(
    cands: &CandidateSet,
    gt: &[[f64; 2]],
    alpha: f64,
    kind: RegressionKind,
) -> f64 {
    let j = winner_index(cands, gt);
    regression_loss_with(cands, gt, kind) + alpha * classification_loss(cands, j)
}

/// Loss value and its gradient with respect to waypoints and mode logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub winner: usize,
    /// `d loss / d waypoint`, shaped like `cands.trajectories`.
    pub d_waypoints: Vec<Vec<[f64; 2]>>,
    /// `d loss / d logit` given `probs = softmax(logits)`.
    pub d_logits: Vec<f64>,
}

pub fn total_loss_grad(
    cands: &CandidateSet,
    gt: &[[f64; 2]],
    alpha: f64,
    kind: RegressionKind,
) -> LossGrad {
    let j = winner_index(cands, gt);
    let mut d_waypoints: Vec<Vec<[f64; 2]>> = cands
        .trajectories
        .iter()
        .map(|t| vec![[0.0; 2]; t.len()])
        .collect();
    let mut reg = 0.0;
    for (i, (&w, &g)) in cands.trajectories[j].iter().zip(gt).enumerate() {
        let d = dist(w, g);
        reg += step_penalty(d, kind);
        if d > 0.0 {
            let s = step_penalty_grad(d, kind) / d;
            d_waypoints[j][i] = [s * (w[0] - g[0]), s * (w[1] - g[1])];
        }
    }
    let pj = cands.probs[j];
    let d_logits = if pj >= PROB_FLOOR {
        cands
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| alpha * (p - if k == j { 1.0 } else { 0.0 }))
            .collect()
    } else {
        vec![0.0; cands.probs.len()]
    };
    LossGrad {
        loss: reg + alpha * -pj.max(PROB_FLOOR).ln(),
        winner: j,
        d_waypoints,
        d_logits,
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
