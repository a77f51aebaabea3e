//! ADE / FDE evaluation.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_HORIZONS_S: [f64; 3] = [0.5, 1.0, 2.0];
pub const LARGE_FDE_THRESHOLDS_M: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

/// Mean and final displacement over the first `steps` waypoints.
pub fn ade_fde(pred: &[[f64; 2]], gt: &[[f64; 2]], steps: usize) -> (f64, f64) {
    assert!(steps >= 1 && steps <= pred.len() && steps <= gt.len(), "bad horizon");
    let errs: Vec<f64> = pred[..steps]
        .iter()
        .zip(&gt[..steps])
        .map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1]))
        .collect();
    (errs.iter().sum::<f64>() / steps as f64, errs[steps - 1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetrics {
    pub horizon_s: f64,
    pub ade: f64,
    pub fde: f64,
    /// Percentage of samples whose FDE exceeds each threshold.
    pub large_fde_pct: Vec<(f64, f64)>,
}

/// Averages over samples for each horizon. Fails if a horizon is longer
/// than the predictions.
pub fn evaluate(
    preds: &[Vec<[f64; 2]>],
    gts: &[Vec<[f64; 2]>],
    horizons_s: &[f64],
    dt_pred: f64,
) -> Result<Vec<HorizonMetrics>> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), gts.len())));
    }
    let t = preds.iter().chain(gts).map(Vec::len).min().unwrap_or(0);
    horizons_s
        .iter()
        .map(|&h| {
            let steps = (h / dt_pred).round() as usize;
            if steps == 0 || steps > t {
                return Err(Error::HorizonTooLong {
                    horizon_s: h,
                    max_s: t as f64 * dt_pred,
                });
            }
            let per: Vec<(f64, f64)> = preds.iter().zip(gts).map(|(p, g)| ade_fde(p, g, steps)).collect();
            let n = per.len() as f64;
            let large_fde_pct = LARGE_FDE_THRESHOLDS_M
                .iter()
                .map(|&th| (th, 100.0 * per.iter().filter(|(_, f)| *f > th).count() as f64 / n))
                .collect();
            Ok(HorizonMetrics {
                horizon_s: h,
                ade: per.iter().map(|p| p.0).sum::<f64>() / n,
                fde: per.iter().map(|p| p.1).sum::<f64>() / n,
                large_fde_pct,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Row<'a> {
    model: &'a str,
    horizon_s: f64,
    ade: f64,
    fde: f64,
    fde_gt_1_0_pct: f64,
    fde_gt_1_5_pct: f64,
    fde_gt_2_0_pct: f64,
    fde_gt_2_5_pct: f64,
    fde_gt_3_0_pct: f64,
}

/// One CSV row per (model, horizon).
pub fn write_metrics_csv<W: Write>(w: W, tables: &[(String, Vec<HorizonMetrics>)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (model, rows) in tables {
        for m in rows {
            let pct = |k: usize| m.large_fde_pct.get(k).map_or(f64::NAN, |p| p.1);
            out.serialize(Row {
                model,
                horizon_s: m.horizon_s,
                ade: m.ade,
                fde: m.fde,
                fde_gt_1_0_pct: pct(0),
                fde_gt_1_5_pct: pct(1),
                fde_gt_2_0_pct: pct(2),
                fde_gt_2_5_pct: pct(3),
                fde_gt_3_0_pct: pct(4),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}
