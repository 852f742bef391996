//! Masked error metrics, the bicubic baseline, comparison harnesses and
//! grayscale rendering.

mod bicubic;
mod harness;
mod render;

pub use bicubic::{bicubic_upsample, keys_kernel};
pub use harness::{
    ablation_harness, evaluate_checkpoint, fms_tradeoff_harness, render_ablation_csv, render_tradeoff_csv,
    tradeoff_checkpoint_name, AblationVariant, TradeoffRow, ABLATION_VARIANTS, TRADEOFF_RATIOS,
};
pub use render::{compare_gray, render_gray, GrayImage};

use std::fmt::Write as _;

use serde::Serialize;

use crate::field::{normalize, resample_mask_nearest, NormStats, TidalField, CHANNELS, LEVEL, U, V};
use crate::model::Model;
use crate::nn::Tensor;
use crate::{Error, Result};

fn masked_mean(gt: &[f32], pred: &[f32], mask: &[bool], f: impl Fn(f64) -> f64) -> Result<f64> {
    if gt.len() != pred.len() || mask.is_empty() || !gt.len().is_multiple_of(mask.len()) {
        return Err(Error::shape(format!(
            "ground truth {}, prediction {} and mask {} lengths are incompatible",
            gt.len(),
            pred.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((&g, &p), &m) in gt.iter().zip(pred).zip(mask.iter().cycle()) {
        if m {
            sum += f(g as f64 - p as f64);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidCells);
    }
    Ok(sum / count as f64)
}

/// Mean squared error over sea elements. `mask` repeats over leading planes.
pub fn mse(gt: &[f32], pred: &[f32], mask: &[bool]) -> Result<f64> {
    masked_mean(gt, pred, mask, |d| d * d)
}

/// Mean absolute error over sea elements. `mask` repeats over leading planes.
pub fn mae(gt: &[f32], pred: &[f32], mask: &[bool]) -> Result<f64> {
    masked_mean(gt, pred, mask, f64::abs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub mse: f64,
    pub mae: f64,
}

/// Velocity (U and V pooled) and level errors of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub scale: f64,
    pub n_sea_points: usize,
    pub velocity: GroupMetrics,
    pub level: GroupMetrics,
}

fn channel_values(field: &TidalField, channels: &[usize]) -> Vec<f32> {
    (0..field.timesteps())
        .flat_map(|t| channels.iter().flat_map(move |&c| field.plane(t, c).iter().copied()))
        .collect()
}

/// Scores `pred` against `gt` on the sea cells of `gt`.
pub fn evaluate(gt: &TidalField, pred: &TidalField, label: &str, scale: f64) -> Result<EvalReport> {
    if gt.shape() != pred.shape() {
        return Err(Error::shape(format!(
            "prediction shape {:?} does not match ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let group = |channels: &[usize]| -> Result<GroupMetrics> {
        let (g, p) = (channel_values(gt, channels), channel_values(pred, channels));
        Ok(GroupMetrics {
            mse: mse(&g, &p, gt.mask())?,
            mae: mae(&g, &p, gt.mask())?,
        })
    };
    Ok(EvalReport {
        label: label.to_string(),
        scale,
        n_sea_points: gt.sea_cells() * gt.timesteps(),
        velocity: group(&[U, V])?,
        level: group(&[LEVEL])?,
    })
}

pub const REPORT_CSV_HEADER: &str = "label,scale,n_sea_points,velocity_mse,velocity_mae,level_mse,level_mae";

pub(crate) fn report_csv_row(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.label, r.scale, r.n_sea_points, r.velocity.mse, r.velocity.mae, r.level.mse, r.level.mae
    )
}

/// Reports as CSV with raw (unscaled) metric values.
pub fn render_reports_csv(reports: &[EvalReport]) -> String {
    let mut s = format!("{REPORT_CSV_HEADER}\n");
    for r in reports {
        writeln!(s, "{}", report_csv_row(r)).unwrap();
    }
    s
}

/// ASM prediction of `lr` on an `out_h x out_w` lattice, in physical units.
///
/// The output mask is the nearest-neighbor resampling of the LR mask.
pub fn downscale(model: &Model<f32>, stats: &NormStats, lr: &TidalField, out_h: usize, out_w: usize) -> Result<TidalField> {
    let (h, w) = (lr.height(), lr.width());
    let norm = normalize(lr, stats)?;
    let mut data = Vec::with_capacity(lr.timesteps() * CHANNELS * out_h * out_w);
    for t in 0..lr.timesteps() {
        let input = Tensor::new(&[1, CHANNELS, h, w], norm.frame(t).to_vec())?;
        let feat = model.features(input)?;
        let pred = model.predict_grid(&feat, 0, out_h, out_w)?;
        for (c, plane) in pred.chunks(out_h * out_w).enumerate() {
            data.extend(plane.iter().map(|&v| stats.denormalize_value(c, v)));
        }
    }
    let mask = resample_mask_nearest(lr.mask(), h, w, out_h, out_w);
    let mpc = lr.meters_per_cell * h as f64 / out_h as f64;
    TidalField::new(lr.timesteps(), out_h, out_w, data, mask, lr.extent, mpc)
}
