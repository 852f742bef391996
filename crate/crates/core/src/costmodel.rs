//! Analytic multiply-accumulate accounting.
//!
//! One MAC counts as one FLOP. Biases, activations, the positional-encoding
//! addition, residual additions and ensemble blending are not counted. Under
//! this convention the counts match what [`crate::nn::Graph::macs`] records
//! for the same forward pass.

use std::fmt::Write as _;

use serde::Serialize;

use crate::model::{FmsRatio, ModelConfig, ENSEMBLE};
use crate::Result;

/// Feature extractor: head conv, `2 * B` block convs and the tail conv.
pub fn flops_fe(cfg: &ModelConfig) -> u64 {
    let c = cfg.channels as u64;
    let hw = (cfg.lr_height * cfg.lr_width) as u64;
    let b = cfg.n_blocks as u64;
    9 * 3 * c * hw + b * 2 * 9 * c * c * hw + 9 * c * c * hw
}

/// MACs of one ensemble sample through every branch MLP.
pub fn asm_macs_per_sample(cfg: &ModelConfig) -> Result<u64> {
    let hidden = cfg.n_mlp_hidden as u64;
    Ok(cfg
        .branches()?
        .iter()
        .map(|b| {
            let k = b.width as u64;
            let out = b.out_channels as u64;
            (9 * k + 2) * k + (hidden - 1) * k * k + k * out
        })
        .sum())
}

/// Coordinate MLP over `hr_pixels` queries with `ensemble` samples each.
pub fn flops_asm(cfg: &ModelConfig, hr_pixels: u64, ensemble: u64) -> Result<u64> {
    Ok(asm_macs_per_sample(cfg)? * ensemble * hr_pixels)
}

/// Auxiliary head: channel-expanding conv at LR, output conv at HR.
pub fn flops_atm(cfg: &ModelConfig) -> Result<u64> {
    let hw = (cfg.lr_height * cfg.lr_width) as u64;
    let r2 = (cfg.atm_scale * cfg.atm_scale) as u64;
    Ok(cfg
        .branches()?
        .iter()
        .map(|b| {
            let k = b.width as u64;
            let out = b.out_channels as u64;
            9 * k * (k * r2) * hw + 9 * k * out * hw * r2
        })
        .sum())
}

/// Per-component MAC counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub fe_flops: u64,
    pub asm_flops: u64,
    pub atm_flops: u64,
}

impl CostReport {
    /// Costs with the ASM queried on the auxiliary head's output grid.
    pub fn for_config(cfg: &ModelConfig) -> Result<Self> {
        let (hh, hw) = cfg.hr_dims();
        Self::with_queries(cfg, (hh * hw) as u64)
    }

    pub fn with_queries(cfg: &ModelConfig, hr_pixels: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(CostReport {
            fe_flops: flops_fe(cfg),
            asm_flops: flops_asm(cfg, hr_pixels, ENSEMBLE as u64)?,
            atm_flops: flops_atm(cfg)?,
        })
    }

    /// Inference cost: feature extractor plus coordinate MLP.
    pub fn test_total(&self) -> u64 {
        self.fe_flops + self.asm_flops
    }

    /// Training cost: inference plus the auxiliary head.
    pub fn train_total(&self) -> u64 {
        self.test_total() + self.atm_flops
    }
}

/// Relative savings of `a` over `b`, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reduction {
    pub test_pct: f64,
    pub train_pct: f64,
}

pub fn reduction_report(a: &CostReport, b: &CostReport) -> Reduction {
    let pct = |x: u64, y: u64| (1.0 - x as f64 / y as f64) * 100.0;
    Reduction {
        test_pct: pct(a.test_total(), b.test_total()),
        train_pct: pct(a.train_total(), b.train_total()),
    }
}

/// The split ratios compared in the cost table, in table order.
pub const TABLE_RATIOS: [Option<FmsRatio>; 4] = [
    None,
    Some(FmsRatio::new(11, 1)),
    Some(FmsRatio::new(5, 1)),
    Some(FmsRatio::new(2, 1)),
];

pub fn ratio_label(r: Option<FmsRatio>) -> String {
    r.map_or_else(|| "None".to_string(), |r| r.to_string())
}

/// One cost-table row per ratio in [`TABLE_RATIOS`] that divides the
/// configured channel count.
pub fn cost_table(base: &ModelConfig) -> Result<Vec<(Option<FmsRatio>, CostReport)>> {
    TABLE_RATIOS
        .iter()
        .filter(|&&r| base.clone().with_fms(r).validate().is_ok())
        .map(|&r| Ok((r, CostReport::for_config(&base.clone().with_fms(r))?)))
        .collect()
}

fn giga(v: u64) -> f64 {
    v as f64 / 1e9
}

/// Plain-text table with columns FE, ASM, Test, +ATM, Train in G.
pub fn render_table_text(rows: &[(Option<FmsRatio>, CostReport)]) -> String {
    let mut s = String::new();
    writeln!(s, "{:<6} {:>9} {:>9} {:>9} {:>9} {:>9}", "FMS", "FE", "ASM", "Test", "+ATM", "Train").unwrap();
    for (r, c) in rows {
        writeln!(
            s,
            "{:<6} {:>9.2} {:>9.2} {:>9.2} {:>+9.2} {:>9.2}",
            ratio_label(*r),
            giga(c.fe_flops),
            giga(c.asm_flops),
            giga(c.test_total()),
            giga(c.atm_flops),
            giga(c.train_total())
        )
        .unwrap();
    }
    s
}

/// CSV with exact MAC counts and G-rounded columns.
pub fn render_table_csv(rows: &[(Option<FmsRatio>, CostReport)]) -> String {
    let mut s = String::from("fms,fe_g,asm_g,test_g,atm_g,train_g,fe_macs,asm_macs,atm_macs\n");
    for (r, c) in rows {
        writeln!(
            s,
            "{},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{}",
            ratio_label(*r),
            giga(c.fe_flops),
            giga(c.asm_flops),
            giga(c.test_total()),
            giga(c.atm_flops),
            giga(c.train_total()),
            c.fe_flops,
            c.asm_flops,
            c.atm_flops
        )
        .unwrap();
    }
    s
}
