use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{downscale, evaluate, EvalReport};
use crate::costmodel::{ratio_label, CostReport};
use crate::field::TidalField;
use crate::model::FmsRatio;
use crate::synth::FieldPair;
use crate::train::Checkpoint;
use crate::{Error, Result};

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationVariant {
    pub label: &'static str,
    /// Checkpoint file stem.
    pub stem: &'static str,
    pub atm: bool,
    pub pe: bool,
    pub fms: bool,
}

pub const ABLATION_VARIANTS: [AblationVariant; 4] = [
    AblationVariant {
        label: "Baseline",
        stem: "baseline",
        atm: false,
        pe: false,
        fms: false,
    },
    AblationVariant {
        label: "+ATM",
        stem: "atm",
        atm: true,
        pe: false,
        fms: false,
    },
    AblationVariant {
        label: "+ATM+PE",
        stem: "atm_pe",
        atm: true,
        pe: true,
        fms: false,
    },
    AblationVariant {
        label: "+ATM+PE+FMS",
        stem: "atm_pe_fms",
        atm: true,
        pe: true,
        fms: true,
    },
];

impl AblationVariant {
    pub fn from_flags(atm: bool, pe: bool, fms: bool) -> Option<Self> {
        ABLATION_VARIANTS
            .iter()
            .copied()
            .find(|v| (v.atm, v.pe, v.fms) == (atm, pe, fms))
    }

    pub fn checkpoint_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.tckp", self.stem))
    }

    fn matches(&self, ckpt: &Checkpoint) -> bool {
        (ckpt.train.atm_enabled, ckpt.model.use_pe, ckpt.model.fms_ratio.is_some()) == (self.atm, self.pe, self.fms)
    }
}

fn load_named(path: &Path, variant: &str) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::MissingCheckpoint {
            variant: variant.to_string(),
            path: path.display().to_string(),
        });
    }
    Checkpoint::load(path)
}

/// Scores a checkpoint's ASM output on `test` at the HR resolution.
/// Returns the report and the prediction in physical units.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, test: &FieldPair, label: &str) -> Result<(EvalReport, TidalField)> {
    let model = ckpt.model_f32()?;
    let (h, w) = (test.hr.height(), test.hr.width());
    let pred = downscale(&model, &ckpt.norm, &test.lr, h, w)?;
    let scale = h as f64 / test.lr.height() as f64;
    Ok((evaluate(&test.hr, &pred, label, scale)?, pred))
}

/// Evaluates the four ablation checkpoints found in `ckpt_dir`, in table
/// order. Predictions are written to `pred_dir/<stem>.tcds` when given.
pub fn ablation_harness(test: &FieldPair, ckpt_dir: &Path, pred_dir: Option<&Path>) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::with_capacity(ABLATION_VARIANTS.len());
    for v in &ABLATION_VARIANTS {
        let ckpt = load_named(&v.checkpoint_path(ckpt_dir), v.label)?;
        if !v.matches(&ckpt) {
            return Err(Error::config(format!(
                "checkpoint for variant `{}` was trained with atm={} pe={} fms={}",
                v.label,
                ckpt.train.atm_enabled,
                ckpt.model.use_pe,
                ckpt.model.fms_ratio.is_some()
            )));
        }
        let (report, pred) = evaluate_checkpoint(&ckpt, test, v.label)?;
        if let Some(dir) = pred_dir {
            pred.save(dir.join(format!("{}.tcds", v.stem)))?;
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn render_ablation_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("variant,velocity_mse,velocity_mae,level_mse,level_mae\n");
    for r in reports {
        writeln!(s, "{},{},{},{},{}", r.label, r.velocity.mse, r.velocity.mae, r.level.mse, r.level.mae).unwrap();
    }
    s
}

/// Split ratios compared by the trade-off table.
pub const TRADEOFF_RATIOS: [Option<FmsRatio>; 4] = [
    None,
    Some(FmsRatio::new(2, 1)),
    Some(FmsRatio::new(5, 1)),
    Some(FmsRatio::new(11, 1)),
];

/// `fms_none.tckp`, `fms_2_1.tckp`, ...
pub fn tradeoff_checkpoint_name(ratio: Option<FmsRatio>) -> String {
    match ratio {
        None => "fms_none.tckp".into(),
        Some(r) => format!("fms_{}_{}.tckp", r.velocity, r.level),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffRow {
    pub ratio: Option<FmsRatio>,
    pub cost: CostReport,
    pub report: EvalReport,
}

/// Joins cost and accuracy for each ratio's checkpoint in `ckpt_dir`, sorted
/// by inference cost, cheapest first.
pub fn fms_tradeoff_harness(test: &FieldPair, ckpt_dir: &Path, ratios: &[Option<FmsRatio>]) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let label = ratio_label(ratio);
        let ckpt = load_named(&ckpt_dir.join(tradeoff_checkpoint_name(ratio)), &label)?;
        if ckpt.model.fms_ratio != ratio {
            return Err(Error::config(format!(
                "checkpoint for ratio `{label}` was trained with ratio `{}`",
                ratio_label(ckpt.model.fms_ratio)
            )));
        }
        let cost = CostReport::for_config(&ckpt.model)?;
        let (report, _) = evaluate_checkpoint(&ckpt, test, &label)?;
        rows.push(TradeoffRow { ratio, cost, report });
    }
    rows.sort_by_key(|r| r.cost.test_total());
    Ok(rows)
}

pub fn render_tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut s = String::from("fms,test_gflops,train_gflops,test_flops,velocity_mse,velocity_mae,level_mse,level_mae\n");
    for r in rows {
        writeln!(
            s,
            "{},{:.3},{:.3},{},{},{},{},{}",
            ratio_label(r.ratio),
            r.cost.test_total() as f64 / 1e9,
            r.cost.train_total() as f64 / 1e9,
            r.cost.test_total(),
            r.report.velocity.mse,
            r.report.velocity.mae,
            r.report.level.mse,
            r.report.level.mae
        )
        .unwrap();
    }
    s
}
