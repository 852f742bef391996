use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use tidedown::costmodel::{cost_table, render_table_csv, render_table_text};
use tidedown::eval::{
    ablation_harness, bicubic_upsample, compare_gray, downscale, evaluate, fms_tradeoff_harness,
    render_ablation_csv, render_gray, render_reports_csv, render_tradeoff_csv, TRADEOFF_RATIOS,
};
use tidedown::field::{NormStats, ScaleFactor, TidalField, LEVEL, U, V};
use tidedown::model::{parse_fms, ModelConfig};
use tidedown::synth::{generate, split_dataset, FieldPair, SynthSpec};
use tidedown::train::{epoch_csv, loss_csv, validate, Checkpoint, Dataset, Trainer};

use crate::config::{load_pair, load_tcds, split_file, write_json, RunConfig, SPLITS};
use crate::{Channel, EvalArgs, FlopsArgs, HarnessArgs, InferArgs, Method, RenderArgs, SynthArgs, TableFormat, TrainArgs};

#[derive(Serialize)]
struct SynthRecord<'a> {
    spec: &'a SynthSpec,
    split: [f64; 3],
    timesteps: [usize; 3],
}

fn write_dataset(spec: &SynthSpec, split: [f64; 3], dir: &Path) -> Result<()> {
    spec.validate()?;
    let pair = generate(spec)?;
    let parts = split_dataset(&pair, split)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, part) in SPLITS.iter().zip(&parts) {
        for (res, field) in [("lr", &part.lr), ("hr", &part.hr)] {
            let path = split_file(dir, name, res);
            field.save(&path).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let record = SynthRecord {
        spec,
        split,
        timesteps: [0, 1, 2].map(|i| parts[i].hr.timesteps()),
    };
    write_json(&dir.join("synth.json"), &record)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        n_constituents: a.n_constituents,
        land_fraction_target: a.land_fraction,
        amplitude_scale: a.amplitude_scale,
        ..SynthSpec::new(a.seed, a.hr_height, a.hr_width, a.scale, a.timesteps)
    };
    let split: [f64; 3] = a.split.try_into().map_err(|_| anyhow::anyhow!("--split needs three fractions"))?;
    write_dataset(&spec, split, &a.out)?;
    eprintln!("wrote dataset to {}", a.out.display());
    Ok(())
}

fn append(path: &Path, text: &str) -> Result<()> {
    OpenOptions::new()
        .append(true)
        .open(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .with_context(|| format!("writing {}", path.display()))
}

/// CSV body without its header line.
fn body(csv: &str) -> &str {
    csv.split_once('\n').map_or("", |(_, rest)| rest)
}

/// Writes through a temporary file so an interrupted run never leaves a
/// truncated checkpoint behind.
fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tckp.tmp");
    ckpt.save(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) -> Result<()> {
    if a.no_atm {
        cfg.train.atm_enabled = false;
    }
    if a.no_pe {
        cfg.model.use_pe = false;
    }
    if let Some(f) = &a.fms {
        cfg.model.fms_ratio = parse_fms(f)?;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = &a.name {
        cfg.paths.name = n.clone();
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()
}

fn resume_trainer(cfg: &RunConfig, path: &Path, stats: &NormStats) -> Result<Trainer> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
    let mut stored = ckpt.train.clone();
    stored.epochs = cfg.train.epochs;
    if ckpt.model != cfg.model || stored != cfg.train {
        bail!("checkpoint {} was trained with a different configuration", path.display());
    }
    if &ckpt.norm != stats {
        bail!("checkpoint {} was trained on different data", path.display());
    }
    let mut trainer = Trainer::from_checkpoint(ckpt)?;
    trainer.config.epochs = cfg.train.epochs;
    Ok(trainer)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    apply_overrides(&mut cfg, &a)?;
    let data_dir = &cfg.paths.data_dir;
    if !split_file(data_dir, "train", "hr").is_file() {
        match &cfg.synth {
            Some(spec) => write_dataset(spec, cfg.split, data_dir)?,
            None => bail!("no training data in {} and no synth section to generate it", data_dir.display()),
        }
    }
    let train_pair = load_pair(data_dir, "train")?;
    let val_pair = if split_file(data_dir, "val", "hr").is_file() {
        Some(load_pair(data_dir, "val")?)
    } else {
        None
    };
    let stats = NormStats::from_sea_cells(&train_pair.hr)?;
    let train_data = Dataset::new(&train_pair, &stats)?;
    let val_data = val_pair.as_ref().map(|p| Dataset::new(p, &stats)).transpose()?;

    fs::create_dir_all(&cfg.paths.out_dir).with_context(|| format!("creating {}", cfg.paths.out_dir.display()))?;
    let ckpt_path = cfg.out_file("tckp");
    let (loss_path, epochs_path) = (cfg.out_file("loss.csv"), cfg.out_file("epochs.csv"));
    let mut trainer = if a.resume {
        resume_trainer(&cfg, &ckpt_path, &stats)?
    } else {
        fs::write(&loss_path, loss_csv(&[])).with_context(|| format!("writing {}", loss_path.display()))?;
        fs::write(&epochs_path, epoch_csv(&[])).with_context(|| format!("writing {}", epochs_path.display()))?;
        Trainer::new(cfg.model.clone(), cfg.train.clone(), stats)?
    };
    write_json(&cfg.out_file("config.json"), &cfg)?;

    let clock = Instant::now();
    while !trainer.is_finished() {
        let mut steps = Vec::new();
        let mut rec = trainer.run_epoch(&train_data, &clock, &mut steps)?;
        if let Some(v) = &val_data {
            rec.val = Some(validate(&trainer.model, v)?);
        }
        save_checkpoint(&trainer.checkpoint(), &ckpt_path)?;
        append(&loss_path, body(&loss_csv(&steps)))?;
        append(&epochs_path, body(&epoch_csv(&[rec])))?;
        let val = rec.val.map_or_else(String::new, |v| format!(" val_mse {:.6}", v.mse));
        eprintln!(
            "epoch {}/{} loss_asm {:.6}{val} ({:.1}s)",
            rec.epoch,
            trainer.config.epochs,
            rec.mean_loss_asm,
            clock.elapsed().as_secs_f64()
        );
    }
    eprintln!("wrote {}", ckpt_path.display());
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let scale = ScaleFactor::new(a.scale)?;
    let lr = load_tcds(&a.input)?;
    let out = match a.method {
        Method::Bicubic => bicubic_upsample(&lr, scale)?,
        Method::Asm => {
            let path = a.checkpoint.as_ref().context("--checkpoint is required for --method asm")?;
            let ckpt = Checkpoint::load(path).with_context(|| format!("reading {}", path.display()))?;
            let model = ckpt.model_f32()?;
            downscale(&model, &ckpt.norm, &lr, scale.apply(lr.height()), scale.apply(lr.width()))?
        }
    };
    out.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {}x{}x{} to {}", out.timesteps(), out.height(), out.width(), a.out.display());
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let (pred, gt) = (load_tcds(&a.pred)?, load_tcds(&a.gt)?);
    let report = evaluate(&gt, &pred, &a.label, a.scale)?;
    emit(a.out.as_deref(), &render_reports_csv(&[report]))
}

fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let cfg = if value.get("model").is_some() {
        serde_json::from_value::<RunConfig>(value).map(|r| r.model)
    } else {
        serde_json::from_value::<ModelConfig>(value)
    };
    let cfg = cfg.map_err(|e| tidedown::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn flops(a: FlopsArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => load_model_config(p)?,
        None => ModelConfig::full_size(),
    };
    let rows = cost_table(&base)?;
    if rows.is_empty() {
        bail!("no tabulated FMS ratio divides {} channels", base.channels);
    }
    let text = match a.format {
        TableFormat::Text => render_table_text(&rows),
        TableFormat::Csv => render_table_csv(&rows),
    };
    emit(a.out.as_deref(), &text)
}

fn load_test(dir: &Path) -> Result<FieldPair> {
    load_pair(dir, "test")
}

pub fn ablate(a: HarnessArgs) -> Result<()> {
    let test = load_test(&a.data)?;
    if let Some(d) = &a.pred_dir {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let reports = ablation_harness(&test, &a.checkpoints, a.pred_dir.as_deref())?;
    emit(a.out.as_deref(), &render_ablation_csv(&reports))
}

pub fn tradeoff(a: HarnessArgs) -> Result<()> {
    let test = load_test(&a.data)?;
    let rows = fms_tradeoff_harness(&test, &a.checkpoints, &TRADEOFF_RATIOS)?;
    emit(a.out.as_deref(), &render_tradeoff_csv(&rows))
}

pub fn render(a: RenderArgs) -> Result<()> {
    let channel = match a.channel {
        Channel::U => U,
        Channel::V => V,
        Channel::Level => LEVEL,
    };
    let field = load_tcds(&a.field)?;
    let image = if a.compare.is_empty() {
        render_gray(&field, channel, a.t)?
    } else {
        let others = a.compare.iter().map(|p| load_tcds(p)).collect::<Result<Vec<TidalField>>>()?;
        let panels: Vec<&TidalField> = std::iter::once(&field).chain(&others).collect();
        compare_gray(&panels, channel, a.t)?
    };
    image.save_pgm(&a.out).with_context(|| format!("writing {}", a.out.display()))
}
