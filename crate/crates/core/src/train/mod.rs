//! Joint ASM + ATM training with masked L1 supervision.
//!
//! Every step draws its randomness from a ChaCha stream keyed by
//! `(epoch, step)`, so a run resumed from a checkpoint replays exactly the
//! batches and coordinate samples of an uninterrupted run.

mod checkpoint;

pub use checkpoint::{Checkpoint, TCKP_MAGIC, TCKP_VERSION};

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::{cell_center, NormStats, TidalField, CHANNELS};
use crate::model::{plan_queries, Model, ModelConfig};
use crate::nn::{adam_step, Graph, OptimState, Tensor};
use crate::synth::FieldPair;
use crate::{Error, Result};

/// Number of HR points supervising the ASM per batch item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SamplesRepr", into = "SamplesRepr")]
pub enum CoordSamples {
    Count(usize),
    /// Every sea cell.
    Full,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SamplesRepr {
    Count(usize),
    Name(String),
}

impl TryFrom<SamplesRepr> for CoordSamples {
    type Error = String;

    fn try_from(r: SamplesRepr) -> std::result::Result<Self, String> {
        match r {
            SamplesRepr::Count(0) => Err("coord_samples must be >= 1".into()),
            SamplesRepr::Count(n) => Ok(CoordSamples::Count(n)),
            SamplesRepr::Name(s) if s == "full" => Ok(CoordSamples::Full),
            SamplesRepr::Name(s) => Err(format!("coord_samples must be a count or \"full\", got {s:?}")),
        }
    }
}

impl From<CoordSamples> for SamplesRepr {
    fn from(c: CoordSamples) -> Self {
        match c {
            CoordSamples::Count(n) => SamplesRepr::Count(n),
            CoordSamples::Full => SamplesRepr::Name("full".into()),
        }
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub coord_samples: CoordSamples,
    pub seed: u64,
    pub atm_enabled: bool,
    pub w_asm: f64,
    pub w_atm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr0: 1e-4,
            decay_epoch: 25,
            decay_factor: 10.0,
            batch_size: 1,
            coord_samples: CoordSamples::Count(2048),
            seed: 0,
            atm_enabled: true,
            w_asm: 1.0,
            w_atm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.decay_epoch == 0 || self.decay_epoch > self.epochs {
            return bad(format!("decay_epoch must lie in 1..={}, got {}", self.epochs, self.decay_epoch));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return bad(format!("decay_factor must be positive, got {}", self.decay_factor));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.coord_samples == CoordSamples::Count(0) {
            return bad("coord_samples must be >= 1".into());
        }
        if !(self.w_asm >= 0.0 && self.w_atm >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}

/// Step decay: `lr0` before `decay_epoch`, `lr0 / decay_factor` from it on.
/// Epochs count from 1.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr0
    } else {
        cfg.lr0 / cfg.decay_factor
    }
}

fn check_mask_broadcast(n: usize, target: usize, mask: usize) -> Result<usize> {
    if n != target || mask == 0 || !n.is_multiple_of(mask) {
        return Err(Error::shape(format!(
            "prediction {n}, target {target} and mask {mask} lengths are incompatible"
        )));
    }
    Ok(n / mask)
}

/// Mean of `|pred - target|` over sea elements; `mask` repeats over leading
/// planes.
pub fn masked_l1(pred: &[f32], target: &[f32], mask: &[bool]) -> Result<f64> {
    check_mask_broadcast(pred.len(), target.len(), mask.len())?;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((p, t), &m) in pred.iter().zip(target).zip(mask.iter().cycle()) {
        if m {
            sum += (*p as f64 - *t as f64).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidCells);
    }
    Ok(sum / count as f64)
}

/// Normalized tensors for one split, ready for batching.
#[derive(Debug, Clone)]
pub struct Dataset {
    lr: Vec<f32>,
    hr: Vec<f32>,
    hr_mask: Vec<bool>,
    timesteps: usize,
    lr_dims: (usize, usize),
    hr_dims: (usize, usize),
}

impl Dataset {
    pub fn new(pair: &FieldPair, stats: &NormStats) -> Result<Self> {
        let t = pair.hr.timesteps();
        if pair.lr.timesteps() != t {
            return Err(Error::shape(format!(
                "LR has {} timesteps but HR has {t}",
                pair.lr.timesteps()
            )));
        }
        Ok(Dataset {
            lr: crate::field::normalize(&pair.lr, stats)?.data().to_vec(),
            hr: crate::field::normalize(&pair.hr, stats)?.data().to_vec(),
            hr_mask: pair.hr.mask().to_vec(),
            timesteps: t,
            lr_dims: (pair.lr.height(), pair.lr.width()),
            hr_dims: (pair.hr.height(), pair.hr.width()),
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        self.lr_dims
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        self.hr_dims
    }

    pub fn hr_mask(&self) -> &[bool] {
        &self.hr_mask
    }

    pub fn lr_frame(&self, t: usize) -> &[f32] {
        let n = CHANNELS * self.lr_dims.0 * self.lr_dims.1;
        &self.lr[t * n..(t + 1) * n]
    }

    pub fn hr_frame(&self, t: usize) -> &[f32] {
        let n = CHANNELS * self.hr_dims.0 * self.hr_dims.1;
        &self.hr[t * n..(t + 1) * n]
    }

    /// LR frames `ts` stacked into `[N, 3, h, w]`.
    pub fn lr_batch(&self, ts: &[usize]) -> Result<Tensor<f32>> {
        let (h, w) = self.lr_dims;
        Tensor::new(&[ts.len(), CHANNELS, h, w], ts.iter().flat_map(|&t| self.lr_frame(t).to_vec()).collect())
    }
}

/// Sea-cell centers of an `h x w` grid and their row-major indices, `q` of
/// them drawn uniformly without replacement (all of them, in order, when `q`
/// covers every sea cell).
pub fn sample_sea_cells(mask: &[bool], h: usize, w: usize, q: CoordSamples, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let sea: Vec<usize> = (0..h * w).filter(|&i| mask[i]).collect();
    match q {
        CoordSamples::Count(n) if n < sea.len() => index::sample(rng, sea.len(), n).iter().map(|k| sea[k]).collect(),
        _ => sea,
    }
}

/// Coordinates and exact ground truth `[Q, 3]` of sampled HR sea cells.
pub fn sample_train_coords(
    hr: &TidalField,
    t: usize,
    q: CoordSamples,
    rng: &mut ChaCha8Rng,
) -> (Vec<[f64; 2]>, Vec<f32>) {
    let (h, w) = (hr.height(), hr.width());
    let cells = sample_sea_cells(hr.mask(), h, w, q, rng);
    let coords = cells.iter().map(|&i| [cell_center(i / w, h), cell_center(i % w, w)]).collect();
    let targets = cells
        .iter()
        .flat_map(|&i| (0..CHANNELS).map(move |c| hr.plane(t, c)[i]))
        .collect();
    (coords, targets)
}

/// Inputs of one optimization step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, h, w]`.
    pub lr: Tensor<f32>,
    /// `(batch item, [y, x])` per supervised point.
    pub queries: Vec<(usize, [f64; 2])>,
    /// `[Q, 3]` row-major.
    pub targets: Vec<f32>,
    /// `[N, 3, H, W]` ground truth for the ATM, with its sea mask.
    pub hr: Tensor<f32>,
    pub hr_mask: Vec<bool>,
}

impl Batch {
    /// Batch over timesteps `ts` with coordinates drawn from `rng`.
    pub fn sample(data: &Dataset, ts: &[usize], q: CoordSamples, rng: &mut ChaCha8Rng) -> Result<Self> {
        let (hh, hw) = data.hr_dims;
        let plane = hh * hw;
        let mut queries = Vec::new();
        let mut targets = Vec::new();
        for (item, &t) in ts.iter().enumerate() {
            let frame = data.hr_frame(t);
            for i in sample_sea_cells(&data.hr_mask, hh, hw, q, rng) {
                queries.push((item, [cell_center(i / hw, hh), cell_center(i % hw, hw)]));
                targets.extend((0..CHANNELS).map(|c| frame[c * plane + i]));
            }
        }
        let hr = ts.iter().flat_map(|&t| data.hr_frame(t).to_vec()).collect();
        Ok(Batch {
            lr: data.lr_batch(ts)?,
            queries,
            targets,
            hr: Tensor::new(&[ts.len(), CHANNELS, hh, hw], hr)?,
            hr_mask: data.hr_mask.clone(),
        })
    }
}

/// Loss values of one step, before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub asm: f64,
    /// `None` when the ATM is disabled.
    pub atm: Option<f64>,
}

/// Forward, backward and one Adam update at learning rate `lr`.
pub fn train_step(
    model: &mut Model<f32>,
    optim: &mut OptimState<f32>,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepLoss> {
    let [n, _, h, w] = batch.lr.dims4("LR batch")?;
    let mut g = Graph::new();
    let x = g.input(batch.lr.clone());
    let feat = model.fe_forward(&mut g, x)?;

    let plan = plan_queries(h, w, &batch.queries)?;
    let pred = model.asm_forward(&mut g, feat, &plan)?;
    let target = g.input(Tensor::new(&[batch.queries.len(), CHANNELS], batch.targets.clone())?);
    let asm = g.masked_l1(pred, target, vec![true; batch.targets.len()])?;
    let mut loss = g.scale(asm, cfg.w_asm as f32);

    let mut atm = None;
    if cfg.atm_enabled {
        let out = model.atm_forward(&mut g, feat)?;
        if g.value(out).shape() != batch.hr.shape() {
            return Err(Error::shape(format!(
                "ATM output {:?} does not match HR target {:?}; atm_scale must equal the data scale",
                g.value(out).shape(),
                batch.hr.shape()
            )));
        }
        let target = g.input(batch.hr.clone());
        let mask: Vec<bool> = batch.hr_mask.iter().copied().cycle().take(n * CHANNELS * batch.hr_mask.len()).collect();
        let l = g.masked_l1(out, target, mask)?;
        atm = Some(l);
        let weighted = g.scale(l, cfg.w_atm as f32);
        loss = g.add(loss, weighted)?;
    }

    let result = StepLoss {
        asm: g.value(asm).data()[0] as f64,
        atm: atm.map(|v| g.value(v).data()[0] as f64),
    };
    let store = model.params_mut();
    store.zero_grads();
    g.backward(loss, store)?;
    optim.lr = lr;
    adam_step(store, optim);
    Ok(result)
}

/// Validation errors in normalized units, pooled over sea cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValScores {
    pub mse: f64,
    pub velocity_mse: f64,
    pub level_mse: f64,
}

/// ASM predictions on the full HR lattice of every timestep in `data`.
/// Returns `[T, 3, H, W]` in normalized units.
pub fn predict_dataset(model: &Model<f32>, data: &Dataset) -> Result<Vec<f32>> {
    let (hh, hw) = data.hr_dims;
    let mut out = Vec::with_capacity(data.timesteps * CHANNELS * hh * hw);
    for t in 0..data.timesteps {
        let feat = model.features(data.lr_batch(&[t])?)?;
        out.extend(model.predict_grid(&feat, 0, hh, hw)?);
    }
    Ok(out)
}

/// Sea-cell MSE of ASM predictions at the data's HR resolution.
pub fn validate(model: &Model<f32>, data: &Dataset) -> Result<ValScores> {
    let pred = predict_dataset(model, data)?;
    let plane = data.hr_dims.0 * data.hr_dims.1;
    let mut sums = [0.0f64; CHANNELS];
    let mut count = 0usize;
    for t in 0..data.timesteps {
        let gt = data.hr_frame(t);
        let p = &pred[t * CHANNELS * plane..(t + 1) * CHANNELS * plane];
        for (c, sum) in sums.iter_mut().enumerate() {
            for i in (0..plane).filter(|&i| data.hr_mask[i]) {
                let d = (p[c * plane + i] - gt[c * plane + i]) as f64;
                *sum += d * d;
            }
        }
        count += data.hr_mask.iter().filter(|&&m| m).count();
    }
    let n = count as f64;
    Ok(ValScores {
        mse: sums.iter().sum::<f64>() / (3.0 * n),
        velocity_mse: (sums[0] + sums[1]) / (2.0 * n),
        level_mse: sums[2] / n,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global optimizer step, counting from 1.
    pub step: u64,
    pub loss_asm: f64,
    pub loss_atm: Option<f64>,
    pub lr: f64,
    pub wall_seconds: f64,
}

/// Per-epoch summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss_asm: f64,
    pub mean_loss_atm: Option<f64>,
    pub val: Option<ValScores>,
}

pub const LOSS_CSV_HEADER: &str = "epoch,step,loss_asm,loss_atm,lr,wall_seconds";
pub const VAL_CSV_HEADER: &str = "epoch,mean_loss_asm,mean_loss_atm,val_mse,val_mse_velocity,val_mse_level";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

pub fn loss_csv(rows: &[StepRecord]) -> String {
    let mut s = format!("{LOSS_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{:.3}",
            r.epoch,
            r.step,
            r.loss_asm,
            opt(r.loss_atm),
            r.lr,
            r.wall_seconds
        )
        .unwrap();
    }
    s
}

pub fn epoch_csv(rows: &[EpochRecord]) -> String {
    let mut s = format!("{VAL_CSV_HEADER}\n");
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch,
            r.mean_loss_asm,
            opt(r.mean_loss_atm),
            opt(r.val.map(|v| v.mse)),
            opt(r.val.map(|v| v.velocity_mse)),
            opt(r.val.map(|v| v.level_mse))
        )
        .unwrap();
    }
    s
}

const STREAM_SALT: u64 = 0x7469_6465_646f_776e;

fn step_rng(seed: u64, epoch: usize, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    rng.set_stream(((epoch as u64) << 32) | step as u64);
    rng
}

/// Model, optimizer and normalization owned by one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub optim: OptimState<f32>,
    pub config: TrainConfig,
    pub stats: NormStats,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model_cfg: ModelConfig, cfg: TrainConfig, stats: NormStats) -> Result<Self> {
        model_cfg.validate()?;
        cfg.validate()?;
        stats.validate()?;
        let model = Model::new(model_cfg, cfg.seed)?;
        let optim = OptimState::new(model.params(), cfg.lr0);
        Ok(Trainer {
            model,
            optim,
            config: cfg,
            stats,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.into_trainer()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_trainer(self)
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    /// Trains one epoch over `data` in a seeded shuffled order.
    pub fn run_epoch(&mut self, data: &Dataset, clock: &Instant, log: &mut Vec<StepRecord>) -> Result<EpochRecord> {
        if self.is_finished() {
            return Err(Error::config(format!("all {} epochs already ran", self.config.epochs)));
        }
        let epoch = self.epoch + 1;
        let lr = lr_schedule(&self.config, epoch);
        let mut order: Vec<usize> = (0..data.timesteps).collect();
        order.shuffle(&mut step_rng(self.config.seed, epoch, 0));

        let (mut sum_asm, mut sum_atm, mut steps) = (0.0, 0.0, 0usize);
        for (i, ts) in order.chunks(self.config.batch_size).enumerate() {
            let mut rng = step_rng(self.config.seed, epoch, i + 1);
            let batch = Batch::sample(data, ts, self.config.coord_samples, &mut rng)?;
            let loss = train_step(&mut self.model, &mut self.optim, &batch, &self.config, lr)?;
            sum_asm += loss.asm;
            sum_atm += loss.atm.unwrap_or(0.0);
            steps += 1;
            log.push(StepRecord {
                epoch,
                step: self.optim.step,
                loss_asm: loss.asm,
                loss_atm: loss.atm,
                lr,
                wall_seconds: clock.elapsed().as_secs_f64(),
            });
        }
        self.epoch = epoch;
        Ok(EpochRecord {
            epoch,
            mean_loss_asm: sum_asm / steps as f64,
            mean_loss_atm: self.config.atm_enabled.then_some(sum_atm / steps as f64),
            val: None,
        })
    }

    /// Runs `n` more epochs (capped at the configured total), validating on
    /// `val` after each one.
    pub fn fit(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        n: usize,
        log: &mut Vec<StepRecord>,
    ) -> Result<Vec<EpochRecord>> {
        let clock = Instant::now();
        let mut records = Vec::new();
        for _ in 0..n {
            if self.is_finished() {
                break;
            }
            let mut rec = self.run_epoch(train, &clock, log)?;
            if let Some(v) = val {
                rec.val = Some(validate(&self.model, v)?);
            }
            records.push(rec);
        }
        Ok(records)
    }
}
