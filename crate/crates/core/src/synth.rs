//! Deterministic synthetic tidal fields.
//!
//! Water level is a sum of harmonic constituents modulated by a smooth random
//! depth surface; velocities follow the negative level gradient scaled by a
//! depth factor. The LR field is the block mean of the HR field.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{cell_center, Extent, TidalField, CHANNELS, LEVEL, U, V};
use crate::{Error, Result};

const N_BUMPS: usize = 8;
const OMEGA_RANGE: (f64, f64) = (0.3, 1.2);
const VELOCITY_GAIN: f64 = 0.1;
const DIFF_STEP: f64 = 1e-4;
const HR_METERS_PER_CELL: f64 = 300.0;

fn default_constituents() -> usize {
    3
}

fn default_land_fraction() -> f64 {
    0.2
}

fn default_amplitude() -> f64 {
    1.0
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub hr_height: usize,
    pub hr_width: usize,
    /// HR / LR size ratio; must divide both HR dimensions.
    pub scale: usize,
    pub timesteps: usize,
    #[serde(default = "default_constituents")]
    pub n_constituents: usize,
    #[serde(default = "default_land_fraction")]
    pub land_fraction_target: f64,
    /// Multiplies every constituent amplitude. Zero gives a still sea.
    #[serde(default = "default_amplitude")]
    pub amplitude_scale: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, hr_height: usize, hr_width: usize, scale: usize, timesteps: usize) -> Self {
        SynthSpec {
            seed,
            hr_height,
            hr_width,
            scale,
            timesteps,
            n_constituents: default_constituents(),
            land_fraction_target: default_land_fraction(),
            amplitude_scale: default_amplitude(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 || !self.hr_height.is_multiple_of(self.scale) || !self.hr_width.is_multiple_of(self.scale) {
            return Err(Error::config(format!(
                "scale {} must divide the HR size {}x{}",
                self.scale, self.hr_height, self.hr_width
            )));
        }
        if self.hr_height / self.scale < 2 || self.hr_width / self.scale < 2 {
            return Err(Error::config("LR grid must be at least 2x2"));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps must be positive"));
        }
        if self.n_constituents == 0 {
            return Err(Error::config("n_constituents must be positive"));
        }
        if !(0.0..=0.6).contains(&self.land_fraction_target) {
            return Err(Error::config(format!(
                "land_fraction_target must lie in [0, 0.6], got {}",
                self.land_fraction_target
            )));
        }
        if !(self.amplitude_scale >= 0.0 && self.amplitude_scale.is_finite()) {
            return Err(Error::config("amplitude_scale must be finite and non-negative"));
        }
        Ok(())
    }
}

/// An LR input with its HR ground truth over the same timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub lr: TidalField,
    pub hr: TidalField,
}

struct Bump {
    y: f64,
    x: f64,
    inv_two_var: f64,
    amp: f64,
}

struct Constituent {
    amp: f64,
    omega: f64,
    phase0: f64,
    gy: f64,
    gx: f64,
    wobble: f64,
    fy: f64,
    fx: f64,
    psi: f64,
}

impl Constituent {
    fn phase(&self, y: f64, x: f64) -> f64 {
        self.phase0 + self.gy * y + self.gx * x + self.wobble * (self.fy * y + self.fx * x + self.psi).sin()
    }
}

struct Surfaces {
    bumps: Vec<Bump>,
    constituents: Vec<Constituent>,
    depth_lo: f64,
    depth_hi: f64,
}

impl Surfaces {
    fn draw(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let bumps = (0..N_BUMPS)
            .map(|_| {
                let sigma: f64 = rng.random_range(0.25..0.6);
                Bump {
                    y: rng.random_range(-0.9..0.9),
                    x: rng.random_range(-0.9..0.9),
                    inv_two_var: 1.0 / (2.0 * sigma * sigma),
                    amp: rng.random_range(0.5..1.5),
                }
            })
            .collect();
        let constituents = (0..spec.n_constituents)
            .map(|k| Constituent {
                amp: spec.amplitude_scale * rng.random_range(0.3..1.0) / (k + 1) as f64,
                omega: rng.random_range(OMEGA_RANGE.0..OMEGA_RANGE.1),
                phase0: rng.random_range(0.0..std::f64::consts::TAU),
                gy: rng.random_range(-6.0..6.0),
                gx: rng.random_range(-6.0..6.0),
                wobble: rng.random_range(0.2..0.8),
                fy: rng.random_range(-3.0..3.0),
                fx: rng.random_range(-3.0..3.0),
                psi: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let mut s = Surfaces {
            bumps,
            constituents,
            depth_lo: 0.0,
            depth_hi: 1.0,
        };
        let (h, w) = (spec.hr_height, spec.hr_width);
        let grid = (0..h * w).map(|i| s.bathymetry(cell_center(i / w, h), cell_center(i % w, w)));
        let (lo, hi) = grid.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b), hi.max(b)));
        s.depth_lo = lo;
        s.depth_hi = hi;
        s
    }

    fn bathymetry(&self, y: f64, x: f64) -> f64 {
        0.2 + self
            .bumps
            .iter()
            .map(|b| b.amp * (-((y - b.y).powi(2) + (x - b.x).powi(2)) * b.inv_two_var).exp())
            .sum::<f64>()
    }

    /// Depth factor in `[0.2, 1]`.
    fn depth(&self, y: f64, x: f64) -> f64 {
        let span = (self.depth_hi - self.depth_lo).max(f64::MIN_POSITIVE);
        0.2 + 0.8 * ((self.bathymetry(y, x) - self.depth_lo) / span).clamp(0.0, 1.0)
    }

    // The envelope vanishes on the domain edge, which keeps the spatial mean
    // of the level gradient close to zero.
    fn level(&self, y: f64, x: f64, t: f64) -> f64 {
        let b = self.bathymetry(y, x) * (1.0 - y * y) * (1.0 - x * x);
        self.constituents
            .iter()
            .map(|c| c.amp * b * (c.omega * t + c.phase(y, x)).cos())
            .sum()
    }
}

/// Land where the bathymetry falls below its `fraction` quantile.
fn land_mask(surf: &Surfaces, h: usize, w: usize, fraction: f64) -> Vec<bool> {
    let depth: Vec<f64> = (0..h * w)
        .map(|i| surf.bathymetry(cell_center(i / w, h), cell_center(i % w, w)))
        .collect();
    let n_land = (fraction * (h * w) as f64).floor() as usize;
    if n_land == 0 {
        return vec![true; h * w];
    }
    let mut order: Vec<usize> = (0..h * w).collect();
    order.sort_by(|&a, &b| depth[a].total_cmp(&depth[b]).then(a.cmp(&b)));
    let mut mask = vec![true; h * w];
    for &i in &order[..n_land.min(h * w - 1)] {
        mask[i] = false;
    }
    mask
}

/// LR cell is sea when at least half of its HR block is sea.
pub fn downsample_mask(mask: &[bool], h: usize, w: usize, scale: usize) -> Vec<bool> {
    let (lh, lw) = (h / scale, w / scale);
    (0..lh * lw)
        .map(|i| {
            let (ly, lx) = (i / lw, i % lw);
            let sea = (0..scale * scale)
                .filter(|k| mask[(ly * scale + k / scale) * w + lx * scale + k % scale])
                .count();
            2 * sea >= scale * scale
        })
        .collect()
}

/// Mean of each `scale x scale` block of every plane.
pub fn block_mean(data: &[f32], planes: usize, h: usize, w: usize, scale: usize) -> Vec<f32> {
    let (lh, lw) = (h / scale, w / scale);
    let inv = 1.0 / (scale * scale) as f64;
    let mut out = vec![0.0f32; planes * lh * lw];
    for p in 0..planes {
        let src = &data[p * h * w..(p + 1) * h * w];
        for ly in 0..lh {
            for lx in 0..lw {
                let mut acc = 0.0f64;
                for dy in 0..scale {
                    let row = &src[(ly * scale + dy) * w + lx * scale..][..scale];
                    acc += row.iter().map(|&v| v as f64).sum::<f64>();
                }
                out[(p * lh + ly) * lw + lx] = (acc * inv) as f32;
            }
        }
    }
    out
}

/// Builds an LR/HR pair from `spec`. Equal specs give bitwise-equal output.
pub fn generate(spec: &SynthSpec) -> Result<FieldPair> {
    spec.validate()?;
    let surf = Surfaces::draw(spec);
    let (h, w, s) = (spec.hr_height, spec.hr_width, spec.scale);
    let plane = h * w;

    let mut data = vec![0.0f32; spec.timesteps * CHANNELS * plane];
    data.par_chunks_mut(CHANNELS * plane).enumerate().for_each(|(t, frame)| {
        let t = t as f64;
        for i in 0..plane {
            let (y, x) = (cell_center(i / w, h), cell_center(i % w, w));
            let d = surf.depth(y, x);
            let dx = (surf.level(y, x + DIFF_STEP, t) - surf.level(y, x - DIFF_STEP, t)) / (2.0 * DIFF_STEP);
            let dy = (surf.level(y + DIFF_STEP, x, t) - surf.level(y - DIFF_STEP, x, t)) / (2.0 * DIFF_STEP);
            frame[U * plane + i] = (-VELOCITY_GAIN * dx * d) as f32;
            frame[V * plane + i] = (-VELOCITY_GAIN * dy * d) as f32;
            frame[LEVEL * plane + i] = surf.level(y, x, t) as f32;
        }
    });

    let extent = Extent::default();
    let hr_mask = land_mask(&surf, h, w, spec.land_fraction_target);
    let hr = TidalField::new(spec.timesteps, h, w, data, hr_mask, extent, HR_METERS_PER_CELL)?.infill_nearest()?;

    let (lh, lw) = (h / s, w / s);
    let lr_mask = downsample_mask(hr.mask(), h, w, s);
    let lr_data = block_mean(hr.data(), spec.timesteps * CHANNELS, h, w, s);
    let lr = TidalField::new(spec.timesteps, lh, lw, lr_data, lr_mask, extent, HR_METERS_PER_CELL * s as f64)?
        .infill_nearest()?;
    Ok(FieldPair { lr, hr })
}

/// Timestep counts of a contiguous train/val/test split.
///
/// Validation and test sizes are floored; the remainder goes to training.
pub fn split_sizes(timesteps: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    // tolerate fractions like 0.1 that are not exact in binary
    let floor = |f: f64| (timesteps as f64 * f + 1e-9).floor() as usize;
    let (val, test) = (floor(fractions[1]), floor(fractions[2]));
    let train = timesteps.saturating_sub(val + test);
    if train == 0 || val == 0 || test == 0 {
        return Err(Error::TooFewTimesteps(format!(
            "T={timesteps} with fractions {fractions:?} leaves an empty split"
        )));
    }
    Ok([train, val, test])
}

/// Splits a pair in time order into train, validation and test pairs.
pub fn split_dataset(pair: &FieldPair, fractions: [f64; 3]) -> Result<[FieldPair; 3]> {
    let t = pair.hr.timesteps();
    if pair.lr.timesteps() != t {
        return Err(Error::shape(format!(
            "LR has {} timesteps but HR has {t}",
            pair.lr.timesteps()
        )));
    }
    let [a, b, _] = split_sizes(t, fractions)?;
    let part = |s: usize, e: usize| -> Result<FieldPair> {
        Ok(FieldPair {
            lr: pair.lr.slice_time(s, e)?,
            hr: pair.hr.slice_time(s, e)?,
        })
    };
    Ok([part(0, a)?, part(a, a + b)?, part(a + b, t)?])
}
