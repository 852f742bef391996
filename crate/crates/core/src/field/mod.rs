//! Gridded tidal fields and the coordinate conventions shared by every
//! resampling path.
//!
//! All coordinates are `(y, x)` pairs in `[-1, 1]`, with cell `i` of an axis
//! of length `n` centered at `2 (i + 0.5) / n - 1`.

mod infill;
mod tcds;

pub use infill::{infill_nearest_planes, nearest_sea_sources};
pub use tcds::{read_tcds, write_tcds, TCDS_MAGIC, TCDS_VERSION};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of channels in every field: U velocity, V velocity, water level.
pub const CHANNELS: usize = 3;

/// Channel indices.
pub const U: usize = 0;
pub const V: usize = 1;
pub const LEVEL: usize = 2;

/// Geographic bounds in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Extent {
    pub fn new(lat_min: f64, lat_max: f64, lon_min: f64, lon_max: f64) -> Result<Self> {
        let extent = Extent {
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        };
        extent.validate()?;
        Ok(extent)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lon_min < self.lon_max) {
            return Err(Error::InvalidField(format!(
                "extent must satisfy lat_min < lat_max and lon_min < lon_max, got {self:?}"
            )));
        }
        Ok(())
    }
}

impl Default for Extent {
    fn default() -> Self {
        Extent {
            lat_min: 34.1458,
            lat_max: 35.1875,
            lon_min: 125.5416,
            lon_max: 126.5416,
        }
    }
}

/// A timestamped 3-channel grid with a land mask.
///
/// `data` is laid out `[T, 3, H, W]` row-major. `mask[y * W + x]` is `true`
/// for sea cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TidalField {
    timesteps: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    mask: Vec<bool>,
    pub extent: Extent,
    pub meters_per_cell: f64,
}

impl TidalField {
    pub fn new(
        timesteps: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        mask: Vec<bool>,
        extent: Extent,
        meters_per_cell: f64,
    ) -> Result<Self> {
        if timesteps < 1 || height < 2 || width < 2 {
            return Err(Error::InvalidField(format!(
                "need T >= 1, H >= 2, W >= 2; got T={timesteps} H={height} W={width}"
            )));
        }
        if data.len() != timesteps * CHANNELS * height * width {
            return Err(Error::InvalidField(format!(
                "data length {} does not match [{timesteps}, 3, {height}, {width}]",
                data.len()
            )));
        }
        if mask.len() != height * width {
            return Err(Error::InvalidField(format!(
                "mask length {} does not match {height}x{width}",
                mask.len()
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::NoValidCells);
        }
        extent.validate()?;
        if !(meters_per_cell > 0.0 && meters_per_cell.is_finite()) {
            return Err(Error::InvalidField(format!(
                "meters_per_cell must be positive, got {meters_per_cell}"
            )));
        }
        Ok(TidalField {
            timesteps,
            height,
            width,
            data,
            mask,
            extent,
            meters_per_cell,
        })
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[T, 3, H, W]`.
    pub fn shape(&self) -> [usize; 4] {
        [self.timesteps, CHANNELS, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn sea_cells(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// One `[H, W]` plane.
    pub fn plane(&self, t: usize, channel: usize) -> &[f32] {
        let n = self.plane_len();
        let start = (t * CHANNELS + channel) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, t: usize, channel: usize) -> &mut [f32] {
        let n = self.plane_len();
        let start = (t * CHANNELS + channel) * n;
        &mut self.data[start..start + n]
    }

    /// The `[3, H, W]` block of one timestep.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = CHANNELS * self.plane_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn value(&self, t: usize, channel: usize, y: usize, x: usize) -> f32 {
        self.plane(t, channel)[y * self.width + x]
    }

    /// Copy of timesteps `start..end`.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.timesteps {
            return Err(Error::shape(format!(
                "time slice {start}..{end} out of range for T={}",
                self.timesteps
            )));
        }
        let n = CHANNELS * self.plane_len();
        TidalField::new(
            end - start,
            self.height,
            self.width,
            self.data[start * n..end * n].to_vec(),
            self.mask.clone(),
            self.extent,
            self.meters_per_cell,
        )
    }

    /// Replaces every land cell by the value of its Euclidean-nearest sea cell.
    ///
    /// Ties resolve to the smaller row, then the smaller column.
    pub fn infill_nearest(&self) -> Result<Self> {
        let mut out = self.clone();
        let planes = self.timesteps * CHANNELS;
        infill_nearest_planes(&mut out.data, planes, self.height, self.width, &self.mask)?;
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Normalized query coordinates, one `(y, x)` row per query.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateGrid {
    coords: Vec<[f64; 2]>,
}

impl CoordinateGrid {
    pub fn new(coords: Vec<[f64; 2]>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::shape("coordinate grid must hold at least one point"));
        }
        if let Some(c) = coords.iter().find(|c| !in_unit_range(c[0]) || !in_unit_range(c[1])) {
            return Err(Error::CoordinateOutOfRange(c[0], c[1]));
        }
        Ok(CoordinateGrid { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_slice(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn into_inner(self) -> Vec<[f64; 2]> {
        self.coords
    }
}

pub(crate) fn in_unit_range(v: f64) -> bool {
    (-1.0..=1.0).contains(&v)
}

/// An upsampling factor, real-valued and at least 1.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ScaleFactor(f64);

impl ScaleFactor {
    pub fn new(value: f64) -> Result<Self> {
        if !(value >= 1.0 && value.is_finite()) {
            return Err(Error::config(format!("scale must be a finite real >= 1, got {value}")));
        }
        Ok(ScaleFactor(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Target grid size `round(s * n)`.
    pub fn apply(self, n: usize) -> usize {
        ((n as f64) * self.0).round().max(1.0) as usize
    }
}

/// Center of cell `i` on an axis of `n` cells.
pub fn cell_center(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

/// Index of the source cell containing the center of target cell `i` when
/// an axis of `n` cells is resampled to `m` cells.
pub fn nearest_source(i: usize, m: usize, n: usize) -> usize {
    (((cell_center(i, m) + 1.0) / 2.0 * n as f64).floor() as usize).min(n - 1)
}

/// Nearest-neighbor resampling of an `h x w` mask to `oh x ow`.
pub fn resample_mask_nearest(mask: &[bool], h: usize, w: usize, oh: usize, ow: usize) -> Vec<bool> {
    let cols: Vec<usize> = (0..ow).map(|x| nearest_source(x, ow, w)).collect();
    (0..oh)
        .flat_map(|y| {
            let row = nearest_source(y, oh, h) * w;
            cols.iter().map(move |&x| mask[row + x])
        })
        .collect()
}

/// Row-major lattice of the `height * width` cell centers.
pub fn cell_center_coords(height: usize, width: usize) -> Result<CoordinateGrid> {
    if height == 0 || width == 0 {
        return Err(Error::shape(format!("grid must be non-empty, got {height}x{width}")));
    }
    let ys: Vec<f64> = (0..height).map(|i| cell_center(i, height)).collect();
    let xs: Vec<f64> = (0..width).map(|i| cell_center(i, width)).collect();
    let coords = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| [y, x]))
        .collect();
    Ok(CoordinateGrid { coords })
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; CHANNELS],
    pub std: [f64; CHANNELS],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; CHANNELS],
            std: [1.0; CHANNELS],
        }
    }

    /// Statistics over the sea cells of every timestep. Land values are infill
    /// artifacts and are skipped.
    pub fn from_sea_cells(field: &TidalField) -> Result<Self> {
        let mut mean = [0.0; CHANNELS];
        let mut std = [0.0; CHANNELS];
        for c in 0..CHANNELS {
            let values: Vec<f64> = (0..field.timesteps())
                .flat_map(|t| {
                    field
                        .plane(t, c)
                        .iter()
                        .zip(field.mask())
                        .filter(|(_, &m)| m)
                        .map(|(&v, _)| v as f64)
                })
                .collect();
            let n = values.len() as f64;
            let mu = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            mean[c] = mu;
            // A flat channel would divide by zero.
            std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        let stats = NormStats { mean, std };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.std.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("normalization std must be > 0, got {s}")));
        }
        Ok(())
    }

    pub fn normalize_value(&self, channel: usize, v: f32) -> f32 {
        ((v as f64 - self.mean[channel]) / self.std[channel]) as f32
    }

    pub fn denormalize_value(&self, channel: usize, v: f32) -> f32 {
        (v as f64 * self.std[channel] + self.mean[channel]) as f32
    }
}

fn map_channels(field: &TidalField, stats: &NormStats, f: fn(&NormStats, usize, f32) -> f32) -> Result<TidalField> {
    stats.validate()?;
    let mut out = field.clone();
    for t in 0..field.timesteps() {
        for c in 0..CHANNELS {
            for v in out.plane_mut(t, c) {
                *v = f(stats, c, *v);
            }
        }
    }
    Ok(out)
}

/// `(v - mean_c) / std_c` per channel.
pub fn normalize(field: &TidalField, stats: &NormStats) -> Result<TidalField> {
    map_channels(field, stats, NormStats::normalize_value)
}

/// Inverse of [`normalize`].
pub fn denormalize(field: &TidalField, stats: &NormStats) -> Result<TidalField> {
    map_channels(field, stats, NormStats::denormalize_value)
}
