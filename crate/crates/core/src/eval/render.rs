use std::io::Write;
use std::path::Path;

use crate::field::{TidalField, CHANNELS};
use crate::{Error, Result};

const SEPARATOR: usize = 2;

/// An 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_pgm())?;
        Ok(())
    }
}

fn check(field: &TidalField, channel: usize, t: usize) -> Result<()> {
    if channel >= CHANNELS || t >= field.timesteps() {
        return Err(Error::config(format!(
            "channel {channel} / timestep {t} out of range for a field with T={}",
            field.timesteps()
        )));
    }
    Ok(())
}

/// Range of the finite sea values over `panels`.
fn sea_range(panels: &[(&TidalField, usize, usize)]) -> Option<(f32, f32)> {
    panels
        .iter()
        .flat_map(|&(f, c, t)| {
            f.plane(t, c)
                .iter()
                .zip(f.mask())
                .filter(|(v, &m)| m && v.is_finite())
                .map(|(&v, _)| v)
        })
        .fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
}

/// Sea values map linearly onto `1..=255` so that black is reserved for land
/// and non-finite values. A flat field renders as 128.
fn shade(v: f32, range: Option<(f32, f32)>) -> u8 {
    match range {
        Some(_) if !v.is_finite() => 0,
        Some((lo, hi)) if hi > lo => (1.0 + ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 254.0).round() as u8,
        _ => 128,
    }
}

fn draw(field: &TidalField, channel: usize, t: usize, range: Option<(f32, f32)>) -> Vec<u8> {
    field
        .plane(t, channel)
        .iter()
        .zip(field.mask())
        .map(|(&v, &m)| if m { shade(v, range) } else { 0 })
        .collect()
}

/// Min-max normalized grayscale view of one channel at one timestep.
pub fn render_gray(field: &TidalField, channel: usize, t: usize) -> Result<GrayImage> {
    check(field, channel, t)?;
    let range = sea_range(&[(field, channel, t)]);
    Ok(GrayImage {
        width: field.width(),
        height: field.height(),
        pixels: draw(field, channel, t, range),
    })
}

/// Panels side by side on a shared color scale, separated by white bars.
pub fn compare_gray(panels: &[&TidalField], channel: usize, t: usize) -> Result<GrayImage> {
    let first = panels.first().ok_or_else(|| Error::config("comparison needs at least one panel"))?;
    let height = first.height();
    for p in panels {
        check(p, channel, t)?;
        if p.height() != height {
            return Err(Error::shape(format!(
                "comparison panels must share a height, got {} and {height}",
                p.height()
            )));
        }
    }
    let keyed: Vec<(&TidalField, usize, usize)> = panels.iter().map(|&p| (p, channel, t)).collect();
    let range = sea_range(&keyed);
    let width = panels.iter().map(|p| p.width()).sum::<usize>() + SEPARATOR * (panels.len() - 1);
    let mut pixels = vec![255u8; width * height];
    let mut x0 = 0;
    for p in panels {
        let tile = draw(p, channel, t, range);
        for y in 0..height {
            pixels[y * width + x0..][..p.width()].copy_from_slice(&tile[y * p.width()..(y + 1) * p.width()]);
        }
        x0 += p.width() + SEPARATOR;
    }
    Ok(GrayImage { width, height, pixels })
}
