//! `.tcds` dataset files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "TCDS"  u32 version=1  u32 T  u32 H  u32 W  u32 C=3
//! f64 lat_min  f64 lat_max  f64 lon_min  f64 lon_max  f64 meters_per_cell
//! H*W mask bytes (1 = sea, 0 = land)
//! T*C*H*W f32 values in [T, C, H, W] order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Extent, TidalField, CHANNELS};
use crate::{Error, Result};

pub const TCDS_MAGIC: &[u8; 4] = b"TCDS";
pub const TCDS_VERSION: u32 = 1;

const KIND: &str = "tcds";

pub fn write_tcds<W: Write>(field: &TidalField, mut out: W) -> Result<()> {
    out.write_all(TCDS_MAGIC)?;
    for v in [
        TCDS_VERSION,
        field.timesteps() as u32,
        field.height() as u32,
        field.width() as u32,
        CHANNELS as u32,
    ] {
        out.write_all(&v.to_le_bytes())?;
    }
    let e = field.extent;
    for v in [e.lat_min, e.lat_max, e.lon_min, e.lon_max, field.meters_per_cell] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mask: Vec<u8> = field.mask().iter().map(|&m| m as u8).collect();
    out.write_all(&mask)?;
    let mut buf = Vec::with_capacity(field.data().len() * 4);
    for v in field.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(KIND, format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(input: &mut R, what: &str) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b, what)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_tcds<R: Read>(mut input: R) -> Result<TidalField> {
    let mut magic = [0u8; 4];
    read_exact(&mut input, &mut magic, "magic")?;
    if &magic != TCDS_MAGIC {
        return Err(Error::format(KIND, format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut input, "version")?;
    if version != TCDS_VERSION {
        return Err(Error::format(KIND, format!("unsupported version {version}")));
    }
    let t = read_u32(&mut input, "T")? as usize;
    let h = read_u32(&mut input, "H")? as usize;
    let w = read_u32(&mut input, "W")? as usize;
    let c = read_u32(&mut input, "C")? as usize;
    if c != CHANNELS {
        return Err(Error::format(KIND, format!("expected 3 channels, found {c}")));
    }
    let extent = Extent {
        lat_min: read_f64(&mut input, "extent")?,
        lat_max: read_f64(&mut input, "extent")?,
        lon_min: read_f64(&mut input, "extent")?,
        lon_max: read_f64(&mut input, "extent")?,
    };
    let meters_per_cell = read_f64(&mut input, "meters_per_cell")?;

    let cells = h
        .checked_mul(w)
        .ok_or_else(|| Error::format(KIND, "grid size overflows"))?;
    let values = t
        .checked_mul(c)
        .and_then(|n| n.checked_mul(cells))
        .ok_or_else(|| Error::format(KIND, "payload size overflows"))?;

    let mut mask_bytes = vec![0u8; cells];
    read_exact(&mut input, &mut mask_bytes, "mask")?;
    let mask = mask_bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::format(KIND, format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<bool>>>()?;

    let mut raw = vec![0u8; values * 4];
    read_exact(&mut input, &mut raw, "values")?;
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::format(KIND, "trailing bytes after payload"));
    }

    TidalField::new(t, h, w, data, mask, extent, meters_per_cell)
}

impl TidalField {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        write_tcds(self, BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        read_tcds(BufReader::new(file))
    }
}
