//! `.tckp` checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "TCKP" | u32 version | u32 n | n bytes of JSON {model, train, norm}
//! | u64 P | P x f32 parameters | u32 completed epochs
//! | u64 adam step | f64 lr | f64 beta1 | f64 beta2 | f64 eps
//! | P x f32 first moment | P x f32 second moment
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::field::NormStats;
use crate::model::{Model, ModelConfig};
use crate::nn::OptimState;
use crate::{Error, Result};

pub const TCKP_MAGIC: &[u8; 4] = b"TCKP";
pub const TCKP_VERSION: u32 = 1;

const KIND: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    norm: NormStats,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub norm: NormStats,
    pub params: Vec<f32>,
    pub epoch: u32,
    pub adam_step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
}

impl Checkpoint {
    pub(super) fn from_trainer(t: &Trainer) -> Self {
        let o = &t.optim;
        Checkpoint {
            model: t.model.config().clone(),
            train: t.config.clone(),
            norm: t.stats,
            params: t.model.params().flat_values(),
            epoch: t.epoch as u32,
            adam_step: o.step,
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            first_moment: o.first_moment.concat(),
            second_moment: o.second_moment.concat(),
        }
    }

    pub(super) fn into_trainer(self) -> Result<Trainer> {
        let model = self.model_f32()?;
        let split = |flat: &[f32]| -> Vec<Vec<f32>> {
            let mut off = 0;
            model
                .params()
                .entries()
                .iter()
                .map(|e| {
                    let v = flat[off..off + e.values.len()].to_vec();
                    off += e.values.len();
                    v
                })
                .collect()
        };
        let optim = OptimState {
            first_moment: split(&self.first_moment),
            second_moment: split(&self.second_moment),
            step: self.adam_step,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        };
        Ok(Trainer {
            model,
            optim,
            config: self.train,
            stats: self.norm,
            epoch: self.epoch as usize,
        })
    }

    /// The network stored in the checkpoint.
    pub fn model_f32(&self) -> Result<Model<f32>> {
        Model::from_flat(self.model.clone(), &self.params)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            train: self.train.clone(),
            norm: self.norm,
        })?;
        w.write_all(TCKP_MAGIC)?;
        w.write_all(&TCKP_VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        write_f32s(w, &self.params)?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&self.adam_step.to_le_bytes())?;
        for v in [self.lr, self.beta1, self.beta2, self.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        write_f32s(w, &self.first_moment)?;
        write_f32s(w, &self.second_moment)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != TCKP_MAGIC {
            return Err(Error::format(KIND, format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != TCKP_VERSION {
            return Err(Error::format(KIND, format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        let mut header = vec![0u8; n];
        read_exact(r, &mut header)?;
        let header: Header =
            serde_json::from_slice(&header).map_err(|e| Error::format(KIND, format!("header: {e}")))?;
        header.model.validate()?;
        header.train.validate()?;
        header.norm.validate()?;

        let p = read_u64(r)? as usize;
        let expected = Model::<f32>::param_count(&header.model)?;
        if p != expected {
            return Err(Error::format(
                KIND,
                format!("parameter payload has {p} values, config needs {expected}"),
            ));
        }
        let params = read_f32s(r, p)?;
        let epoch = read_u32(r)?;
        let adam_step = read_u64(r)?;
        let [lr, beta1, beta2, eps] = [read_f64(r)?, read_f64(r)?, read_f64(r)?, read_f64(r)?];
        let first_moment = read_f32s(r, p)?;
        let second_moment = read_f32s(r, p)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format(KIND, "trailing bytes after optimizer state"));
        }
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            norm: header.norm,
            params,
            epoch,
            adam_step,
            lr,
            beta1,
            beta2,
            eps,
            first_moment,
            second_moment,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn write_f32s<W: Write>(w: &mut W, v: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| x.to_le_bytes()).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(KIND, "truncated"),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
