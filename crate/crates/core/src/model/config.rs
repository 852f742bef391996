use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Channel split between the velocity and level branches, `a:b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FmsRatio {
    pub velocity: usize,
    pub level: usize,
}

impl FmsRatio {
    pub const fn new(velocity: usize, level: usize) -> Self {
        FmsRatio { velocity, level }
    }
}

impl fmt::Display for FmsRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.velocity, self.level)
    }
}

impl FromStr for FmsRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |p: &str| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| Error::config(format!("bad FMS ratio `{s}`, expected a:b with positive integers")))
        };
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("bad FMS ratio `{s}`, expected a:b")))?;
        Ok(FmsRatio::new(parse(a)?, parse(b)?))
    }
}

impl Serialize for FmsRatio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FmsRatio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses `none` or `a:b`.
pub fn parse_fms(s: &str) -> Result<Option<FmsRatio>> {
    if s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

/// Which output group a head predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    /// Unsplit head predicting U, V and level.
    Joint,
    Velocity,
    Level,
}

impl BranchKind {
    pub fn tag(self) -> &'static str {
        match self {
            BranchKind::Joint => "joint",
            BranchKind::Velocity => "vel",
            BranchKind::Level => "lvl",
        }
    }
}

/// A contiguous slice of feature channels and the outputs it predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub kind: BranchKind,
    /// First feature channel.
    pub start: usize,
    /// Number of feature channels, also the hidden width of its MLP.
    pub width: usize,
    /// First output channel (0 = U, 2 = level).
    pub out_start: usize,
    pub out_channels: usize,
}

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub n_blocks: usize,
    #[serde(default)]
    pub fms_ratio: Option<FmsRatio>,
    pub atm_scale: usize,
    pub lr_height: usize,
    pub lr_width: usize,
    pub n_mlp_hidden: usize,
    #[serde(default = "default_true")]
    pub use_pe: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// 384 filters, 32 blocks, 2:1 split, x6 auxiliary head on a 50x48 grid,
    /// four hidden MLP layers.
    pub fn full_size() -> Self {
        ModelConfig {
            channels: 384,
            n_blocks: 32,
            fms_ratio: Some(FmsRatio::new(2, 1)),
            atm_scale: 6,
            lr_height: 50,
            lr_width: 48,
            n_mlp_hidden: 4,
            use_pe: true,
        }
    }

    pub fn with_fms(mut self, fms: Option<FmsRatio>) -> Self {
        self.fms_ratio = fms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.atm_scale == 0
            || self.lr_height == 0
            || self.lr_width == 0
            || self.n_mlp_hidden == 0
        {
            return Err(Error::config(format!("all model dimensions must be positive: {self:?}")));
        }
        self.split_boundary().map(|_| ())
    }

    /// Number of velocity channels `k = C * a / (a + b)`; `C` when unsplit.
    pub fn split_boundary(&self) -> Result<usize> {
        match self.fms_ratio {
            None => Ok(self.channels),
            Some(r) => {
                let parts = r.velocity + r.level;
                if r.velocity == 0 || r.level == 0 || !self.channels.is_multiple_of(parts) {
                    return Err(Error::config(format!(
                        "{} channels cannot be split at {r}",
                        self.channels
                    )));
                }
                Ok(self.channels / parts * r.velocity)
            }
        }
    }

    /// Prediction heads in output order.
    pub fn branches(&self) -> Result<Vec<Branch>> {
        let k = self.split_boundary()?;
        Ok(match self.fms_ratio {
            None => vec![Branch {
                kind: BranchKind::Joint,
                start: 0,
                width: self.channels,
                out_start: 0,
                out_channels: 3,
            }],
            Some(_) => vec![
                Branch {
                    kind: BranchKind::Velocity,
                    start: 0,
                    width: k,
                    out_start: 0,
                    out_channels: 2,
                },
                Branch {
                    kind: BranchKind::Level,
                    start: k,
                    width: self.channels - k,
                    out_start: 2,
                    out_channels: 1,
                },
            ],
        })
    }

    /// Fixed-scale output grid of the auxiliary head.
    pub fn hr_dims(&self) -> (usize, usize) {
        (self.lr_height * self.atm_scale, self.lr_width * self.atm_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn widths(c: usize, fms: Option<FmsRatio>) -> Vec<usize> {
        let cfg = ModelConfig {
            channels: c,
            ..ModelConfig::full_size()
        }
        .with_fms(fms);
        cfg.branches().unwrap().iter().map(|b| b.width).collect()
    }

    #[test]
    fn split_widths() {
        assert_eq!(widths(384, Some(FmsRatio::new(2, 1))), vec![256, 128]);
        assert_eq!(widths(384, Some(FmsRatio::new(5, 1))), vec![320, 64]);
        assert_eq!(widths(384, Some(FmsRatio::new(11, 1))), vec![352, 32]);
        assert_eq!(widths(384, None), vec![384]);
        assert_eq!(widths(12, Some(FmsRatio::new(2, 1))), vec![8, 4]);
    }

    #[test]
    fn non_integral_split_rejected() {
        let cfg = ModelConfig {
            channels: 64,
            ..ModelConfig::full_size()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_fms("none").unwrap(), None);
        assert_eq!(parse_fms("11:1").unwrap(), Some(FmsRatio::new(11, 1)));
        assert!(parse_fms("2-1").is_err());
        assert!(parse_fms("0:1").is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let json = serde_json::to_string(&ModelConfig::full_size()).unwrap();
        assert!(json.contains("\"fms_ratio\":\"2:1\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ModelConfig::full_size());
        let typo = json.replace("n_blocks", "n_blokcs");
        assert!(serde_json::from_str::<ModelConfig>(&typo).is_err());
    }
}
