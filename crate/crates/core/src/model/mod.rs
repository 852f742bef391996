//! The downscaling network.
//!
//! ```text
//! LR [N,3,H,W] -> head conv -> (+ PE) -> B residual blocks -> tail conv (+ skip)
//!              -> feature map [N,C,H,W]
//!                   |-> ASM: per-branch coordinate MLP at any query point
//!                   `-> ATM: per-branch conv -> pixel shuffle(r) -> conv  (training only)
//! ```
//!
//! With a feature-map split the first `k` channels feed the velocity heads
//! (U, V) and the remaining channels feed the level heads.

mod asm;
mod config;

pub use asm::{plan_queries, QueryPlan, ENSEMBLE};
pub use config::{parse_fms, Branch, BranchKind, FmsRatio, ModelConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::field::{cell_center, CHANNELS};
use crate::nn::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::{Error, Result};

/// Standard deviation of the positional-encoding initialization.
pub const PE_INIT_STD: f64 = 0.02;

/// Queries evaluated per graph during inference.
const QUERY_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy)]
struct Layer {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct MlpHead {
    branch: Branch,
    hidden: Vec<Layer>,
    out: Layer,
}

#[derive(Debug, Clone)]
struct AtmHead {
    branch: Branch,
    up: Layer,
    out: Layer,
}

#[derive(Debug, Clone)]
struct Layout {
    head: Layer,
    pe: Option<ParamId>,
    blocks: Vec<(Layer, Layer)>,
    tail: Layer,
    asm: Vec<MlpHead>,
    atm: Vec<AtmHead>,
}

/// Network parameters plus the layout that ties them to operators.
#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    store: ParamStore<T>,
    layout: Layout,
}

/// How a freshly declared parameter is filled.
enum Init {
    /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn(usize),
    Zero,
    Normal(f64),
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Scalar> Builder<'_, T> {
    fn declare(&mut self, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        let values = match (&mut self.rng, init) {
            (None, _) | (_, Init::Zero) => vec![T::zero(); n],
            (Some(rng), Init::FanIn(fan_in)) => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..bound))).collect()
            }
            (Some(rng), Init::Normal(std)) => {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect()
            }
        };
        self.store.declare(name, shape, values)
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Result<Layer> {
        Ok(Layer {
            weight: self.declare(format!("{name}.weight"), &[cout, cin, 3, 3], Init::FanIn(cin * 9))?,
            bias: self.declare(format!("{name}.bias"), &[cout], Init::Zero)?,
        })
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Result<Layer> {
        Ok(Layer {
            weight: self.declare(format!("{name}.weight"), &[dout, din], Init::FanIn(din))?,
            bias: self.declare(format!("{name}.bias"), &[dout], Init::Zero)?,
        })
    }
}

fn build_layout<T: Scalar>(config: &ModelConfig, builder: &mut Builder<'_, T>) -> Result<Layout> {
    config.validate()?;
    let c = config.channels;
    let head = builder.conv("fe.head", CHANNELS, c)?;
    let pe = if config.use_pe {
        Some(builder.declare(
            "fe.pe".into(),
            &[c, config.lr_height, config.lr_width],
            Init::Normal(PE_INIT_STD),
        )?)
    } else {
        None
    };
    let blocks = (0..config.n_blocks)
        .map(|i| {
            Ok((
                builder.conv(&format!("fe.block{i}.conv1"), c, c)?,
                builder.conv(&format!("fe.block{i}.conv2"), c, c)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let tail = builder.conv("fe.tail", c, c)?;

    let branches = config.branches()?;
    let mut asm = Vec::new();
    for &branch in &branches {
        let tag = branch.kind.tag();
        let k = branch.width;
        let mut hidden = Vec::with_capacity(config.n_mlp_hidden);
        let mut din = 9 * k + 2;
        for i in 0..config.n_mlp_hidden {
            hidden.push(builder.dense(&format!("asm.{tag}.fc{i}"), din, k)?);
            din = k;
        }
        let out = builder.dense(&format!("asm.{tag}.out"), k, branch.out_channels)?;
        asm.push(MlpHead { branch, hidden, out });
    }
    let r2 = config.atm_scale * config.atm_scale;
    let mut atm = Vec::new();
    for &branch in &branches {
        let tag = branch.kind.tag();
        let k = branch.width;
        atm.push(AtmHead {
            branch,
            up: builder.conv(&format!("atm.{tag}.up"), k, k * r2)?,
            out: builder.conv(&format!("atm.{tag}.out"), k, branch.out_channels)?,
        });
    }
    Ok(Layout {
        head,
        pe,
        blocks,
        tail,
        asm,
        atm,
    })
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized network; the same seed always gives the same
    /// parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut builder = Builder {
            store: ParamStore::new(),
            rng: Some(&mut rng),
        };
        let layout = build_layout(&config, &mut builder)?;
        Ok(Model {
            config,
            store: builder.store,
            layout,
        })
    }

    /// Rebuilds a network around an existing flat parameter payload.
    pub fn from_flat(config: ModelConfig, values: &[T]) -> Result<Self> {
        let mut builder = Builder::<T> {
            store: ParamStore::new(),
            rng: None,
        };
        let layout = build_layout(&config, &mut builder)?;
        let mut store = builder.store;
        store.load_flat_values(values)?;
        Ok(Model { config, store, layout })
    }

    /// Total number of scalar parameters for `config`.
    pub fn param_count(config: &ModelConfig) -> Result<usize> {
        let mut builder = Builder::<T> {
            store: ParamStore::new(),
            rng: None,
        };
        build_layout(config, &mut builder)?;
        Ok(builder.store.total_len())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Parameters of the ASM and ATM heads serving one branch.
    pub fn head_params(&self, kind: BranchKind) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for h in self.layout.asm.iter().filter(|h| h.branch.kind == kind) {
            for l in h.hidden.iter().chain(std::iter::once(&h.out)) {
                ids.extend([l.weight, l.bias]);
            }
        }
        for h in self.layout.atm.iter().filter(|h| h.branch.kind == kind) {
            ids.extend([h.up.weight, h.up.bias, h.out.weight, h.out.bias]);
        }
        ids
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, layer: Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.weight);
        let b = g.param(&self.store, layer.bias);
        g.conv2d(x, w, b)
    }

    fn dense(&self, g: &mut Graph<T>, x: Var, layer: Layer) -> Result<Var> {
        let w = g.param(&self.store, layer.weight);
        let b = g.param(&self.store, layer.bias);
        g.linear(x, w, b)
    }

    /// Feature extractor: `[N, 3, H, W] -> [N, C, H, W]`.
    pub fn fe_forward(&self, g: &mut Graph<T>, lr: Var) -> Result<Var> {
        let [_, c, h, w] = g.value(lr).dims4("LR input")?;
        if c != CHANNELS {
            return Err(Error::shape(format!("LR input must have 3 channels, got {c}")));
        }
        if (h, w) != (self.config.lr_height, self.config.lr_width) {
            return Err(Error::PeShapeMismatch {
                expected_h: self.config.lr_height,
                expected_w: self.config.lr_width,
                got_h: h,
                got_w: w,
            });
        }
        let mut x = self.conv(g, lr, self.layout.head)?;
        if let Some(pe) = self.layout.pe {
            let p = g.param(&self.store, pe);
            x = g.add_broadcast(x, p)?;
        }
        let skip = x;
        for &(c1, c2) in &self.layout.blocks {
            let t = self.conv(g, x, c1)?;
            let t = g.relu(t);
            let t = self.conv(g, t, c2)?;
            x = g.add(x, t)?;
        }
        let t = self.conv(g, x, self.layout.tail)?;
        g.add(t, skip)
    }

    fn branch_features(&self, g: &mut Graph<T>, feat: Var, branch: &Branch) -> Result<Var> {
        if branch.kind == BranchKind::Joint {
            Ok(feat)
        } else {
            g.slice_channels(feat, branch.start, branch.width)
        }
    }

    /// Coordinate MLP over a query plan: `[Q, 3]` (U, V, level).
    pub fn asm_forward(&self, g: &mut Graph<T>, feat: Var, plan: &QueryPlan) -> Result<Var> {
        let [n, c, h, w] = g.value(feat).dims4("feature map")?;
        if c != self.config.channels {
            return Err(Error::shape(format!("feature map has {c} channels, model {}", self.config.channels)));
        }
        if let Some(p) = plan.positions.iter().find(|p| p[0] >= n || p[1] >= h || p[2] >= w) {
            return Err(Error::shape(format!("query plan position {p:?} outside feature map [{n}, {h}, {w}]")));
        }
        let rows = plan.positions.len();
        let rel: Vec<T> = plan.rel.iter().flat_map(|r| r.map(T::from_f64_lossy)).collect();
        let rel = g.input(Tensor::new(&[rows, 2], rel)?);
        let weights: Vec<T> = plan.weights.iter().map(|&v| T::from_f64_lossy(v)).collect();

        let mut outs = Vec::with_capacity(self.layout.asm.len());
        for head in &self.layout.asm {
            let f = self.branch_features(g, feat, &head.branch)?;
            let latent = g.unfold_gather(f, plan.positions.clone())?;
            let mut x = g.concat_cols(&[latent, rel])?;
            for &layer in &head.hidden {
                x = self.dense(g, x, layer)?;
                x = g.relu(x);
            }
            let o = self.dense(g, x, head.out)?;
            outs.push(g.blend(o, weights.clone(), ENSEMBLE)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat_cols(&outs)
        }
    }

    /// Auxiliary fixed-scale head: `[N, C, H, W] -> [N, 3, H*r, W*r]`.
    pub fn atm_forward(&self, g: &mut Graph<T>, feat: Var) -> Result<Var> {
        let r = self.config.atm_scale;
        let mut outs = Vec::with_capacity(self.layout.atm.len());
        for head in &self.layout.atm {
            let f = self.branch_features(g, feat, &head.branch)?;
            let up = self.conv(g, f, head.up)?;
            let up = g.pixel_shuffle(up, r)?;
            outs.push(self.conv(g, up, head.out)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            g.concat_channels(&outs)
        }
    }

    /// Feature map of an LR batch without keeping a graph around.
    pub fn features(&self, lr: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.input(lr);
        let f = self.fe_forward(&mut g, x)?;
        Ok(g.value(f).clone())
    }

    /// Evaluates the ASM at `coords` on item `item` of a feature batch.
    /// Returns `[Q, 3]` row-major.
    ///
    /// Queries are processed in independent chunks, in parallel when the
    /// thread pool allows; the result does not depend on the chunking.
    pub fn query(&self, feat: &Tensor<T>, item: usize, coords: &[[f64; 2]]) -> Result<Vec<T>> {
        let [n, _, h, w] = feat.dims4("feature map")?;
        if item >= n {
            return Err(Error::shape(format!("item {item} outside batch of {n}")));
        }
        // Only the queried item is needed as a graph input.
        let single = single_item(feat, item)?;
        let chunks: Vec<Result<Vec<T>>> = coords
            .par_chunks(QUERY_CHUNK)
            .map(|chunk| {
                let queries: Vec<(usize, [f64; 2])> = chunk.iter().map(|&c| (0, c)).collect();
                let plan = plan_queries(h, w, &queries)?;
                let mut g = Graph::new();
                let f = g.input(single.clone());
                let out = self.asm_forward(&mut g, f, &plan)?;
                Ok(g.value(out).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(coords.len() * CHANNELS);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Dense prediction on the `out_h x out_w` cell-center lattice, returned
    /// as `[3, out_h, out_w]`.
    pub fn predict_grid(&self, feat: &Tensor<T>, item: usize, out_h: usize, out_w: usize) -> Result<Vec<T>> {
        let coords: Vec<[f64; 2]> = (0..out_h)
            .flat_map(|y| (0..out_w).map(move |x| [cell_center(y, out_h), cell_center(x, out_w)]))
            .collect();
        let rows = self.query(feat, item, &coords)?;
        let plane = out_h * out_w;
        let mut out = vec![T::zero(); CHANNELS * plane];
        for (i, row) in rows.chunks_exact(CHANNELS).enumerate() {
            for (c, &v) in row.iter().enumerate() {
                out[c * plane + i] = v;
            }
        }
        Ok(out)
    }
}

fn single_item<T: Scalar>(feat: &Tensor<T>, item: usize) -> Result<Tensor<T>> {
    let [_, c, h, w] = feat.dims4("feature map")?;
    let len = c * h * w;
    Tensor::new(&[1, c, h, w], feat.data()[item * len..(item + 1) * len].to_vec())
}
