use super::ops;
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    AddBroadcast { x: Var, p: Var },
    Mul(Var, Var),
    Scale(Var, T),
    PixelShuffle { x: Var, r: usize },
    SliceChannels { x: Var, start: usize },
    ConcatChannels(Vec<Var>),
    ConcatCols(Vec<Var>),
    UnfoldGather { x: Var, positions: Vec<[usize; 3]> },
    Blend { x: Var, weights: Vec<T>, samples: usize },
    Sum(Var),
    Mean(Var),
    MaskedL1 { pred: Var, target: Var, mask: Vec<bool>, count: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward pass so that gradients can be pulled back through it.
///
/// Every forward op also counts its multiply-accumulates (convolutions and
/// affine layers only), which the cost model is checked against.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    macs: u64,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            macs: 0,
        }
    }

    /// Multiply-accumulates executed by recorded conv/linear ops.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// A leaf bound to a stored parameter; its gradient lands in the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let entry = store.get(id);
        let value = Tensor::new(&entry.shape, entry.values.clone()).expect("store keeps shapes consistent");
        self.push(value, Op::Param(id), true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let dims = self.value(x).dims4("conv2d input")?;
        let [cout, cin, kh, kw] = self.value(w).dims4("conv2d weight")?;
        if kh != 3 || kw != 3 || cin != dims[1] {
            return Err(Error::shape(format!(
                "conv2d weight {:?} incompatible with input {:?}",
                self.value(w).shape(),
                dims
            )));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::shape(format!(
                "conv2d bias {:?} does not match {cout} output channels",
                self.value(b).shape()
            )));
        }
        let out = ops::conv2d_forward(
            self.value(x).data(),
            dims,
            self.value(w).data(),
            self.value(b).data(),
        );
        let [n, _, h, wd] = dims;
        self.macs += (n * cout * cin * 9 * h * wd) as u64;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&[n, cout, h, wd], out)?, Op::Conv2d { x, w, b }, rg))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [m, din] = self.value(x).dims2("linear input")?;
        let [dout, win] = self.value(w).dims2("linear weight")?;
        if win != din || self.value(b).shape() != [dout] {
            return Err(Error::shape(format!(
                "linear weight {:?} / bias {:?} incompatible with input {:?}",
                self.value(w).shape(),
                self.value(b).shape(),
                [m, din]
            )));
        }
        let out = ops::linear_forward(self.value(x).data(), m, din, self.value(w).data(), self.value(b).data());
        self.macs += (m * din * dout) as u64;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::new(&[m, dout], out)?, Op::Linear { x, w, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(T::zero())).collect();
        let out = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let v = self.value(x);
        let out = Tensor::new(v.shape(), v.data().iter().map(|&a| a * s).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    /// `x [N, ...] + p [...]`, with `p` repeated over the leading axis.
    pub fn add_broadcast(&mut self, x: Var, p: Var) -> Result<Var> {
        let xs = self.value(x).shape();
        if xs.len() < 2 || &xs[1..] != self.value(p).shape() {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} over {:?}",
                self.value(p).shape(),
                xs
            )));
        }
        let pd = self.value(p).data();
        let data = self
            .value(x)
            .data()
            .chunks_exact(pd.len())
            .flat_map(|row| row.iter().zip(pd).map(|(&a, &b)| a + b))
            .collect();
        let out = Tensor::new(self.value(x).shape(), data)?;
        let rg = self.rg(x) || self.rg(p);
        Ok(self.push(out, Op::AddBroadcast { x, p }, rg))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pixel_shuffle input")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::shape(format!("{c} channels not divisible by r^2 = {}", r * r)));
        }
        let out = ops::pixel_shuffle_forward(self.value(x).data(), [n, c, h, w], r);
        let out = Tensor::new(&[n, c / (r * r), h * r, w * r], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    /// Channels `start..start + len` of a `[N, C, H, W]` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("slice_channels input")?;
        if len == 0 || start + len > c {
            return Err(Error::shape(format!("channel slice {start}..{} out of {c}", start + len)));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * hw);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * hw..(b * c + start + len) * hw]);
        }
        let out = Tensor::new(&[n, len, h, w], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceChannels { x, start }, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::shape("empty concat"))?).dims4("concat")?;
        let mut total = 0;
        for &p in parts {
            let [n, c, h, w] = self.value(p).dims4("concat")?;
            if [n, h, w] != [first[0], first[2], first[3]] {
                return Err(Error::shape("concat_channels: batch or spatial dims differ"));
            }
            total += c;
        }
        let [n, _, h, w] = first;
        let hw = h * w;
        let mut data = Vec::with_capacity(n * total * hw);
        for b in 0..n {
            for &p in parts {
                let c = self.value(p).shape()[1];
                data.extend_from_slice(&self.value(p).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[n, total, h, w], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatChannels(parts.to_vec()), rg))
    }

    /// Column-wise concatenation of `[M, Di]` matrices.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let [m, _] = self.value(*parts.first().ok_or_else(|| Error::shape("empty concat"))?).dims2("concat")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let [rows, cols] = self.value(p).dims2("concat")?;
            if rows != m {
                return Err(Error::shape("concat_cols: row counts differ"));
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for row in 0..m {
            for (&p, &d) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[row * d..(row + 1) * d]);
            }
        }
        let out = Tensor::new(&[m, total], data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// For each `(batch, y, x)` position, the replicate-padded 3x3
    /// neighborhood of every channel, flattened to a `9 * C` row.
    pub fn unfold_gather(&mut self, x: Var, positions: Vec<[usize; 3]>) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("unfold_gather input")?;
        if let Some(p) = positions.iter().find(|p| p[0] >= n || p[1] >= h || p[2] >= w) {
            return Err(Error::shape(format!("gather position {p:?} outside [{n}, {h}, {w}]")));
        }
        let out = ops::unfold_gather_forward(self.value(x).data(), [n, c, h, w], &positions);
        let out = Tensor::new(&[positions.len(), 9 * c], out)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::UnfoldGather { x, positions }, rg))
    }

    /// `out[q] = sum_s weights[s*Q + q] * x[s*Q + q]` for `x [samples*Q, O]`.
    pub fn blend(&mut self, x: Var, weights: Vec<T>, samples: usize) -> Result<Var> {
        let [rows, o] = self.value(x).dims2("blend input")?;
        if samples == 0 || rows % samples != 0 || weights.len() != rows {
            return Err(Error::shape(format!(
                "blend: {rows} rows, {} weights, {samples} samples",
                weights.len()
            )));
        }
        let q = rows / samples;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); q * o];
        for s in 0..samples {
            for i in 0..q {
                let r = s * q + i;
                let wgt = weights[r];
                for (d, &v) in data[i * o..(i + 1) * o].iter_mut().zip(&src[r * o..(r + 1) * o]) {
                    *d = *d + wgt * v;
                }
            }
        }
        let out = Tensor::new(&[q, o], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Blend { x, weights, samples }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_usize(v.len()).expect("len fits");
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Mean absolute error over the elements where `mask` is true.
    pub fn masked_l1(&mut self, pred: Var, target: Var, mask: Vec<bool>) -> Result<Var> {
        self.same_shape(pred, target, "masked_l1")?;
        if mask.len() != self.value(pred).len() {
            return Err(Error::shape(format!(
                "masked_l1: mask has {} entries, prediction {}",
                mask.len(),
                self.value(pred).len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::NoValidCells);
        }
        let total: T = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|((&p, &t), _)| (p - t).abs())
            .sum();
        let loss = total / T::from_usize(count).expect("count fits");
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::MaskedL1 {
                pred,
                target,
                mask,
                count,
            },
            rg,
        ))
    }

    /// Pulls the gradient of the scalar `loss` back to every parameter leaf and
    /// adds it to the matching gradient in `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let recorded = self
            .nodes
            .iter()
            .any(|n| !matches!(n.op, Op::Input | Op::Param(_)));
        if !recorded || loss.0 >= self.nodes.len() {
            return Err(Error::NoForward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(node, g, &mut grads, store)?;
        }
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        let acc = |grads: &mut [Option<Vec<T>>], v: Var, contrib: Vec<T>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, &c)| *e = *e + c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Input => {}
            Op::Param(id) => {
                let entry = store.get_mut(*id);
                entry.grads.iter_mut().zip(&g).for_each(|(e, &c)| *e = *e + c);
            }
            Op::Conv2d { x, w, b } => {
                let dims = self.value(*x).dims4("conv2d input")?;
                let cout = self.value(*b).len();
                let cg = ops::conv2d_backward(
                    self.value(*x).data(),
                    dims,
                    self.value(*w).data(),
                    cout,
                    &g,
                    self.rg(*x),
                );
                acc(grads, *w, cg.dw);
                acc(grads, *b, cg.db);
                if let Some(dx) = cg.dx {
                    acc(grads, *x, dx);
                }
            }
            Op::Linear { x, w, b } => {
                let [m, din] = self.value(*x).dims2("linear input")?;
                let dout = self.value(*b).len();
                let lg = ops::linear_backward(self.value(*x).data(), m, din, self.value(*w).data(), dout, &g, self.rg(*x));
                acc(grads, *w, lg.dw);
                acc(grads, *b, lg.db);
                if let Some(dx) = lg.dx {
                    acc(grads, *x, dx);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&gv, &y)| if y > T::zero() { gv } else { T::zero() })
                    .collect();
                acc(grads, *x, d);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g);
            }
            Op::Mul(a, b) => {
                let da = g.iter().zip(self.value(*b).data()).map(|(&gv, &y)| gv * y).collect();
                let db = g.iter().zip(self.value(*a).data()).map(|(&gv, &y)| gv * y).collect();
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Scale(x, s) => {
                acc(grads, *x, g.iter().map(|&v| v * *s).collect());
            }
            Op::AddBroadcast { x, p } => {
                let plen = self.value(*p).len();
                let mut dp = vec![T::zero(); plen];
                for row in g.chunks_exact(plen) {
                    dp.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                }
                acc(grads, *p, dp);
                acc(grads, *x, g);
            }
            Op::PixelShuffle { x, r } => {
                let dims = self.value(*x).dims4("pixel_shuffle input")?;
                acc(grads, *x, ops::pixel_unshuffle(&g, dims, *r));
            }
            Op::SliceChannels { x, start } => {
                let [n, c, h, w] = self.value(*x).dims4("slice_channels input")?;
                let len = node.value.shape()[1];
                let hw = h * w;
                let mut dx = vec![T::zero(); n * c * hw];
                for b in 0..n {
                    dx[(b * c + start) * hw..(b * c + start + len) * hw]
                        .copy_from_slice(&g[b * len * hw..(b + 1) * len * hw]);
                }
                acc(grads, *x, dx);
            }
            Op::ConcatChannels(parts) => {
                let [n, total, h, w] = node.value.dims4("concat")?;
                let hw = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).shape()[1];
                    let mut dp = Vec::with_capacity(n * c * hw);
                    for b in 0..n {
                        dp.extend_from_slice(&g[(b * total + offset) * hw..(b * total + offset + c) * hw]);
                    }
                    acc(grads, p, dp);
                    offset += c;
                }
            }
            Op::ConcatCols(parts) => {
                let [m, total] = node.value.dims2("concat")?;
                let mut offset = 0;
                for &p in parts {
                    let d = self.value(p).shape()[1];
                    let mut dp = Vec::with_capacity(m * d);
                    for row in 0..m {
                        dp.extend_from_slice(&g[row * total + offset..row * total + offset + d]);
                    }
                    acc(grads, p, dp);
                    offset += d;
                }
            }
            Op::UnfoldGather { x, positions } => {
                let dims = self.value(*x).dims4("unfold_gather input")?;
                acc(grads, *x, ops::unfold_gather_backward(&g, dims, positions));
            }
            Op::Blend { x, weights, samples } => {
                let [rows, o] = self.value(*x).dims2("blend input")?;
                let q = rows / samples;
                let mut dx = vec![T::zero(); rows * o];
                for (r, &wgt) in weights.iter().enumerate() {
                    let i = r % q;
                    for (d, &gv) in dx[r * o..(r + 1) * o].iter_mut().zip(&g[i * o..(i + 1) * o]) {
                        *d = wgt * gv;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Sum(x) => {
                acc(grads, *x, vec![g[0]; self.value(*x).len()]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                let v = g[0] / T::from_usize(n).expect("len fits");
                acc(grads, *x, vec![v; n]);
            }
            Op::MaskedL1 {
                pred,
                target,
                mask,
                count,
            } => {
                let scale = g[0] / T::from_usize(*count).expect("count fits");
                let dp: Vec<T> = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(self.value(*target).data())
                    .zip(mask)
                    .map(|((&p, &t), &m)| {
                        let diff = p - t;
                        if !m || diff == T::zero() {
                            T::zero()
                        } else {
                            diff.signum() * scale
                        }
                    })
                    .collect();
                if self.rg(*target) {
                    acc(grads, *target, dp.iter().map(|&v| -v).collect());
                }
                acc(grads, *pred, dp);
            }
        }
        Ok(())
    }
}
