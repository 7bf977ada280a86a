use alloc::vec;
use alloc::vec::Vec;

use super::kernels as k;
use super::Tensor;
use crate::error::{config_err, data_err, usage_err, Result};
use crate::rng::Rng;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Average,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, groups: usize, banked: bool, c_in: usize, c_out: usize, k: usize, t: usize },
    AvgPool { x: Var, rows: usize, t: usize, size: usize },
    MaxPool { x: Var, argmax: Vec<u32> },
    Dense { x: Var, w: Var, b: Var, rows: usize, d_in: usize, d_out: usize },
    Softmax { x: Var, rows: usize, cols: usize },
    LayerNorm { x: Var, gain: Var, shift: Var, rows: usize, d: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu { x: Var },
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, b: usize, k: usize },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Sum { x: Var },
    MeanRows { x: Var, rows: usize, cols: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape { x: Var },
    Concat { parts: Vec<(Var, usize)>, outer: usize, inner: usize },
    ScaleShift { x: Var, gain: Var, offset: Var, rows: usize, t: usize },
    Attention { qkv: Var, probs: Vec<f64>, t: usize, d: usize, heads: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of operations. Nodes are appended in evaluation order, so
/// every operation's inputs precede it and a reverse sweep is a valid
/// topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn take(grads: &mut [Option<Vec<f64>>], v: Var, n: usize) -> Vec<f64> {
    grads[v.0].take().unwrap_or_else(|| vec![0.0; n])
}

fn distinct(vars: &[Var]) -> Result<()> {
    for (i, a) in vars.iter().enumerate() {
        if vars[i + 1..].contains(a) {
            return Err(usage_err!("operation inputs must be distinct variables"));
        }
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Record a leaf, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let rg = tensor.requires_grad;
        self.push(tensor, Op::Leaf, rg)
    }

    /// Record a leaf that participates in differentiation.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, true)
    }

    /// Record a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Attention weights `[heads × t × t]` stored by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<(&[f64], usize, usize)> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, t, heads, .. } => Some((probs, *heads, *t)),
            _ => None,
        }
    }

    /// Same-padded 1-D cross-correlation over the last axis.
    ///
    /// `x` is `[.., c_in, t]`; the leading axes form `g` independent groups.
    /// A `[c_out, c_in, k]` kernel is shared by all groups; a
    /// `[g, c_out, c_in, k]` kernel gives each group its own bank (bias then
    /// `[g, c_out]`).
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        distinct(&[x, w, b])?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() < 2 {
            return Err(config_err!("conv1d input must be at least 2-D, got {:?}", xs));
        }
        let t = xs[xs.len() - 1];
        let c_in = xs[xs.len() - 2];
        let groups: usize = xs[..xs.len() - 2].iter().product();
        let (banked, c_out, kw) = match ws.len() {
            3 => (false, ws[0], ws[2]),
            4 if ws[0] == groups => (true, ws[1], ws[3]),
            _ => return Err(config_err!("conv1d kernel {:?} does not fit input {:?}", ws, xs)),
        };
        let w_cin = if banked { ws[2] } else { ws[1] };
        if w_cin != c_in {
            return Err(config_err!("conv1d kernel expects {} input channels, input has {}", w_cin, c_in));
        }
        if kw % 2 == 0 {
            return Err(config_err!("conv1d kernel size must be odd, got {}", kw));
        }
        let expect_b: Vec<usize> = if banked { vec![groups, c_out] } else { vec![c_out] };
        if bs != expect_b && !(banked && bs == [groups * c_out]) {
            return Err(config_err!("conv1d bias {:?} should be {:?}", bs, expect_b));
        }
        let mut out_shape = xs[..xs.len() - 2].to_vec();
        out_shape.extend_from_slice(&[c_out, t]);
        let mut out = vec![0.0; groups * c_out * t];
        {
            let (xd, wd, bd) = (self.data(x), self.data(w), self.data(b));
            let wsz = c_out * c_in * kw;
            for g in 0..groups {
                let (wg, bg) = if banked {
                    (&wd[g * wsz..(g + 1) * wsz], &bd[g * c_out..(g + 1) * c_out])
                } else {
                    (wd, bd)
                };
                k::conv1d_forward(
                    &xd[g * c_in * t..(g + 1) * c_in * t],
                    wg,
                    bg,
                    c_in,
                    c_out,
                    kw,
                    t,
                    &mut out[g * c_out * t..(g + 1) * c_out * t],
                );
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Conv { x, w, b, groups, banked, c_in, c_out, k: kw, t }, rg))
    }

    /// Non-overlapping pooling over the last axis; trailing samples that do
    /// not fill a window are dropped.
    pub fn pool(&mut self, x: Var, size: usize, mode: PoolMode) -> Result<Var> {
        if size < 1 {
            return Err(config_err!("pool size must be at least 1"));
        }
        let xs = self.shape(x).to_vec();
        let t = *xs.last().unwrap();
        let rows = self.value(x).numel() / t;
        let t_out = t / size;
        if t_out == 0 {
            return Err(config_err!("pool size {} exceeds axis length {}", size, t));
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = t_out;
        let mut out = vec![0.0; rows * t_out];
        let rg = self.rg(x);
        match mode {
            PoolMode::Average => {
                k::avg_pool_forward(self.data(x), rows, t, size, &mut out);
                let value = Tensor::new(&out_shape, out)?;
                Ok(self.push(value, Op::AvgPool { x, rows, t, size }, rg))
            }
            PoolMode::Max => {
                let mut argmax = vec![0u32; rows * t_out];
                k::max_pool_forward(self.data(x), rows, t, size, &mut out, &mut argmax);
                let value = Tensor::new(&out_shape, out)?;
                Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
            }
        }
    }

    /// `x [.., d_in] · w [d_in, d_out] + b [d_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        distinct(&[x, w, b])?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let d_in = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != d_in {
            return Err(config_err!("dense weight {:?} does not fit input {:?}", ws, xs));
        }
        let d_out = ws[1];
        if self.shape(b) != [d_out] {
            return Err(config_err!("dense bias {:?} should be [{}]", self.shape(b), d_out));
        }
        let rows = self.value(x).numel() / d_in;
        let mut out = vec![0.0; rows * d_out];
        k::dense_forward(self.data(x), self.data(w), self.data(b), rows, d_in, d_out, &mut out);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = d_out;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Dense { x, w, b, rows, d_in, d_out }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let cols = *xs.last().unwrap();
        let rows = self.value(x).numel() / cols;
        let mut out = vec![0.0; rows * cols];
        k::softmax_rows_forward(self.data(x), rows, cols, &mut out);
        let rg = self.rg(x);
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(value, Op::Softmax { x, rows, cols }, rg))
    }

    /// Layer normalisation over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Result<Var> {
        distinct(&[x, gain, shift])?;
        let xs = self.shape(x).to_vec();
        let d = *xs.last().unwrap();
        if self.shape(gain) != [d] || self.shape(shift) != [d] {
            return Err(config_err!("layer norm affine parameters must be [{}]", d));
        }
        let rows = self.value(x).numel() / d;
        let mut out = vec![0.0; rows * d];
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        k::layer_norm_forward(
            self.data(x),
            self.data(gain),
            self.data(shift),
            rows,
            d,
            eps,
            &mut out,
            &mut xhat,
            &mut inv_std,
        );
        let rg = self.rg(x) || self.rg(gain) || self.rg(shift);
        let value = Tensor::new(&xs, out)?;
        Ok(self.push(value, Op::LayerNorm { x, gain, shift, rows, d, xhat, inv_std }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        let value = Tensor::new(v.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu { x }, rg)
    }

    /// Inverted dropout. In evaluation mode, or with `rate == 0`, this is the
    /// identity and records nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(config_err!("dropout rate must lie in [0, 1), got {}", rate));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let v = self.value(x);
        let mask: Vec<f64> = (0..v.numel()).map(|_| if rng.uniform() < rate { 0.0 } else { keep }).collect();
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    /// Mean cross-entropy of `logits [b, k]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let kk = *ls.last().unwrap();
        let b = self.value(logits).numel() / kk;
        if labels.len() != b {
            return Err(data_err!("{} labels for {} rows of logits", labels.len(), b));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= kk) {
            return Err(data_err!("label {} out of range for {} classes", bad, kk));
        }
        let mut probs = vec![0.0; b * kk];
        let loss = k::cross_entropy_forward(self.data(logits), labels, b, kk, &mut probs);
        let rg = self.rg(logits);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, labels: labels.to_vec(), probs, b, k: kk }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(config_err!("add shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(config_err!("mul shapes {:?} and {:?} differ", self.shape(a), self.shape(b)));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let value = Tensor::new(v.shape(), v.data().iter().map(|a| a * factor).collect()).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Scale { x, factor }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    /// Mean over the first axis of `[rows, cols]`, giving `[cols]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(config_err!("mean_rows expects a matrix, got {:?}", xs));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            crate::math::axpy(1.0, &self.data(x)[r * cols..(r + 1) * cols], &mut out);
        }
        let inv = 1.0 / rows as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[cols], out)?, Op::MeanRows { x, rows, cols }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 {
            return Err(config_err!("transpose expects a matrix, got {:?}", xs));
        }
        let (rows, cols) = (xs[0], xs[1]);
        let src = self.data(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&[cols, rows], out)?, Op::Transpose { x, rows, cols }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| usage_err!("concat of nothing"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(config_err!("concat axis {} out of range for {:?}", axis, base));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(config_err!("concat shapes {:?} and {:?} are incompatible", base, s));
            }
            widths.push((p, s[axis]));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, a) in &widths {
                out.extend_from_slice(&self.data(p)[o * a * inner..(o + 1) * a * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat { parts: widths, outer, inner }, rg))
    }

    /// Per-row affine map `gain[r] · x[r, :] + offset[r]` over `x [rows, t]`.
    pub fn scale_shift(&mut self, x: Var, gain: Var, offset: Var) -> Result<Var> {
        distinct(&[x, gain, offset])?;
        let xs = self.shape(x).to_vec();
        if xs.len() != 2 || self.shape(gain) != [xs[0]] || self.shape(offset) != [xs[0]] {
            return Err(config_err!("scale_shift expects x [r, t] with gain/offset [r]; got {:?}", xs));
        }
        let (rows, t) = (xs[0], xs[1]);
        let (xd, g, o) = (self.data(x), self.data(gain), self.data(offset));
        let mut out = vec![0.0; rows * t];
        for r in 0..rows {
            for i in 0..t {
                out[r * t + i] = g[r] * xd[r * t + i] + o[r];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(offset);
        Ok(self.push(Tensor::new(&xs, out)?, Op::ScaleShift { x, gain, offset, rows, t }, rg))
    }

    /// Multi-head self-attention over a fused `[t, 3d]` query/key/value
    /// projection, producing concatenated head outputs `[t, d]`.
    pub fn attention(&mut self, qkv: Var, heads: usize) -> Result<Var> {
        let s = self.shape(qkv).to_vec();
        if s.len() != 2 || s[1] % 3 != 0 {
            return Err(config_err!("attention expects a [t, 3d] projection, got {:?}", s));
        }
        let (t, d) = (s[0], s[1] / 3);
        if heads == 0 || d % heads != 0 {
            return Err(config_err!("embedding dimension {} is not divisible by {} heads", d, heads));
        }
        let mut out = vec![0.0; t * d];
        let mut probs = vec![0.0; heads * t * t];
        k::attention_forward(self.data(qkv), t, d, heads, &mut out, &mut probs);
        let rg = self.rg(qkv);
        Ok(self.push(Tensor::new(&[t, d], out)?, Op::Attention { qkv, probs, t, d, heads }, rg))
    }

    /// Reverse sweep from a scalar `loss`, seeding with 1.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.backward_seeded(loss, 1.0)
    }

    /// Reverse sweep seeding `d loss = seed`. Gradients of every
    /// `requires_grad` node reachable from `loss` are stored on the node;
    /// previous gradients are discarded.
    pub fn backward_seeded(&mut self, loss: Var, seed: f64) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(usage_err!("backward needs a scalar loss, got shape {:?}", self.shape(loss)));
        }
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad {
                node.value.grad = g.or_else(|| Some(vec![0.0; node.value.numel()]));
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let n = |v: Var| self.nodes[v.0].value.numel();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Conv { x, w, b, groups, banked, c_in, c_out, k: kw, t } => {
                let mut dx = self.rg(x).then(|| take(grads, x, n(x)));
                let need_wb = self.rg(w) || self.rg(b);
                let mut dw = take(grads, w, n(w));
                let mut db = take(grads, b, n(b));
                let (xd, wd) = (self.data(x), self.data(w));
                let wsz = c_out * c_in * kw;
                if need_wb || dx.is_some() {
                    for gi in 0..groups {
                        let (wr, dwr, dbr) = if banked {
                            (&wd[gi * wsz..(gi + 1) * wsz], gi * wsz..(gi + 1) * wsz, gi * c_out..(gi + 1) * c_out)
                        } else {
                            (wd, 0..wsz, 0..c_out)
                        };
                        k::conv1d_backward(
                            &xd[gi * c_in * t..(gi + 1) * c_in * t],
                            wr,
                            &g[gi * c_out * t..(gi + 1) * c_out * t],
                            c_in,
                            c_out,
                            kw,
                            t,
                            dx.as_deref_mut().map(|d| &mut d[gi * c_in * t..(gi + 1) * c_in * t]),
                            &mut dw[dwr],
                            &mut db[dbr],
                        );
                    }
                }
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            &Op::AvgPool { x, rows, t, size } => {
                if self.rg(x) {
                    let mut dx = take(grads, x, n(x));
                    k::avg_pool_backward(g, rows, t, size, &mut dx);
                    grads[x.0] = Some(dx);
                }
            }
            Op::MaxPool { x, argmax } => {
                let x = *x;
                if self.rg(x) {
                    let mut dx = take(grads, x, n(x));
                    k::max_pool_backward(g, argmax, &mut dx);
                    grads[x.0] = Some(dx);
                }
            }
            &Op::Dense { x, w, b, rows, d_in, d_out } => {
                let mut dx = self.rg(x).then(|| take(grads, x, n(x)));
                let mut dw = take(grads, w, n(w));
                let mut db = take(grads, b, n(b));
                k::dense_backward(
                    self.data(x),
                    self.data(w),
                    g,
                    rows,
                    d_in,
                    d_out,
                    dx.as_deref_mut(),
                    &mut dw,
                    &mut db,
                );
                if let Some(dx) = dx {
                    grads[x.0] = Some(dx);
                }
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            &Op::Softmax { x, rows, cols } => {
                if self.rg(x) {
                    let mut dx = take(grads, x, n(x));
                    k::softmax_rows_backward(self.nodes[i].value.data(), g, rows, cols, &mut dx);
                    grads[x.0] = Some(dx);
                }
            }
            Op::LayerNorm { x, gain, shift, rows, d, xhat, inv_std } => {
                let (x, gain, shift) = (*x, *gain, *shift);
                let mut dx = self.rg(x).then(|| take(grads, x, n(x)));
                let mut dg = self.rg(gain).then(|| take(grads, gain, n(gain)));
                let mut ds = self.rg(shift).then(|| take(grads, shift, n(shift)));
                k::layer_norm_backward(
                    xhat,
                    inv_std,
                    self.data(gain),
                    g,
                    *rows,
                    *d,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    ds.as_deref_mut(),
                );
                for (v, d) in [(x, dx), (gain, dg), (shift, ds)] {
                    if let Some(d) = d {
                        grads[v.0] = Some(d);
                    }
                }
            }
            &Op::Relu { x } => {
                let mut dx = take(grads, x, n(x));
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(self.data(x)) {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
                grads[x.0] = Some(dx);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let mut dx = take(grads, x, n(x));
                for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d += gv * m;
                }
                grads[x.0] = Some(dx);
            }
            Op::CrossEntropy { logits, labels, probs, b, k: kk } => {
                let logits = *logits;
                let mut dl = take(grads, logits, n(logits));
                k::cross_entropy_backward(probs, labels, *b, *kk, g[0], &mut dl);
                grads[logits.0] = Some(dl);
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if self.rg(v) {
                        let mut d = take(grads, v, n(v));
                        crate::math::axpy(1.0, g, &mut d);
                        grads[v.0] = Some(d);
                    }
                }
            }
            &Op::Mul { a, b } => {
                let da: Vec<f64> = g.iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(self.data(a)).map(|(x, y)| x * y).collect();
                for (v, upd) in [(a, da), (b, db)] {
                    if self.rg(v) {
                        let mut d = take(grads, v, n(v));
                        crate::math::axpy(1.0, &upd, &mut d);
                        grads[v.0] = Some(d);
                    }
                }
            }
            &Op::Scale { x, factor } => {
                let mut d = take(grads, x, n(x));
                crate::math::axpy(factor, g, &mut d);
                grads[x.0] = Some(d);
            }
            &Op::Sum { x } => {
                let mut d = take(grads, x, n(x));
                d.iter_mut().for_each(|v| *v += g[0]);
                grads[x.0] = Some(d);
            }
            &Op::MeanRows { x, rows, cols } => {
                let mut d = take(grads, x, n(x));
                let inv = 1.0 / rows as f64;
                for r in 0..rows {
                    crate::math::axpy(inv, g, &mut d[r * cols..(r + 1) * cols]);
                }
                grads[x.0] = Some(d);
            }
            &Op::Transpose { x, rows, cols } => {
                let mut d = take(grads, x, n(x));
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
                grads[x.0] = Some(d);
            }
            &Op::Reshape { x } => {
                let mut d = take(grads, x, n(x));
                crate::math::axpy(1.0, g, &mut d);
                grads[x.0] = Some(d);
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, a) in parts {
                    if self.rg(p) {
                        let mut d = take(grads, p, n(p));
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + a) * inner];
                            crate::math::axpy(1.0, src, &mut d[o * a * inner..(o + 1) * a * inner]);
                        }
                        grads[p.0] = Some(d);
                    }
                    offset += a;
                }
            }
            &Op::ScaleShift { x, gain, offset, rows, t } => {
                let xd = self.data(x);
                let gd = self.data(gain);
                if self.rg(x) {
                    let mut d = take(grads, x, n(x));
                    for r in 0..rows {
                        crate::math::axpy(gd[r], &g[r * t..(r + 1) * t], &mut d[r * t..(r + 1) * t]);
                    }
                    grads[x.0] = Some(d);
                }
                if self.rg(gain) {
                    let mut d = take(grads, gain, rows);
                    for r in 0..rows {
                        d[r] += crate::math::dot(&g[r * t..(r + 1) * t], &xd[r * t..(r + 1) * t]);
                    }
                    grads[gain.0] = Some(d);
                }
                if self.rg(offset) {
                    let mut d = take(grads, offset, rows);
                    for r in 0..rows {
                        d[r] += crate::math::sum(&g[r * t..(r + 1) * t]);
                    }
                    grads[offset.0] = Some(d);
                }
            }
            Op::Attention { qkv, probs, t, d, heads } => {
                let qkv = *qkv;
                let mut dq = take(grads, qkv, n(qkv));
                k::attention_backward(self.data(qkv), probs, g, *t, *d, *heads, &mut dq);
                grads[qkv.0] = Some(dq);
            }
        }
    }
}
