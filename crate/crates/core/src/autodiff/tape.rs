use super::kernels::{col2im_acc, conv_output_size, gemm_acc, gemm_nt_acc, gemm_tn_acc, im2col, ConvGeom};
use super::optim::{Gradients, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Conv2d {
        input: Var,
        kernels: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    AddChannelBias(Var, Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mix {
        a: Var,
        b: Var,
        weights: Vec<f64>,
    },
    GatherRows {
        input: Var,
        idx: Vec<usize>,
    },
    SoftCrossEntropy {
        logits: Var,
        target: Tensor,
        probs: Vec<f64>,
    },
    BinaryCrossEntropy {
        logits: Var,
        target: Tensor,
    },
    L2Loss {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of one forward pass.
///
/// Parameters enter through [`Tape::param`] and are cached per store index,
/// so several partial passes over the same network share one leaf each.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Leaf for parameter `index` of `store`.
    pub fn param(&mut self, store: &ParamStore, index: usize) -> Var {
        if self.param_vars.len() <= index {
            self.param_vars.resize(index + 1, None);
        }
        if let Some(v) = self.param_vars[index] {
            return v;
        }
        let v = self.push(store.get(index).clone(), Op::Param(index), true);
        self.param_vars[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), needs))
    }

    /// `x[m×n] + bias[n]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.shape()[1] {
            return Err(dim_err("add_row_bias", tx, tb));
        }
        let n = tb.len();
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % n];
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddRowBias(x, bias), needs))
    }

    /// Cross-correlation of `input[n×c×h×w]` with `kernels[f×c×kh×kw]`.
    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ti, tk) = (self.value(input), self.value(kernels));
        let (is, ks) = (ti.shape(), tk.shape());
        if is.len() != 4 || ks.len() != 4 || is[1] != ks[1] || stride == 0 {
            return Err(dim_err("conv2d", ti, tk));
        }
        let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
        let (f, kh, kw) = (ks[0], ks[2], ks[3]);
        let (oh, ow) = match (
            conv_output_size(h, kh, stride, padding),
            conv_output_size(w, kw, stride, padding),
        ) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => return Err(dim_err("conv2d", ti, tk)),
        };
        let geom = ConvGeom { c, h, w, kh, kw, stride, padding, oh, ow };
        let (pl, ol) = (geom.patch_len(), geom.out_len());
        let mut cols = vec![0.0; n * pl * ol];
        let mut out = vec![0.0; n * f * ol];
        let img_len = c * h * w;
        for s in 0..n {
            let col = &mut cols[s * pl * ol..(s + 1) * pl * ol];
            im2col(&ti.data()[s * img_len..(s + 1) * img_len], &geom, col);
            gemm_acc(tk.data(), col, &mut out[s * f * ol..(s + 1) * f * ol], f, pl, ol);
        }
        let needs = self.needs(input) || self.needs(kernels);
        let value = Tensor::new(vec![n, f, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernels, geom, cols }, needs))
    }

    /// `x[n×c×h×w] + bias[c]` broadcast over batch and space.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 4 || tb.len() != tx.shape()[1] {
            return Err(dim_err("add_channel_bias", tx, tb));
        }
        let c = tb.len();
        let plane = tx.shape()[2] * tx.shape()[3];
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[(i / plane) % c];
        }
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(out, Op::AddChannelBias(x, bias), needs))
    }

    /// Non-overlapping `size×size` max pooling; trailing rows/columns that do
    /// not fill a window are dropped.
    pub fn max_pool(&mut self, input: Var, size: usize) -> Result<Var> {
        let ti = self.value(input);
        let s = ti.shape();
        if s.len() != 4 || size == 0 || s[2] < size || s[3] < size {
            return Err(Error::Dimension {
                op: "max_pool",
                lhs: s.to_vec(),
                rhs: vec![size, size],
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / size, w / size);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = ti.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oi in 0..oh {
                for oj in 0..ow {
                    let mut best = base + oi * size * w + oj * size;
                    for di in 0..size {
                        for dj in 0..size {
                            let idx = base + (oi * size + di) * w + oj * size + dj;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        let needs = self.needs(input);
        Ok(self.push(Tensor::new(vec![n, c, oh, ow], out)?, Op::MaxPool { input, argmax }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let needs = self.needs(x);
        self.push(out, Op::Sigmoid(x), needs)
    }

    /// Row-wise softmax of a rank-2 tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "softmax_rows",
                lhs: tx.shape().to_vec(),
                rhs: vec![],
            });
        }
        let c = tx.shape()[1];
        let mut out = tx.clone();
        for (z, o) in tx.data().chunks(c).zip(out.data_mut().chunks_mut(c)) {
            softmax_row(z, o);
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::SoftmaxRows(x), needs))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Collapse everything after the batch dimension.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let shape = [t.rows(), t.row_len()];
        self.reshape(x, &shape)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("add", ta, tb));
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o += v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mul", ta, tb));
        }
        let mut out = ta.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, factor), needs)
    }

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    /// Row-wise convex combination `w_i·a_i + (1−w_i)·b_i`. A single weight
    /// applies to every row.
    pub fn mix(&mut self, a: Var, b: Var, weights: &[f64]) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(dim_err("mix", ta, tb));
        }
        let rows = ta.rows();
        let weights = match weights.len() {
            1 => vec![weights[0]; rows],
            n if n == rows => weights.to_vec(),
            n => {
                return Err(Error::Validation(format!(
                    "{n} mixing weights for {rows} rows"
                )))
            }
        };
        let w = ta.row_len();
        let mut out = ta.clone();
        for (i, lam) in weights.iter().enumerate() {
            let rb = &tb.data()[i * w..(i + 1) * w];
            for (o, &vb) in out.data_mut()[i * w..(i + 1) * w].iter_mut().zip(rb) {
                *o = lam * *o + (1.0 - lam) * vb;
            }
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mix { a, b, weights }, needs))
    }

    /// Rows `idx` of the leading dimension (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let out = self.value(x).select_rows(idx)?;
        let needs = self.needs(x);
        Ok(self.push(
            out,
            Op::GatherRows {
                input: x,
                idx: idx.to_vec(),
            },
            needs,
        ))
    }

    /// Mean over rows of `−Σ_c y_c · log softmax(z)_c` with soft targets.
    pub fn soft_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let tz = self.value(logits);
        if tz.shape().len() != 2 || tz.shape() != target.shape() {
            return Err(dim_err("soft_cross_entropy", tz, target));
        }
        let c = tz.shape()[1];
        for (i, row) in target.data().chunks(c).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(0.0..=1.0).contains(&v)) || (s - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "target row {i} is not a probability vector (sum {s})"
                )));
            }
        }
        let m = tz.rows();
        let mut probs = vec![0.0; tz.len()];
        let mut total = 0.0;
        for ((z, y), p) in tz.data().chunks(c).zip(target.data().chunks(c)).zip(probs.chunks_mut(c)) {
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                if y[j] != 0.0 {
                    total -= y[j] * (z[j] - lse);
                }
            }
            softmax_row(z, p);
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::SoftCrossEntropy {
                logits,
                target: target.clone(),
                probs,
            },
            needs,
        ))
    }

    /// Mean over entries of `−[y log σ(z) + (1−y) log(1−σ(z))]`.
    pub fn binary_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let tz = self.value(logits);
        if tz.shape() != target.shape() {
            return Err(dim_err("binary_cross_entropy", tz, target));
        }
        if target.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Validation("binary targets must lie in [0, 1]".into()));
        }
        let total: f64 = tz
            .data()
            .iter()
            .zip(target.data())
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(total / tz.len() as f64),
            Op::BinaryCrossEntropy {
                logits,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// Mean over rows of `‖p − y‖² / c`.
    pub fn l2_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return Err(dim_err("l2_loss", tp, target));
        }
        let total: f64 = tp
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum();
        let needs = self.needs(pred);
        Ok(self.push(
            Tensor::scalar(total / tp.len() as f64),
            Op::L2Loss {
                pred,
                target: target.clone(),
            },
            needs,
        ))
    }

    /// Hash of every piecewise branch taken in this pass (rectifier signs and
    /// pooling winners). Two passes with equal signatures evaluated the same
    /// smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = 0xCBF2_9CE4_8422_2325u64;
        let mut feed = |v: u64| h = (h ^ v).wrapping_mul(0x100_0000_01B3);
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &v in self.value(*x).data() {
                        feed((v > 0.0) as u64);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| feed(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from the scalar `loss`; returns gradients for every
    /// parameter of a store with `n_params` entries (zeros where unused).
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Tensor> = (0..store.len()).map(|i| Tensor::zeros(store.get(i).shape())).collect();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    if *p >= out.len() || out[*p].len() != g.len() {
                        return Err(Error::Usage(format!(
                            "parameter {p} does not belong to the given store"
                        )));
                    }
                    for (o, v) in out[*p].data_mut().iter_mut().zip(&g) {
                        *o += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    if self.needs(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt_acc(&g, tb.data(), &mut ga, m, n, k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn_acc(ta.data(), &g, &mut gb, k, m, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRowBias(x, bias) => {
                    if self.needs(*bias) {
                        let n = self.value(*bias).len();
                        let mut gb = vec![0.0; n];
                        for row in g.chunks(n) {
                            for (o, v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Conv2d {
                    input,
                    kernels,
                    geom,
                    cols,
                } => {
                    let n = self.value(*input).rows();
                    let tk = self.value(*kernels);
                    let f = tk.rows();
                    let (pl, ol) = (geom.patch_len(), geom.out_len());
                    if self.needs(*kernels) {
                        let mut gk = vec![0.0; tk.len()];
                        for s in 0..n {
                            let go = &g[s * f * ol..(s + 1) * f * ol];
                            gemm_nt_acc(go, &cols[s * pl * ol..(s + 1) * pl * ol], &mut gk, f, ol, pl);
                        }
                        accumulate(&mut grads, *kernels, gk);
                    }
                    if self.needs(*input) {
                        let img_len = geom.c * geom.h * geom.w;
                        let mut gi = vec![0.0; n * img_len];
                        let mut gcols = vec![0.0; pl * ol];
                        for s in 0..n {
                            gcols.iter_mut().for_each(|v| *v = 0.0);
                            let go = &g[s * f * ol..(s + 1) * f * ol];
                            gemm_tn_acc(tk.data(), go, &mut gcols, pl, f, ol);
                            col2im_acc(&gcols, geom, &mut gi[s * img_len..(s + 1) * img_len]);
                        }
                        accumulate(&mut grads, *input, gi);
                    }
                }
                Op::AddChannelBias(x, bias) => {
                    if self.needs(*bias) {
                        let s = self.value(*x).shape();
                        let (c, plane) = (s[1], s[2] * s[3]);
                        let mut gb = vec![0.0; c];
                        for (i, chunk) in g.chunks(plane).enumerate() {
                            gb[i % c] += chunk.iter().sum::<f64>();
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.needs(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let mut gi = vec![0.0; self.value(*input).len()];
                    for (&idx, v) in argmax.iter().zip(&g) {
                        gi[idx] += v;
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::Relu(x) => {
                    let gx = g
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::SoftmaxRows(x) => {
                    let c = node.value.shape()[1];
                    let mut gx = vec![0.0; g.len()];
                    for ((p, gr), o) in node.value.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dotp: f64 = p.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            o[j] = p[j] * (gr[j] - dotp);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, g),
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.iter().zip(self.value(*b).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.iter().zip(self.value(*a).data()).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale(x, factor) => {
                    accumulate(&mut grads, *x, g.iter().map(|v| v * factor).collect());
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mix { a, b, weights } => {
                    let w = node.value.row_len();
                    if self.needs(*a) {
                        let ga = g.iter().enumerate().map(|(i, v)| v * weights[i / w]).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.iter().enumerate().map(|(i, v)| v * (1.0 - weights[i / w])).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::GatherRows { input, idx } => {
                    let ti = self.value(*input);
                    let w = ti.row_len();
                    let mut gi = vec![0.0; ti.len()];
                    for (r, &src) in idx.iter().enumerate() {
                        for (o, v) in gi[src * w..(src + 1) * w].iter_mut().zip(&g[r * w..(r + 1) * w]) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *input, gi);
                }
                Op::SoftCrossEntropy { logits, target, probs } => {
                    let c = target.shape()[1];
                    let m = target.rows() as f64;
                    let mut gz = vec![0.0; probs.len()];
                    for ((p, y), o) in probs.chunks(c).zip(target.data().chunks(c)).zip(gz.chunks_mut(c)) {
                        let ysum: f64 = y.iter().sum();
                        for j in 0..c {
                            o[j] = g[0] * (p[j] * ysum - y[j]) / m;
                        }
                    }
                    accumulate(&mut grads, *logits, gz);
                }
                Op::BinaryCrossEntropy { logits, target } => {
                    let n = target.len() as f64;
                    let gz = self
                        .value(*logits)
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&z, &y)| g[0] * (sigmoid(z) - y) / n)
                        .collect();
                    accumulate(&mut grads, *logits, gz);
                }
                Op::L2Loss { pred, target } => {
                    let n = target.len() as f64;
                    let gp = self
                        .value(*pred)
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&p, &y)| g[0] * 2.0 * (p - y) / n)
                        .collect();
                    accumulate(&mut grads, *pred, gp);
                }
            }
        }
        Ok(Gradients::new(out))
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert_eq!(err.kind(), "dimension");
    }

    #[test]
    fn conv_of_ones_and_pointwise_scaling() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let k = tape.constant(Tensor::filled(&[1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);

        let data: Vec<f64> = (0..2 * 4 * 5).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.constant(t(&[1, 2, 4, 5], &data));
        let k = tape.constant(t(&[2, 2, 1, 1], &[2.0, 0.0, 0.0, 2.0]));
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 4, 5]);
        let doubled: Vec<f64> = data.iter().map(|v| 2.0 * v).collect();
        assert_eq!(tape.value(y).data(), &doubled[..]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
        assert!(matches!(tape.conv2d(x, k, 1, 1), Err(Error::Dimension { .. })));
        assert!(tape.conv2d(x, k, 1, 2).is_ok());
    }

    #[test]
    fn elementwise_activations() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        let z = tape.constant(Tensor::zeros(&[1, 3]));
        let p = tape.softmax_rows(z).unwrap();
        for &v in tape.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(&[1, 2]));
        let l = tape.soft_cross_entropy(z, &t(&[1, 2], &[0.7, 0.3])).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        // uniform prediction over 5 classes gives log 5 for any target
        let z = tape.constant(Tensor::filled(&[1, 5], 3.0));
        let l = tape.soft_cross_entropy(z, &t(&[1, 5], &[0.1, 0.2, 0.3, 0.4, 0.0])).unwrap();
        assert!((tape.value(l).data()[0] - 5f64.ln()).abs() < 1e-12);

        let z = tape.constant(t(&[1, 3], &[60.0, 0.0, 0.0]));
        let l = tape.soft_cross_entropy(z, &t(&[1, 3], &[1.0, 0.0, 0.0])).unwrap();
        assert!(tape.value(l).data()[0] < 1e-20);

        let bad = tape.soft_cross_entropy(z, &t(&[1, 3], &[0.5, 0.0, 0.0]));
        assert!(matches!(bad, Err(Error::Validation(_))));
    }

    #[test]
    fn binary_cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let l = tape.binary_cross_entropy(z, &Tensor::scalar(0.5)).unwrap();
        assert!((tape.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-12);

        let z = tape.constant(Tensor::scalar(1.0));
        let l = tape.binary_cross_entropy(z, &Tensor::scalar(1.0)).unwrap();
        let want = -(1.0 / (1.0 + (-1.0f64).exp())).ln();
        assert!((tape.value(l).data()[0] - want).abs() < 1e-12);
        assert!((want - 0.3133).abs() < 1e-4);

        let z = tape.constant(Tensor::scalar(800.0));
        let l = tape.binary_cross_entropy(z, &Tensor::scalar(1.0)).unwrap();
        assert!(tape.value(l).data()[0].is_finite() && tape.value(l).data()[0] < 1e-300);
    }

    #[test]
    fn l2_loss_values() {
        let mut tape = Tape::new();
        let p = tape.constant(t(&[1, 2], &[1.0, 0.0]));
        let l = tape.l2_loss(p, &t(&[1, 2], &[0.0, 1.0])).unwrap();
        assert_eq!(tape.value(l).data(), &[1.0]);
        let p = tape.constant(t(&[1, 2], &[0.6, 0.4]));
        let l = tape.l2_loss(p, &t(&[1, 2], &[0.5, 0.5])).unwrap();
        assert!((tape.value(l).data()[0] - 0.01).abs() < 1e-15);
        let l = tape.l2_loss(p, &t(&[1, 2], &[0.6, 0.4])).unwrap();
        assert_eq!(tape.value(l).data(), &[0.0]);
        assert!(tape.l2_loss(p, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut store = ParamStore::new();
        store.add("theta", t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
        let mut tape = Tape::new();
        let p = tape.param(&store, 0);
        let s = tape.sum(p);
        let g = tape.backward(s, &store).unwrap();
        assert_eq!(g.get(0).data(), &[1.0; 4]);

        let mut tape = Tape::new();
        let p = tape.param(&store, 0);
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s, &store).unwrap();
        assert_eq!(g.get(0).data(), &[2.0, -4.0, 1.0, 6.0]);

        let err = tape.backward(sq, &store).unwrap_err();
        assert_eq!(err.kind(), "usage");
    }

    #[test]
    fn backward_is_deterministic() {
        let mut store = ParamStore::new();
        store.add("w", t(&[3, 2], &[0.1, -0.4, 0.3, 0.9, -0.2, 0.5]));
        let run = || {
            let mut tape = Tape::new();
            let x = tape.constant(t(&[2, 3], &[1.0, 2.0, -1.0, 0.5, 0.0, 2.0]));
            let w = tape.param(&store, 0);
            let z = tape.matmul(x, w).unwrap();
            let l = tape.soft_cross_entropy(z, &t(&[2, 2], &[1.0, 0.0, 0.3, 0.7])).unwrap();
            tape.backward(l, &store).unwrap()
        };
        assert_eq!(run().get(0), run().get(0));
    }
}
