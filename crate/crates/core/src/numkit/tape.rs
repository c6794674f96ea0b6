//! Wengert tape for reverse-mode differentiation.
//!
//! Operations append nodes holding their forward value; `backward` walks the
//! tape in reverse and applies each op's vector-Jacobian product. Shape
//! mismatches are contract violations and panic. Non-finite values are
//! recorded and surfaced through [`Tape::check`].

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nt_into, matmul_tn_into, Tensor};
use super::NumError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Im2col { x: Var, kernel: usize, dilation: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SumAll(Var),
    MeanAll(Var),
    SumLast(Var),
    MeanRows(Var),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[inline]
fn replicate_index(i: usize, j: usize, kernel: usize, dilation: usize, n: usize) -> usize {
    (i + j * dilation).saturating_sub(kernel / 2 * dilation).min(n - 1)
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

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// First op that produced a non-finite value, if any.
    pub fn check(&self) -> Result<(), NumError> {
        match self.non_finite {
            Some(op) => Err(NumError::NonFinite { op }),
            None => Ok(()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> Result<f64, NumError> {
        self.check()?;
        Ok(self.value(v).item())
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, "leaf")
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), "param")
    }

    /// Copy of `v` with no gradient path back to its inputs.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.leaf(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b), "mul")
    }

    /// `a[.., n] + row[n]`, broadcast over every leading index.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let n = av.cols();
        assert_eq!(rv.numel(), n, "add_row width mismatch");
        let mut t = av.clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (x, r) in chunk.iter_mut().zip(rv.data()) {
                *x += r;
            }
        }
        self.push(t, Op::AddRow(a, row), "add_row")
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        let n = av.cols();
        assert_eq!(rv.numel(), n, "mul_row width mismatch");
        let mut t = av.clone();
        for chunk in t.data_mut().chunks_mut(n) {
            for (x, r) in chunk.iter_mut().zip(rv.data()) {
                *x *= r;
            }
        }
        self.push(t, Op::MulRow(a, row), "mul_row")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::Scale(a, c), "scale")
    }

    /// Tensor times a one-element tensor.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let c = self.value(s).item();
        let t = self.value(a).map(|x| x * c);
        self.push(t, Op::ScaleBy(a, s), "scale_by")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).matmul(self.value(b));
        self.push(t, Op::MatMul(a, b), "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a), "transpose")
    }

    /// Unfold `x[N×C]` into `[N × kernel·C]` windows centred on each frame,
    /// padding by replicating the edge frames.
    pub fn im2col(&mut self, x: Var, kernel: usize) -> Var {
        self.im2col_dilated(x, kernel, 1)
    }

    /// [`Self::im2col`] with taps spaced `dilation` frames apart.
    pub fn im2col_dilated(&mut self, x: Var, kernel: usize, dilation: usize) -> Var {
        assert!(dilation >= 1, "dilation must be positive");
        assert!(kernel % 2 == 1, "kernel must be odd");
        let xv = self.value(x);
        assert_eq!(xv.rank(), 2, "im2col expects [frames, channels]");
        let (n, c) = (xv.shape()[0], xv.shape()[1]);
        let mut out = vec![0.0; n * kernel * c];
        for i in 0..n {
            for j in 0..kernel {
                let src = replicate_index(i, j, kernel, dilation, n);
                let dst = (i * kernel + j) * c;
                out[dst..dst + c].copy_from_slice(&xv.data()[src * c..(src + 1) * c]);
            }
        }
        let t = Tensor::new(vec![n, kernel * c], out);
        self.push(t, Op::Im2col { x, kernel, dilation }, "im2col")
    }

    /// Normalize each last-dimension slice to zero mean, unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let n = xv.cols();
        let mut out = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.rows());
        for chunk in out.data_mut().chunks_mut(n) {
            let mean = chunk.iter().sum::<f64>() / n as f64;
            let var = chunk.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in chunk.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(out, Op::LayerNorm { x, inv_std }, "layer_norm")
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        self.push(t, Op::Gelu(a), "gelu")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), "exp")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(t, Op::Clamp { x: a, lo, hi }, "clamp")
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        softmax_rows(&mut t);
        self.push(t, Op::Softmax(a), "softmax")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            assert_eq!(self.value(p).rank(), 2, "concat_cols expects rank 2");
            assert_eq!(self.value(p).rows(), rows, "concat_cols row mismatch");
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![rows, total], out);
        self.push(t, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2, "slice_cols expects rank 2");
        assert!(start < end && end <= av.cols(), "slice {start}..{end} out of range");
        let rows = av.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&av.row(r)[start..end]);
        }
        let t = Tensor::new(vec![rows, end - start], out);
        self.push(t, Op::SliceCols { x: a, start }, "slice_cols")
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::SumAll(a), "sum_all")
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let t = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push(t, Op::MeanAll(a), "mean_all")
    }

    /// Sum over the last dimension; `[.., n] -> [..]` (rank-1 input gives `[1]`).
    pub fn sum_last(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.cols();
        let data: Vec<f64> = v.data().chunks(n).map(|c| c.iter().sum()).collect();
        let shape = if v.rank() == 1 { vec![1] } else { v.shape()[..v.rank() - 1].to_vec() };
        let t = Tensor::new(shape, data);
        self.push(t, Op::SumLast(a), "sum_last")
    }

    /// Mean over rows of a rank-2 tensor; `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        assert_eq!(v.rank(), 2);
        let (m, n) = (v.shape()[0], v.shape()[1]);
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(v.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let t = Tensor::new(vec![1, n], out);
        self.push(t, Op::MeanRows(a), "mean_rows")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape);
        self.push(t, Op::Reshape(a), "reshape")
    }

    /// Reverse sweep from a one-element output.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.apply_vjp(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Tensor)> = Vec::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads[idx]) {
                match params.iter_mut().find(|(pid, _)| pid == id) {
                    Some((_, acc)) => acc.add_assign(g),
                    None => params.push((*id, g.clone())),
                }
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Gradients { grads, params }
    }

    fn apply_vjp(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                accum(grads, *a, g);
                accum(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accum(grads, *a, g);
                accum(grads, *b, &g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accum(grads, *a, &g.zip_map(val(*b), |x, y| x * y));
                accum(grads, *b, &g.zip_map(val(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accum(grads, *a, g);
                let rv = val(*row);
                let n = rv.numel();
                let mut gr = vec![0.0; n];
                for chunk in g.data().chunks(n) {
                    for (o, x) in gr.iter_mut().zip(chunk) {
                        *o += x;
                    }
                }
                accum(grads, *row, &Tensor::new(rv.shape().to_vec(), gr));
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (val(*a), val(*row));
                let n = rv.numel();
                let mut ga = g.clone();
                let mut gr = vec![0.0; n];
                for (gc, ac) in ga.data_mut().chunks_mut(n).zip(av.data().chunks(n)) {
                    for j in 0..n {
                        gr[j] += gc[j] * ac[j];
                        gc[j] *= rv.data()[j];
                    }
                }
                accum(grads, *a, &ga);
                accum(grads, *row, &Tensor::new(rv.shape().to_vec(), gr));
            }
            Op::Scale(a, c) => accum(grads, *a, &g.map(|x| x * c)),
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                accum(grads, *a, &g.map(|x| x * c));
                let gs: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accum(grads, *s, &Tensor::new(val(*s).shape().to_vec(), vec![gs]));
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut ga = vec![0.0; m * k];
                matmul_nt_into(g.data(), bv.data(), &mut ga, m, n, k);
                let mut gb = vec![0.0; k * n];
                matmul_tn_into(av.data(), g.data(), &mut gb, k, m, n);
                accum(grads, *a, &Tensor::new(vec![m, k], ga));
                accum(grads, *b, &Tensor::new(vec![k, n], gb));
            }
            Op::Transpose(a) => accum(grads, *a, &g.transpose()),
            Op::Im2col { x, kernel, dilation } => {
                let xv = val(*x);
                let (n, c) = (xv.shape()[0], xv.shape()[1]);
                let mut gx = vec![0.0; n * c];
                for i in 0..n {
                    for j in 0..*kernel {
                        let dst = replicate_index(i, j, *kernel, *dilation, n) * c;
                        let src = (i * kernel + j) * c;
                        for ch in 0..c {
                            gx[dst + ch] += g.data()[src + ch];
                        }
                    }
                }
                accum(grads, *x, &Tensor::new(vec![n, c], gx));
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = y.cols();
                let mut gx = g.clone();
                for ((gc, yc), is) in gx.data_mut().chunks_mut(n).zip(y.data().chunks(n)).zip(inv_std) {
                    let mean_g = gc.iter().sum::<f64>() / n as f64;
                    let mean_gy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for (gv, yv) in gc.iter_mut().zip(yc) {
                        *gv = is * (*gv - mean_g - yv * mean_gy);
                    }
                }
                accum(grads, *x, &gx);
            }
            Op::Gelu(a) => accum(grads, *a, &g.zip_map(val(*a), |gv, x| gv * gelu_grad(x))),
            Op::Exp(a) => accum(grads, *a, &g.zip_map(&node.value, |gv, y| gv * y)),
            Op::Clamp { x, lo, hi } => {
                let gx = g.zip_map(val(*x), |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 });
                accum(grads, *x, &gx);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let n = y.cols();
                let mut ga = g.clone();
                for (gc, yc) in ga.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                    for (gv, yv) in gc.iter_mut().zip(yc) {
                        *gv = yv * (*gv - dot);
                    }
                }
                accum(grads, *a, &ga);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    accum(grads, p, &Tensor::new(vec![rows, w], gp));
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let w = g.cols();
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    gx[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                accum(grads, *x, &Tensor::new(xv.shape().to_vec(), gx));
            }
            Op::SumAll(a) => {
                let gv = g.item();
                accum(grads, *a, &Tensor::full(val(*a).shape(), gv));
            }
            Op::MeanAll(a) => {
                let av = val(*a);
                accum(grads, *a, &Tensor::full(av.shape(), g.item() / av.numel() as f64));
            }
            Op::SumLast(a) => {
                let av = val(*a);
                let n = av.cols();
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, n)).collect();
                accum(grads, *a, &Tensor::new(av.shape().to_vec(), data));
            }
            Op::MeanRows(a) => {
                let av = val(*a);
                let m = av.shape()[0] as f64;
                let data = (0..av.rows()).flat_map(|_| g.data().iter().map(move |x| x / m)).collect();
                accum(grads, *a, &Tensor::new(av.shape().to_vec(), data));
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                accum(grads, *a, &g.clone().reshape(&shape));
            }
        }
    }
}

fn accum(grads: &mut [Option<Tensor>], v: Var, g: &Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(g),
        slot @ None => *slot = Some(g.clone()),
    }
}

/// In-place max-subtracted softmax over each last-dimension slice.
pub fn softmax_rows(t: &mut Tensor) {
    let n = t.cols();
    for chunk in t.data_mut().chunks_mut(n) {
        let max = chunk.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in chunk.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in chunk.iter_mut() {
            *v /= sum;
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients, merged over repeated registrations, sorted by id.
    pub fn params(&self) -> &[(ParamId, Tensor)] {
        &self.params
    }

    pub fn into_params(self) -> Vec<(ParamId, Tensor)> {
        self.params
    }
}
