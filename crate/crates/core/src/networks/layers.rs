//! Parameterized building blocks shared by every network.

use crate::numkit::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±√(3 / fan_in)`.
    FanIn,
    Zeros,
}

fn init_tensor(shape: &[usize], fan_in: usize, init: Init, rng: &mut RngStream) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(shape),
        Init::FanIn => {
            let bound = (3.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.uniform_range(-bound, bound))
        }
    }
}

/// Bind a parameter either as a trainable node or as a constant.
pub(crate) fn bind(tape: &mut Tape, ps: &ParamStore, id: ParamId, frozen: bool) -> Var {
    if frozen {
        tape.leaf(ps.value(id).clone())
    } else {
        tape.param(ps, id)
    }
}

/// `y = x·W + b` over the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut RngStream,
    ) -> Self {
        let weight = ps.add(format!("{name}.weight"), init_tensor(&[in_dim, out_dim], in_dim, init, rng));
        let bias = bias.then(|| ps.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var) -> Var {
        self.forward_with(tape, ps, x, false)
    }

    pub fn forward_with(&self, tape: &mut Tape, ps: &ParamStore, x: Var, frozen: bool) -> Var {
        let w = bind(tape, ps, self.weight, frozen);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = bind(tape, ps, b, frozen);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Stride-1 convolution along the frame axis with replicated edges.
///
/// Weight layout `[kernel·in, out]`, matching the window order of
/// [`Tape::im2col`].
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        init: Init,
        rng: &mut RngStream,
    ) -> Self {
        let fan_in = kernel * in_dim;
        let weight = ps.add(format!("{name}.weight"), init_tensor(&[fan_in, out_dim], fan_in, init, rng));
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self { weight, bias, kernel, dilation: 1 }
    }

    /// Space the taps `dilation` frames apart.
    pub fn dilated(self, dilation: usize) -> Self {
        Self { dilation, ..self }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var) -> Var {
        let cols = if self.kernel == 1 { x } else { tape.im2col_dilated(x, self.kernel, self.dilation) };
        let w = tape.param(ps, self.weight);
        let y = tape.matmul(cols, w);
        let b = tape.param(ps, self.bias);
        tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = ps.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0));
        let bias = ps.add(format!("{name}.bias"), Tensor::zeros(&[dim]));
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var) -> Var {
        let n = tape.layer_norm(x, LN_EPS);
        let g = tape.param(ps, self.gain);
        let b = tape.param(ps, self.bias);
        let y = tape.mul_row(n, g);
        tape.add_row(y, b)
    }
}

/// Scaled dot-product attention, one head: `softmax(q·kᵀ/√d)·v`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Var {
    let dk = tape.shape(q)[1];
    let kt = tape.transpose(k);
    let scores = tape.matmul(q, kt);
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    let weights = tape.softmax(scores);
    tape.matmul(weights, v)
}

/// Attention over `heads` column groups of already-projected q, k, v.
pub fn multi_head(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let d = tape.shape(q)[1];
    assert!(d % heads == 0, "{heads} heads do not divide width {d}");
    let dk = d / heads;
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let (s, e) = (h * dk, (h + 1) * dk);
            let qh = tape.slice_cols(q, s, e);
            let kh = tape.slice_cols(k, s, e);
            let vh = tape.slice_cols(v, s, e);
            attention(tape, qh, kh, vh)
        })
        .collect();
    if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)
    }
}

/// Query, key and value projections of one attention block.
#[derive(Clone, Debug)]
pub struct QkvProjection {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl QkvProjection {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, rng: &mut RngStream) -> Self {
        Self {
            q: Linear::new(ps, &format!("{name}.q"), dim, dim, false, Init::FanIn, rng),
            k: Linear::new(ps, &format!("{name}.k"), dim, dim, false, Init::FanIn, rng),
            v: Linear::new(ps, &format!("{name}.v"), dim, dim, false, Init::FanIn, rng),
        }
    }

    pub fn project(&self, tape: &mut Tape, ps: &ParamStore, x: Var, frozen: bool) -> (Var, Var, Var) {
        (
            self.q.forward_with(tape, ps, x, frozen),
            self.k.forward_with(tape, ps, x, frozen),
            self.v.forward_with(tape, ps, x, frozen),
        )
    }
}

/// Multi-head self-attention with a zero-initialized output projection.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub qkv: QkvProjection,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut RngStream) -> Self {
        assert!(dim % heads == 0, "{heads} heads do not divide width {dim}");
        Self {
            qkv: QkvProjection::new(ps, name, dim, rng),
            out: Linear::new(ps, &format!("{name}.o"), dim, dim, true, Init::Zeros, rng),
            heads,
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var) -> Var {
        let (q, k, v) = self.qkv.project(tape, ps, x, false);
        let heads = multi_head(tape, q, k, v, self.heads);
        self.out.forward(tape, ps, heads)
    }
}

/// Residual convolutional block with additive time conditioning:
/// `skip(x) + conv2(gelu(norm(conv1(x) + proj(temb))))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv1d,
    time_proj: Linear,
    norm: LayerNorm,
    conv2: Conv1d,
    skip: Option<Linear>,
}

impl ResBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        time_dim: usize,
        kernel: usize,
        rng: &mut RngStream,
    ) -> Self {
        Self {
            conv1: Conv1d::new(ps, &format!("{name}.conv1"), in_dim, out_dim, kernel, Init::FanIn, rng),
            time_proj: Linear::new(ps, &format!("{name}.time"), time_dim, out_dim, true, Init::FanIn, rng),
            norm: LayerNorm::new(ps, &format!("{name}.norm"), out_dim),
            conv2: Conv1d::new(ps, &format!("{name}.conv2"), out_dim, out_dim, kernel, Init::Zeros, rng),
            skip: (in_dim != out_dim)
                .then(|| Linear::new(ps, &format!("{name}.skip"), in_dim, out_dim, false, Init::FanIn, rng)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var, temb: Var) -> Var {
        let h = self.conv1.forward(tape, ps, x);
        let tp = self.time_proj.forward(tape, ps, temb);
        let h = tape.add_row(h, tp);
        let h = self.norm.forward(tape, ps, h);
        let h = tape.gelu(h);
        let h = self.conv2.forward(tape, ps, h);
        let skip = match &self.skip {
            Some(l) => l.forward(tape, ps, x),
            None => x,
        };
        tape.add(skip, h)
    }
}

/// `[n/2, n]` matrix averaging adjacent frame pairs.
pub fn pool_matrix(n: usize) -> Tensor {
    assert!(n % 2 == 0, "cannot halve {n} frames");
    let half = n / 2;
    let mut m = Tensor::zeros(&[half, n]);
    for i in 0..half {
        m.data_mut()[i * n + 2 * i] = 0.5;
        m.data_mut()[i * n + 2 * i + 1] = 0.5;
    }
    m
}

/// `[n, n/2]` nearest-neighbour upsampling matrix.
pub fn upsample_matrix(n: usize) -> Tensor {
    let half = n / 2;
    let mut m = Tensor::zeros(&[n, half]);
    for i in 0..n {
        m.data_mut()[i * half + i / 2] = 1.0;
    }
    m
}
