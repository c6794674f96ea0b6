//! Cross-hand feature interaction.
//!
//! Hand-coordinated asymmetric attention subtracts a learned multiple of the
//! peer stream's self-attention from the own stream's self-attention, per
//! head:
//!
//! ```text
//! Attn_s = softmax(Q_s K_sᵀ/√d_k) V_s − λ_s · softmax(Q_p K_pᵀ/√d_k) V_p
//! λ      = exp(Σ l1q·l1k) − exp(Σ l2q·l2k) + λ_init
//! ```
//!
//! Components shared by both streams cancel when `λ ≈ 1`; what differs
//! between the hands survives. Concatenation and plain cross-attention are
//! provided as drop-in alternatives with the same shapes in and out.

use std::fmt;
use std::str::FromStr;

use crate::networks::layers::{bind, multi_head, Init, Linear, QkvProjection};
use crate::networks::Hand;
use crate::numkit::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

/// Dot products inside the exponentials are clamped to this range.
pub const LAMBDA_EXP_CLAMP: f64 = 20.0;
pub const DEFAULT_LAMBDA_INIT: f64 = 0.78;
/// Alternative offsets kept as presets.
pub const LAMBDA_INIT_PRESETS: [f64; 4] = [0.1, 0.3, 0.5, DEFAULT_LAMBDA_INIT];
/// Standard deviation of the initial λ vectors.
const LAMBDA_VECTOR_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FusionMode {
    None,
    Concat,
    CrossAttention,
    Hcaa,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [FusionMode::None, FusionMode::Concat, FusionMode::CrossAttention, FusionMode::Hcaa];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::None => "none",
            FusionMode::Concat => "concat",
            FusionMode::CrossAttention => "cross_attention",
            FusionMode::Hcaa => "hcaa",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown fusion mode {s:?}"))
    }
}

/// Intermediate features a stream exports at a fusion point.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamFeatures {
    pub values: Tensor,
    pub hand: Hand,
}

/// Learnable vectors behind λ, one row per head.
#[derive(Clone, Debug)]
pub struct HcaaParams {
    pub lambda_init: f64,
    pub l1q: ParamId,
    pub l1k: ParamId,
    pub l2q: ParamId,
    pub l2k: ParamId,
}

impl HcaaParams {
    pub fn new(ps: &mut ParamStore, name: &str, heads: usize, head_dim: usize, lambda_init: f64, rng: &mut RngStream) -> Self {
        assert!(lambda_init > 0.0 && lambda_init <= 1.0, "lambda_init must lie in (0, 1]");
        let mut vec = |suffix: &str| {
            let t = Tensor::from_fn(&[heads, head_dim], |_| LAMBDA_VECTOR_STD * rng.normal());
            ps.add(format!("{name}.{suffix}"), t)
        };
        let (l1q, l1k, l2q, l2k) = (vec("lambda_q1"), vec("lambda_k1"), vec("lambda_q2"), vec("lambda_k2"));
        Self { lambda_init, l1q, l1k, l2q, l2k }
    }

    pub fn heads(&self, ps: &ParamStore) -> usize {
        ps.value(self.l1q).shape()[0]
    }

    /// Set all four vectors to zero, so λ equals `lambda_init`.
    pub fn zero(&self, ps: &mut ParamStore) {
        for id in [self.l1q, self.l1k, self.l2q, self.l2k] {
            ps.value_mut(id).fill(0.0);
        }
    }
}

/// λ per head as a `[1, heads]` node.
pub fn compute_lambda(tape: &mut Tape, ps: &ParamStore, p: &HcaaParams, frozen: bool) -> Var {
    let heads = p.heads(ps);
    let mut branch = |q: ParamId, k: ParamId| {
        let q = bind(tape, ps, q, frozen);
        let k = bind(tape, ps, k, frozen);
        let prod = tape.mul(q, k);
        let dot = tape.sum_last(prod);
        let dot = tape.clamp(dot, -LAMBDA_EXP_CLAMP, LAMBDA_EXP_CLAMP);
        tape.exp(dot)
    };
    let l1 = branch(p.l1q, p.l1k);
    let l2 = branch(p.l2q, p.l2k);
    let diff = tape.sub(l1, l2);
    let offset = tape.leaf(Tensor::full(&[heads], p.lambda_init));
    let lambda = tape.add(diff, offset);
    tape.reshape(lambda, &[1, heads])
}

/// λ per head evaluated directly from the stored parameters.
pub fn lambda_values(ps: &ParamStore, p: &HcaaParams) -> Vec<f64> {
    let dot = |q: ParamId, k: ParamId, h: usize| -> f64 {
        let (q, k) = (ps.value(q), ps.value(k));
        let s: f64 = q.row(h).iter().zip(k.row(h)).map(|(a, b)| a * b).sum();
        s.clamp(-LAMBDA_EXP_CLAMP, LAMBDA_EXP_CLAMP)
    };
    (0..p.heads(ps))
        .map(|h| dot(p.l1q, p.l1k, h).exp() - dot(p.l2q, p.l2k, h).exp() + p.lambda_init)
        .collect()
}

/// Per-head differential attention before the output projection.
///
/// Each stream's Q/K/V come from its own features through its own
/// projections; `peer_frozen` binds the peer projections as constants.
#[allow(clippy::too_many_arguments)]
pub fn hcaa_heads(
    tape: &mut Tape,
    ps: &ParamStore,
    own: Var,
    peer: Var,
    own_proj: &QkvProjection,
    peer_proj: &QkvProjection,
    peer_frozen: bool,
    lambda: Var,
    heads: usize,
) -> Var {
    assert_eq!(tape.shape(own), tape.shape(peer), "stream features differ in shape");
    let d = tape.shape(own)[1];
    assert!(d % heads == 0, "{heads} heads do not divide width {d}");
    assert_eq!(tape.shape(lambda), &[1, heads], "one lambda per head");
    let (qo, ko, vo) = own_proj.project(tape, ps, own, false);
    let (qp, kp, vp) = peer_proj.project(tape, ps, peer, peer_frozen);
    let own_attn = multi_head(tape, qo, ko, vo, heads);
    let peer_attn = multi_head(tape, qp, kp, vp, heads);
    let dk = d / heads;
    let parts: Vec<Var> = (0..heads)
        .map(|h| {
            let (s, e) = (h * dk, (h + 1) * dk);
            let a = tape.slice_cols(own_attn, s, e);
            let b = tape.slice_cols(peer_attn, s, e);
            let lam = tape.slice_cols(lambda, h, h + 1);
            let scaled = tape.scale_by(b, lam);
            tape.sub(a, scaled)
        })
        .collect();
    if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_cols(&parts)
    }
}

/// Weights of one stream's HCAA block.
#[derive(Clone, Debug)]
pub struct HcaaBlock {
    pub qkv: QkvProjection,
    pub out: Linear,
    pub lambda: HcaaParams,
    pub heads: usize,
}

impl HcaaBlock {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, lambda_init: f64, rng: &mut RngStream) -> Self {
        assert!(dim % heads == 0, "{heads} heads do not divide width {dim}");
        Self {
            qkv: QkvProjection::new(ps, name, dim, rng),
            out: Linear::new(ps, &format!("{name}.o"), dim, dim, true, Init::Zeros, rng),
            lambda: HcaaParams::new(ps, name, heads, dim / heads, lambda_init, rng),
            heads,
        }
    }

    /// Output-projected differential attention of `own` against `peer`.
    pub fn attend(&self, tape: &mut Tape, ps: &ParamStore, own: Var, peer: Var, peer_block: &HcaaBlock, peer_frozen: bool) -> Var {
        let lambda = compute_lambda(tape, ps, &self.lambda, false);
        let heads = hcaa_heads(tape, ps, own, peer, &self.qkv, &peer_block.qkv, peer_frozen, lambda, self.heads);
        self.out.forward(tape, ps, heads)
    }
}

/// Channelwise concatenation followed by a projection back to `d`.
pub fn fuse_concat(tape: &mut Tape, ps: &ParamStore, own: Var, peer: Var, proj: &Linear) -> Var {
    assert_eq!(tape.shape(own), tape.shape(peer), "stream features differ in shape");
    let cat = tape.concat_cols(&[own, peer]);
    proj.forward(tape, ps, cat)
}

/// Queries from `own`, keys and values from `peer`; residual onto `own`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub qkv: QkvProjection,
    pub out: Linear,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut RngStream) -> Self {
        assert!(dim % heads == 0, "{heads} heads do not divide width {dim}");
        Self {
            qkv: QkvProjection::new(ps, name, dim, rng),
            out: Linear::new(ps, &format!("{name}.o"), dim, dim, true, Init::Zeros, rng),
            heads,
        }
    }
}

pub fn fuse_cross_attention(tape: &mut Tape, ps: &ParamStore, own: Var, peer: Var, w: &CrossAttention) -> Var {
    assert_eq!(tape.shape(own), tape.shape(peer), "stream features differ in shape");
    let q = w.qkv.q.forward(tape, ps, own);
    let k = w.qkv.k.forward(tape, ps, peer);
    let v = w.qkv.v.forward(tape, ps, peer);
    let attn = multi_head(tape, q, k, v, w.heads);
    let proj = w.out.forward(tape, ps, attn);
    tape.add(own, proj)
}

/// Fusion weights for one stream at one fusion point.
#[derive(Clone, Debug)]
pub enum Fusion {
    Concat(Linear),
    CrossAttention(CrossAttention),
    Hcaa(HcaaBlock),
}

impl Fusion {
    /// `None` for [`FusionMode::None`].
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        mode: FusionMode,
        dim: usize,
        heads: usize,
        lambda_init: f64,
        rng: &mut RngStream,
    ) -> Option<Self> {
        match mode {
            FusionMode::None => None,
            FusionMode::Concat => {
                let proj = Linear::new(ps, &format!("{name}.concat"), 2 * dim, dim, true, Init::Zeros, rng);
                // start as the identity on the own half: [I; 0]
                let w = ps.value_mut(proj.weight);
                for i in 0..dim {
                    w.data_mut()[i * dim + i] = 1.0;
                }
                Some(Fusion::Concat(proj))
            }
            FusionMode::CrossAttention => Some(Fusion::CrossAttention(CrossAttention::new(ps, &format!("{name}.cross"), dim, heads, rng))),
            FusionMode::Hcaa => Some(Fusion::Hcaa(HcaaBlock::new(ps, &format!("{name}.hcaa"), dim, heads, lambda_init, rng))),
        }
    }

    pub fn mode(&self) -> FusionMode {
        match self {
            Fusion::Concat(_) => FusionMode::Concat,
            Fusion::CrossAttention(_) => FusionMode::CrossAttention,
            Fusion::Hcaa(_) => FusionMode::Hcaa,
        }
    }

    /// Features that replace `own` for the rest of the forward pass.
    ///
    /// `peer_fusion` is the peer stream's fusion block at the same point; HCAA
    /// uses its projections for the subtracted term.
    pub fn apply(&self, tape: &mut Tape, ps: &ParamStore, own: Var, peer: Var, peer_fusion: &Fusion, peer_frozen: bool) -> Var {
        match (self, peer_fusion) {
            (Fusion::Concat(proj), _) => fuse_concat(tape, ps, own, peer, proj),
            (Fusion::CrossAttention(w), _) => fuse_cross_attention(tape, ps, own, peer, w),
            (Fusion::Hcaa(block), Fusion::Hcaa(peer_block)) => {
                let delta = block.attend(tape, ps, own, peer, peer_block, peer_frozen);
                tape.add(own, delta)
            }
            (Fusion::Hcaa(_), other) => panic!("HCAA stream paired with a {} peer", other.mode()),
        }
    }

    pub fn hcaa(&self) -> Option<&HcaaBlock> {
        match self {
            Fusion::Hcaa(b) => Some(b),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::layers::attention;
    use crate::numkit::grad_check;

    fn features(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = RngStream::new(seed, 77);
        Tensor::from_fn(&[n, d], |_| rng.normal())
    }

    #[test]
    fn zero_vectors_give_lambda_init() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(1, 0);
        let p = HcaaParams::new(&mut ps, "h", 4, 3, DEFAULT_LAMBDA_INIT, &mut rng);
        p.zero(&mut ps);
        for l in lambda_values(&ps, &p) {
            assert_eq!(l, DEFAULT_LAMBDA_INIT);
        }
        let mut tape = Tape::new();
        let l = compute_lambda(&mut tape, &ps, &p, false);
        assert!(tape.value(l).data().iter().all(|&v| v == DEFAULT_LAMBDA_INIT));
    }

    #[test]
    fn lambda_hand_value() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(1, 0);
        let p = HcaaParams::new(&mut ps, "h", 1, 2, 0.78, &mut rng);
        p.zero(&mut ps);
        // l1q·l1k = ln 2
        ps.value_mut(p.l1q).data_mut().copy_from_slice(&[1.0, 0.0]);
        ps.value_mut(p.l1k).data_mut().copy_from_slice(&[2f64.ln(), 5.0]);
        let l = lambda_values(&ps, &p)[0];
        assert!((l - 1.78).abs() < 1e-12, "{l}");
        let mut tape = Tape::new();
        let lv = compute_lambda(&mut tape, &ps, &p, false);
        assert!((tape.value(lv).item() - 1.78).abs() < 1e-12);
    }

    #[test]
    fn symmetric_branches_cancel() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(9, 0);
        let p = HcaaParams::new(&mut ps, "h", 2, 3, 0.3, &mut rng);
        let (q, k) = (ps.value(p.l1q).clone(), ps.value(p.l1k).clone());
        *ps.value_mut(p.l2q) = q;
        *ps.value_mut(p.l2k) = k;
        for l in lambda_values(&ps, &p) {
            assert!((l - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn exponent_is_clamped() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(2, 0);
        let p = HcaaParams::new(&mut ps, "h", 1, 1, 0.5, &mut rng);
        p.zero(&mut ps);
        ps.value_mut(p.l1q).data_mut()[0] = 1e3;
        ps.value_mut(p.l1k).data_mut()[0] = 1e3;
        let l = lambda_values(&ps, &p)[0];
        assert!(l.is_finite());
        assert!((l - (20f64.exp() - 1.0 + 0.5)).abs() < 1e-6);
    }

    struct Pair {
        ps: ParamStore,
        own: HcaaBlock,
        peer: HcaaBlock,
    }

    fn pair(dim: usize, heads: usize) -> Pair {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(4, 0);
        let own = HcaaBlock::new(&mut ps, "own", dim, heads, DEFAULT_LAMBDA_INIT, &mut rng);
        let peer = HcaaBlock::new(&mut ps, "peer", dim, heads, DEFAULT_LAMBDA_INIT, &mut rng);
        Pair { ps, own, peer }
    }

    /// Force λ to `value` on every head: λ = e^a − 1 + λ_init with l2 = 0.
    fn force_lambda(ps: &mut ParamStore, p: &HcaaParams, value: f64) {
        p.zero(ps);
        let a = (value - p.lambda_init + 1.0).ln();
        let heads = p.heads(ps);
        let dk = ps.value(p.l1q).shape()[1];
        for h in 0..heads {
            ps.value_mut(p.l1q).data_mut()[h * dk] = 1.0;
            ps.value_mut(p.l1k).data_mut()[h * dk] = a;
        }
    }

    #[test]
    fn zero_lambda_is_plain_self_attention() {
        let Pair { mut ps, own, peer } = pair(6, 2);
        force_lambda(&mut ps, &own.lambda, 0.0);
        let (x, y) = (features(5, 6, 1), features(5, 6, 2));
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x), tape.leaf(y));
        let lam = compute_lambda(&mut tape, &ps, &own.lambda, false);
        assert!(tape.value(lam).max_abs() < 1e-15);
        let out = hcaa_heads(&mut tape, &ps, xv, yv, &own.qkv, &peer.qkv, true, lam, 2);
        let (q, k, v) = own.qkv.project(&mut tape, &ps, xv, false);
        let plain = multi_head(&mut tape, q, k, v, 2);
        assert!(tape.value(out).max_abs_diff(tape.value(plain)) < 1e-15);
    }

    #[test]
    fn common_mode_cancels() {
        let Pair { mut ps, own, .. } = pair(8, 2);
        force_lambda(&mut ps, &own.lambda, 1.0);
        let x = features(7, 8, 3);
        let mut tape = Tape::new();
        let (a, b) = (tape.leaf(x.clone()), tape.leaf(x));
        let lam = compute_lambda(&mut tape, &ps, &own.lambda, false);
        let out = hcaa_heads(&mut tape, &ps, a, b, &own.qkv, &own.qkv, false, lam, 2);
        assert!(tape.value(out).max_abs() < 1e-6);
    }

    #[test]
    fn single_frame_reduces_to_value_difference() {
        // identity value projections, V_own = 2, V_peer = 1
        let Pair { mut ps, own, peer } = pair(2, 1);
        own.lambda.zero(&mut ps);
        for block in [&own, &peer] {
            let w = ps.value_mut(block.qkv.v.weight);
            w.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::full(&[1, 2], 2.0));
        let b = tape.leaf(Tensor::full(&[1, 2], 1.0));
        let lam = compute_lambda(&mut tape, &ps, &own.lambda, false);
        let out = hcaa_heads(&mut tape, &ps, a, b, &own.qkv, &peer.qkv, true, lam, 1);
        for &v in tape.value(out).data() {
            assert!((v - 1.22).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn concat_cases() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(6, 0);
        let Some(Fusion::Concat(proj)) = Fusion::new(&mut ps, "f", FusionMode::Concat, 3, 1, 0.78, &mut rng) else {
            unreachable!()
        };
        let (x, y) = (features(4, 3, 1), features(4, 3, 2));
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
        let out = fuse_concat(&mut tape, &ps, xv, yv, &proj);
        assert!(tape.value(out).max_abs_diff(&x) < 1e-15, "initial projection is [I 0]");

        ps.value_mut(proj.weight).fill(0.0);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
        let out = fuse_concat(&mut tape, &ps, xv, yv, &proj);
        assert_eq!(tape.value(out).max_abs(), 0.0);

        ps.randomize(&mut rng, 0.5);
        let ids: Vec<_> = ps.ids().collect();
        let err = grad_check(&mut ps, &ids, 1e-5, 8, |tape, ps| {
            let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
            let o = fuse_concat(tape, ps, xv, yv, &proj);
            let sq = tape.mul(o, o);
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn cross_attention_cases() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(8, 0);
        let w = CrossAttention::new(&mut ps, "ca", 4, 2, &mut rng);
        let (x, y) = (features(5, 4, 1), features(5, 4, 2));

        ps.randomize(&mut rng, 0.5);
        ps.value_mut(w.qkv.v.weight).fill(0.0);
        ps.value_mut(w.out.bias.unwrap()).fill(0.0);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
        let out = fuse_cross_attention(&mut tape, &ps, xv, yv, &w);
        assert!(tape.value(out).max_abs_diff(&x) < 1e-15);

        // single key: attention weight is 1, output = own + proj(V_peer)
        ps.randomize(&mut rng, 0.5);
        let (x1, y1) = (features(1, 4, 5), features(1, 4, 6));
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x1.clone()), tape.leaf(y1.clone()));
        let out = fuse_cross_attention(&mut tape, &ps, xv, yv, &w);
        let vp = ps.value(w.qkv.v.weight);
        let expect = x1.zip_map(
            &y1.matmul(vp).matmul(ps.value(w.out.weight)).zip_map(&ps.value(w.out.bias.unwrap()).clone().reshape(&[1, 4]), |a, b| a + b),
            |a, b| a + b,
        );
        assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);

        let ids: Vec<_> = ps.ids().collect();
        let err = grad_check(&mut ps, &ids, 1e-5, 8, |tape, ps| {
            let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
            let o = fuse_cross_attention(tape, ps, xv, yv, &w);
            let sq = tape.mul(o, o);
            tape.mean_all(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn hcaa_gradients_reach_lambda_vectors() {
        let Pair { mut ps, own, peer } = pair(4, 2);
        let mut rng = RngStream::new(12, 0);
        ps.randomize(&mut rng, 0.4);
        let (x, y) = (features(5, 4, 7), features(5, 4, 8));
        let ids = ps.ids_with_prefix("own");
        let err = grad_check(&mut ps, &ids, 1e-5, 12, |tape, ps| {
            let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
            let o = own.attend(tape, ps, xv, yv, &peer, true);
            let sq = tape.mul(o, o);
            tape.mean_all(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");

        // the frozen peer block receives no gradient
        let mut tape = Tape::new();
        let (xv, yv) = (tape.leaf(x.clone()), tape.leaf(y.clone()));
        let o = own.attend(&mut tape, &ps, xv, yv, &peer, true);
        let l = tape.sum_all(o);
        let g = tape.backward(l);
        let peer_ids = ps.ids_with_prefix("peer");
        assert!(g.params().iter().all(|(id, _)| !peer_ids.contains(id)));
        assert!(g.params().iter().any(|(id, _)| *id == own.lambda.l1q));
    }

    #[test]
    fn single_head_attention_row_weights_sum_to_one() {
        let mut tape = Tape::new();
        let q = tape.leaf(features(3, 2, 1));
        let k = tape.leaf(features(4, 2, 2));
        let v = tape.leaf(Tensor::full(&[4, 1], 1.0));
        let out = attention(&mut tape, q, k, v);
        for &x in tape.value(out).data() {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_modes_parse() {
        for m in FusionMode::ALL {
            assert_eq!(m.as_str().parse::<FusionMode>().unwrap(), m);
        }
        assert!("sum".parse::<FusionMode>().is_err());
    }
}
