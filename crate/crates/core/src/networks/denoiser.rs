//! Frame-axis U-Net that predicts `v` for one hand stream.
//!
//! Each level runs `ResBlock -> MHSA -> fusion point -> ResBlock` with the
//! conditioning tensor concatenated at the level entry; skips are joined by
//! concatenation on the way up. The two hand streams advance level by level
//! in lockstep so intermediate features can be exchanged at fusion points.

use super::layers::{pool_matrix, upsample_matrix, Init, LayerNorm, Linear, ResBlock, SelfAttention};
use super::DenoiserConfig;
use crate::hcaa::Fusion;
use crate::numkit::{sinusoidal_embedding, ParamStore, RngStream, Tape, Tensor, Var};

/// Sinusoidal step embedding followed by a two-layer MLP.
#[derive(Clone, Debug)]
pub struct TimeEmbed {
    dim: usize,
    fc1: Linear,
    fc2: Linear,
}

impl TimeEmbed {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, rng: &mut RngStream) -> Self {
        assert!(dim % 2 == 0, "time embedding width must be even");
        Self {
            dim,
            fc1: Linear::new(ps, &format!("{name}.fc1"), dim, dim, true, Init::FanIn, rng),
            fc2: Linear::new(ps, &format!("{name}.fc2"), dim, dim, true, Init::FanIn, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The embedding before the MLP.
    pub fn sinusoid(&self, t: usize) -> Tensor {
        sinusoidal_embedding(t as f64, self.dim)
    }

    /// `[1, dim]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, t: usize) -> Var {
        let s = tape.leaf(self.sinusoid(t));
        let h = self.fc1.forward(tape, ps, s);
        let h = tape.gelu(h);
        self.fc2.forward(tape, ps, h)
    }
}

/// Evaluate a step embedding outside any training graph.
pub fn time_embed(ps: &ParamStore, te: &TimeEmbed, t: usize) -> Tensor {
    let mut tape = Tape::new();
    let v = te.forward(&mut tape, ps, t);
    tape.value(v).clone().reshape(&[te.dim()])
}

#[derive(Clone, Debug)]
struct DownLevel {
    entry: ResBlock,
    attn_norm: LayerNorm,
    attn: SelfAttention,
    fusion: Option<Fusion>,
    exit: ResBlock,
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    time: TimeEmbed,
    down: Vec<DownLevel>,
    up: Vec<ResBlock>,
    out_norm: LayerNorm,
    out: Linear,
}

/// Progress of one stream through the down path.
#[derive(Clone, Debug)]
pub struct StreamPass {
    h: Var,
    cond: Var,
    temb: Var,
    skips: Vec<Var>,
    level: usize,
}

impl Denoiser {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &DenoiserConfig, rng: &mut RngStream) -> Self {
        cfg.validate().expect("denoiser config");
        let dims = &cfg.dims;
        let tdim = dims[0];
        let width_in = cfg.joints * 3;
        let time = TimeEmbed::new(ps, &format!("{name}.time"), tdim, rng);
        let mut down = Vec::with_capacity(dims.len());
        for (l, &d) in dims.iter().enumerate() {
            let input = if l == 0 { width_in } else { dims[l - 1] };
            let p = format!("{name}.down{l}");
            down.push(DownLevel {
                entry: ResBlock::new(ps, &format!("{p}.entry"), input + cfg.cond_width, d, tdim, cfg.kernel, rng),
                attn_norm: LayerNorm::new(ps, &format!("{p}.attn_norm"), d),
                attn: SelfAttention::new(ps, &format!("{p}.attn"), d, cfg.heads, rng),
                fusion: if cfg.fuses_at(l) {
                    Fusion::new(ps, &format!("{p}.fusion"), cfg.fusion_mode, d, cfg.heads, cfg.lambda_init, rng)
                } else {
                    None
                },
                exit: ResBlock::new(ps, &format!("{p}.exit"), d, d, tdim, cfg.kernel, rng),
            });
        }
        let up = (0..dims.len() - 1)
            .map(|l| ResBlock::new(ps, &format!("{name}.up{l}"), dims[l + 1] + dims[l], dims[l], tdim, cfg.kernel, rng))
            .collect();
        let out_norm = LayerNorm::new(ps, &format!("{name}.out_norm"), dims[0]);
        let out = Linear::new(ps, &format!("{name}.out"), dims[0], width_in, true, Init::Zeros, rng);
        Self { cfg: cfg.clone(), time, down, up, out_norm, out }
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn time_embedding(&self) -> &TimeEmbed {
        &self.time
    }

    pub fn fusion(&self, level: usize) -> Option<&Fusion> {
        self.down[level].fusion.as_ref()
    }

    /// Frames beyond this distance from a perturbed input frame are
    /// unaffected when attention contributes nothing.
    pub fn receptive_radius(&self) -> usize {
        let r = (self.cfg.kernel - 1) / 2;
        (0..self.cfg.levels()).map(|l| (6 * r + 2) << l).sum()
    }

    /// Start a pass: `xt` is `[N, J·3]`, `cond` is `[N, cond_width]`.
    pub fn begin(&self, tape: &mut Tape, ps: &ParamStore, xt: Var, t: usize, cond: Var) -> StreamPass {
        let n = tape.shape(xt)[0];
        assert_eq!(tape.shape(xt)[1], self.cfg.joints * 3, "gesture width differs from the configured joints");
        assert_eq!(tape.shape(cond), &[n, self.cfg.cond_width], "conditioning shape");
        assert!(
            n % self.cfg.frame_multiple() == 0,
            "{n} frames not divisible by {}",
            self.cfg.frame_multiple()
        );
        let temb = self.time.forward(tape, ps, t);
        StreamPass { h: xt, cond, temb, skips: Vec::new(), level: 0 }
    }

    /// Run the current level up to its fusion point and return the
    /// post-attention features.
    pub fn to_fusion_point(&self, tape: &mut Tape, ps: &ParamStore, pass: &mut StreamPass) -> Var {
        let lvl = &self.down[pass.level];
        let x = tape.concat_cols(&[pass.h, pass.cond]);
        let h = lvl.entry.forward(tape, ps, x, pass.temb);
        let n = lvl.attn_norm.forward(tape, ps, h);
        let a = lvl.attn.forward(tape, ps, n);
        tape.add(h, a)
    }

    /// Finish the current level from (possibly fused) features.
    pub fn complete_level(&self, tape: &mut Tape, ps: &ParamStore, pass: &mut StreamPass, features: Var) {
        let lvl = &self.down[pass.level];
        let h = lvl.exit.forward(tape, ps, features, pass.temb);
        pass.skips.push(h);
        pass.h = h;
        if pass.level + 1 < self.cfg.levels() {
            let n = tape.shape(h)[0];
            let pool = tape.leaf(pool_matrix(n));
            pass.h = tape.matmul(pool, h);
            pass.cond = tape.matmul(pool, pass.cond);
        }
        pass.level += 1;
    }

    /// Up path and output head; returns `v` as `[N, J·3]`.
    pub fn finish(&self, tape: &mut Tape, ps: &ParamStore, pass: StreamPass) -> Var {
        assert_eq!(pass.level, self.cfg.levels(), "down path incomplete");
        let mut h = pass.h;
        for l in (0..self.cfg.levels() - 1).rev() {
            let skip = pass.skips[l];
            let n = tape.shape(skip)[0];
            let up = tape.leaf(upsample_matrix(n));
            let u = tape.matmul(up, h);
            let x = tape.concat_cols(&[u, skip]);
            h = self.up[l].forward(tape, ps, x, pass.temb);
        }
        let h = self.out_norm.forward(tape, ps, h);
        self.out.forward(tape, ps, h)
    }
}

/// Both streams' `v` predictions plus the features each exported.
#[derive(Clone, Debug)]
pub struct PairOutput {
    pub v: [Var; 2],
    /// Pre-fusion features per stream, one per fusion point.
    pub exported: [Vec<Var>; 2],
    /// Feature exchanges performed.
    pub exchanges: usize,
}

/// Run the left (`[0]`) and right (`[1]`) denoisers in lockstep,
/// exchanging features at every fusion point.
pub fn forward_pair(
    tape: &mut Tape,
    ps: &ParamStore,
    models: [&Denoiser; 2],
    xt: [Var; 2],
    t: usize,
    cond: [Var; 2],
) -> PairOutput {
    let cfg = models[0].config();
    assert_eq!(cfg, models[1].config(), "paired denoisers must share a config");
    let mut passes = [0, 1].map(|i| models[i].begin(tape, ps, xt[i], t, cond[i]));
    let mut exported: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
    let mut exchanges = 0;
    for level in 0..cfg.levels() {
        let own = [0, 1].map(|i| models[i].to_fusion_point(tape, ps, &mut passes[i]));
        let fused = if cfg.fuses_at(level) {
            exchanges += 1;
            let shared = own.map(|f| if cfg.stop_gradient { tape.detach(f) } else { f });
            let mut out = own;
            for i in 0..2 {
                exported[i].push(own[i]);
                let mine = models[i].fusion(level).expect("fusion weights at fusion level");
                let theirs = models[1 - i].fusion(level).expect("fusion weights at fusion level");
                out[i] = mine.apply(tape, ps, own[i], shared[1 - i], theirs, cfg.stop_gradient);
            }
            out
        } else {
            own
        };
        for i in 0..2 {
            models[i].complete_level(tape, ps, &mut passes[i], fused[i]);
        }
    }
    let [pl, pr] = passes;
    let v = [models[0].finish(tape, ps, pl), models[1].finish(tape, ps, pr)];
    PairOutput { v, exported, exchanges }
}

/// Single-stream forward with externally supplied peer features, one per
/// fusion point. Returns `v` and the features this stream exported.
///
/// Panics when the config fuses and `peer` is `None`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_forward(
    tape: &mut Tape,
    ps: &ParamStore,
    model: &Denoiser,
    peer_model: Option<&Denoiser>,
    xt: Var,
    t: usize,
    cond: Var,
    peer: Option<&[Tensor]>,
) -> (Var, Vec<Var>) {
    let cfg = model.config();
    let mut pass = model.begin(tape, ps, xt, t, cond);
    let mut exported = Vec::new();
    for level in 0..cfg.levels() {
        let own = model.to_fusion_point(tape, ps, &mut pass);
        let features = if cfg.fuses_at(level) {
            let peer = peer.expect("fusion requires peer features");
            let peer_model = peer_model.expect("fusion requires the peer model");
            let peer_features = tape.leaf(peer[exported.len()].clone());
            exported.push(own);
            let mine = model.fusion(level).expect("fusion weights at fusion level");
            let theirs = peer_model.fusion(level).expect("fusion weights at fusion level");
            mine.apply(tape, ps, own, peer_features, theirs, cfg.stop_gradient)
        } else {
            own
        };
        model.complete_level(tape, ps, &mut pass, features);
    }
    (model.finish(tape, ps, pass), exported)
}
