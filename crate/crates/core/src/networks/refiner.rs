//! Per-hand feature refiner: an input projection plus sinusoidal frame
//! positions followed by pre-norm transformer encoder layers.

use super::layers::{Init, LayerNorm, Linear, SelfAttention};
use super::FeatureSequence;
use crate::numkit::{sinusoidal_table, ParamStore, RngStream, Tape, Var};

#[derive(Clone, Debug)]
struct EncoderLayer {
    norm1: LayerNorm,
    attn: SelfAttention,
    norm2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl EncoderLayer {
    fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, rng: &mut RngStream) -> Self {
        Self {
            norm1: LayerNorm::new(ps, &format!("{name}.norm1"), width),
            attn: SelfAttention::new(ps, &format!("{name}.attn"), width, heads, rng),
            norm2: LayerNorm::new(ps, &format!("{name}.norm2"), width),
            ff1: Linear::new(ps, &format!("{name}.ff1"), width, 2 * width, true, Init::FanIn, rng),
            ff2: Linear::new(ps, &format!("{name}.ff2"), 2 * width, width, true, Init::Zeros, rng),
        }
    }

    fn forward(&self, tape: &mut Tape, ps: &ParamStore, x: Var) -> Var {
        let n = self.norm1.forward(tape, ps, x);
        let a = self.attn.forward(tape, ps, n);
        let x = tape.add(x, a);
        let n = self.norm2.forward(tape, ps, x);
        let f = self.ff1.forward(tape, ps, n);
        let f = tape.gelu(f);
        let f = self.ff2.forward(tape, ps, f);
        tape.add(x, f)
    }
}

#[derive(Clone, Debug)]
pub struct FeatureRefiner {
    input: Linear,
    layers: Vec<EncoderLayer>,
    width: usize,
}

impl FeatureRefiner {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        width: usize,
        layers: usize,
        heads: usize,
        rng: &mut RngStream,
    ) -> Self {
        assert!(width % heads == 0, "{heads} heads do not divide width {width}");
        Self {
            input: Linear::new(ps, &format!("{name}.input"), channels, width, true, Init::FanIn, rng),
            layers: (0..layers)
                .map(|i| EncoderLayer::new(ps, &format!("{name}.layer{i}"), width, heads, rng))
                .collect(),
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[N, C] -> [N, C']`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, features: Var) -> Var {
        let n = tape.shape(features)[0];
        let x = self.input.forward(tape, ps, features);
        let pos = tape.leaf(sinusoidal_table(n, self.width));
        let mut x = tape.add(x, pos);
        for layer in &self.layers {
            x = layer.forward(tape, ps, x);
        }
        x
    }

    pub fn refine(&self, ps: &ParamStore, features: &FeatureSequence) -> FeatureSequence {
        let mut tape = Tape::new();
        let f = tape.leaf(features.values().clone());
        let out = self.forward(&mut tape, ps, f);
        FeatureSequence::new(tape.value(out).clone()).expect("refiner output is finite for finite input")
    }
}
