//! Per-hand position predictor: a stack of dilated frame-axis convolutions
//! and a per-frame linear head to wrist coordinates.

use super::layers::{Conv1d, Init, Linear};
use super::{FeatureSequence, PositionSequence};
use crate::numkit::{ParamStore, RngStream, Tape, Var};

pub const PREDICTOR_LAYERS: usize = 3;
pub const PREDICTOR_KERNEL: usize = 5;
/// Tap spacing per layer. The wrist holds its last target across gaps
/// between events, so a wide view (±14 frames) matters more than density.
pub const PREDICTOR_DILATIONS: [usize; PREDICTOR_LAYERS] = [1, 2, 4];

#[derive(Clone, Debug)]
pub struct PositionPredictor {
    convs: Vec<Conv1d>,
    head: Linear,
}

impl PositionPredictor {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, width: usize, rng: &mut RngStream) -> Self {
        let convs = (0..PREDICTOR_LAYERS)
            .map(|i| {
                let input = if i == 0 { channels } else { width };
                Conv1d::new(ps, &format!("{name}.conv{i}"), input, width, PREDICTOR_KERNEL, Init::FanIn, rng)
                    .dilated(PREDICTOR_DILATIONS[i])
            })
            .collect();
        let head = Linear::new(ps, &format!("{name}.head"), width, 3, true, Init::Zeros, rng);
        Self { convs, head }
    }

    /// `[N, C] -> [N, 3]`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamStore, features: Var) -> Var {
        let mut h = features;
        for conv in &self.convs {
            let c = conv.forward(tape, ps, h);
            h = tape.gelu(c);
        }
        self.head.forward(tape, ps, h)
    }

    pub fn predict(&self, ps: &ParamStore, features: &FeatureSequence) -> PositionSequence {
        let mut tape = Tape::new();
        let f = tape.leaf(features.values().clone());
        let out = self.forward(&mut tape, ps, f);
        PositionSequence::new(tape.value(out).clone()).expect("predictor output is finite for finite input")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{grad_check, Tensor};

    #[test]
    fn shape_and_constant_covariance() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(4, 0);
        let p = PositionPredictor::new(&mut ps, "p", 4, 6, &mut rng);
        ps.randomize(&mut rng, 0.5);
        let f = FeatureSequence::new(Tensor::from_fn(&[9, 4], |i| [0.2, -0.7, 1.1, 0.0][i % 4])).unwrap();
        let out = p.predict(&ps, &f);
        assert_eq!(out.frames(), 9);
        let v = out.values();
        for r in 1..9 {
            for c in 0..3 {
                assert!((v.at2(r, c) - v.at2(0, c)).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn receptive_field_spans_fourteen_frames() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(6, 0);
        let p = PositionPredictor::new(&mut ps, "p", 1, 4, &mut rng);
        ps.randomize(&mut rng, 0.5);
        let at = |pulse: usize| {
            let f = FeatureSequence::new(Tensor::from_fn(&[40, 1], |i| if i == pulse { 1.0 } else { 0.0 })).unwrap();
            p.predict(&ps, &f).values().at2(20, 0)
        };
        let base = {
            let f = FeatureSequence::new(Tensor::zeros(&[40, 1])).unwrap();
            p.predict(&ps, &f).values().at2(20, 0)
        };
        assert!((at(34) - base).abs() > 1e-9 && (at(6) - base).abs() > 1e-9);
        assert_eq!(at(35), base);
        assert_eq!(at(5), base);
    }

    #[test]
    fn untrained_head_predicts_origin() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(4, 0);
        let p = PositionPredictor::new(&mut ps, "p", 2, 4, &mut rng);
        let f = FeatureSequence::new(Tensor::from_fn(&[5, 2], |i| i as f64)).unwrap();
        assert_eq!(p.predict(&ps, &f).values().max_abs(), 0.0);
    }

    #[test]
    fn gradients() {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(5, 0);
        let p = PositionPredictor::new(&mut ps, "p", 2, 3, &mut rng);
        ps.randomize(&mut rng, 0.5);
        let f = Tensor::from_fn(&[6, 2], |i| (i as f64 * 0.3).sin());
        let ids: Vec<_> = ps.ids().collect();
        let err = grad_check(&mut ps, &ids, 1e-5, 6, |tape, ps| {
            let x = tape.leaf(f.clone());
            let y = p.forward(tape, ps, x);
            let sq = tape.mul(y, y);
            tape.mean_all(sq)
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
