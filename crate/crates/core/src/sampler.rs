//! Dual-stream ancestral sampling from independent Gaussian noise.
//!
//! Both streams are always at the same step. Each step predicts `v` for
//! both hands, recovers `x̂0`, forms the posterior and draws the next state
//! from each stream's own noise source; the final step adds no noise.

use std::cell::Cell;

use crate::networks::{forward_pair, DualModel, FeatureSequence, GestureSequence, Hand, PositionSequence};
use crate::numkit::{RngStream, Tape, Tensor};
use crate::schedule::DiffusionSchedule;

/// RNG stream id for sampling noise.
pub const NOISE_STREAM: u64 = 0x5A3D;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("reverse step requested at t = 0")]
    StepUnderflow,
    #[error("input mismatch: {0}")]
    Mismatch(String),
}

/// Anything that predicts `v` for both streams at a step.
pub trait VelocityModel {
    fn predict(&self, xt: [&Tensor; 2], t: usize) -> [Tensor; 2];
}

/// Predicts zero velocity, the optimal model for standard-normal data.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroVelocity;

impl VelocityModel for ZeroVelocity {
    fn predict(&self, xt: [&Tensor; 2], _t: usize) -> [Tensor; 2] {
        xt.map(|x| Tensor::zeros(x.shape()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerState {
    pub xt: [Tensor; 2],
    pub t: usize,
    pub rng: [RngStream; 2],
    pub decoupled_noise: bool,
}

impl SamplerState {
    /// Draw `x_T` for both streams. Without decoupled noise both streams
    /// take the left stream's draws, here and at every later step.
    pub fn start(shape: &[usize], steps: usize, seeds: (u64, u64), decoupled_noise: bool) -> Self {
        let mut rng = [RngStream::new(seeds.0, NOISE_STREAM), RngStream::new(seeds.1, NOISE_STREAM)];
        let left = Tensor::new(shape.to_vec(), rng[0].normals(shape.iter().product()));
        let right = if decoupled_noise {
            Tensor::new(shape.to_vec(), rng[1].normals(shape.iter().product()))
        } else {
            left.clone()
        };
        Self { xt: [left, right], t: steps, rng, decoupled_noise }
    }
}

/// Advance both streams from `t` to `t - 1`.
pub fn reverse_step(
    state: &mut SamplerState,
    v: [&Tensor; 2],
    sched: &DiffusionSchedule,
) -> Result<(), SamplerError> {
    let t = state.t;
    if t == 0 {
        return Err(SamplerError::StepUnderflow);
    }
    let shared_eps = if t > 1 && !state.decoupled_noise {
        Some(state.rng[0].normals(state.xt[0].numel()))
    } else {
        None
    };
    for i in 0..2 {
        if v[i].shape() != state.xt[i].shape() {
            return Err(SamplerError::Mismatch(format!(
                "v shape {:?} differs from state {:?}",
                v[i].shape(),
                state.xt[i].shape()
            )));
        }
        let x0_hat = sched.recover_x0(&state.xt[i], v[i], t);
        let (mean, log_var) = sched.posterior_params(&x0_hat, &state.xt[i], t);
        state.xt[i] = if t > 1 {
            let eps = match &shared_eps {
                Some(e) => e.clone(),
                None => state.rng[i].normals(mean.numel()),
            };
            let scale = (0.5 * log_var).exp();
            let mut x = mean;
            for (x, e) in x.data_mut().iter_mut().zip(eps) {
                *x += scale * e;
            }
            x
        } else {
            mean
        };
    }
    state.t = t - 1;
    Ok(())
}

/// Run from `state.t` down to 0.
pub fn run_reverse<M: VelocityModel>(
    model: &M,
    sched: &DiffusionSchedule,
    mut state: SamplerState,
) -> Result<[Tensor; 2], SamplerError> {
    while state.t > 0 {
        let v = model.predict([&state.xt[0], &state.xt[1]], state.t);
        reverse_step(&mut state, [&v[0], &v[1]], sched)?;
    }
    Ok(state.xt)
}

/// The trained networks with fixed per-hand conditioning.
pub struct NetworkVelocity<'a> {
    model: &'a DualModel,
    cond: [Tensor; 2],
    exchanges: Cell<usize>,
}

impl<'a> NetworkVelocity<'a> {
    pub fn new(model: &'a DualModel, cond: [Tensor; 2]) -> Self {
        Self { model, cond, exchanges: Cell::new(0) }
    }

    /// Feature exchanges performed so far.
    pub fn exchanges(&self) -> usize {
        self.exchanges.get()
    }
}

impl VelocityModel for NetworkVelocity<'_> {
    fn predict(&self, xt: [&Tensor; 2], t: usize) -> [Tensor; 2] {
        let mut tape = Tape::new();
        let x = xt.map(|x| tape.leaf(x.clone()));
        let c = [tape.leaf(self.cond[0].clone()), tape.leaf(self.cond[1].clone())];
        let out = forward_pair(&mut tape, &self.model.ps, self.model.denoisers(), x, t, c);
        self.exchanges.set(self.exchanges.get() + out.exchanges);
        out.v.map(|v| tape.value(v).clone())
    }
}

/// Output of one generation run.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub gestures: [GestureSequence; 2],
    pub positions: [PositionSequence; 2],
    pub exchanges: usize,
}

/// Per-hand conditioning tensors for a feature sequence and positions.
pub fn conditioning_pair(model: &DualModel, features: &FeatureSequence, positions: &[PositionSequence; 2]) -> [Tensor; 2] {
    Hand::BOTH.map(|hand| {
        let mut tape = Tape::new();
        let f = tape.leaf(features.values().clone());
        let own = positions[hand.index()].values();
        let other = positions[hand.other().index()].values();
        let c = model.conditioning(&mut tape, hand, f, own, other);
        tape.value(c).clone()
    })
}

/// Predict positions once, then sample both hands' gestures.
pub fn generate_motion(
    model: &DualModel,
    sched: &DiffusionSchedule,
    features: &FeatureSequence,
    seeds: (u64, u64),
) -> Result<Generated, SamplerError> {
    if features.channels() != model.cfg.channels {
        return Err(SamplerError::Mismatch(format!(
            "features have {} channels, model expects {}",
            features.channels(),
            model.cfg.channels
        )));
    }
    let n = features.frames();
    let multiple = model.cfg.denoiser.frame_multiple();
    if n % multiple != 0 {
        return Err(SamplerError::Mismatch(format!("{n} frames not divisible by {multiple}")));
    }
    let positions = Hand::BOTH.map(|hand| model.predict_positions(hand, features));
    let cond = conditioning_pair(model, features, &positions);
    let velocity = NetworkVelocity::new(model, cond);
    let joints = model.cfg.denoiser.joints;
    let state = SamplerState::start(&[n, joints * 3], sched.steps(), seeds, model.cfg.denoiser.decoupled_noise);
    let [l, r] = run_reverse(&velocity, sched, state)?;
    let wrap = |x: Tensor| GestureSequence::from_flat(x, joints).map_err(|e| SamplerError::Mismatch(e.to_string()));
    Ok(Generated { gestures: [wrap(l)?, wrap(r)?], positions, exchanges: velocity.exchanges() })
}
