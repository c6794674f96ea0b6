//! Two-stage optimization.
//!
//! Stage 1 fits each hand's position predictor to wrist trajectories with
//! mean-squared error. Stage 2 freezes the predictors and trains both
//! hands' refiner and denoiser on the v-prediction loss, one Adam optimizer
//! per hand. Batches are evaluated item by item on independent tapes and
//! reduced in item order, so results do not depend on the worker count.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::dataio::RunConfig;
use crate::networks::model::Component;
use crate::networks::{forward_pair, DualModel, Hand};
use crate::numkit::{par_map, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::schedule::DiffusionSchedule;
use crate::synthdata::ClipSample;

const BATCH_STREAM: u64 = 0xBA7C;
const NOISE_STREAM: u64 = 0x7E57;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Position,
    Motion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Position => "position",
            Stage::Motion => "motion",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("{stage} stage diverged at step {step}: loss {loss}")]
    Diverged { stage: Stage, step: usize, loss: f64 },
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("no training clips")]
    NoData,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip threshold, 0 disables.
    pub grad_clip: f64,
}

impl AdamConfig {
    pub fn from_run(cfg: &RunConfig) -> Self {
        Self {
            learning_rate: cfg.f64("learning-rate"),
            beta1: cfg.f64("adam-beta1"),
            beta2: cfg.f64("adam-beta2"),
            eps: cfg.f64("adam-eps"),
            grad_clip: cfg.f64("grad-clip"),
        }
    }
}

/// Adam with bias correction over a fixed parameter subset.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    ids: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new(ps: &ParamStore, ids: Vec<ParamId>, cfg: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = ids.iter().map(|&id| Tensor::zeros(ps.value(id).shape())).collect();
        Self { cfg, ids, m: zeros.clone(), v: zeros, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Update from the accumulated gradients, then zero them.
    pub fn step(&mut self, ps: &mut ParamStore) -> Result<(), TrainError> {
        let mut norm_sq = 0.0;
        for &id in &self.ids {
            let g = ps.grad(id);
            if !g.is_finite() {
                return Err(TrainError::NonFiniteGradient(ps.name(id).to_string()));
            }
            norm_sq += g.data().iter().map(|x| x * x).sum::<f64>();
        }
        let scale = if self.cfg.grad_clip > 0.0 && norm_sq.sqrt() > self.cfg.grad_clip {
            self.cfg.grad_clip / norm_sq.sqrt()
        } else {
            1.0
        };
        self.steps += 1;
        let AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps, .. } = self.cfg;
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        for (k, &id) in self.ids.iter().enumerate() {
            let p = ps.param_mut(id);
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()).enumerate() {
                let g_s = *g * scale;
                m[i] = b1 * m[i] + (1.0 - b1) * g_s;
                v[i] = b2 * v[i] + (1.0 - b2) * g_s * g_s;
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                *g = 0.0;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig, stage: Stage) -> Self {
        let steps = match stage {
            Stage::Position => cfg.usize("position-steps"),
            Stage::Motion => cfg.usize("motion-steps"),
        };
        Self { stage, steps, batch_size: cfg.usize("batch-size"), adam: AdamConfig::from_run(cfg), seed: cfg.u64("seed") }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub stage: Stage,
    pub loss: [f64; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,stage,loss_L,loss_R\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:e},{:e}\n", r.step, r.stage, r.loss[0], r.loss[1]));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        f.sync_all()
    }

    /// Mean of both hands' loss over the first or last `k` rows.
    pub fn window_mean(&self, k: usize, from_end: bool) -> f64 {
        let k = k.min(self.rows.len()).max(1);
        let rows = if from_end { &self.rows[self.rows.len() - k..] } else { &self.rows[..k] };
        rows.iter().map(|r| r.loss[0] + r.loss[1]).sum::<f64>() / (2 * rows.len()) as f64
    }
}

/// Epoch-wise shuffled clip order.
#[derive(Clone, Debug)]
pub struct BatchOrder {
    rng: RngStream,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    pub fn new(clips: usize, seed: u64, stage: Stage) -> Self {
        let rng = RngStream::new(seed, BATCH_STREAM + stage as u64);
        Self { rng, order: (0..clips).collect(), pos: clips }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.rng.shuffle(&mut self.order);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn mse(tape: &mut Tape, pred: Var, target: &Tensor) -> Var {
    let t = tape.leaf(target.clone());
    let d = tape.sub(pred, t);
    let sq = tape.mul(d, d);
    tape.mean_all(sq)
}

struct ItemResult {
    loss: [f64; 2],
    grads: Vec<(ParamId, Tensor)>,
}

/// Sum item gradients in order, scaled by `1 / items`.
fn accumulate(ps: &mut ParamStore, results: &[ItemResult]) {
    let scale = 1.0 / results.len() as f64;
    for r in results {
        for (id, g) in &r.grads {
            ps.accumulate_grad(*id, &g.map(|x| x * scale));
        }
    }
}

fn mean_loss(results: &[ItemResult]) -> [f64; 2] {
    let n = results.len() as f64;
    [0, 1].map(|h| results.iter().map(|r| r.loss[h]).sum::<f64>() / n)
}

/// Per-hand position loss for one clip.
pub fn position_item_loss(tape: &mut Tape, ps: &ParamStore, model: &DualModel, clip: &ClipSample) -> [Var; 2] {
    let f = tape.leaf(clip.features.values().clone());
    Hand::BOTH.map(|hand| {
        let pred = model.hand(hand).predictor.forward(tape, ps, f);
        mse(tape, pred, clip.positions[hand.index()].values())
    })
}

pub fn train_position_stage(model: &mut DualModel, clips: &[ClipSample], cfg: &TrainConfig) -> Result<LossLog, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::NoData);
    }
    let mut adam = Hand::BOTH.map(|hand| Adam::new(&model.ps, model.ids(Component::Predictor, hand), cfg.adam));
    let mut order = BatchOrder::new(clips.len(), cfg.seed, Stage::Position);
    let mut log = LossLog::default();
    model.ps.zero_grads();
    for step in 0..cfg.steps {
        let batch = order.next_batch(cfg.batch_size);
        let results = {
            let model = &*model;
            par_map(batch.len(), |k| {
                let mut tape = Tape::new();
                let [l, r] = position_item_loss(&mut tape, &model.ps, model, &clips[batch[k]]);
                let total = tape.add(l, r);
                let loss = [tape.value(l).item(), tape.value(r).item()];
                ItemResult { loss, grads: tape.backward(total).into_params() }
            })
        };
        let loss = mean_loss(&results);
        if !loss.iter().all(|l| l.is_finite()) {
            return Err(TrainError::Diverged { stage: Stage::Position, step, loss: loss[0] + loss[1] });
        }
        accumulate(&mut model.ps, &results);
        for a in &mut adam {
            a.step(&mut model.ps)?;
        }
        model.ps.zero_grads();
        log.rows.push(LossRow { step, stage: Stage::Position, loss });
        if step % 100 == 0 {
            log::info!("position step {step}: loss L {:.5} R {:.5}", loss[0], loss[1]);
        }
    }
    Ok(log)
}

/// Noise level and noise draws for one training item.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionDraw {
    pub t: usize,
    pub eps: [Tensor; 2],
}

impl MotionDraw {
    /// One shared `t`; independent noise per hand unless `decoupled` is off,
    /// in which case both hands get the same draw.
    pub fn sample(rng: &mut RngStream, steps: usize, shape: &[usize], decoupled: bool) -> Self {
        let t = 1 + rng.below(steps as u64) as usize;
        let n = shape.iter().product();
        let left = Tensor::new(shape.to_vec(), rng.normals(n));
        let right = if decoupled { Tensor::new(shape.to_vec(), rng.normals(n)) } else { left.clone() };
        Self { t, eps: [left, right] }
    }
}

/// Inputs of the motion loss that do not depend on trainable weights.
#[derive(Clone, Debug)]
pub struct MotionItem<'a> {
    pub features: &'a Tensor,
    /// Positions from the frozen predictors, `[N, 3]` per hand.
    pub positions: &'a [Tensor; 2],
    /// Clean gestures, `[N, J·3]` per hand.
    pub x0: [&'a Tensor; 2],
}

/// Per-hand v-prediction loss for one item.
pub fn motion_item_loss(
    tape: &mut Tape,
    ps: &ParamStore,
    model: &DualModel,
    sched: &DiffusionSchedule,
    item: &MotionItem<'_>,
    draw: &MotionDraw,
) -> [Var; 2] {
    let f = tape.leaf(item.features.clone());
    let cond = Hand::BOTH.map(|hand| {
        let (own, other) = (&item.positions[hand.index()], &item.positions[hand.other().index()]);
        model.conditioning_in(tape, ps, hand, f, own, other)
    });
    let xt = [0, 1].map(|h| tape.leaf(sched.forward_sample(item.x0[h], draw.t, &draw.eps[h])));
    let out = forward_pair(tape, ps, model.denoisers(), xt, draw.t, cond);
    [0, 1].map(|h| {
        let target = sched.v_target(item.x0[h], &draw.eps[h], draw.t);
        mse(tape, out.v[h], &target)
    })
}

/// Positions predicted by the (frozen) predictors for each clip.
pub fn predicted_positions(model: &DualModel, clips: &[ClipSample]) -> Vec<[Tensor; 2]> {
    par_map(clips.len(), |i| Hand::BOTH.map(|h| model.predict_positions(h, &clips[i].features).into_values()))
}

pub fn train_motion_stage(
    model: &mut DualModel,
    clips: &[ClipSample],
    cfg: &TrainConfig,
    sched: &DiffusionSchedule,
) -> Result<LossLog, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::NoData);
    }
    let positions = predicted_positions(model, clips);
    let flat: Vec<[Tensor; 2]> = clips.iter().map(|c| [c.gestures[0].flat(), c.gestures[1].flat()]).collect();
    let mut adam = Hand::BOTH.map(|hand| Adam::new(&model.ps, model.motion_ids(hand), cfg.adam));
    let mut order = BatchOrder::new(clips.len(), cfg.seed, Stage::Motion);
    let noise = RngStream::new(cfg.seed, NOISE_STREAM);
    let decoupled = model.cfg.denoiser.decoupled_noise;
    let mut log = LossLog::default();
    model.ps.zero_grads();
    for step in 0..cfg.steps {
        let batch = order.next_batch(cfg.batch_size);
        let results = {
            let model = &*model;
            par_map(batch.len(), |k| {
                let i = batch[k];
                let mut rng = noise.split((step * cfg.batch_size + k) as u64);
                let draw = MotionDraw::sample(&mut rng, sched.steps(), flat[i][0].shape(), decoupled);
                let item = MotionItem {
                    features: clips[i].features.values(),
                    positions: &positions[i],
                    x0: [&flat[i][0], &flat[i][1]],
                };
                let mut tape = Tape::new();
                let [l, r] = motion_item_loss(&mut tape, &model.ps, model, sched, &item, &draw);
                let total = tape.add(l, r);
                let loss = [tape.value(l).item(), tape.value(r).item()];
                ItemResult { loss, grads: tape.backward(total).into_params() }
            })
        };
        let loss = mean_loss(&results);
        if !loss.iter().all(|l| l.is_finite()) {
            return Err(TrainError::Diverged { stage: Stage::Motion, step, loss: loss[0] + loss[1] });
        }
        accumulate(&mut model.ps, &results);
        for a in &mut adam {
            a.step(&mut model.ps)?;
        }
        model.ps.zero_grads();
        log.rows.push(LossRow { step, stage: Stage::Motion, loss });
        if step % 100 == 0 {
            log::info!("motion step {step}: loss L {:.5} R {:.5}", loss[0], loss[1]);
        }
    }
    Ok(log)
}
