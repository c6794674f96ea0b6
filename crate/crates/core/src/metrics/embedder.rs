//! Temporal convolutional autoencoder whose bottleneck is the FID latent
//! space. Trained once on ground-truth motion and stored as an asset.

use std::path::Path;

use super::MetricError;
use crate::dataio::{read_container, write_container};
use crate::networks::layers::{Conv1d, Init, Linear};
use crate::networks::GestureSequence;
use crate::numkit::{par_map, sinusoidal_table, ParamId, ParamStore, RngStream, Tape, Tensor, Var};
use crate::trainer::{Adam, AdamConfig};

const KERNEL: usize = 5;
const INIT_STREAM: u64 = 0xE3B;
const BATCH_STREAM: u64 = 0xE3C;
const META: &str = "embedder.meta";
const NORM_MEAN: &str = "embedder.norm_mean";
const NORM_STD: &str = "embedder.norm_std";
/// Per-channel standard deviations below this are treated as constant.
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct MotionEmbedder {
    ps: ParamStore,
    joints: usize,
    hidden: usize,
    latent: usize,
    enc1: Conv1d,
    enc2: Conv1d,
    bottleneck: Linear,
    expand: Linear,
    dec1: Conv1d,
    dec2: Conv1d,
    norm_mean: Vec<f64>,
    norm_std: Vec<f64>,
    trained: bool,
}

impl MotionEmbedder {
    pub fn new(joints: usize, hidden: usize, latent: usize, seed: u64) -> Self {
        let mut ps = ParamStore::new();
        let mut rng = RngStream::new(seed, INIT_STREAM);
        let c = 2 * joints * 3;
        let enc1 = Conv1d::new(&mut ps, "embedder.enc1", c, hidden, KERNEL, Init::FanIn, &mut rng);
        let enc2 = Conv1d::new(&mut ps, "embedder.enc2", hidden, hidden, KERNEL, Init::FanIn, &mut rng);
        let bottleneck = Linear::new(&mut ps, "embedder.bottleneck", hidden, latent, true, Init::FanIn, &mut rng);
        let expand = Linear::new(&mut ps, "embedder.expand", latent, hidden, true, Init::FanIn, &mut rng);
        let dec1 = Conv1d::new(&mut ps, "embedder.dec1", hidden, hidden, KERNEL, Init::FanIn, &mut rng);
        let dec2 = Conv1d::new(&mut ps, "embedder.dec2", hidden, c, KERNEL, Init::FanIn, &mut rng);
        Self {
            ps,
            joints,
            hidden,
            latent,
            enc1,
            enc2,
            bottleneck,
            expand,
            dec1,
            dec2,
            norm_mean: vec![0.0; c],
            norm_std: vec![1.0; c],
            trained: false,
        }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn latent_width(&self) -> usize {
        self.latent
    }

    fn channels(&self) -> usize {
        2 * self.joints * 3
    }

    /// Both hands side by side, standardized per channel: `[N, 2·J·3]`.
    fn normalized_input(&self, clip: &[GestureSequence; 2]) -> Result<Tensor, MetricError> {
        for g in clip {
            if g.joints() != self.joints {
                return Err(MetricError::DimensionMismatch { expected: self.joints, found: g.joints() });
            }
        }
        if clip[0].frames() != clip[1].frames() {
            return Err(MetricError::Misaligned(format!("{} vs {} frames", clip[0].frames(), clip[1].frames())));
        }
        let (l, r) = (clip[0].flat(), clip[1].flat());
        let n = clip[0].frames();
        let half = self.joints * 3;
        Ok(Tensor::from_fn(&[n, self.channels()], |i| {
            let (f, c) = (i / self.channels(), i % self.channels());
            let x = if c < half { l.at2(f, c) } else { r.at2(f, c - half) };
            (x - self.norm_mean[c]) / self.norm_std[c]
        }))
    }

    fn encode(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.enc1.forward(tape, &self.ps, x);
        let h = tape.gelu(h);
        let h = self.enc2.forward(tape, &self.ps, h);
        let h = tape.gelu(h);
        let pooled = tape.mean_rows(h);
        self.bottleneck.forward(tape, &self.ps, pooled)
    }

    fn decode(&self, tape: &mut Tape, z: Var, frames: usize) -> Var {
        let e = self.expand.forward(tape, &self.ps, z);
        let ones = tape.leaf(Tensor::full(&[frames, 1], 1.0));
        let broadcast = tape.matmul(ones, e);
        let pos = tape.leaf(sinusoidal_table(frames, self.hidden));
        let h = tape.add(broadcast, pos);
        let h = self.dec1.forward(tape, &self.ps, h);
        let h = tape.gelu(h);
        self.dec2.forward(tape, &self.ps, h)
    }

    fn reconstruction_loss(&self, tape: &mut Tape, input: &Tensor) -> Var {
        let x = tape.leaf(input.clone());
        let z = self.encode(tape, x);
        let y = self.decode(tape, z, input.rows());
        let d = tape.sub(y, x);
        let sq = tape.mul(d, d);
        tape.mean_all(sq)
    }

    /// Fit normalization statistics and autoencoder weights on ground-truth
    /// clips. Returns the per-step mean batch loss.
    pub fn train(
        &mut self,
        clips: &[[GestureSequence; 2]],
        steps: usize,
        batch_size: usize,
        adam: AdamConfig,
        seed: u64,
    ) -> Result<Vec<f64>, MetricError> {
        if clips.is_empty() {
            return Err(MetricError::Empty);
        }
        let c = self.channels();
        let (mut sum, mut sq, mut count) = (vec![0.0; c], vec![0.0; c], 0usize);
        self.norm_mean = vec![0.0; c];
        self.norm_std = vec![1.0; c];
        for clip in clips {
            let x = self.normalized_input(clip)?;
            for f in 0..x.rows() {
                for (k, v) in x.row(f).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            count += x.rows();
        }
        for k in 0..c {
            let mean = sum[k] / count as f64;
            self.norm_mean[k] = mean;
            self.norm_std[k] = (sq[k] / count as f64 - mean * mean).max(0.0).sqrt().max(STD_FLOOR);
        }
        let inputs: Vec<Tensor> = clips.iter().map(|c| self.normalized_input(c)).collect::<Result<_, _>>()?;
        let ids: Vec<ParamId> = self.ps.ids().collect();
        let mut opt = Adam::new(&self.ps, ids, adam);
        let mut rng = RngStream::new(seed, BATCH_STREAM);
        let mut losses = Vec::with_capacity(steps);
        self.ps.zero_grads();
        for _ in 0..steps {
            let batch: Vec<usize> = (0..batch_size.min(inputs.len())).map(|_| rng.below(inputs.len() as u64) as usize).collect();
            let results = {
                let this = &*self;
                par_map(batch.len(), |k| {
                    let mut tape = Tape::new();
                    let loss = this.reconstruction_loss(&mut tape, &inputs[batch[k]]);
                    (tape.value(loss).item(), tape.backward(loss).into_params())
                })
            };
            let scale = 1.0 / results.len() as f64;
            let mut mean_loss = 0.0;
            for (loss, grads) in &results {
                mean_loss += loss * scale;
                for (id, g) in grads {
                    self.ps.accumulate_grad(*id, &g.map(|x| x * scale));
                }
            }
            if !mean_loss.is_finite() {
                return Err(MetricError::Invalid("embedder training diverged".into()));
            }
            opt.step(&mut self.ps).map_err(|e| MetricError::Invalid(e.to_string()))?;
            losses.push(mean_loss);
        }
        self.trained = true;
        Ok(losses)
    }

    /// Bottleneck vector of one clip.
    pub fn embed(&self, clip: &[GestureSequence; 2]) -> Result<Vec<f64>, MetricError> {
        if !self.trained {
            return Err(MetricError::UntrainedEmbedder);
        }
        let x = self.normalized_input(clip)?;
        let mut tape = Tape::new();
        let x = tape.leaf(x);
        let z = self.encode(&mut tape, x);
        Ok(tape.value(z).data().to_vec())
    }

    /// Mean squared reconstruction error in normalized units.
    pub fn reconstruction_error(&self, clip: &[GestureSequence; 2]) -> Result<f64, MetricError> {
        let x = self.normalized_input(clip)?;
        let mut tape = Tape::new();
        let loss = self.reconstruction_loss(&mut tape, &x);
        Ok(tape.value(loss).item())
    }

    pub fn save(&self, path: &Path) -> Result<(), MetricError> {
        let meta = Tensor::new(
            vec![4],
            vec![self.joints as f64, self.hidden as f64, self.latent as f64, if self.trained { 1.0 } else { 0.0 }],
        );
        let c = self.channels();
        let mean = Tensor::new(vec![c], self.norm_mean.clone());
        let std = Tensor::new(vec![c], self.norm_std.clone());
        let extra = [(META, &meta), (NORM_MEAN, &mean), (NORM_STD, &std)];
        write_container(path, extra.into_iter().chain(self.ps.named_values()))
            .map_err(|e| MetricError::Asset(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let entries = read_container(path).map_err(|e| MetricError::Asset(e.to_string()))?;
        let find = |name: &str| {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| MetricError::Asset(format!("embedder asset lacks {name}")))
        };
        let meta = find(META)?;
        if meta.numel() != 4 {
            return Err(MetricError::Asset("malformed embedder metadata".into()));
        }
        let m = meta.data();
        let mut out = Self::new(m[0] as usize, m[1] as usize, m[2] as usize, 0);
        out.trained = m[3] == 1.0;
        out.norm_mean = find(NORM_MEAN)?.into_data();
        out.norm_std = find(NORM_STD)?.into_data();
        if out.norm_mean.len() != out.channels() || out.norm_std.len() != out.channels() {
            return Err(MetricError::Asset("embedder normalization has the wrong width".into()));
        }
        for (name, t) in &entries {
            if [META, NORM_MEAN, NORM_STD].contains(&name.as_str()) {
                continue;
            }
            let id = out.ps.id(name).ok_or_else(|| MetricError::Asset(format!("unknown embedder tensor {name}")))?;
            if out.ps.value(id).shape() != t.shape() {
                return Err(MetricError::Asset(format!("embedder tensor {name} has the wrong shape")));
            }
            *out.ps.value_mut(id) = t.clone();
        }
        if entries.len() != out.ps.len() + 3 {
            return Err(MetricError::Asset("embedder asset is missing tensors".into()));
        }
        Ok(out)
    }
}
