//! Both hands' networks in one parameter store, with checkpoint I/O.

use std::path::Path;

use super::denoiser::Denoiser;
use super::predictor::PositionPredictor;
use super::refiner::FeatureRefiner;
use super::{DenoiserConfig, FeatureSequence, FusionLevels, Hand, NetworkError, PositionSequence};
use crate::dataio::{read_container, write_container, ContainerError, RunConfig};
use crate::hcaa::FusionMode;
use crate::numkit::{ParamId, ParamStore, RngStream, Tape, Tensor, Var};

pub const DENOISER_KERNEL: usize = 3;
/// RNG stream reserved for weight initialization.
const INIT_STREAM: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Refiner,
    Predictor,
    Denoiser,
}

impl Component {
    pub fn as_str(self) -> &'static str {
        match self {
            Component::Refiner => "refiner",
            Component::Predictor => "predictor",
            Component::Denoiser => "denoiser",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub feature_width: usize,
    pub refiner_layers: usize,
    pub refiner_heads: usize,
    pub predictor_width: usize,
    pub denoiser: DenoiserConfig,
}

impl ModelConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self, NetworkError> {
        let feature_width = cfg.usize("feature-width");
        let refiner_heads = cfg.usize("refiner-heads");
        if feature_width % refiner_heads != 0 {
            return Err(NetworkError::InvalidConfig(format!(
                "{refiner_heads} refiner heads do not divide feature width {feature_width}"
            )));
        }
        let denoiser = DenoiserConfig {
            dims: cfg.list("dims"),
            heads: cfg.usize("heads"),
            fusion_mode: cfg.raw("fusion-mode").parse().map_err(NetworkError::InvalidConfig)?,
            fusion_levels: cfg.raw("fusion-levels").parse::<FusionLevels>().map_err(NetworkError::InvalidConfig)?,
            position_sharing: cfg.bool("position-sharing"),
            decoupled_noise: cfg.bool("decoupled-noise"),
            stop_gradient: cfg.bool("stop-gradient"),
            lambda_init: cfg.f64("lambda-init"),
            joints: cfg.usize("joints"),
            cond_width: feature_width + 6,
            kernel: DENOISER_KERNEL,
        };
        denoiser.validate()?;
        let frames = cfg.usize("frames");
        if frames % denoiser.frame_multiple() != 0 {
            return Err(NetworkError::InvalidConfig(format!(
                "{frames} frames not divisible by {} for {} levels",
                denoiser.frame_multiple(),
                denoiser.levels()
            )));
        }
        Ok(Self {
            channels: cfg.usize("pitches"),
            feature_width,
            refiner_layers: cfg.usize("refiner-layers"),
            refiner_heads,
            predictor_width: cfg.usize("predictor-width"),
            denoiser,
        })
    }

    pub fn fusion_mode(&self) -> FusionMode {
        self.denoiser.fusion_mode
    }
}

#[derive(Clone, Debug)]
pub struct HandModel {
    pub refiner: FeatureRefiner,
    pub predictor: PositionPredictor,
    pub denoiser: Denoiser,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("checkpoint does not match the model: {0}")]
    Mismatch(String),
}

#[derive(Clone, Debug)]
pub struct DualModel {
    pub cfg: ModelConfig,
    pub ps: ParamStore,
    hands: [HandModel; 2],
}

impl DualModel {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let mut ps = ParamStore::new();
        let root = RngStream::new(seed, INIT_STREAM);
        let hands = Hand::BOTH.map(|hand| {
            let name = |c: Component| format!("{}.{}", c.as_str(), hand.tag());
            let mut rng = root.split(hand.index() as u64 * 3);
            let refiner = FeatureRefiner::new(
                &mut ps,
                &name(Component::Refiner),
                cfg.channels,
                cfg.feature_width,
                cfg.refiner_layers,
                cfg.refiner_heads,
                &mut rng,
            );
            let mut rng = root.split(hand.index() as u64 * 3 + 1);
            let predictor =
                PositionPredictor::new(&mut ps, &name(Component::Predictor), cfg.channels, cfg.predictor_width, &mut rng);
            let mut rng = root.split(hand.index() as u64 * 3 + 2);
            let denoiser = Denoiser::new(&mut ps, &name(Component::Denoiser), &cfg.denoiser, &mut rng);
            HandModel { refiner, predictor, denoiser }
        });
        Self { cfg: cfg.clone(), ps, hands }
    }

    pub fn hand(&self, hand: Hand) -> &HandModel {
        &self.hands[hand.index()]
    }

    pub fn denoisers(&self) -> [&Denoiser; 2] {
        [&self.hands[0].denoiser, &self.hands[1].denoiser]
    }

    pub fn ids(&self, component: Component, hand: Hand) -> Vec<ParamId> {
        self.ps.ids_with_prefix(&format!("{}.{}.", component.as_str(), hand.tag()))
    }

    /// Parameters updated in the motion stage for one hand.
    pub fn motion_ids(&self, hand: Hand) -> Vec<ParamId> {
        let mut ids = self.ids(Component::Refiner, hand);
        ids.extend(self.ids(Component::Denoiser, hand));
        ids
    }

    pub fn predict_positions(&self, hand: Hand, features: &FeatureSequence) -> PositionSequence {
        self.hand(hand).predictor.predict(&self.ps, features)
    }

    /// Conditioning node for one hand: refined features followed by own and
    /// (when sharing) other-hand positions.
    pub fn conditioning(&self, tape: &mut Tape, hand: Hand, features: Var, own: &Tensor, other: &Tensor) -> Var {
        self.conditioning_in(tape, &self.ps, hand, features, own, other)
    }

    /// [`Self::conditioning`] against an external parameter store with the
    /// same layout.
    pub fn conditioning_in(
        &self,
        tape: &mut Tape,
        ps: &ParamStore,
        hand: Hand,
        features: Var,
        own: &Tensor,
        other: &Tensor,
    ) -> Var {
        let refined = self.hand(hand).refiner.forward(tape, ps, features);
        let own = tape.leaf(own.clone());
        let other = if self.cfg.denoiser.position_sharing {
            tape.leaf(other.clone())
        } else {
            tape.leaf(Tensor::zeros(other.shape()))
        };
        tape.concat_cols(&[refined, own, other])
    }

    pub fn save(&self, path: &Path) -> Result<(), ContainerError> {
        write_container(path, self.ps.named_values())
    }

    /// Overwrite every parameter from a checkpoint; names and shapes must
    /// match exactly.
    pub fn load_weights(&mut self, path: &Path) -> Result<(), CheckpointError> {
        let entries = read_container(path)?;
        if entries.len() != self.ps.len() {
            return Err(CheckpointError::Mismatch(format!(
                "{} tensors in file, model has {}",
                entries.len(),
                self.ps.len()
            )));
        }
        for (name, t) in entries {
            let id = self.ps.id(&name).ok_or_else(|| CheckpointError::Mismatch(format!("unknown tensor {name}")))?;
            if self.ps.value(id).shape() != t.shape() {
                return Err(CheckpointError::Mismatch(format!(
                    "{name}: shape {:?} in file, {:?} in model",
                    t.shape(),
                    self.ps.value(id).shape()
                )));
            }
            *self.ps.value_mut(id) = t;
        }
        Ok(())
    }
}
