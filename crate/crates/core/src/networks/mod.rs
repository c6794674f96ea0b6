//! Trainable function families: feature refiners, position predictors and
//! the dual-stream frame-axis U-Net denoisers.

pub mod denoiser;
pub mod layers;
pub mod model;
pub mod predictor;
pub mod refiner;

use std::fmt;

use crate::hcaa::FusionMode;
use crate::numkit::Tensor;

pub use denoiser::{denoise_forward, forward_pair, time_embed, Denoiser, PairOutput, TimeEmbed};
pub use model::{CheckpointError, Component, DualModel, HandModel, ModelConfig};
pub use predictor::PositionPredictor;
pub use refiner::FeatureRefiner;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub const BOTH: [Hand; 2] = [Hand::Left, Hand::Right];

    pub fn tag(self) -> &'static str {
        match self {
            Hand::Left => "L",
            Hand::Right => "R",
        }
    }

    pub fn other(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Hand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NetworkError {
    #[error("invalid {what}: {reason}")]
    InvalidSequence { what: &'static str, reason: String },
    #[error("invalid denoiser config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
}

fn check_finite(what: &'static str, t: &Tensor) -> Result<(), NetworkError> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NetworkError::InvalidSequence { what, reason: "non-finite values".into() })
    }
}

/// Per-frame conditioning features, `[N, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    values: Tensor,
}

impl FeatureSequence {
    pub fn new(values: Tensor) -> Result<Self, NetworkError> {
        let bad = |reason: String| NetworkError::InvalidSequence { what: "feature sequence", reason };
        if values.rank() != 2 {
            return Err(bad(format!("expected rank 2, got shape {:?}", values.shape())));
        }
        if values.rows() < 2 {
            return Err(bad(format!("need at least 2 frames, got {}", values.rows())));
        }
        check_finite("feature sequence", &values)?;
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn channels(&self) -> usize {
        self.values.cols()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// One hand's wrist trajectory, `[N, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionSequence {
    values: Tensor,
}

impl PositionSequence {
    pub fn new(values: Tensor) -> Result<Self, NetworkError> {
        if values.rank() != 2 || values.cols() != 3 {
            return Err(NetworkError::InvalidSequence {
                what: "position sequence",
                reason: format!("expected [N, 3], got {:?}", values.shape()),
            });
        }
        check_finite("position sequence", &values)?;
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }
}

/// One hand's joint angles in radians, `[N, J, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GestureSequence {
    values: Tensor,
}

impl GestureSequence {
    pub fn new(values: Tensor) -> Result<Self, NetworkError> {
        if values.rank() != 3 || values.shape()[2] != 3 {
            return Err(NetworkError::InvalidSequence {
                what: "gesture sequence",
                reason: format!("expected [N, J, 3], got {:?}", values.shape()),
            });
        }
        check_finite("gesture sequence", &values)?;
        Ok(Self { values })
    }

    /// Wrap a `[N, J·3]` matrix.
    pub fn from_flat(flat: Tensor, joints: usize) -> Result<Self, NetworkError> {
        if flat.rank() != 2 || flat.cols() != joints * 3 {
            return Err(NetworkError::InvalidSequence {
                what: "gesture sequence",
                reason: format!("expected [N, {}], got {:?}", joints * 3, flat.shape()),
            });
        }
        let n = flat.rows();
        Self::new(flat.reshape(&[n, joints, 3]))
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    /// `[N, J·3]` view used by the denoiser.
    pub fn flat(&self) -> Tensor {
        self.values.clone().reshape(&[self.frames(), self.joints() * 3])
    }
}

/// Which U-Net levels carry a fusion point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionLevels {
    Deepest,
    All,
}

impl std::str::FromStr for FusionLevels {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deepest" => Ok(FusionLevels::Deepest),
            "all" => Ok(FusionLevels::All),
            _ => Err(format!("unknown fusion levels {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserConfig {
    pub dims: Vec<usize>,
    pub heads: usize,
    pub fusion_mode: FusionMode,
    pub fusion_levels: FusionLevels,
    pub position_sharing: bool,
    pub decoupled_noise: bool,
    pub stop_gradient: bool,
    pub lambda_init: f64,
    pub joints: usize,
    /// Conditioning width, refined features plus 6 position channels.
    pub cond_width: usize,
    pub kernel: usize,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidConfig(m));
        if self.dims.is_empty() {
            return bad("at least one level".into());
        }
        if self.dims.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("dims must increase strictly, got {:?}", self.dims));
        }
        if let Some(d) = self.dims.iter().find(|&&d| d % self.heads != 0) {
            return bad(format!("{} heads do not divide width {d}", self.heads));
        }
        if self.dims[0] % 2 != 0 {
            return bad("first width must be even for the time embedding".into());
        }
        if self.kernel % 2 == 0 {
            return bad("kernel must be odd".into());
        }
        if !(self.lambda_init > 0.0 && self.lambda_init <= 1.0) {
            return bad(format!("lambda_init {} outside (0, 1]", self.lambda_init));
        }
        if self.joints == 0 || self.cond_width < 6 {
            return bad("joints and conditioning width must be positive".into());
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    /// Frame counts must be divisible by this.
    pub fn frame_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    pub fn fuses_at(&self, level: usize) -> bool {
        self.fusion_mode != FusionMode::None
            && match self.fusion_levels {
                FusionLevels::Deepest => level + 1 == self.levels(),
                FusionLevels::All => true,
            }
    }

    pub fn fusion_points(&self) -> usize {
        (0..self.levels()).filter(|&l| self.fuses_at(l)).count()
    }
}

/// `[N, C' + 6]`: refined features, own positions, other-hand positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditioningTensor {
    values: Tensor,
}

impl ConditioningTensor {
    /// Concatenate the parts; the other hand's channels are zeroed when
    /// position sharing is off.
    pub fn build(refined: &Tensor, own: &PositionSequence, other: &PositionSequence, position_sharing: bool) -> Self {
        let n = refined.rows();
        assert_eq!(own.frames(), n, "own positions have a different frame count");
        assert_eq!(other.frames(), n, "other positions have a different frame count");
        let c = refined.cols();
        let width = c + 6;
        let mut values = Tensor::zeros(&[n, width]);
        for r in 0..n {
            let row = &mut values.data_mut()[r * width..(r + 1) * width];
            row[..c].copy_from_slice(refined.row(r));
            row[c..c + 3].copy_from_slice(own.values().row(r));
            if position_sharing {
                row[c + 3..].copy_from_slice(other.values().row(r));
            }
        }
        Self { values }
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequences_validate_shapes() {
        assert!(FeatureSequence::new(Tensor::zeros(&[1, 4])).is_err());
        assert!(FeatureSequence::new(Tensor::full(&[3, 2], f64::NAN)).is_err());
        assert!(FeatureSequence::new(Tensor::zeros(&[3, 2])).is_ok());
        assert!(PositionSequence::new(Tensor::zeros(&[3, 2])).is_err());
        let g = GestureSequence::from_flat(Tensor::from_fn(&[4, 6], |i| i as f64), 2).unwrap();
        assert_eq!((g.frames(), g.joints()), (4, 2));
        assert_eq!(g.flat().data(), g.values().data());
    }

    #[test]
    fn conditioning_zeroes_other_hand_without_sharing() {
        let refined = Tensor::full(&[2, 2], 0.5);
        let own = PositionSequence::new(Tensor::full(&[2, 3], 1.0)).unwrap();
        let other = PositionSequence::new(Tensor::full(&[2, 3], 2.0)).unwrap();
        let on = ConditioningTensor::build(&refined, &own, &other, true);
        let off = ConditioningTensor::build(&refined, &own, &other, false);
        assert_eq!(on.values().row(0), &[0.5, 0.5, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(off.values().row(1), &[0.5, 0.5, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn config_validation() {
        let cfg = DenoiserConfig {
            dims: vec![8, 16],
            heads: 2,
            fusion_mode: FusionMode::Hcaa,
            fusion_levels: FusionLevels::Deepest,
            position_sharing: true,
            decoupled_noise: true,
            stop_gradient: true,
            lambda_init: 0.78,
            joints: 2,
            cond_width: 10,
            kernel: 3,
        };
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.fusion_points(), 1);
        assert!(cfg.fuses_at(1) && !cfg.fuses_at(0));
        let all = DenoiserConfig { fusion_levels: FusionLevels::All, ..cfg.clone() };
        assert_eq!(all.fusion_points(), 2);
        let none = DenoiserConfig { fusion_mode: FusionMode::None, ..cfg.clone() };
        assert_eq!(none.fusion_points(), 0);
        assert!(DenoiserConfig { dims: vec![16, 16], ..cfg.clone() }.validate().is_err());
        assert!(DenoiserConfig { heads: 3, ..cfg.clone() }.validate().is_err());
        assert!(DenoiserConfig { lambda_init: 0.0, ..cfg }.validate().is_err());
    }
}
