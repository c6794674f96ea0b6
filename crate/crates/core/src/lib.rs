//! Dual-stream diffusion engine mapping event-sequence features to
//! coordinated two-hand joint-angle motion.
//!
//! The crate is organised bottom-up:
//!
//! * [`numkit`]: tensors, reverse-mode gradients, counter-based RNG.
//! * [`schedule`]: closed-form diffusion math (forward marginal, v target,
//!   posterior).
//! * [`networks`] and [`hcaa`]: feature refiners, position predictors, the
//!   U-Net denoisers and the cross-hand fusion modules.
//! * [`sampler`] and [`trainer`]: dual-stream reverse diffusion and the
//!   two-stage optimization.
//! * [`metrics`], [`synthdata`], [`dataio`]: evaluation, the synthetic
//!   benchmark and on-disk formats.
//! * [`pipeline`] and [`verify`]: composed workflows driven by the CLI.

pub mod dataio;
pub mod hcaa;
pub mod metrics;
pub mod networks;
pub mod numkit;
pub mod pipeline;
pub mod sampler;
pub mod schedule;
pub mod synthdata;
pub mod trainer;
pub mod verify;
