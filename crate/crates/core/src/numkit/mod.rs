//! Dense tensors, reverse-mode gradients and counter-based randomness.

mod gradcheck;
mod parallel;
mod params;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use parallel::{par_map, worker_count, THREADS_ENV};
pub use params::{Param, ParamId, ParamStore};
pub use rng::RngStream;
pub use tape::{softmax_rows, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumError {
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}

/// Sinusoidal embedding of a scalar position: first half `sin(p·ω_i)`,
/// second half `cos(p·ω_i)` with `ω_i = 10000^(-i/(dim/2))`.
pub fn sinusoidal_embedding(position: f64, dim: usize) -> Tensor {
    assert!(dim >= 2 && dim % 2 == 0, "embedding width must be even");
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        out[i] = (position * freq).sin();
        out[half + i] = (position * freq).cos();
    }
    Tensor::new(vec![1, dim], out)
}

/// `[frames, dim]` table of sinusoidal embeddings for frame indices.
pub fn sinusoidal_table(frames: usize, dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(frames * dim);
    for f in 0..frames {
        data.extend_from_slice(sinusoidal_embedding(f as f64, dim).data());
    }
    Tensor::new(vec![frames, dim], data)
}
