//! Closed-form diffusion mathematics.
//!
//! Steps are 1-based: `t ∈ [1, T]`. Index 0 of the cumulative table holds
//! `ᾱ_0 = 1`, which makes the final reverse step deterministic.

use crate::numkit::Tensor;

/// Floor applied to the posterior variance before taking its log.
pub const LOG_VAR_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("diffusion needs at least one step")]
    NoSteps,
    #[error("beta range must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}")]
    BetaRange { beta_start: f64, beta_end: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// Coefficients of `q(x_{t-1} | x_t, x_0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub x0_coef: f64,
    pub xt_coef: f64,
    pub variance: f64,
    pub log_var: f64,
}

impl DiffusionSchedule {
    /// Betas interpolated linearly from `beta_start` at t=1 to `beta_end` at t=T.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, ScheduleError> {
        if steps == 0 {
            return Err(ScheduleError::NoSteps);
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(ScheduleError::BetaRange { beta_start, beta_end });
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + i as f64 / (steps - 1) as f64 * (beta_end - beta_start)
                }
            })
            .collect();
        Ok(Self::from_betas(betas))
    }

    /// T=1000, beta 1e-4 → 0.02.
    pub fn standard() -> Self {
        Self::linear(1000, 1e-4, 0.02).expect("valid constants")
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        alpha.push(1.0);
        alpha_bar.push(1.0);
        for b in betas {
            beta.push(b);
            alpha.push(1.0 - b);
            let prev = *alpha_bar.last().unwrap();
            alpha_bar.push(prev * (1.0 - b));
        }
        let sigma = alpha_bar.iter().map(|ab| (1.0 - ab).sqrt()).collect();
        Self { steps, beta, alpha, alpha_bar, sigma }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn check_step(&self, t: usize) {
        assert!((1..=self.steps).contains(&t), "step {t} outside [1, {}]", self.steps);
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check_step(t);
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check_step(t);
        self.alpha[t]
    }

    /// `ᾱ_t`, defined for `t ∈ [0, T]` with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps, "step {t} outside [0, {}]", self.steps);
        self.alpha_bar[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        assert!(t <= self.steps, "step {t} outside [0, {}]", self.steps);
        self.sigma[t]
    }

    /// `x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε`
    pub fn forward_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Tensor {
        self.check_step(t);
        let (a, s) = (self.alpha_bar[t].sqrt(), self.sigma[t]);
        x0.zip_map(eps, |x, e| a * x + e * s)
    }

    /// `v = √ᾱ_t·ε − σ_t·x0`
    pub fn v_target(&self, x0: &Tensor, eps: &Tensor, t: usize) -> Tensor {
        self.check_step(t);
        let (a, s) = (self.alpha_bar[t].sqrt(), self.sigma[t]);
        x0.zip_map(eps, |x, e| a * e - s * x)
    }

    /// `x̂0 = √ᾱ_t·x_t − σ_t·v`
    pub fn recover_x0(&self, xt: &Tensor, v: &Tensor, t: usize) -> Tensor {
        self.check_step(t);
        let (a, s) = (self.alpha_bar[t].sqrt(), self.sigma[t]);
        xt.zip_map(v, |x, v| a * x - s * v)
    }

    /// Mean coefficients and variance of the reverse posterior at step `t`.
    pub fn posterior(&self, t: usize) -> Posterior {
        self.check_step(t);
        let beta = self.beta[t];
        let ab = self.alpha_bar[t];
        let ab_prev = self.alpha_bar[t - 1];
        let (x0_coef, xt_coef, variance) = if t == 1 {
            // ᾱ_0 = 1: the posterior collapses onto x̂0.
            (1.0, 0.0, 0.0)
        } else {
            (
                beta * ab_prev.sqrt() / (1.0 - ab),
                (1.0 - ab_prev) * self.alpha[t].sqrt() / (1.0 - ab),
                (1.0 - ab_prev) * beta / (1.0 - ab),
            )
        };
        Posterior { x0_coef, xt_coef, variance, log_var: variance.max(LOG_VAR_FLOOR).ln() }
    }

    /// Posterior mean and log-variance given the predicted `x̂0` and current `x_t`.
    pub fn posterior_params(&self, x0_hat: &Tensor, xt: &Tensor, t: usize) -> (Tensor, f64) {
        let p = self.posterior(t);
        let mean = x0_hat.zip_map(xt, |a, b| p.x0_coef * a + p.xt_coef * b);
        (mean, p.log_var)
    }
}
