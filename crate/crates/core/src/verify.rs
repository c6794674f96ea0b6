//! Fast invariant suite: exact identities, oracles and gradient checks that
//! a fresh build must pass. Output is stable text suitable for diffing.

use crate::dataio::RunConfig;
use crate::hcaa::{compute_lambda, hcaa_heads, HcaaBlock, HcaaParams, DEFAULT_LAMBDA_INIT};
use crate::metrics::{
    diagonal_w2, fit_gmm, frechet_distance, mixture_transport_cost, smoothness, GaussianStats, GmmComponent, GmmModel,
};
use crate::networks::layers::multi_head;
use crate::networks::{DualModel, GestureSequence, Hand, ModelConfig};
use crate::numkit::{grad_check, ParamId, RngStream, Tape, Tensor, Var};
use crate::sampler::{run_reverse, SamplerState, ZeroVelocity};
use crate::schedule::DiffusionSchedule;
use crate::trainer::{motion_item_loss, MotionDraw, MotionItem};

/// The computations under test that a mutation canary may replace.
pub trait Kernels {
    fn v_target(&self, sched: &DiffusionSchedule, x0: &Tensor, eps: &Tensor, t: usize) -> Tensor {
        sched.v_target(x0, eps, t)
    }
}

/// The library's own implementations.
#[derive(Clone, Copy, Debug, Default)]
pub struct LibraryKernels;

impl Kernels for LibraryKernels {}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!("{} {:<28} {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        let failed = self.failures().len();
        out.push_str(&format!("{} checks, {} failed\n", self.checks.len(), failed));
        out
    }

    fn bound(&mut self, name: &'static str, value: f64, limit: f64) {
        let passed = value.is_finite() && value <= limit;
        self.checks.push(CheckResult { name, passed, detail: format!("{value:.3e} <= {limit:.0e}") });
    }
}

/// Largest `|recover_x0(forward_sample(x0, ε), v) − x0|` over `trials`
/// random triples on the default schedule.
pub fn round_trip_error(kernels: &dyn Kernels, trials: usize, seed: u64) -> f64 {
    let sched = DiffusionSchedule::standard();
    let mut rng = RngStream::new(seed, 0xA1);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x0 = Tensor::scalar(rng.normal() * 2.0);
        let eps = Tensor::scalar(rng.normal());
        let t = 1 + rng.below(sched.steps() as u64) as usize;
        let xt = sched.forward_sample(&x0, t, &eps);
        let v = kernels.v_target(&sched, &x0, &eps, t);
        worst = worst.max((sched.recover_x0(&xt, &v, t).item() - x0.item()).abs());
    }
    worst
}

/// Mean and variance of `runs` scalar reverse chains under zero velocity,
/// the optimal prediction for standard-normal data.
pub fn zero_velocity_moments(steps: usize, runs: usize, seed: u64) -> (f64, f64) {
    let sched = DiffusionSchedule::linear(steps, 1e-4, 0.02).expect("valid schedule");
    let state = SamplerState::start(&[runs], steps, (seed, seed + 1), true);
    let [x, _] = run_reverse(&ZeroVelocity, &sched, state).expect("reverse run");
    let n = runs as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Four-frame, two-joint model with every weight randomized so that no
/// zero-initialized layer hides a gradient path.
pub fn gradient_toy(stop_gradient: bool) -> (DualModel, DiffusionSchedule) {
    let cfg = RunConfig::parse(&format!(
        "frames=4\njoints=2\npitches=3\nfeature-width=4\nrefiner-layers=1\nrefiner-heads=2\n\
         predictor-width=4\ndims=4,8\nheads=2\nfusion-mode=hcaa\nstop-gradient={stop_gradient}\n"
    ))
    .expect("toy config");
    let mut model = DualModel::new(&ModelConfig::from_run(&cfg).expect("toy model"), 3);
    model.ps.randomize(&mut RngStream::new(11, 0x6C), 0.4);
    (model, DiffusionSchedule::linear(10, 1e-3, 0.2).expect("toy schedule"))
}

/// Worst relative gradient error of the stage-two loss.
///
/// Without stop-gradient the summed two-hand loss is checked against every
/// refiner, denoiser and λ parameter of both hands. With it, exchanged
/// peer features are constants by design, so each hand's loss is checked
/// against that hand's own parameters.
pub fn stage_two_gradient_error(stop_gradient: bool, coords: usize) -> f64 {
    let (mut model, sched) = gradient_toy(stop_gradient);
    let mut rng = RngStream::new(5, 0x6D);
    let features = Tensor::from_fn(&[4, 3], |_| rng.uniform());
    let positions = [Tensor::new(vec![4, 3], rng.normals(12)), Tensor::new(vec![4, 3], rng.normals(12))];
    let x0 = [Tensor::new(vec![4, 6], rng.normals(24)), Tensor::new(vec![4, 6], rng.normals(24))];
    let draw = MotionDraw::sample(&mut rng, sched.steps(), &[4, 6], true);
    let frozen = model.clone();
    let loss = |tape: &mut Tape, ps: &crate::numkit::ParamStore, hands: &[usize]| -> Var {
        let item = MotionItem { features: &features, positions: &positions, x0: [&x0[0], &x0[1]] };
        let l = motion_item_loss(tape, ps, &frozen, &sched, &item, &draw);
        match hands {
            [h] => l[*h],
            _ => tape.add(l[0], l[1]),
        }
    };
    if !stop_gradient {
        let ids: Vec<ParamId> = Hand::BOTH.iter().flat_map(|&h| model.motion_ids(h)).collect();
        return grad_check(&mut model.ps, &ids, 1e-5, coords, |tape, ps| loss(tape, ps, &[0, 1])).expect("finite loss");
    }
    Hand::BOTH
        .iter()
        .map(|&h| {
            let ids = model.motion_ids(h);
            grad_check(&mut model.ps, &ids, 1e-5, coords, |tape, ps| loss(tape, ps, &[h.index()])).expect("finite loss")
        })
        .fold(0.0, f64::max)
}

struct HcaaProbe {
    ps: crate::numkit::ParamStore,
    own: HcaaBlock,
    peer: HcaaBlock,
}

fn hcaa_probe(lambda_init: f64) -> HcaaProbe {
    let mut ps = crate::numkit::ParamStore::new();
    let mut rng = RngStream::new(21, 0x4C);
    let own = HcaaBlock::new(&mut ps, "own", 8, 2, lambda_init, &mut rng);
    let peer = HcaaBlock::new(&mut ps, "peer", 8, 2, lambda_init, &mut rng);
    HcaaProbe { ps, own, peer }
}

fn features(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, 0x46);
    Tensor::new(vec![n, d], rng.normals(n * d))
}

/// λ at zero-initialized vectors, exactly.
pub fn lambda_zero_init_error() -> f64 {
    let mut ps = crate::numkit::ParamStore::new();
    let p = HcaaParams::new(&mut ps, "l", 4, 3, DEFAULT_LAMBDA_INIT, &mut RngStream::new(1, 1));
    p.zero(&mut ps);
    let mut tape = Tape::new();
    let l = compute_lambda(&mut tape, &ps, &p, false);
    tape.value(l).data().iter().map(|v| (v - DEFAULT_LAMBDA_INIT).abs()).fold(0.0, f64::max)
}

/// Max-norm HCAA output for identical streams with λ = 1 and shared
/// projections.
pub fn common_mode_residual() -> f64 {
    let HcaaProbe { mut ps, own, .. } = hcaa_probe(1.0);
    own.lambda.zero(&mut ps);
    let x = features(7, 8, 3);
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(x.clone()), tape.leaf(x));
    let lam = compute_lambda(&mut tape, &ps, &own.lambda, false);
    let out = hcaa_heads(&mut tape, &ps, a, b, &own.qkv, &own.qkv, false, lam, own.heads);
    tape.value(out).max_abs()
}

/// Max deviation between HCAA at λ = 0 and plain self-attention.
pub fn zero_lambda_deviation() -> f64 {
    let HcaaProbe { mut ps, own, peer } = hcaa_probe(DEFAULT_LAMBDA_INIT);
    // λ = exp(a) − exp(0) + λ_init with a = ln(1 − λ_init) gives 0.
    own.lambda.zero(&mut ps);
    let a = (1.0 - own.lambda.lambda_init).ln();
    let dk = ps.value(own.lambda.l1q).shape()[1];
    for h in 0..own.heads {
        ps.value_mut(own.lambda.l1q).data_mut()[h * dk] = 1.0;
        ps.value_mut(own.lambda.l1k).data_mut()[h * dk] = a;
    }
    let mut tape = Tape::new();
    let (x, y) = (tape.leaf(features(5, 8, 1)), tape.leaf(features(5, 8, 2)));
    let lam = compute_lambda(&mut tape, &ps, &own.lambda, false);
    let out = hcaa_heads(&mut tape, &ps, x, y, &own.qkv, &peer.qkv, true, lam, own.heads);
    let (q, k, v) = own.qkv.project(&mut tape, &ps, x, false);
    let plain = multi_head(&mut tape, q, k, v, own.heads);
    tape.value(out).max_abs_diff(tape.value(plain))
}

/// `|FD(N(0,1), N(1,1)) − 1|`.
pub fn frechet_1d_error() -> f64 {
    let g = |m: f64| {
        GaussianStats::new(nalgebra::DVector::from_element(1, m), nalgebra::DMatrix::from_element(1, 1, 1.0))
            .expect("1-D stats")
    };
    (frechet_distance(&g(0.0), &g(1.0)).expect("same dimension") - 1.0).abs()
}

/// WGD at K = 1 against the diagonal-Gaussian W2² closed form computed from
/// the sample moments.
pub fn wgd_single_component_error() -> f64 {
    let mut rng = RngStream::new(4, 0x57);
    let a: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), 1.0 + 2.0 * rng.normal()]).collect();
    let b: Vec<Vec<f64>> = (0..200).map(|_| vec![0.5 + 0.5 * rng.normal(), rng.normal()]).collect();
    let moments = |rows: &[Vec<f64>]| {
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..2).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let var: Vec<f64> = (0..2).map(|d| rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n).collect();
        (mean, var)
    };
    let ((ma, va), (mb, vb)) = (moments(&a), moments(&b));
    let closed: f64 = (0..2).map(|d| (ma[d] - mb[d]).powi(2) + (va[d].sqrt() - vb[d].sqrt()).powi(2)).sum();
    let (ra, rb): (Vec<&[f64]>, Vec<&[f64]>) = (a.iter().map(Vec::as_slice).collect(), b.iter().map(Vec::as_slice).collect());
    let ga = fit_gmm(&ra, 1, 0).expect("fit");
    let gb = fit_gmm(&rb, 1, 0).expect("fit");
    (mixture_transport_cost(&ga, &gb).expect("transport") - closed).abs()
}

/// Two 1-D mixtures with disjoint supports and swapped weights against the
/// best vertex of the K = 2 transport polytope.
pub fn wgd_two_component_error() -> f64 {
    let comp = |w: f64, m: f64, v: f64| GmmComponent { weight: w, mean: vec![m], variance: vec![v] };
    let a = GmmModel { components: vec![comp(0.2, -3.0, 0.5), comp(0.8, 3.0, 2.0)] };
    let b = GmmModel { components: vec![comp(0.8, -3.0, 0.5), comp(0.2, 3.0, 2.0)] };
    let c = |i: usize, j: usize| diagonal_w2(&a.components[i], &b.components[j]);
    // Feasible x00 ∈ [0, 0.2]; the objective is linear in x00.
    let plan = |x: f64| x * c(0, 0) + (0.2 - x) * c(0, 1) + (0.8 - x) * c(1, 0) + x * c(1, 1);
    let best = plan(0.0).min(plan(0.2));
    (mixture_transport_cost(&a, &b).expect("transport") - best).abs()
}

/// Smoothness of a static prediction against moving ground truth.
pub fn static_smoothness() -> f64 {
    let moving = GestureSequence::new(Tensor::from_fn(&[12, 2, 3], |i| ((i / 6) as f64 * 0.7).sin())).expect("shape");
    let still = GestureSequence::new(Tensor::full(&[12, 2, 3], 0.2)).expect("shape");
    smoothness(&still, &moving).expect("long enough")
}

/// Run the whole suite.
pub fn run_verify(kernels: &dyn Kernels) -> VerifyReport {
    let mut r = VerifyReport::default();
    r.bound("schedule-round-trip", round_trip_error(kernels, 10_000, 1), 1e-12);
    r.bound("lambda-zero-init", lambda_zero_init_error(), 0.0);
    r.bound("hcaa-common-mode", common_mode_residual(), 1e-6);
    r.bound("hcaa-zero-lambda", zero_lambda_deviation(), 1e-12);
    r.bound("gradient-stage-two", stage_two_gradient_error(false, 2), 1e-4);
    r.bound("gradient-stop-gradient", stage_two_gradient_error(true, 2), 1e-4);
    let (mean, var) = zero_velocity_moments(200, 10_000, 3);
    r.bound("sampler-mean", mean.abs(), 0.05);
    r.bound("sampler-variance", (var - 1.0).abs(), 0.07);
    r.bound("metric-frechet-1d", frechet_1d_error(), 1e-9);
    r.bound("metric-wgd-one-component", wgd_single_component_error(), 1e-6);
    r.bound("metric-wgd-two-component", wgd_two_component_error(), 1e-9);
    r.bound("metric-smoothness-static", (static_smoothness() - 1.0).abs(), 0.0);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FlippedV;

    impl Kernels for FlippedV {
        fn v_target(&self, sched: &DiffusionSchedule, x0: &Tensor, eps: &Tensor, t: usize) -> Tensor {
            sched.v_target(x0, eps, t).map(|v| -v)
        }
    }

    #[test]
    fn suite_passes_and_is_stable() {
        let a = run_verify(&LibraryKernels);
        assert!(a.passed(), "{}", a.to_text());
        assert_eq!(a.to_text(), run_verify(&LibraryKernels).to_text());
    }

    #[test]
    fn sign_flip_canary_names_the_check() {
        let r = run_verify(&FlippedV);
        assert_eq!(r.failures(), vec!["schedule-round-trip"]);
        assert!(r.to_text().contains("FAIL schedule-round-trip"));
    }
}
