//! Evaluation quantities: FGD, WGD, PD, smoothness and FID.

mod embedder;
mod frechet;
mod gmm;
mod transport;

pub use embedder::MotionEmbedder;
pub use frechet::{frechet_distance, sqrt_psd, GaussianStats, COV_REGULARIZER};
pub use gmm::{fit_gmm, GmmComponent, GmmModel, EM_MAX_ITERS, EM_TOLERANCE, VARIANCE_FLOOR};
pub use transport::{solve_transport, TransportPlan};

use crate::networks::{GestureSequence, PositionSequence};

/// RNG stream id for EM seeding.
pub const GMM_STREAM: u64 = 0x6A3;
/// Floor on the reference acceleration in the smoothness ratio.
pub const ACCEL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {need} samples, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("empty input set")]
    Empty,
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("sequence too short: {0} frames, need at least 3")]
    TooShort(usize),
    #[error("embedder is untrained")]
    UntrainedEmbedder,
    #[error("embedder asset: {0}")]
    Asset(String),
    #[error("{0}")]
    Invalid(String),
}

/// Every frame of every clip as a flattened `J·3` row.
fn frame_rows(set: &[GestureSequence]) -> Vec<Vec<f64>> {
    set.iter()
        .flat_map(|g| {
            let flat = g.flat();
            (0..flat.rows()).map(move |f| flat.row(f).to_vec()).collect::<Vec<_>>()
        })
        .collect()
}

fn as_refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    rows.iter().map(Vec::as_slice).collect()
}

/// Frechet distance between per-frame joint-angle Gaussians of two sets.
pub fn fgd(pred: &[GestureSequence], gt: &[GestureSequence]) -> Result<f64, MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::Empty);
    }
    let a = GaussianStats::fit(&as_refs(&frame_rows(pred)))?;
    let b = GaussianStats::fit(&as_refs(&frame_rows(gt)))?;
    frechet_distance(&a, &b)
}

/// Closed-form W2² between diagonal Gaussians.
pub fn diagonal_w2(a: &GmmComponent, b: &GmmComponent) -> f64 {
    let mean: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let spread: f64 = a.variance.iter().zip(&b.variance).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum();
    mean + spread
}

/// Exact optimal-transport cost between two mixtures' component weights
/// under the pairwise W2² ground cost.
pub fn mixture_transport_cost(a: &GmmModel, b: &GmmModel) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let cost: Vec<f64> =
        a.components.iter().flat_map(|ca| b.components.iter().map(move |cb| diagonal_w2(ca, cb))).collect();
    Ok(solve_transport(&a.weights(), &b.weights(), &cost)?.cost)
}

/// Wasserstein distance between `k`-component GMMs fitted to each set's
/// frames with the same seed.
pub fn wgd(pred: &[GestureSequence], gt: &[GestureSequence], k: usize, seed: u64) -> Result<f64, MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::Empty);
    }
    let a = fit_gmm(&as_refs(&frame_rows(pred)), k, seed)?;
    let b = fit_gmm(&as_refs(&frame_rows(gt)), k, seed)?;
    mixture_transport_cost(&a, &b)
}

/// Mean Euclidean wrist-position error over frames, clips and hands.
pub fn pd(pred: &[[PositionSequence; 2]], gt: &[[PositionSequence; 2]]) -> Result<f64, MetricError> {
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    if pred.len() != gt.len() {
        return Err(MetricError::Misaligned(format!("{} vs {} clips", pred.len(), gt.len())));
    }
    let (mut total, mut count) = (0.0, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        for h in 0..2 {
            let (a, b) = (p[h].values(), g[h].values());
            if a.shape() != b.shape() {
                return Err(MetricError::Misaligned(format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            for f in 0..a.rows() {
                total += a.row(f).iter().zip(b.row(f)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            }
            count += a.rows();
        }
    }
    Ok(total / count as f64)
}

/// Sum of `|x(t+1) − 2x(t) + x(t−1)|` over interior frames and channels,
/// with the number of terms.
fn acceleration_sum(g: &GestureSequence) -> Result<(f64, usize), MetricError> {
    let n = g.frames();
    if n < 3 {
        return Err(MetricError::TooShort(n));
    }
    let flat = g.flat();
    let mut sum = 0.0;
    for f in 1..n - 1 {
        let (prev, cur, next) = (flat.row(f - 1), flat.row(f), flat.row(f + 1));
        for c in 0..cur.len() {
            sum += (next[c] - 2.0 * cur[c] + prev[c]).abs();
        }
    }
    Ok((sum, (n - 2) * flat.cols()))
}

fn mean_acceleration(set: &[GestureSequence]) -> Result<f64, MetricError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for g in set {
        let (s, c) = acceleration_sum(g)?;
        sum += s;
        count += c;
    }
    Ok(sum / count as f64)
}

/// `|mean |a_pred| − mean |a_gt|| / max(mean |a_gt|, 1e-8)` for one clip.
pub fn smoothness(pred: &GestureSequence, gt: &GestureSequence) -> Result<f64, MetricError> {
    smoothness_set(std::slice::from_ref(pred), std::slice::from_ref(gt))
}

/// [`smoothness`] with the means pooled over every clip of each set.
pub fn smoothness_set(pred: &[GestureSequence], gt: &[GestureSequence]) -> Result<f64, MetricError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::Empty);
    }
    let a = mean_acceleration(pred)?;
    let b = mean_acceleration(gt)?;
    Ok((a - b).abs() / b.max(ACCEL_FLOOR))
}

/// Frechet distance between clip embeddings of the two sets.
pub fn fid(
    pred: &[[GestureSequence; 2]],
    gt: &[[GestureSequence; 2]],
    embedder: &MotionEmbedder,
) -> Result<f64, MetricError> {
    if !embedder.is_trained() {
        return Err(MetricError::UntrainedEmbedder);
    }
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricError::Empty);
    }
    let embed = |set: &[[GestureSequence; 2]]| -> Result<GaussianStats, MetricError> {
        let rows: Vec<Vec<f64>> = set.iter().map(|c| embedder.embed(c)).collect::<Result<_, _>>()?;
        GaussianStats::fit(&as_refs(&rows))
    };
    frechet_distance(&embed(pred)?, &embed(gt)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    /// `L`, `R`, or `both`.
    pub hand: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, metric: &str, hand: &str, value: f64) {
        self.rows.push(MetricRow { metric: metric.into(), hand: hand.into(), value });
    }

    pub fn get(&self, metric: &str, hand: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.hand == hand).map(|r| r.value)
    }

    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.value.is_finite())
    }

    pub fn to_csv(&self, config_hash: &str, seed: u64) -> String {
        let mut out = String::from("metric,hand,value,config_hash,seed\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.9e},{config_hash},{seed}\n", r.metric, r.hand, r.value));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{RngStream, Tensor};
    use proptest::prelude::*;

    fn gesture(n: usize, j: usize, f: impl FnMut(usize) -> f64) -> GestureSequence {
        GestureSequence::new(Tensor::from_fn(&[n, j, 3], f)).unwrap()
    }

    fn random_set(seed: u64, clips: usize, n: usize, j: usize) -> Vec<GestureSequence> {
        let mut rng = RngStream::new(seed, 3);
        (0..clips).map(|_| gesture(n, j, |_| rng.normal() * 0.3)).collect()
    }

    #[test]
    fn fgd_identity_and_mean_shift() {
        let gt = random_set(1, 20, 16, 2);
        assert!(fgd(&gt, &gt).unwrap() < 1e-9);
        let shifted: Vec<GestureSequence> = gt.iter().map(|g| GestureSequence::new(g.values().map(|x| x + 0.1)).unwrap()).collect();
        assert!((fgd(&shifted, &gt).unwrap() - 6.0 * 0.01).abs() < 1e-9);
    }

    #[test]
    fn wgd_identity_and_single_component_reduction() {
        let gt = random_set(2, 10, 16, 1);
        assert!(wgd(&gt, &gt, 4, 3).unwrap().abs() < 1e-6);
        let other = random_set(3, 10, 16, 1);
        let (ra, rb) = (frame_rows(&other), frame_rows(&gt));
        let (a, b) = (fit_gmm(&as_refs(&ra), 1, 0).unwrap(), fit_gmm(&as_refs(&rb), 1, 0).unwrap());
        let direct = diagonal_w2(&a.components[0], &b.components[0]);
        assert!((wgd(&other, &gt, 1, 0).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn swapped_two_component_mixtures_match_enumeration() {
        let comp = |w: f64, m: f64, v: f64| GmmComponent { weight: w, mean: vec![m], variance: vec![v] };
        let a = GmmModel { components: vec![comp(0.3, -4.0, 1.0), comp(0.7, 4.0, 0.25)] };
        let b = GmmModel { components: vec![comp(0.7, -4.0, 1.0), comp(0.3, 4.0, 0.25)] };
        let c = |i: usize, j: usize| diagonal_w2(&a.components[i], &b.components[j]);
        // Plans: x00 ∈ [0, 0.3]; cost is linear so the optimum is a vertex.
        let plan = |x: f64| x * c(0, 0) + (0.3 - x) * c(0, 1) + (0.7 - x) * c(1, 0) + x * c(1, 1);
        let best = plan(0.0).min(plan(0.3));
        assert!((mixture_transport_cost(&a, &b).unwrap() - best).abs() < 1e-9);
        // 0.4 of mass crosses 8 units with spread difference (1 - 0.5)².
        assert!((best - 0.4 * (64.0 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn pd_offset_is_three_four_five() {
        let base = |s: f64| PositionSequence::new(Tensor::from_fn(&[5, 3], |i| i as f64 * 0.1 + s)).unwrap();
        let gt = vec![[base(0.0), base(1.0)]];
        let pred: Vec<[PositionSequence; 2]> = gt
            .iter()
            .map(|p| p.clone().map(|s| {
                let v = s.values();
                PositionSequence::new(Tensor::from_fn(v.shape(), |i| {
                    v.data()[i] + [0.03, 0.0, 0.04][i % 3]
                }))
                .unwrap()
            }))
            .collect();
        assert!((pd(&pred, &gt).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(pd(&gt, &gt).unwrap(), 0.0);
        assert!(pd(&pred, &[]).is_err());
    }

    #[test]
    fn smoothness_cases() {
        let wave = gesture(20, 2, |i| ((i / 6) as f64 * 0.4).sin() * (1 + i % 6) as f64);
        let line = gesture(20, 2, |i| (i / 6) as f64 * 0.1 - (i % 6) as f64);
        let still = gesture(20, 2, |_| 0.3);
        assert_eq!(smoothness(&wave, &wave).unwrap(), 0.0);
        assert_eq!(smoothness(&still, &wave).unwrap(), 1.0);
        assert!((smoothness(&line, &wave).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(smoothness(&gesture(2, 1, |_| 0.0), &wave), Err(MetricError::TooShort(2))));
    }

    #[test]
    fn report_csv_layout() {
        let mut r = MetricReport::default();
        r.push("pd", "both", 0.5);
        r.push("fgd", "L", 1.25);
        let csv = r.to_csv("abc", 7);
        assert_eq!(csv.lines().next().unwrap(), "metric,hand,value,config_hash,seed");
        assert!(csv.contains("fgd,L,1.250000000e0,abc,7"));
        assert_eq!(r.get("pd", "both"), Some(0.5));
    }

    /// Straight-line re-implementation used as an independent oracle.
    fn pd_brute(pred: &[[PositionSequence; 2]], gt: &[[PositionSequence; 2]]) -> f64 {
        let mut dists = Vec::new();
        for c in 0..pred.len() {
            for h in 0..2 {
                let (a, b) = (pred[c][h].values().data(), gt[c][h].values().data());
                for f in 0..a.len() / 3 {
                    let d: f64 = (0..3).map(|k| (a[3 * f + k] - b[3 * f + k]).powi(2)).sum();
                    dists.push(d.sqrt());
                }
            }
        }
        dists.iter().sum::<f64>() / dists.len() as f64
    }

    proptest! {
        #[test]
        fn pd_matches_brute_force_and_is_permutation_invariant(seed in 0u64..10_000, clips in 1usize..6) {
            let mut rng = RngStream::new(seed, 8);
            let mut mk = || PositionSequence::new(Tensor::new(vec![6, 3], rng.normals(18))).unwrap();
            let pred: Vec<[PositionSequence; 2]> = (0..clips).map(|_| [mk(), mk()]).collect();
            let gt: Vec<[PositionSequence; 2]> = (0..clips).map(|_| [mk(), mk()]).collect();
            let v = pd(&pred, &gt).unwrap();
            prop_assert!((v - pd_brute(&pred, &gt)).abs() < 1e-12);
            let (mut rp, mut rg) = (pred.clone(), gt.clone());
            rp.reverse();
            rg.reverse();
            prop_assert!((pd(&rp, &rg).unwrap() - v).abs() < 1e-12);
        }

        #[test]
        fn smoothness_is_permutation_invariant(seed in 0u64..10_000) {
            let a = random_set(seed, 4, 8, 2);
            let b = random_set(seed + 1, 4, 8, 2);
            let v = smoothness_set(&a, &b).unwrap();
            let (ra, rb): (Vec<_>, Vec<_>) = (a.iter().rev().cloned().collect(), b.iter().rev().cloned().collect());
            prop_assert!((smoothness_set(&ra, &rb).unwrap() - v).abs() < 1e-12);
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn wgd_is_zero_on_identity_and_nearly_symmetric(seed in 0u64..1000) {
            let a = random_set(seed, 6, 10, 1);
            let b: Vec<GestureSequence> = random_set(seed + 5000, 6, 10, 1)
                .into_iter()
                .map(|g| GestureSequence::new(g.values().map(|x| x + 0.5)).unwrap())
                .collect();
            prop_assert!(wgd(&a, &a, 3, seed).unwrap().abs() < 1e-6);
            let (ab, ba) = (wgd(&a, &b, 3, seed).unwrap(), wgd(&b, &a, 3, seed).unwrap());
            prop_assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
        }
    }
}
