//! Diagonal-covariance Gaussian mixtures fitted by EM.

use super::MetricError;
use crate::numkit::RngStream;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const EM_MAX_ITERS: usize = 100;
pub const EM_TOLERANCE: f64 = 1e-6;
/// Components whose responsibility mass falls below this count as degenerate.
const DEGENERATE_MASS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel {
    pub components: Vec<GmmComponent>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Mean log-likelihood of the rows under the mixture.
    pub fn mean_log_likelihood(&self, rows: &[&[f64]]) -> f64 {
        let mut scratch = vec![0.0; self.k()];
        rows.iter().map(|x| self.log_joint(x, &mut scratch)).sum::<f64>() / rows.len() as f64
    }

    /// Fills `out[k] = log w_k + log N(x | k)` and returns their log-sum-exp.
    fn log_joint(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        for (o, c) in out.iter_mut().zip(&self.components) {
            let mut lp = c.weight.max(f64::MIN_POSITIVE).ln();
            for ((xi, m), v) in x.iter().zip(&c.mean).zip(&c.variance) {
                let d = xi - m;
                lp -= 0.5 * (ln2pi + v.ln() + d * d / v);
            }
            *o = lp;
        }
        let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + out.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: first center uniform, the rest proportional to the
/// squared distance to the nearest chosen center.
fn kmeans_pp(rows: &[&[f64]], k: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centers = vec![rows[rng.below(n as u64) as usize].to_vec()];
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n as u64) as usize
        };
        let c = rows[pick].to_vec();
        for (d, r) in nearest.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// One EM run from k-means++ centers. Returns the model and whether any
/// component collapsed along the way.
fn run_em(rows: &[&[f64]], k: usize, rng: &mut RngStream) -> (GmmModel, bool) {
    let n = rows.len();
    let d = rows[0].len();
    let mut global_mean = vec![0.0; d];
    for r in rows {
        for (m, x) in global_mean.iter_mut().zip(r.iter()) {
            *m += x / n as f64;
        }
    }
    let mut global_var = vec![0.0; d];
    for r in rows {
        for i in 0..d {
            global_var[i] += (r[i] - global_mean[i]).powi(2) / n as f64;
        }
    }
    for v in global_var.iter_mut() {
        *v = v.max(VARIANCE_FLOOR);
    }
    let mut model = GmmModel {
        components: kmeans_pp(rows, k, rng)
            .into_iter()
            .map(|mean| GmmComponent { weight: 1.0 / k as f64, mean, variance: global_var.clone() })
            .collect(),
    };
    let mut resp = vec![0.0; n * k];
    let mut scratch = vec![0.0; k];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut degenerate = false;
    for _ in 0..EM_MAX_ITERS {
        // E-step
        let mut ll = 0.0;
        for (i, x) in rows.iter().enumerate() {
            let lse = model.log_joint(x, &mut scratch);
            ll += lse;
            for j in 0..k {
                resp[i * k + j] = (scratch[j] - lse).exp();
            }
        }
        ll /= n as f64;
        // M-step
        for j in 0..k {
            let mass: f64 = (0..n).map(|i| resp[i * k + j]).sum();
            let c = &mut model.components[j];
            c.weight = mass / n as f64;
            if mass < DEGENERATE_MASS {
                degenerate = true;
                c.variance.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, x) in rows.iter().enumerate() {
                let r = resp[i * k + j];
                for (m, xi) in mean.iter_mut().zip(x.iter()) {
                    *m += r * xi;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass);
            let mut var = vec![0.0; d];
            for (i, x) in rows.iter().enumerate() {
                let r = resp[i * k + j];
                for t in 0..d {
                    var[t] += r * (x[t] - mean[t]).powi(2);
                }
            }
            for v in var.iter_mut() {
                *v = (*v / mass).max(VARIANCE_FLOOR);
            }
            c.mean = mean;
            c.variance = var;
        }
        let total: f64 = model.components.iter().map(|c| c.weight).sum();
        model.components.iter_mut().for_each(|c| c.weight /= total);
        if (ll - prev_ll).abs() < EM_TOLERANCE {
            break;
        }
        prev_ll = ll;
    }
    (model, degenerate)
}

/// Fit a `k`-component diagonal GMM with a seeded k-means++ start. A run in
/// which a component collapses is repeated once from a fresh seeding; the
/// retry's result is kept either way, with variances floored.
pub fn fit_gmm(rows: &[&[f64]], k: usize, seed: u64) -> Result<GmmModel, MetricError> {
    if k == 0 {
        return Err(MetricError::TooFewSamples { need: 1, have: 0 });
    }
    if rows.len() < 10 * k {
        return Err(MetricError::TooFewSamples { need: 10 * k, have: rows.len() });
    }
    let d = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != d) {
        return Err(MetricError::DimensionMismatch { expected: d, found: r.len() });
    }
    let mut rng = RngStream::new(seed, super::GMM_STREAM);
    let (model, degenerate) = run_em(rows, k, &mut rng);
    if !degenerate {
        return Ok(model);
    }
    log::warn!("EM produced a degenerate component; re-running once");
    Ok(run_em(rows, k, &mut rng).0)
}
