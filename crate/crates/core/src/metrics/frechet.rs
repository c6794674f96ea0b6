//! Gaussian fits and the Frechet distance between them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricError;

/// Added to every fitted covariance diagonal.
pub const COV_REGULARIZER: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self, MetricError> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(MetricError::DimensionMismatch { expected: d, found: cov.nrows() });
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sample mean and unbiased covariance of the rows, plus
    /// [`COV_REGULARIZER`] on the diagonal. Warns when there are fewer rows
    /// than `d + 1`.
    pub fn fit(rows: &[&[f64]]) -> Result<Self, MetricError> {
        let n = rows.len();
        if n < 2 {
            return Err(MetricError::TooFewSamples { need: 2, have: n });
        }
        let d = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(MetricError::DimensionMismatch { expected: d, found: r.len() });
        }
        if n < d + 1 {
            log::warn!("{n} samples for {d} dimensions: covariance is rank-deficient");
        }
        let mut mean = DVector::zeros(d);
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for r in rows {
            for k in 0..d {
                centered[k] = r[k] - mean[k];
            }
            for i in 0..d {
                let ci = centered[i];
                for j in i..d {
                    cov[(i, j)] += ci * centered[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n - 1) as f64;
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
            cov[(i, i)] += COV_REGULARIZER;
        }
        Ok(Self { mean, cov })
    }
}

/// Symmetric eigendecomposition with negative eigenvalues clamped to zero.
fn clamped_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    for l in eig.eigenvalues.iter_mut() {
        *l = l.max(0.0);
    }
    eig
}

/// Principal square root of a symmetric PSD matrix.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m);
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    &eig.eigenvectors * root * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)`, floored at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let diff = &a.mean - &b.mean;
    let root_a = sqrt_psd(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = clamped_eigen(&inner).eigenvalues.iter().map(|l| l.sqrt()).sum();
    let d = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
