use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{symmetric_eigen, DenseMatrix};
use crate::error::{Error, Result};

/// Covariance of a Gaussian, either diagonal or dense.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum CovarianceSpec {
    Diagonal(Vec<f64>),
    Dense(DenseMatrix),
}

impl CovarianceSpec {
    pub fn zeros(k: usize) -> Self {
        CovarianceSpec::Diagonal(alloc::vec![0.0; k])
    }

    pub fn isotropic(k: usize, variance: f64) -> Self {
        CovarianceSpec::Diagonal(alloc::vec![variance; k])
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceSpec::Diagonal(d) => d.len(),
            CovarianceSpec::Dense(m) => m.rows(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            CovarianceSpec::Diagonal(d) => d.iter().all(|v| *v == 0.0),
            CovarianceSpec::Dense(m) => m.max_abs() == 0.0,
        }
    }

    /// Checks non-negativity (diagonal) or symmetry and positive
    /// semi-definiteness (dense).
    pub fn validate(&self) -> Result<()> {
        match self {
            CovarianceSpec::Diagonal(d) => {
                if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidCovariance("diagonal entries must be finite and >= 0"));
                }
            }
            CovarianceSpec::Dense(m) => {
                if !m.is_square() || !m.is_finite() {
                    return Err(Error::InvalidCovariance("dense covariance must be square and finite"));
                }
                if !m.is_symmetric(1e-10) {
                    return Err(Error::InvalidCovariance("dense covariance is not symmetric"));
                }
                let e = symmetric_eigen(m);
                let top = e.values.first().copied().unwrap_or(0.0).max(0.0);
                if e.values.iter().any(|v| *v < -1e-10 * top.max(1e-300)) {
                    return Err(Error::InvalidCovariance("dense covariance is not PSD"));
                }
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        match self {
            CovarianceSpec::Diagonal(d) => CovarianceSpec::Diagonal(d.iter().map(|v| v * s).collect()),
            CovarianceSpec::Dense(m) => CovarianceSpec::Dense(m.scaled(s)),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            CovarianceSpec::Diagonal(d) => DenseMatrix::from_diagonal(d),
            CovarianceSpec::Dense(m) => m.clone(),
        }
    }

    /// `J * Cov * J^T` for a `k x dim` matrix `J`.
    pub fn sandwich(&self, j: &DenseMatrix) -> Result<DenseMatrix> {
        if j.cols() != self.dim() {
            return Err(Error::ShapeMismatch("sandwich: Jacobian columns != covariance dim"));
        }
        match self {
            CovarianceSpec::Diagonal(d) => {
                let mut scaled = j.clone();
                for i in 0..scaled.rows() {
                    for (v, s) in scaled.row_mut(i).iter_mut().zip(d) {
                        *v *= s;
                    }
                }
                let mut out = scaled.matmul_transpose(j)?;
                symmetrize(&mut out);
                Ok(out)
            }
            CovarianceSpec::Dense(m) => {
                let mut out = j.matmul(m)?.matmul_transpose(j)?;
                symmetrize(&mut out);
                Ok(out)
            }
        }
    }
}

fn symmetrize(m: &mut DenseMatrix) {
    for i in 0..m.rows() {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `k` independent standard normal draws from a ChaCha stream keyed by `seed`.
pub fn sample_standard_normal(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws one sample of `N(mean, cov)`. A pure function of its arguments.
///
/// Diagonal covariances scale each coordinate; dense ones go through a
/// symmetric square root so that semi-definite matrices are accepted.
pub fn sample_gaussian(mean: &[f64], cov: &CovarianceSpec, seed: u64) -> Result<Vec<f64>> {
    let k = mean.len();
    if cov.dim() != k {
        return Err(Error::ShapeMismatch("mean length differs from covariance dimension"));
    }
    cov.validate()?;
    let z = sample_standard_normal(k, seed);
    match cov {
        CovarianceSpec::Diagonal(d) => Ok(mean
            .iter()
            .zip(d)
            .zip(&z)
            .map(|((m, v), zi)| if *v == 0.0 { *m } else { m + libm::sqrt(*v) * zi })
            .collect()),
        CovarianceSpec::Dense(c) => {
            let e = symmetric_eigen(c);
            let scaled: Vec<f64> = e.values.iter().zip(&z).map(|(l, zi)| libm::sqrt(l.max(0.0)) * zi).collect();
            let offset = e.vectors.mat_vec(&scaled)?;
            Ok(mean.iter().zip(offset).map(|(m, o)| m + o).collect())
        }
    }
}
