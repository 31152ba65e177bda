//! Dense linear algebra and Gaussian sampling.
//!
//! Everything here is deterministic: storage is row-major and every
//! reduction runs in a fixed order, so results reproduce bit-for-bit.

mod decomp;
mod factor;
mod gaussian;
mod matrix;

pub use decomp::{pseudo_inverse, symmetric_eigen, Svd, SymmetricEigen};
pub use factor::{log_det_psd, solve_psd, Cholesky, Lu};
pub use gaussian::{sample_gaussian, sample_standard_normal, CovarianceSpec};
pub use matrix::DenseMatrix;

/// Plain dot product with a fixed left-to-right reduction order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
