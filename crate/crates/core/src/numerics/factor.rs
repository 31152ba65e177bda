use alloc::vec;
use alloc::vec::Vec;

use super::{dot, DenseMatrix};
use crate::error::{Error, Result};

/// Relative pivot floor: a pivot at or below `PIVOT_FLOOR * max(diag)` is
/// treated as a failure of positive definiteness.
pub const PIVOT_FLOOR: f64 = 1e-14;

/// Lower-triangular Cholesky factor `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch("Cholesky needs a square matrix"));
        }
        let n = a.rows();
        let max_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(*v));
        let floor = PIVOT_FLOOR * max_diag;
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let (head, tail) = l.as_mut_slice().split_at_mut(j * n);
            let row_j = &mut tail[..n];
            for i in 0..j {
                let row_i = &head[i * n..i * n + i];
                let s = a[(j, i)] - dot(&row_j[..i], row_i);
                row_j[i] = s / head[i * n + i];
            }
            let pivot = a[(j, j)] - dot(&row_j[..j], &row_j[..j]);
            if !(pivot > floor) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { index: j, pivot });
            }
            row_j[j] = libm::sqrt(pivot);
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.l
    }

    /// Solves `L y = b` in place.
    pub fn forward_substitute(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let row = self.l.row(i);
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    /// Solves `L^T x = y` in place.
    pub fn back_substitute(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            b[i] /= self.l[(i, i)];
            let bi = b[i];
            let row = self.l.row(i);
            for k in 0..i {
                b[k] -= row[k] * bi;
            }
        }
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.dim() {
            return Err(Error::ShapeMismatch("right-hand side length"));
        }
        let mut x = b.to_vec();
        self.forward_substitute(&mut x);
        self.back_substitute(&mut x);
        Ok(x)
    }

    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.dim() {
            return Err(Error::ShapeMismatch("right-hand side rows"));
        }
        let bt = b.transpose();
        let mut xt = DenseMatrix::zeros(b.cols(), b.rows());
        for j in 0..b.cols() {
            let col = self.solve_vec(bt.row(j))?;
            xt.row_mut(j).copy_from_slice(&col);
        }
        Ok(xt.transpose())
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| libm::log(*d)).sum::<f64>()
    }

    /// `A^{-1}`, symmetric by construction.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.dim();
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.forward_substitute(&mut e);
            self.back_substitute(&mut e);
            inv.row_mut(j).copy_from_slice(&e);
        }
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
                inv[(i, j)] = v;
                inv[(j, i)] = v;
            }
        }
        inv
    }
}

/// LU factorization with partial pivoting, for the non-symmetric kernels
/// that appear when the softmax curvature is kept.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: DenseMatrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::ShapeMismatch("LU needs a square matrix"));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if lu[(i, k)].abs() > lu[(p, k)].abs() {
                    p = i;
                }
            }
            if !(lu[(p, k)].abs() > PIVOT_FLOOR * scale) {
                return Err(Error::Singular);
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        let v = lu[(k, j)];
                        lu[(i, j)] -= f * v;
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(Error::ShapeMismatch("right-hand side length"));
        }
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = self.lu.row(i);
            x[i] -= dot(&row[..i], &x[..i]);
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let s = x[i] - dot(&row[i + 1..], &x[i + 1..]);
            x[i] = s / row[i];
        }
        Ok(x)
    }

    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        let bt = b.transpose();
        let mut xt = DenseMatrix::zeros(b.cols(), b.rows());
        for j in 0..b.cols() {
            xt.row_mut(j).copy_from_slice(&self.solve_vec(bt.row(j))?);
        }
        Ok(xt.transpose())
    }
}

/// Solves `A X = B` for symmetric positive definite `A` via Cholesky.
pub fn solve_psd(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch("solve_psd: A and B row counts differ"));
    }
    Cholesky::factor(a)?.solve(b)
}

/// Natural log-determinant of a symmetric positive definite matrix.
pub fn log_det_psd(a: &DenseMatrix) -> Result<f64> {
    Ok(Cholesky::factor(a)?.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut a = g.gram_rows();
        a.add_diagonal(1.0);
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let b = DenseMatrix::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64);
        let x = solve_psd(&DenseMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_solve() {
        let a = DenseMatrix::from_diagonal(&[2.0, 4.0]);
        let b = DenseMatrix::from_vec(2, 1, vec![2.0, 4.0]).unwrap();
        let x = solve_psd(&a, &b).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_spd_residual() {
        let a = random_spd(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = DenseMatrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0));
        let x = solve_psd(&a, &b).unwrap();
        let r = a.matmul(&x).unwrap().sub(&b).unwrap();
        assert!(r.frobenius_norm() / b.frobenius_norm() <= 1e-10);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(Cholesky::factor(&a), Err(Error::NotPositiveDefinite { index: 1, .. })));
        let zero = DenseMatrix::zeros(2, 2);
        assert!(log_det_psd(&zero).is_err());
    }

    #[test]
    fn log_det_analytic() {
        assert_eq!(log_det_psd(&DenseMatrix::identity(4)).unwrap(), 0.0);
        let e = core::f64::consts::E;
        let a = DenseMatrix::from_diagonal(&[e, e * e]);
        assert!((log_det_psd(&a).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn log_det_of_inverse_cancels() {
        let a = random_spd(6, 11);
        let inv = solve_psd(&a, &DenseMatrix::identity(6)).unwrap();
        let s = log_det_psd(&a).unwrap() + log_det_psd(&inv).unwrap();
        assert!(s.abs() < 1e-8);
    }

    #[test]
    fn lu_solves_nonsymmetric() {
        let a = DenseMatrix::from_rows(&[[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]]).unwrap();
        let x = Lu::factor(&a).unwrap().solve_vec(&[3.0, 2.0, 4.0]).unwrap();
        for (v, want) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((v - want).abs() < 1e-14);
        }
        assert!(Lu::factor(&DenseMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn inverse_is_symmetric_and_correct() {
        let a = random_spd(5, 2);
        let inv = Cholesky::factor(&a).unwrap().inverse();
        let prod = a.matmul(&inv).unwrap().sub(&DenseMatrix::identity(5)).unwrap();
        assert!(prod.max_abs() < 1e-12);
        assert!(inv.is_symmetric(0.0));
    }
}
