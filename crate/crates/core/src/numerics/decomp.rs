use alloc::vec::Vec;

use super::{dot, DenseMatrix};

/// Relative singular-value cutoff below which a direction counts as null.
pub const PINV_RCOND: f64 = 1e-10;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `A = Q diag(values) Q^T` of a symmetric matrix.
/// Eigenvalues are sorted in decreasing order; `vectors` holds them as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: DenseMatrix,
}

/// Cyclic Jacobi eigen-solver. Only the lower triangle's symmetric part is
/// meaningful; the input is symmetrized first.
pub fn symmetric_eigen(a: &DenseMatrix) -> SymmetricEigen {
    let n = a.rows();
    let mut m = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut q = DenseMatrix::identity(n);
    let total = m.frobenius_norm();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..i {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if libm::sqrt(off) <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for r in p + 1..n {
                let apr = m[(p, r)];
                if apr == 0.0 {
                    continue;
                }
                let theta = (m[(r, r)] - m[(p, p)]) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkr = m[(k, r)];
                    m[(k, p)] = c * mkp - s * mkr;
                    m[(k, r)] = s * mkp + c * mkr;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mrk = m[(r, k)];
                    m[(p, k)] = c * mpk - s * mrk;
                    m[(r, k)] = s * mpk + c * mrk;
                }
                for k in 0..n {
                    let qkp = q[(k, p)];
                    let qkr = q[(k, r)];
                    q[(k, p)] = c * qkp - s * qkr;
                    q[(k, r)] = s * qkp + c * qkr;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| q[(i, order[j])]);
    SymmetricEigen { values, vectors }
}

/// Thin singular value decomposition `A = U diag(s) V^T`, with `U` of shape
/// `n x r`, `V` of shape `m x r`, `r = min(n, m)`; values in decreasing order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl Svd {
    /// One-sided (Hestenes) Jacobi SVD.
    pub fn compute(a: &DenseMatrix) -> Self {
        let (n, m) = a.shape();
        if n < m {
            let t = Self::compute(&a.transpose());
            return Self { u: t.v, singular_values: t.singular_values, v: t.u };
        }
        // Columns of A stored as rows so rotations touch contiguous memory.
        let mut cols = a.transpose();
        let mut vt = DenseMatrix::identity(m);
        for _ in 0..MAX_SWEEPS {
            let mut rotated = false;
            for i in 0..m {
                for j in i + 1..m {
                    let alpha = dot(cols.row(i), cols.row(i));
                    let beta = dot(cols.row(j), cols.row(j));
                    let gamma = dot(cols.row(i), cols.row(j));
                    if gamma == 0.0 || gamma.abs() <= 1e-15 * libm::sqrt(alpha * beta) {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / libm::sqrt(1.0 + t * t);
                    let s = c * t;
                    rotate_rows(&mut cols, i, j, c, s);
                    rotate_rows(&mut vt, i, j, c, s);
                }
            }
            if !rotated {
                break;
            }
        }
        let norms: Vec<f64> = (0..m).map(|i| libm::sqrt(dot(cols.row(i), cols.row(i)))).collect();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        let singular_values: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
        let u = DenseMatrix::from_fn(n, m, |r, k| {
            let s = norms[order[k]];
            if s > 0.0 {
                cols[(order[k], r)] / s
            } else {
                0.0
            }
        });
        let v = DenseMatrix::from_fn(m, m, |r, k| vt[(order[k], r)]);
        Self { u, singular_values, v }
    }
}

fn rotate_rows(m: &mut DenseMatrix, i: usize, j: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(j * cols);
    let ri = &mut lo[i * cols..(i + 1) * cols];
    let rj = &mut hi[..cols];
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Moore-Penrose pseudo-inverse. Singular values below
/// `PINV_RCOND * sigma_max` are dropped.
pub fn pseudo_inverse(a: &DenseMatrix) -> DenseMatrix {
    let (n, m) = a.shape();
    if n == 0 || m == 0 {
        return DenseMatrix::zeros(m, n);
    }
    let svd = Svd::compute(a);
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let cutoff = PINV_RCOND * smax;
    let mut out = DenseMatrix::zeros(m, n);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if !(*s > cutoff) {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..m {
            let vik = svd.v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            let row = out.row_mut(i);
            for (j, o) in row.iter_mut().enumerate() {
                *o += vik * svd.u[(j, k)];
            }
        }
    }
    out
}
