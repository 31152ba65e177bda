//! Gaussian KL divergence and the white-box / black-box bounds on the
//! information a scrubbed model retains about the forget set.
//!
//! Both bounds compare a scrubbed outcome `N(h(w), Sigma)` against a
//! reference `N(w_ref, Sigma_0)`, either in weight space (white box) or
//! pushed through the output Jacobians at a set of queries (black box).
//! Pairs are averaged over seeds, matched by position.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{forward, jacobian, loss_and_error, LabeledSet, LossKind};
use crate::numerics::{sub, Cholesky, CovarianceSpec, DenseMatrix};
use crate::scrub::ScrubOutcome;

/// Relative ridge added to query-space covariances before factorization.
pub const QUERY_COV_REGULARIZER: f64 = 1e-10;

/// `KL(N0 || N1)` split into the mean part `0.5 * d^T Sigma_1^{-1} d` and
/// the covariance part.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KlTerms {
    pub mean_term: f64,
    pub cov_term: f64,
}

impl KlTerms {
    pub fn total(&self) -> f64 {
        self.mean_term + self.cov_term
    }

    fn scaled(self, s: f64) -> Self {
        Self { mean_term: self.mean_term * s, cov_term: self.cov_term * s }
    }

    fn accumulate(&mut self, other: Self) {
        self.mean_term += other.mean_term;
        self.cov_term += other.cov_term;
    }
}

/// Closed-form `KL(N(mean0, cov0) || N(mean1, cov1))` in nats.
///
/// Both covariances must be positive definite. The covariance part is
/// clamped at zero against round-off.
pub fn gaussian_kl(mean0: &[f64], cov0: &CovarianceSpec, mean1: &[f64], cov1: &CovarianceSpec) -> Result<KlTerms> {
    let k = mean0.len();
    if mean1.len() != k || cov0.dim() != k || cov1.dim() != k {
        return Err(Error::ShapeMismatch("Gaussian dimensions differ"));
    }
    let d = sub(mean0, mean1);
    if let (CovarianceSpec::Diagonal(v0), CovarianceSpec::Diagonal(v1)) = (cov0, cov1) {
        let mut terms = KlTerms::default();
        for i in 0..k {
            for v in [v0[i], v1[i]] {
                if !(v > 0.0) {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: v });
                }
            }
            let ratio = v0[i] / v1[i];
            terms.mean_term += 0.5 * d[i] * d[i] / v1[i];
            terms.cov_term += 0.5 * (ratio - 1.0 - libm::log(ratio));
        }
        terms.cov_term = terms.cov_term.max(0.0);
        return Ok(terms);
    }
    let c0 = Cholesky::factor(&cov0.to_dense())?;
    let c1 = Cholesky::factor(&cov1.to_dense())?;
    // tr(Sigma_1^{-1} Sigma_0) = ||L1^{-1} L0||_F^2
    let l0 = c0.lower();
    let mut trace = 0.0;
    for col in 0..k {
        let mut y: Vec<f64> = (0..k).map(|r| l0[(r, col)]).collect();
        c1.forward_substitute(&mut y);
        trace += y.iter().map(|v| v * v).sum::<f64>();
    }
    let mut y = d;
    c1.forward_substitute(&mut y);
    let maha: f64 = y.iter().map(|v| v * v).sum();
    let cov_term = 0.5 * (trace - k as f64 + c1.log_det() - c0.log_det());
    Ok(KlTerms { mean_term: 0.5 * maha, cov_term: cov_term.max(0.0) })
}

fn check_pairs(pairs: &[(&ScrubOutcome, &ScrubOutcome)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::InvalidSpec("need at least one seed pair"));
    }
    Ok(())
}

/// Weight-space KL between `N(h(w), Sigma)` and `N(w_ref, Sigma_0)`.
pub fn white_box_kl(scrubbed: &ScrubOutcome, reference: &ScrubOutcome) -> Result<KlTerms> {
    gaussian_kl(
        &scrubbed.shifted_weights,
        &scrubbed.weight_covariance(),
        &reference.shifted_weights,
        &reference.weight_covariance(),
    )
}

/// White-box bound averaged over seed pairs.
pub fn white_box_bound(pairs: &[(&ScrubOutcome, &ScrubOutcome)]) -> Result<KlTerms> {
    check_pairs(pairs)?;
    let mut acc = KlTerms::default();
    for (s, r) in pairs {
        acc.accumulate(white_box_kl(s, r)?);
    }
    Ok(acc.scaled(1.0 / pairs.len() as f64))
}

fn regularized_query_cov(j: &DenseMatrix, cov: &CovarianceSpec) -> Result<CovarianceSpec> {
    let mut s = cov.sandwich(j)?;
    let k = s.rows();
    let tr = s.trace();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::DegenerateQueryCovariance);
    }
    s.add_diagonal(QUERY_COV_REGULARIZER * tr / k as f64);
    Ok(CovarianceSpec::Dense(s))
}

/// KL between the output distributions `N(f, J Sigma J^T)` and
/// `N(f_ref, J_ref Sigma_0 J_ref^T)`, both regularized by
/// `1e-10 * tr / k`.
pub fn activation_kl(
    f: &[f64],
    j: &DenseMatrix,
    cov: &CovarianceSpec,
    f_ref: &[f64],
    j_ref: &DenseMatrix,
    cov_ref: &CovarianceSpec,
) -> Result<KlTerms> {
    let s = regularized_query_cov(j, cov)?;
    let s_ref = regularized_query_cov(j_ref, cov_ref)?;
    gaussian_kl(f, &s, f_ref, &s_ref).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::DegenerateQueryCovariance,
        other => other,
    })
}

/// Black-box KL for one seed pair at the given query inputs.
pub fn black_box_kl(scrubbed: &ScrubOutcome, reference: &ScrubOutcome, queries: &DenseMatrix) -> Result<KlTerms> {
    if queries.rows() == 0 {
        return Err(Error::InvalidSpec("queries must be nonempty"));
    }
    let f = forward(&scrubbed.arch, &scrubbed.shifted_weights, queries)?;
    let f_ref = forward(&reference.arch, &reference.shifted_weights, queries)?;
    let j = jacobian(&scrubbed.arch, &scrubbed.shifted_weights, queries)?;
    let j_ref = jacobian(&reference.arch, &reference.shifted_weights, queries)?;
    activation_kl(
        f.as_slice(),
        j.matrix(),
        &scrubbed.weight_covariance(),
        f_ref.as_slice(),
        j_ref.matrix(),
        &reference.weight_covariance(),
    )
}

/// Black-box bound averaged over seed pairs.
pub fn black_box_bound(pairs: &[(&ScrubOutcome, &ScrubOutcome)], queries: &DenseMatrix) -> Result<KlTerms> {
    check_pairs(pairs)?;
    let mut acc = KlTerms::default();
    for (s, r) in pairs {
        acc.accumulate(black_box_kl(s, r, queries)?);
    }
    Ok(acc.scaled(1.0 / pairs.len() as f64))
}

/// Seed-averaged black-box information of every single row of each query
/// set, in input order.
pub fn per_query_info(pairs: &[(&ScrubOutcome, &ScrubOutcome)], query_sets: &[&DenseMatrix]) -> Result<Vec<Vec<f64>>> {
    query_sets
        .iter()
        .map(|set| {
            (0..set.rows())
                .map(|i| {
                    let q = set.select_rows(&[i]);
                    black_box_bound(pairs, &q).map(|t| t.total())
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InfoBoundReport {
    pub white_box_nats: f64,
    pub black_box_nats: f64,
    pub white_box: KlTerms,
    pub black_box: KlTerms,
    /// Per-query values, one vector per query set.
    pub per_query_nats: Vec<Vec<f64>>,
    pub seeds_averaged: usize,
}

pub fn info_report(
    pairs: &[(&ScrubOutcome, &ScrubOutcome)],
    queries: &DenseMatrix,
    query_sets: &[&DenseMatrix],
) -> Result<InfoBoundReport> {
    let white_box = white_box_bound(pairs)?;
    let black_box = black_box_bound(pairs, queries)?;
    Ok(InfoBoundReport {
        white_box_nats: white_box.total(),
        black_box_nats: black_box.total(),
        white_box,
        black_box,
        per_query_nats: per_query_info(pairs, query_sets)?,
        seeds_averaged: pairs.len(),
    })
}

/// One row of the noise-scale sweep. Mean and covariance terms belong to
/// the white-box bound; `*_std` fields are across seeds.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TradeoffRow {
    pub lambda_noise: f64,
    pub white_box_nats: f64,
    pub black_box_nats: f64,
    pub mean_term: f64,
    pub cov_term: f64,
    pub test_error: f64,
    pub white_box_std: f64,
    pub black_box_std: f64,
    pub test_error_std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.iter().any(|v| v.is_infinite()) {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, libm::sqrt(var))
}

/// Re-noises each scrubbed/reference pair at every grid value and records
/// both bounds and the test error of the realized scrubbed weights.
///
/// A zero noise scale with a nonzero shift carries unbounded information;
/// such rows report `+inf`.
pub fn tradeoff_sweep(
    pairs: &[(&ScrubOutcome, &ScrubOutcome)],
    grid: &[f64],
    queries: &DenseMatrix,
    test: &LabeledSet,
) -> Result<Vec<TradeoffRow>> {
    check_pairs(pairs)?;
    if grid.is_empty() {
        return Err(Error::InvalidSpec("noise grid must be nonempty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidSpec("noise grid must be non-negative and strictly increasing"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut white = vec![];
        let mut black = vec![];
        let mut err = vec![];
        let mut split = KlTerms::default();
        for (s, r) in pairs {
            let s = s.with_noise_scale(lambda)?;
            let r = r.with_noise_scale(lambda)?;
            let (wb, bb) = if lambda == 0.0 {
                (unbounded(&s.shifted_weights, &r.shifted_weights), {
                    let fs = s.forward(queries)?;
                    let fr = r.forward(queries)?;
                    unbounded(fs.as_slice(), fr.as_slice())
                })
            } else {
                (white_box_kl(&s, &r)?, black_box_kl(&s, &r, queries)?)
            };
            split.accumulate(wb);
            white.push(wb.total());
            black.push(bb.total());
            err.push(loss_and_error(&s.arch, &s.realized_weights, test, LossKind::CrossEntropy)?.1);
        }
        let (white_box_nats, white_box_std) = mean_std(&white);
        let (black_box_nats, black_box_std) = mean_std(&black);
        let (test_error, test_error_std) = mean_std(&err);
        let split = split.scaled(1.0 / pairs.len() as f64);
        rows.push(TradeoffRow {
            lambda_noise: lambda,
            white_box_nats,
            black_box_nats,
            mean_term: split.mean_term,
            cov_term: split.cov_term,
            test_error,
            white_box_std,
            black_box_std,
            test_error_std,
        });
    }
    Ok(rows)
}

/// Information of two point masses: zero when they coincide, otherwise
/// unbounded.
fn unbounded(a: &[f64], b: &[f64]) -> KlTerms {
    let mean_term = if a == b { 0.0 } else { f64::INFINITY };
    KlTerms { mean_term, cov_term: 0.0 }
}
