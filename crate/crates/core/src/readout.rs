//! Readouts an attacker can apply to a scrubbed model: error rates,
//! relearn time, entropy-based membership inference and activation
//! distances, plus the green band spanned by retrained references.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::info::mean_std;
use crate::model::{entropy, forward, loss_and_error, softmax, train_from, ArchSpec, LabeledSet, LossKind, TrainConfig};
use crate::numerics::DenseMatrix;
use crate::scrub::{Method, ScrubOutcome};

/// Relearn epochs are capped here; a model that never relearns reports
/// `RELEARN_MAX_EPOCHS + 1`.
pub const RELEARN_MAX_EPOCHS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReadoutReport {
    pub method: Method,
    pub seed: u64,
    pub err_df: f64,
    pub err_dr: f64,
    pub err_test: f64,
    pub relearn_epochs: usize,
    pub attack_accuracy: f64,
    /// Mean post-softmax L1 distance to the retrained reference on `D_f`.
    pub activation_l1_df: f64,
    /// Same on `D_r`.
    pub activation_l1_dr: f64,
}

/// Readouts that define the green band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Readout {
    ErrDf,
    ErrDr,
    ErrTest,
    RelearnEpochs,
    AttackAccuracy,
}

impl Readout {
    pub const ALL: [Readout; 5] =
        [Readout::ErrDf, Readout::ErrDr, Readout::ErrTest, Readout::RelearnEpochs, Readout::AttackAccuracy];

    pub fn name(self) -> &'static str {
        match self {
            Readout::ErrDf => "err_df",
            Readout::ErrDr => "err_dr",
            Readout::ErrTest => "err_test",
            Readout::RelearnEpochs => "relearn_epochs",
            Readout::AttackAccuracy => "attack_accuracy",
        }
    }
}

impl ReadoutReport {
    pub fn value(&self, readout: Readout) -> f64 {
        match readout {
            Readout::ErrDf => self.err_df,
            Readout::ErrDr => self.err_dr,
            Readout::ErrTest => self.err_test,
            Readout::RelearnEpochs => self.relearn_epochs as f64,
            Readout::AttackAccuracy => self.attack_accuracy,
        }
    }
}

/// Classification error of the realized weights on `(D_f, D_r, test)`.
pub fn error_readouts(outcome: &ScrubOutcome, data: &SplitDataset) -> Result<(f64, f64, f64)> {
    let err = |set: &LabeledSet| loss_and_error(&outcome.arch, &outcome.realized_weights, set, LossKind::CrossEntropy).map(|r| r.1);
    Ok((err(&data.forget())?, err(&data.retain())?, err(&data.test)?))
}

/// Mean cross-entropy of `w` on `set`.
pub fn forget_loss(arch: &ArchSpec, w: &[f64], set: &LabeledSet) -> Result<f64> {
    loss_and_error(arch, w, set, LossKind::CrossEntropy).map(|r| r.0)
}

/// Epochs of fine-tuning on `full` until the loss on `forget` is at most
/// `threshold`. Zero if the realized weights already qualify;
/// `max_epochs + 1` if it never happens.
pub fn relearn_time(
    outcome: &ScrubOutcome,
    full: &LabeledSet,
    forget: &LabeledSet,
    cfg: &TrainConfig,
    threshold: f64,
    max_epochs: usize,
    seed: u64,
) -> Result<usize> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidSpec("relearn threshold must be > 0"));
    }
    let arch = &outcome.arch;
    if forget_loss(arch, &outcome.realized_weights, forget)? <= threshold {
        return Ok(0);
    }
    let cfg = TrainConfig { epochs: max_epochs, stop_at_zero_error: false, ..cfg.clone() };
    let mut reached = None;
    let mut failure = None;
    let mut observer = |epoch: usize, w: &[f64]| match forget_loss(arch, w, forget) {
        Ok(l) if l <= threshold => {
            reached = Some(epoch);
            false
        }
        Ok(_) => true,
        Err(e) => {
            failure = Some(e);
            false
        }
    };
    train_from(arch, &outcome.realized_weights, &outcome.anchor, full, &cfg, seed, Some(&mut observer))?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(reached.unwrap_or(max_epochs + 1))
}

/// Shannon entropy (nats) of the softmax output for every row of `x`.
pub fn output_entropies(arch: &ArchSpec, w: &[f64], x: &DenseMatrix) -> Result<Vec<f64>> {
    let f = forward(arch, w, x)?;
    Ok((0..f.rows()).map(|i| entropy(&softmax(f.row(i)))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum AttackKind {
    /// Best single threshold on the entropy.
    #[default]
    Threshold,
    /// RBF-kernel support-vector classifier on the standardized entropy.
    Svc,
}

/// Binary classifier on a scalar feature, members labelled 1.
#[derive(Debug, Clone, PartialEq)]
pub enum EntropyAttack {
    Threshold { threshold: f64, members_below: bool },
    Svc(Svc),
}

/// Balanced accuracy of `predict` on members (`pos`) vs non-members (`neg`).
fn balanced_accuracy(pos: &[f64], neg: &[f64], predict: impl Fn(f64) -> bool) -> f64 {
    let tp = pos.iter().filter(|&&v| predict(v)).count() as f64 / pos.len() as f64;
    let tn = neg.iter().filter(|&&v| !predict(v)).count() as f64 / neg.len() as f64;
    0.5 * (tp + tn)
}

impl EntropyAttack {
    pub fn fit(members: &[f64], non_members: &[f64], kind: AttackKind) -> Result<Self> {
        if members.is_empty() || non_members.is_empty() {
            return Err(Error::InvalidSpec("attack needs members and non-members"));
        }
        let first = members[0];
        if members.iter().chain(non_members).all(|&v| v == first) {
            return Err(Error::DegenerateFeature);
        }
        match kind {
            AttackKind::Threshold => Ok(Self::fit_threshold(members, non_members)),
            AttackKind::Svc => Ok(EntropyAttack::Svc(Svc::fit_grid(members, non_members, &[0.1, 1.0, 10.0])?)),
        }
    }

    fn fit_threshold(members: &[f64], non_members: &[f64]) -> Self {
        let mut values: Vec<f64> = members.iter().chain(non_members).copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut best = (f64::NEG_INFINITY, 0.0, true);
        let candidates = values.windows(2).map(|w| 0.5 * (w[0] + w[1]));
        for t in candidates {
            for below in [true, false] {
                let acc = balanced_accuracy(members, non_members, |v| (v <= t) == below);
                if acc > best.0 {
                    best = (acc, t, below);
                }
            }
        }
        EntropyAttack::Threshold { threshold: best.1, members_below: best.2 }
    }

    pub fn predict(&self, v: f64) -> bool {
        match self {
            EntropyAttack::Threshold { threshold, members_below } => (v <= *threshold) == *members_below,
            EntropyAttack::Svc(s) => s.decision(v) > 0.0,
        }
    }
}

/// Trains the attack on `D_r` (members) vs test (non-members) and returns
/// the fraction of `D_f` classified as members. A constant feature gives 0.5.
pub fn membership_attack(outcome: &ScrubOutcome, data: &SplitDataset, kind: AttackKind) -> Result<f64> {
    let arch = &outcome.arch;
    let w = &outcome.realized_weights;
    let members = output_entropies(arch, w, &data.retain().inputs)?;
    let non_members = output_entropies(arch, w, &data.test.inputs)?;
    let attack = match EntropyAttack::fit(&members, &non_members, kind) {
        Ok(a) => a,
        Err(Error::DegenerateFeature) => return Ok(0.5),
        Err(e) => return Err(e),
    };
    let forget = output_entropies(arch, w, &data.forget().inputs)?;
    if forget.is_empty() {
        return Ok(0.0);
    }
    Ok(forget.iter().filter(|&&v| attack.predict(v)).count() as f64 / forget.len() as f64)
}

/// Soft-margin SVC with an RBF kernel on a scalar feature, trained by SMO
/// with maximal-violating-pair selection and class-balanced box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Svc {
    support: Vec<f64>,
    coef: Vec<f64>,
    rho: f64,
    gamma: f64,
    center: f64,
    scale: f64,
    /// Kernel width in standardized units.
    pub width: f64,
}

const SVC_C: f64 = 1.0;
const SVC_TOL: f64 = 1e-3;
const SVC_MAX_ITER: usize = 100_000;

impl Svc {
    /// Fits one model per width and keeps the best by training balanced
    /// accuracy (first wins ties).
    pub fn fit_grid(members: &[f64], non_members: &[f64], widths: &[f64]) -> Result<Self> {
        let mut best: Option<(f64, Svc)> = None;
        for &width in widths {
            let svc = Self::fit(members, non_members, width)?;
            let acc = balanced_accuracy(members, non_members, |v| svc.decision(v) > 0.0);
            if best.as_ref().is_none_or(|(a, _)| acc > *a) {
                best = Some((acc, svc));
            }
        }
        best.map(|b| b.1).ok_or(Error::InvalidSpec("empty width grid"))
    }

    pub fn fit(members: &[f64], non_members: &[f64], width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::InvalidSpec("kernel width must be > 0"));
        }
        let raw: Vec<f64> = members.iter().chain(non_members).copied().collect();
        let (center, sd) = mean_std(&raw);
        if !(sd > 0.0) {
            return Err(Error::DegenerateFeature);
        }
        let x: Vec<f64> = raw.iter().map(|v| (v - center) / sd).collect();
        let n = x.len();
        let y: Vec<f64> = (0..n).map(|i| if i < members.len() { 1.0 } else { -1.0 }).collect();
        let bound: Vec<f64> = y
            .iter()
            .map(|&yi| {
                let count = if yi > 0.0 { members.len() } else { non_members.len() };
                SVC_C * n as f64 / (2.0 * count as f64)
            })
            .collect();
        let gamma = 1.0 / (2.0 * width * width);
        let kernel = |a: f64, b: f64| libm::exp(-gamma * (a - b) * (a - b));
        let q = DenseMatrix::from_fn(n, n, |i, j| y[i] * y[j] * kernel(x[i], x[j]));

        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let up = |a: f64, yi: f64, c: f64| (yi > 0.0 && a < c) || (yi < 0.0 && a > 0.0);
        let low = |a: f64, yi: f64, c: f64| (yi < 0.0 && a < c) || (yi > 0.0 && a > 0.0);
        for _ in 0..SVC_MAX_ITER {
            let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
            let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
            for t in 0..n {
                let v = -y[t] * grad[t];
                if up(alpha[t], y[t], bound[t]) && v > gmax {
                    (i, gmax) = (t, v);
                }
                if low(alpha[t], y[t], bound[t]) && v < gmin {
                    (j, gmin) = (t, v);
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax - gmin < SVC_TOL {
                break;
            }
            let (ci, cj) = (bound[i], bound[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let qij = q[(i, j)];
            if y[i] != y[j] {
                let quad = (q[(i, i)] + q[(j, j)] + 2.0 * qij).max(1e-12);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > ci - cj {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = ci - diff;
                    }
                } else if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = cj + diff;
                }
            } else {
                let quad = (q[(i, i)] + q[(j, j)] - 2.0 * qij).max(1e-12);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > ci {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = sum - ci;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > cj {
                    if alpha[j] > cj {
                        alpha[j] = cj;
                        alpha[i] = sum - cj;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
            for t in 0..n {
                grad[t] += q[(i, t)] * di + q[(j, t)] * dj;
            }
        }

        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum_free) = (0usize, 0.0);
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] >= bound[t] {
                if y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if alpha[t] <= 0.0 {
                if y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        let rho = if free > 0 { sum_free / free as f64 } else { 0.5 * (ub + lb) };
        let (support, coef) = (0..n).filter(|&t| alpha[t] > 0.0).map(|t| (x[t], alpha[t] * y[t])).unzip();
        Ok(Self { support, coef, rho, gamma, center, scale: sd, width })
    }

    /// Signed decision value; positive means member.
    pub fn decision(&self, v: f64) -> f64 {
        let z = (v - self.center) / self.scale;
        let s: f64 = self
            .support
            .iter()
            .zip(&self.coef)
            .map(|(x, c)| c * libm::exp(-self.gamma * (x - z) * (x - z)))
            .sum();
        s - self.rho
    }
}

/// Mean over rows of `x` of `||softmax f_a(x) - softmax f_b(x)||_1`.
pub fn activation_distance_weights(arch: &ArchSpec, wa: &[f64], wb: &[f64], x: &DenseMatrix) -> Result<f64> {
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let fa = forward(arch, wa, x)?;
    let fb = forward(arch, wb, x)?;
    let total: f64 = (0..x.rows())
        .map(|i| {
            let (pa, pb) = (softmax(fa.row(i)), softmax(fb.row(i)));
            pa.iter().zip(&pb).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    Ok(total / x.rows() as f64)
}

/// Activation distance between the realized weights of two outcomes.
pub fn activation_distance(a: &ScrubOutcome, b: &ScrubOutcome, x: &DenseMatrix) -> Result<f64> {
    if a.arch != b.arch {
        return Err(Error::ShapeMismatch("outcomes have different architectures"));
    }
    activation_distance_weights(&a.arch, &a.realized_weights, &b.realized_weights, x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterpolationRow {
    pub alpha: f64,
    pub l1_df: f64,
    pub l1_dr: f64,
}

/// Activation distance to `reference` along `w_start + alpha (w_end - w_start)`
/// for `steps` evenly spaced `alpha` in `[0, 1]`.
pub fn interpolation_curve(
    arch: &ArchSpec,
    w_start: &[f64],
    w_end: &[f64],
    reference: &ScrubOutcome,
    forget_x: &DenseMatrix,
    retain_x: &DenseMatrix,
    steps: usize,
) -> Result<Vec<InterpolationRow>> {
    if steps < 2 {
        return Err(Error::InvalidSpec("interpolation needs at least 2 steps"));
    }
    if w_start.len() != w_end.len() {
        return Err(Error::ShapeMismatch("endpoints differ in length"));
    }
    (0..steps)
        .map(|s| {
            let alpha = s as f64 / (steps - 1) as f64;
            let w: Vec<f64> = w_start.iter().zip(w_end).map(|(a, b)| a + alpha * (b - a)).collect();
            Ok(InterpolationRow {
                alpha,
                l1_df: activation_distance_weights(arch, &w, &reference.realized_weights, forget_x)?,
                l1_dr: activation_distance_weights(arch, &w, &reference.realized_weights, retain_x)?,
            })
        })
        .collect()
}

/// `mean +- std` of a readout across reference seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Band {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum BandPosition {
    Inside,
    /// Below the band: the cohort is treated conspicuously badly.
    Streisand,
    /// Above the band: the cohort is still recognizable.
    Leaking,
}

impl Band {
    /// A single value gives a point band.
    pub fn from_values(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.std
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.std
    }

    pub fn position(&self, v: f64) -> BandPosition {
        let slack = 1e-12 * self.mean.abs().max(1.0);
        if v < self.lower() - slack {
            BandPosition::Streisand
        } else if v > self.upper() + slack {
            BandPosition::Leaking
        } else {
            BandPosition::Inside
        }
    }
}

/// Bands of every [`Readout`] over the retrained references.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GreenBand {
    pub err_df: Band,
    pub err_dr: Band,
    pub err_test: Band,
    pub relearn_epochs: Band,
    pub attack_accuracy: Band,
    pub seeds: usize,
}

impl GreenBand {
    pub fn from_reports(reports: &[ReadoutReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::InvalidSpec("green band needs at least one reference"));
        }
        let band = |r: Readout| Band::from_values(&reports.iter().map(|x| x.value(r)).collect::<Vec<_>>());
        Ok(Self {
            err_df: band(Readout::ErrDf),
            err_dr: band(Readout::ErrDr),
            err_test: band(Readout::ErrTest),
            relearn_epochs: band(Readout::RelearnEpochs),
            attack_accuracy: band(Readout::AttackAccuracy),
            seeds: reports.len(),
        })
    }

    pub fn get(&self, readout: Readout) -> Band {
        match readout {
            Readout::ErrDf => self.err_df,
            Readout::ErrDr => self.err_dr,
            Readout::ErrTest => self.err_test,
            Readout::RelearnEpochs => self.relearn_epochs,
            Readout::AttackAccuracy => self.attack_accuracy,
        }
    }

    pub fn position(&self, readout: Readout, value: f64) -> BandPosition {
        self.get(readout).position(value)
    }
}
