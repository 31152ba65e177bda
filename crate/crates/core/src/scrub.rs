//! Scrubbing procedures `S(w) = h(w) + n` and the baselines they are
//! compared against.

use alloc::vec::Vec;

use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{
    fisher_diag, forward, jacobian, train, train_from, ArchKind, ArchSpec, LabeledSet, LossKind, ModelState, TrainConfig,
};
use crate::ntk::{assemble_blocks, ce_curvature_blocks, trapezium_correct, Curvature, NtkScrubber, ShiftDiagnostics};
use crate::numerics::{add, sample_gaussian, CovarianceSpec, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Method {
    Original,
    Finetune,
    Fisher,
    Ntk,
    Retrain,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Original, Method::Finetune, Method::Fisher, Method::Ntk, Method::Retrain];

    pub fn name(self) -> &'static str {
        match self {
            Method::Original => "original",
            Method::Finetune => "finetune",
            Method::Fisher => "fisher",
            Method::Ntk => "ntk",
            Method::Retrain => "retrain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Seed of the noise stream for this method, so that methods sharing a
    /// run seed never share noise.
    pub fn noise_seed(self, seed: u64) -> u64 {
        let tag = self as u64 + 1;
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ tag.wrapping_mul(0xbf58_476d_1ce4_e5b9)
    }
}

/// Result of a scrubbing procedure: the deterministic shift `h(w)`, the
/// noise covariance and one realized draw.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScrubOutcome {
    pub method: Method,
    pub arch: ArchSpec,
    pub anchor: Vec<f64>,
    pub shifted_weights: Vec<f64>,
    /// Unscaled covariance; the noise is `N(0, noise_scale * noise_cov)`.
    pub noise_cov: CovarianceSpec,
    pub noise_scale: f64,
    pub seed: u64,
    pub realized_weights: Vec<f64>,
}

impl ScrubOutcome {
    /// Builds an outcome and draws its realized weights.
    pub fn new(
        method: Method,
        arch: ArchSpec,
        anchor: Vec<f64>,
        shifted_weights: Vec<f64>,
        noise_cov: CovarianceSpec,
        noise_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::InvalidSpec("noise scale must be finite and >= 0"));
        }
        if shifted_weights.len() != arch.param_count() || anchor.len() != shifted_weights.len() {
            return Err(Error::ShapeMismatch("weights do not match architecture"));
        }
        let realized_weights = if noise_scale == 0.0 || noise_cov.is_zero() {
            if noise_cov.dim() != shifted_weights.len() {
                return Err(Error::ShapeMismatch("noise covariance dimension differs from weights"));
            }
            shifted_weights.clone()
        } else {
            sample_gaussian(&shifted_weights, &noise_cov.scaled(noise_scale), method.noise_seed(seed))?
        };
        Ok(Self { method, arch, anchor, shifted_weights, noise_cov, noise_scale, seed, realized_weights })
    }

    /// Noise-free outcome.
    pub fn deterministic(method: Method, model: &ModelState, w: Vec<f64>) -> Result<Self> {
        let p = w.len();
        Self::new(method, model.arch.clone(), model.w0.clone(), w, CovarianceSpec::zeros(p), 0.0, model.seed)
    }

    /// Same shift and covariance with a different noise scale.
    pub fn with_noise_scale(&self, noise_scale: f64) -> Result<Self> {
        Self::new(
            self.method,
            self.arch.clone(),
            self.anchor.clone(),
            self.shifted_weights.clone(),
            self.noise_cov.clone(),
            noise_scale,
            self.seed,
        )
    }

    /// Covariance of the realized weights, `noise_scale * noise_cov`.
    pub fn weight_covariance(&self) -> CovarianceSpec {
        self.noise_cov.scaled(self.noise_scale)
    }

    pub fn realized_model(&self) -> ModelState {
        ModelState {
            arch: self.arch.clone(),
            w: self.realized_weights.clone(),
            w0: self.anchor.clone(),
            seed: self.seed,
        }
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        forward(&self.arch, &self.realized_weights, x)
    }
}

/// Point at which the network is linearized for the NTK scrub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum LinearizeAt {
    /// The trained weights `w(D)`.
    #[default]
    Trained,
    /// The anchor `w0`.
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NtkScrubOptions {
    /// Kernel ridge. Matches SGD on a mean loss with weight decay `wd`
    /// when set to `n * wd`.
    pub ridge: f64,
    pub noise_scale: f64,
    pub linearize_at: LinearizeAt,
    /// `None` applies the trapezium correction to nonlinear models only.
    pub trapezium: Option<bool>,
    pub curvature: Curvature,
    pub loss: LossKind,
}

impl Default for NtkScrubOptions {
    fn default() -> Self {
        Self {
            ridge: 1.0,
            noise_scale: 0.0,
            linearize_at: LinearizeAt::Trained,
            trapezium: None,
            curvature: Curvature::Identity,
            loss: LossKind::CrossEntropy,
        }
    }
}

/// The NTK scrub together with its linearized endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NtkScrubReport {
    pub outcome: ScrubOutcome,
    /// `w_lin(D)`
    pub linear_full: Vec<f64>,
    /// `w_lin(D_r)`
    pub linear_retain: Vec<f64>,
    pub trapezium_applied: bool,
    pub diagnostics: ShiftDiagnostics,
}

fn stacked_gradient(loss: LossKind, f: &DenseMatrix, y: &DenseMatrix) -> Vec<f64> {
    (0..f.rows()).flat_map(|i| loss.output_gradient(f.row(i), y.row(i))).collect()
}

/// Residual `-(g + H J (w0 - L))` of the linearized problem around `L`.
fn linear_residual(
    loss: LossKind,
    curvature: Curvature,
    set: &LabeledSet,
    f_at: &DenseMatrix,
    j: &crate::model::Jacobian,
    offset: &[f64],
) -> Result<Vec<f64>> {
    let g = stacked_gradient(loss, f_at, &set.targets);
    let mut jd = j.apply(offset)?;
    if curvature == Curvature::Softmax {
        let c = f_at.cols();
        for s in 0..f_at.rows() {
            let h = crate::ntk::softmax_hessian(f_at.row(s));
            let block: Vec<f64> = (0..c).map(|a| (0..c).map(|b| h[(a, b)] * jd[s * c + b]).sum()).collect();
            jd[s * c..(s + 1) * c].copy_from_slice(&block);
        }
    }
    Ok(g.iter().zip(&jd).map(|(gi, di)| -(gi + di)).collect())
}

/// NTK scrub `h(w) = w + delta_w`, optionally trapezium-corrected, with
/// noise `N(0, noise_scale * F^{-1})` and `F` the Fisher diagonal at
/// `h(w)` on `D_r`.
pub fn scrub_ntk(model: &ModelState, data: &SplitDataset, opts: &NtkScrubOptions, seed: u64) -> Result<ScrubOutcome> {
    scrub_ntk_report(model, data, opts, seed).map(|r| r.outcome)
}

pub fn scrub_ntk_report(model: &ModelState, data: &SplitDataset, opts: &NtkScrubOptions, seed: u64) -> Result<NtkScrubReport> {
    let arch = &model.arch;
    let at = match opts.linearize_at {
        LinearizeAt::Trained => &model.w,
        LinearizeAt::Anchor => &model.w0,
    };
    let retain = data.retain();
    let forget = data.forget();
    let jr = jacobian(arch, at, &retain.inputs)?;
    let jf = jacobian(arch, at, &forget.inputs)?;
    let fr = forward(arch, at, &retain.inputs)?;
    let ff = forward(arch, at, &forget.inputs)?;
    let blocks = match opts.curvature {
        Curvature::Identity => assemble_blocks(&jr, &jf, opts.ridge)?,
        Curvature::Softmax => ce_curvature_blocks(&jr, &jf, &fr, &ff, opts.ridge, Curvature::Softmax)?,
    };
    let offset = crate::numerics::sub(&model.w0, at);
    let rr = linear_residual(opts.loss, opts.curvature, &retain, &fr, &jr, &offset)?;
    let rf = linear_residual(opts.loss, opts.curvature, &forget, &ff, &jf, &offset)?;
    let scrubber = NtkScrubber::new(&blocks, &jr, &jf)?;
    let shift = scrubber.shift(&rr, &rf)?;
    let linear_retain = scrubber.retain_solution(&model.w0, &rr)?;
    let linear_full = crate::numerics::sub(&linear_retain, &shift.delta_w);

    let use_trapezium = opts.trapezium.unwrap_or(arch.kind != ArchKind::Linear) && !forget.is_empty();
    let shifted = if use_trapezium {
        trapezium_correct(&model.w, &linear_full, &linear_retain)?
    } else {
        add(&model.w, &shift.delta_w)
    };
    let noise_cov = inverse_fisher(arch, &shifted, &retain.inputs)?;
    let outcome = ScrubOutcome::new(
        Method::Ntk,
        arch.clone(),
        model.w0.clone(),
        shifted,
        noise_cov,
        opts.noise_scale,
        seed,
    )?;
    Ok(NtkScrubReport {
        outcome,
        linear_full,
        linear_retain,
        trapezium_applied: use_trapezium,
        diagnostics: shift.diagnostics,
    })
}

/// Elementwise reciprocal of the clamped Fisher diagonal.
pub fn inverse_fisher(arch: &ArchSpec, w: &[f64], inputs: &DenseMatrix) -> Result<CovarianceSpec> {
    if inputs.rows() == 0 {
        return Ok(CovarianceSpec::zeros(w.len()));
    }
    match fisher_diag(arch, w, inputs)? {
        CovarianceSpec::Diagonal(d) => Ok(CovarianceSpec::Diagonal(d.iter().map(|v| 1.0 / v).collect())),
        CovarianceSpec::Dense(_) => unreachable!("Fisher diagonal is diagonal"),
    }
}

/// Noise-only scrub: `h(w) = w` with noise from the inverse Fisher at `w`
/// on `D_r`.
pub fn scrub_fisher_baseline(model: &ModelState, data: &SplitDataset, noise_scale: f64, seed: u64) -> Result<ScrubOutcome> {
    let cov = inverse_fisher(&model.arch, &model.w, &data.retain().inputs)?;
    ScrubOutcome::new(Method::Fisher, model.arch.clone(), model.w0.clone(), model.w.clone(), cov, noise_scale, seed)
}

/// Continues training from `w` on `D_r` only.
pub fn finetune_baseline(model: &ModelState, data: &SplitDataset, cfg: &TrainConfig, seed: u64) -> Result<ScrubOutcome> {
    let tuned = train_from(&model.arch, &model.w, &model.w0, &data.retain(), cfg, seed, None)?;
    let mut out = ScrubOutcome::deterministic(Method::Finetune, model, tuned.w)?;
    out.seed = seed;
    Ok(out)
}

/// Trains from `w0` on `D_r` with the same protocol as the original model.
pub fn retrain_oracle(arch: &ArchSpec, w0: &[f64], data_r: &LabeledSet, cfg: &TrainConfig, seed: u64) -> Result<ScrubOutcome> {
    let m = train(arch, w0, data_r, cfg, seed)?;
    ScrubOutcome::deterministic(Method::Retrain, &m, m.w.clone())
}

/// The unscrubbed model as an outcome.
pub fn original(model: &ModelState) -> Result<ScrubOutcome> {
    ScrubOutcome::deterministic(Method::Original, model, model.w.clone())
}
