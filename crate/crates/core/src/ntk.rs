//! Kernel blocks and closed-form solutions of the linearized model.
//!
//! With `J` the output Jacobian at the linearization point and
//! `Theta = J J^T + ridge * I`, the anchored ridge solution of the linearized
//! model on data `D` is
//!
//! ```text
//! w_lin(D) = w_anchor + J^T Theta^{-1} (Y - f0)
//! ```
//!
//! Splitting `D` into retain rows `r` and forget rows `f`, the difference
//! `w_lin(D_r) - w_lin(D)` reduces to
//!
//! ```text
//! delta_w = P J_f^T M (Theta_fr Theta_rr^{-1} r_r - r_f)
//! M       = (Theta_ff - Theta_fr Theta_rr^{-1} Theta_rf)^{-1}
//! P v     = v - J_r^T Theta_rr^{-1} (J_r v)
//! ```
//!
//! with residuals `r = Y - f0`. Only `(n_r c) x (n_r c)` and
//! `(n_f c) x (n_f c)` systems are factorized; `P` is never formed.
//!
//! When the softmax curvature `H` is kept, `Theta = H J J^T + ridge * I` is
//! no longer symmetric, `Theta_fr` is stored separately and the projector
//! becomes `P v = v - J_r^T Theta_rr^{-1} H_r J_r v`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{jacobian, softmax, ArchSpec, Jacobian, LabeledSet, LossKind};
use crate::numerics::{norm2, sub, Cholesky, DenseMatrix, Lu};

/// Output-space curvature used when building the kernel for a
/// cross-entropy model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Curvature {
    /// Replace the loss Hessian by the identity (the default).
    #[default]
    Identity,
    /// Per-sample softmax cross-entropy Hessian `diag(s) - s s^T`.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtkBlocks {
    pub theta_rr: DenseMatrix,
    pub theta_rf: DenseMatrix,
    pub theta_ff: DenseMatrix,
    /// Lower-left block when it is not `theta_rf^T` (softmax curvature).
    pub theta_fr: Option<DenseMatrix>,
    /// Per-sample `c x c` curvature of the retain rows (softmax curvature).
    pub retain_curvature: Option<Vec<DenseMatrix>>,
    pub ridge: f64,
    /// Digest of the weights the Jacobians were evaluated at.
    pub provenance: Option<u64>,
}

impl NtkBlocks {
    pub fn is_symmetric(&self) -> bool {
        self.theta_fr.is_none()
    }

    pub fn theta_fr(&self) -> DenseMatrix {
        self.theta_fr.clone().unwrap_or_else(|| self.theta_rf.transpose())
    }

    pub fn with_provenance(mut self, digest: u64) -> Self {
        self.provenance = Some(digest);
        self
    }

    /// The full kernel `[[rr, rf], [fr, ff]]`.
    pub fn full(&self) -> DenseMatrix {
        let nr = self.theta_rr.rows();
        let nf = self.theta_ff.rows();
        let fr = self.theta_fr();
        DenseMatrix::from_fn(nr + nf, nr + nf, |i, j| match (i < nr, j < nr) {
            (true, true) => self.theta_rr[(i, j)],
            (true, false) => self.theta_rf[(i, j - nr)],
            (false, true) => fr[(i - nr, j)],
            (false, false) => self.theta_ff[(i - nr, j - nr)],
        })
    }
}

/// FNV-1a over the bit patterns of a weight vector.
pub fn weights_digest(w: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in w {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftDiagnostics {
    pub delta_norm: f64,
    /// `||J_r delta_w||`: how much the shift still moves the retain outputs.
    pub retain_leakage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScrubShift {
    pub delta_w: Vec<f64>,
    pub diagnostics: ShiftDiagnostics,
}

impl ScrubShift {
    pub fn new(delta_w: Vec<f64>, retain_jacobian: &Jacobian) -> Result<Self> {
        if delta_w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        let leak = if retain_jacobian.rows() == 0 { 0.0 } else { norm2(&retain_jacobian.apply(&delta_w)?) };
        Ok(Self { diagnostics: ShiftDiagnostics { delta_norm: norm2(&delta_w), retain_leakage: leak }, delta_w })
    }
}

fn check_pair(jr: &Jacobian, jf: &Jacobian) -> Result<()> {
    if jr.params() != jf.params() && jr.rows() > 0 && jf.rows() > 0 {
        return Err(Error::ShapeMismatch("retain and forget Jacobians have different parameter counts"));
    }
    if jr.outputs() != jf.outputs() {
        return Err(Error::ShapeMismatch("retain and forget Jacobians have different output counts"));
    }
    Ok(())
}

/// `theta_rr = J_r J_r^T + ridge I`, `theta_ff = J_f J_f^T + ridge I`,
/// `theta_rf = J_r J_f^T`.
pub fn assemble_blocks(jr: &Jacobian, jf: &Jacobian, ridge: f64) -> Result<NtkBlocks> {
    check_pair(jr, jf)?;
    if !(ridge >= 0.0) {
        return Err(Error::InvalidSpec("ridge must be >= 0"));
    }
    let mut theta_rr = jr.matrix().gram_rows();
    theta_rr.add_diagonal(ridge);
    let mut theta_ff = jf.matrix().gram_rows();
    theta_ff.add_diagonal(ridge);
    let theta_rf = if jf.rows() == 0 || jr.rows() == 0 {
        DenseMatrix::zeros(jr.rows(), jf.rows())
    } else {
        jr.matrix().matmul_transpose(jf.matrix())?
    };
    Ok(NtkBlocks { theta_rr, theta_rf, theta_ff, theta_fr: None, retain_curvature: None, ridge, provenance: None })
}

/// Softmax cross-entropy Hessian with respect to the logits.
pub fn softmax_hessian(logits: &[f64]) -> DenseMatrix {
    let s = softmax(logits);
    DenseMatrix::from_fn(s.len(), s.len(), |i, j| if i == j { s[i] - s[i] * s[j] } else { -s[i] * s[j] })
}

fn per_sample_hessians(f0: &DenseMatrix) -> Vec<DenseMatrix> {
    (0..f0.rows()).map(|i| softmax_hessian(f0.row(i))).collect()
}

/// Left-multiplies each `c`-row group of `m` by the matching curvature block.
fn apply_block_diag(blocks: &[DenseMatrix], m: &DenseMatrix) -> DenseMatrix {
    let c = blocks.first().map_or(1, DenseMatrix::rows);
    let mut out = DenseMatrix::zeros(m.rows(), m.cols());
    for (s, h) in blocks.iter().enumerate() {
        for a in 0..c {
            let dst = s * c + a;
            for b in 0..c {
                let coef = h[(a, b)];
                if coef == 0.0 {
                    continue;
                }
                let src = m.row(s * c + b).to_vec();
                crate::numerics::axpy(coef, &src, out.row_mut(dst));
            }
        }
    }
    out
}

fn apply_block_diag_vec(blocks: &[DenseMatrix], v: &[f64]) -> Vec<f64> {
    let c = blocks.first().map_or(1, DenseMatrix::rows);
    let mut out = vec![0.0; v.len()];
    for (s, h) in blocks.iter().enumerate() {
        for a in 0..c {
            out[s * c + a] = (0..c).map(|b| h[(a, b)] * v[s * c + b]).sum();
        }
    }
    out
}

/// Kernel blocks for a cross-entropy model, `Theta = H J J^T + ridge I`.
///
/// `Curvature::Identity` is exactly [`assemble_blocks`]. `f0_r` / `f0_f` are
/// the logits at the linearization point (`n x c`).
pub fn ce_curvature_blocks(
    jr: &Jacobian,
    jf: &Jacobian,
    f0_r: &DenseMatrix,
    f0_f: &DenseMatrix,
    ridge: f64,
    mode: Curvature,
) -> Result<NtkBlocks> {
    if mode == Curvature::Identity {
        return assemble_blocks(jr, jf, ridge);
    }
    check_pair(jr, jf)?;
    if f0_r.rows() * jr.outputs() != jr.rows() || f0_f.rows() * jf.outputs() != jf.rows() {
        return Err(Error::ShapeMismatch("logits do not match Jacobian rows"));
    }
    let hr = per_sample_hessians(f0_r);
    let hf = per_sample_hessians(f0_f);
    let base = assemble_blocks(jr, jf, 0.0)?;
    let mut theta_rr = apply_block_diag(&hr, &base.theta_rr);
    theta_rr.add_diagonal(ridge);
    let mut theta_ff = apply_block_diag(&hf, &base.theta_ff);
    theta_ff.add_diagonal(ridge);
    let theta_rf = apply_block_diag(&hr, &base.theta_rf);
    let theta_fr = apply_block_diag(&hf, &base.theta_rf.transpose());
    Ok(NtkBlocks {
        theta_rr,
        theta_rf,
        theta_ff,
        theta_fr: Some(theta_fr),
        retain_curvature: Some(hr),
        ridge,
        provenance: None,
    })
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(Cholesky),
    Lu(Lu),
}

impl Factor {
    fn new(m: &DenseMatrix, symmetric: bool) -> Result<Self> {
        if symmetric {
            Ok(Factor::Cholesky(Cholesky::factor(m)?))
        } else {
            Ok(Factor::Lu(Lu::factor(m)?))
        }
    }

    fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factor::Cholesky(c) => c.solve_vec(b),
            Factor::Lu(l) => l.solve_vec(b),
        }
    }

    fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Factor::Cholesky(c) => c.solve(b),
            Factor::Lu(l) => l.solve(b),
        }
    }
}

/// The operator `P v = v - J_r^T Theta_rr^{-1} (H_r J_r v)`, applied without
/// materializing the `p x p` matrix. `H_r` is the identity unless a softmax
/// curvature is supplied.
#[derive(Debug, Clone)]
pub struct RetainProjector<'a> {
    jr: &'a Jacobian,
    factor: Option<Factor>,
    curvature: Option<Vec<DenseMatrix>>,
}

impl<'a> RetainProjector<'a> {
    /// Projector with `Theta_rr = J_r J_r^T + ridge I`.
    pub fn new(jr: &'a Jacobian, ridge: f64) -> Result<Self> {
        let mut theta = jr.matrix().gram_rows();
        theta.add_diagonal(ridge);
        Self::with_kernel(jr, &theta, None)
    }

    fn with_kernel(jr: &'a Jacobian, theta_rr: &DenseMatrix, curvature: Option<Vec<DenseMatrix>>) -> Result<Self> {
        let factor = if jr.rows() == 0 { None } else { Some(Factor::new(theta_rr, curvature.is_none())?) };
        Ok(Self { jr, factor, curvature })
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let Some(factor) = &self.factor else {
            return Ok(v.to_vec());
        };
        let mut jv = self.jr.apply(v)?;
        if let Some(h) = &self.curvature {
            jv = apply_block_diag_vec(h, &jv);
        }
        let a = factor.solve_vec(&jv)?;
        let back = self.jr.apply_transpose(&a)?;
        Ok(sub(v, &back))
    }

    /// `Theta_rr^{-1} b`.
    pub fn kernel_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match &self.factor {
            Some(f) => f.solve_vec(b),
            None => Ok(Vec::new()),
        }
    }
}

/// Factorizes the retain kernel once and answers both the scrub shift and
/// the retain-only linearized solution.
pub struct NtkScrubber<'a> {
    blocks: &'a NtkBlocks,
    jf: &'a Jacobian,
    projector: RetainProjector<'a>,
}

impl<'a> NtkScrubber<'a> {
    pub fn new(blocks: &'a NtkBlocks, jr: &'a Jacobian, jf: &'a Jacobian) -> Result<Self> {
        check_pair(jr, jf)?;
        if blocks.theta_rr.rows() != jr.rows()
            || blocks.theta_ff.rows() != jf.rows()
            || blocks.theta_rf.shape() != (jr.rows(), jf.rows())
        {
            return Err(Error::ShapeMismatch("kernel blocks do not match the Jacobians"));
        }
        let projector = RetainProjector::with_kernel(jr, &blocks.theta_rr, blocks.retain_curvature.clone())?;
        Ok(Self { blocks, jf, projector })
    }

    /// `w_anchor + J_r^T Theta_rr^{-1} r_r`
    pub fn retain_solution(&self, anchor: &[f64], residual_r: &[f64]) -> Result<Vec<f64>> {
        if self.projector.jr.rows() == 0 {
            return Ok(anchor.to_vec());
        }
        let a = self.projector.kernel_solve(residual_r)?;
        let mut w = self.projector.jr.apply_transpose(&a)?;
        crate::numerics::axpy(1.0, anchor, &mut w);
        Ok(w)
    }

    /// `w_lin(D_r) - w_lin(D)` for residuals `r = Y - f0`.
    pub fn shift(&self, residual_r: &[f64], residual_f: &[f64]) -> Result<ScrubShift> {
        let jr = self.projector.jr;
        if residual_r.len() != jr.rows() || residual_f.len() != self.jf.rows() {
            return Err(Error::ShapeMismatch("residual lengths do not match Jacobian rows"));
        }
        let p = if jr.rows() > 0 { jr.params() } else { self.jf.params() };
        if self.jf.rows() == 0 {
            return ScrubShift::new(vec![0.0; p], jr);
        }
        let theta_fr = self.blocks.theta_fr();
        let symmetric = self.blocks.is_symmetric();
        let (schur, v) = if jr.rows() == 0 {
            (self.blocks.theta_ff.clone(), residual_f.iter().map(|r| -r).collect::<Vec<_>>())
        } else {
            let a = self.projector.kernel_solve(residual_r)?;
            let v = sub(&theta_fr.mat_vec(&a)?, residual_f);
            let x = match &self.projector.factor {
                Some(f) => f.solve(&self.blocks.theta_rf)?,
                None => unreachable!("retain rows present"),
            };
            let mut schur = self.blocks.theta_ff.sub(&theta_fr.matmul(&x)?)?;
            if symmetric {
                symmetrize(&mut schur);
            }
            (schur, v)
        };
        let z = Factor::new(&schur, symmetric)?.solve_vec(&v)?;
        let u = self.jf.apply_transpose(&z)?;
        let delta = self.projector.apply(&u)?;
        ScrubShift::new(delta, jr)
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

fn residual(y: &[f64], f0: &[f64]) -> Result<Vec<f64>> {
    if y.len() != f0.len() {
        return Err(Error::ShapeMismatch("targets and outputs differ in length"));
    }
    Ok(sub(y, f0))
}

/// `w_anchor + J^T (J J^T + ridge I)^{-1} (Y - f0)`: the minimizer of
/// `||f0 + J (w - w_anchor) - Y||^2 + ridge ||w - w_anchor||^2`.
pub fn linearized_solution(j: &Jacobian, f0: &[f64], y: &[f64], anchor: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if anchor.len() != j.params() {
        return Err(Error::ShapeMismatch("anchor length differs from Jacobian columns"));
    }
    let r = residual(y, f0)?;
    if r.len() != j.rows() {
        return Err(Error::ShapeMismatch("residual length differs from Jacobian rows"));
    }
    if j.rows() == 0 {
        return Ok(anchor.to_vec());
    }
    let mut w = ridge_solve(j, &r, ridge)?;
    crate::numerics::axpy(1.0, anchor, &mut w);
    Ok(w)
}

/// `J^T (J J^T + ridge I)^{-1} r`, solved as `(J^T J + ridge I)^{-1} J^T r`
/// when `J` is tall so the factorized system stays well conditioned.
fn ridge_solve(j: &Jacobian, r: &[f64], ridge: f64) -> Result<Vec<f64>> {
    if j.params() <= j.rows() {
        let mut h = j.matrix().transpose().gram_rows();
        h.add_diagonal(ridge);
        Cholesky::factor(&h)?.solve_vec(&j.apply_transpose(r)?)
    } else {
        let mut theta = j.matrix().gram_rows();
        theta.add_diagonal(ridge);
        let a = Cholesky::factor(&theta)?.solve_vec(r)?;
        j.apply_transpose(&a)
    }
}

/// Closed-form scrubbing shift `w_lin(D_r) - w_lin(D)` from kernel blocks.
///
/// Inputs are stacked sample-major vectors (`f0_*`, `y_*`).
pub fn scrub_shift_ntk(
    blocks: &NtkBlocks,
    jr: &Jacobian,
    jf: &Jacobian,
    f0_r: &[f64],
    f0_f: &[f64],
    y_r: &[f64],
    y_f: &[f64],
) -> Result<ScrubShift> {
    let rr = residual(y_r, f0_r)?;
    let rf = residual(y_f, f0_f)?;
    NtkScrubber::new(blocks, jr, jf)?.shift(&rr, &rf)
}

/// Newton step `-(J_r^T J_r + ridge I)^{-1} grad` on the retain loss, where
/// `grad = J_r^T g` and `g` stacks the per-sample output gradients
/// (summed, not averaged, to match the ridge scale).
///
/// Solves whichever of the primal (`p x p`) or dual (`n c x n c`) system is
/// smaller; both give the same vector.
pub fn newton_fisher_shift(arch: &ArchSpec, w: &[f64], data_r: &LabeledSet, ridge: f64, loss: LossKind) -> Result<ScrubShift> {
    let jr = jacobian(arch, w, &data_r.inputs)?;
    if jr.rows() == 0 {
        return ScrubShift::new(vec![0.0; w.len()], &jr);
    }
    let f = crate::model::forward(arch, w, &data_r.inputs)?;
    let mut g = Vec::with_capacity(jr.rows());
    for i in 0..data_r.len() {
        g.extend(loss.output_gradient(f.row(i), data_r.targets.row(i)));
    }
    let step = ridge_solve(&jr, &g, ridge)?;
    ScrubShift::new(step.into_iter().map(|v| -v).collect(), &jr)
}

/// Rescales the linearized forgetting direction to the real training
/// endpoint by completing an isosceles trapezium.
///
/// With `u` the unit vector from `w_lin_d` to `w_lin_dr` and
/// `t = (w_d - w_lin_d) . u`, the result is
/// `w_d + (||w_lin_dr - w_lin_d|| - 2 t) u`: the fourth vertex of the
/// trapezium whose bases are parallel to `u` and whose legs
/// `w_lin_d -> w_d` and `w_lin_dr -> result` are mirror images. Legs that
/// flare away from the base (`t < 0`) lengthen the shift.
pub fn trapezium_correct(w_d: &[f64], w_lin_d: &[f64], w_lin_dr: &[f64]) -> Result<Vec<f64>> {
    if w_d.len() != w_lin_d.len() || w_lin_d.len() != w_lin_dr.len() {
        return Err(Error::ShapeMismatch("trapezium vertices differ in length"));
    }
    let base = sub(w_lin_dr, w_lin_d);
    let len = norm2(&base);
    if len < 1e-12 {
        return Err(Error::DegenerateDirection);
    }
    let u: Vec<f64> = base.iter().map(|b| b / len).collect();
    let t = crate::numerics::dot(&sub(w_d, w_lin_d), &u);
    let step = len - 2.0 * t;
    Ok(w_d.iter().zip(&u).map(|(w, ui)| w + step * ui).collect())
}

#[cfg(test)]
mod tests;
