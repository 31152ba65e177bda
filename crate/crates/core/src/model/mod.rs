//! Differentiable models, per-sample output Jacobians, anchored SGD and the
//! Fisher diagonal.
//!
//! Stacked output vectors and Jacobian rows are ordered sample-major,
//! class-minor: entry `i * c + j` is output `j` of sample `i`.

mod arch;
mod loss;
mod train;

pub use arch::{Activation, ArchKind, ArchSpec, Layer};
pub use loss::{entropy, log_softmax, loss_and_error, softmax, LossKind};
pub use train::{train, train_from, EpochObserver, TrainConfig};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{CovarianceSpec, DenseMatrix};

/// Inputs `n x d` and targets `n x c`. Classification targets are one-hot.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabeledSet {
    pub inputs: DenseMatrix,
    pub targets: DenseMatrix,
}

impl LabeledSet {
    pub fn new(inputs: DenseMatrix, targets: DenseMatrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::ShapeMismatch("inputs and targets row counts differ"));
        }
        Ok(Self { inputs, targets })
    }

    pub fn empty(input_dim: usize, output_dim: usize) -> Self {
        Self { inputs: DenseMatrix::zeros(0, input_dim), targets: DenseMatrix::zeros(0, output_dim) }
    }

    /// One-hot targets from integer labels.
    pub fn classification(inputs: DenseMatrix, labels: &[usize], classes: usize) -> Result<Self> {
        if labels.iter().any(|l| *l >= classes) {
            return Err(Error::InvalidSpec("label out of range"));
        }
        let targets = DenseMatrix::from_fn(labels.len(), classes, |i, j| if labels[i] == j { 1.0 } else { 0.0 });
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Argmax of each target row.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.targets.row(i))).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { inputs: self.inputs.select_rows(indices), targets: self.targets.select_rows(indices) }
    }

    /// Concatenation `self` then `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        Ok(Self { inputs: self.inputs.vstack(&other.inputs)?, targets: self.targets.vstack(&other.targets)? })
    }

    /// Targets flattened sample-major.
    pub fn stacked_targets(&self) -> &[f64] {
        self.targets.as_slice()
    }
}

/// Trained weights `w` together with the anchor `w0` they are regularized
/// towards.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelState {
    pub arch: ArchSpec,
    pub w: Vec<f64>,
    pub w0: Vec<f64>,
    pub seed: u64,
}

impl ModelState {
    pub fn new(arch: ArchSpec, w: Vec<f64>, w0: Vec<f64>, seed: u64) -> Result<Self> {
        arch.validate()?;
        let p = arch.param_count();
        if w.len() != p || w0.len() != p {
            return Err(Error::ShapeMismatch("weight vectors must have length p"));
        }
        if w.iter().chain(&w0).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("weights must be finite"));
        }
        Ok(Self { arch, w, w0, seed })
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        forward(&self.arch, &self.w, x)
    }

    pub fn jacobian(&self, x: &DenseMatrix) -> Result<Jacobian> {
        jacobian(&self.arch, &self.w, x)
    }

    pub fn with_weights(&self, w: Vec<f64>) -> Self {
        Self { arch: self.arch.clone(), w, w0: self.w0.clone(), seed: self.seed }
    }
}

/// Output Jacobian `(n * c) x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    matrix: DenseMatrix,
    outputs: usize,
}

impl Jacobian {
    pub fn new(matrix: DenseMatrix, outputs: usize) -> Result<Self> {
        if outputs == 0 || !matrix.rows().is_multiple_of(outputs) {
            return Err(Error::ShapeMismatch("Jacobian rows must be a multiple of the output count"));
        }
        Ok(Self { matrix, outputs })
    }

    pub fn empty(outputs: usize, params: usize) -> Self {
        Self { matrix: DenseMatrix::zeros(0, params), outputs }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn samples(&self) -> usize {
        self.matrix.rows() / self.outputs
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn params(&self) -> usize {
        self.matrix.cols()
    }

    /// `J v`
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.matrix.mat_vec(v)
    }

    /// `J^T z`
    pub fn apply_transpose(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.matrix.transpose_mat_vec(z)
    }
}

/// Post-activation values of every layer for one input; `values[0]` is the
/// input itself and the last entry holds the pre-softmax outputs.
pub(crate) struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub(crate) fn outputs(&self) -> &[f64] {
        self.values.last().expect("tape has at least the input")
    }
}

pub(crate) fn forward_tape(arch: &ArchSpec, layers: &[Layer], w: &[f64], x: &[f64]) -> Tape {
    let mut values = Vec::with_capacity(layers.len() + 1);
    values.push(x.to_vec());
    for (l, layer) in layers.iter().enumerate() {
        let input = values.last().expect("non-empty");
        let mut out = vec![0.0; layer.fan_out];
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &w[layer.weight_offset + o * layer.fan_in..layer.weight_offset + (o + 1) * layer.fan_in];
            let mut z = crate::numerics::dot(row, input);
            if let Some(b) = layer.bias_offset {
                z += w[b + o];
            }
            *slot = if l + 1 < layers.len() { arch.activation.apply(z) } else { z };
        }
        values.push(out);
    }
    Tape { values }
}

/// Accumulates `d(grad_out . f) / dw` into `grad_w`.
pub(crate) fn backward_tape(arch: &ArchSpec, layers: &[Layer], w: &[f64], tape: &Tape, grad_out: &[f64], grad_w: &mut [f64]) {
    let mut delta = grad_out.to_vec();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let input = &tape.values[l];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let start = layer.weight_offset + o * layer.fan_in;
            crate::numerics::axpy(*d, input, &mut grad_w[start..start + layer.fan_in]);
            if let Some(b) = layer.bias_offset {
                grad_w[b + o] += d;
            }
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.fan_in];
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let start = layer.weight_offset + o * layer.fan_in;
            crate::numerics::axpy(*d, &w[start..start + layer.fan_in], &mut prev);
        }
        for (p, a) in prev.iter_mut().zip(input) {
            *p *= arch.activation.derivative_from_output(*a);
        }
        delta = prev;
    }
}

fn check_weights(arch: &ArchSpec, w: &[f64], x: &DenseMatrix) -> Result<()> {
    if w.len() != arch.param_count() {
        return Err(Error::ShapeMismatch("weight vector length differs from parameter count"));
    }
    if x.cols() != arch.input_dim {
        return Err(Error::ShapeMismatch("input columns differ from input_dim"));
    }
    Ok(())
}

/// Pre-softmax activations `n x c`.
pub fn forward(arch: &ArchSpec, w: &[f64], x: &DenseMatrix) -> Result<DenseMatrix> {
    check_weights(arch, w, x)?;
    let layers = arch.layers();
    let mut out = DenseMatrix::zeros(x.rows(), arch.output_dim);
    for i in 0..x.rows() {
        let tape = forward_tape(arch, &layers, w, x.row(i));
        out.row_mut(i).copy_from_slice(tape.outputs());
    }
    Ok(out)
}

/// Output Jacobian evaluated at weights `at`, one backward pass per output.
pub fn jacobian(arch: &ArchSpec, at: &[f64], x: &DenseMatrix) -> Result<Jacobian> {
    check_weights(arch, at, x)?;
    let layers = arch.layers();
    let c = arch.output_dim;
    let mut m = DenseMatrix::zeros(x.rows() * c, at.len());
    let mut e = vec![0.0; c];
    for i in 0..x.rows() {
        let tape = forward_tape(arch, &layers, at, x.row(i));
        for j in 0..c {
            e[j] = 1.0;
            backward_tape(arch, &layers, at, &tape, &e, m.row_mut(i * c + j));
            e[j] = 0.0;
        }
    }
    Jacobian::new(m, c)
}

/// Diagonal Fisher information of the model's predictive distribution,
/// averaged over `inputs`:
/// `F_k = mean_i sum_y p(y|x_i) (d log p(y|x_i) / dw_k)^2`.
///
/// The expectation over `y` is taken exactly over all classes. Entries are
/// clamped below at `1e-12` so the inverse is always defined.
pub fn fisher_diag(arch: &ArchSpec, w: &[f64], inputs: &DenseMatrix) -> Result<CovarianceSpec> {
    check_weights(arch, w, inputs)?;
    let layers = arch.layers();
    let c = arch.output_dim;
    let p = w.len();
    let mut acc = vec![0.0; p];
    let mut g = vec![0.0; p];
    for i in 0..inputs.rows() {
        let tape = forward_tape(arch, &layers, w, inputs.row(i));
        let probs = softmax(tape.outputs());
        for y in 0..c {
            if probs[y] == 0.0 {
                continue;
            }
            // d log p_y / d f = e_y - p
            let grad_out: Vec<f64> = (0..c).map(|j| if j == y { 1.0 - probs[j] } else { -probs[j] }).collect();
            g.iter_mut().for_each(|v| *v = 0.0);
            backward_tape(arch, &layers, w, &tape, &grad_out, &mut g);
            for (a, gk) in acc.iter_mut().zip(&g) {
                *a += probs[y] * gk * gk;
            }
        }
    }
    let n = inputs.rows().max(1) as f64;
    Ok(CovarianceSpec::Diagonal(acc.into_iter().map(|v| (v / n).max(FISHER_FLOOR)).collect()))
}

pub const FISHER_FLOOR: f64 = 1e-12;

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
