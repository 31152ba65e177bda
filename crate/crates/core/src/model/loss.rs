use alloc::vec::Vec;

use super::{argmax, forward, ArchSpec, LabeledSet};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// `0.5 * ||f - y||^2` per sample.
    Mse,
    /// `-sum_j y_j log softmax(f)_j` per sample.
    CrossEntropy,
}

impl LossKind {
    pub fn value(self, f: &[f64], y: &[f64]) -> f64 {
        match self {
            LossKind::Mse => 0.5 * f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            LossKind::CrossEntropy => {
                let ls = log_softmax(f);
                -ls.iter().zip(y).map(|(l, t)| if *t == 0.0 { 0.0 } else { t * l }).sum::<f64>()
            }
        }
    }

    /// Gradient of the per-sample loss with respect to the outputs `f`.
    pub fn output_gradient(self, f: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            LossKind::Mse => f.iter().zip(y).map(|(a, b)| a - b).collect(),
            LossKind::CrossEntropy => {
                let total: f64 = y.iter().sum();
                softmax(f).iter().zip(y).map(|(s, t)| total * s - t).collect()
            }
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let exps: Vec<f64> = logits.iter().map(|v| libm::exp(v - m)).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let lse = m + libm::log(logits.iter().map(|v| libm::exp(v - m)).sum::<f64>());
    logits.iter().map(|v| v - lse).collect()
}

/// Shannon entropy in nats, probabilities clamped to `[1e-12, 1]`.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .map(|p| {
            let p = p.clamp(1e-12, 1.0);
            p * libm::log(p)
        })
        .sum::<f64>()
}

/// Mean per-sample loss and the fraction of samples whose argmax output
/// differs from the argmax target. An empty set gives `(0, 0)`.
pub fn loss_and_error(arch: &ArchSpec, w: &[f64], data: &LabeledSet, loss: LossKind) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let out = forward(arch, w, &data.inputs)?;
    let mut total = 0.0;
    let mut wrong = 0usize;
    for i in 0..data.len() {
        let f = out.row(i);
        let y = data.targets.row(i);
        total += loss.value(f, y);
        if argmax(f) != argmax(y) {
            wrong += 1;
        }
    }
    let n = data.len() as f64;
    Ok((total / n, wrong as f64 / n))
}
