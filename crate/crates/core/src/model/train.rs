use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward_tape, forward_tape, loss_and_error, ArchSpec, LabeledSet, LossKind, ModelState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Coefficient of `(weight_decay / 2) * ||w - w0||^2`.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Upper bound on epochs.
    pub epochs: usize,
    pub loss: LossKind,
    pub stop_at_zero_error: bool,
    /// Epochs to keep training after the first zero-training-error epoch.
    pub zero_error_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.1,
            batch_size: 128,
            epochs: 100,
            loss: LossKind::CrossEntropy,
            stop_at_zero_error: true,
            zero_error_patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidSpec("learning_rate must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidSpec("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidSpec("weight_decay must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidSpec("batch_size must be >= 1"));
        }
        Ok(())
    }
}

/// Called after every epoch with `(epoch, weights)`; returning `false`
/// stops training.
pub type EpochObserver<'a> = &'a mut dyn FnMut(usize, &[f64]) -> bool;

/// Trains from the anchor itself: `train_from(w0, w0, ..)`.
pub fn train(arch: &ArchSpec, w0: &[f64], data: &LabeledSet, cfg: &TrainConfig, seed: u64) -> Result<ModelState> {
    train_from(arch, w0, w0, data, cfg, seed, None)
}

/// SGD with momentum on `mean loss + (wd / 2) ||w - anchor||^2`, starting
/// at `start`.
///
/// Minibatch order comes from one ChaCha stream keyed by `seed`, reshuffled
/// every epoch, so the result is a pure function of the arguments. The
/// optional observer sees `(epoch, weights)` after every epoch (1-based) and
/// stops training by returning `false`.
pub fn train_from(
    arch: &ArchSpec,
    start: &[f64],
    anchor: &[f64],
    data: &LabeledSet,
    cfg: &TrainConfig,
    seed: u64,
    mut observer: Option<EpochObserver<'_>>,
) -> Result<ModelState> {
    arch.validate()?;
    cfg.validate()?;
    let p = arch.param_count();
    if start.len() != p || anchor.len() != p {
        return Err(Error::ShapeMismatch("start/anchor length differs from parameter count"));
    }
    if data.inputs.cols() != arch.input_dim || data.targets.cols() != arch.output_dim {
        return Err(Error::ShapeMismatch("dataset dimensions differ from architecture"));
    }
    let mut w = start.to_vec();
    if cfg.epochs == 0 || data.is_empty() {
        return ModelState::new(arch.clone(), w, anchor.to_vec(), seed);
    }

    let layers = arch.layers();
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut velocity = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut zero_error_since: Option<usize> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let tape = forward_tape(arch, &layers, &w, data.inputs.row(i));
                let y = data.targets.row(i);
                batch_loss += cfg.loss.value(tape.outputs(), y);
                let g_out = cfg.loss.output_gradient(tape.outputs(), y);
                backward_tape(arch, &layers, &w, &tape, &g_out, &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch: epoch + 1 });
            }
            let inv = 1.0 / batch.len() as f64;
            for k in 0..p {
                let g = grad[k] * inv + cfg.weight_decay * (w[k] - anchor[k]);
                velocity[k] = cfg.momentum * velocity[k] + g;
                w[k] -= cfg.learning_rate * velocity[k];
            }
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch: epoch + 1 });
        }
        if let Some(obs) = observer.as_deref_mut() {
            if !obs(epoch + 1, &w) {
                break;
            }
        }
        if cfg.stop_at_zero_error {
            match zero_error_since {
                Some(first) if epoch - first >= cfg.zero_error_patience => break,
                Some(_) => {}
                None => {
                    let (_, err) = loss_and_error(arch, &w, data, cfg.loss)?;
                    if err == 0.0 {
                        zero_error_since = Some(epoch);
                        if cfg.zero_error_patience == 0 {
                            break;
                        }
                    }
                }
            }
        }
    }
    ModelState::new(arch.clone(), w, anchor.to_vec(), seed)
}
