//! Synthetic Gaussian-cluster datasets with an explicit forget/retain
//! partition of the training set.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::LabeledSet;
use crate::numerics::DenseMatrix;

/// Recipe for a clustered classification dataset.
///
/// `per_class` counts training samples; test and validation splits are
/// sized in the ratio train : test : validation = 4 : 4 : 1.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetSpec {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    /// Per-coordinate standard deviation around each class mean. Means are
    /// drawn from a standard normal.
    pub cluster_spread: f64,
    pub seed: u64,
    /// Fraction of the training set to forget.
    pub forget_fraction: f64,
    /// Class the forget cohort is drawn from.
    pub forget_class: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 100,
            input_dim: 20,
            cluster_spread: 1.0,
            seed: 0,
            forget_fraction: 0.05,
            forget_class: 0,
        }
    }
}

impl DatasetSpec {
    pub fn train_size(&self) -> usize {
        self.classes * self.per_class
    }

    pub fn forget_count(&self) -> usize {
        libm::round(self.forget_fraction * self.train_size() as f64) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes"));
        }
        if self.per_class == 0 || self.input_dim == 0 {
            return Err(Error::InvalidSpec("per_class and input_dim must be >= 1"));
        }
        if !(self.cluster_spread >= 0.0) || !self.cluster_spread.is_finite() {
            return Err(Error::InvalidSpec("cluster_spread must be finite and >= 0"));
        }
        if !(self.forget_fraction > 0.0 && self.forget_fraction < 1.0) {
            return Err(Error::InvalidSpec("forget fraction must lie in (0, 1)"));
        }
        if self.forget_class >= self.classes {
            return Err(Error::InvalidSpec("forget class out of range"));
        }
        let k = self.forget_count();
        if k == 0 {
            return Err(Error::InvalidSpec("forget cohort is empty"));
        }
        if k > self.per_class {
            return Err(Error::InvalidSpec("forget cohort larger than its class"));
        }
        if self.train_size() < 10 * k {
            return Err(Error::InvalidSpec("training set must hold at least 10x the forget cohort"));
        }
        Ok(())
    }
}

/// Training set `D` with index sets for `D_f` and `D_r`, plus held-out
/// test and validation splits.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitDataset {
    pub classes: usize,
    pub train: LabeledSet,
    /// Sorted indices into `train`.
    pub forget_indices: Vec<usize>,
    /// Sorted indices into `train`, the complement of `forget_indices`.
    pub retain_indices: Vec<usize>,
    pub test: LabeledSet,
    pub validation: LabeledSet,
}

impl SplitDataset {
    /// Builds a split from a training set and its forget indices.
    pub fn new(train: LabeledSet, mut forget_indices: Vec<usize>, test: LabeledSet, validation: LabeledSet) -> Result<Self> {
        forget_indices.sort_unstable();
        forget_indices.dedup();
        if forget_indices.last().is_some_and(|&i| i >= train.len()) {
            return Err(Error::InvalidSpec("forget index out of range"));
        }
        let mut is_forget = alloc::vec![false; train.len()];
        for &i in &forget_indices {
            is_forget[i] = true;
        }
        let retain_indices = (0..train.len()).filter(|&i| !is_forget[i]).collect();
        let classes = train.targets.cols();
        let split = Self { classes, train, forget_indices, retain_indices, test, validation };
        split.verify_partition()?;
        Ok(split)
    }

    pub fn retain(&self) -> LabeledSet {
        self.train.subset(&self.retain_indices)
    }

    pub fn forget(&self) -> LabeledSet {
        self.train.subset(&self.forget_indices)
    }

    /// Checks that retain and forget indices are disjoint, sorted and cover
    /// `0..train.len()` exactly once.
    pub fn verify_partition(&self) -> Result<()> {
        let n = self.train.len();
        let mut seen = alloc::vec![0u8; n];
        for idx in [&self.retain_indices, &self.forget_indices] {
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSpec("partition indices must be strictly increasing"));
            }
            for &i in idx.iter() {
                if i >= n {
                    return Err(Error::InvalidSpec("partition index out of range"));
                }
                seen[i] += 1;
            }
        }
        if seen.iter().any(|&s| s != 1) {
            return Err(Error::InvalidSpec("retain and forget sets must partition the training set"));
        }
        Ok(())
    }
}

fn class_means(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(spec.classes, spec.input_dim, |_, _| rng.sample(StandardNormal))
}

fn draw(spec: &DatasetSpec, means: &DenseMatrix, per_class: usize, label_of: impl Fn(usize) -> usize, rng: &mut ChaCha8Rng) -> Result<LabeledSet> {
    let n = per_class * spec.classes;
    let mut inputs = DenseMatrix::zeros(n, spec.input_dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.classes {
        for s in 0..per_class {
            let row = inputs.row_mut(k * per_class + s);
            for (x, m) in row.iter_mut().zip(means.row(k)) {
                let z: f64 = rng.sample(StandardNormal);
                *x = m + spec.cluster_spread * z;
            }
            labels.push(label_of(k));
        }
    }
    LabeledSet::classification(inputs, &labels, spec.classes)
}

/// Samples the dataset and picks the forget cohort: a pure function of
/// `spec`.
pub fn synthesize(spec: &DatasetSpec) -> Result<SplitDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let train = draw(spec, &means, spec.per_class, |k| k, &mut rng)?;
    let test = draw(spec, &means, spec.per_class, |k| k, &mut rng)?;
    let validation = draw(spec, &means, spec.per_class / 4, |k| k, &mut rng)?;
    let start = spec.forget_class * spec.per_class;
    let mut candidates: Vec<usize> = (start..start + spec.per_class).collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(spec.forget_count());
    SplitDataset::new(train, candidates, test, validation)
}

/// A related task for pretraining: the same class means with fresh samples
/// and the labels rotated by a seed-dependent non-zero offset.
pub fn pretrain_task(spec: &DatasetSpec, task_seed: u64) -> Result<LabeledSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = class_means(spec, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed ^ 0x7072_6574_7261_696e);
    let offset = 1 + rng.random_range(0..spec.classes - 1);
    draw(spec, &means, spec.per_class, |k| (k + offset) % spec.classes, &mut rng)
}
