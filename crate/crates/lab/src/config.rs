//! Experiment configuration.
//!
//! Config files are plain `key = value` lines; keys may be dotted
//! (`dataset.classes = 5`) or grouped under `[section]` headers. Every key
//! is optional and falls back to the default below. Values use TOML
//! syntax: numbers, `true`/`false`, quoted strings and `[a, b]` lists.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `dataset.classes` | 5 | number of Gaussian clusters / classes |
//! | `dataset.per_class` | 100 | training samples per class (test = same, validation = 1/4) |
//! | `dataset.input_dim` | 20 | input dimension |
//! | `dataset.cluster_spread` | 1.6 | per-coordinate std around each class mean |
//! | `dataset.seed` | 0 | sampling seed for the dataset and forget cohort |
//! | `dataset.pretrain_seed` | 1000 | seed of the pretraining task (relabelled clusters) |
//! | `forget.fraction` | 0.05 | fraction of the training set to forget |
//! | `forget.class_index` | 0 | class the forget cohort is drawn from |
//! | `arch.kind` | `"mlp"` | `"mlp"` or `"linear"` |
//! | `arch.hidden` | `[40]` | hidden widths (MLP only) |
//! | `arch.activation` | `"tanh"` | `"tanh"` or `"relu"` |
//! | `pretrain.*` | lr 0.1, momentum 0.9, decay 5e-4 towards zero, batch 32, 30 epochs | SGD on the pretraining task |
//! | `finetune.*` | lr 0.01, momentum 0.9, decay 0.01 towards `w0`, batch 64, 150 epochs, no early stop | SGD for training on `D`, on `D_r`, the fine-tune baseline and relearning |
//! | `scrub.ridge` | unset | kernel ridge; unset means retain-set size times `finetune.weight_decay` |
//! | `scrub.noise_scale` | 1e-5 | noise scale of the NTK scrub in the main comparison |
//! | `scrub.noise_grid` | `[1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1]` | noise scales of the trade-off sweep |
//! | `scrub.fisher_grid` | `[1e-6, 3e-6, ..., 0.3, 1]` | candidate Fisher-baseline scales; the smallest matching the NTK forget error is used |
//! | `scrub.finetune_epochs` | 5 | epochs of the fine-tune baseline on `D_r` |
//! | `scrub.trapezium` | unset | force the trapezium correction on or off; unset = nonlinear models only |
//! | `scrub.linearize_at` | `"trained"` | `"trained"` or `"anchor"` |
//! | `scrub.curvature` | `"softmax"` | output-space curvature of the linearized loss: `"softmax"` (cross-entropy Hessian) or `"identity"` |
//! | `readout.attack` | `"threshold"` | `"threshold"` or `"svc"` |
//! | `readout.relearn_max_epochs` | 200 | relearn cap; never relearning reports cap + 1 |
//! | `readout.interpolation_steps` | 5 | points on the interpolation curve |
//! | `queries.from_df` | 10 | black-box queries drawn from `D_f` (also the main bound's queries) |
//! | `queries.from_dr` | 10 | per-query samples from `D_r` |
//! | `queries.from_test` | 10 | per-query samples from the test set |
//! | `seeds` | `[0, 1, 2]` | run seeds |
//! | `output_dir` | `"out"` | where `run` writes its artifacts |
//!
//! Train sections take `learning_rate`, `momentum`, `weight_decay`,
//! `batch_size`, `epochs`, `loss` (`"cross_entropy"` or `"mse"`),
//! `stop_at_zero_error` and `zero_error_patience` (defaults: cross-entropy,
//! early stop off for both, patience 0 / 5).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unlearn_core::data::DatasetSpec;
use unlearn_core::model::{Activation, ArchKind, ArchSpec, LossKind, TrainConfig};
use unlearn_core::ntk::Curvature;
use unlearn_core::readout::AttackKind;
use unlearn_core::scrub::LinearizeAt;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub classes: usize,
    pub per_class: usize,
    pub input_dim: usize,
    pub cluster_spread: f64,
    pub seed: u64,
    pub pretrain_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { classes: 5, per_class: 100, input_dim: 20, cluster_spread: 1.6, seed: 0, pretrain_seed: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgetSection {
    pub fraction: f64,
    pub class_index: usize,
}

impl Default for ForgetSection {
    fn default() -> Self {
        Self { fraction: 0.05, class_index: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub kind: ArchKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for ArchSection {
    fn default() -> Self {
        Self { kind: ArchKind::Mlp, hidden: vec![40], activation: Activation::Tanh }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub stop_at_zero_error: bool,
    pub zero_error_patience: usize,
}

impl TrainSection {
    pub fn pretrain() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 32,
            epochs: 30,
            loss: LossKind::CrossEntropy,
            stop_at_zero_error: false,
            zero_error_patience: 0,
        }
    }

    pub fn finetune() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 150,
            loss: LossKind::CrossEntropy,
            stop_at_zero_error: false,
            zero_error_patience: 5,
        }
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            loss: self.loss,
            stop_at_zero_error: self.stop_at_zero_error,
            zero_error_patience: self.zero_error_patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScrubSection {
    pub ridge: Option<f64>,
    pub noise_scale: f64,
    pub noise_grid: Vec<f64>,
    /// Candidate scales for the Fisher baseline; the smallest one matching
    /// the NTK scrub's forget error is used.
    pub fisher_grid: Vec<f64>,
    /// Epochs of the fine-tune baseline (fine-tuning settings otherwise).
    pub finetune_epochs: usize,
    pub trapezium: Option<bool>,
    pub linearize_at: LinearizeAt,
    pub curvature: Curvature,
}

impl Default for ScrubSection {
    fn default() -> Self {
        Self {
            ridge: None,
            noise_scale: 1e-5,
            noise_grid: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            fisher_grid: vec![1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0],
            finetune_epochs: 5,
            trapezium: None,
            linearize_at: LinearizeAt::Trained,
            curvature: Curvature::Softmax,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub attack: AttackKind,
    pub relearn_max_epochs: usize,
    pub interpolation_steps: usize,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self { attack: AttackKind::Threshold, relearn_max_epochs: 200, interpolation_steps: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuerySection {
    pub from_df: usize,
    pub from_dr: usize,
    pub from_test: usize,
}

impl Default for QuerySection {
    fn default() -> Self {
        Self { from_df: 10, from_dr: 10, from_test: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub forget: ForgetSection,
    pub arch: ArchSection,
    pub pretrain: TrainSection,
    pub finetune: TrainSection,
    pub scrub: ScrubSection,
    pub readout: ReadoutSection,
    pub queries: QuerySection,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSection::default(),
            forget: ForgetSection::default(),
            arch: ArchSection::default(),
            pretrain: TrainSection::pretrain(),
            finetune: TrainSection::finetune(),
            scrub: ScrubSection::default(),
            readout: ReadoutSection::default(),
            queries: QuerySection::default(),
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parses config text, then applies `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::Config(e.message().to_string()))?;
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| LabError::Usage(format!("override `{item}` is not key=value")))?;
            set_dotted(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let mut merged = toml::Table::try_from(Self::default()).expect("defaults serialize");
        merge(&mut merged, table);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| LabError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Self::parse(&text, overrides)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical text form, ignoring `output_dir` since it
    /// does not affect any result.
    pub fn hash(&self) -> String {
        let canonical = Self { output_dir: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(canonical.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            classes: self.dataset.classes,
            per_class: self.dataset.per_class,
            input_dim: self.dataset.input_dim,
            cluster_spread: self.dataset.cluster_spread,
            seed: self.dataset.seed,
            forget_fraction: self.forget.fraction,
            forget_class: self.forget.class_index,
        }
    }

    pub fn arch_spec(&self) -> ArchSpec {
        match self.arch.kind {
            ArchKind::Linear => ArchSpec::linear(self.dataset.input_dim, self.dataset.classes),
            ArchKind::Mlp => ArchSpec::mlp(self.dataset.input_dim, &self.arch.hidden, self.dataset.classes, self.arch.activation),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LabError::Config(m.to_string()));
        self.dataset_spec().validate()?;
        self.arch_spec().validate()?;
        self.pretrain.to_train_config().validate()?;
        self.finetune.to_train_config().validate()?;
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.scrub.noise_grid.is_empty() || self.scrub.noise_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scrub.noise_grid must be nonempty and strictly increasing");
        }
        if self.scrub.fisher_grid.is_empty() || self.scrub.fisher_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scrub.fisher_grid must be nonempty and strictly increasing");
        }
        if self.scrub.noise_grid.iter().chain(&self.scrub.fisher_grid).any(|v| !(*v > 0.0)) || !(self.scrub.noise_scale > 0.0) {
            return bad("noise scales must be > 0");
        }
        if self.scrub.ridge.is_some_and(|r| r <= 0.0) {
            return bad("scrub.ridge must be > 0");
        }
        if self.readout.interpolation_steps < 2 {
            return bad("readout.interpolation_steps must be >= 2");
        }
        if self.queries.from_df == 0 {
            return bad("queries.from_df must be >= 1");
        }
        Ok(())
    }
}

/// Overlays `top` on `base`, recursing into tables present in both.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Interprets an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| LabError::Usage(format!("empty key in `{key}`")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| LabError::Usage(format!("`{p}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
