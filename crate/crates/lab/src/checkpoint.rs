//! Scrubbed-model checkpoints.
//!
//! A checkpoint stores everything needed to rebuild a [`ScrubOutcome`]
//! exactly: the architecture, the anchor, the deterministic shift, the
//! unscaled noise covariance, the noise scale and the realized weights.
//! Float arrays are base64 little-endian `f64`, so a save/load cycle is
//! bit-exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unlearn_core::model::ArchSpec;
use unlearn_core::numerics::CovarianceSpec;
use unlearn_core::scrub::{Method, ScrubOutcome};

use crate::error::{LabError, Result};
use crate::io::{decode_f64s, encode_f64s, read_json, write_json, EncodedMatrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodedCovariance {
    Diagonal { values: String },
    Dense { matrix: EncodedMatrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub method: Method,
    pub arch: ArchSpec,
    pub seed: u64,
    pub noise_scale: f64,
    /// SHA-256 of the config that produced the checkpoint.
    pub config_hash: String,
    pub anchor: String,
    pub shifted_weights: String,
    pub noise_cov: EncodedCovariance,
    pub realized_weights: String,
}

impl Checkpoint {
    pub fn from_outcome(outcome: &ScrubOutcome, config_hash: &str) -> Self {
        let noise_cov = match &outcome.noise_cov {
            CovarianceSpec::Diagonal(v) => EncodedCovariance::Diagonal { values: encode_f64s(v) },
            CovarianceSpec::Dense(m) => EncodedCovariance::Dense { matrix: EncodedMatrix::encode(m) },
        };
        Self {
            format_version: FORMAT_VERSION,
            method: outcome.method,
            arch: outcome.arch.clone(),
            seed: outcome.seed,
            noise_scale: outcome.noise_scale,
            config_hash: config_hash.to_string(),
            anchor: encode_f64s(&outcome.anchor),
            shifted_weights: encode_f64s(&outcome.shifted_weights),
            noise_cov,
            realized_weights: encode_f64s(&outcome.realized_weights),
        }
    }

    /// Rebuilds the outcome, keeping the stored draw rather than resampling.
    pub fn to_outcome(&self) -> std::result::Result<ScrubOutcome, String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!("unsupported checkpoint version {}", self.format_version));
        }
        let noise_cov = match &self.noise_cov {
            EncodedCovariance::Diagonal { values } => CovarianceSpec::Diagonal(decode_f64s(values)?),
            EncodedCovariance::Dense { matrix } => CovarianceSpec::Dense(matrix.decode()?),
        };
        let outcome = ScrubOutcome {
            method: self.method,
            arch: self.arch.clone(),
            anchor: decode_f64s(&self.anchor)?,
            shifted_weights: decode_f64s(&self.shifted_weights)?,
            noise_cov,
            noise_scale: self.noise_scale,
            seed: self.seed,
            realized_weights: decode_f64s(&self.realized_weights)?,
        };
        let p = self.arch.param_count();
        let lens = [outcome.anchor.len(), outcome.shifted_weights.len(), outcome.realized_weights.len(), outcome.noise_cov.dim()];
        if lens.iter().any(|&l| l != p) {
            return Err(format!("array lengths {lens:?} do not match {p} parameters"));
        }
        Ok(outcome)
    }
}

pub fn checkpoint_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.json", method.name()))
}

pub fn save_checkpoint(path: &Path, outcome: &ScrubOutcome, config_hash: &str) -> Result<()> {
    write_json(path, &Checkpoint::from_outcome(outcome, config_hash))
}

pub fn load_checkpoint(path: &Path) -> Result<(ScrubOutcome, String)> {
    let ck: Checkpoint = read_json(path)?;
    let outcome = ck.to_outcome().map_err(|m| LabError::format(path, m))?;
    Ok((outcome, ck.config_hash))
}
