//! On-disk formats: base64 float arrays, dataset JSON and small file helpers.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unlearn_core::data::SplitDataset;
use unlearn_core::model::LabeledSet;
use unlearn_core::numerics::DenseMatrix;

use crate::error::{LabError, Result};

/// Little-endian `f64` bytes, base64 encoded. Bit-exact, NaN included.
pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: String,
}

impl EncodedMatrix {
    pub fn encode(m: &DenseMatrix) -> Self {
        Self { rows: m.rows(), cols: m.cols(), data: encode_f64s(m.as_slice()) }
    }

    pub fn decode(&self) -> std::result::Result<DenseMatrix, String> {
        let data = decode_f64s(&self.data)?;
        DenseMatrix::from_vec(self.rows, self.cols, data).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedSet {
    pub inputs: EncodedMatrix,
    pub targets: EncodedMatrix,
}

impl EncodedSet {
    pub fn encode(set: &LabeledSet) -> Self {
        Self { inputs: EncodedMatrix::encode(&set.inputs), targets: EncodedMatrix::encode(&set.targets) }
    }

    pub fn decode(&self) -> std::result::Result<LabeledSet, String> {
        LabeledSet::new(self.inputs.decode()?, self.targets.decode()?).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub classes: usize,
    pub train: EncodedSet,
    pub forget_indices: Vec<usize>,
    pub test: EncodedSet,
    pub validation: EncodedSet,
}

impl DatasetFile {
    pub fn encode(data: &SplitDataset) -> Self {
        Self {
            classes: data.classes,
            train: EncodedSet::encode(&data.train),
            forget_indices: data.forget_indices.clone(),
            test: EncodedSet::encode(&data.test),
            validation: EncodedSet::encode(&data.validation),
        }
    }

    pub fn decode(&self) -> std::result::Result<SplitDataset, String> {
        SplitDataset::new(self.train.decode()?, self.forget_indices.clone(), self.test.decode()?, self.validation.decode()?)
            .map_err(|e| e.to_string())
    }
}

pub fn save_dataset(path: &Path, data: &SplitDataset) -> Result<()> {
    write_json(path, &DatasetFile::encode(data))
}

pub fn load_dataset(path: &Path) -> Result<SplitDataset> {
    let file: DatasetFile = read_json(path)?;
    file.decode().map_err(|m| LabError::format(path, m))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::format(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

/// Writes serializable rows as CSV with a header taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::format(path, e.error()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Like [`write_csv`] but always emits `header`, even with no rows.
pub fn write_csv_with_header(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::format(path, e.error()))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}
