//! Named-tensor checkpoints.
//!
//! A checkpoint `name` is two files: `name.bin`, the tensors' entries as
//! little-endian `f64` concatenated in manifest order (row-major), and
//! `name.json`, the manifest:
//!
//! ```json
//! { "format": "vgcn-tensors-v1",
//!   "tensors": [ { "name": "w0", "shape": [1433, 16], "offset": 0 } ],
//!   "metadata": { } }
//! ```
//!
//! `offset` counts `f64` entries, not bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tape::Mat;
use crate::error::{Error, Result};

const FORMAT: &str = "vgcn-tensors-v1";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Manifest {
    format: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Mat)>,
    pub metadata: serde_json::Value,
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            tensors: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, name: &str, tensor: Mat) -> &mut Self {
        self.tensors.push((name.to_string(), tensor));
        self
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name:?}")))
    }

    /// Writes `stem.bin` and `stem.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: [t.nrows(), t.ncols()],
                offset,
            });
            for v in t.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.len();
        }
        let manifest = Manifest {
            format: FORMAT.to_string(),
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        crate::io::write_atomic(&with_ext(stem, ".bin"), &bytes)?;
        crate::io::write_json(&with_ext(stem, ".json"), &manifest)
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let json_path = with_ext(stem, ".json");
        let bin_path = with_ext(stem, ".bin");
        let manifest: Manifest = crate::io::read_json(&json_path)?;
        if manifest.format != FORMAT {
            return Err(Error::CheckpointMismatch(format!(
                "{}: unknown format {:?}",
                json_path.display(),
                manifest.format
            )));
        }
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::CheckpointMismatch(format!(
                "{}: length {} is not a multiple of 8",
                bin_path.display(),
                bytes.len()
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let expected: usize = manifest.tensors.iter().map(|e| e.shape[0] * e.shape[1]).sum();
        if expected != values.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{}: manifest describes {expected} values, file holds {}",
                bin_path.display(),
                values.len()
            )));
        }
        let mut tensors = Vec::new();
        for e in manifest.tensors {
            let len = e.shape[0] * e.shape[1];
            let slice = values.get(e.offset..e.offset + len).ok_or_else(|| {
                Error::CheckpointMismatch(format!("tensor {:?} runs past end of data", e.name))
            })?;
            let t = Mat::from_shape_vec((e.shape[0], e.shape[1]), slice.to_vec())
                .map_err(|err| Error::CheckpointMismatch(err.to_string()))?;
            tensors.push((e.name, t));
        }
        Ok(Self {
            tensors,
            metadata: manifest.metadata,
        })
    }
}
