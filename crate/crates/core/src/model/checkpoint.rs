//! Checkpoint container.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "wacil-checkpoint",
//!   "version": 1,
//!   "step": <1-based step index>,
//!   "seed": <global seed>,
//!   "model": {
//!     "extractor": { "layers": [{ "weight": <ndarray>, "bias": <ndarray> }, ...],
//!                    "nonnegative_features": bool },
//!     "head": { "weights": <ndarray d x C>, "bias": <ndarray C> | null, "old_count": int },
//!     "weight_normalized": bool
//!   }
//! }
//! ```
//!
//! Arrays use ndarray's serde layout `{ "v": 1, "dim": [...], "data": [...] }`
//! with row-major data. Floats are written in shortest round-trip form and
//! parsed with correct rounding, so save/load is bit-exact for finite values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Model;
use crate::{Error, Result};

const FORMAT: &str = "wacil-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    version: u32,
    pub step: usize,
    pub seed: u64,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(step: usize, seed: u64, model: Model) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            step,
            seed,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text)?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }
}
