//! Named-tensor checkpoint archives.
//!
//! A checkpoint is a JSON document:
//!
//! ```json
//! { "format": "rmgib-named-tensors", "version": 1,
//!   "sets": [ { "tag": "attr", "tensors": [
//!       { "name": "w0", "shape": [rows, cols], "values": [row-major f64...] } ] } ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::{ParamSet, ParamSetRecord};
use crate::error::{Error, Result};

pub const FORMAT: &str = "rmgib-named-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub sets: Vec<ParamSetRecord>,
}

impl Checkpoint {
    pub fn new(sets: &[&ParamSet]) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            sets: sets.iter().map(|p| ParamSetRecord::from(*p)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::validation(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    /// Hex SHA-256 of the serialized archive.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn param_sets(&self) -> Result<Vec<ParamSet>> {
        self.sets.iter().cloned().map(ParamSet::try_from).collect()
    }

    /// The set with the given tag.
    pub fn set(&self, tag: &str) -> Result<ParamSet> {
        let r = self
            .sets
            .iter()
            .find(|s| s.tag == tag)
            .ok_or_else(|| Error::validation(format!("checkpoint has no set {tag}")))?;
        ParamSet::try_from(r.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
