//! Versioned JSON parameter checkpoints.
//!
//! JSON numbers are written in shortest-round-trip form, so every finite
//! 64-bit value survives a save/load cycle bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ioutil;
use crate::nn::LayerStack;

const FORMAT_VERSION: u32 = 1;

/// A layer stack plus free-form stage metadata, as stored on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Stage-specific settings needed to reuse the stack (input layout,
    /// normalization constants, training provenance).
    pub meta: BTreeMap<String, serde_json::Value>,
    pub stack: LayerStack,
}

impl Checkpoint {
    pub fn new(stack: LayerStack) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            meta: BTreeMap::new(),
            stack,
        }
    }

    pub fn with_meta(mut self, key: &str, value: serde_json::Value) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid_argument(format!("checkpoint meta missing {key}")))
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::invalid_argument(format!("checkpoint meta missing {key}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ioutil::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = ioutil::read_json(path)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::invalid_argument(format!(
                "unsupported checkpoint version {} in {} (expected {FORMAT_VERSION})",
                ckpt.format_version,
                path.display()
            )));
        }
        Ok(ckpt)
    }
}
