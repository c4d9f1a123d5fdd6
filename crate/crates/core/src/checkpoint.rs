//! Versioned JSON checkpoints of a fitted model.
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! `float_roundtrip`, so save → load reproduces every parameter bit for bit.
//! Maps are ordered, so equal states always serialize to equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GlobalState, LocalState, ModelConfig};

/// Bumped whenever the layout changes incompatibly.
pub const FORMAT_VERSION: u32 = 1;

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub code_version: String,
    /// The fully resolved run configuration, for provenance.
    pub run_config: BTreeMap<String, String>,
    pub model: ModelConfig,
    /// Global iterations completed when the checkpoint was taken.
    pub iteration: usize,
    pub global: GlobalState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locals: Option<Vec<LocalState>>,
}

impl Checkpoint {
    pub fn new(
        run_config: BTreeMap<String, String>,
        model: ModelConfig,
        iteration: usize,
        global: GlobalState,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            code_version: CODE_VERSION.to_string(),
            run_config,
            model,
            iteration,
            global,
            locals: None,
        }
    }

    /// Checks the version and that the state is consistent with the model.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.model
            .validate()
            .map_err(|e| Error::Checkpoint(format!("model: {e}")))?;
        self.global
            .check_config(&self.model)
            .map_err(|e| Error::Checkpoint(format!("global state: {e}")))?;
        if let Some(locals) = &self.locals {
            let t = self.model.truncation;
            for (u, l) in locals.iter().enumerate() {
                if l.x_shape.len() != t
                    || l.x_rate.len() != t
                    || l.d.len() != self.model.dim
                    || l.phi.len() % t.max(1) != 0
                {
                    return Err(Error::Checkpoint(format!(
                        "row {u}: local state has the wrong shape"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // peek at the version first so old files get a clear message
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "format version {v} is not supported (expected {FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing format_version".into())),
        }
        let cp: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        cp.validate()?;
        Ok(cp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
