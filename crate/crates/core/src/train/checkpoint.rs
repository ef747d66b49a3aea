use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, EpochMetrics, TrainConfig};
use crate::cells::Model;
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const SCHEMA_VERSION: u32 = 1;

/// One parameter block as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub params: Vec<NamedArray>,
    pub adam: AdamState,
    pub rng_state: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub metrics: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn capture(
        config: &TrainConfig,
        model: &Model,
        adam: &AdamState,
        rng: &Rng,
        epoch: usize,
        metrics: &[EpochMetrics],
    ) -> Self {
        let params = model
            .param_names()
            .into_iter()
            .zip(model.param_refs())
            .map(|(name, p)| NamedArray {
                name: name.to_string(),
                shape: [p.rows, p.cols],
                data: p.data.to_vec(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            params,
            adam: adam.clone(),
            rng_state: rng.clone(),
            epoch,
            metrics: metrics.to_vec(),
        }
    }

    /// Rebuilds the model, checking every stored block against the shapes
    /// the config implies.
    pub fn model(&self) -> Result<Model> {
        // Any seed works: every value is overwritten below.
        let mut model = self
            .config
            .init_model(&mut Rng::new(0))
            .map_err(|e| Error::Checkpoint(format!("config does not build a model: {e}")))?;
        let names = model.param_names();
        let shapes: Vec<[usize; 2]> = model
            .param_refs()
            .iter()
            .map(|p| [p.rows, p.cols])
            .collect();
        if names.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter blocks, found {}",
                names.len(),
                self.params.len()
            )));
        }
        for ((name, shape), stored) in names.iter().zip(&shapes).zip(&self.params) {
            if stored.name != *name
                || stored.shape != *shape
                || stored.data.len() != shape[0] * shape[1]
            {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} {:?} does not match expected {name:?} {shape:?}",
                    stored.name, stored.shape
                )));
            }
            if stored.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name:?} has non-finite entries"
                )));
            }
        }
        for (dst, stored) in model.params_mut().into_iter().zip(&self.params) {
            dst.copy_from_slice(&stored.data);
        }
        let sizes: Vec<usize> = shapes.iter().map(|s| s[0] * s[1]).collect();
        if self.adam.sizes() != sizes || self.adam.v.iter().map(Vec::len).ne(sizes.iter().copied())
        {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("malformed file: {e}")))?;
        match value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
        {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Checkpoint(format!(
                    "schema version {v} is not supported (expected {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Checkpoint("missing schema_version".into())),
        }
        let ckpt: Checkpoint = serde_json::from_value(value)
            .map_err(|e| Error::Checkpoint(format!("malformed file: {e}")))?;
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
