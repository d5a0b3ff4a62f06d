//! JSON checkpoint: named parameter tensors with explicit shapes.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tensor_layout, EpochStats, ModelParams, BRANCHES, IN_CHANNELS};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub classes: usize,
    #[serde(default)]
    pub history: Vec<EpochStats>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams, history: &[EpochStats]) -> Self {
        let mut tensors: Vec<TensorRecord> = tensor_layout(params.classes)
            .into_iter()
            .zip(params.tensors())
            .map(|((name, shape), data)| TensorRecord {
                name,
                shape,
                data: data.clone(),
            })
            .collect();
        for (name, data) in [("input_shift", &params.input_shift), ("input_scale", &params.input_scale)] {
            tensors.push(TensorRecord {
                name: name.into(),
                shape: vec![BRANCHES, IN_CHANNELS],
                data: data.clone(),
            });
        }
        Self {
            format_version: FORMAT_VERSION,
            classes: params.classes,
            history: history.to_vec(),
            tensors,
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Model(format!(
                "unsupported checkpoint format {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut layout = tensor_layout(self.classes);
        layout.push(("input_shift".into(), vec![BRANCHES, IN_CHANNELS]));
        layout.push(("input_scale".into(), vec![BRANCHES, IN_CHANNELS]));
        if layout.len() != self.tensors.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, expected {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        for ((name, shape), rec) in layout.iter().zip(&self.tensors) {
            if &rec.name != name || &rec.shape != shape {
                return Err(Error::Model(format!(
                    "expected tensor {name} {shape:?}, found {} {:?}",
                    rec.name, rec.shape
                )));
            }
            if rec.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Model(format!("{name}: data length does not match shape")));
            }
        }
        let mut params = ModelParams::zeros(self.classes);
        let (trainable, norm) = self.tensors.split_at(self.tensors.len() - 2);
        for (slot, rec) in params.tensors_mut().into_iter().zip(trainable) {
            *slot = rec.data.clone();
        }
        params.input_shift = norm[0].data.clone();
        params.input_scale = norm[1].data.clone();
        if !params.is_finite() {
            return Err(Error::Model("checkpoint contains non-finite values".into()));
        }
        Ok(params)
    }
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, history: &[EpochStats]) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_params(params, history))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
