//! JSON checkpoint records for [`Mlp`].
//!
//! Parameters are written as `f64`, which holds every `f32` exactly, and
//! `serde_json` emits shortest round-trip decimal strings, so a save/load
//! cycle reproduces each parameter bit for bit.

use serde::{Deserialize, Serialize};

use super::{Activation, Mlp, NnError, Result};
use crate::Scalar;

pub const MLP_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// `weights[l][row][col]`, one row per output unit.
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn to_record(&self) -> MlpRecord {
        let sizes = self.layer_sizes();
        MlpRecord {
            format_version: MLP_FORMAT_VERSION,
            layer_sizes: sizes.to_vec(),
            hidden_activation: self.hidden_activation(),
            output_activation: self.output_activation(),
            weights: (0..self.num_layers())
                .map(|l| {
                    self.weights(l)
                        .chunks(sizes[l])
                        .map(|row| row.iter().map(|w| w.as_f64()).collect())
                        .collect()
                })
                .collect(),
            biases: (0..self.num_layers())
                .map(|l| self.biases(l).iter().map(|b| b.as_f64()).collect())
                .collect(),
        }
    }

    pub fn from_record(record: &MlpRecord) -> Result<Self> {
        if record.format_version != MLP_FORMAT_VERSION {
            return Err(NnError::Load(format!(
                "unsupported checkpoint format version {} (expected {MLP_FORMAT_VERSION})",
                record.format_version
            )));
        }
        let sizes = &record.layer_sizes;
        if sizes.len() < 2 || record.weights.len() != sizes.len() - 1 {
            return Err(NnError::Load("layer count does not match layer_sizes".into()));
        }
        let mut weights = Vec::with_capacity(record.weights.len());
        for (l, rows) in record.weights.iter().enumerate() {
            if rows.len() != sizes[l + 1] || rows.iter().any(|r| r.len() != sizes[l]) {
                return Err(NnError::Load(format!("layer {l} weight matrix has the wrong shape")));
            }
            weights.push(rows.iter().flatten().map(|&w| T::of(w)).collect());
        }
        let biases = record
            .biases
            .iter()
            .map(|b| b.iter().map(|&v| T::of(v)).collect())
            .collect();
        Mlp::from_parameters(
            sizes,
            record.hidden_activation,
            record.output_activation,
            weights,
            biases,
        )
        .map_err(|e| NnError::Load(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("checkpoint record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(NnError::Load("empty checkpoint record".into()));
        }
        let record: MlpRecord =
            serde_json::from_str(text).map_err(|e| NnError::Load(e.to_string()))?;
        Self::from_record(&record)
    }
}
