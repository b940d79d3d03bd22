//! LoRA file ingestion and flattening into weight vectors.
//!
//! A LoRA layer stores `A: r×n` (`lora_down`) and `B: m×r` (`lora_up`). The
//! weight vector of a model concatenates, for every selected layer in
//! ascending byte order of layer names, the row-major entries of `A` followed
//! by those of `B`. Alpha is kept as metadata and never folded into values.

mod model;
pub mod safetensors;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use model::{
    classify_layer, parse_safetensors, parse_safetensors_bytes, LoraLayer, LoraMetadata,
    LoraModel, Subnet, SubnetworkSelector,
};
pub use safetensors::{Dtype, SafeTensors, TensorRecord};

use crate::error::{Error, Result};

/// Hex SHA-256 of the ordered `(layer, role, shape)` sequence behind a vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayoutHash(pub String);

impl fmt::Display for LayoutHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A flattened LoRA, `θ ∈ ℝ^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub values: Vec<f64>,
    pub layout_hash: LayoutHash,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, layout_hash: LayoutHash) -> Self {
        WeightVector {
            values,
            layout_hash,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Flattens the layers picked by `selector` into one vector.
pub fn vectorize(model: &LoraModel, selector: SubnetworkSelector) -> Result<WeightVector> {
    let selected: Vec<&LoraLayer> = model
        .layers()
        .iter()
        .filter(|l| selector.selects(l.subnet))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection(selector.to_string()));
    }
    let d = selected.iter().map(|l| l.num_params()).sum();
    let mut values = Vec::with_capacity(d);
    let mut hasher = Sha256::new();
    for layer in selected {
        for (role, m) in [(b'A', &layer.a), (b'B', &layer.b)] {
            hasher.update((layer.name.len() as u64).to_le_bytes());
            hasher.update(layer.name.as_bytes());
            hasher.update([role]);
            hasher.update((m.nrows() as u64).to_le_bytes());
            hasher.update((m.ncols() as u64).to_le_bytes());
            values.extend(m.iter().copied());
        }
    }
    Ok(WeightVector {
        values,
        layout_hash: LayoutHash(hex::encode(hasher.finalize())),
    })
}
