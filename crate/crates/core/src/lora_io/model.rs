use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::safetensors::{self, Dtype, SafeTensors, TensorData, TensorRecord};
use crate::error::{Error, Result};

const DOWN_SUFFIX: &str = ".lora_down.weight";
const UP_SUFFIX: &str = ".lora_up.weight";
const ALPHA_SUFFIX: &str = ".alpha";

/// Part of the adapted network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subnet {
    FeedForward,
    SelfAttention,
    CrossAttention,
    Other,
}

/// Assigns a layer to a sub-network from its underscore-delimited name tokens.
///
/// Rules are tried in order `attn1`, `attn2`, `ff`/`mlp`; the first match wins.
pub fn classify_layer(layer_name: &str) -> Subnet {
    let has = |tok: &str| layer_name.split(['_', '.']).any(|t| t == tok);
    if has("attn1") {
        Subnet::SelfAttention
    } else if has("attn2") {
        Subnet::CrossAttention
    } else if has("ff") || has("mlp") {
        Subnet::FeedForward
    } else {
        Subnet::Other
    }
}

/// Which layers enter the weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SubnetworkSelector {
    #[default]
    Full,
    FeedForward,
    SelfAttention,
    CrossAttention,
}

impl SubnetworkSelector {
    pub fn selects(self, subnet: Subnet) -> bool {
        match self {
            SubnetworkSelector::Full => true,
            SubnetworkSelector::FeedForward => subnet == Subnet::FeedForward,
            SubnetworkSelector::SelfAttention => subnet == Subnet::SelfAttention,
            SubnetworkSelector::CrossAttention => subnet == Subnet::CrossAttention,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SubnetworkSelector::Full => "full",
            SubnetworkSelector::FeedForward => "ff",
            SubnetworkSelector::SelfAttention => "self-attn",
            SubnetworkSelector::CrossAttention => "cross-attn",
        }
    }
}

impl fmt::Display for SubnetworkSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubnetworkSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SubnetworkSelector::Full),
            "ff" | "feed-forward" => Ok(SubnetworkSelector::FeedForward),
            "self-attn" | "self-attention" => Ok(SubnetworkSelector::SelfAttention),
            "cross-attn" | "cross-attention" => Ok(SubnetworkSelector::CrossAttention),
            other => Err(Error::Config(format!("unknown subnetwork `{other}`"))),
        }
    }
}

/// One adapted layer: `ΔW = B·A` with `A: r×n` (down) and `B: m×r` (up).
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub name: String,
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub subnet: Subnet,
    /// Per-layer alpha if the file stores one. Never applied to the weights.
    pub alpha: Option<f64>,
}

impl LoraLayer {
    pub fn new(name: impl Into<String>, a: Array2<f64>, b: Array2<f64>) -> Result<Self> {
        let name = name.into();
        let rank = a.nrows();
        if b.ncols() != rank {
            return Err(Error::Shape {
                layer: name,
                detail: format!("A has {rank} rows but B has {} columns", b.ncols()),
            });
        }
        let (m, n) = (b.nrows(), a.ncols());
        if rank == 0 || rank > m.min(n) {
            return Err(Error::Shape {
                layer: name,
                detail: format!("rank {rank} invalid for a {m}x{n} update"),
            });
        }
        let subnet = classify_layer(&name);
        Ok(LoraLayer {
            name,
            a,
            b,
            subnet,
            alpha: None,
        })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    /// Number of entries this layer contributes: `r·n + m·r`.
    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Model-level information read from the file header.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoraMetadata {
    pub alpha: Option<f64>,
    pub declared_rank: Option<usize>,
    /// On-disk element type of the first tensor; mixed files keep the first.
    pub dtype: Option<Dtype>,
    pub extra: BTreeMap<String, String>,
}

/// A set of LoRA layers sharing one rank, ordered by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraModel {
    layers: Vec<LoraLayer>,
    pub metadata: LoraMetadata,
}

impl LoraModel {
    /// Builds a model, sorting layers by name and checking uniqueness and rank.
    pub fn new(mut layers: Vec<LoraLayer>, metadata: LoraMetadata) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parse("model has no LoRA layers".into()));
        }
        layers.sort_by(|x, y| x.name.as_bytes().cmp(y.name.as_bytes()));
        for pair in layers.windows(2) {
            if pair[0].name == pair[1].name {
                return Err(Error::Parse(format!("duplicate layer `{}`", pair[0].name)));
            }
        }
        let expected = layers[0].rank();
        if let Some(bad) = layers.iter().find(|l| l.rank() != expected) {
            return Err(Error::HeterogeneousRank {
                layer: bad.name.clone(),
                expected,
                found: bad.rank(),
            });
        }
        Ok(LoraModel { layers, metadata })
    }

    pub fn layers(&self) -> &[LoraLayer] {
        &self.layers
    }

    pub fn rank(&self) -> usize {
        self.layers[0].rank()
    }

    /// Total parameter count of the layers picked by `selector`.
    pub fn dim(&self, selector: SubnetworkSelector) -> usize {
        self.layers
            .iter()
            .filter(|l| selector.selects(l.subnet))
            .map(LoraLayer::num_params)
            .sum()
    }

    /// Parameter counts per sub-network.
    pub fn subnet_dims(&self) -> BTreeMap<Subnet, usize> {
        let mut out = BTreeMap::new();
        for l in &self.layers {
            *out.entry(l.subnet).or_insert(0) += l.num_params();
        }
        out
    }

    /// Encodes the model with kohya key names (`<layer>.lora_down.weight`,
    /// `<layer>.lora_up.weight`, optional `<layer>.alpha`).
    pub fn to_safetensors_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.layers.len() * 3);
        for l in &self.layers {
            tensors.push(TensorData {
                name: format!("{}{DOWN_SUFFIX}", l.name),
                dtype,
                shape: vec![l.a.nrows(), l.a.ncols()],
                values: l.a.iter().copied().collect(),
            });
            tensors.push(TensorData {
                name: format!("{}{UP_SUFFIX}", l.name),
                dtype,
                shape: vec![l.b.nrows(), l.b.ncols()],
                values: l.b.iter().copied().collect(),
            });
            if let Some(alpha) = l.alpha {
                tensors.push(TensorData {
                    name: format!("{}{ALPHA_SUFFIX}", l.name),
                    dtype,
                    shape: vec![],
                    values: vec![alpha],
                });
            }
        }
        let mut meta = self.metadata.extra.clone();
        if let Some(alpha) = self.metadata.alpha {
            meta.insert("ss_network_alpha".into(), alpha.to_string());
        }
        if let Some(rank) = self.metadata.declared_rank {
            meta.insert("ss_network_dim".into(), rank.to_string());
        }
        safetensors::serialize(&tensors, &meta)
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_safetensors_bytes(dtype)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Reads a kohya-convention LoRA file.
pub fn parse_safetensors(path: impl AsRef<Path>) -> Result<LoraModel> {
    let st = SafeTensors::read(path)?;
    model_from_safetensors(&st)
}

pub fn parse_safetensors_bytes(bytes: &[u8]) -> Result<LoraModel> {
    model_from_safetensors(&SafeTensors::from_bytes(bytes)?)
}

#[derive(Default)]
struct Pending<'a> {
    down: Option<&'a TensorRecord>,
    up: Option<&'a TensorRecord>,
    alpha: Option<&'a TensorRecord>,
}

fn model_from_safetensors(st: &SafeTensors) -> Result<LoraModel> {
    let mut pending: BTreeMap<&str, Pending<'_>> = BTreeMap::new();
    let mut dtype = None;
    for rec in st.records() {
        let name = rec.name.as_str();
        let (layer, slot) = if let Some(l) = name.strip_suffix(DOWN_SUFFIX) {
            (l, 0)
        } else if let Some(l) = name.strip_suffix(UP_SUFFIX) {
            (l, 1)
        } else if let Some(l) = name.strip_suffix(ALPHA_SUFFIX) {
            (l, 2)
        } else {
            return Err(Error::Parse(format!(
                "unsupported tensor key `{name}`: expected `<layer>.lora_down.weight`, \
                 `<layer>.lora_up.weight` or `<layer>.alpha`"
            )));
        };
        if slot < 2 && dtype.is_none() {
            dtype = Some(rec.dtype);
        }
        let entry = pending.entry(layer).or_default();
        match slot {
            0 => entry.down = Some(rec),
            1 => entry.up = Some(rec),
            _ => entry.alpha = Some(rec),
        }
    }

    let mut layers = Vec::with_capacity(pending.len());
    for (name, p) in pending {
        let (down, up) = match (p.down, p.up) {
            (Some(d), Some(u)) => (d, u),
            (Some(_), None) => {
                return Err(Error::Pairing {
                    layer: name.into(),
                    present: "lora_down",
                    missing: "lora_up",
                })
            }
            (None, Some(_)) => {
                return Err(Error::Pairing {
                    layer: name.into(),
                    present: "lora_up",
                    missing: "lora_down",
                })
            }
            (None, None) => {
                return Err(Error::Pairing {
                    layer: name.into(),
                    present: "alpha",
                    missing: "lora_down/lora_up",
                })
            }
        };
        let a = matrix_from_record(st, down, name, false)?;
        let b = matrix_from_record(st, up, name, true)?;
        let mut layer = LoraLayer::new(name, a, b)?;
        if let Some(alpha) = p.alpha {
            let v = st.values(alpha);
            if v.len() != 1 {
                return Err(Error::Shape {
                    layer: name.into(),
                    detail: format!("alpha has {} elements, expected a scalar", v.len()),
                });
            }
            layer.alpha = Some(v[0]);
        }
        layers.push(layer);
    }

    let extra = st.metadata().clone();
    let layer_alpha = layers
        .first()
        .and_then(|l| l.alpha)
        .filter(|a| layers.iter().all(|l| l.alpha == Some(*a)));
    let metadata = LoraMetadata {
        alpha: extra
            .get("ss_network_alpha")
            .and_then(|s| s.parse().ok())
            .or(layer_alpha),
        declared_rank: extra.get("ss_network_dim").and_then(|s| s.parse().ok()),
        dtype,
        extra,
    };
    LoraModel::new(layers, metadata)
}

/// Views a stored tensor as a 2-D matrix. Convolutional `down` weights of
/// shape `[r, c, kh, kw]` flatten to `r × (c·kh·kw)`; `up` weights may carry
/// trailing unit dimensions only.
fn matrix_from_record(
    st: &SafeTensors,
    rec: &TensorRecord,
    layer: &str,
    is_up: bool,
) -> Result<Array2<f64>> {
    let shape_err = |detail: String| Error::Shape {
        layer: layer.into(),
        detail,
    };
    if rec.shape.len() < 2 {
        return Err(shape_err(format!(
            "`{}` has shape {:?}, expected at least 2 dimensions",
            rec.name, rec.shape
        )));
    }
    let rows = rec.shape[0];
    let trailing: usize = rec.shape[2..].iter().product();
    let cols = if is_up {
        if trailing != 1 {
            return Err(shape_err(format!(
                "`{}` has shape {:?}; up weights must be m x r (x 1 x 1)",
                rec.name, rec.shape
            )));
        }
        rec.shape[1]
    } else {
        rec.shape[1] * trailing
    };
    Array2::from_shape_vec((rows, cols), st.values(rec))
        .map_err(|e| shape_err(format!("`{}`: {e}", rec.name)))
}
