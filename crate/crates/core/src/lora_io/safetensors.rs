//! Minimal reader and writer for the safetensors container.
//!
//! Layout: an 8-byte little-endian header length `N`, `N` bytes of JSON
//! mapping tensor names to `{dtype, shape, data_offsets}` (plus an optional
//! `__metadata__` string map), then the raw data region. Offsets are relative
//! to the start of the data region.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

/// Element type tag of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dtype {
    F16,
    BF16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F16 | Dtype::BF16 => 2,
            Dtype::F32 => 4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::F32 => "F32",
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "F16" => Some(Dtype::F16),
            "BF16" => Some(Dtype::BF16),
            "F32" => Some(Dtype::F32),
            _ => None,
        }
    }

    fn decode(self, bytes: &[u8], out: &mut Vec<f64>) {
        match self {
            Dtype::F32 => out.extend(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64),
            ),
            Dtype::F16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|c| half::f16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64()),
            ),
            Dtype::BF16 => out.extend(
                bytes
                    .chunks_exact(2)
                    .map(|c| half::bf16::from_bits(u16::from_le_bytes([c[0], c[1]])).to_f64()),
            ),
        }
    }

    fn encode(self, values: &[f64], out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => {
                for &v in values {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F16 => {
                for &v in values {
                    out.extend_from_slice(&half::f16::from_f64(v).to_bits().to_le_bytes());
                }
            }
            Dtype::BF16 => {
                for &v in values {
                    out.extend_from_slice(&half::bf16::from_f64(v).to_bits().to_le_bytes());
                }
            }
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Header entry for one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// `[start, end)` byte offsets into the data region.
    pub byte_range: (usize, usize),
}

impl TensorRecord {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A parsed safetensors file: header records plus the owned data region.
#[derive(Debug, Clone)]
pub struct SafeTensors {
    records: BTreeMap<String, TensorRecord>,
    metadata: BTreeMap<String, String>,
    data: Vec<u8>,
}

#[derive(Deserialize)]
struct RawEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: (usize, usize),
}

impl SafeTensors {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Parse(format!(
                "file is {} bytes, shorter than the 8-byte header length",
                bytes.len()
            )));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(8))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                Error::Parse(format!(
                    "header length {header_len} exceeds file size {}",
                    bytes.len()
                ))
            })?;
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(&bytes[8..header_end])
                .map_err(|e| Error::Parse(format!("invalid JSON header: {e}")))?;
        let data = bytes[header_end..].to_vec();

        let mut records = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                let map: BTreeMap<String, String> = serde_json::from_value(value)
                    .map_err(|e| Error::Parse(format!("invalid __metadata__: {e}")))?;
                metadata = map;
                continue;
            }
            let raw: RawEntry = serde_json::from_value(value)
                .map_err(|e| Error::Parse(format!("invalid header entry `{name}`: {e}")))?;
            let dtype = Dtype::from_tag(&raw.dtype).ok_or_else(|| {
                Error::Parse(format!("tensor `{name}` has unsupported dtype {}", raw.dtype))
            })?;
            let (start, end) = raw.data_offsets;
            let numel = raw
                .shape
                .iter()
                .try_fold(1usize, |acc, &s| acc.checked_mul(s))
                .ok_or_else(|| Error::Parse(format!("tensor `{name}` shape overflows")))?;
            if start > end || end > data.len() {
                return Err(Error::Parse(format!(
                    "tensor `{name}` offsets [{start}, {end}) outside data region of {} bytes",
                    data.len()
                )));
            }
            if end - start != numel * dtype.size() {
                return Err(Error::Parse(format!(
                    "tensor `{name}` occupies {} bytes but shape {:?} of {dtype} needs {}",
                    end - start,
                    raw.shape,
                    numel * dtype.size()
                )));
            }
            records.insert(
                name.clone(),
                TensorRecord {
                    name,
                    dtype,
                    shape: raw.shape,
                    byte_range: (start, end),
                },
            );
        }

        let mut ranges: Vec<&TensorRecord> =
            records.values().filter(|r| r.byte_range.0 != r.byte_range.1).collect();
        ranges.sort_by_key(|r| r.byte_range);
        for pair in ranges.windows(2) {
            if pair[1].byte_range.0 < pair[0].byte_range.1 {
                return Err(Error::Parse(format!(
                    "tensors `{}` and `{}` overlap in the data region",
                    pair[0].name, pair[1].name
                )));
            }
        }

        Ok(SafeTensors {
            records,
            metadata,
            data,
        })
    }

    /// Records in ascending name order.
    pub fn records(&self) -> impl Iterator<Item = &TensorRecord> {
        self.records.values()
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.records.get(name)
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Decodes a tensor's elements, widened to `f64`, in row-major order.
    pub fn values(&self, record: &TensorRecord) -> Vec<f64> {
        let (start, end) = record.byte_range;
        let mut out = Vec::with_capacity(record.numel());
        record.dtype.decode(&self.data[start..end], &mut out);
        out
    }
}

/// A tensor to be written.
#[derive(Debug, Clone)]
pub struct TensorData {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serializes tensors into safetensors bytes.
///
/// Tensors are stored in ascending name order and the header is padded with
/// spaces to an 8-byte boundary, so identical inputs give identical bytes.
pub fn serialize(tensors: &[TensorData], metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut sorted: Vec<&TensorData> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));

    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        header.insert(METADATA_KEY.to_string(), serde_json::to_value(metadata)?);
    }
    let mut data = Vec::new();
    for (i, t) in sorted.iter().enumerate() {
        if i > 0 && sorted[i - 1].name == t.name {
            return Err(Error::Config(format!("duplicate tensor name `{}`", t.name)));
        }
        if t.name == METADATA_KEY {
            return Err(Error::Config(format!("reserved tensor name `{METADATA_KEY}`")));
        }
        let numel: usize = t.shape.iter().product();
        if numel != t.values.len() {
            return Err(Error::Length {
                expected: numel,
                found: t.values.len(),
            });
        }
        let start = data.len();
        t.dtype.encode(&t.values, &mut data);
        header.insert(
            t.name.clone(),
            serde_json::json!({
                "dtype": t.dtype.tag(),
                "shape": t.shape,
                "data_offsets": [start, data.len()],
            }),
        );
    }

    let mut header_bytes = serde_json::to_vec(&header)?;
    while header_bytes.len() % 8 != 0 {
        header_bytes.push(b' ');
    }
    let mut out = Vec::with_capacity(8 + header_bytes.len() + data.len());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&data);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(name: &str, dtype: Dtype, shape: &[usize], values: &[f64]) -> TensorData {
        TensorData {
            name: name.into(),
            dtype,
            shape: shape.to_vec(),
            values: values.to_vec(),
        }
    }

    #[test]
    fn roundtrip_all_dtypes() {
        let vals = [1.0, -2.5, 0.125, 3.0];
        let tensors = vec![
            tensor("a", Dtype::F32, &[2, 2], &vals),
            tensor("b", Dtype::F16, &[4], &vals),
            tensor("c", Dtype::BF16, &[1, 4], &vals),
        ];
        let bytes = serialize(&tensors, &BTreeMap::new()).unwrap();
        let st = SafeTensors::from_bytes(&bytes).unwrap();
        for t in &tensors {
            let rec = st.get(&t.name).unwrap();
            assert_eq!(rec.dtype, t.dtype);
            assert_eq!(rec.shape, t.shape);
            assert_eq!(st.values(rec), vals);
        }
    }

    #[test]
    fn header_is_padded_and_metadata_kept() {
        let mut meta = BTreeMap::new();
        meta.insert("ss_network_alpha".to_string(), "8".to_string());
        let bytes = serialize(&[tensor("x", Dtype::F32, &[1], &[1.0])], &meta).unwrap();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(n % 8, 0);
        let st = SafeTensors::from_bytes(&bytes).unwrap();
        assert_eq!(st.metadata()["ss_network_alpha"], "8");
    }

    #[test]
    fn rejects_truncated_and_bad_json() {
        assert!(matches!(SafeTensors::from_bytes(&[1, 2, 3]), Err(Error::Parse(_))));
        let mut bytes = 100u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{}");
        assert!(matches!(SafeTensors::from_bytes(&bytes), Err(Error::Parse(_))));
        let mut bytes = 4u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{bad");
        assert!(matches!(SafeTensors::from_bytes(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_overlap_and_wrong_length() {
        let header = br#"{"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 12]);
        let err = SafeTensors::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("overlap"), "{err}");

        let header = br#"{"a":{"dtype":"F32","shape":[3],"data_offsets":[0,8]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 8]);
        assert!(matches!(SafeTensors::from_bytes(&bytes), Err(Error::Parse(_))));
    }

    #[test]
    fn rejects_unknown_dtype() {
        let header = br#"{"a":{"dtype":"I8","shape":[1],"data_offsets":[0,1]}}"#;
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(header);
        bytes.push(0);
        let err = SafeTensors::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("I8"));
    }
}
