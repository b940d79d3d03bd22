//! On-disk helpers: raw float blobs, vector files and embedding tables.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Writes values as little-endian `f32`.
pub fn write_f32_le(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_le(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Parse(format!(
            "{}: {} bytes is not a whole number of f32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Reads a feature vector: `.csv`/`.txt` files hold comma- or
/// whitespace-separated numbers, anything else is a raw `f32` blob.
pub fn read_vector_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>().map_err(|e| {
                        Error::Parse(format!("{}: bad number `{t}`: {e}", path.display()))
                    })
                })
                .collect()
        }
        _ => read_f32_le(path),
    }
}

/// An embedding together with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub embedding: EmbeddingMatrix,
    pub labels: Vec<String>,
}

/// Writes `sample_id,label,pc1..pck`.
pub fn write_projections_csv(path: impl AsRef<Path>, table: &LabeledEmbedding) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let k = table.embedding.num_pcs();
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((1..=k).map(|i| format!("pc{i}")));
    w.write_record(&header)?;
    for (i, id) in table.embedding.sample_ids.iter().enumerate() {
        let mut rec = vec![id.clone(), table.labels[i].clone()];
        rec.extend(table.embedding.coords.row(i).iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an embedding table. Two layouts are accepted:
///
/// * `sample_id,label,<coord columns...>` with inline coordinates;
/// * `sample_id,label,path` listing vector files (see [`read_vector_file`]),
///   resolved relative to the table's directory.
pub fn read_embedding_table(path: impl AsRef<Path>) -> Result<LabeledEmbedding> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 3 || header[0] != "sample_id" || header[1] != "label" {
        return Err(Error::Parse(format!(
            "{}: expected header `sample_id,label,...`",
            path.display()
        )));
    }
    let by_path = header.len() == 3 && header[2] == "path";
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        ids.push(rec[0].to_string());
        labels.push(rec[1].to_string());
        let row = if by_path {
            let p = PathBuf::from(&rec[2]);
            read_vector_file(if p.is_absolute() { p } else { base.join(p) })?
        } else {
            rec.iter()
                .skip(2)
                .map(|t| {
                    t.parse::<f64>().map_err(|e| {
                        Error::Parse(format!("{}:{line}: bad number `{t}`: {e}", path.display()))
                    })
                })
                .collect::<Result<_>>()?
        };
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Length {
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    let width = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let coords = Array2::from_shape_vec((ids.len(), width), flat)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(LabeledEmbedding {
        embedding: EmbeddingMatrix::new(coords, ids)?,
        labels,
    })
}
