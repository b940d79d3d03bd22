//! Index directory layout:
//!
//! ```text
//! manifest.json     dimensions, layout hash, variances, creation parameters
//! mean.bin          d little-endian f32
//! components.bin    k×d little-endian f32, row-major
//! projections.csv   sample_id,label,pc1..pck
//! variance.csv      pc,explained_variance,fraction,cumulative
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pca::{PcaModel, SIGN_CONVENTION};
use crate::error::{Error, Result};
use crate::io::{write_projections_csv, LabeledEmbedding};
use crate::lora_io::LayoutHash;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub format_version: u32,
    pub d: usize,
    pub k: usize,
    pub layout_hash: LayoutHash,
    pub n_train: usize,
    pub sign_convention: String,
    /// Digest of `mean.bin` and `components.bin`.
    pub index_id: String,
    pub total_variance: f64,
    pub explained_variance: Vec<f64>,
    pub creation: BTreeMap<String, serde_json::Value>,
}

fn f32_bytes<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

impl PcaModel {
    /// Copy with mean and components rounded through `f32`, i.e. exactly the
    /// model that [`load_index`] returns after [`save_index`].
    pub fn to_f32_precision(&self) -> PcaModel {
        let round = |x: &f64| *x as f32 as f64;
        PcaModel {
            mean: self.mean.iter().map(round).collect(),
            components: self.components.map(round),
            ..self.clone()
        }
    }
}

/// Writes the index directory, creating it if needed.
pub fn save_index(
    dir: impl AsRef<Path>,
    model: &PcaModel,
    training: &LabeledEmbedding,
    creation: BTreeMap<String, serde_json::Value>,
) -> Result<IndexManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mean = f32_bytes(model.mean.iter());
    let components = f32_bytes(model.components.iter());
    let mut hasher = Sha256::new();
    hasher.update(&mean);
    hasher.update(&components);
    let index_id = hex::encode(&hasher.finalize()[..8]);

    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write("mean.bin", &mean)?;
    write("components.bin", &components)?;
    write_projections_csv(dir.join("projections.csv"), training)?;

    let mut w = csv::Writer::from_path(dir.join("variance.csv"))?;
    w.write_record(["pc", "explained_variance", "fraction", "cumulative"])?;
    let mut cumulative = 0.0;
    for (i, (v, f)) in model
        .explained_variance
        .iter()
        .zip(model.explained_variance_report())
        .enumerate()
    {
        cumulative += f;
        w.write_record([
            (i + 1).to_string(),
            v.to_string(),
            f.to_string(),
            cumulative.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(dir.join("variance.csv"), e))?;

    let manifest = IndexManifest {
        format_version: INDEX_FORMAT_VERSION,
        d: model.dim(),
        k: model.num_pcs(),
        layout_hash: model.layout_hash.clone(),
        n_train: model.n_train,
        sign_convention: SIGN_CONVENTION.to_string(),
        index_id,
        total_variance: model.total_variance,
        explained_variance: model.explained_variance.clone(),
        creation,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write("manifest.json", &json)?;
    Ok(manifest)
}

/// Reads an index directory back into a model.
pub fn load_index(dir: impl AsRef<Path>) -> Result<(PcaModel, IndexManifest)> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: IndexManifest = serde_json::from_slice(&text)?;
    if manifest.format_version != INDEX_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported index format version {}",
            manifest.format_version
        )));
    }
    let mean = crate::io::read_f32_le(dir.join("mean.bin"))?;
    let comps = crate::io::read_f32_le(dir.join("components.bin"))?;
    if mean.len() != manifest.d {
        return Err(Error::Length {
            expected: manifest.d,
            found: mean.len(),
        });
    }
    if comps.len() != manifest.d * manifest.k || manifest.explained_variance.len() != manifest.k {
        return Err(Error::Length {
            expected: manifest.d * manifest.k,
            found: comps.len(),
        });
    }
    let components = Array2::from_shape_vec((manifest.k, manifest.d), comps)
        .map_err(|e| Error::Parse(e.to_string()))?;
    let model = PcaModel {
        mean,
        components,
        explained_variance: manifest.explained_variance.clone(),
        total_variance: manifest.total_variance,
        layout_hash: manifest.layout_hash.clone(),
        n_train: manifest.n_train,
    };
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{fit_pca, project_all};
    use crate::lora_io::WeightVector;

    #[test]
    fn save_load_roundtrip() {
        let data: Vec<WeightVector> = (0..6)
            .map(|i| {
                WeightVector::new(
                    (0..9).map(|j| ((i * 7 + j * 3) % 5) as f64 - 2.0).collect(),
                    LayoutHash("h".into()),
                )
            })
            .collect();
        let model = fit_pca(&data, 3).unwrap().to_f32_precision();
        let samples: Vec<(String, &WeightVector)> =
            data.iter().enumerate().map(|(i, v)| (format!("s{i}"), v)).collect();
        let table = LabeledEmbedding {
            embedding: project_all(&model, &samples, 3).unwrap(),
            labels: vec!["a".into(); 6],
        };
        let dir = tempfile::tempdir().unwrap();
        let m1 = save_index(dir.path(), &model, &table, BTreeMap::new()).unwrap();
        let (loaded, m2) = load_index(dir.path()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(loaded, model);
    }
}
