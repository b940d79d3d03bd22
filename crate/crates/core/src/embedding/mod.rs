//! PCA style embedding: fitting, projection, persistence and comparison.

mod index;
mod pca;
mod select;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

pub use index::{load_index, save_index, IndexManifest, INDEX_FORMAT_VERSION};
pub use pca::{fit_pca, fit_pca_up_to, PcaModel, DEFAULT_NUM_PCS, SIGN_CONVENTION};
pub use select::{select_num_pcs, PcSelection, PcTask, SelectionConfig, SelectionData};

use crate::error::{Error, Result};
use crate::lora_io::WeightVector;

/// Per-sample coordinates in the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// `n × k`.
    pub coords: Array2<f64>,
    pub sample_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(coords: Array2<f64>, sample_ids: Vec<String>) -> Result<Self> {
        if coords.nrows() != sample_ids.len() {
            return Err(Error::Length {
                expected: sample_ids.len(),
                found: coords.nrows(),
            });
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding contains non-finite coordinates".into()));
        }
        Ok(EmbeddingMatrix { coords, sample_ids })
    }

    pub fn num_pcs(&self) -> usize {
        self.coords.ncols()
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    /// First `num_pcs` columns.
    pub fn truncated(&self, num_pcs: usize) -> Result<EmbeddingMatrix> {
        if num_pcs == 0 || num_pcs > self.num_pcs() {
            return Err(Error::Config(format!(
                "cannot truncate {}-column embedding to {num_pcs}",
                self.num_pcs()
            )));
        }
        Ok(EmbeddingMatrix {
            coords: self.coords.slice(ndarray::s![.., ..num_pcs]).to_owned(),
            sample_ids: self.sample_ids.clone(),
        })
    }
}

/// Projects many vectors at once onto the first `num_pcs` components.
pub fn project_all(
    model: &PcaModel,
    samples: &[(String, &WeightVector)],
    num_pcs: usize,
) -> Result<EmbeddingMatrix> {
    model.check_num_pcs(num_pcs)?;
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|(_, v)| model.project(v, num_pcs))
        .collect::<Result<_>>()?;
    let mut coords = Array2::zeros((samples.len(), num_pcs));
    for (mut dst, src) in coords.axis_iter_mut(Axis(0)).zip(&rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    EmbeddingMatrix::new(coords, samples.iter().map(|(id, _)| id.clone()).collect())
}

/// Mean cosine similarity between corresponding rows of two embeddings,
/// truncated to `num_pcs` axes, after flipping the sign of any axis of `b`
/// that anti-correlates with `a`.
///
/// Axis correlation is measured on row-normalized coordinates. Sign flips
/// leave row norms unchanged, so the mean cosine splits into one term per
/// axis and this choice maximizes it over all `2^j` sign patterns. Zero rows
/// score 0 and still count toward the mean.
pub fn compare_embeddings(a: &EmbeddingMatrix, b: &EmbeddingMatrix, num_pcs: usize) -> Result<f64> {
    if a.sample_ids != b.sample_ids {
        return Err(Error::Alignment(
            "embeddings must list the same sample ids in the same order".into(),
        ));
    }
    if num_pcs == 0 || num_pcs > a.num_pcs() || num_pcs > b.num_pcs() {
        return Err(Error::Config(format!(
            "num_pcs {num_pcs} exceeds embedding widths {} and {}",
            a.num_pcs(),
            b.num_pcs()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::Size("cannot compare empty embeddings".into()));
    }
    let weights: Vec<f64> = (0..n)
        .map(|i| {
            let ra = a.coords.row(i);
            let rb = b.coords.row(i);
            let na: f64 = ra.iter().take(num_pcs).map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = rb.iter().take(num_pcs).map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                1.0 / (na * nb)
            }
        })
        .collect();
    let mut total = 0.0;
    for axis in 0..num_pcs {
        let term: f64 = (0..n)
            .map(|i| a.coords[[i, axis]] * b.coords[[i, axis]] * weights[i])
            .sum();
        total += term.abs();
    }
    Ok(total / n as f64)
}

/// [`compare_embeddings`] for every `j` in `1..=max_pcs`.
pub fn similarity_curve(a: &EmbeddingMatrix, b: &EmbeddingMatrix, max_pcs: usize) -> Result<Vec<f64>> {
    (1..=max_pcs).map(|j| compare_embeddings(a, b, j)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn emb(coords: Array2<f64>) -> EmbeddingMatrix {
        let ids = (0..coords.nrows()).map(|i| format!("s{i}")).collect();
        EmbeddingMatrix::new(coords, ids).unwrap()
    }

    #[test]
    fn identical_and_flipped_score_one() {
        let a = emb(array![[1.0, 2.0, -1.0], [0.5, -3.0, 2.0], [-2.0, 1.0, 0.3]]);
        let flipped = emb(a.coords.mapv(|x| -x));
        for j in 1..=3 {
            assert!((compare_embeddings(&a, &a, j).unwrap() - 1.0).abs() < 1e-12);
            assert!((compare_embeddings(&a, &flipped, j).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rows_count_as_zero() {
        let a = emb(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!((compare_embeddings(&a, &a, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mismatched_ids_rejected() {
        let a = emb(array![[1.0], [2.0]]);
        let mut b = a.clone();
        b.sample_ids.swap(0, 1);
        assert!(matches!(compare_embeddings(&a, &b, 1), Err(Error::Alignment(_))));
        assert!(matches!(compare_embeddings(&a, &a, 2), Err(Error::Config(_))));
    }

    #[test]
    fn truncation() {
        let a = emb(array![[1.0, 2.0, 3.0]]);
        assert_eq!(a.truncated(2).unwrap().coords, array![[1.0, 2.0]]);
        assert!(a.truncated(4).is_err());
    }
}
