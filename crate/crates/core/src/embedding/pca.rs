use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lora_io::{LayoutHash, WeightVector};

/// Tag written to index manifests describing the component sign rule.
pub const SIGN_CONVENTION: &str = "max-abs-loading-positive";

/// Default number of components kept by a fit.
pub const DEFAULT_NUM_PCS: usize = 100;

/// Eigenvalues below this fraction of the largest one count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Principal components of a set of weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k × d`, orthonormal rows in order of decreasing variance.
    pub components: Array2<f64>,
    /// Sample variance (`n − 1` denominator) along each component.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance, i.e. the variance over all directions.
    pub total_variance: f64,
    pub layout_hash: LayoutHash,
    pub n_train: usize,
}

/// Fits exactly `num_pcs` components, failing if the data cannot support them.
pub fn fit_pca(data: &[WeightVector], num_pcs: usize) -> Result<PcaModel> {
    fit(data, num_pcs, false)
}

/// Like [`fit_pca`] but keeps at most `max_pcs` components, dropping any that
/// exceed `n − 1` or the numerical rank of the data.
pub fn fit_pca_up_to(data: &[WeightVector], max_pcs: usize) -> Result<PcaModel> {
    fit(data, max_pcs, true)
}

fn fit(data: &[WeightVector], num_pcs: usize, clamp: bool) -> Result<PcaModel> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Size(format!("PCA needs at least 2 samples, got {n}")));
    }
    if num_pcs == 0 {
        return Err(Error::Rank("number of components must be at least 1".into()));
    }
    let layout = &data[0].layout_hash;
    let d = data[0].dim();
    for v in data {
        if &v.layout_hash != layout {
            return Err(Error::Layout {
                expected: layout.to_string(),
                found: v.layout_hash.to_string(),
            });
        }
        if v.dim() != d {
            return Err(Error::Length {
                expected: d,
                found: v.dim(),
            });
        }
    }
    let limit = (n - 1).min(d);
    if num_pcs > limit && !clamp {
        return Err(Error::Rank(format!(
            "{num_pcs} components requested but n = {n}, d = {d} allow at most {limit}"
        )));
    }
    if let Some(i) = data.iter().position(|v| v.values.iter().any(|x| !x.is_finite())) {
        return Err(Error::Numeric(format!("sample {i} contains non-finite values")));
    }

    let mut mean = vec![0.0; d];
    for v in data {
        for (m, x) in mean.iter_mut().zip(&v.values) {
            *m += x;
        }
    }
    let inv_n = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let mut centered = Array2::<f64>::zeros((n, d));
    centered
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(data.par_iter())
        .for_each(|(mut row, v)| {
            for ((r, x), m) in row.iter_mut().zip(&v.values).zip(&mean) {
                *r = x - m;
            }
        });

    // n ≪ d: eigendecompose the n×n Gram matrix instead of the d×d covariance.
    let gram = centered.dot(&centered.t());
    let trace: f64 = gram.diag().sum();
    let total_variance = trace / (n - 1) as f64;
    if !(total_variance > 0.0) {
        return Err(Error::Fit("training data has zero variance".into()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_fn(n, n, |i, j| gram[[i, j]]));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let lambda_max = eig.eigenvalues[order[0]];
    let rank = order
        .iter()
        .take(limit)
        .take_while(|&&i| eig.eigenvalues[i] > RANK_TOLERANCE * lambda_max)
        .count();
    let k = if clamp {
        num_pcs.min(limit).min(rank)
    } else if num_pcs > rank {
        return Err(Error::Rank(format!(
            "{num_pcs} components requested but the data has numerical rank {rank}"
        )));
    } else {
        num_pcs
    };
    if k == 0 {
        return Err(Error::Fit("training data has zero variance".into()));
    }

    // q_i = Xcᵀ v_i / sqrt(λ_i)
    let scaled = Array2::from_shape_fn((k, n), |(c, s)| {
        let idx = order[c];
        eig.eigenvectors[(s, idx)] / eig.eigenvalues[idx].sqrt()
    });
    let mut components = scaled.dot(&centered);
    drop(centered);
    components
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .for_each(|mut row| {
            let norm = row.dot(&row).sqrt();
            row.mapv_inplace(|x| x / norm);
            if sign_of_largest_loading(row.view()) < 0.0 {
                row.mapv_inplace(|x| -x);
            }
        });
    let denom = (n - 1) as f64;
    let explained_variance = order[..k]
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0) / denom)
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        layout_hash: layout.clone(),
        n_train: n,
    })
}

/// Sign of the entry with the largest magnitude; the lowest index wins ties.
pub(crate) fn sign_of_largest_loading(row: ArrayView1<'_, f64>) -> f64 {
    let mut best = 0.0f64;
    for &x in row {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

impl PcaModel {
    pub fn num_pcs(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Uncalibrated projection onto the first `num_pcs` components:
    /// `Q[..j] · (θ − mean)`.
    pub fn project(&self, theta: &WeightVector, num_pcs: usize) -> Result<Vec<f64>> {
        if theta.layout_hash != self.layout_hash {
            return Err(Error::Layout {
                expected: self.layout_hash.to_string(),
                found: theta.layout_hash.to_string(),
            });
        }
        self.project_values(&theta.values, num_pcs)
    }

    /// Projection of raw values without the layout check.
    pub fn project_values(&self, values: &[f64], num_pcs: usize) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::Length {
                expected: self.dim(),
                found: values.len(),
            });
        }
        self.check_num_pcs(num_pcs)?;
        let centered: Vec<f64> = values.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..num_pcs)
            .map(|c| {
                self.components
                    .row(c)
                    .iter()
                    .zip(&centered)
                    .map(|(q, x)| q * x)
                    .sum()
            })
            .collect())
    }

    /// Maps coordinates back to weight space: `mean + Σ c_i q_i`.
    pub fn reconstruct(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.check_num_pcs(coords.len())?;
        let mut out = self.mean.clone();
        for (c, &w) in coords.iter().enumerate() {
            for (o, q) in out.iter_mut().zip(self.components.row(c)) {
                *o += w * q;
            }
        }
        Ok(out)
    }

    /// Fraction of total variance carried by each kept component.
    pub fn explained_variance_report(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    pub(crate) fn check_num_pcs(&self, num_pcs: usize) -> Result<()> {
        if num_pcs == 0 || num_pcs > self.num_pcs() {
            return Err(Error::Config(format!(
                "requested {num_pcs} components, model has {}",
                self.num_pcs()
            )));
        }
        Ok(())
    }
}
