//! k-means over embedding coordinates, scored with ARI and NMI.

mod kmeans;
mod metrics;

use std::collections::HashMap;
use std::hash::Hash;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

pub use kmeans::{kmeans, kmeans_restarts, KMeansResult, DEFAULT_RESTARTS, MAX_ITERATIONS};
pub use metrics::{adjusted_rand_index, normalized_mutual_information};

use crate::error::{Error, Result};

/// Seeds used when none are given.
pub const DEFAULT_SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

/// Cluster ids densely numbered `0..n_clusters` in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignments: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Relabels arbitrary labels densely by first appearance.
    pub fn from_labels<T: Hash + Eq>(labels: &[T]) -> Self {
        let mut ids: HashMap<&T, usize> = HashMap::new();
        let assignments = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l).or_insert(next)
            })
            .collect();
        Partition {
            assignments,
            n_clusters: ids.len(),
        }
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterReport {
    pub seeds: Vec<u64>,
    pub ari: Vec<f64>,
    pub nmi: Vec<f64>,
    pub ari_mean: f64,
    pub ari_std: f64,
    pub nmi_mean: f64,
    pub nmi_std: f64,
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs k-means once per seed and scores each run against `labels`.
pub fn cluster_eval_run(
    points: ArrayView2<'_, f64>,
    labels: &Partition,
    k: usize,
    seeds: &[u64],
) -> Result<ClusterReport> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    if labels.len() != points.nrows() {
        return Err(Error::Length {
            expected: points.nrows(),
            found: labels.len(),
        });
    }
    let scores: Vec<(f64, f64)> = seeds
        .par_iter()
        .map(|&seed| {
            let fit = kmeans(points, k, seed)?;
            Ok((
                adjusted_rand_index(&fit.partition, labels)?,
                normalized_mutual_information(&fit.partition, labels)?,
            ))
        })
        .collect::<Result<_>>()?;
    let ari: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let nmi: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let (ari_mean, ari_std) = mean_std(&ari);
    let (nmi_mean, nmi_std) = mean_std(&nmi);
    Ok(ClusterReport {
        seeds: seeds.to_vec(),
        ari,
        nmi,
        ari_mean,
        ari_std,
        nmi_mean,
        nmi_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn partition_is_dense() {
        let p = Partition::from_labels(&["b", "a", "b", "c"]);
        assert_eq!(p.assignments(), &[0, 1, 0, 2]);
        assert_eq!(p.n_clusters(), 3);
    }

    #[test]
    fn single_seed_has_zero_std() {
        let pts = Array2::from_shape_fn((6, 1), |(i, _)| if i < 3 { 0.0 } else { 100.0 + i as f64 });
        let labels = Partition::from_labels(&[0, 0, 0, 1, 1, 1]);
        let r = cluster_eval_run(pts.view(), &labels, 2, &[3]).unwrap();
        assert_eq!(r.ari_std, 0.0);
        assert_eq!(r.nmi_std, 0.0);
        assert_eq!(r.ari, vec![1.0]);
    }

    #[test]
    fn rejects_empty_seeds() {
        let pts = Array2::zeros((2, 1));
        let labels = Partition::from_labels(&[0, 1]);
        assert!(matches!(cluster_eval_run(pts.view(), &labels, 1, &[]), Err(Error::Config(_))));
    }
}
