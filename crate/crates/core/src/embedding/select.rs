use std::collections::BTreeSet;
use std::ops::RangeInclusive;

use serde::Serialize;

use super::EmbeddingMatrix;
use crate::cluster_eval::{cluster_eval_run, Partition, DEFAULT_SEEDS};
use crate::error::{Error, Result};
use crate::retrieval::{retrieval_eval, Metric, Query, RetrievalIndex, Scenario, DEFAULT_TOP_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcTask {
    /// Mean ARI of k-means over the evaluation samples.
    Cluster,
    /// mAP of evaluation queries against the reference database.
    Retrieval,
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    pub seeds: Vec<u64>,
    /// Cluster count; defaults to the number of distinct labels.
    pub n_clusters: Option<usize>,
    pub top_k: usize,
    pub metric: Metric,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            seeds: DEFAULT_SEEDS.to_vec(),
            n_clusters: None,
            top_k: DEFAULT_TOP_K,
            metric: Metric::Euclidean,
        }
    }
}

/// Labeled embeddings scored during the search.
#[derive(Debug, Clone, Copy)]
pub struct SelectionData<'a> {
    /// Validation samples: clustered for [`PcTask::Cluster`], used as queries
    /// for [`PcTask::Retrieval`].
    pub eval: &'a EmbeddingMatrix,
    pub eval_labels: &'a [String],
    /// Retrieval database. Without one, the evaluation set is searched
    /// leave-one-out.
    pub reference: Option<(&'a EmbeddingMatrix, &'a [String])>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcSelection {
    pub best: usize,
    pub best_score: f64,
    /// `(num_pcs, score)` for every candidate.
    pub curve: Vec<(usize, f64)>,
}

/// Grid search over the number of leading components. The smallest count
/// wins ties.
pub fn select_num_pcs(
    data: &SelectionData<'_>,
    task: PcTask,
    range: RangeInclusive<usize>,
    config: &SelectionConfig,
) -> Result<PcSelection> {
    if range.is_empty() || *range.start() == 0 {
        return Err(Error::Config(format!("invalid component range {range:?}")));
    }
    let width = data
        .reference
        .map_or(data.eval.num_pcs(), |(r, _)| r.num_pcs().min(data.eval.num_pcs()));
    if *range.end() > width {
        return Err(Error::Config(format!(
            "range end {} exceeds available components {width}",
            range.end()
        )));
    }
    if data.eval_labels.len() != data.eval.len() {
        return Err(Error::Length {
            expected: data.eval.len(),
            found: data.eval_labels.len(),
        });
    }

    let mut curve = Vec::new();
    for j in range {
        let score = match task {
            PcTask::Cluster => {
                let truth = Partition::from_labels(data.eval_labels);
                let k = config.n_clusters.unwrap_or_else(|| {
                    data.eval_labels.iter().collect::<BTreeSet<_>>().len()
                });
                let pts = data.eval.truncated(j)?;
                cluster_eval_run(pts.coords.view(), &truth, k, &config.seeds)?.ari_mean
            }
            PcTask::Retrieval => {
                let (db, db_labels) = data.reference.unwrap_or((data.eval, data.eval_labels));
                let db = db.truncated(j)?;
                let index = RetrievalIndex::new(
                    db.coords,
                    db.sample_ids,
                    db_labels.to_vec(),
                    config.metric,
                )?;
                let queries: Vec<Query> = data
                    .eval
                    .sample_ids
                    .iter()
                    .zip(data.eval_labels)
                    .enumerate()
                    .map(|(i, (id, label))| Query {
                        id: id.clone(),
                        label: label.clone(),
                        coords: data.eval.coords.row(i).iter().take(j).copied().collect(),
                    })
                    .collect();
                let ranked = index.len() - usize::from(data.reference.is_none());
                let k = config.top_k.min(ranked);
                retrieval_eval(&index, &queries, k, Scenario::OrigOrig)?.map
            }
        };
        curve.push((j, score));
    }
    let (best, best_score) = curve
        .iter()
        .copied()
        .fold((0, f64::NEG_INFINITY), |acc, (j, s)| if s > acc.1 { (j, s) } else { acc });
    Ok(PcSelection {
        best,
        best_score,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn single_candidate_range() {
        let coords = Array2::from_shape_fn((6, 3), |(i, j)| (i / 2) as f64 * 10.0 + j as f64);
        let emb = EmbeddingMatrix::new(coords, (0..6).map(|i| format!("s{i}")).collect()).unwrap();
        let labels: Vec<String> = (0..6).map(|i| format!("a{}", i / 2)).collect();
        let data = SelectionData {
            eval: &emb,
            eval_labels: &labels,
            reference: None,
        };
        let sel = select_num_pcs(&data, PcTask::Cluster, 2..=2, &SelectionConfig::default()).unwrap();
        assert_eq!(sel.best, 2);
        assert_eq!(sel.curve.len(), 1);
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(matches!(
            select_num_pcs(&data, PcTask::Cluster, empty, &SelectionConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
