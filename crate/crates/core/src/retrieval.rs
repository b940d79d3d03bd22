//! Exact nearest-neighbor retrieval and ranking metrics.
//!
//! Relevance is label equality: every database sample sharing the query's
//! label is relevant. Average precision is computed over the full database
//! ranking and normalized by `min(R, list length)`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default `k` for Recall@k.
pub const DEFAULT_TOP_K: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
        })
    }
}

/// Which side of a retrieval experiment uses original vs generated data:
/// database first, query second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    OrigOrig,
    OrigGen,
    GenOrig,
    GenGen,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::OrigOrig,
        Scenario::OrigGen,
        Scenario::GenOrig,
        Scenario::GenGen,
    ];
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orig-orig" => Ok(Scenario::OrigOrig),
            "orig-gen" => Ok(Scenario::OrigGen),
            "gen-orig" => Ok(Scenario::GenOrig),
            "gen-gen" => Ok(Scenario::GenGen),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::OrigOrig => "orig-orig",
            Scenario::OrigGen => "orig-gen",
            Scenario::GenOrig => "gen-orig",
            Scenario::GenGen => "gen-gen",
        })
    }
}

/// Immutable database for exact scans.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    coords: Array2<f64>,
    sample_ids: Vec<String>,
    labels: Vec<String>,
    metric: Metric,
    norms: Vec<f64>,
    /// Position of each sample in ascending id order, for tie-breaking.
    id_rank: Vec<usize>,
}

impl RetrievalIndex {
    pub fn new(
        coords: Array2<f64>,
        sample_ids: Vec<String>,
        labels: Vec<String>,
        metric: Metric,
    ) -> Result<Self> {
        let n = coords.nrows();
        for len in [sample_ids.len(), labels.len()] {
            if len != n {
                return Err(Error::Length {
                    expected: n,
                    found: len,
                });
            }
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("index contains non-finite coordinates".into()));
        }
        let norms = coords.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let mut by_id: Vec<usize> = (0..n).collect();
        by_id.sort_by(|&a, &b| sample_ids[a].cmp(&sample_ids[b]));
        let mut id_rank = vec![0; n];
        for (rank, &i) in by_id.iter().enumerate() {
            id_rank[i] = rank;
        }
        Ok(RetrievalIndex {
            coords,
            sample_ids,
            labels,
            metric,
            norms,
            id_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn num_pcs(&self) -> usize {
        self.coords.ncols()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn distance(&self, i: usize, query: ArrayView1<'_, f64>, query_norm: f64) -> f64 {
        let row = self.coords.row(i);
        match self.metric {
            Metric::Euclidean => row
                .iter()
                .zip(query)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt(),
            Metric::Cosine => {
                if self.norms[i] == 0.0 || query_norm == 0.0 {
                    f64::INFINITY
                } else {
                    1.0 - row.dot(&query) / (self.norms[i] * query_norm)
                }
            }
        }
    }
}

/// Ranked neighbors of one query, nearest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub query_id: String,
    /// `(sample_id, distance)`; distances non-decreasing, ties by ascending id.
    pub hits: Vec<(String, f64)>,
}

impl RankedResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }
}

/// Exact scan returning the `top_k` nearest database samples.
///
/// Cosine distance is `1 − cos`; zero-norm vectors get distance `+∞` and so
/// rank last.
pub fn knn_query(
    index: &RetrievalIndex,
    query_id: &str,
    query: &[f64],
    top_k: usize,
) -> Result<RankedResult> {
    if query.len() != index.num_pcs() {
        return Err(Error::Length {
            expected: index.num_pcs(),
            found: query.len(),
        });
    }
    if top_k > index.len() {
        return Err(Error::Config(format!(
            "top_k {top_k} exceeds database size {}",
            index.len()
        )));
    }
    let order = rank_all(index, query, None);
    Ok(RankedResult {
        query_id: query_id.to_string(),
        hits: order
            .into_iter()
            .take(top_k)
            .map(|(i, d)| (index.sample_ids[i].clone(), d))
            .collect(),
    })
}

fn rank_all(index: &RetrievalIndex, query: &[f64], skip_id: Option<&str>) -> Vec<(usize, f64)> {
    let q = ArrayView1::from(query);
    let qn = q.dot(&q).sqrt();
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .filter(|&i| skip_id != Some(index.sample_ids[i].as_str()))
        .map(|i| (i, index.distance(i, q, qn)))
        .collect();
    scored.sort_unstable_by(|a, b| match a.1.total_cmp(&b.1) {
        Ordering::Equal => index.id_rank[a.0].cmp(&index.id_rank[b.0]),
        other => other,
    });
    scored
}

fn check_relevant(relevant: &HashSet<String>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Config("relevant set is empty".into()));
    }
    Ok(())
}

/// `(1/R) Σ_{hits at rank r} hits_so_far / r` with `R = min(|relevant|, len)`.
pub fn average_precision(result: &RankedResult, relevant: &HashSet<String>) -> Result<f64> {
    check_relevant(relevant)?;
    let denom = relevant.len().min(result.len());
    if denom == 0 {
        return Ok(0.0);
    }
    // Precision terms are accumulated in double-double so that the result is
    // the correctly rounded value for any realistic list length.
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    let mut hits = 0usize;
    for (rank, (id, _)) in result.hits.iter().enumerate() {
        if relevant.contains(id) {
            hits += 1;
            let (h, r) = (hits as f64, (rank + 1) as f64);
            let term = h / r;
            let term_err = (-term).mul_add(r, h) / r;
            let s = hi + term;
            let bb = s - hi;
            let sum_err = (hi - (s - bb)) + (term - bb);
            hi = s;
            lo += sum_err + term_err;
        }
    }
    let r = denom as f64;
    let q = hi / r;
    let rem = (-q).mul_add(r, hi) + lo;
    Ok(q + rem / r)
}

/// `|relevant ∩ top-k| / |relevant|`.
pub fn recall_at_k(result: &RankedResult, relevant: &HashSet<String>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    if k == 0 || k > result.len() {
        return Err(Error::Config(format!(
            "recall cutoff {k} outside ranked list of length {}",
            result.len()
        )));
    }
    let found = result.hits[..k]
        .iter()
        .filter(|(id, _)| relevant.contains(id))
        .count();
    Ok(found as f64 / relevant.len() as f64)
}

/// A labeled query point.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub label: String,
    pub coords: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryScore {
    pub query_id: String,
    pub label: String,
    pub average_precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalReport {
    pub scenario: Scenario,
    pub metric: Metric,
    pub k: usize,
    pub per_query: Vec<QueryScore>,
    pub map: f64,
    pub mean_recall: f64,
}

/// Scores every query against the full database ranking.
///
/// A database entry with the same id as the query is skipped, so a database
/// can be evaluated leave-one-out against itself.
pub fn retrieval_eval(
    index: &RetrievalIndex,
    queries: &[Query],
    k: usize,
    scenario: Scenario,
) -> Result<RetrievalReport> {
    if queries.is_empty() {
        return Err(Error::Config("no queries".into()));
    }
    let mut by_label: HashMap<&str, HashSet<String>> = HashMap::new();
    for (id, label) in index.sample_ids.iter().zip(&index.labels) {
        by_label.entry(label).or_default().insert(id.clone());
    }
    let per_query: Vec<QueryScore> = queries
        .par_iter()
        .map(|q| {
            if q.coords.len() != index.num_pcs() {
                return Err(Error::Length {
                    expected: index.num_pcs(),
                    found: q.coords.len(),
                });
            }
            let mut relevant = by_label
                .get(q.label.as_str())
                .cloned()
                .ok_or_else(|| Error::Coverage(format!("query label `{}` not in index", q.label)))?;
            relevant.remove(&q.id);
            if relevant.is_empty() {
                return Err(Error::Coverage(format!(
                    "query `{}` has no other sample labeled `{}` in the index",
                    q.id, q.label
                )));
            }
            let ranked = RankedResult {
                query_id: q.id.clone(),
                hits: rank_all(index, &q.coords, Some(&q.id))
                    .into_iter()
                    .map(|(i, d)| (index.sample_ids[i].clone(), d))
                    .collect(),
            };
            Ok(QueryScore {
                query_id: q.id.clone(),
                label: q.label.clone(),
                average_precision: average_precision(&ranked, &relevant)?,
                recall: recall_at_k(&ranked, &relevant, k)?,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_query.len() as f64;
    let map = per_query.iter().map(|s| s.average_precision).sum::<f64>() / n;
    let mean_recall = per_query.iter().map(|s| s.recall).sum::<f64>() / n;
    Ok(RetrievalReport {
        scenario,
        metric: index.metric,
        k,
        per_query,
        map,
        mean_recall,
    })
}

/// Elementwise mean of per-image feature vectors.
pub fn aggregate_features(features: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = features
        .first()
        .ok_or_else(|| Error::Size("no feature vectors to aggregate".into()))?;
    let mut out = vec![0.0; first.len()];
    for f in features {
        if f.len() != out.len() {
            return Err(Error::Length {
                expected: out.len(),
                found: f.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(f) {
            *o += x;
        }
    }
    let m = features.len() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    Ok(out)
}
