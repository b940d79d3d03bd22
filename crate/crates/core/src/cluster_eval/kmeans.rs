use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Partition;
use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 300;

/// Seeding restarts per call.
pub const DEFAULT_RESTARTS: usize = 50;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub partition: Partition,
    /// `k × j`.
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-means++ seeding followed by Lloyd iterations, restarted
/// [`DEFAULT_RESTARTS`] times; the run with the lowest inertia wins (the
/// earliest on ties).
///
/// Each run stops at an assignment fixpoint or after [`MAX_ITERATIONS`]
/// updates. A cluster left empty by an update is reseeded at the point
/// farthest from its own centroid. Output depends only on
/// `(points, k, seed)`.
pub fn kmeans(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KMeansResult> {
    kmeans_restarts(points, k, seed, DEFAULT_RESTARTS)
}

/// [`kmeans`] with an explicit number of restarts (at least one).
pub fn kmeans_restarts(
    points: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::Size(format!("k-means with k = {k} on {n} points")));
    }
    if restarts == 0 {
        return Err(Error::Config("k-means needs at least one restart".into()));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("k-means input contains non-finite values".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts ≥ 1"))
}

fn lloyd(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let n = points.nrows();
    let mut centroids = plus_plus_init(points, k, rng);

    let mut assign = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    assign_points(points, &centroids, &mut assign, &mut dists);
    let mut inertia: f64 = dists.iter().sum();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        update_centroids(points, &mut centroids, &mut assign, &dists);
        let changed = assign_points(points, &centroids, &mut assign, &mut dists);
        let next: f64 = dists.iter().sum();
        debug_assert!(
            next <= inertia * (1.0 + 1e-9) + 1e-12,
            "inertia increased from {inertia} to {next}"
        );
        inertia = next;
        if !changed {
            break;
        }
    }

    KMeansResult {
        partition: Partition::from_labels(&assign),
        centroids,
        inertia,
        iterations,
    }
}

/// Draws an index with probability proportional to `weights`.
fn draw(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return i;
        }
    }
    // roundoff can leave target ≥ acc; fall back to the last positive weight
    weights.iter().rposition(|&w| w > 0.0).expect("total > 0")
}

/// Greedy k-means++: each step draws `2 + ⌊ln k⌋` candidates by squared
/// distance and keeps the one that lowers the potential most.
fn plus_plus_init(points: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            // all remaining points coincide with chosen centers
            let next = (0..n).find(|i| !chosen.contains(i)).expect("n ≥ k");
            chosen.push(next);
            continue;
        }
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = draw(&d2, total, rng);
            let updated: Vec<f64> = d2
                .iter()
                .enumerate()
                .map(|(i, &d)| d.min(sq_dist(points.row(i), points.row(cand))))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| potential < b.1) {
                best = Some((cand, potential, updated));
            }
        }
        let (next, _, updated) = best.expect("trials ≥ 2");
        chosen.push(next);
        d2 = updated;
    }
    let mut centroids = Array2::zeros((k, points.ncols()));
    for (c, &i) in chosen.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    centroids
}

/// Nearest-centroid assignment, lowest index on ties. Returns whether any
/// assignment changed.
fn assign_points(
    points: ArrayView2<'_, f64>,
    centroids: &Array2<f64>,
    assign: &mut [usize],
    dists: &mut [f64],
) -> bool {
    let mut changed = false;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = (0, f64::INFINITY);
        for (c, centroid) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best.1 {
                best = (c, d);
            }
        }
        if assign[i] != best.0 {
            assign[i] = best.0;
            changed = true;
        }
        dists[i] = best.1;
    }
    changed
}

fn update_centroids(
    points: ArrayView2<'_, f64>,
    centroids: &mut Array2<f64>,
    assign: &mut [usize],
    dists: &[f64],
) {
    let k = centroids.nrows();
    let mut counts = vec![0usize; k];
    let mut sums = Array2::<f64>::zeros(centroids.dim());
    for (p, &c) in points.rows().into_iter().zip(assign.iter()) {
        counts[c] += 1;
        let mut row = sums.row_mut(c);
        row += &p;
    }
    let mut taken = vec![false; points.nrows()];
    for c in 0..k {
        if counts[c] > 0 {
            let mut row = centroids.row_mut(c);
            row.assign(&sums.row(c));
            row.mapv_inplace(|x| x / counts[c] as f64);
            continue;
        }
        // Reseed at the worst-fit point that is not the last member of its
        // own cluster.
        let candidate = (0..points.nrows())
            .filter(|&i| !taken[i] && counts[assign[i]] > 1)
            .max_by(|&i, &j| dists[i].total_cmp(&dists[j]).then(j.cmp(&i)));
        if let Some(i) = candidate {
            taken[i] = true;
            counts[assign[i]] -= 1;
            assign[i] = c;
            counts[c] = 1;
            centroids.row_mut(c).assign(&points.row(i));
        }
    }
}
