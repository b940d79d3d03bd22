//! Exact nearest-neighbour search over an embedding, plus mAP and Recall@k.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lora_style::retrieval::{knn_query, retrieval_eval, Metric, Query, RetrievalIndex, Scenario};

fn main() -> lora_style::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (artists, per_artist, dims) = (6, 10, 8);
    let centers: Vec<Vec<f64>> = (0..artists)
        .map(|_| (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let n = artists * per_artist;
    let coords = Array2::from_shape_fn((n, dims), |(i, j)| {
        centers[i / per_artist][j] + rng.random_range(-0.3..0.3)
    });
    let ids: Vec<String> = (0..n).map(|i| format!("lora{i:03}")).collect();
    let labels: Vec<String> = (0..n).map(|i| format!("artist{}", i / per_artist)).collect();
    let index = RetrievalIndex::new(coords.clone(), ids.clone(), labels.clone(), Metric::Euclidean)?;

    let hits = knn_query(&index, "probe", &centers[2], 5)?;
    for (rank, (id, dist)) in hits.hits.iter().enumerate() {
        println!("{}. {id} ({:.3})", rank + 1, dist);
    }

    // Every sample queries the rest of the database.
    let queries: Vec<Query> = (0..n)
        .map(|i| Query {
            id: ids[i].clone(),
            label: labels[i].clone(),
            coords: coords.row(i).to_vec(),
        })
        .collect();
    let report = retrieval_eval(&index, &queries, per_artist - 1, Scenario::OrigOrig)?;
    println!("mAP {:.3}, Recall@{} {:.3}", report.map, report.k, report.mean_recall);
    Ok(())
}
