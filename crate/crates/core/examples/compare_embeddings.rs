//! Similarity between two embeddings of the same LoRAs: the full network
//! against its feed-forward layers.

use lora_style::dataset::{generate_population, model_from_vector, Split, SynthSpec};
use lora_style::embedding::{fit_pca_up_to, project_all, similarity_curve, EmbeddingMatrix};
use lora_style::lora_io::{vectorize, SubnetworkSelector, WeightVector};

fn embed(vectors: &[WeightVector], ids: &[String], k: usize) -> lora_style::Result<EmbeddingMatrix> {
    let model = fit_pca_up_to(vectors, k)?;
    let samples: Vec<(String, &WeightVector)> = ids.iter().cloned().zip(vectors).collect();
    project_all(&model, &samples, k)
}

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 10,
        ambient_dim: 4_000,
        signal_dim: 12,
        ..SynthSpec::default()
    };
    let pop = generate_population(&spec)?;
    let train: Vec<_> = pop.select(Split::Train, None).collect();
    let ids: Vec<String> = train.iter().map(|s| s.entry.sample_id.clone()).collect();
    let full: Vec<WeightVector> = train.iter().map(|s| s.vector.clone()).collect();
    let ff = train
        .iter()
        .map(|s| {
            let model = model_from_vector(&pop.layout, spec.rank, &s.vector.values)?;
            vectorize(&model, SubnetworkSelector::FeedForward)
        })
        .collect::<lora_style::Result<Vec<_>>>()?;
    let curve = similarity_curve(&embed(&full, &ids, 10)?, &embed(&ff, &ids, 10)?, 10)?;
    for (j, s) in curve.iter().enumerate() {
        println!("first {:>2} PCs: mean cosine {:.3}", j + 1, s);
    }
    Ok(())
}
