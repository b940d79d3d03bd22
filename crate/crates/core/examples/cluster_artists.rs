//! Clusters projected training LoRAs and scores the partition against the
//! artist labels.

use lora_style::cluster_eval::{cluster_eval_run, Partition, DEFAULT_SEEDS};
use lora_style::dataset::{generate_population, Split, SynthSpec};
use lora_style::embedding::{fit_pca_up_to, project_all};
use lora_style::lora_io::WeightVector;

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 12,
        ambient_dim: 4_000,
        ..SynthSpec::default()
    };
    let pop = generate_population(&spec)?;
    let samples: Vec<(String, &WeightVector)> = pop
        .select(Split::Train, None)
        .map(|s| (s.entry.sample_id.clone(), &s.vector))
        .collect();
    let labels: Vec<&str> = pop.select(Split::Train, None).map(|s| s.entry.artist_id.as_str()).collect();
    let vectors: Vec<WeightVector> = samples.iter().map(|(_, v)| (*v).clone()).collect();
    let model = fit_pca_up_to(&vectors, 30)?;
    let emb = project_all(&model, &samples, model.num_pcs())?;
    let truth = Partition::from_labels(&labels);
    let report = cluster_eval_run(emb.coords.view(), &truth, truth.n_clusters(), &DEFAULT_SEEDS)?;
    println!(
        "{} LoRAs, k = {}: ARI {:.3} ± {:.3}, NMI {:.3} ± {:.3}",
        emb.len(),
        truth.n_clusters(),
        report.ari_mean,
        report.ari_std,
        report.nmi_mean,
        report.nmi_std
    );
    Ok(())
}
