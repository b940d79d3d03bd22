//! Picks the number of components by scoring clustering on validation
//! LoRAs.

use lora_style::dataset::{generate_population, Split, SynthSpec};
use lora_style::embedding::{
    fit_pca_up_to, project_all, select_num_pcs, PcTask, SelectionConfig, SelectionData,
};
use lora_style::lora_io::WeightVector;

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 12,
        ambient_dim: 4_000,
        signal_dim: 5,
        intra_cluster_std: 0.04,
        ..SynthSpec::default()
    };
    let pop = generate_population(&spec)?;
    let train: Vec<WeightVector> = pop.select(Split::Train, None).map(|s| s.vector.clone()).collect();
    let model = fit_pca_up_to(&train, 15)?;
    let val: Vec<(String, &WeightVector)> = pop
        .select(Split::Validation, None)
        .map(|s| (s.entry.sample_id.clone(), &s.vector))
        .collect();
    let labels: Vec<String> = pop.select(Split::Validation, None).map(|s| s.entry.artist_id.clone()).collect();
    let emb = project_all(&model, &val, 15)?;
    let data = SelectionData {
        eval: &emb,
        eval_labels: &labels,
        reference: None,
    };
    let selection = select_num_pcs(&data, PcTask::Cluster, 1..=15, &SelectionConfig::default())?;
    for (j, score) in &selection.curve {
        println!("{j:>2} PCs: mean ARI {score:.3}");
    }
    println!("best: {} PCs (signal lives in {} dimensions)", selection.best, spec.signal_dim);
    Ok(())
}
