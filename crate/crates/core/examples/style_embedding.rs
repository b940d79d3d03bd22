//! Fits the PCA style embedding on synthetic training LoRAs.

use lora_style::dataset::{generate_population, Split, SynthSpec};
use lora_style::embedding::fit_pca_up_to;
use lora_style::lora_io::WeightVector;

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 8,
        ambient_dim: 4_000,
        signal_dim: 10,
        ..SynthSpec::default()
    };
    let population = generate_population(&spec)?;
    let train: Vec<WeightVector> = population
        .select(Split::Train, None)
        .map(|s| s.vector.clone())
        .collect();
    let model = fit_pca_up_to(&train, 20)?;
    println!("{} training LoRAs of d = {}, {} components", model.n_train, model.dim(), model.num_pcs());
    let mut cumulative = 0.0;
    for (i, f) in model.explained_variance_report().iter().enumerate().take(10) {
        cumulative += f;
        println!("PC{:<2} {:.4}  cumulative {:.4}", i + 1, f, cumulative);
    }
    let test = population.select(Split::Test, None).next().expect("test sample");
    let coords = model.project(&test.vector, 3)?;
    println!("{} -> {:?}", test.entry.sample_id, coords);
    Ok(())
}
