//! Writes a synthetic LoRA dataset to disk and re-draws its train and
//! calibration split.

use lora_style::dataset::{generate_synthetic, load_manifest, split_dataset, Split, SynthSpec};

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 4,
        ambient_dim: 2_000,
        ..SynthSpec::default()
    };
    let out = std::env::temp_dir().join("lora-style-synth");
    generate_synthetic(&spec, &out)?;
    let manifest = load_manifest(out.join("manifest.csv"))?;
    println!("{} LoRAs under {}", manifest.entries.len(), out.display());
    for (artist, counts) in manifest.counts() {
        println!("{artist}: {counts:?}");
    }
    let resplit = split_dataset(&manifest, 21, 3, 42)?;
    resplit.check_split_counts(21, 3)?;
    println!(
        "after re-split: {} train, {} calibration",
        resplit.select(Split::Train, None).count(),
        resplit.select(Split::Calibration, None).count()
    );
    Ok(())
}
