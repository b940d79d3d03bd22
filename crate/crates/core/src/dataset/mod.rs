//! Dataset manifests, train/calibration splitting and the synthetic
//! population generator.

mod manifest;
mod synth;

pub use manifest::{load_manifest, split_dataset, DatasetManifest, ManifestEntry, Split, TrainConfig};
pub use synth::{
    generate_population, generate_synthetic, model_from_vector, synthetic_layout,
    write_population, Drift, LayerShape, Population, SplitCounts, SynthSample, SynthSpec,
};
