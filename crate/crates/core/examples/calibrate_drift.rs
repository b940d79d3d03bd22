//! Undoes a known affine drift on diff-config LoRAs and shows the retrieval
//! gain.

use lora_style::calibration::{apply_calibration, compute_centroid_pairs, fit_calibration, CalibrationMode};
use lora_style::dataset::{generate_population, Split, SynthSpec, TrainConfig};
use lora_style::embedding::fit_pca_up_to;
use lora_style::lora_io::WeightVector;
use lora_style::retrieval::{retrieval_eval, Metric, Query, RetrievalIndex, Scenario};

fn main() -> lora_style::Result<()> {
    let spec = SynthSpec {
        n_artists: 10,
        ambient_dim: 4_000,
        signal_dim: 12,
        ..SynthSpec::default()
    };
    let pop = generate_population(&spec)?;
    let train: Vec<(&str, &WeightVector)> = pop
        .select(Split::Train, None)
        .map(|s| (s.entry.artist_id.as_str(), &s.vector))
        .collect();
    let cali: Vec<(&str, &WeightVector)> = pop
        .select(Split::Calibration, Some(TrainConfig::Diff))
        .map(|s| (s.entry.artist_id.as_str(), &s.vector))
        .collect();
    let vectors: Vec<WeightVector> = train.iter().map(|(_, v)| (*v).clone()).collect();
    let model = fit_pca_up_to(&vectors, 20)?;
    let map = fit_calibration(&compute_centroid_pairs(&model, &train, &cali)?, CalibrationMode::Affine)?;
    println!("injected drift: scale {}, offset {}", spec.diff_drift.scale, spec.diff_drift.offset);
    for k in 0..3 {
        println!("PC{}: s = {:.3}, t = {:.3}", k + 1, map.s[k], map.t[k]);
    }

    let k = model.num_pcs();
    let mut coords = ndarray::Array2::zeros((train.len(), k));
    for (i, (_, v)) in train.iter().enumerate() {
        coords.row_mut(i).assign(&ndarray::Array1::from(model.project(v, k)?));
    }
    let ids = pop.select(Split::Train, None).map(|s| s.entry.sample_id.clone()).collect();
    let labels = train.iter().map(|(a, _)| a.to_string()).collect();
    let index = RetrievalIndex::new(coords, ids, labels, Metric::Euclidean)?;
    for calibrated in [false, true] {
        let queries = pop
            .select(Split::Test, Some(TrainConfig::Diff))
            .map(|s| {
                let raw = model.project(&s.vector, k)?;
                let coords = if calibrated { apply_calibration(&map, &raw)? } else { raw };
                Ok(Query {
                    id: s.entry.sample_id.clone(),
                    label: s.entry.artist_id.clone(),
                    coords,
                })
            })
            .collect::<lora_style::Result<Vec<_>>>()?;
        let report = retrieval_eval(&index, &queries, 24, Scenario::OrigOrig)?;
        println!("calibrated = {calibrated}: mAP {:.3}, Recall@24 {:.3}", report.map, report.mean_recall);
    }
    Ok(())
}
