//! Synthetic LoRA populations with known artist structure and drift.
//!
//! Artist centers live in a random `signal_dim`-dimensional subspace of
//! `ℝ^d`. Each sample is its artist's center plus isotropic noise, rounded
//! to `f32`, reshaped into a fixed kohya-style layer layout and written as a
//! safetensors file. Unseen samples are then pushed through a per-component
//! affine drift `π' = (π − τ)/σ` measured in the PCA basis of the training
//! split, which is exactly the family a calibration map can undo.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split, TrainConfig};
use crate::embedding::fit_pca_up_to;
use crate::error::{Error, Result};
use crate::lora_io::{
    vectorize, Dtype, LoraLayer, LoraMetadata, LoraModel, SubnetworkSelector,
    WeightVector,
};

/// Per-component affine drift `π' = (π − offset)/scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub scale: f64,
    pub offset: f64,
}

impl Drift {
    pub const IDENTITY: Drift = Drift {
        scale: 1.0,
        offset: 0.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Drift::IDENTITY
    }
}

/// Samples per artist in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub calibration_same: usize,
    pub calibration_diff: usize,
    pub validation: usize,
    pub test_same: usize,
    pub test_diff: usize,
}

impl SplitCounts {
    fn groups(&self) -> [(Split, TrainConfig, usize); 6] {
        [
            (Split::Train, TrainConfig::Same, self.train),
            (Split::Calibration, TrainConfig::Same, self.calibration_same),
            (Split::Calibration, TrainConfig::Diff, self.calibration_diff),
            (Split::Validation, TrainConfig::Same, self.validation),
            (Split::Test, TrainConfig::Same, self.test_same),
            (Split::Test, TrainConfig::Diff, self.test_diff),
        ]
    }

    pub fn total(&self) -> usize {
        self.groups().iter().map(|g| g.2).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_artists: usize,
    pub n_genres: usize,
    pub counts: SplitCounts,
    /// Length of every weight vector.
    pub ambient_dim: usize,
    pub signal_dim: usize,
    /// LoRA rank of the generated layers; must divide `ambient_dim`.
    pub rank: usize,
    /// Standard deviation of artist-center coordinates in the signal subspace.
    /// The default puts weight entries around 1e-2, as in trained LoRAs.
    pub inter_cluster_spread: f64,
    /// Per-coordinate standard deviation of sample noise.
    pub intra_cluster_std: f64,
    /// Fraction of an artist's image pool shared by two of its LoRAs on
    /// average. Zero draws independent noise per sample.
    pub overlap_fraction: f64,
    pub images_per_lora: usize,
    /// Drift of unseen same-config samples (calibration, validation, test).
    pub same_drift: Drift,
    /// Drift of all diff-config samples.
    pub diff_drift: Drift,
    /// Number of leading training components the drift acts on.
    pub drift_pcs: usize,
    /// Isotropic noise added to drifted samples on top of the affine drift.
    pub residual_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_artists: 20,
            n_genres: 5,
            counts: SplitCounts {
                train: 24,
                calibration_same: 3,
                calibration_diff: 3,
                validation: 4,
                test_same: 5,
                test_diff: 5,
            },
            ambient_dim: 10_000,
            signal_dim: 30,
            rank: 4,
            inter_cluster_spread: 0.1,
            intra_cluster_std: 0.01,
            overlap_fraction: 0.0,
            images_per_lora: 10,
            same_drift: Drift {
                scale: 1.1,
                offset: 0.0,
            },
            diff_drift: Drift {
                scale: 1.25,
                offset: 0.3,
            },
            drift_pcs: 100,
            residual_std: 0.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_artists < 2 {
            return bad(format!("need at least 2 artists, got {}", self.n_artists));
        }
        if self.n_genres == 0 {
            return bad("n_genres must be positive".into());
        }
        if self.counts.train == 0 {
            return bad("every artist needs at least one training sample".into());
        }
        if self.signal_dim == 0 || self.signal_dim > self.ambient_dim {
            return bad(format!(
                "signal_dim {} must be in 1..={}",
                self.signal_dim, self.ambient_dim
            ));
        }
        if self.rank == 0 || self.ambient_dim % self.rank != 0 {
            return bad(format!(
                "ambient_dim {} is not a positive multiple of rank {}",
                self.ambient_dim, self.rank
            ));
        }
        if !(self.inter_cluster_spread > 0.0 && self.inter_cluster_spread.is_finite()) {
            return bad("inter_cluster_spread must be positive".into());
        }
        for (name, v) in [
            ("intra_cluster_std", self.intra_cluster_std),
            ("residual_std", self.residual_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.overlap_fraction) {
            return bad("overlap_fraction must lie in [0, 1]".into());
        }
        if self.overlap_fraction > 0.0 && self.images_per_lora == 0 {
            return bad("images_per_lora must be positive when images overlap".into());
        }
        for d in [self.same_drift, self.diff_drift] {
            if !(d.scale.is_finite() && d.scale != 0.0 && d.offset.is_finite()) {
                return bad(format!("invalid drift {d:?}"));
            }
        }
        if self.drift_pcs == 0 {
            return bad("drift_pcs must be positive".into());
        }
        synthetic_layout(self.ambient_dim, self.rank).map(|_| ())
    }
}

/// Shape of one generated layer: `A` is `rank × n`, `B` is `m × rank`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub n: usize,
    pub m: usize,
}

const BLOCK: &str = "lora_unet_down_blocks_0_attentions_0";
const TRANSFORMER: &str = "lora_unet_down_blocks_0_attentions_0_transformer_blocks_0";

/// Kohya-style layer layout with `Σ rank·(n + m) = d`, sorted by name.
///
/// Roughly 47% of the parameters go to feed-forward layers, 26% each to
/// self- and cross-attention and the remainder to a projection layer.
pub fn synthetic_layout(d: usize, rank: usize) -> Result<Vec<LayerShape>> {
    if rank == 0 || d % rank != 0 {
        return Err(Error::Config(format!("{d} is not a positive multiple of rank {rank}")));
    }
    let units = d / rank;
    let min_layer = 2 * rank;
    if units < min_layer {
        return Err(Error::Config(format!(
            "dimension {d} too small for rank {rank}"
        )));
    }
    let frac = |f: f64| (f * units as f64).round() as usize;
    let mut budgets = [frac(0.26), frac(0.26), 0, 0];
    budgets[2] = units.saturating_sub(budgets[0] + budgets[1] + frac(0.01).max(min_layer));
    budgets[3] = units - budgets[0] - budgets[1] - budgets[2];
    let names: [[String; 2]; 4] = [
        [format!("{TRANSFORMER}_attn1_to_out_0"), format!("{TRANSFORMER}_attn1_to_q")],
        [format!("{TRANSFORMER}_attn2_to_k"), format!("{TRANSFORMER}_attn2_to_v")],
        [format!("{TRANSFORMER}_ff_net_0_proj"), format!("{TRANSFORMER}_ff_net_2")],
        [format!("{BLOCK}_proj_in"), format!("{BLOCK}_proj_out")],
    ];
    // Small budgets fold into the feed-forward group.
    for g in [0, 1, 3] {
        if budgets[g] < min_layer {
            budgets[2] += budgets[g];
            budgets[g] = 0;
        }
    }
    let mut layers = Vec::new();
    for (budget, names) in budgets.iter().zip(names) {
        if *budget == 0 {
            continue;
        }
        let parts = if *budget >= 2 * min_layer {
            vec![budget / 2, budget - budget / 2]
        } else {
            vec![*budget]
        };
        for (u, name) in parts.into_iter().zip(names) {
            let n = u / 2;
            layers.push(LayerShape {
                name,
                n,
                m: u - n,
            });
        }
    }
    layers.sort_by(|a, b| a.name.as_bytes().cmp(b.name.as_bytes()));
    Ok(layers)
}

/// Reshapes a flat vector into a model with the given layout. The inverse
/// of [`vectorize`] with the full selector.
pub fn model_from_vector(layout: &[LayerShape], rank: usize, values: &[f64]) -> Result<LoraModel> {
    let d: usize = layout.iter().map(|l| rank * (l.n + l.m)).sum();
    if values.len() != d {
        return Err(Error::Length {
            expected: d,
            found: values.len(),
        });
    }
    let mut at = 0;
    let mut take = |len: usize| {
        let s = &values[at..at + len];
        at += len;
        s.to_vec()
    };
    let layers = layout
        .iter()
        .map(|l| {
            let a = Array2::from_shape_vec((rank, l.n), take(rank * l.n))
                .map_err(|e| Error::Shape {
                    layer: l.name.clone(),
                    detail: e.to_string(),
                })?;
            let b = Array2::from_shape_vec((l.m, rank), take(l.m * rank))
                .map_err(|e| Error::Shape {
                    layer: l.name.clone(),
                    detail: e.to_string(),
                })?;
            LoraLayer::new(l.name.clone(), a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    LoraModel::new(
        layers,
        LoraMetadata {
            alpha: Some(rank as f64),
            declared_rank: Some(rank),
            ..LoraMetadata::default()
        },
    )
}

/// One generated LoRA before it is written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub entry: ManifestEntry,
    pub vector: WeightVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub layout: Vec<LayerShape>,
    pub samples: Vec<SynthSample>,
    /// Artist centers, one row per artist.
    pub centers: Array2<f64>,
}

impl Population {
    pub fn select(
        &self,
        split: Split,
        config: Option<TrainConfig>,
    ) -> impl Iterator<Item = &SynthSample> {
        self.samples.iter().filter(move |s| {
            s.entry.split == split && config.is_none_or(|c| s.entry.config == c)
        })
    }
}

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Random orthonormal `k × d` basis by modified Gram-Schmidt.
fn orthonormal_basis(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Array2<f64> {
    let mut basis = Array2::<f64>::zeros((k, d));
    for i in 0..k {
        let mut v = ndarray::Array1::from(gaussian(rng, d, 1.0));
        for j in 0..i {
            let q = basis.row(j);
            let p = q.dot(&v);
            v.scaled_add(-p, &q);
        }
        let norm = v.dot(&v).sqrt();
        basis.row_mut(i).assign(&(v / norm));
    }
    basis
}

/// Builds the population in memory. Deterministic in `spec`.
pub fn generate_population(spec: &SynthSpec) -> Result<Population> {
    spec.validate()?;
    let layout = synthetic_layout(spec.ambient_dim, spec.rank)?;
    let layout_hash = vectorize(
        &model_from_vector(&layout, spec.rank, &vec![0.0; spec.ambient_dim])?,
        SubnetworkSelector::Full,
    )?
    .layout_hash;
    let d = spec.ambient_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = orthonormal_basis(&mut rng, spec.signal_dim, d);
    let z = Array2::from_shape_vec(
        (spec.n_artists, spec.signal_dim),
        gaussian(&mut rng, spec.n_artists * spec.signal_dim, spec.inter_cluster_spread),
    )
    .map_err(|e| Error::Numeric(e.to_string()))?;
    let centers = z.dot(&basis);

    let per_artist = spec.counts.total();
    let pool_size = if spec.overlap_fraction > 0.0 {
        ((spec.images_per_lora as f64 / spec.overlap_fraction).round() as usize)
            .max(spec.images_per_lora)
    } else {
        0
    };

    let mut samples = Vec::with_capacity(spec.n_artists * per_artist);
    for a in 0..spec.n_artists {
        let artist_id = format!("artist{a:02}");
        let genre = format!("genre{}", a % spec.n_genres);
        let pool: Vec<Vec<f64>> = (0..pool_size)
            .map(|_| gaussian(&mut rng, d, spec.intra_cluster_std))
            .collect();
        for (split, config, count) in spec.counts.groups() {
            for i in 0..count {
                let noise = if pool_size > 0 {
                    let picks = sample_indices(&mut rng, pool_size, spec.images_per_lora);
                    let mut acc = vec![0.0; d];
                    for p in picks.iter() {
                        for (x, y) in acc.iter_mut().zip(&pool[p]) {
                            *x += y;
                        }
                    }
                    let norm = (spec.images_per_lora as f64).sqrt();
                    acc.iter_mut().for_each(|x| *x /= norm);
                    acc
                } else {
                    gaussian(&mut rng, d, spec.intra_cluster_std)
                };
                let mut values: Vec<f64> = centers
                    .row(a)
                    .iter()
                    .zip(&noise)
                    .map(|(c, e)| c + e)
                    .collect();
                round_f32(&mut values);
                let sample_id = format!("{artist_id}-{split}-{config}-{i:02}");
                let path = PathBuf::from("loras")
                    .join(&artist_id)
                    .join(format!("{sample_id}.safetensors"));
                samples.push(SynthSample {
                    entry: ManifestEntry {
                        sample_id,
                        artist_id: artist_id.clone(),
                        genre: genre.clone(),
                        split,
                        config,
                        path,
                    },
                    vector: WeightVector::new(values, layout_hash.clone()),
                });
            }
        }
    }

    apply_drift(spec, &mut samples, &mut rng)?;
    Ok(Population {
        layout,
        samples,
        centers,
    })
}

fn drift_for(spec: &SynthSpec, entry: &ManifestEntry) -> Option<Drift> {
    let drift = match (entry.split, entry.config) {
        (Split::Train, _) => return None,
        (_, TrainConfig::Same) => spec.same_drift,
        (_, TrainConfig::Diff) => spec.diff_drift,
    };
    Some(drift)
}

fn apply_drift(spec: &SynthSpec, samples: &mut [SynthSample], rng: &mut ChaCha8Rng) -> Result<()> {
    let needs_pca = samples
        .iter()
        .any(|s| drift_for(spec, &s.entry).is_some_and(|d| !d.is_identity()));
    let model = if needs_pca {
        let train: Vec<WeightVector> = samples
            .iter()
            .filter(|s| s.entry.split == Split::Train)
            .map(|s| s.vector.clone())
            .collect();
        Some(fit_pca_up_to(&train, spec.drift_pcs)?)
    } else {
        None
    };
    for s in samples.iter_mut() {
        let Some(drift) = drift_for(spec, &s.entry) else {
            continue;
        };
        if let (Some(model), false) = (&model, drift.is_identity()) {
            let k = model.num_pcs();
            let coords = model.project_values(&s.vector.values, k)?;
            for (axis, pi) in coords.iter().enumerate() {
                let delta = (pi - drift.offset) / drift.scale - pi;
                let q: ArrayView1<f64> = model.components.row(axis);
                for (x, qi) in s.vector.values.iter_mut().zip(q) {
                    *x += delta * qi;
                }
            }
        }
        if spec.residual_std > 0.0 {
            for x in s.vector.values.iter_mut() {
                *x += spec.residual_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        round_f32(&mut s.vector.values);
    }
    Ok(())
}

/// Generates the population and writes `loras/`, `manifest.csv` and
/// `spec.json` under `out`. Every file is re-parsed after writing.
pub fn generate_synthetic(spec: &SynthSpec, out: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let population = generate_population(spec)?;
    write_population(spec, &population, out)
}

pub fn write_population(
    spec: &SynthSpec,
    population: &Population,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let mut dirs: BTreeMap<PathBuf, ()> = BTreeMap::new();
    for s in &population.samples {
        if let Some(parent) = s.entry.path.parent() {
            dirs.insert(out.join(parent), ());
        }
    }
    for dir in dirs.keys() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for s in &population.samples {
        let model = model_from_vector(&population.layout, spec.rank, &s.vector.values)?;
        let bytes = model.to_safetensors_bytes(Dtype::F32)?;
        let back = vectorize(
            &crate::lora_io::parse_safetensors_bytes(&bytes)?,
            SubnetworkSelector::Full,
        )?;
        if back != s.vector {
            return Err(Error::Numeric(format!(
                "sample {} did not survive a write/parse roundtrip",
                s.entry.sample_id
            )));
        }
        let path = out.join(&s.entry.path);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = DatasetManifest {
        entries: population.samples.iter().map(|s| s.entry.clone()).collect(),
        root: out.to_path_buf(),
    };
    manifest.save(out.join("manifest.csv"))?;
    let mut json = serde_json::to_vec_pretty(spec)?;
    json.push(b'\n');
    let spec_path = out.join("spec.json");
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora_io::Subnet;

    fn small() -> SynthSpec {
        SynthSpec {
            n_artists: 4,
            n_genres: 2,
            counts: SplitCounts {
                train: 3,
                calibration_same: 1,
                calibration_diff: 1,
                validation: 1,
                test_same: 1,
                test_diff: 1,
            },
            ambient_dim: 400,
            signal_dim: 5,
            drift_pcs: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn layout_sums_to_dimension() {
        for (d, r) in [(10_000, 4), (400, 4), (2000, 8), (1024, 16), (3000, 1)] {
            let layout = synthetic_layout(d, r).unwrap();
            let total: usize = layout.iter().map(|l| r * (l.n + l.m)).sum();
            assert_eq!(total, d, "d={d} r={r}");
            assert!(layout.iter().all(|l| l.n >= r && l.m >= r));
        }
        assert!(synthetic_layout(10, 4).is_err());
    }

    #[test]
    fn layout_subnet_shares() {
        let layout = synthetic_layout(10_000, 4).unwrap();
        let model = model_from_vector(&layout, 4, &vec![0.0; 10_000]).unwrap();
        let dims = model.subnet_dims();
        assert_eq!(dims[&Subnet::SelfAttention], 2600);
        assert_eq!(dims[&Subnet::CrossAttention], 2600);
        assert_eq!(dims[&Subnet::FeedForward] + dims[&Subnet::Other], 4800);
    }

    #[test]
    fn vector_model_roundtrip() {
        let layout = synthetic_layout(400, 4).unwrap();
        let values: Vec<f64> = (0..400).map(|i| i as f64).collect();
        let model = model_from_vector(&layout, 4, &values).unwrap();
        assert_eq!(vectorize(&model, SubnetworkSelector::Full).unwrap().values, values);
    }

    #[test]
    fn zero_noise_identical_within_artist() {
        let spec = SynthSpec {
            intra_cluster_std: 0.0,
            ..small()
        };
        let pop = generate_population(&spec).unwrap();
        let train: Vec<&SynthSample> = pop.select(Split::Train, None).collect();
        for w in train.windows(2) {
            if w[0].entry.artist_id == w[1].entry.artist_id {
                assert_eq!(w[0].vector, w[1].vector);
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_population(&small()).unwrap();
        let b = generate_population(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_population(&SynthSpec {
            seed: 8,
            ..small()
        })
        .unwrap();
        assert_ne!(a.samples[0].vector, c.samples[0].vector);
    }

    #[test]
    fn overlap_pool_variant_runs() {
        let spec = SynthSpec {
            overlap_fraction: 0.4,
            images_per_lora: 4,
            ..small()
        };
        let pop = generate_population(&spec).unwrap();
        assert_eq!(pop.samples.len(), 4 * 8);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec {
                rank: 3,
                ..small()
            },
            SynthSpec {
                signal_dim: 0,
                ..small()
            },
            SynthSpec {
                intra_cluster_std: -1.0,
                ..small()
            },
            SynthSpec {
                diff_drift: Drift {
                    scale: 0.0,
                    offset: 0.0,
                },
                ..small()
            },
        ] {
            assert!(matches!(spec.validate(), Err(Error::Config(_))), "{spec:?}");
        }
    }
}
