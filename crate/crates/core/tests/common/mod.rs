//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's numerics.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lora_style::lora_io::{LayoutHash, LoraLayer, LoraMetadata, LoraModel, WeightVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect()
}

pub fn weight_vectors(rows: &[Vec<f64>]) -> Vec<WeightVector> {
    rows.iter()
        .map(|r| WeightVector::new(r.clone(), LayoutHash("test".into())))
        .collect()
}

/// Dense PCA through the full `d × d` sample covariance.
pub struct CovariancePca {
    pub mean: Vec<f64>,
    /// Columns of `d × k`, sorted by decreasing eigenvalue.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

pub fn covariance_pca(rows: &[Vec<f64>]) -> CovariancePca {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    CovariancePca {
        mean,
        components: order
            .iter()
            .map(|&j| eig.eigenvectors.column(j).iter().copied().collect())
            .collect(),
        eigenvalues: order.iter().map(|&j| eig.eigenvalues[j]).collect(),
    }
}

impl CovariancePca {
    pub fn project(&self, x: &[f64], k: usize) -> Vec<f64> {
        self.components[..k]
            .iter()
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((q, x), m)| q * (x - m)).sum())
            .collect()
    }
}

/// Least-squares fit of `y ≈ s·x + t` by solving the 2×2 normal equations.
pub fn normal_equations_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sx: f64 = x.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sy: f64 = y.iter().sum();
    let m = Matrix2::new(sxx, sx, sx, n);
    let sol = m.lu().solve(&Vector2::new(sxy, sy)).expect("singular normal equations");
    (sol[0], sol[1])
}

fn choose2(k: usize) -> BigInt {
    let k = BigInt::from(k);
    &k * (&k - 1) / 2
}

/// ARI by explicit pair enumeration in exact rational arithmetic.
pub fn ari_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let (mut both, mut same_a, mut same_b) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            same_a += sa as usize;
            same_b += sb as usize;
            both += (sa && sb) as usize;
        }
    }
    let total = choose2(n);
    let (both, same_a, same_b) = (BigInt::from(both), BigInt::from(same_a), BigInt::from(same_b));
    let expected = BigRational::new(&same_a * &same_b, total);
    let max = BigRational::new(&same_a + &same_b, BigInt::from(2));
    let num = BigRational::from_integer(both) - &expected;
    let den = max - expected;
    if den == BigRational::from_integer(BigInt::from(0)) {
        return 1.0;
    }
    let r = num / den;
    ratio_to_f64(&r)
}

fn ratio_to_f64(r: &BigRational) -> f64 {
    // Scale so the integer quotient carries well over 53 bits, then divide.
    let scale = BigInt::from(1u64) << 200;
    let q: BigInt = (r.numer() * &scale) / r.denom();
    let s = q.to_string();
    let v: f64 = s.parse().expect("integer string");
    v / 2f64.powi(200)
}

/// NMI with arithmetic-mean normalization via `I = H(a) + H(b) − H(a, b)`.
pub fn nmi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let h = |counts: BTreeMap<Vec<usize>, usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let count = |key: &dyn Fn(usize) -> Vec<usize>| {
        let mut m = BTreeMap::new();
        for i in 0..a.len() {
            *m.entry(key(i)).or_insert(0) += 1;
        }
        m
    };
    let ha = h(count(&|i| vec![a[i]]));
    let hb = h(count(&|i| vec![b[i]]));
    let hab = h(count(&|i| vec![a[i], b[i]]));
    if ha + hb == 0.0 {
        return 1.0;
    }
    2.0 * (ha + hb - hab) / (ha + hb)
}

/// AP straight from the definition, with `R = min(|relevant|, len)`.
pub fn ap_oracle(ranked: &[String], relevant: &HashSet<String>) -> f64 {
    let r = relevant.len().min(ranked.len());
    let mut sum = 0.0;
    for (i, id) in ranked.iter().enumerate() {
        if relevant.contains(id) {
            let prefix = ranked[..=i].iter().filter(|x| relevant.contains(*x)).count();
            sum += prefix as f64 / (i + 1) as f64;
        }
    }
    if r == 0 {
        0.0
    } else {
        sum / r as f64
    }
}

pub fn recall_oracle(ranked: &[String], relevant: &HashSet<String>, k: usize) -> f64 {
    let hits = relevant.iter().filter(|id| ranked[..k].contains(id)).count();
    hits as f64 / relevant.len() as f64
}

/// Full sort by `(distance, id)`.
pub fn brute_force_knn(db: &[(String, Vec<f64>)], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = db
        .iter()
        .map(|(id, x)| {
            let d2: f64 = x.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (id.clone(), d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub const LAYER_NAMES: [&str; 6] = [
    "lora_unet_mid_block_attentions_0_transformer_blocks_0_attn1_to_q",
    "lora_unet_mid_block_attentions_0_transformer_blocks_0_attn1_to_out_0",
    "lora_unet_mid_block_attentions_0_transformer_blocks_0_attn2_to_k",
    "lora_unet_mid_block_attentions_0_transformer_blocks_0_ff_net_0_proj",
    "lora_unet_mid_block_attentions_0_transformer_blocks_0_ff_net_2",
    "lora_unet_mid_block_attentions_0_proj_in",
];

/// Random model with f32-representable entries, so every dtype roundtrip
/// through F32 storage is lossless.
pub fn random_model(rng: &mut ChaCha8Rng) -> LoraModel {
    let rank = rng.random_range(1..=4);
    let n_layers = rng.random_range(1..=LAYER_NAMES.len());
    let layers = LAYER_NAMES[..n_layers]
        .iter()
        .map(|name| {
            let n = rng.random_range(rank..rank + 12);
            let m = rng.random_range(rank..rank + 12);
            let mut draw = |r, c| {
                ndarray::Array2::from_shape_fn((r, c), |_| {
                    rng.sample::<f64, _>(StandardNormal) as f32 as f64
                })
            };
            let a = draw(rank, n);
            let b = draw(m, rank);
            LoraLayer::new(*name, a, b).unwrap()
        })
        .collect();
    LoraModel::new(layers, LoraMetadata::default()).unwrap()
}

/// Independent F32 safetensors writer that emits header keys and data
/// segments in a random order, with an optional `.alpha` scalar per layer.
pub fn shuffled_safetensors(model: &LoraModel, rng: &mut ChaCha8Rng) -> Vec<u8> {
    use rand::seq::SliceRandom;
    let mut tensors: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for l in model.layers() {
        tensors.push((
            format!("{}.lora_down.weight", l.name),
            vec![l.a.nrows(), l.a.ncols()],
            l.a.iter().copied().collect(),
        ));
        tensors.push((
            format!("{}.lora_up.weight", l.name),
            vec![l.b.nrows(), l.b.ncols()],
            l.b.iter().copied().collect(),
        ));
    }
    tensors.shuffle(rng);
    let mut data = Vec::new();
    let mut entries = Vec::new();
    for (name, shape, values) in &tensors {
        let start = data.len();
        for v in values {
            data.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        entries.push(format!(
            "\"{name}\":{{\"dtype\":\"F32\",\"shape\":{shape:?},\"data_offsets\":[{start},{}]}}",
            data.len()
        ));
    }
    entries.shuffle(rng);
    let header = format!("{{{}}}", entries.join(","));
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&data);
    out
}

pub const BIN: &str = env!("CARGO_BIN_EXE_lora-style");

pub fn cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(BIN)
        .args(args)
        .output()
        .expect("failed to spawn the binary")
}

pub fn cli_ok(args: &[&str]) -> std::process::Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Runs every subcommand on a small synthetic dataset under `dir` and
/// returns the written files, relative to `dir`.
pub fn run_cli_pipeline(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let p = |rel: &str| dir.join(rel).to_string_lossy().into_owned();
    let data = p("data");
    let manifest = p("data/manifest.csv");
    let index = p("index");
    cli_ok(&["synth", "--out", &data, "--n-artists", "4", "--ambient-dim", "2000", "--signal-dim", "6"]);
    cli_ok(&[
        "vectorize",
        &p("data/loras/artist00/artist00-train-same-00.safetensors"),
        "--subnet",
        "ff",
        "--out",
        &p("ff.bin"),
    ]);
    cli_ok(&["fit", "--manifest", &manifest, "--num-pcs", "10", "--out", &index]);
    cli_ok(&["calibrate", "--index", &index, "--manifest", &manifest, "--config", "diff", "--out", &p("cali.json")]);
    let project = |split: &str, extra: &[&str], out: &str| {
        let mut args = vec!["project", "--index", &index, "--manifest", &manifest, "--split", split];
        args.extend_from_slice(extra);
        let out = p(out);
        args.extend_from_slice(&["--out", &out]);
        cli_ok(&args);
    };
    project("test", &["--config", "diff"], "test_raw.csv");
    project("test", &["--config", "diff", "--calibration", &p("cali.json")], "test_cal.csv");
    project("validation", &[], "val.csv");
    let db = p("index/projections.csv");
    cli_ok(&["cluster-eval", "--embedding", &db, "--seeds", "0,1,2", "--out", &p("cluster.csv")]);
    cli_ok(&["retrieve", "--index", &index, "--queries", &p("test_cal.csv"), "--top-k", "5", "--out", &p("retrieve.csv")]);
    cli_ok(&["eval-retrieval", "--database", &db, "--queries", &p("test_cal.csv"), "--top-k", "5", "--out", &p("eval.json")]);
    cli_ok(&["compare", "--a", &p("test_raw.csv"), "--b", &p("test_cal.csv"), "--curve", "--out", &p("compare.json")]);
    cli_ok(&[
        "select-pcs", "--eval", &p("val.csv"), "--reference", &db, "--task", "retrieval",
        "--top-k", "5", "--out", &p("select_retrieval.json"),
    ]);
    cli_ok(&["select-pcs", "--eval", &p("val.csv"), "--task", "cluster", "--seeds", "0,1", "--out", &p("select_cluster.json")]);
    cli_ok(&["export-viz", "--index", &index, "--manifest", &manifest, "--dims", "3", "--out", &p("viz.json")]);
    cli_ok(&["split", "--manifest", &manifest, "--m-train", "20", "--m-cali", "3", "--seed", "1", "--out", &p("data/split.csv")]);

    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}
