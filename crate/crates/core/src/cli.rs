//! `lora-style` command-line interface.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::calibration::{
    apply_calibration, compute_centroid_pairs, fit_calibration, CalibrationMap, CalibrationMode,
    DEFAULT_M_CALI,
};
use crate::cluster_eval::{cluster_eval_run, Partition, DEFAULT_SEEDS};
use crate::dataset::{
    generate_synthetic, load_manifest, split_dataset, DatasetManifest, ManifestEntry, Split,
    SynthSpec, TrainConfig,
};
use crate::embedding::{
    compare_embeddings, fit_pca_up_to, load_index, save_index, select_num_pcs,
    similarity_curve, EmbeddingMatrix, PcTask, SelectionConfig, SelectionData, DEFAULT_NUM_PCS,
};
use crate::error::{Error, Result};
use crate::io::{read_embedding_table, write_f32_le, write_projections_csv, LabeledEmbedding};
use crate::lora_io::{parse_safetensors, vectorize, SubnetworkSelector, WeightVector};
use crate::retrieval::{
    knn_query, retrieval_eval, Metric, Query, RetrievalIndex, Scenario, DEFAULT_TOP_K,
};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "LORA_INDEX_THREADS";

#[derive(Debug, Parser)]
#[command(name = "lora-style", version, about = "LoRA weights as style descriptors")]
pub struct Cli {
    /// Report failures as a single JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Worker thread cap (falls back to LORA_INDEX_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Flatten one LoRA file into a little-endian f32 vector plus a JSON sidecar.
    Vectorize(VectorizeArgs),
    /// Fit a PCA index on the training split of a manifest.
    Fit(FitArgs),
    /// Project LoRAs into an index, optionally applying a calibration.
    Project(ProjectArgs),
    /// Fit a per-component calibration from training and calibration LoRAs.
    Calibrate(CalibrateArgs),
    /// k-means over an embedding table, scored against its labels.
    ClusterEval(ClusterEvalArgs),
    /// Nearest neighbours of query rows in a database table.
    Retrieve(RetrieveArgs),
    /// mAP and Recall@k of labeled queries against a database table.
    EvalRetrieval(EvalRetrievalArgs),
    /// Sign-aligned similarity of two embeddings of the same samples.
    Compare(CompareArgs),
    /// Grid search for the number of components.
    SelectPcs(SelectPcsArgs),
    /// Generate a synthetic LoRA population.
    Synth(SynthArgs),
    /// Write 2-D or 3-D coordinates as JSON for plotting.
    ExportViz(ExportVizArgs),
    /// Re-draw the train/calibration assignment of a manifest.
    Split(SplitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SubnetArg {
    Full,
    Ff,
    SelfAttn,
    CrossAttn,
}

impl From<SubnetArg> for SubnetworkSelector {
    fn from(s: SubnetArg) -> Self {
        match s {
            SubnetArg::Full => SubnetworkSelector::Full,
            SubnetArg::Ff => SubnetworkSelector::FeedForward,
            SubnetArg::SelfAttn => SubnetworkSelector::SelfAttention,
            SubnetArg::CrossAttn => SubnetworkSelector::CrossAttention,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Calibration,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Calibration => Split::Calibration,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfigArg {
    Same,
    Diff,
}

impl From<ConfigArg> for TrainConfig {
    fn from(c: ConfigArg) -> Self {
        match c {
            ConfigArg::Same => TrainConfig::Same,
            ConfigArg::Diff => TrainConfig::Diff,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Affine,
    ScaleOnly,
}

impl From<ModeArg> for CalibrationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Affine => CalibrationMode::Affine,
            ModeArg::ScaleOnly => CalibrationMode::ScaleOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    OrigOrig,
    OrigGen,
    GenOrig,
    GenGen,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::OrigOrig => Scenario::OrigOrig,
            ScenarioArg::OrigGen => Scenario::OrigGen,
            ScenarioArg::GenOrig => Scenario::GenOrig,
            ScenarioArg::GenGen => Scenario::GenGen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Cluster,
    Retrieval,
}

#[derive(Debug, Args)]
pub struct VectorizeArgs {
    /// LoRA safetensors file.
    pub lora: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub subnet: SubnetArg,
    /// Output blob; the sidecar is written to `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_NUM_PCS)]
    pub num_pcs: usize,
    #[arg(long, value_enum, default_value = "full")]
    pub subnet: SubnetArg,
    /// Index directory to create.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Project the selected entries of this manifest.
    #[arg(long, conflicts_with = "lora")]
    pub manifest: Option<PathBuf>,
    /// Individual LoRA files; their label column is left empty.
    #[arg(long, num_args = 1..)]
    pub lora: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Keep only one training config (default: both).
    #[arg(long, value_enum)]
    pub config: Option<ConfigArg>,
    /// Must match the subnet the index was fitted on.
    #[arg(long, value_enum, default_value = "full")]
    pub subnet: SubnetArg,
    /// Leading components to keep (default: all in the index).
    #[arg(long)]
    pub num_pcs: Option<usize>,
    /// Calibration file to apply to the projections.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Output table `sample_id,label,pc1..`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Manifest providing the train and calibration splits.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "affine")]
    pub mode: ModeArg,
    /// Calibration samples used per artist (lowest sample ids first).
    #[arg(long, default_value_t = DEFAULT_M_CALI)]
    pub m_cali: usize,
    /// Restrict calibration samples to one training config.
    #[arg(long, value_enum)]
    pub config: Option<ConfigArg>,
    #[arg(long, value_enum, default_value = "full")]
    pub subnet: SubnetArg,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_seeds(s: &str) -> std::result::Result<u64, String> {
    s.parse::<u64>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ClusterEvalArgs {
    /// Embedding table (`sample_id,label,...`).
    #[arg(long)]
    pub embedding: PathBuf,
    /// Cluster count (default: number of distinct labels).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub num_pcs: Option<usize>,
    /// Comma-separated k-means seeds.
    #[arg(long, value_delimiter = ',', value_parser = parse_seeds)]
    pub seeds: Option<Vec<u64>>,
    /// Write the CSV report (`seed,ari,nmi` plus mean and std rows) here
    /// instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Database table; defaults to `<index>/projections.csv`.
    #[arg(long, required_unless_present = "index")]
    pub database: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Query table; every row is searched.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long)]
    pub num_pcs: Option<usize>,
    /// Output CSV `query_id,rank,sample_id,label,distance` (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalRetrievalArgs {
    #[arg(long)]
    pub database: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long, value_enum, default_value = "orig-orig")]
    pub scenario: ScenarioArg,
    #[arg(long)]
    pub num_pcs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Components compared (default: all shared).
    #[arg(long)]
    pub num_pcs: Option<usize>,
    /// Report the similarity for every prefix 1..=num_pcs.
    #[arg(long)]
    pub curve: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectPcsArgs {
    /// Evaluation table (validation samples).
    #[arg(long)]
    pub eval: PathBuf,
    /// Retrieval database; without it the evaluation set is searched
    /// leave-one-out.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 1)]
    pub min_pcs: usize,
    /// Upper end of the search (default: all available).
    #[arg(long)]
    pub max_pcs: Option<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_seeds)]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON spec to start from (default: built-in defaults).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_artists: Option<usize>,
    #[arg(long)]
    pub ambient_dim: Option<usize>,
    #[arg(long)]
    pub signal_dim: Option<usize>,
    #[arg(long)]
    pub intra_std: Option<f64>,
    #[arg(long)]
    pub spread: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExportVizArgs {
    /// Embedding table; defaults to `<index>/projections.csv`.
    #[arg(long, required_unless_present = "index")]
    pub embedding: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Manifest supplying genres by sample id.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
    pub dims: u8,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub m_train: usize,
    #[arg(long, default_value_t = DEFAULT_M_CALI)]
    pub m_cali: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// New manifest; paths are rewritten relative to its directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let json_errors = args.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if json_errors {
                let msg = e.to_string();
                let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            } else {
                eprint!("{e}");
            }
            return 2;
        }
    };
    configure_threads(cli.threads);
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            if json_errors {
                eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

fn configure_threads(flag: Option<usize>) {
    let n = flag.or_else(|| std::env::var(THREADS_ENV).ok()?.parse().ok());
    if let Some(n) = n.filter(|&n| n > 0) {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("rayon pool already initialised");
        }
        std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Vectorize(a) => cmd_vectorize(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Project(a) => cmd_project(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::ClusterEval(a) => cmd_cluster_eval(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::EvalRetrieval(a) => cmd_eval_retrieval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::SelectPcs(a) => cmd_select_pcs(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ExportViz(a) => cmd_export_viz(a),
        Command::Split(a) => cmd_split(a),
    }
}

fn write_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    match out {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(&bytes)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn load_vectors(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    subnet: SubnetworkSelector,
) -> Result<Vec<WeightVector>> {
    entries
        .par_iter()
        .map(|e| vectorize(&parse_safetensors(manifest.resolve(e))?, subnet))
        .collect()
}

fn cmd_vectorize(a: VectorizeArgs) -> Result<()> {
    let v = vectorize(&parse_safetensors(&a.lora)?, a.subnet.into())?;
    write_f32_le(&a.out, &v.values)?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".json");
    let meta = json!({
        "d": v.dim(),
        "layout_hash": v.layout_hash,
        "subnet": SubnetworkSelector::from(a.subnet).as_str(),
    });
    write_json(Some(Path::new(&sidecar)), &meta)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let entries: Vec<&ManifestEntry> = manifest.select(Split::Train, None).collect();
    let vectors = load_vectors(&manifest, &entries, a.subnet.into())?;
    let model = fit_pca_up_to(&vectors, a.num_pcs)?;
    if model.num_pcs() < a.num_pcs {
        log::warn!(
            "kept {} components instead of {} ({} training samples)",
            model.num_pcs(),
            a.num_pcs,
            vectors.len()
        );
    }
    let model = model.to_f32_precision();
    let samples: Vec<(String, &WeightVector)> = entries
        .iter()
        .zip(&vectors)
        .map(|(e, v)| (e.sample_id.clone(), v))
        .collect();
    let table = LabeledEmbedding {
        embedding: crate::embedding::project_all(&model, &samples, model.num_pcs())?,
        labels: entries.iter().map(|e| e.artist_id.clone()).collect(),
    };
    let creation = BTreeMap::from([
        ("num_pcs_requested".to_string(), json!(a.num_pcs)),
        (
            "subnet".to_string(),
            json!(SubnetworkSelector::from(a.subnet).as_str()),
        ),
        ("split".to_string(), json!(Split::Train.as_str())),
    ]);
    save_index(&a.out, &model, &table, creation)?;
    Ok(())
}

fn check_index_subnet(manifest: &crate::embedding::IndexManifest, subnet: SubnetArg) -> Result<()> {
    let wanted = SubnetworkSelector::from(subnet).as_str();
    match manifest.creation.get("subnet").and_then(|v| v.as_str()) {
        Some(s) if s != wanted => Err(Error::Config(format!(
            "index was fitted on subnet `{s}`, not `{wanted}`"
        ))),
        _ => Ok(()),
    }
}

fn cmd_project(a: ProjectArgs) -> Result<()> {
    let (model, index) = load_index(&a.index)?;
    check_index_subnet(&index, a.subnet)?;
    let k = a.num_pcs.unwrap_or(model.num_pcs());
    let calibration = a.calibration.as_ref().map(CalibrationMap::load).transpose()?;
    if let Some(map) = &calibration {
        if map.index_id.as_ref().is_some_and(|id| *id != index.index_id) {
            return Err(Error::Config(format!(
                "calibration was fitted against index {}, not {}",
                map.index_id.as_deref().unwrap_or(""),
                index.index_id
            )));
        }
    }
    let (ids, labels, vectors) = if let Some(path) = &a.manifest {
        let manifest = load_manifest(path)?;
        let entries: Vec<&ManifestEntry> = manifest
            .select(a.split.into(), a.config.map(Into::into))
            .collect();
        let vectors = load_vectors(&manifest, &entries, a.subnet.into())?;
        (
            entries.iter().map(|e| e.sample_id.clone()).collect::<Vec<_>>(),
            entries.iter().map(|e| e.artist_id.clone()).collect::<Vec<_>>(),
            vectors,
        )
    } else if !a.lora.is_empty() {
        let vectors = a
            .lora
            .par_iter()
            .map(|p| vectorize(&parse_safetensors(p)?, a.subnet.into()))
            .collect::<Result<Vec<_>>>()?;
        let ids = a
            .lora
            .iter()
            .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
            .collect();
        (ids, vec![String::new(); a.lora.len()], vectors)
    } else {
        return Err(Error::Config("give --manifest or --lora".into()));
    };
    let mut coords = Array2::zeros((vectors.len(), k));
    for (i, v) in vectors.iter().enumerate() {
        let mut row = model.project(v, k)?;
        if let Some(map) = &calibration {
            row = apply_calibration(map, &row)?;
        }
        coords.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    let table = LabeledEmbedding {
        embedding: EmbeddingMatrix::new(coords, ids)?,
        labels,
    };
    write_projections_csv(&a.out, &table)
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let (model, index) = load_index(&a.index)?;
    check_index_subnet(&index, a.subnet)?;
    if a.m_cali == 0 {
        return Err(Error::Config("--m-cali must be positive".into()));
    }
    let manifest = load_manifest(&a.manifest)?;
    let train: Vec<&ManifestEntry> = manifest.select(Split::Train, None).collect();
    let mut by_artist: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.select(Split::Calibration, a.config.map(Into::into)) {
        by_artist.entry(&e.artist_id).or_default().push(e);
    }
    let mut cali = Vec::new();
    for (artist, mut entries) in by_artist {
        if entries.len() < a.m_cali {
            return Err(Error::Size(format!(
                "artist `{artist}` has {} calibration samples, needs {}",
                entries.len(),
                a.m_cali
            )));
        }
        entries.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
        cali.extend(entries.into_iter().take(a.m_cali));
    }
    let subnet = a.subnet.into();
    let train_vectors = load_vectors(&manifest, &train, subnet)?;
    let cali_vectors = load_vectors(&manifest, &cali, subnet)?;
    let train_set = labeled(&train, &train_vectors);
    let cali_set = labeled(&cali, &cali_vectors);
    let pairs = compute_centroid_pairs(&model, &train_set, &cali_set)?;
    let mut map = fit_calibration(&pairs, a.mode.into())?;
    map.layout_hash = Some(model.layout_hash.clone());
    map.index_id = Some(index.index_id);
    map.save(&a.out)
}

fn labeled<'a>(entries: &[&'a ManifestEntry], vectors: &'a [WeightVector]) -> Vec<(&'a str, &'a WeightVector)> {
    entries
        .iter()
        .map(|e| e.artist_id.as_str())
        .zip(vectors)
        .collect()
}

fn truncate(table: LabeledEmbedding, num_pcs: Option<usize>) -> Result<LabeledEmbedding> {
    match num_pcs {
        Some(j) => Ok(LabeledEmbedding {
            embedding: table.embedding.truncated(j)?,
            labels: table.labels,
        }),
        None => Ok(table),
    }
}

fn cmd_cluster_eval(a: ClusterEvalArgs) -> Result<()> {
    let table = truncate(read_embedding_table(&a.embedding)?, a.num_pcs)?;
    let truth = Partition::from_labels(&table.labels);
    let k = a.k.unwrap_or(truth.n_clusters());
    let seeds = a.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
    let report = cluster_eval_run(table.embedding.coords.view(), &truth, k, &seeds)?;
    let mut w = output_csv(a.out.as_deref())?;
    w.write_record(["seed", "ari", "nmi"])?;
    for ((seed, ari), nmi) in report.seeds.iter().zip(&report.ari).zip(&report.nmi) {
        w.write_record([seed.to_string(), ari.to_string(), nmi.to_string()])?;
    }
    w.write_record(["mean".to_string(), report.ari_mean.to_string(), report.nmi_mean.to_string()])?;
    w.write_record(["std".to_string(), report.ari_std.to_string(), report.nmi_std.to_string()])?;
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn output_csv(out: Option<&Path>) -> Result<csv::Writer<Box<dyn std::io::Write>>> {
    Ok(csv::Writer::from_writer(match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout()),
    }))
}

fn database_path(explicit: Option<PathBuf>, index: Option<PathBuf>) -> Result<PathBuf> {
    explicit
        .or_else(|| index.map(|d| d.join("projections.csv")))
        .ok_or_else(|| Error::Config("give --database or --index".into()))
}

fn build_index(table: LabeledEmbedding, metric: Metric) -> Result<RetrievalIndex> {
    RetrievalIndex::new(
        table.embedding.coords,
        table.embedding.sample_ids,
        table.labels,
        metric,
    )
}

fn queries_of(table: &LabeledEmbedding) -> Vec<Query> {
    table
        .embedding
        .sample_ids
        .iter()
        .zip(&table.labels)
        .enumerate()
        .map(|(i, (id, label))| Query {
            id: id.clone(),
            label: label.clone(),
            coords: table.embedding.coords.row(i).to_vec(),
        })
        .collect()
}

fn cmd_retrieve(a: RetrieveArgs) -> Result<()> {
    let db = truncate(read_embedding_table(database_path(a.database, a.index)?)?, a.num_pcs)?;
    let queries = truncate(read_embedding_table(&a.queries)?, a.num_pcs)?;
    let labels: HashMap<String, String> = db
        .embedding
        .sample_ids
        .iter()
        .cloned()
        .zip(db.labels.iter().cloned())
        .collect();
    let index = build_index(db, a.metric.into())?;
    let mut w = output_csv(a.out.as_deref())?;
    w.write_record(["query_id", "rank", "sample_id", "label", "distance"])?;
    for q in queries_of(&queries) {
        let result = knn_query(&index, &q.id, &q.coords, a.top_k)?;
        for (rank, (id, dist)) in result.hits.iter().enumerate() {
            w.write_record([
                q.id.as_str(),
                &(rank + 1).to_string(),
                id,
                &labels[id],
                &dist.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<output>", e))
}

fn cmd_eval_retrieval(a: EvalRetrievalArgs) -> Result<()> {
    let db = truncate(read_embedding_table(&a.database)?, a.num_pcs)?;
    let queries = truncate(read_embedding_table(&a.queries)?, a.num_pcs)?;
    let index = build_index(db, a.metric.into())?;
    let report = retrieval_eval(&index, &queries_of(&queries), a.top_k, a.scenario.into())?;
    write_json(a.out.as_deref(), &report)
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    let ta = read_embedding_table(&a.a)?;
    let tb = read_embedding_table(&a.b)?;
    let j = a
        .num_pcs
        .unwrap_or(ta.embedding.num_pcs().min(tb.embedding.num_pcs()));
    let value = if a.curve {
        json!({ "num_pcs": j, "curve": similarity_curve(&ta.embedding, &tb.embedding, j)? })
    } else {
        json!({ "num_pcs": j, "similarity": compare_embeddings(&ta.embedding, &tb.embedding, j)? })
    };
    write_json(a.out.as_deref(), &value)
}

fn cmd_select_pcs(a: SelectPcsArgs) -> Result<()> {
    let eval = read_embedding_table(&a.eval)?;
    let reference = a.reference.as_ref().map(read_embedding_table).transpose()?;
    let data = SelectionData {
        eval: &eval.embedding,
        eval_labels: &eval.labels,
        reference: reference.as_ref().map(|r| (&r.embedding, r.labels.as_slice())),
    };
    let available = reference.as_ref().map_or(eval.embedding.num_pcs(), |r| {
        r.embedding.num_pcs().min(eval.embedding.num_pcs())
    });
    let config = SelectionConfig {
        seeds: a.seeds.unwrap_or_else(|| DEFAULT_SEEDS.to_vec()),
        n_clusters: a.k,
        top_k: a.top_k,
        metric: a.metric.into(),
    };
    let task = match a.task {
        TaskArg::Cluster => PcTask::Cluster,
        TaskArg::Retrieval => PcTask::Retrieval,
    };
    let sel = select_num_pcs(&data, task, a.min_pcs..=a.max_pcs.unwrap_or(available), &config)?;
    write_json(a.out.as_deref(), &json!({ "task": task, "selection": sel }))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice::<SynthSpec>(&bytes)?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.n_artists {
        spec.n_artists = v;
    }
    if let Some(v) = a.ambient_dim {
        spec.ambient_dim = v;
    }
    if let Some(v) = a.signal_dim {
        spec.signal_dim = v;
    }
    if let Some(v) = a.intra_std {
        spec.intra_cluster_std = v;
    }
    if let Some(v) = a.spread {
        spec.inter_cluster_spread = v;
    }
    spec.drift_pcs = spec.drift_pcs.max(1);
    generate_synthetic(&spec, &a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct VizSample {
    id: String,
    label: String,
    genre: Option<String>,
    coords: Vec<f64>,
}

fn cmd_export_viz(a: ExportVizArgs) -> Result<()> {
    let path = a
        .embedding
        .or_else(|| a.index.map(|d| d.join("projections.csv")))
        .ok_or_else(|| Error::Config("give --embedding or --index".into()))?;
    let table = read_embedding_table(path)?;
    let dims = usize::from(a.dims);
    if table.embedding.num_pcs() < dims {
        return Err(Error::Config(format!(
            "embedding has {} components, {dims} requested",
            table.embedding.num_pcs()
        )));
    }
    let genres: HashMap<String, String> = match &a.manifest {
        Some(p) => load_manifest(p)?
            .entries
            .into_iter()
            .map(|e| (e.sample_id, e.genre))
            .collect(),
        None => HashMap::new(),
    };
    let samples: Vec<VizSample> = table
        .embedding
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| VizSample {
            id: id.clone(),
            label: table.labels[i].clone(),
            genre: genres.get(id).cloned(),
            coords: table.embedding.coords.row(i).iter().take(dims).copied().collect(),
        })
        .collect();
    write_json(a.out.as_deref(), &json!({ "samples": samples, "dims": dims }))
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let mut out = split_dataset(&manifest, a.m_train, a.m_cali, a.seed)?;
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let src = fs::canonicalize(&manifest.root).map_err(|e| Error::io(&manifest.root, e))?;
    let dst = fs::canonicalize(if out_dir.as_os_str().is_empty() {
        Path::new(".")
    } else {
        &out_dir
    })
    .map_err(|e| Error::io(&out_dir, e))?;
    if src != dst {
        for e in &mut out.entries {
            if e.path.is_relative() {
                e.path = src.join(&e.path);
            }
        }
    }
    out.root = out_dir;
    out.save(&a.out)
}
