//! Error type shared by every pipeline stage.

use std::path::PathBuf;

/// Errors raised by parsing, fitting, calibration and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed safetensors header, JSON or data region.
    #[error("parse error: {0}")]
    Parse(String),
    /// A `lora_down` tensor without its `lora_up` sibling, or vice versa.
    #[error("pairing error: layer `{layer}` has {present} but no {missing}")]
    Pairing {
        layer: String,
        present: &'static str,
        missing: &'static str,
    },
    /// Inconsistent matrix shapes inside one layer.
    #[error("shape error in layer `{layer}`: {detail}")]
    Shape { layer: String, detail: String },
    /// Layers of one model declare different ranks.
    #[error("heterogeneous ranks: layer `{layer}` has rank {found}, expected {expected}")]
    HeterogeneousRank {
        layer: String,
        expected: usize,
        found: usize,
    },
    /// The subnetwork selector matched no layer.
    #[error("no layer matches selector {0}")]
    EmptySelection(String),
    /// Vectors built from different layer layouts were mixed.
    #[error("layout mismatch: expected {expected}, found {found}")]
    Layout { expected: String, found: String },
    /// Requested more principal components than the data supports.
    #[error("rank error: {0}")]
    Rank(String),
    /// NaN or infinite values in numeric input.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// The data cannot be fitted at all (e.g. zero variance).
    #[error("fit error: {0}")]
    Fit(String),
    /// Two embeddings do not describe the same samples in the same order.
    #[error("alignment error: {0}")]
    Alignment(String),
    /// A label or artist required by one set is missing from another.
    #[error("coverage error: {0}")]
    Coverage(String),
    /// Calibration denominator vanishes on an axis.
    #[error("degenerate calibration axis {axis}: {detail}")]
    DegenerateAxis { axis: usize, detail: String },
    /// Vector or matrix lengths disagree.
    #[error("length mismatch: expected {expected}, found {found}")]
    Length { expected: usize, found: usize },
    /// Not enough samples for the requested operation.
    #[error("size error: {0}")]
    Size(String),
    /// Invalid option or parameter combination.
    #[error("config error: {0}")]
    Config(String),
    /// Dataset manifest problem; `line` is the 1-based line in the file.
    #[error("manifest error at line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "parse",
            Error::Pairing { .. } => "pairing",
            Error::Shape { .. } => "shape",
            Error::HeterogeneousRank { .. } => "heterogeneous_rank",
            Error::EmptySelection(_) => "empty_selection",
            Error::Layout { .. } => "layout",
            Error::Rank(_) => "rank",
            Error::Numeric(_) => "numeric",
            Error::Fit(_) => "fit",
            Error::Alignment(_) => "alignment",
            Error::Coverage(_) => "coverage",
            Error::DegenerateAxis { .. } => "degenerate_axis",
            Error::Length { .. } => "length",
            Error::Size(_) => "size",
            Error::Config(_) => "config",
            Error::Manifest { .. } => "manifest",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Rank(_) | Error::Numeric(_) | Error::Fit(_) | Error::DegenerateAxis { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
