//! LoRA adapter weights as style descriptors.
//!
//! The pipeline flattens LoRA files into weight vectors ([`lora_io`]), fits a
//! PCA style space ([`embedding`]), corrects drift of unseen adapters
//! ([`calibration`]) and scores the space by clustering ([`cluster_eval`]) and
//! retrieval ([`retrieval`]). [`dataset`] provides manifests and a synthetic
//! population generator.

pub mod calibration;
pub mod cli;
pub mod cluster_eval;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod io;
pub mod lora_io;
pub mod retrieval;

pub use error::{Error, Result};
