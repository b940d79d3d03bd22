use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Calibration,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Calibration, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// Whether a LoRA was trained with the same setup as the training LoRAs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainConfig {
    Same,
    Diff,
}

impl TrainConfig {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainConfig::Same => "same",
            TrainConfig::Diff => "diff",
        }
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(TrainConfig::Same),
            "diff" => Ok(TrainConfig::Diff),
            other => Err(Error::Config(format!("unknown config `{other}`"))),
        }
    }
}

/// One row of `manifest.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub artist_id: String,
    pub genre: String,
    pub split: Split,
    pub config: TrainConfig,
    /// As written in the file; relative paths resolve against the manifest's
    /// directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
}

/// Reads and validates a manifest CSV with columns
/// `sample_id,artist_id,genre,split,config,path`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut entries = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let headers = reader.headers()?.clone();
    let mut records = reader.records();
    let mut line = 1;
    while let Some(rec) = records.next() {
        let rec = rec.map_err(|e| Error::Manifest {
            line: e.position().map_or(line + 1, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        line = rec.position().map_or(line + 1, |p| p.line() as usize);
        let entry: ManifestEntry = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Manifest {
                line,
                detail: e.to_string(),
            })?;
        if !seen.insert(entry.sample_id.clone()) {
            return Err(Error::Manifest {
                line,
                detail: format!("duplicate sample_id `{}`", entry.sample_id),
            });
        }
        let resolved = resolve(&root, &entry.path);
        if !resolved.is_file() {
            return Err(Error::Manifest {
                line,
                detail: format!("path `{}` does not exist", resolved.display()),
            });
        }
        entries.push(entry);
    }
    Ok(DatasetManifest { entries, root })
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        resolve(&self.root, &entry.path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Entries in `split`, optionally restricted to one training config.
    pub fn select(
        &self,
        split: Split,
        config: Option<TrainConfig>,
    ) -> impl Iterator<Item = &ManifestEntry> {
        self.entries
            .iter()
            .filter(move |e| e.split == split && config.is_none_or(|c| e.config == c))
    }

    /// Sample counts per artist and split.
    pub fn counts(&self) -> BTreeMap<String, BTreeMap<Split, usize>> {
        let mut out: BTreeMap<String, BTreeMap<Split, usize>> = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.artist_id.clone())
                .or_default()
                .entry(e.split)
                .or_insert(0) += 1;
        }
        out
    }

    /// Checks that every artist has exactly `m_train` training and `m_cali`
    /// calibration samples.
    pub fn check_split_counts(&self, m_train: usize, m_cali: usize) -> Result<()> {
        for (artist, counts) in self.counts() {
            let train = counts.get(&Split::Train).copied().unwrap_or(0);
            let cali = counts.get(&Split::Calibration).copied().unwrap_or(0);
            if train != m_train || cali != m_cali {
                return Err(Error::Size(format!(
                    "artist `{artist}` has {train} train / {cali} calibration samples, \
                     expected {m_train} / {m_cali}"
                )));
            }
        }
        Ok(())
    }
}

/// Re-draws the train/calibration assignment inside each artist's pool of
/// train and calibration samples.
///
/// Pools are sorted by sample id and shuffled with a generator seeded once
/// from `seed`, visiting artists in ascending order. The first `m_cali`
/// shuffled samples become calibration, the next `m_train` training; pool
/// samples beyond that are dropped from the result. Validation and test
/// entries are untouched, so calibration stays disjoint from them.
pub fn split_dataset(
    manifest: &DatasetManifest,
    m_train: usize,
    m_cali: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let mut pools: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        if matches!(e.split, Split::Train | Split::Calibration) {
            pools.entry(&e.artist_id).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: BTreeMap<usize, Split> = BTreeMap::new();
    for (artist, mut pool) in pools {
        if pool.len() < m_train + m_cali {
            return Err(Error::Size(format!(
                "artist `{artist}` has {} train-pool samples, needs {}",
                pool.len(),
                m_train + m_cali
            )));
        }
        pool.sort_by(|&a, &b| manifest.entries[a].sample_id.cmp(&manifest.entries[b].sample_id));
        pool.shuffle(&mut rng);
        for (pos, &i) in pool.iter().enumerate().take(m_train + m_cali) {
            assigned.insert(i, if pos < m_cali { Split::Calibration } else { Split::Train });
        }
    }
    let entries = manifest
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e.split {
            Split::Train | Split::Calibration => assigned.get(&i).map(|&split| ManifestEntry {
                split,
                ..e.clone()
            }),
            _ => Some(e.clone()),
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        root: manifest.root.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_manifest(dir: &Path, rows: &[&str]) -> PathBuf {
        for name in ["a.safetensors", "b.safetensors", "c.safetensors"] {
            fs::write(dir.join(name), b"x").unwrap();
        }
        let mut text = String::from("sample_id,artist_id,genre,split,config,path\n");
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        let p = dir.join("manifest.csv");
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &[
                "s1,artA,g,train,same,a.safetensors",
                "s2,artA,g,calibration,same,b.safetensors",
                "s3,artB,g,test,diff,c.safetensors",
            ],
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[2].config, TrainConfig::Diff);
        assert_eq!(m.select(Split::Train, None).count(), 1);
    }

    #[test]
    fn duplicate_id_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(
            dir.path(),
            &["s1,a,g,train,same,a.safetensors", "s1,a,g,train,same,b.safetensors"],
        );
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_split_and_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_manifest(dir.path(), &["s1,a,g,bogus,same,a.safetensors"]);
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { line: 2, .. })));
        let p = write_manifest(
            dir.path(),
            &["s1,a,g,train,same,a.safetensors", "s2,a,g,train,same,missing.safetensors"],
        );
        assert!(matches!(load_manifest(&p), Err(Error::Manifest { line: 3, .. })));
    }

    fn pool_manifest(per_artist: usize) -> DatasetManifest {
        let mut entries = Vec::new();
        for a in 0..3 {
            for i in 0..per_artist {
                entries.push(ManifestEntry {
                    sample_id: format!("a{a}-{i:02}"),
                    artist_id: format!("a{a}"),
                    genre: "g".into(),
                    split: Split::Train,
                    config: TrainConfig::Same,
                    path: PathBuf::from("x"),
                });
            }
            entries.push(ManifestEntry {
                sample_id: format!("a{a}-test"),
                artist_id: format!("a{a}"),
                genre: "g".into(),
                split: Split::Test,
                config: TrainConfig::Same,
                path: PathBuf::from("x"),
            });
        }
        DatasetManifest {
            entries,
            root: PathBuf::new(),
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let m = pool_manifest(8);
        let a = split_dataset(&m, 5, 3, 9).unwrap();
        let b = split_dataset(&m, 5, 3, 9).unwrap();
        assert_eq!(a, b);
        a.check_split_counts(5, 3).unwrap();
        let mut seen = HashSet::new();
        for e in &a.entries {
            assert!(seen.insert(e.sample_id.clone()));
        }
        assert_eq!(a.select(Split::Test, None).count(), 3);
        let c = split_dataset(&m, 5, 3, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_needs_enough_samples() {
        let m = pool_manifest(4);
        assert!(matches!(split_dataset(&m, 3, 3, 0), Err(Error::Size(_))));
        let exact = split_dataset(&m, 2, 2, 0).unwrap();
        exact.check_split_counts(2, 2).unwrap();
    }
}
