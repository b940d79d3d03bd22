//! Per-component affine correction of projections of unseen LoRAs.
//!
//! For every principal axis `k` the map is fitted on per-artist centroids,
//! minimizing `½ Σ_i (s_k·c'_ik + t_k − c_ik)²` where `c_i` projects the mean
//! training vector of artist `i` and `c'_i` the mean calibration vector. With
//! `S¹ = Σ c·c'`, `S² = Σ c'²`, `S³ = Σ c`, `S⁴ = Σ c'` over `n` artists:
//!
//! ```text
//! s_k = (S¹ − S³·S⁴/n) / (S² − (S⁴)²/n)        t_k = (S³ − s_k·S⁴) / n
//! ```
//!
//! The scale-only variant fixes `t_k = 0` and uses `s_k = S¹ / S²`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, PcaModel};
use crate::error::{Error, Result};
use crate::lora_io::{LayoutHash, WeightVector};

/// Calibration samples per artist used throughout the reference setup.
pub const DEFAULT_M_CALI: usize = 3;

/// Scales smaller than this are flagged in the fit diagnostics.
const NEAR_ZERO_SCALE: f64 = 1e-9;

/// Relative size below which an affine denominator counts as vanishing.
const DEGENERATE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationMode {
    Affine,
    ScaleOnly,
}

impl FromStr for CalibrationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(CalibrationMode::Affine),
            "scale-only" => Ok(CalibrationMode::ScaleOnly),
            other => Err(Error::Config(format!("unknown calibration mode `{other}`"))),
        }
    }
}

impl fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibrationMode::Affine => "affine",
            CalibrationMode::ScaleOnly => "scale-only",
        })
    }
}

/// Projected training and calibration centroids of one artist.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidPair {
    pub artist_id: String,
    pub train_centroid: Vec<f64>,
    pub cali_centroid: Vec<f64>,
    pub m_train: usize,
    pub m_cali: usize,
}

/// Sums and residuals of the fit on one axis. Residuals are sums of squared
/// differences between corrected calibration and training centroids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisFit {
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
    pub residual_before: f64,
    pub residual_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub mode: CalibrationMode,
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub n_artists: usize,
    pub axes: Vec<AxisFit>,
    /// Axes whose scale magnitude fell below 1e-9.
    pub near_zero_scale_axes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_hash: Option<LayoutHash>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index_id: Option<String>,
}

fn group_by_artist<'a>(
    model: &PcaModel,
    set: &[(&str, &'a WeightVector)],
) -> Result<BTreeMap<String, Vec<&'a WeightVector>>> {
    let mut out: BTreeMap<String, Vec<&'a WeightVector>> = BTreeMap::new();
    for (label, v) in set {
        if v.layout_hash != model.layout_hash {
            return Err(Error::Layout {
                expected: model.layout_hash.to_string(),
                found: v.layout_hash.to_string(),
            });
        }
        out.entry(label.to_string()).or_default().push(*v);
    }
    Ok(out)
}

fn mean_vector<'a>(vectors: impl Iterator<Item = &'a WeightVector>, d: usize) -> (Vec<f64>, usize) {
    let mut sum = vec![0.0; d];
    let mut count = 0;
    for v in vectors {
        for (s, x) in sum.iter_mut().zip(&v.values) {
            *s += x;
        }
        count += 1;
    }
    sum.iter_mut().for_each(|s| *s /= count as f64);
    (sum, count)
}

/// Averages raw vectors per artist in each set, then projects the averages
/// onto every component of `model`. Pairs come out sorted by artist id.
pub fn compute_centroid_pairs(
    model: &PcaModel,
    train: &[(&str, &WeightVector)],
    cali: &[(&str, &WeightVector)],
) -> Result<Vec<CentroidPair>> {
    let train_groups = group_by_artist(model, train)?;
    let cali_groups = group_by_artist(model, cali)?;
    for (missing_from, a, b) in [
        ("calibration", &train_groups, &cali_groups),
        ("training", &cali_groups, &train_groups),
    ] {
        if let Some(artist) = a.keys().find(|k| !b.contains_key(*k)) {
            return Err(Error::Coverage(format!(
                "artist `{artist}` has no {missing_from} samples"
            )));
        }
    }
    if train_groups.is_empty() {
        return Err(Error::Coverage("no artists to calibrate on".into()));
    }
    let k = model.num_pcs();
    let d = model.dim();
    train_groups
        .iter()
        .map(|(artist, tv)| {
            let cv = &cali_groups[artist];
            let (tm, m_train) = mean_vector(tv.iter().copied(), d);
            let (cm, m_cali) = mean_vector(cv.iter().copied(), d);
            Ok(CentroidPair {
                artist_id: artist.clone(),
                train_centroid: model.project_values(&tm, k)?,
                cali_centroid: model.project_values(&cm, k)?,
                m_train,
                m_cali,
            })
        })
        .collect()
}

/// Closed-form per-axis fit.
pub fn fit_calibration(pairs: &[CentroidPair], mode: CalibrationMode) -> Result<CalibrationMap> {
    let n = pairs.len();
    let min_n = match mode {
        CalibrationMode::Affine => 2,
        CalibrationMode::ScaleOnly => 1,
    };
    if n < min_n {
        return Err(Error::Size(format!(
            "{mode} calibration needs at least {min_n} artists, got {n}"
        )));
    }
    let k = pairs[0].train_centroid.len();
    for p in pairs {
        for len in [p.train_centroid.len(), p.cali_centroid.len()] {
            if len != k {
                return Err(Error::Length {
                    expected: k,
                    found: len,
                });
            }
        }
    }
    let nf = n as f64;
    let mut s = Vec::with_capacity(k);
    let mut t = Vec::with_capacity(k);
    let mut axes = Vec::with_capacity(k);
    let mut near_zero = Vec::new();
    for axis in 0..k {
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for p in pairs {
            let (c, cp) = (p.train_centroid[axis], p.cali_centroid[axis]);
            s1 += c * cp;
            s2 += cp * cp;
            s3 += c;
            s4 += cp;
        }
        let (sk, tk) = match mode {
            CalibrationMode::Affine => {
                let denom = s2 - s4 * s4 / nf;
                if !(denom > DEGENERATE_TOLERANCE * s2) {
                    return Err(Error::DegenerateAxis {
                        axis,
                        detail: "calibration centroids do not vary along this axis".into(),
                    });
                }
                let sk = (s1 - s3 * s4 / nf) / denom;
                (sk, (s3 - sk * s4) / nf)
            }
            CalibrationMode::ScaleOnly => {
                if !(s2 > 0.0) {
                    return Err(Error::DegenerateAxis {
                        axis,
                        detail: "calibration centroids are all zero on this axis".into(),
                    });
                }
                (s1 / s2, 0.0)
            }
        };
        if !sk.is_finite() || !tk.is_finite() {
            return Err(Error::Numeric(format!("non-finite calibration on axis {axis}")));
        }
        if sk.abs() < NEAR_ZERO_SCALE {
            log::warn!("calibration scale on axis {axis} is near zero ({sk:e})");
            near_zero.push(axis);
        }
        let residual = |scale: f64, offset: f64| -> f64 {
            pairs
                .iter()
                .map(|p| {
                    let r = scale * p.cali_centroid[axis] + offset - p.train_centroid[axis];
                    r * r
                })
                .sum()
        };
        axes.push(AxisFit {
            s1,
            s2,
            s3,
            s4,
            residual_before: residual(1.0, 0.0),
            residual_after: residual(sk, tk),
        });
        s.push(sk);
        t.push(tk);
    }
    Ok(CalibrationMap {
        mode,
        s,
        t,
        n_artists: n,
        axes,
        near_zero_scale_axes: near_zero,
        layout_hash: None,
        index_id: None,
    })
}

/// Elementwise `s_k·x_k + t_k` over the leading `coords.len()` axes.
pub fn apply_calibration(map: &CalibrationMap, coords: &[f64]) -> Result<Vec<f64>> {
    if coords.len() > map.s.len() {
        return Err(Error::Length {
            expected: map.s.len(),
            found: coords.len(),
        });
    }
    Ok(coords
        .iter()
        .zip(map.s.iter().zip(&map.t))
        .map(|(x, (s, t))| s * x + t)
        .collect())
}

impl CalibrationMap {
    pub fn num_pcs(&self) -> usize {
        self.s.len()
    }

    /// `|t_k| / (max_k − min_k)` using the training projections' range on
    /// each shared axis.
    pub fn normalized_offsets(&self, training: &EmbeddingMatrix) -> Result<Vec<f64>> {
        let k = self.num_pcs().min(training.num_pcs());
        (0..k)
            .map(|axis| {
                let col = training.coords.column(axis);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if !(hi > lo) {
                    return Err(Error::DegenerateAxis {
                        axis,
                        detail: "training projections have zero range".into(),
                    });
                }
                Ok(self.t[axis].abs() / (hi - lo))
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let map: CalibrationMap = serde_json::from_slice(&bytes)?;
        if map.s.len() != map.t.len() {
            return Err(Error::Length {
                expected: map.s.len(),
                found: map.t.len(),
            });
        }
        if map.mode == CalibrationMode::ScaleOnly && map.t.iter().any(|&t| t != 0.0) {
            return Err(Error::Parse("scale-only calibration with nonzero offsets".into()));
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, train: Vec<f64>, cali: Vec<f64>) -> CentroidPair {
        CentroidPair {
            artist_id: id.into(),
            train_centroid: train,
            cali_centroid: cali,
            m_train: 1,
            m_cali: 1,
        }
    }

    #[test]
    fn identity_when_centroids_match() {
        let pairs = vec![
            pair("a", vec![1.0, -2.0], vec![1.0, -2.0]),
            pair("b", vec![3.0, 0.5], vec![3.0, 0.5]),
            pair("c", vec![-1.0, 4.0], vec![-1.0, 4.0]),
        ];
        let m = fit_calibration(&pairs, CalibrationMode::Affine).unwrap();
        for k in 0..2 {
            assert!((m.s[k] - 1.0).abs() < 1e-15);
            assert!(m.t[k].abs() < 1e-15);
            assert!(m.axes[k].residual_after < 1e-24);
        }
    }

    #[test]
    fn recovers_exact_drift() {
        let (sigma, tau) = (1.25, 0.3);
        let train = [[0.4, 2.0], [-1.5, 0.1], [2.2, -0.7], [0.0, 1.1]];
        let pairs: Vec<_> = train
            .iter()
            .enumerate()
            .map(|(i, c)| {
                pair(
                    &format!("a{i}"),
                    c.to_vec(),
                    c.iter().map(|x| (x - tau) / sigma).collect(),
                )
            })
            .collect();
        let m = fit_calibration(&pairs, CalibrationMode::Affine).unwrap();
        for k in 0..2 {
            assert!((m.s[k] - sigma).abs() < 1e-9);
            assert!((m.t[k] - tau).abs() < 1e-9);
        }
        let corrected = apply_calibration(&m, &pairs[1].cali_centroid).unwrap();
        for (x, y) in corrected.iter().zip(&pairs[1].train_centroid) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_axis_named() {
        let pairs = vec![pair("a", vec![1.0, 2.0], vec![1.0, 5.0]), pair("b", vec![2.0, 3.0], vec![2.0, 5.0])];
        let err = fit_calibration(&pairs, CalibrationMode::Affine).unwrap_err();
        assert!(matches!(err, Error::DegenerateAxis { axis: 1, .. }), "{err}");
        // scale-only only needs a nonzero second moment
        let m = fit_calibration(&pairs, CalibrationMode::ScaleOnly).unwrap();
        assert!(m.t.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn apply_arithmetic() {
        let m = CalibrationMap {
            mode: CalibrationMode::Affine,
            s: vec![2.0, 2.0, 1.0],
            t: vec![-1.0, -1.0, 0.0],
            n_artists: 2,
            axes: vec![],
            near_zero_scale_axes: vec![],
            layout_hash: None,
            index_id: None,
        };
        assert_eq!(apply_calibration(&m, &[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(apply_calibration(&m, &[0.0; 4]), Err(Error::Length { .. })));
    }

    #[test]
    fn too_few_artists() {
        let pairs = vec![pair("a", vec![1.0], vec![2.0])];
        assert!(matches!(fit_calibration(&pairs, CalibrationMode::Affine), Err(Error::Size(_))));
        let m = fit_calibration(&pairs, CalibrationMode::ScaleOnly).unwrap();
        assert_eq!(m.s, vec![0.5]);
    }
}
