//! Missing-aware per-feature z-scoring with explicit fitting regime.
//!
//! Statistics are fitted either before masking (over every originally
//! observed cell) or after it (over cells that are observed and not
//! artificially masked). Scale is the population standard deviation,
//! floored at [`SCALE_FLOOR`].

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Mask, Scale, TimeSeriesTensor, SENTINEL};
use crate::error::{Error, Result};
use crate::masking::MaskSet;

pub const SCALE_FLOOR: f64 = 1e-8;
pub const STATS_FILE: &str = "norm_stats.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Normalisation before masking.
    #[serde(rename = "NBM", alias = "nbm")]
    Nbm,
    /// Normalisation after masking.
    #[serde(rename = "NAM", alias = "nam")]
    Nam,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Nbm => "NBM",
            Regime::Nam => "NAM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub feature_names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Cells used to fit each feature. Fewer than two means the scale was floored.
    pub counts: Vec<usize>,
    pub provenance: Regime,
}

impl NormStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Features whose scale came from the floor rather than the data.
    pub fn floored(&self) -> Vec<bool> {
        self.counts
            .iter()
            .zip(&self.scale)
            .map(|(&c, &s)| c < 2 || s == SCALE_FLOOR)
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Entry {
            mean: f64,
            scale: f64,
            count: usize,
            provenance: Regime,
        }
        let map: IndexMap<&str, Entry> = (0..self.n_features())
            .map(|f| {
                (
                    self.feature_names[f].as_str(),
                    Entry {
                        mean: self.mean[f],
                        scale: self.scale[f],
                        count: self.counts[f],
                        provenance: self.provenance,
                    },
                )
            })
            .collect();
        dataset::write_json(path, &map)
    }

    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Entry {
            mean: f64,
            scale: f64,
            count: usize,
            provenance: Regime,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: IndexMap<String, Entry> =
            serde_json::from_str(&text).map_err(|source| Error::Json {
                file: STATS_FILE.into(),
                source,
            })?;
        let provenance = map
            .values()
            .next()
            .map(|e| e.provenance)
            .ok_or_else(|| Error::structural(STATS_FILE, "no features"))?;
        if map.values().any(|e| e.provenance != provenance) {
            return Err(Error::structural(STATS_FILE, "mixed provenance"));
        }
        Ok(Self {
            feature_names: map.keys().cloned().collect(),
            mean: map.values().map(|e| e.mean).collect(),
            scale: map.values().map(|e| e.scale).collect(),
            counts: map.values().map(|e| e.count).collect(),
            provenance,
        })
    }
}

/// Fits statistics over all samples.
pub fn fit_stats(tensor: &TimeSeriesTensor, regime: Regime, maskset: Option<&MaskSet>) -> Result<NormStats> {
    let all: Vec<usize> = (0..tensor.shape().samples).collect();
    fit_stats_on(tensor, regime, maskset, &all)
}

/// Fits statistics over the given samples only (the training split).
///
/// NBM reads every originally observed cell and ignores `maskset`; NAM
/// requires it and skips artificially masked cells.
pub fn fit_stats_on(
    tensor: &TimeSeriesTensor,
    regime: Regime,
    maskset: Option<&MaskSet>,
    samples: &[usize],
) -> Result<NormStats> {
    let shape = tensor.shape();
    let fitting: Mask = match (regime, maskset) {
        (Regime::Nbm, _) => tensor.observed().clone(),
        (Regime::Nam, Some(ms)) => {
            if ms.shape() != shape {
                return Err(Error::Shape(format!(
                    "mask {} vs tensor {shape}",
                    ms.shape()
                )));
            }
            tensor.observed().and_not(&ms.artificial)?
        }
        (Regime::Nam, None) => {
            return Err(Error::Argument(
                "NAM statistics need the artificial mask".into(),
            ))
        }
    };

    let nf = shape.features;
    let mut counts = vec![0usize; nf];
    let mut sums = vec![0.0f64; nf];
    let n = shape.sample_len();
    let values = tensor.values();
    for &s in samples {
        for (i, &v) in values.iter().enumerate().skip(s * n).take(n) {
            if fitting.get_flat(i) {
                let f = i % nf;
                counts[f] += 1;
                sums[f] += v;
            }
        }
    }
    let mean: Vec<f64> = (0..nf)
        .map(|f| if counts[f] == 0 { 0.0 } else { sums[f] / counts[f] as f64 })
        .collect();

    let mut sq = vec![0.0f64; nf];
    for &s in samples {
        for (i, &v) in values.iter().enumerate().skip(s * n).take(n) {
            if fitting.get_flat(i) {
                let f = i % nf;
                let d = v - mean[f];
                sq[f] += d * d;
            }
        }
    }
    let scale = (0..nf)
        .map(|f| {
            if counts[f] < 2 {
                SCALE_FLOOR
            } else {
                (sq[f] / counts[f] as f64).sqrt().max(SCALE_FLOOR)
            }
        })
        .collect();

    Ok(NormStats {
        feature_names: tensor.feature_names.clone(),
        mean,
        scale,
        counts,
        provenance: regime,
    })
}

fn check_features(tensor: &TimeSeriesTensor, stats: &NormStats) -> Result<()> {
    if stats.n_features() != tensor.shape().features {
        return Err(Error::Shape(format!(
            "stats for {} features, tensor has {}",
            stats.n_features(),
            tensor.shape().features
        )));
    }
    Ok(())
}

fn map_observed(tensor: &TimeSeriesTensor, f: impl Fn(usize, f64) -> f64) -> Vec<f64> {
    let nf = tensor.shape().features;
    tensor
        .values()
        .iter()
        .zip(tensor.observed().bits())
        .enumerate()
        .map(|(i, (&v, &o))| if o { f(i % nf, v) } else { SENTINEL })
        .collect()
}

/// `(x - mean) / scale` at observed cells.
pub fn transform(tensor: &TimeSeriesTensor, stats: &NormStats) -> Result<TimeSeriesTensor> {
    check_features(tensor, stats)?;
    let values = map_observed(tensor, |f, v| (v - stats.mean[f]) / stats.scale[f]);
    let mut out = tensor.with_parts(values, tensor.observed().clone());
    out.scale = Scale::Normalized;
    Ok(out)
}

pub fn inverse_transform(tensor: &TimeSeriesTensor, stats: &NormStats) -> Result<TimeSeriesTensor> {
    check_features(tensor, stats)?;
    let values = map_observed(tensor, |f, z| z * stats.scale[f] + stats.mean[f]);
    let mut out = tensor.with_parts(values, tensor.observed().clone());
    out.scale = Scale::Raw;
    Ok(out)
}
