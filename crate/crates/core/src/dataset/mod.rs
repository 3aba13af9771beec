//! Tensor data model, dataset directory I/O, stratified folds and summaries.
//!
//! Cells are stored flat in sample-major, step-middle, feature-minor order,
//! which is also the row order of the on-disk CSV layout.

mod io;
mod split;
mod summary;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    export_dataset, load_dataset, read_grid_csv, read_labels, read_manifest, write_json,
    write_labels, write_mask_csv, write_values_csv, Grid, DATA_FILE, LABELS_FILE, MANIFEST_FILE,
    MASK_FILE,
};
pub(crate) use io::{check_same_rows, read_mask_grid, read_value_grid};
pub use split::{split_kfold, Fold};
pub use summary::{summarize, FeatureSummary};

/// Value stored at unobserved cells. Never read as data.
pub const SENTINEL: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub samples: usize,
    pub steps: usize,
    pub features: usize,
}

impl Shape {
    pub fn new(samples: usize, steps: usize, features: usize) -> Self {
        Self {
            samples,
            steps,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.samples * self.steps * self.features
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells per sample.
    pub fn sample_len(&self) -> usize {
        self.steps * self.features
    }

    #[inline]
    pub fn index(&self, sample: usize, step: usize, feature: usize) -> usize {
        (sample * self.steps + step) * self.features + feature
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let feature = index % self.features;
        let rest = index / self.features;
        (rest / self.steps, rest % self.steps, feature)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.samples, self.steps, self.features)
    }
}

/// Binary tensor over a [`Shape`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    shape: Shape,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(shape: Shape) -> Self {
        Self {
            shape,
            bits: vec![false; shape.len()],
        }
    }

    pub fn full(shape: Shape) -> Self {
        Self {
            shape,
            bits: vec![true; shape.len()],
        }
    }

    pub fn from_bits(shape: Shape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} bits for shape {shape}",
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, sample: usize, step: usize, feature: usize) -> bool {
        self.bits[self.shape.index(sample, step, feature)]
    }

    #[inline]
    pub fn set(&mut self, sample: usize, step: usize, feature: usize, value: bool) {
        let i = self.shape.index(sample, step, feature);
        self.bits[i] = value;
    }

    #[inline]
    pub fn get_flat(&self, index: usize) -> bool {
        self.bits[index]
    }

    #[inline]
    pub fn set_flat(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn sample_bits(&self, sample: usize) -> &[bool] {
        let n = self.shape.sample_len();
        &self.bits[sample * n..(sample + 1) * n]
    }

    fn check_shape(&self, other: &Mask) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask> {
        self.check_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Mask {
            shape: self.shape,
            bits,
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// True when every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint_from(&self, other: &Mask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    pub fn select_samples(&self, samples: &[usize]) -> Mask {
        let shape = Shape::new(samples.len(), self.shape.steps, self.shape.features);
        let mut bits = Vec::with_capacity(shape.len());
        for &s in samples {
            bits.extend_from_slice(self.sample_bits(s));
        }
        Mask { shape, bits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Raw,
    Normalized,
}

/// Dense `[samples × steps × features]` values with the paired observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesTensor {
    values: Vec<f64>,
    observed: Mask,
    pub feature_names: Vec<String>,
    /// Timestamp of each step in hours.
    pub step_index: Vec<f64>,
    pub sample_ids: Vec<u64>,
    pub scale: Scale,
}

impl TimeSeriesTensor {
    /// Builds a tensor, zeroing unobserved cells and checking that observed
    /// cells are finite.
    pub fn new(
        mut values: Vec<f64>,
        observed: Mask,
        feature_names: Vec<String>,
        step_index: Vec<f64>,
    ) -> Result<Self> {
        let shape = observed.shape();
        if values.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values for shape {shape}",
                values.len()
            )));
        }
        if feature_names.len() != shape.features {
            return Err(Error::Shape(format!(
                "{} feature names for {} features",
                feature_names.len(),
                shape.features
            )));
        }
        if step_index.len() != shape.steps {
            return Err(Error::Shape(format!(
                "{} timestamps for {} steps",
                step_index.len(),
                shape.steps
            )));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if observed.get_flat(i) {
                if !v.is_finite() {
                    let (sample, step, feature) = shape.coords(i);
                    return Err(Error::Cell {
                        sample,
                        step,
                        feature,
                        message: format!("non-finite value {v} at an observed cell"),
                    });
                }
            } else {
                *v = SENTINEL;
            }
        }
        Ok(Self {
            values,
            observed,
            feature_names,
            step_index,
            sample_ids: (0..shape.samples as u64).collect(),
            scale: Scale::Raw,
        })
    }

    /// Fully observed tensor with default names (`f0`, `f1`, ...) on an hourly grid.
    pub fn fully_observed(shape: Shape, values: Vec<f64>) -> Result<Self> {
        Self::new(
            values,
            Mask::full(shape),
            default_feature_names(shape.features),
            hourly_steps(shape.steps),
        )
    }

    pub fn with_sample_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.shape().samples {
            return Err(Error::Shape(format!(
                "{} sample ids for {} samples",
                ids.len(),
                self.shape().samples
            )));
        }
        self.sample_ids = ids;
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.observed.shape()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &Mask {
        &self.observed
    }

    #[inline]
    pub fn value(&self, sample: usize, step: usize, feature: usize) -> f64 {
        self.values[self.shape().index(sample, step, feature)]
    }

    #[inline]
    pub fn is_observed(&self, sample: usize, step: usize, feature: usize) -> bool {
        self.observed.get(sample, step, feature)
    }

    /// Same metadata, new contents. Used by transforms that keep the grid.
    pub(crate) fn with_parts(&self, values: Vec<f64>, observed: Mask) -> Self {
        debug_assert_eq!(values.len(), observed.shape().len());
        Self {
            values,
            observed,
            feature_names: self.feature_names.clone(),
            step_index: self.step_index.clone(),
            sample_ids: self.sample_ids.clone(),
            scale: self.scale,
        }
    }

    /// Replaces the observation mask, keeping values where still observed.
    pub fn with_observed(&self, observed: Mask) -> Result<Self> {
        if observed.shape() != self.shape() {
            return Err(Error::Shape(format!(
                "mask {} vs tensor {}",
                observed.shape(),
                self.shape()
            )));
        }
        let values = self
            .values
            .iter()
            .zip(observed.bits())
            .map(|(&v, &o)| if o { v } else { SENTINEL })
            .collect();
        Ok(self.with_parts(values, observed))
    }

    /// Copies `values` in with the observation mask set to all-ones.
    /// Fails on non-finite cells.
    pub fn dense_like(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(
            values,
            Mask::full(self.shape()),
            self.feature_names.clone(),
            self.step_index.clone(),
        )?;
        out.sample_ids = self.sample_ids.clone();
        out.scale = self.scale;
        Ok(out)
    }

    pub fn select_samples(&self, samples: &[usize]) -> Self {
        let shape = self.shape();
        let n = shape.sample_len();
        let mut values = Vec::with_capacity(samples.len() * n);
        for &s in samples {
            values.extend_from_slice(&self.values[s * n..(s + 1) * n]);
        }
        Self {
            values,
            observed: self.observed.select_samples(samples),
            feature_names: self.feature_names.clone(),
            step_index: self.step_index.clone(),
            sample_ids: samples.iter().map(|&s| self.sample_ids[s]).collect(),
            scale: self.scale,
        }
    }

    /// Writes the samples of `part` (a selection of this tensor in the order
    /// of `samples`) back into place.
    pub fn scatter_samples(&mut self, samples: &[usize], part: &TimeSeriesTensor) -> Result<()> {
        let shape = self.shape();
        let ps = part.shape();
        if ps.samples != samples.len() || ps.steps != shape.steps || ps.features != shape.features {
            return Err(Error::Shape(format!(
                "cannot scatter {ps} into {shape} at {} samples",
                samples.len()
            )));
        }
        let n = shape.sample_len();
        for (k, &s) in samples.iter().enumerate() {
            self.values[s * n..(s + 1) * n].copy_from_slice(&part.values[k * n..(k + 1) * n]);
            for j in 0..n {
                self.observed.bits[s * n + j] = part.observed.bits[k * n + j];
            }
        }
        Ok(())
    }
}

pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|f| format!("f{f}")).collect()
}

pub fn hourly_steps(n: usize) -> Vec<f64> {
    (0..n).map(|t| t as f64).collect()
}

/// Binary mortality labels (1 = in-hospital death).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if let Some(pos) = labels.iter().position(|&l| l > 1) {
            return Err(Error::Argument(format!(
                "label {} at position {pos} is not 0 or 1",
                labels[pos]
            )));
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.0.iter().filter(|&&l| l == 1).count()
    }

    pub fn select(&self, samples: &[usize]) -> LabelVector {
        LabelVector(samples.iter().map(|&s| self.0[s]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub scale: Scale,
    pub feature_names: Vec<String>,
    pub seed_provenance: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_provenance: Option<String>,
    #[serde(default)]
    pub source: String,
}

impl DatasetManifest {
    pub fn describe(tensor: &TimeSeriesTensor, source: impl Into<String>, seed: u64) -> Self {
        let shape = tensor.shape();
        Self {
            n_samples: shape.samples,
            n_steps: shape.steps,
            n_features: shape.features,
            scale: tensor.scale,
            feature_names: tensor.feature_names.clone(),
            seed_provenance: seed,
            norm_provenance: None,
            source: source.into(),
        }
    }

    /// Checks the manifest against a tensor it claims to describe.
    pub fn validate_against(&self, tensor: &TimeSeriesTensor) -> Result<()> {
        let shape = tensor.shape();
        let counts = [
            ("n_samples", self.n_samples, shape.samples),
            ("n_steps", self.n_steps, shape.steps),
            ("n_features", self.n_features, shape.features),
            ("feature_names", self.feature_names.len(), shape.features),
        ];
        for (key, claimed, actual) in counts {
            if claimed != actual {
                return Err(Error::structural(
                    "manifest.json",
                    format!("{key} = {claimed} but the data has {actual}"),
                ));
            }
        }
        if self.feature_names != tensor.feature_names {
            return Err(Error::structural(
                "manifest.json",
                "feature_names differ from the data header",
            ));
        }
        self.validate_scale()
    }

    pub(crate) fn validate_scale(&self) -> Result<()> {
        if self.scale == Scale::Normalized && self.norm_provenance.is_none() {
            return Err(Error::structural(
                "manifest.json",
                "scale = normalized requires norm_provenance",
            ));
        }
        Ok(())
    }
}
