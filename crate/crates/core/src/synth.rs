//! Synthetic ICU-like cohorts with ground truth everywhere.
//!
//! Labels are drawn first, then one trajectory per sample conditioned on its
//! label. Missingness mechanisms only flip observation flags; values are
//! never touched, so the fully observed tensor remains the ground truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, LabelVector, Mask, Shape, TimeSeriesTensor};
use crate::error::{Error, Result};
use crate::masking::round_half_up;
use crate::seed::{self, Stream};

const AR_COEF: f64 = 0.9;
/// Drift added to positive samples by the end of the stay, in stationary sd.
const DRIFT: f64 = 2.0;
const DRIFT_STEPS: usize = 12;

const VITALS: [&str; 8] = ["heart_rate", "sbp", "dbp", "resp_rate", "spo2", "temp", "gcs", "lactate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trajectory {
    /// IID standard normal cells.
    StationaryGaussian,
    /// AR(1) with coefficient 0.9 and unit stationary variance.
    Ar1,
    /// AR(1) plus a linear drift reaching +2 over the final 12 steps for
    /// positive samples.
    Deterioration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismParams {
    pub protocol_period_hours: usize,
    pub cluster_intensity: f64,
    pub cluster_window_len: usize,
    pub transport_block_len: usize,
    /// Fraction of samples that get one transport block.
    pub transport_fraction: f64,
    pub abnormal_threshold_z: f64,
    pub followup_prob: f64,
}

impl Default for MechanismParams {
    fn default() -> Self {
        Self {
            protocol_period_hours: 4,
            cluster_intensity: 0.8,
            cluster_window_len: 12,
            transport_block_len: 6,
            transport_fraction: 0.1,
            abnormal_threshold_z: 2.0,
            followup_prob: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_samples: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub trajectory: Trajectory,
    pub prevalence: f64,
    /// Apply the four mechanisms; when false the cohort is fully observed.
    pub missingness: bool,
    pub mechanism_params: MechanismParams,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            n_steps: 48,
            n_features: 5,
            trajectory: Trajectory::Ar1,
            prevalence: 0.15,
            missingness: true,
            mechanism_params: MechanismParams::default(),
            seed: 0,
        }
    }
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("n_samples", self.n_samples),
            ("n_steps", self.n_steps),
            ("n_features", self.n_features),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        probability("prevalence", self.prevalence)?;
        if !self.missingness {
            return Ok(());
        }
        let m = &self.mechanism_params;
        probability("cluster_intensity", m.cluster_intensity)?;
        probability("transport_fraction", m.transport_fraction)?;
        probability("followup_prob", m.followup_prob)?;
        if m.protocol_period_hours == 0 {
            return Err(Error::Config("protocol_period_hours must be at least 1".into()));
        }
        if m.transport_block_len > self.n_steps {
            return Err(Error::Config(format!(
                "transport_block_len {} exceeds n_steps {}",
                m.transport_block_len, self.n_steps
            )));
        }
        if m.abnormal_threshold_z.is_nan() || m.abnormal_threshold_z < 0.0 {
            return Err(Error::Config("abnormal_threshold_z must be non-negative".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.n_samples, self.n_steps, self.n_features)
    }
}

pub fn feature_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|f| match VITALS.get(f) {
            Some(name) => (*name).to_string(),
            None => format!("var{f}"),
        })
        .collect()
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws labels and fully observed trajectories.
pub fn generate_cohort(config: &CohortConfig) -> Result<(TimeSeriesTensor, LabelVector)> {
    config.validate()?;
    let shape = config.shape();
    let mut label_rng = seed::rng(config.seed, Stream::CohortLabels, 0, 0, 0);
    let labels: Vec<u8> = (0..shape.samples)
        .map(|_| u8::from(label_rng.random_bool(config.prevalence)))
        .collect();

    let innovation = (1.0 - AR_COEF * AR_COEF).sqrt();
    let drift_steps = DRIFT_STEPS.min(shape.steps);
    let drift_start = shape.steps - drift_steps;
    let mut values = vec![0.0; shape.len()];
    for (s, &label) in labels.iter().enumerate() {
        let mut rng = seed::rng(config.seed, Stream::CohortTrajectory, s as u64, 0, 0);
        for f in 0..shape.features {
            let mut prev = normal(&mut rng);
            for t in 0..shape.steps {
                let x = match config.trajectory {
                    Trajectory::StationaryGaussian => normal(&mut rng),
                    Trajectory::Ar1 | Trajectory::Deterioration if t == 0 => prev,
                    Trajectory::Ar1 | Trajectory::Deterioration => AR_COEF * prev + innovation * normal(&mut rng),
                };
                prev = x;
                let drift = if config.trajectory == Trajectory::Deterioration && label == 1 && t >= drift_start {
                    DRIFT * (t - drift_start + 1) as f64 / drift_steps as f64
                } else {
                    0.0
                };
                values[shape.index(s, t, f)] = x + drift;
            }
        }
    }
    let tensor = TimeSeriesTensor::new(
        values,
        Mask::full(shape),
        feature_names(shape.features),
        dataset::hourly_steps(shape.steps),
    )?;
    Ok((tensor, LabelVector::new(labels)?))
}

/// A generated cohort: fully observed ground truth plus the observation
/// mask left by the missingness mechanisms.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub truth: TimeSeriesTensor,
    pub labels: LabelVector,
    pub observed: Mask,
}

impl Cohort {
    /// The dataset as a harness would load it: truth where observed.
    pub fn observed_tensor(&self) -> Result<TimeSeriesTensor> {
        self.truth.with_observed(self.observed.clone())
    }
}

/// Generates the cohort and, when enabled, applies the mechanisms in the
/// canonical order protocol, clusters, transport, value-dependent.
pub fn build_cohort(config: &CohortConfig) -> Result<Cohort> {
    let (truth, labels) = generate_cohort(config)?;
    let mut observed = truth.observed().clone();
    if config.missingness {
        let m = &config.mechanism_params;
        observed = apply_protocol_missingness(&observed, m.protocol_period_hours)?;
        observed = apply_condition_clusters(&observed, &labels, m.cluster_intensity, m.cluster_window_len, config.seed)?;
        let n_blocks = if m.transport_block_len == 0 {
            0
        } else {
            round_half_up(m.transport_fraction * config.n_samples as f64)
        };
        observed = apply_transport_blocks(&observed, m.transport_block_len, n_blocks, config.seed)?;
        observed = apply_value_dependent(&truth, &observed, m.abnormal_threshold_z, m.followup_prob, config.seed)?;
    }
    Ok(Cohort {
        truth,
        labels,
        observed,
    })
}

/// Keeps only steps on the grid `step % period == 0`, for every feature.
/// With `period > n_steps` only step 0 survives.
pub fn apply_protocol_missingness(observed: &Mask, period_hours: usize) -> Result<Mask> {
    if period_hours == 0 {
        return Err(Error::Argument("protocol period must be at least 1".into()));
    }
    let shape = observed.shape();
    let mut out = observed.clone();
    for s in 0..shape.samples {
        for t in (0..shape.steps).filter(|t| t % period_hours != 0) {
            for f in 0..shape.features {
                out.set(s, t, f, false);
            }
        }
    }
    Ok(out)
}

/// The deterioration window `[start, start + len)` of one sample.
pub fn cluster_window(seed: u64, sample: usize, n_steps: usize, window_len: usize) -> (usize, usize) {
    let len = window_len.min(n_steps);
    let mut rng = seed::rng(seed, Stream::ClusterWindow, sample as u64, 0, 0);
    (rng.random_range(0..=n_steps - len), len)
}

/// Densifies observation inside one random window per positive sample:
/// every unobserved cell there becomes observed with probability
/// `intensity`. Negative samples are untouched.
pub fn apply_condition_clusters(
    observed: &Mask,
    labels: &LabelVector,
    intensity: f64,
    window_len: usize,
    seed: u64,
) -> Result<Mask> {
    let shape = observed.shape();
    let windows: Vec<(usize, usize)> = (0..shape.samples)
        .map(|s| cluster_window(seed, s, shape.steps, window_len))
        .collect();
    apply_condition_windows(observed, labels, intensity, &windows, seed)
}

/// As [`apply_condition_clusters`] with explicit `(start, len)` windows,
/// one per sample.
pub fn apply_condition_windows(
    observed: &Mask,
    labels: &LabelVector,
    intensity: f64,
    windows: &[(usize, usize)],
    seed: u64,
) -> Result<Mask> {
    probability("cluster intensity", intensity)?;
    let shape = observed.shape();
    if labels.len() != shape.samples || windows.len() != shape.samples {
        return Err(Error::Shape(format!(
            "{} labels and {} windows for {} samples",
            labels.len(),
            windows.len(),
            shape.samples
        )));
    }
    let mut out = observed.clone();
    for (s, &label) in labels.as_slice().iter().enumerate() {
        if label != 1 || intensity == 0.0 {
            continue;
        }
        let (start, len) = windows[s];
        if start + len > shape.steps {
            return Err(Error::Argument(format!(
                "window [{start}, {}) exceeds {} steps",
                start + len,
                shape.steps
            )));
        }
        let mut rng = seed::rng(seed, Stream::ClusterFill, s as u64, 0, 0);
        for t in start..start + len {
            for f in 0..shape.features {
                if !out.get(s, t, f) && rng.random_bool(intensity) {
                    out.set(s, t, f, true);
                }
            }
        }
    }
    Ok(out)
}

/// Hides steps `[start, start + len)` of one sample across all features.
pub fn hide_block(observed: &Mask, sample: usize, start: usize, len: usize) -> Result<Mask> {
    let shape = observed.shape();
    if sample >= shape.samples || start + len > shape.steps {
        return Err(Error::Argument(format!(
            "block at sample {sample}, steps [{start}, {}) is outside {shape}",
            start + len
        )));
    }
    let mut out = observed.clone();
    for t in start..start + len {
        for f in 0..shape.features {
            out.set(sample, t, f, false);
        }
    }
    Ok(out)
}

/// Places one all-feature gap of `block_len` steps in each of `n_blocks`
/// distinct samples chosen at random.
pub fn apply_transport_blocks(observed: &Mask, block_len: usize, n_blocks: usize, seed: u64) -> Result<Mask> {
    let shape = observed.shape();
    if block_len > shape.steps {
        return Err(Error::Argument(format!(
            "block length {block_len} exceeds {} steps",
            shape.steps
        )));
    }
    if block_len == 0 || n_blocks == 0 {
        return Ok(observed.clone());
    }
    if n_blocks > shape.samples {
        return Err(Error::Infeasible(format!(
            "{n_blocks} transport blocks need distinct samples, only {} available",
            shape.samples
        )));
    }
    let mut rng = seed::rng(seed, Stream::Transport, 0, 0, 0);
    let chosen = rand::seq::index::sample(&mut rng, shape.samples, n_blocks);
    let mut out = observed.clone();
    for s in chosen.iter() {
        let start = rng.random_range(0..=shape.steps - block_len);
        out = hide_block(&out, s, start, block_len)?;
    }
    Ok(out)
}

/// Follow-up tests: an observed cell whose true value has
/// `|value| > threshold` makes the next step of the same feature observed
/// with probability `followup_prob`. Steps are scanned forward, so a
/// follow-up can trigger another.
pub fn apply_value_dependent(
    truth: &TimeSeriesTensor,
    observed: &Mask,
    threshold: f64,
    followup_prob: f64,
    seed: u64,
) -> Result<Mask> {
    probability("follow-up probability", followup_prob)?;
    let shape = observed.shape();
    if truth.shape() != shape {
        return Err(Error::Shape(format!("truth {} vs mask {shape}", truth.shape())));
    }
    let mut out = observed.clone();
    for s in 0..shape.samples {
        let mut rng = seed::rng(seed, Stream::ValueDependent, s as u64, 0, 0);
        for f in 0..shape.features {
            for t in 0..shape.steps.saturating_sub(1) {
                if out.get(s, t, f) && truth.value(s, t, f).abs() > threshold && rng.random_bool(followup_prob) {
                    out.set(s, t + 1, f, true);
                }
            }
        }
    }
    Ok(out)
}
