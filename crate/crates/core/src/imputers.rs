//! Classical baselines: per-feature mean, per-feature median and last
//! observation carried forward.
//!
//! Central values are fitted on the visible cells of the training tensor
//! (observed after artificial masking), so masked ground truth never
//! reaches an imputer. External imputers share [`ImputerDescriptor`] but run
//! through [`crate::adapter`].

use serde::{Deserialize, Serialize};

use crate::dataset::TimeSeriesTensor;
use crate::error::{Error, Result};

/// Fill for features with no visible training cells and for LOCF leading
/// gaps. In normalized space this is the feature mean.
pub const FALLBACK_FILL: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputerKind {
    Mean,
    Median,
    Locf,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitScope {
    #[default]
    TrainVisible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerDescriptor {
    pub name: String,
    pub kind: ImputerKind,
    #[serde(default)]
    pub fit_scope: FitScope,
    /// Shell command template containing `{task_dir}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
}

impl ImputerDescriptor {
    pub fn classical(kind: ImputerKind) -> Self {
        let name = match kind {
            ImputerKind::Mean => "Mean",
            ImputerKind::Median => "Median",
            ImputerKind::Locf => "LOCF",
            ImputerKind::External => "External",
        };
        Self {
            name: name.into(),
            kind,
            fit_scope: FitScope::TrainVisible,
            external_command: None,
            timeout_secs: None,
        }
    }

    pub fn external(name: impl Into<String>, command: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ImputerKind::External,
            fit_scope: FitScope::TrainVisible,
            external_command: Some(command.into()),
            timeout_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.external_command) {
            (ImputerKind::External, None) => Err(Error::Config(format!(
                "imputer {:?}: external kind needs external_command",
                self.name
            ))),
            (ImputerKind::External, Some(cmd)) if !cmd.contains("{task_dir}") => Err(Error::Config(
                format!("imputer {:?}: command must contain {{task_dir}}", self.name),
            )),
            (ImputerKind::External, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Config(format!(
                "imputer {:?}: external_command is only valid for external kind",
                self.name
            ))),
            (_, None) => Ok(()),
        }
    }
}

/// Per-feature fill values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralValues {
    pub values: Vec<f64>,
    /// Features that had no visible cells and use [`FALLBACK_FILL`].
    pub fallback: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedImputer {
    Mean(CentralValues),
    Median(CentralValues),
    Locf,
}

fn visible_by_feature(train: &TimeSeriesTensor) -> Vec<Vec<f64>> {
    let nf = train.shape().features;
    let mut columns = vec![Vec::new(); nf];
    for (i, (&v, &o)) in train.values().iter().zip(train.observed().bits()).enumerate() {
        if o {
            columns[i % nf].push(v);
        }
    }
    columns
}

fn central(train: &TimeSeriesTensor, pick: impl Fn(&mut [f64]) -> f64) -> CentralValues {
    let (values, fallback) = visible_by_feature(train)
        .into_iter()
        .map(|mut col| {
            if col.is_empty() {
                (FALLBACK_FILL, true)
            } else {
                (pick(&mut col), false)
            }
        })
        .unzip();
    CentralValues { values, fallback }
}

fn mean(col: &mut [f64]) -> f64 {
    col.iter().sum::<f64>() / col.len() as f64
}

fn median(col: &mut [f64]) -> f64 {
    col.sort_unstable_by(f64::total_cmp);
    let n = col.len();
    if n % 2 == 1 {
        col[n / 2]
    } else {
        (col[n / 2 - 1] + col[n / 2]) / 2.0
    }
}

/// Fits a classical imputer on the post-masking training tensor.
pub fn fit(descriptor: &ImputerDescriptor, train: &TimeSeriesTensor) -> Result<FittedImputer> {
    descriptor.validate()?;
    match descriptor.kind {
        ImputerKind::Mean => Ok(FittedImputer::Mean(central(train, mean))),
        ImputerKind::Median => Ok(FittedImputer::Median(central(train, median))),
        ImputerKind::Locf => Ok(FittedImputer::Locf),
        ImputerKind::External => Err(Error::Argument(format!(
            "imputer {:?} is external and runs through the adapter",
            descriptor.name
        ))),
    }
}

impl FittedImputer {
    /// Fills every unobserved cell. Observed cells pass through bit-exactly.
    pub fn impute(&self, tensor: &TimeSeriesTensor) -> Result<TimeSeriesTensor> {
        let shape = tensor.shape();
        let observed = tensor.observed();
        let mut values = tensor.values().to_vec();
        match self {
            FittedImputer::Mean(c) | FittedImputer::Median(c) => {
                if c.values.len() != shape.features {
                    return Err(Error::Shape(format!(
                        "fitted on {} features, tensor has {}",
                        c.values.len(),
                        shape.features
                    )));
                }
                for (i, v) in values.iter_mut().enumerate() {
                    if !observed.get_flat(i) {
                        *v = c.values[i % shape.features];
                    }
                }
            }
            FittedImputer::Locf => {
                for s in 0..shape.samples {
                    for f in 0..shape.features {
                        let mut last = FALLBACK_FILL;
                        for t in 0..shape.steps {
                            let i = shape.index(s, t, f);
                            if observed.get_flat(i) {
                                last = values[i];
                            } else {
                                values[i] = last;
                            }
                        }
                    }
                }
            }
        }
        tensor.dense_like(values)
    }
}
