//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! k_folds = 5
//! timing = ["pre_mask", "mini_batch"]
//! normalization = ["NBM", "NAM"]
//!
//! [dataset.cohort]
//! n_samples = 200
//! trajectory = "ar1"
//!
//! [mask]
//! pattern = "random"
//! rate = 0.2
//! strategy = ["augmentation", "overlay"]
//!
//! [[imputers]]
//! name = "Mean"
//! kind = "mean"
//! ```
//!
//! Axis fields accept one value or a list. `panels` replaces the
//! strategy × timing × normalization product with an explicit list, or with
//! the preset `"published"`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adapter::ExternalCommand;
use crate::dataset::{self, LabelVector, TimeSeriesTensor};
use crate::downstream::{Classifier, LinearHyper};
use crate::error::{Error, Result};
use crate::imputers::{ImputerDescriptor, ImputerKind};
use crate::masking::{BlockShape, MaskSpec, Pattern, Strategy};
use crate::metrics::MetricSpace;
use crate::normalization::Regime;
use crate::synth::{self, CohortConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingKind {
    PreMask,
    MiniBatch,
}

impl TimingKind {
    pub fn label(self) -> &'static str {
        match self {
            TimingKind::PreMask => "Pre-Mask",
            TimingKind::MiniBatch => "Mini-Batch Mask",
        }
    }
}

/// One strategy/timing/normalization combination, i.e. one column group of
/// the results table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Panel {
    pub strategy: Strategy,
    pub timing: TimingKind,
    pub normalization: Regime,
}

impl Panel {
    /// e.g. "Augmentation Mini-Batch Mask NBM".
    pub fn name(&self) -> String {
        format!(
            "{} {} {}",
            self.strategy.label(),
            self.timing.label(),
            self.normalization.label()
        )
    }

    /// The six published panels: each strategy under mini-batch NBM,
    /// pre-mask NBM and pre-mask NAM.
    pub fn published() -> Vec<Panel> {
        let mut out = Vec::new();
        for strategy in [Strategy::Augmentation, Strategy::Overlay] {
            for (timing, normalization) in [
                (TimingKind::MiniBatch, Regime::Nbm),
                (TimingKind::PreMask, Regime::Nbm),
                (TimingKind::PreMask, Regime::Nam),
            ] {
                out.push(Panel {
                    strategy,
                    timing,
                    normalization,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelPreset {
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PanelSelection {
    Preset(PanelPreset),
    List(Vec<Panel>),
}

/// Either a dataset directory or a synthetic cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<CohortConfig>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        match (&self.path, &self.cohort) {
            (Some(_), None) => Ok(()),
            (None, Some(c)) => c.validate(),
            _ => Err(Error::Config(
                "dataset needs exactly one of `path` or `cohort`".into(),
            )),
        }
    }

    /// Loads or generates the dataset. Returns the tensor as observed (with
    /// natural missingness), labels and a source description.
    pub fn load(&self) -> Result<(TimeSeriesTensor, LabelVector, String)> {
        self.validate()?;
        if let Some(path) = &self.path {
            let (tensor, labels, manifest) = dataset::load_dataset(path)?;
            let source = if manifest.source.is_empty() {
                path.display().to_string()
            } else {
                manifest.source
            };
            return Ok((tensor, labels, source));
        }
        let cohort_config = self.cohort.as_ref().expect("validated");
        let cohort = synth::build_cohort(cohort_config)?;
        let source = format!(
            "synthetic {:?} cohort, seed {}",
            cohort_config.trajectory, cohort_config.seed
        );
        Ok((cohort.observed_tensor()?, cohort.labels, source))
    }
}

fn default_strategies() -> OneOrMany<Strategy> {
    OneOrMany::Many(vec![Strategy::Augmentation, Strategy::Overlay])
}

fn default_timings() -> OneOrMany<TimingKind> {
    OneOrMany::Many(vec![TimingKind::PreMask, TimingKind::MiniBatch])
}

fn default_regimes() -> OneOrMany<Regime> {
    OneOrMany::Many(vec![Regime::Nbm, Regime::Nam])
}

fn default_rate() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskAxes {
    #[serde(default = "default_pattern")]
    pub pattern: Pattern,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_shape: Option<BlockShape>,
    #[serde(default = "default_strategies")]
    pub strategy: OneOrMany<Strategy>,
}

fn default_pattern() -> Pattern {
    Pattern::Random
}

impl Default for MaskAxes {
    fn default() -> Self {
        Self {
            pattern: default_pattern(),
            rate: default_rate(),
            block_shape: None,
            strategy: default_strategies(),
        }
    }
}

impl MaskAxes {
    pub fn spec(&self, strategy: Strategy, seed: u64) -> MaskSpec {
        MaskSpec {
            pattern: self.pattern,
            strategy,
            rate: self.rate,
            block_shape: self.block_shape,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    NativeLinear,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamConfig {
    pub enabled: bool,
    pub classifier: ClassifierKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        let hyper = LinearHyper::default();
        Self {
            enabled: false,
            classifier: ClassifierKind::NativeLinear,
            learning_rate: hyper.learning_rate,
            epochs: hyper.epochs,
            l2: hyper.l2,
            name: None,
            command: None,
            timeout_secs: None,
        }
    }
}

impl DownstreamConfig {
    pub fn hyper(&self) -> LinearHyper {
        LinearHyper {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            l2: self.l2,
        }
    }

    pub fn external_command(&self) -> Result<Option<ExternalCommand>> {
        match (self.classifier, &self.command) {
            (ClassifierKind::NativeLinear, _) => Ok(None),
            (ClassifierKind::External, None) => Err(Error::Config(
                "downstream.classifier = \"external\" needs downstream.command".into(),
            )),
            (ClassifierKind::External, Some(cmd)) => Ok(Some(
                ExternalCommand::new(self.name.clone().unwrap_or_else(|| "external".into()), cmd)?
                    .with_timeout(self.timeout_secs.map(Duration::from_secs_f64)),
            )),
        }
    }

    /// The classifier with external task directories under `work_dir`.
    pub fn classifier(&self, work_dir: &Path) -> Result<Classifier> {
        Ok(match self.external_command()? {
            None => Classifier::NativeLinear(self.hyper()),
            Some(command) => Classifier::External {
                command,
                work_dir: work_dir.to_path_buf(),
            },
        })
    }
}

fn default_imputers() -> Vec<ImputerDescriptor> {
    [ImputerKind::Mean, ImputerKind::Median, ImputerKind::Locf]
        .into_iter()
        .map(ImputerDescriptor::classical)
        .collect()
}

fn default_k_folds() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_batch_size() -> usize {
    256
}

fn default_epochs() -> u64 {
    1
}

fn default_subprocesses() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub mask: MaskAxes,
    #[serde(default = "default_timings")]
    pub timing: OneOrMany<TimingKind>,
    #[serde(default = "default_regimes")]
    pub normalization: OneOrMany<Regime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<PanelSelection>,
    #[serde(default = "default_imputers")]
    pub imputers: Vec<ImputerDescriptor>,
    #[serde(default = "default_k_folds")]
    pub k_folds: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seed of the stratified fold split, shared by every cell and mask seed.
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default)]
    pub metric_space: MetricSpace,
    /// Mini-batch timing: batch size and number of epochs. Scoring uses the
    /// union of the final epoch's batch masks.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: u64,
    #[serde(default)]
    pub downstream: DownstreamConfig,
    /// Upper bound on concurrently running external processes.
    #[serde(default = "default_subprocesses")]
    pub max_subprocesses: usize,
    /// Keep the out-of-fold imputed tensor of every run.
    #[serde(default)]
    pub save_imputed: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; a relative dataset path is taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(data), Some(base)) = (&config.dataset.path, path.parent()) {
            if data.is_relative() {
                config.dataset.path = Some(base.join(data));
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn panels(&self) -> Vec<Panel> {
        match &self.panels {
            Some(PanelSelection::Preset(PanelPreset::Published)) => Panel::published(),
            Some(PanelSelection::List(list)) => list.clone(),
            None => {
                let mut out = Vec::new();
                for strategy in self.mask.strategy.to_vec() {
                    for timing in self.timing.to_vec() {
                        for normalization in self.normalization.to_vec() {
                            out.push(Panel {
                                strategy,
                                timing,
                                normalization,
                            });
                        }
                    }
                }
                out
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let empty = |name: &str| Err(Error::Config(format!("{name} must not be empty")));
        if self.panels.is_none() {
            if self.mask.strategy.to_vec().is_empty() {
                return empty("mask.strategy");
            }
            if self.timing.to_vec().is_empty() {
                return empty("timing");
            }
            if self.normalization.to_vec().is_empty() {
                return empty("normalization");
            }
        }
        if self.panels().is_empty() {
            return empty("panels");
        }
        if self.imputers.is_empty() {
            return empty("imputers");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        let mut names: Vec<&str> = self.imputers.iter().map(|i| i.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("imputer name {:?} appears twice", w[0])));
        }
        for imputer in &self.imputers {
            imputer.validate()?;
        }
        if self.k_folds < 2 {
            return Err(Error::Config("k_folds must be at least 2".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be at least 1".into()));
        }
        if self.max_subprocesses == 0 {
            return Err(Error::Config("max_subprocesses must be at least 1".into()));
        }
        self.mask
            .spec(Strategy::Augmentation, 0)
            .validate()
            .map_err(|e| Error::Config(format!("mask: {e}")))?;
        if self.downstream.enabled {
            self.downstream.external_command()?;
        }
        Ok(())
    }
}
