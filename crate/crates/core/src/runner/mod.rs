//! Experiment grid: expansion, execution and reports.
//!
//! Every (cell, seed) run follows the same path:
//!
//! 1. draw the artificial mask over the whole dataset (pre-mask: one fixed
//!    mask; mini-batch: the union of the final epoch's batch masks);
//! 2. normalize, in the order the regime prescribes. NBM fits statistics on
//!    every originally observed cell, transforms, then masks. NAM masks,
//!    fits on the cells that remain visible, then transforms;
//! 3. for each fold, fit the imputer on the training samples' visible cells
//!    and impute the validation samples;
//! 4. score each validation part on its evaluation cells and average over
//!    folds;
//! 5. optionally run the downstream classifier on the out-of-fold imputed
//!    tensor with the same folds.
//!
//! Folds come from `split_seed`, so all cells and mask seeds share them.

mod config;
mod report;

use std::fs;
use std::path::PathBuf;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Sender};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{self, ExternalCommand};
use crate::dataset::{self, split_kfold, DatasetManifest, Fold, LabelVector, TimeSeriesTensor};
use crate::downstream::{self, ClassifierScore};
use crate::error::{Error, Result};
use crate::imputers::{self, FittedImputer, ImputerDescriptor, ImputerKind};
use crate::masking::{self, MaskSet};
use crate::metrics::{self, ImputationScore, MetricSpace};
use crate::normalization::{self, NormStats, Regime};

pub use config::{
    ClassifierKind, DatasetSpec, DownstreamConfig, ExperimentConfig, MaskAxes, OneOrMany, Panel, PanelPreset,
    PanelSelection, TimingKind,
};
pub use report::{
    emit_report, format_mean_std, load_results, render_csv, render_markdown, render_seed_csv, render_timings_csv, write_reports,
    ReportFormat, AGGREGATION, REPORT_CSV, REPORT_MD, SEEDS_CSV, TIMINGS_CSV,
};

pub const RUNS_DIR: &str = "runs";
pub const CELL_FILE: &str = "cell.json";
pub const RESULT_FILE: &str = "result.json";
pub const IMPUTED_CSV: &str = "imputed.csv";

/// One (panel, imputer) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Position in the expanded grid.
    pub index: usize,
    pub id: String,
    pub panel: Panel,
    pub panel_name: String,
    pub imputer: ImputerDescriptor,
}

fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// Panels in configured order, each crossed with every imputer.
pub fn expand_grid(config: &ExperimentConfig) -> Result<Vec<Cell>> {
    config.validate()?;
    let mut cells = Vec::new();
    for panel in config.panels() {
        for imputer in &config.imputers {
            let index = cells.len();
            let timing = match panel.timing {
                TimingKind::PreMask => "premask",
                TimingKind::MiniBatch => "minibatch",
            };
            let id = format!(
                "{index:03}-{}-{timing}-{}-{}",
                slug(panel.strategy.label()),
                slug(panel.normalization.label()),
                slug(&imputer.name)
            );
            cells.push(Cell {
                index,
                id,
                panel,
                panel_name: panel.name(),
                imputer: imputer.clone(),
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    /// `None` when the validation part had no evaluation cells.
    pub score: Option<ImputationScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    /// Fold-averaged MAE and MSE; `n_eval_cells` is the total over folds.
    pub score: ImputationScore,
    pub folds: Vec<FoldScore>,
    /// Imputer fit plus impute, summed over folds.
    pub wall_time_secs: f64,
    /// Features whose central value fell back to the default fill.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_features: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub downstream: Option<ClassifierScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SeedOutcome {
    Ok(SeedResult),
    Failed { seed: u64, error: String },
}

impl SeedOutcome {
    pub fn seed(&self) -> u64 {
        match self {
            SeedOutcome::Ok(r) => r.seed,
            SeedOutcome::Failed { seed, .. } => *seed,
        }
    }

    pub fn ok(&self) -> Option<&SeedResult> {
        match self {
            SeedOutcome::Ok(r) => Some(r),
            SeedOutcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_seeds: usize,
    pub mae: MeanStd,
    pub mse: MeanStd,
    pub wall_time_secs: MeanStd,
    pub roc_auc: Option<MeanStd>,
    pub pr_auc: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub cell: Cell,
    pub space: MetricSpace,
    pub seeds: Vec<SeedOutcome>,
}

impl RunResult {
    pub fn failures(&self) -> impl Iterator<Item = (u64, &str)> {
        self.seeds.iter().filter_map(|s| match s {
            SeedOutcome::Failed { seed, error } => Some((*seed, error.as_str())),
            SeedOutcome::Ok(_) => None,
        })
    }

    pub fn failed(&self) -> bool {
        self.failures().next().is_some()
    }

    /// Mean ± std over the successful seeds; `None` if every seed failed.
    pub fn summary(&self) -> Option<Summary> {
        let ok: Vec<&SeedResult> = self.seeds.iter().filter_map(SeedOutcome::ok).collect();
        let collect = |f: &dyn Fn(&SeedResult) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let downstream: Vec<&ClassifierScore> = ok.iter().filter_map(|r| r.downstream.as_ref()).collect();
        let (roc_auc, pr_auc) = if downstream.len() == ok.len() {
            (
                MeanStd::of(&downstream.iter().map(|d| d.roc_auc).collect::<Vec<_>>()),
                MeanStd::of(&downstream.iter().map(|d| d.pr_auc).collect::<Vec<_>>()),
            )
        } else {
            (None, None)
        };
        Some(Summary {
            n_seeds: ok.len(),
            mae: MeanStd::of(&collect(&|r| r.score.mae))?,
            mse: MeanStd::of(&collect(&|r| r.score.mse))?,
            wall_time_secs: MeanStd::of(&collect(&|r| r.wall_time_secs))?,
            roc_auc,
            pr_auc,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecOptions {
    /// Worker threads; `None` uses all cores.
    pub jobs: Option<usize>,
    /// Where `runs/` and reports go. Without it nothing is written and
    /// external tasks run in a temporary directory.
    pub out_dir: Option<PathBuf>,
}

/// Counting semaphore over a channel of tokens.
struct Semaphore {
    give: Sender<()>,
    take: Receiver<()>,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        let (give, take) = bounded(n);
        for _ in 0..n {
            give.send(()).expect("capacity n");
        }
        Self { give, take }
    }

    fn acquire(&self) -> Permit<'_> {
        self.take.recv().expect("sender lives in self");
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let _ = self.0.give.send(());
    }
}

struct Context<'a> {
    config: &'a ExperimentConfig,
    data: TimeSeriesTensor,
    labels: LabelVector,
    folds: Vec<Fold>,
    source: String,
    work_root: PathBuf,
    persist: bool,
    subprocesses: Semaphore,
}

impl Context<'_> {
    fn seed_dir(&self, cell: &Cell, seed: u64) -> PathBuf {
        self.work_root.join(RUNS_DIR).join(&cell.id).join(seed.to_string())
    }
}

/// Runs the whole grid. Dataset problems abort; failures inside a cell are
/// recorded in its [`RunResult`] and the grid carries on.
pub fn execute(config: &ExperimentConfig, options: &ExecOptions) -> Result<Vec<RunResult>> {
    let cells = expand_grid(config)?;
    let (data, labels, source) = config.dataset.load()?;
    let folds = split_kfold(&labels, config.k_folds, config.split_seed)?;

    let scratch;
    let work_root = match &options.out_dir {
        Some(dir) => dir.clone(),
        None => {
            scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            scratch.path().to_path_buf()
        }
    };
    let ctx = Context {
        config,
        data,
        labels,
        folds,
        source,
        work_root,
        persist: options.out_dir.is_some(),
        subprocesses: Semaphore::new(config.max_subprocesses),
    };
    if options.out_dir.is_some() {
        for cell in &cells {
            let dir = ctx.work_root.join(RUNS_DIR).join(&cell.id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            dataset::write_json(
                &dir.join(CELL_FILE),
                &CellRecord {
                    cell: cell.clone(),
                    space: config.metric_space,
                    seeds: config.seeds.clone(),
                },
            )?;
        }
    }

    let tasks: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| config.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = options.jobs {
        builder = builder.num_threads(jobs.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Argument(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, seed)| {
                let cell = &cells[c];
                let outcome = match run_seed(&ctx, cell, seed) {
                    Ok(r) => SeedOutcome::Ok(r),
                    Err(e) => {
                        log::warn!("{} seed {seed}: {e}", cell.id);
                        SeedOutcome::Failed {
                            seed,
                            error: e.to_string(),
                        }
                    }
                };
                if options.out_dir.is_some() {
                    let dir = ctx.seed_dir(cell, seed);
                    let written = fs::create_dir_all(&dir)
                        .map_err(|e| Error::io(&dir, e))
                        .and_then(|()| dataset::write_json(&dir.join(RESULT_FILE), &outcome));
                    if let Err(e) = written {
                        log::error!("{}: {e}", dir.display());
                    }
                }
                outcome
            })
            .collect()
    });

    let mut outcomes = outcomes.into_iter();
    let results: Vec<RunResult> = cells
        .into_iter()
        .map(|cell| RunResult {
            cell,
            space: config.metric_space,
            seeds: outcomes.by_ref().take(config.seeds.len()).collect(),
        })
        .collect();
    if let Some(dir) = &options.out_dir {
        write_reports(dir, &results)?;
    }
    Ok(results)
}

/// What `runs/<cell>/cell.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct CellRecord {
    pub cell: Cell,
    pub space: MetricSpace,
    pub seeds: Vec<u64>,
}

/// Draws the mask for a cell: pre-mask over the full dataset, or the union
/// of the final epoch's mini-batch masks.
pub fn cell_mask(config: &ExperimentConfig, panel: &Panel, observed: &dataset::Mask, seed: u64) -> Result<MaskSet> {
    let spec = config.mask.spec(panel.strategy, seed);
    match panel.timing {
        TimingKind::PreMask => masking::generate_mask(&spec, observed),
        TimingKind::MiniBatch => masking::epoch_union(&spec, observed, config.epochs - 1, config.batch_size),
    }
}

/// Normalizes and masks in regime order. Returns the statistics and the
/// normalized tensor with the artificial cells hidden.
pub fn normalize_and_mask(
    data: &TimeSeriesTensor,
    maskset: &MaskSet,
    regime: Regime,
) -> Result<(NormStats, TimeSeriesTensor)> {
    match regime {
        Regime::Nbm => {
            let stats = normalization::fit_stats(data, Regime::Nbm, None)?;
            let normalized = normalization::transform(data, &stats)?;
            let masked = masking::apply_mask(&normalized, maskset)?;
            Ok((stats, masked))
        }
        Regime::Nam => {
            let masked_raw = masking::apply_mask(data, maskset)?;
            let stats = normalization::fit_stats(data, Regime::Nam, Some(maskset))?;
            let masked = normalization::transform(&masked_raw, &stats)?;
            Ok((stats, masked))
        }
    }
}

/// Imputes every sample out of fold: each validation part by an imputer
/// fitted on its training part. Returns the dense tensor, the summed
/// fit+impute time and the features that used the fallback fill.
pub fn impute_out_of_fold(
    descriptor: &ImputerDescriptor,
    masked: &TimeSeriesTensor,
    folds: &[Fold],
) -> Result<(TimeSeriesTensor, Duration, Vec<usize>)> {
    let mut out = masked.clone();
    let mut elapsed = Duration::ZERO;
    let mut fallback = vec![false; masked.shape().features];
    for fold in folds {
        let train = masked.select_samples(&fold.train);
        let val = masked.select_samples(&fold.val);
        let (part, took) = metrics::wall_time(|| -> Result<TimeSeriesTensor> {
            let fitted = imputers::fit(descriptor, &train)?;
            if let FittedImputer::Mean(c) | FittedImputer::Median(c) = &fitted {
                for (f, &fb) in c.fallback.iter().enumerate() {
                    fallback[f] |= fb;
                }
            }
            fitted.impute(&val)
        });
        elapsed += took;
        out.scatter_samples(&fold.val, &part?)?;
    }
    let features = fallback
        .iter()
        .enumerate()
        .filter_map(|(f, &fb)| fb.then_some(f))
        .collect();
    Ok((out, elapsed, features))
}

fn run_seed(ctx: &Context<'_>, cell: &Cell, seed: u64) -> Result<SeedResult> {
    let config = ctx.config;
    let persist = ctx.persist;
    let seed_dir = ctx.seed_dir(cell, seed);

    let maskset = cell_mask(config, &cell.panel, ctx.data.observed(), seed)?;
    let (stats, masked) = normalize_and_mask(&ctx.data, &maskset, cell.panel.normalization)?;
    let truth = normalization::transform(&ctx.data, &stats)?;
    if persist {
        masking::write_maskset(&seed_dir.join("mask"), &ctx.data, &maskset)?;
        stats.write(&seed_dir.join(normalization::STATS_FILE))?;
    }

    let (imputed, elapsed, fallback) = match cell.imputer.kind {
        ImputerKind::External => {
            let command = ExternalCommand::new(
                cell.imputer.name.clone(),
                cell.imputer.external_command.clone().unwrap_or_default(),
            )?
            .with_timeout(cell.imputer.timeout_secs.map(Duration::from_secs));
            let mut manifest = DatasetManifest::describe(&masked, ctx.source.clone(), seed);
            manifest.norm_provenance = Some(format!("{} fit over all samples", stats.provenance.label()));
            let _permit = ctx.subprocesses.acquire();
            let (imputed, report) =
                adapter::impute_external(&command, &seed_dir.join("task"), &masked, &maskset.artificial, &manifest)?;
            (imputed, Duration::from_secs_f64(report.wall_time_secs), Vec::new())
        }
        _ => impute_out_of_fold(&cell.imputer, &masked, &ctx.folds)?,
    };

    let mut folds = Vec::with_capacity(ctx.folds.len());
    for (k, fold) in ctx.folds.iter().enumerate() {
        let eval = maskset.evaluation.select_samples(&fold.val);
        let score = if eval.count() == 0 {
            None
        } else {
            let (t, p) = match config.metric_space {
                MetricSpace::Normalized => (truth.select_samples(&fold.val), imputed.select_samples(&fold.val)),
                MetricSpace::Raw => (
                    ctx.data.select_samples(&fold.val),
                    normalization::inverse_transform(&imputed.select_samples(&fold.val), &stats)?,
                ),
            };
            Some(metrics::score(&t, &p, &eval, config.metric_space)?)
        };
        folds.push(FoldScore { fold: k, score });
    }
    let scored: Vec<&ImputationScore> = folds.iter().filter_map(|f| f.score.as_ref()).collect();
    if scored.is_empty() {
        return Err(Error::NoScoreableCells);
    }
    let n = scored.len() as f64;
    let score = ImputationScore {
        mae: scored.iter().map(|s| s.mae).sum::<f64>() / n,
        mse: scored.iter().map(|s| s.mse).sum::<f64>() / n,
        n_eval_cells: scored.iter().map(|s| s.n_eval_cells).sum(),
        space: config.metric_space,
    };

    let downstream = if config.downstream.enabled {
        let classifier = config.downstream.classifier(&seed_dir.join("downstream"))?;
        let _permit = matches!(classifier, downstream::Classifier::External { .. }).then(|| ctx.subprocesses.acquire());
        Some(downstream::evaluate_downstream(&imputed, &ctx.labels, &ctx.folds, &classifier)?)
    } else {
        None
    };
    if persist && config.save_imputed {
        dataset::write_values_csv(&seed_dir.join(IMPUTED_CSV), &imputed)?;
    }

    Ok(SeedResult {
        seed,
        score,
        folds,
        wall_time_secs: elapsed.as_secs_f64(),
        fallback_features: fallback.iter().map(|&f| ctx.data.feature_names[f].clone()).collect(),
        downstream,
    })
}
