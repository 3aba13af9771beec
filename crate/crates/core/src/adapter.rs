//! File-and-subprocess exchange with external imputers and classifiers.
//!
//! A task directory looks like
//!
//! ```text
//! <task_dir>/task.json
//! <task_dir>/input/data.csv            values, empty where unobserved
//! <task_dir>/input/mask.csv            1 = observed
//! <task_dir>/input/mask-artificial.csv 1 = hidden by the harness (impute only)
//! <task_dir>/input/labels.csv          training labels (classify only)
//! <task_dir>/input/manifest.json
//! <task_dir>/output/imputed.csv        written by the plugin (impute)
//! <task_dir>/output/scores.csv         written by the plugin (classify)
//! ```
//!
//! The command template is run with `sh -c` after replacing `{task_dir}` with
//! the task directory path (unquoted). Stdout and stderr go to `stdout.log`
//! and `stderr.log` inside the task directory.
//!
//! Input files are a pure function of the arguments, so a failed task can be
//! rerun from its directory.

use std::collections::HashMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, check_same_rows, read_value_grid, DatasetManifest, Fold, LabelVector, Mask, TimeSeriesTensor,
    DATA_FILE, LABELS_FILE, MANIFEST_FILE, MASK_FILE,
};
use crate::error::{Error, Result};
use crate::masking::ARTIFICIAL_FILE;

pub const TASK_FILE: &str = "task.json";
pub const IMPUTED_FILE: &str = "imputed.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const PLACEHOLDER: &str = "{task_dir}";

/// Relative tolerance on observed cells echoed back by a plugin.
/// Deep models often emit float32, which round-trips to about 6e-8.
pub const PASS_THROUGH_TOLERANCE: f64 = 1e-6;

const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Impute,
    Classify,
}

/// How to launch a plugin.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalCommand {
    pub name: String,
    pub template: String,
    pub timeout: Option<Duration>,
}

impl ExternalCommand {
    pub fn new(name: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains(PLACEHOLDER) {
            return Err(Error::Config(format!("command {template:?} lacks {PLACEHOLDER}")));
        }
        Ok(Self {
            name: name.into(),
            template,
            timeout: None,
        })
    }

    pub fn with_timeout(mut self, timeout: Option<Duration>) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeTask {
    pub task_dir: PathBuf,
    pub kind: TaskKind,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    /// Samples the plugin must score (classify only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub score_ids: Vec<u64>,
}

impl ExchangeTask {
    pub fn input_dir(&self) -> PathBuf {
        self.task_dir.join("input")
    }

    pub fn output_dir(&self) -> PathBuf {
        self.task_dir.join("output")
    }

    fn timeout(&self) -> Option<Duration> {
        self.timeout_secs.map(Duration::from_secs_f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub success: bool,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub wall_time_secs: f64,
    pub stderr: String,
}

impl ExitReport {
    /// Converts a failed run into an [`Error::External`].
    pub fn into_result(self, name: &str) -> Result<ExitReport> {
        if self.success {
            return Ok(self);
        }
        let why = if self.timed_out {
            "timed out".to_string()
        } else {
            match self.exit_code {
                Some(code) => format!("exited with status {code}"),
                None => "was killed by a signal".to_string(),
            }
        };
        let stderr = self.stderr.trim();
        Err(Error::External(if stderr.is_empty() {
            format!("{name} {why}")
        } else {
            format!("{name} {why}: {stderr}")
        }))
    }
}

fn prepare_dirs(task_dir: &Path) -> Result<()> {
    for sub in ["input", "output"] {
        let dir = task_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn task_for(command: &ExternalCommand, task_dir: &Path, kind: TaskKind) -> ExchangeTask {
    ExchangeTask {
        task_dir: task_dir.to_path_buf(),
        kind,
        command: command.template.clone(),
        timeout_secs: command.timeout.map(|d| d.as_secs_f64()),
        score_ids: Vec::new(),
    }
}

/// Writes an imputation task for the post-masking tensor.
///
/// `masked` must already carry the artificial gaps as unobserved cells, so
/// hidden ground truth never reaches the input files.
pub fn export_task(
    masked: &TimeSeriesTensor,
    artificial: &Mask,
    manifest: &DatasetManifest,
    command: &ExternalCommand,
    task_dir: &Path,
) -> Result<ExchangeTask> {
    manifest.validate_against(masked)?;
    if !artificial.is_disjoint_from(masked.observed()) {
        return Err(Error::Argument(
            "artificially masked cells are still observed in the exported tensor".into(),
        ));
    }
    prepare_dirs(task_dir)?;
    let task = task_for(command, task_dir, TaskKind::Impute);
    let input = task.input_dir();
    dataset::write_values_csv(&input.join(DATA_FILE), masked)?;
    dataset::write_mask_csv(&input.join(MASK_FILE), masked, masked.observed())?;
    dataset::write_mask_csv(&input.join(ARTIFICIAL_FILE), masked, artificial)?;
    dataset::write_json(&input.join(MANIFEST_FILE), manifest)?;
    dataset::write_json(&task_dir.join(TASK_FILE), &task)?;
    Ok(task)
}

/// Writes a classification task: features for every sample in `imputed`,
/// labels only for `fold.train`, scores requested for `fold.val`.
pub fn export_classify_task(
    imputed: &TimeSeriesTensor,
    labels: &LabelVector,
    fold: &Fold,
    manifest: &DatasetManifest,
    command: &ExternalCommand,
    task_dir: &Path,
) -> Result<ExchangeTask> {
    manifest.validate_against(imputed)?;
    if labels.len() != imputed.shape().samples {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            imputed.shape().samples
        )));
    }
    prepare_dirs(task_dir)?;
    let mut task = task_for(command, task_dir, TaskKind::Classify);
    task.score_ids = fold.val.iter().map(|&s| imputed.sample_ids[s]).collect();
    let input = task.input_dir();
    let train_ids: Vec<u64> = fold.train.iter().map(|&s| imputed.sample_ids[s]).collect();
    dataset::write_values_csv(&input.join(DATA_FILE), imputed)?;
    dataset::write_mask_csv(&input.join(MASK_FILE), imputed, imputed.observed())?;
    dataset::write_labels(&input.join(LABELS_FILE), &train_ids, &labels.select(&fold.train))?;
    dataset::write_json(&input.join(MANIFEST_FILE), manifest)?;
    dataset::write_json(&task_dir.join(TASK_FILE), &task)?;
    Ok(task)
}

/// Runs the plugin command for `task` and waits for it, killing it on
/// timeout. Never fails because the plugin failed; inspect the report.
pub fn run_external(task: &ExchangeTask) -> Result<ExitReport> {
    let dir = task.task_dir.to_string_lossy();
    let line = task.command.replace(PLACEHOLDER, &dir);
    let stdout_path = task.task_dir.join("stdout.log");
    let stderr_path = task.task_dir.join("stderr.log");
    let stdout = File::create(&stdout_path).map_err(|e| Error::io(&stdout_path, e))?;
    let stderr = File::create(&stderr_path).map_err(|e| Error::io(&stderr_path, e))?;

    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&line)
        .current_dir(&task.task_dir)
        .stdin(Stdio::null())
        .stdout(stdout)
        .stderr(stderr);
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }

    let start = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|e| Error::External(format!("cannot launch sh for {line:?}: {e}")))?;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait().map_err(|e| Error::External(e.to_string()))? {
            break status;
        }
        if task.timeout().is_some_and(|limit| start.elapsed() >= limit) {
            timed_out = true;
            kill_tree(&mut child);
            break child.wait().map_err(|e| Error::External(e.to_string()))?;
        }
        thread::sleep(POLL);
    };
    let wall_time_secs = start.elapsed().as_secs_f64();
    let mut stderr_text = fs::read_to_string(&stderr_path).unwrap_or_default();

    let mut success = status.success() && !timed_out;
    if success {
        let expected = match task.kind {
            TaskKind::Impute => IMPUTED_FILE,
            TaskKind::Classify => SCORES_FILE,
        };
        if !task.output_dir().join(expected).is_file() {
            success = false;
            stderr_text.push_str(&format!("\nplugin exited 0 but wrote no output/{expected}"));
        }
    }
    Ok(ExitReport {
        success,
        exit_code: status.code(),
        timed_out,
        wall_time_secs,
        stderr: stderr_text,
    })
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    {
        // The child leads its own process group; take down anything it spawned.
        let _ = Command::new("kill")
            .args(["-KILL", "--", &format!("-{}", child.id())])
            .stderr(Stdio::null())
            .status();
    }
    let _ = child.kill();
}

/// Loads and validates `output/imputed.csv` against the task inputs.
pub fn import_result(task: &ExchangeTask) -> Result<TimeSeriesTensor> {
    let input_dir = task.input_dir();
    let input = read_value_grid(&input_dir.join(DATA_FILE))?;
    let manifest = dataset::read_manifest(&input_dir.join(MANIFEST_FILE))?;
    let output_path = task.output_dir().join(IMPUTED_FILE);
    let output = read_value_grid(&output_path)?;
    check_same_rows(&input, DATA_FILE, &output, IMPUTED_FILE)?;

    let shape = input.shape();
    let mut values = Vec::with_capacity(shape.len());
    for (i, (inp, out)) in input.cells.iter().zip(&output.cells).enumerate() {
        let cell_error = |message: String| {
            let (sample, step, feature) = shape.coords(i);
            Error::Cell {
                sample,
                step,
                feature,
                message,
            }
        };
        let v = out.ok_or_else(|| cell_error(format!("{IMPUTED_FILE}: empty field")))?;
        if !v.is_finite() {
            return Err(cell_error(format!("{IMPUTED_FILE}: non-finite value {v}")));
        }
        if let Some(x) = inp {
            if (v - x).abs() > PASS_THROUGH_TOLERANCE * x.abs().max(1.0) {
                return Err(cell_error(format!(
                    "{IMPUTED_FILE}: observed value {x} came back as {v}"
                )));
            }
        }
        values.push(v);
    }
    let mut tensor = TimeSeriesTensor::new(
        values,
        Mask::full(shape),
        output.feature_names,
        output.step_index,
    )?
    .with_sample_ids(output.sample_ids)?;
    tensor.scale = manifest.scale;
    Ok(tensor)
}

/// Loads `output/scores.csv` in the order of `task.score_ids`.
pub fn import_scores(task: &ExchangeTask) -> Result<Vec<f64>> {
    let path = task.output_dir().join(SCORES_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|source| Error::Csv {
        file: SCORES_FILE.into(),
        source,
    })?;
    if header.iter().collect::<Vec<_>>() != ["sample_id", "score"] {
        return Err(Error::structural(SCORES_FILE, "header must be sample_id,score"));
    }
    let mut scores = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|source| Error::Csv {
            file: SCORES_FILE.into(),
            source,
        })?;
        let bad = |what: &str| Error::structural(SCORES_FILE, format!("row {}: {what}", row + 1));
        let id: u64 = record[0].trim().parse().map_err(|_| bad("bad sample_id"))?;
        let score: f64 = record[1].trim().parse().map_err(|_| bad("bad score"))?;
        if !score.is_finite() {
            return Err(bad("non-finite score"));
        }
        if scores.insert(id, score).is_some() {
            return Err(bad("duplicate sample_id"));
        }
    }
    task.score_ids
        .iter()
        .map(|id| {
            scores
                .get(id)
                .copied()
                .ok_or_else(|| Error::structural(SCORES_FILE, format!("no score for sample {id}")))
        })
        .collect()
}

/// Export, run and import in one step.
pub fn impute_external(
    command: &ExternalCommand,
    task_dir: &Path,
    masked: &TimeSeriesTensor,
    artificial: &Mask,
    manifest: &DatasetManifest,
) -> Result<(TimeSeriesTensor, ExitReport)> {
    let task = export_task(masked, artificial, manifest, command, task_dir)?;
    let report = run_external(&task)?.into_result(&command.name)?;
    let mut imputed = import_result(&task)?;
    imputed.scale = masked.scale;
    Ok((imputed, report))
}

/// Export, run and import a classification task; returns scores for
/// `fold.val` in order.
pub fn classify_external(
    command: &ExternalCommand,
    task_dir: &Path,
    imputed: &TimeSeriesTensor,
    labels: &LabelVector,
    fold: &Fold,
    manifest: &DatasetManifest,
) -> Result<Vec<f64>> {
    let task = export_classify_task(imputed, labels, fold, manifest, command, task_dir)?;
    run_external(&task)?.into_result(&command.name)?;
    import_scores(&task)
}
