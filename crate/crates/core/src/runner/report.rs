use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CellRecord, MeanStd, RunResult, SeedOutcome, CELL_FILE, RESULT_FILE, RUNS_DIR};
use crate::error::{Error, Result};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_MD: &str = "report.md";
pub const SEEDS_CSV: &str = "seeds.csv";
pub const TIMINGS_CSV: &str = "timings.csv";
/// Scores pool every evaluation cell of a validation part into one mean.
pub const AGGREGATION: &str = "cell_global";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn to_string(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Argument(format!("csv buffer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Argument(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Argument(format!("csv: {e}"))
}

/// One row per cell with unrounded mean and std across seeds. Wall time
/// is left out so that reruns give identical bytes; see [`render_timings_csv`].
pub fn render_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell_id",
        "panel",
        "strategy",
        "timing",
        "normalization",
        "imputer",
        "status",
        "n_seeds",
        "n_failed",
        "space",
        "aggregation",
        "mae_mean",
        "mae_std",
        "mse_mean",
        "mse_std",
        "roc_auc_mean",
        "roc_auc_std",
        "pr_auc_mean",
        "pr_auc_std",
        "error",
    ])
    .map_err(csv_err)?;
    for r in results {
        let summary = r.summary();
        let failures: Vec<String> = r.failures().map(|(s, e)| format!("seed {s}: {e}")).collect();
        let status = match (&summary, failures.is_empty()) {
            (_, true) => "ok",
            (Some(_), false) => "partial",
            (None, false) => "failed",
        };
        let ms = |f: &dyn Fn(&super::Summary) -> Option<MeanStd>| summary.as_ref().and_then(f);
        let mae = ms(&|s| Some(s.mae));
        let mse = ms(&|s| Some(s.mse));
        let roc = ms(&|s| s.roc_auc);
        let pr = ms(&|s| s.pr_auc);
        w.write_record([
            r.cell.id.clone(),
            r.cell.panel_name.clone(),
            r.cell.panel.strategy.label().to_string(),
            r.cell.panel.timing.label().to_string(),
            r.cell.panel.normalization.label().to_string(),
            r.cell.imputer.name.clone(),
            status.to_string(),
            summary.as_ref().map_or(0, |s| s.n_seeds).to_string(),
            failures.len().to_string(),
            r.space.label().to_string(),
            AGGREGATION.to_string(),
            opt(mae.map(|m| m.mean)),
            opt(mae.map(|m| m.std)),
            opt(mse.map(|m| m.mean)),
            opt(mse.map(|m| m.std)),
            opt(roc.map(|m| m.mean)),
            opt(roc.map(|m| m.std)),
            opt(pr.map(|m| m.mean)),
            opt(pr.map(|m| m.std)),
            failures.join("; "),
        ])
        .map_err(csv_err)?;
    }
    to_string(w)
}

/// Per-seed and per-fold scores. Fold rows carry the fold index; the
/// seed-level row has an empty fold column.
pub fn render_seed_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell_id", "seed", "fold", "status", "mae", "mse", "n_eval_cells", "roc_auc", "pr_auc", "error",
    ])
    .map_err(csv_err)?;
    for r in results {
        for outcome in &r.seeds {
            let seed = outcome.seed().to_string();
            match outcome {
                SeedOutcome::Failed { error, .. } => {
                    w.write_record([&r.cell.id, &seed, "", "failed", "", "", "", "", "", error])
                        .map_err(csv_err)?;
                }
                SeedOutcome::Ok(s) => {
                    let d = s.downstream.as_ref();
                    w.write_record([
                        r.cell.id.clone(),
                        seed.clone(),
                        String::new(),
                        "ok".into(),
                        num(s.score.mae),
                        num(s.score.mse),
                        s.score.n_eval_cells.to_string(),
                        opt(d.map(|d| d.roc_auc)),
                        opt(d.map(|d| d.pr_auc)),
                        String::new(),
                    ])
                    .map_err(csv_err)?;
                    for f in &s.folds {
                        let (status, mae, mse, n) = match &f.score {
                            Some(sc) => ("ok", num(sc.mae), num(sc.mse), sc.n_eval_cells.to_string()),
                            None => ("empty", String::new(), String::new(), "0".into()),
                        };
                        w.write_record([
                            r.cell.id.clone(),
                            seed.clone(),
                            f.fold.to_string(),
                            status.into(),
                            mae,
                            mse,
                            n,
                            String::new(),
                            String::new(),
                            String::new(),
                        ])
                        .map_err(csv_err)?;
                    }
                }
            }
        }
    }
    to_string(w)
}

pub fn render_timings_csv(results: &[RunResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cell_id", "seed", "wall_time_secs"]).map_err(csv_err)?;
    for r in results {
        for s in r.seeds.iter().filter_map(SeedOutcome::ok) {
            w.write_record([r.cell.id.clone(), s.seed.to_string(), num(s.wall_time_secs)])
                .map_err(csv_err)?;
        }
    }
    to_string(w)
}

/// `0.211±0.003`; a zero spread prints as `±0.0`.
pub fn format_mean_std(m: &MeanStd) -> String {
    if m.std == 0.0 {
        format!("{:.3}±0.0", m.mean)
    } else {
        format!("{:.3}±{:.3}", m.mean, m.std)
    }
}

/// Imputers as rows and an MAE / MSE / Time (s) group per panel, followed
/// by downstream scores when present and a list of failed runs.
pub fn render_markdown(results: &[RunResult]) -> String {
    let mut panels: Vec<String> = Vec::new();
    let mut imputers: Vec<String> = Vec::new();
    for r in results {
        if !panels.contains(&r.cell.panel_name) {
            panels.push(r.cell.panel_name.clone());
        }
        if !imputers.contains(&r.cell.imputer.name) {
            imputers.push(r.cell.imputer.name.clone());
        }
    }
    let find = |imputer: &str, panel: &str| {
        results
            .iter()
            .find(|r| r.cell.imputer.name == imputer && r.cell.panel_name == panel)
    };
    let space = results.first().map_or("normalized", |r| r.space.label());

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Imputation error, mean±std over seeds. Metric space: {space}. Aggregation: {AGGREGATION}.\n"
    );
    let mut header = String::from("| Imputer |");
    let mut rule = String::from("|---|");
    for p in &panels {
        let _ = write!(header, " {p} MAE | {p} MSE | {p} Time (s) |");
        rule.push_str("---|---|---|");
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for imp in &imputers {
        let mut row = format!("| {imp} |");
        for p in &panels {
            match find(imp, p).and_then(RunResult::summary) {
                Some(s) => {
                    let _ = write!(
                        row,
                        " {} | {} | {} |",
                        format_mean_std(&s.mae),
                        format_mean_std(&s.mse),
                        format_mean_std(&s.wall_time_secs)
                    );
                }
                None => row.push_str(" n/a | n/a | n/a |"),
            }
        }
        let _ = writeln!(out, "{row}");
    }

    let has_downstream = results
        .iter()
        .filter_map(RunResult::summary)
        .any(|s| s.roc_auc.is_some());
    if has_downstream {
        let _ = writeln!(out, "\nDownstream classification, mean±std over seeds.\n");
        let mut header = String::from("| Imputer |");
        let mut rule = String::from("|---|");
        for p in &panels {
            let _ = write!(header, " {p} ROC-AUC | {p} PR-AUC |");
            rule.push_str("---|---|");
        }
        let _ = writeln!(out, "{header}\n{rule}");
        for imp in &imputers {
            let mut row = format!("| {imp} |");
            for p in &panels {
                let s = find(imp, p).and_then(RunResult::summary);
                match s.as_ref().and_then(|s| s.roc_auc.zip(s.pr_auc)) {
                    Some((roc, pr)) => {
                        let _ = write!(row, " {} | {} |", format_mean_std(&roc), format_mean_std(&pr));
                    }
                    None => row.push_str(" n/a | n/a |"),
                }
            }
            let _ = writeln!(out, "{row}");
        }
    }

    let failures: Vec<String> = results
        .iter()
        .flat_map(|r| r.failures().map(move |(s, e)| format!("- {} seed {s}: {e}", r.cell.id)))
        .collect();
    if !failures.is_empty() {
        let _ = writeln!(out, "\n## Failures\n");
        for f in failures {
            let _ = writeln!(out, "{f}");
        }
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one report file into `out_dir` and returns its path.
pub fn emit_report(results: &[RunResult], format: ReportFormat, out_dir: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (name, text) = match format {
        ReportFormat::Csv => (REPORT_CSV, render_csv(results)?),
        ReportFormat::Markdown => (REPORT_MD, render_markdown(results)),
    };
    let path = out_dir.join(name);
    write_file(&path, &text)?;
    Ok(path)
}

/// Writes every report variant into `out_dir`.
pub fn write_reports(out_dir: &Path, results: &[RunResult]) -> Result<()> {
    emit_report(results, ReportFormat::Csv, out_dir)?;
    emit_report(results, ReportFormat::Markdown, out_dir)?;
    write_file(&out_dir.join(SEEDS_CSV), &render_seed_csv(results)?)?;
    write_file(&out_dir.join(TIMINGS_CSV), &render_timings_csv(results)?)
}

/// Rebuilds results from the run directories under `out_dir`. A seed
/// without a result file counts as failed.
pub fn load_results(out_dir: &Path) -> Result<Vec<RunResult>> {
    let runs = out_dir.join(RUNS_DIR);
    let entries = fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))?;
    let mut records = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&runs, e))?;
        let cell_file = entry.path().join(CELL_FILE);
        if !cell_file.is_file() {
            continue;
        }
        let text = fs::read_to_string(&cell_file).map_err(|e| Error::io(&cell_file, e))?;
        let record: CellRecord = serde_json::from_str(&text).map_err(|e| Error::Structural {
            file: cell_file.display().to_string(),
            message: e.to_string(),
        })?;
        records.push((entry.path(), record));
    }
    if records.is_empty() {
        return Err(Error::Argument(format!("no run directories under {}", runs.display())));
    }
    records.sort_by_key(|(_, r)| r.cell.index);
    let mut results = Vec::with_capacity(records.len());
    for (dir, record) in records {
        let mut seeds = Vec::with_capacity(record.seeds.len());
        for &seed in &record.seeds {
            let path = dir.join(seed.to_string()).join(RESULT_FILE);
            let outcome = match fs::read_to_string(&path) {
                Ok(text) => serde_json::from_str(&text).map_err(|e| Error::Structural {
                    file: path.display().to_string(),
                    message: e.to_string(),
                })?,
                Err(_) => SeedOutcome::Failed {
                    seed,
                    error: "no result file".into(),
                },
            };
            seeds.push(outcome);
        }
        results.push(RunResult {
            cell: record.cell,
            space: record.space,
            seeds,
        });
    }
    Ok(results)
}
