use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn maskbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) {
    let out = maskbench(&["generate", "--out-dir", s(dir), "--n-samples", "30", "--n-steps", "12", "--n-features", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const ZERO_FILL: &str = "sed -e ':a' -e 's/,,/,0,/;ta' -e 's/,$/,0/' {task_dir}/input/data.csv > {task_dir}/output/imputed.csv";

#[test]
fn generate_writes_a_loadable_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = maskbench(&[
        "generate", "--out-dir", s(&data), "--n-samples", "12", "--n-steps", "6", "--with-truth",
    ]);
    assert!(out.status.success());
    for f in ["data.csv", "mask.csv", "labels.csv", "manifest.json", "truth.csv"] {
        assert!(data.join(f).is_file(), "{f}");
    }
    let (tensor, labels, _) = maskbench::dataset::load_dataset(&data).unwrap();
    assert_eq!(tensor.shape().samples, 12);
    assert_eq!(labels.len(), 12);
}

#[test]
fn mask_writes_a_maskset() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let masks = tmp.path().join("mask");
    let out = maskbench(&[
        "mask", "--data", s(&data), "--out-dir", s(&masks), "--pattern", "block", "--block-steps", "3",
        "--block-features", "2", "--strategy", "overlay", "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let set = maskbench::masking::read_maskset(&masks).unwrap();
    assert!(set.artificial.count() > 0);
    assert_eq!(set.provenance.spec.seed, 7);
}

#[test]
fn run_then_report_reproduces_the_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data);
    let out_dir = tmp.path().join("out");
    let out = maskbench(&[
        "run", "--data", s(&data), "--out-dir", s(&out_dir), "--seeds", "0,1", "--k-folds", "3", "--jobs", "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("| LOCF |"));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 24);
    assert!(out_dir.join("config.toml").is_file());

    let again = maskbench(&["report", "--out-dir", s(&out_dir), "--format", "csv"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(String::from_utf8(again.stdout).unwrap(), csv);
}

#[test]
fn identical_runs_give_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(
        &config,
        "seeds = [3, 4]\nk_folds = 3\n[dataset.cohort]\nn_samples = 40\nn_steps = 10\nn_features = 3\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "4")] {
        let dir = tmp.path().join(name);
        let out = maskbench(&["run", "--config", s(&config), "--out-dir", s(&dir), "--jobs", jobs]);
        assert!(out.status.success());
        reports.push(fs::read(dir.join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn external_imputer_runs_through_the_adapter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(
        &config,
        format!(
            "panels = [{{ strategy = \"augmentation\", timing = \"pre_mask\", normalization = \"NBM\" }}]\n\
             k_folds = 3\n\
             [dataset.cohort]\nn_samples = 20\nn_steps = 8\nn_features = 2\n\
             [[imputers]]\nname = \"zero\"\nkind = \"external\"\nexternal_command = \"{}\"\n",
            ZERO_FILL.replace('\\', "\\\\")
        ),
    )
    .unwrap();
    let out = maskbench(&["run", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8(out.stdout).unwrap().contains("| zero |"));
}

#[test]
fn failed_cells_give_exit_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(
        &config,
        "panels = [{ strategy = \"overlay\", timing = \"pre_mask\", normalization = \"NAM\" }]\n\
         k_folds = 3\n\
         [dataset.cohort]\nn_samples = 20\nn_steps = 8\nn_features = 2\n\
         [[imputers]]\nname = \"Mean\"\nkind = \"mean\"\n\
         [[imputers]]\nname = \"broken\"\nkind = \"external\"\nexternal_command = \"exit 1 # {task_dir}\"\n",
    )
    .unwrap();
    let out_dir = tmp.path().join("out");
    let out = maskbench(&["run", "--config", s(&config), "--out-dir", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    let md = fs::read_to_string(out_dir.join("report.md")).unwrap();
    assert!(md.contains("## Failures"));
    let report = maskbench(&["report", "--out-dir", s(&out_dir)]);
    assert_eq!(report.status.code(), Some(2));
}

#[test]
fn fatal_errors_give_exit_code_1() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, "k_folds = 1\n[dataset.cohort]\nn_samples = 20\n").unwrap();
    assert_eq!(maskbench(&["run", "--config", s(&config)]).status.code(), Some(1));
    let missing = tmp.path().join("nothing");
    assert_eq!(maskbench(&["run", "--data", s(&missing)]).status.code(), Some(1));
    assert_eq!(maskbench(&["report", "--out-dir", s(&missing)]).status.code(), Some(1));
}

#[test]
fn dry_run_prints_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("exp.toml");
    fs::write(&config, "[dataset.cohort]\nn_samples = 20\n").unwrap();
    let out = maskbench(&["run", "--config", s(&config), "--dry-run", "--seed", "9", "--published-panels"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed = maskbench::runner::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed.seeds, vec![9]);
    assert_eq!(parsed.panels().len(), 6);
}
