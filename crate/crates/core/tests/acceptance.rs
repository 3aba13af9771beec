//! Acceptance suite. Runs every criterion, prints one PASS/FAIL/SKIP line
//! each and exits non-zero if any failed. A positional argument filters
//! criteria by substring.
//!
//! The PhysioNet 2012 criterion needs a preprocessed dataset directory in
//! the maskbench layout, given by `MASKBENCH_PHYSIONET_DIR`.

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maskbench::dataset::{split_kfold, Mask, Shape, TimeSeriesTensor};
use maskbench::downstream::{self, Classifier, LinearHyper};
use maskbench::imputers::{ImputerDescriptor, ImputerKind};
use maskbench::masking::{self, BlockShape, MaskSet, MaskSpec, Pattern, Provenance, Strategy, Timing};
use maskbench::metrics;
use maskbench::normalization::{self, Regime};
use maskbench::runner::{
    self, cell_mask, execute, impute_out_of_fold, normalize_and_mask, render_csv, ExecOptions, ExperimentConfig,
    Panel, TimingKind,
};
use maskbench::synth::{self, CohortConfig, Trajectory};
use maskbench::LabelVector;

enum Outcome {
    Pass(String),
    Skip(String),
}

type Check = fn() -> Outcome;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: Check,
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria = [
        Criterion {
            name: "mask_strategy_invariants",
            budget: Duration::from_secs(10),
            check: mask_strategy_invariants,
        },
        Criterion {
            name: "determinism_24_cell_grid",
            budget: Duration::from_secs(120),
            check: determinism_24_cell_grid,
        },
        Criterion {
            name: "metric_and_auc_oracles",
            budget: Duration::from_secs(10),
            check: metric_and_auc_oracles,
        },
        Criterion {
            name: "analytic_mean_imputer_oracle",
            budget: Duration::from_secs(60),
            check: analytic_mean_imputer_oracle,
        },
        Criterion {
            name: "nbm_nam_separation",
            budget: Duration::from_secs(10),
            check: nbm_nam_separation,
        },
        Criterion {
            name: "physionet_classical_rows",
            budget: Duration::from_secs(600),
            check: physionet_classical_rows,
        },
        Criterion {
            name: "downstream_sanity",
            budget: Duration::from_secs(120),
            check: downstream_sanity,
        },
    ];
    panic::set_hook(Box::new(|_| {}));
    let (mut passed, mut skipped, mut failed) = (0, 0, 0);
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let timing = format!("{:.2} s, budget {} s", elapsed.as_secs_f64(), c.budget.as_secs());
        match result {
            Ok(Outcome::Pass(detail)) if elapsed <= c.budget => {
                passed += 1;
                println!("[PASS] {} ({timing}): {detail}", c.name);
            }
            Ok(Outcome::Pass(detail)) => {
                failed += 1;
                println!("[FAIL] {} ({timing}): over time budget; {detail}", c.name);
            }
            Ok(Outcome::Skip(why)) => {
                skipped += 1;
                println!("[SKIP] {}: {why}", c.name);
            }
            Err(payload) => {
                failed += 1;
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                println!("[FAIL] {} ({timing}): {msg}", c.name);
            }
        }
    }
    println!("acceptance: {passed} passed, {skipped} skipped, {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_observed(rng: &mut ChaCha8Rng, shape: Shape) -> Mask {
    let missing = rng.random_range(0.0..0.6);
    let mut bits: Vec<bool> = (0..shape.len()).map(|_| rng.random::<f64>() >= missing).collect();
    if !bits.iter().any(|&b| b) {
        bits[0] = true;
    }
    Mask::from_bits(shape, bits).unwrap()
}

/// Count of distinct steps (or features) with an artificial cell in one sample.
fn units_in_sample(mask: &Mask, sample: usize, by_step: bool) -> usize {
    let shape = mask.shape();
    let (outer, inner) = if by_step {
        (shape.steps, shape.features)
    } else {
        (shape.features, shape.steps)
    };
    (0..outer)
        .filter(|&u| {
            (0..inner).any(|v| {
                let (t, f) = if by_step { (u, v) } else { (v, u) };
                mask.get(sample, t, f)
            })
        })
        .count()
}

fn eligible(strategy: Strategy, observed: &Mask, i: usize) -> bool {
    strategy == Strategy::Overlay || observed.get_flat(i)
}

fn mask_strategy_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut draws = 0;
    for pattern in [Pattern::Random, Pattern::Temporal, Pattern::Spatial, Pattern::Block] {
        for draw in 0..1000 {
            let shape = Shape::new(rng.random_range(1..20), rng.random_range(1..24), rng.random_range(1..7));
            let observed = random_observed(&mut rng, shape);
            let strategy = if rng.random_bool(0.5) {
                Strategy::Augmentation
            } else {
                Strategy::Overlay
            };
            let block_shape = (pattern == Pattern::Block).then(|| BlockShape {
                steps: rng.random_range(1..=shape.steps),
                features: rng.random_range(1..=shape.features),
            });
            let spec = MaskSpec {
                pattern,
                strategy,
                rate: rng.random_range(0.01..=1.0),
                block_shape,
                seed: rng.random(),
            };
            let set = masking::generate_mask(&spec, &observed).unwrap();
            let ctx = format!("{pattern:?} draw {draw} {spec:?} {shape}");
            draws += 1;

            for i in 0..shape.len() {
                let a = set.artificial.get_flat(i);
                let o = observed.get_flat(i);
                match strategy {
                    Strategy::Augmentation => {
                        assert!(!(a && !o), "augmentation hit an original gap: {ctx}");
                        assert_eq!(set.evaluation.get_flat(i), a, "{ctx}");
                    }
                    Strategy::Overlay => assert_eq!(set.evaluation.get_flat(i), a && o, "{ctx}"),
                }
            }

            let n_eligible = (0..shape.len()).filter(|&i| eligible(strategy, &observed, i)).count();
            match pattern {
                Pattern::Random => {
                    let requested = spec.rate * n_eligible as f64;
                    let achieved = set.artificial.count() as f64;
                    assert!((achieved - requested).abs() <= 1.0, "{achieved} cells vs {requested}: {ctx}");
                }
                Pattern::Temporal | Pattern::Spatial => {
                    let by_step = pattern == Pattern::Temporal;
                    for s in 0..shape.samples {
                        let (outer, inner) = if by_step {
                            (shape.steps, shape.features)
                        } else {
                            (shape.features, shape.steps)
                        };
                        let available = (0..outer)
                            .filter(|&u| {
                                (0..inner).any(|v| {
                                    let (t, f) = if by_step { (u, v) } else { (v, u) };
                                    eligible(strategy, &observed, shape.index(s, t, f))
                                })
                            })
                            .count();
                        let requested = spec.rate * available as f64;
                        let achieved = units_in_sample(&set.artificial, s, by_step) as f64;
                        assert!(
                            (achieved - requested).abs() <= 1.0,
                            "sample {s}: {achieved} units vs {requested}: {ctx}"
                        );
                        // Whole units: every eligible cell of a chosen unit is hidden.
                        for u in 0..outer {
                            let cells: Vec<usize> = (0..inner)
                                .map(|v| {
                                    let (t, f) = if by_step { (u, v) } else { (v, u) };
                                    shape.index(s, t, f)
                                })
                                .filter(|&i| eligible(strategy, &observed, i))
                                .collect();
                            let hidden = cells.iter().filter(|&&i| set.artificial.get_flat(i)).count();
                            assert!(hidden == 0 || hidden == cells.len(), "partial unit: {ctx}");
                        }
                    }
                }
                Pattern::Block => {
                    let b = block_shape.unwrap();
                    let area = (b.steps * b.features) as f64;
                    let requested = spec.rate * n_eligible as f64 / area;
                    let placed = set.provenance.placed_units;
                    assert!((placed as f64 - requested).abs() <= 1.0, "{placed} blocks vs {requested}: {ctx}");
                    assert!(set.artificial.count() as f64 <= placed as f64 * area, "{ctx}");
                    let samples_with_data = (0..shape.samples)
                        .filter(|&s| (0..shape.sample_len()).any(|j| eligible(strategy, &observed, s * shape.sample_len() + j)))
                        .count();
                    if placed <= samples_with_data {
                        // At most one block per sample: each sample's hidden
                        // cells fit inside one block-sized box.
                        let mut masked_samples = 0;
                        for s in 0..shape.samples {
                            let cells: Vec<(usize, usize)> = (0..shape.steps)
                                .flat_map(|t| (0..shape.features).map(move |f| (t, f)))
                                .filter(|&(t, f)| set.artificial.get(s, t, f))
                                .collect();
                            if cells.is_empty() {
                                continue;
                            }
                            masked_samples += 1;
                            let t_span = cells.iter().map(|c| c.0).max().unwrap() - cells.iter().map(|c| c.0).min().unwrap();
                            let f_span = cells.iter().map(|c| c.1).max().unwrap() - cells.iter().map(|c| c.1).min().unwrap();
                            assert!(t_span < b.steps && f_span < b.features, "block overflow: {ctx}");
                        }
                        assert!(masked_samples <= placed, "{ctx}");
                        if strategy == Strategy::Overlay {
                            assert_eq!(masked_samples, placed, "{ctx}");
                            assert_eq!(set.artificial.count() as f64, placed as f64 * area, "{ctx}");
                        }
                    }
                }
            }
        }
    }
    Outcome::Pass(format!("{draws} draws, 4 patterns x 1000"))
}

fn grid_config(n_samples: usize, seeds: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!("seeds = {seeds}\n[dataset.cohort]\nn_samples = {n_samples}\n")).unwrap()
}

fn determinism_24_cell_grid() -> Outcome {
    let config = grid_config(200, "[0, 1, 2]");
    let mut reports = Vec::new();
    for jobs in [None, Some(1)] {
        let out = tempfile::tempdir().unwrap();
        let results = execute(
            &config,
            &ExecOptions {
                jobs,
                out_dir: Some(out.path().to_path_buf()),
            },
        )
        .unwrap();
        assert_eq!(results.len(), 24, "grid size");
        assert!(results.iter().all(|r| !r.failed()), "a cell failed");
        let on_disk = std::fs::read(out.path().join(runner::REPORT_CSV)).unwrap();
        assert_eq!(on_disk, render_csv(&results).unwrap().into_bytes());
        reports.push(on_disk);
    }
    assert_eq!(reports[0], reports[1], "reports differ between runs");
    Outcome::Pass(format!("24 cells x 3 seeds, {} report bytes identical", reports[0].len()))
}

fn double_loop(truth: &[f64], imputed: &[f64], eval: &Mask, square: bool) -> f64 {
    let shape = eval.shape();
    let (mut sum, mut n) = (0.0, 0usize);
    for s in 0..shape.samples {
        for t in 0..shape.steps {
            for f in 0..shape.features {
                if eval.get(s, t, f) {
                    let i = shape.index(s, t, f);
                    let d = truth[i] - imputed[i];
                    sum += if square { d * d } else { d.abs() };
                    n += 1;
                }
            }
        }
    }
    sum / n as f64
}

fn pairwise_roc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut correct, mut ties, mut pos, mut neg) = (0u64, 0u64, 0u64, 0u64);
    for (i, &yi) in labels.iter().enumerate() {
        if yi == 1 {
            pos += 1;
        } else {
            neg += 1;
        }
        if yi != 1 {
            continue;
        }
        for (j, &yj) in labels.iter().enumerate() {
            if yj == 0 {
                if scores[i] > scores[j] {
                    correct += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
    }
    (correct as f64 + 0.5 * ties as f64) / (pos as f64 * neg as f64)
}

/// Step-function average precision: for every distinct threshold, from the
/// highest down, recall gained times precision at that threshold.
fn step_ap(scores: &[f64], labels: &[u8]) -> f64 {
    let total = labels.iter().filter(|&&y| y == 1).count();
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    for tau in thresholds {
        let at: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] == tau).collect();
        let gained = at.iter().filter(|&&i| labels[i] == 1).count();
        if gained == 0 {
            continue;
        }
        let above: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
        let tp = above.iter().filter(|&&i| labels[i] == 1).count();
        ap += (gained as f64 / total as f64) * (tp as f64 / above.len() as f64);
    }
    ap
}

fn metric_and_auc_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let shape = Shape::new(rng.random_range(1..10), rng.random_range(1..20), rng.random_range(1..6));
        let truth: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let imputed: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut bits: Vec<bool> = (0..shape.len()).map(|_| rng.random_bool(0.3)).collect();
        bits[rng.random_range(0..shape.len())] = true;
        let eval = Mask::from_bits(shape, bits).unwrap();
        for square in [false, true] {
            let expected = double_loop(&truth, &imputed, &eval, square);
            let got = if square {
                metrics::masked_mse(&truth, &imputed, &eval).unwrap()
            } else {
                metrics::masked_mae(&truth, &imputed, &eval).unwrap()
            };
            let rel = (got - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            assert!(rel <= 1e-12, "relative error {rel}");
        }
    }
    for k in 0..100 {
        let n = rng.random_range(2..=200);
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.3))).collect();
        labels[0] = 1;
        labels[1] = 0;
        labels.shuffle(&mut rng);
        // Every other instance draws from a small grid to force ties.
        let scores: Vec<f64> = if k % 2 == 0 {
            (0..n).map(|_| rng.random::<f64>()).collect()
        } else {
            (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect()
        };
        let roc = downstream::roc_auc(&scores, &labels).unwrap();
        assert_eq!(roc, pairwise_roc(&scores, &labels), "ROC-AUC instance {k}");
        let ap = downstream::pr_auc(&scores, &labels).unwrap();
        assert_eq!(ap, step_ap(&scores, &labels), "PR-AUC instance {k}");
    }
    Outcome::Pass(format!("100 metric instances (max rel err {worst:.1e}), 100 AUC vectors exact"))
}

fn analytic_mean_imputer_oracle() -> Outcome {
    let config = ExperimentConfig::from_toml_str(
        "seeds = [0]\n\
         panels = [{ strategy = \"augmentation\", timing = \"pre_mask\", normalization = \"NBM\" }]\n\
         imputers = [{ name = \"Mean\", kind = \"mean\" }]\n\
         [mask]\npattern = \"random\"\nrate = 0.2\n\
         [dataset.cohort]\nn_samples = 4000\nn_steps = 48\nn_features = 5\n\
         trajectory = \"stationary_gaussian\"\nmissingness = false\n",
    )
    .unwrap();
    let results = execute(&config, &ExecOptions::default()).unwrap();
    let score = &results[0].seeds[0].ok().expect("cell ran").score;
    let (mse, mae) = (score.mse, score.mae);
    let expected_mae = (2.0 / std::f64::consts::PI).sqrt();
    assert!((mse - 1.0).abs() <= 0.05, "MSE {mse}");
    assert!((mae - expected_mae).abs() <= 0.02, "MAE {mae} vs {expected_mae}");
    Outcome::Pass(format!(
        "MSE {mse:.4} (1.00 +/- 0.05), MAE {mae:.4} ({expected_mae:.3} +/- 0.02), {} cells",
        score.n_eval_cells
    ))
}

fn nbm_nam_separation() -> Outcome {
    // One sample, five steps; each feature's maximum is hidden.
    let f0 = [1.0, 2.0, 3.0, 4.0, 5.0];
    let f1 = [10.0, 40.0, 20.0, 100.0, 30.0];
    let shape = Shape::new(1, 5, 2);
    let values: Vec<f64> = (0..5).flat_map(|t| [f0[t], f1[t]]).collect();
    let data = TimeSeriesTensor::fully_observed(shape, values).unwrap();
    let mut artificial = Mask::empty(shape);
    artificial.set(0, 4, 0, true);
    artificial.set(0, 3, 1, true);
    let spec = MaskSpec::random(Strategy::Augmentation, 0.2, 0);
    let set = MaskSet {
        evaluation: artificial.clone(),
        artificial,
        provenance: Provenance {
            spec,
            timing: Timing::PreMask,
            eligible_cells: 10,
            requested_units: 2.0,
            placed_units: 2,
            seed_derivation: "hand-built".into(),
        },
    };
    let (nbm, _) = normalize_and_mask(&data, &set, Regime::Nbm).unwrap();
    let (nam, masked) = normalize_and_mask(&data, &set, Regime::Nam).unwrap();
    let direct = normalization::fit_stats(&data, Regime::Nam, Some(&set)).unwrap();
    assert_eq!(direct.mean, nam.mean);

    let pop_std = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    let expected = [
        // (NBM mean, NAM mean, NBM std, NAM std)
        (3.0, 2.5, pop_std(&f0), pop_std(&[1.0, 2.0, 3.0, 4.0])),
        (40.0, 25.0, pop_std(&f1), pop_std(&[10.0, 40.0, 20.0, 30.0])),
    ];
    for (f, &(m_nbm, m_nam, s_nbm, s_nam)) in expected.iter().enumerate() {
        assert!(nam.mean[f] < nbm.mean[f], "feature {f}: NAM mean not below NBM");
        assert!((nbm.mean[f] - m_nbm).abs() <= 1e-12, "feature {f} NBM mean {}", nbm.mean[f]);
        assert!((nam.mean[f] - m_nam).abs() <= 1e-12, "feature {f} NAM mean {}", nam.mean[f]);
        assert!((nbm.scale[f] - s_nbm).abs() <= 1e-12, "feature {f} NBM scale");
        assert!((nam.scale[f] - s_nam).abs() <= 1e-12, "feature {f} NAM scale");
    }
    // The visible cells under NAM standardize to exactly zero mean.
    let visible: Vec<f64> = (0..5).filter(|&t| masked.is_observed(0, t, 0)).map(|t| masked.value(0, t, 0)).collect();
    assert!(visible.iter().sum::<f64>().abs() <= 1e-12);
    Outcome::Pass("feature 0: NBM 3.0 vs NAM 2.5; feature 1: NBM 40.0 vs NAM 25.0".into())
}

const PHYSIONET_ENV: &str = "MASKBENCH_PHYSIONET_DIR";

fn physionet_classical_rows() -> Outcome {
    let Some(dir) = std::env::var_os(PHYSIONET_ENV).map(PathBuf::from) else {
        return Outcome::Skip(format!("{PHYSIONET_ENV} not set"));
    };
    let mut config = ExperimentConfig::from_toml_str(
        "seeds = [0, 1, 2, 3, 4]\n\
         panels = [{ strategy = \"augmentation\", timing = \"pre_mask\", normalization = \"NBM\" }]\n\
         [dataset]\npath = \".\"\n[mask]\npattern = \"random\"\nrate = 0.2\n",
    )
    .unwrap();
    config.dataset.path = Some(dir);
    let results = execute(&config, &ExecOptions::default()).unwrap();
    let targets = [("Mean", 0.706, 0.03), ("Median", 0.690, 0.03), ("LOCF", 0.404, 0.05)];
    let mut detail = Vec::new();
    let mut misses = Vec::new();
    for (name, target, tol) in targets {
        let r = results.iter().find(|r| r.cell.imputer.name == name).expect("imputer in grid");
        let mae = r.summary().expect("cell ran").mae.mean;
        detail.push(format!("{name} {mae:.3} ({target} +/- {tol})"));
        if (mae - target).abs() > tol {
            misses.push(name);
        }
    }
    assert!(misses.is_empty(), "outside tolerance: {misses:?}; {}", detail.join(", "));
    Outcome::Pass(detail.join(", "))
}

fn downstream_sanity() -> Outcome {
    let cohort = CohortConfig {
        n_samples: 1000,
        trajectory: Trajectory::Deterioration,
        seed: 11,
        ..CohortConfig::default()
    };
    let built = synth::build_cohort(&cohort).unwrap();
    let data = built.observed_tensor().unwrap();
    let config = grid_config(10, "[0]");
    let panel = Panel {
        strategy: Strategy::Augmentation,
        timing: TimingKind::PreMask,
        normalization: Regime::Nbm,
    };
    let locf = ImputerDescriptor::classical(ImputerKind::Locf);
    let classifier = Classifier::NativeLinear(LinearHyper::default());
    let mut rocs = Vec::new();
    let mut shuffled = Vec::new();
    for seed in 0..3u64 {
        let mask = cell_mask(&config, &panel, data.observed(), seed).unwrap();
        let (_, masked) = normalize_and_mask(&data, &mask, Regime::Nbm).unwrap();
        let folds = split_kfold(&built.labels, 5, seed).unwrap();
        let (imputed, _, _) = impute_out_of_fold(&locf, &masked, &folds).unwrap();
        let score = downstream::evaluate_downstream(&imputed, &built.labels, &folds, &classifier).unwrap();
        assert!(score.roc_auc >= 0.85, "seed {seed}: ROC-AUC {}", score.roc_auc);
        rocs.push(score.roc_auc);

        let mut labels = built.labels.as_slice().to_vec();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(100 + seed));
        let labels = LabelVector::new(labels).unwrap();
        let folds = split_kfold(&labels, 5, seed).unwrap();
        let (imputed, _, _) = impute_out_of_fold(&locf, &masked, &folds).unwrap();
        let control = downstream::evaluate_downstream(&imputed, &labels, &folds, &classifier).unwrap();
        assert!(
            (0.4..=0.6).contains(&control.roc_auc),
            "seed {seed}: shuffled ROC-AUC {}",
            control.roc_auc
        );
        shuffled.push(control.roc_auc);
    }
    Outcome::Pass(format!(
        "LOCF ROC-AUC {:?} (>= 0.85), shuffled {:?} (in [0.4, 0.6])",
        rocs.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
        shuffled.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
    ))
}
