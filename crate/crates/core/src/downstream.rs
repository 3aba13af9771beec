//! Mortality prediction from imputed series: pooled features, a logistic
//! regression baseline and exact ranking metrics.

use serde::{Deserialize, Serialize};

use crate::adapter::{self, ExternalCommand};
use crate::dataset::{DatasetManifest, Fold, LabelVector, TimeSeriesTensor};
use crate::error::{Error, Result};

/// Statistics pooled per feature, in column order.
pub const POOLED_STATS: [&str; 4] = ["mean", "min", "max", "last"];

const STD_FLOOR: f64 = 1e-8;

/// Row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub column_names: Vec<String>,
}

impl FeatureMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            rows: rows.len(),
            cols: self.cols,
            data,
            column_names: self.column_names.clone(),
        }
    }
}

/// Pools each (sample, feature) series into mean, min, max and last value.
///
/// Columns are feature-major: `4f + k` holds statistic `POOLED_STATS[k]` of
/// feature `f`. The tensor is expected to be dense; unobserved cells
/// contribute their stored sentinel.
pub fn featurize_pooled(tensor: &TimeSeriesTensor) -> FeatureMatrix {
    let shape = tensor.shape();
    let cols = POOLED_STATS.len() * shape.features;
    let mut data = Vec::with_capacity(shape.samples * cols);
    for s in 0..shape.samples {
        for f in 0..shape.features {
            let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for t in 0..shape.steps {
                let v = tensor.value(s, t, f);
                sum += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if shape.steps == 0 {
                data.extend_from_slice(&[0.0; 4]);
            } else {
                data.extend_from_slice(&[sum / shape.steps as f64, lo, hi, tensor.value(s, shape.steps - 1, f)]);
            }
        }
    }
    let column_names = tensor
        .feature_names
        .iter()
        .flat_map(|name| POOLED_STATS.iter().map(move |stat| format!("{name}_{stat}")))
        .collect();
    FeatureMatrix {
        rows: shape.samples,
        cols,
        data,
        column_names,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-3,
        }
    }
}

/// Logistic regression on internally standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Regularized mean log-loss before each update and after the last.
    pub loss_history: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_binary(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Full-batch gradient descent from zero weights. Deterministic: there is
/// no sampling anywhere in training.
pub fn train_linear(features: &FeatureMatrix, labels: &[u8], hyper: LinearHyper) -> Result<LinearModel> {
    if labels.len() != features.rows {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            features.rows
        )));
    }
    check_binary(labels)?;
    let (n, d) = (features.rows, features.cols);
    let mut center = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for r in 0..n {
        for (c, x) in features.row(r).iter().enumerate() {
            center[c] += x;
        }
    }
    center.iter_mut().for_each(|m| *m /= n as f64);
    for r in 0..n {
        for (c, x) in features.row(r).iter().enumerate() {
            scale[c] += (x - center[c]).powi(2);
        }
    }
    scale
        .iter_mut()
        .for_each(|s| *s = (*s / n as f64).sqrt().max(STD_FLOOR));
    let x: Vec<f64> = (0..n * d)
        .map(|i| (features.data[i] - center[i % d]) / scale[i % d])
        .collect();
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();

    let mut model = LinearModel {
        center,
        scale,
        weights: vec![0.0; d],
        bias: 0.0,
        loss_history: Vec::with_capacity(hyper.epochs + 1),
    };
    let mut grad = vec![0.0; d];
    for epoch in 0..=hyper.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (mut grad_b, mut loss) = (0.0, 0.0);
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let z = model.bias + row.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>();
            loss += softplus(z) - y[r] * z;
            let g = sigmoid(z) - y[r];
            grad_b += g;
            for (gc, a) in grad.iter_mut().zip(row) {
                *gc += g * a;
            }
        }
        let penalty: f64 = model.weights.iter().map(|w| w * w).sum::<f64>() * hyper.l2 / 2.0;
        model.loss_history.push(loss / n as f64 + penalty);
        if epoch == hyper.epochs {
            break;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= hyper.learning_rate * (g / n as f64 + hyper.l2 * *w);
        }
        model.bias -= hyper.learning_rate * grad_b / n as f64;
    }
    Ok(model)
}

impl LinearModel {
    /// Positive-class probabilities for each row.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        if features.cols != self.weights.len() {
            return Err(Error::Shape(format!(
                "model has {} inputs, matrix {} columns",
                self.weights.len(),
                features.cols
            )));
        }
        Ok((0..features.rows)
            .map(|r| {
                let z = features
                    .row(r)
                    .iter()
                    .enumerate()
                    .map(|(c, v)| (v - self.center[c]) / self.scale[c] * self.weights[c])
                    .sum::<f64>();
                sigmoid(self.bias + z)
            })
            .collect())
    }
}

fn ranked(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, u8)>> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("non-finite score {bad}")));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs)
}

/// Iterates tie groups of a sorted list as `(positives, negatives)`.
fn tie_groups(pairs: &[(f64, u8)]) -> impl Iterator<Item = (u64, u64)> + '_ {
    pairs
        .chunk_by(|a, b| a.0 == b.0)
        .map(|g| {
            let pos = g.iter().filter(|p| p.1 == 1).count() as u64;
            (pos, g.len() as u64 - pos)
        })
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting
/// one half. Computed from integer pair counts, so the result is the
/// correctly rounded value of the exact fraction.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_binary(labels)?;
    let pairs = ranked(scores, labels)?;
    let (mut correct, mut ties, mut neg_below) = (0u128, 0u128, 0u128);
    for (p, n) in tie_groups(&pairs) {
        correct += u128::from(p) * neg_below;
        ties += u128::from(p) * u128::from(n);
        neg_below += u128::from(n);
    }
    Ok((2 * correct + ties) as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// Average precision: the sum over descending score thresholds of
/// recall increment times precision, with tied scores forming one step.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let total = labels.iter().filter(|&&y| y == 1).count();
    if total == 0 {
        return Err(Error::Argument("no positive labels".into()));
    }
    let mut pairs = ranked(scores, labels)?;
    pairs.reverse();
    let (mut tp, mut seen, mut ap) = (0u64, 0u64, 0.0);
    for (p, n) in tie_groups(&pairs) {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += (p as f64 / total as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    NativeLinear(LinearHyper),
    /// Plugin invoked once per fold; task directories go under `work_dir`.
    External {
        command: ExternalCommand,
        work_dir: std::path::PathBuf,
    },
}

impl Classifier {
    pub fn name(&self) -> &str {
        match self {
            Classifier::NativeLinear(_) => "native_linear",
            Classifier::External { command, .. } => &command.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub roc_auc: f64,
    pub pr_auc: f64,
    /// Positives and negatives over the scored validation folds.
    pub n_pos: usize,
    pub n_neg: usize,
    pub classifier_name: String,
    pub folds_scored: usize,
}

/// Trains on each fold's training part and scores its validation part;
/// AUCs are averaged over folds. Folds whose validation labels are single
/// class are skipped with a warning.
pub fn evaluate_downstream(
    imputed: &TimeSeriesTensor,
    labels: &LabelVector,
    folds: &[Fold],
    classifier: &Classifier,
) -> Result<ClassifierScore> {
    if labels.len() != imputed.shape().samples {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            labels.len(),
            imputed.shape().samples
        )));
    }
    let features = featurize_pooled(imputed);
    let (mut roc, mut pr, mut n_pos, mut n_neg, mut scored) = (0.0, 0.0, 0, 0, 0);
    for (k, fold) in folds.iter().enumerate() {
        let val_labels = labels.select(&fold.val);
        let pos = val_labels.positives();
        if pos == 0 || pos == val_labels.len() {
            log::warn!("fold {k}: validation labels are single-class, skipping");
            continue;
        }
        let scores = match classifier {
            Classifier::NativeLinear(hyper) => {
                let train_labels = labels.select(&fold.train);
                let model = train_linear(&features.select_rows(&fold.train), train_labels.as_slice(), *hyper)?;
                model.predict(&features.select_rows(&fold.val))?
            }
            Classifier::External { command, work_dir } => {
                let manifest = DatasetManifest {
                    norm_provenance: Some("imputed".into()),
                    ..DatasetManifest::describe(imputed, "imputed", 0)
                };
                adapter::classify_external(
                    command,
                    &work_dir.join(format!("fold-{k}")),
                    imputed,
                    labels,
                    fold,
                    &manifest,
                )?
            }
        };
        roc += roc_auc(&scores, val_labels.as_slice())?;
        pr += pr_auc(&scores, val_labels.as_slice())?;
        n_pos += pos;
        n_neg += val_labels.len() - pos;
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Argument("every fold had a single-class validation set".into()));
    }
    Ok(ClassifierScore {
        roc_auc: roc / scored as f64,
        pr_auc: pr / scored as f64,
        n_pos,
        n_neg,
        classifier_name: classifier.name().to_string(),
        folds_scored: scored,
    })
}
