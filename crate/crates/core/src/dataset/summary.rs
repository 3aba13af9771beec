use serde::{Deserialize, Serialize};

use super::TimeSeriesTensor;

/// Per-feature statistics over observed cells. `min`/`max`/`mean` are
/// `None` for a feature with no observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub name: String,
    pub observed: usize,
    pub observed_fraction: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

pub fn summarize(tensor: &TimeSeriesTensor) -> Vec<FeatureSummary> {
    let shape = tensor.shape();
    let per_feature = shape.samples * shape.steps;
    let mut count = vec![0usize; shape.features];
    let mut sum = vec![0.0f64; shape.features];
    let mut min = vec![f64::INFINITY; shape.features];
    let mut max = vec![f64::NEG_INFINITY; shape.features];

    for (i, (&v, &o)) in tensor.values().iter().zip(tensor.observed().bits()).enumerate() {
        if !o {
            continue;
        }
        let f = i % shape.features;
        count[f] += 1;
        sum[f] += v;
        min[f] = min[f].min(v);
        max[f] = max[f].max(v);
    }

    (0..shape.features)
        .map(|f| {
            let seen = count[f] > 0;
            FeatureSummary {
                name: tensor.feature_names[f].clone(),
                observed: count[f],
                observed_fraction: if per_feature == 0 {
                    0.0
                } else {
                    count[f] as f64 / per_feature as f64
                },
                min: seen.then_some(min[f]),
                max: seen.then_some(max[f]),
                mean: seen.then(|| sum[f] / count[f] as f64),
            }
        })
        .collect()
}
