//! Masked imputation accuracy.
//!
//! Errors are aggregated cell-globally: every evaluation cell carries equal
//! weight regardless of which sample it belongs to. Sums run in flat index
//! order so results are reproducible bit for bit.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::{Mask, TimeSeriesTensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpace {
    #[default]
    Normalized,
    Raw,
}

impl MetricSpace {
    pub fn label(self) -> &'static str {
        match self {
            MetricSpace::Normalized => "normalized",
            MetricSpace::Raw => "raw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImputationScore {
    pub mae: f64,
    pub mse: f64,
    pub n_eval_cells: usize,
    pub space: MetricSpace,
}

fn check(truth: &[f64], imputed: &[f64], mask: &Mask) -> Result<()> {
    if truth.len() != imputed.len() || truth.len() != mask.shape().len() {
        return Err(Error::Shape(format!(
            "truth has {} cells, imputed {}, mask {}",
            truth.len(),
            imputed.len(),
            mask.shape().len()
        )));
    }
    if mask.count() == 0 {
        return Err(Error::NoScoreableCells);
    }
    Ok(())
}

fn masked_mean(truth: &[f64], imputed: &[f64], mask: &Mask, err: impl Fn(f64) -> f64) -> Result<f64> {
    check(truth, imputed, mask)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&t, &p), &m) in truth.iter().zip(imputed).zip(mask.bits()) {
        if m {
            sum += err(t - p);
            n += 1;
        }
    }
    Ok(sum / n as f64)
}

/// Mean absolute error over the cells set in `eval_mask`.
pub fn masked_mae(truth: &[f64], imputed: &[f64], eval_mask: &Mask) -> Result<f64> {
    masked_mean(truth, imputed, eval_mask, f64::abs)
}

/// Mean squared error over the cells set in `eval_mask`.
pub fn masked_mse(truth: &[f64], imputed: &[f64], eval_mask: &Mask) -> Result<f64> {
    masked_mean(truth, imputed, eval_mask, |d| d * d)
}

pub fn score(
    truth: &TimeSeriesTensor,
    imputed: &TimeSeriesTensor,
    eval_mask: &Mask,
    space: MetricSpace,
) -> Result<ImputationScore> {
    if truth.shape() != imputed.shape() {
        return Err(Error::Shape(format!("truth {} vs imputed {}", truth.shape(), imputed.shape())));
    }
    Ok(ImputationScore {
        mae: masked_mae(truth.values(), imputed.values(), eval_mask)?,
        mse: masked_mse(truth.values(), imputed.values(), eval_mask)?,
        n_eval_cells: eval_mask.count(),
        space,
    })
}

/// Runs `f` and returns its output with the monotonic elapsed time.
pub fn wall_time<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Shape;
    use rand::{Rng, SeedableRng};

    fn mask(bits: &[u8]) -> Mask {
        Mask::from_bits(Shape::new(1, bits.len(), 1), bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn hand_example() {
        let m = mask(&[1, 0, 1]);
        assert_eq!(masked_mae(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], &m).unwrap(), 0.75);
        assert_eq!(masked_mse(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], &m).unwrap(), 0.625);
        assert_eq!(masked_mae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &m).unwrap(), 0.0);
    }

    #[test]
    fn empty_mask_is_an_error() {
        assert!(matches!(
            masked_mae(&[1.0], &[2.0], &mask(&[0])),
            Err(Error::NoScoreableCells)
        ));
        assert!(masked_mse(&[1.0], &[2.0, 3.0], &mask(&[1])).is_err());
    }

    #[test]
    fn unmasked_cells_do_not_matter() {
        let m = mask(&[1, 0, 1]);
        let a = masked_mae(&[1.0, 2.0, 3.0], &[1.5, 2.0, 2.0], &m).unwrap();
        let b = masked_mae(&[1.0, 2.0, 3.0], &[1.5, 1e9, 2.0], &m).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn mse_is_homogeneous() {
        let m = mask(&[1, 1, 0, 1]);
        let truth = [0.3, -1.0, 4.0, 2.0];
        let imputed = [0.1, 0.5, 0.0, 2.5];
        let doubled: Vec<f64> = truth.iter().zip(&imputed).map(|(t, p)| t - 2.0 * (t - p)).collect();
        let a = masked_mse(&truth, &imputed, &m).unwrap();
        let b = masked_mse(&truth, &doubled, &m).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn wall_time_is_positive() {
        let (v, d) = wall_time(|| (0..1000u64).sum::<u64>());
        assert_eq!(v, 499_500);
        assert!(d > Duration::ZERO);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let shape = Shape::new(10, 10, 5);
        for _ in 0..50 {
            let truth: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let imputed: Vec<f64> = (0..shape.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
            let mut bits: Vec<bool> = (0..shape.len()).map(|_| rng.random_bool(0.3)).collect();
            bits[0] = true;
            let m = Mask::from_bits(shape, bits).unwrap();
            let (mut abs, mut sq, mut n) = (0.0, 0.0, 0.0);
            for s in 0..shape.samples {
                for t in 0..shape.steps {
                    for f in 0..shape.features {
                        if m.get(s, t, f) {
                            let i = shape.index(s, t, f);
                            abs += (truth[i] - imputed[i]).abs();
                            sq += (truth[i] - imputed[i]).powi(2);
                            n += 1.0;
                        }
                    }
                }
            }
            let mae = masked_mae(&truth, &imputed, &m).unwrap();
            let mse = masked_mse(&truth, &imputed, &m).unwrap();
            assert!((mae - abs / n).abs() <= 1e-12 * (abs / n));
            assert!((mse - sq / n).abs() <= 1e-12 * (sq / n));
        }
    }

    mod properties {
        use super::super::*;
        use crate::dataset::Shape;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn adding_zero_residual_cell_never_increases(
                cells in prop::collection::vec((-10f64..10.0, -10f64..10.0, any::<bool>()), 2..60),
                pick in any::<prop::sample::Index>(),
            ) {
                let n = cells.len();
                let truth: Vec<f64> = cells.iter().map(|c| c.0).collect();
                let mut imputed: Vec<f64> = cells.iter().map(|c| c.1).collect();
                let mut bits: Vec<bool> = cells.iter().map(|c| c.2).collect();
                let j = pick.index(n);
                bits[j] = false;
                imputed[j] = truth[j];
                prop_assume!(bits.iter().any(|&b| b));
                let shape = Shape::new(1, n, 1);
                let before = Mask::from_bits(shape, bits.clone()).unwrap();
                bits[j] = true;
                let after = Mask::from_bits(shape, bits).unwrap();
                prop_assert!(masked_mae(&truth, &imputed, &after).unwrap() <= masked_mae(&truth, &imputed, &before).unwrap());
                prop_assert!(masked_mse(&truth, &imputed, &after).unwrap() <= masked_mse(&truth, &imputed, &before).unwrap());
            }
        }
    }
}
