//! Artificial missingness.
//!
//! A [`MaskSpec`] names a pattern (random cells, whole time steps, whole
//! features, or rectangular blocks), a strategy and a rate. The strategy
//! decides which cells are eligible:
//!
//! * augmentation: only originally observed cells can be masked, so the
//!   artificial mask never touches original gaps and every masked cell is
//!   scoreable;
//! * overlay: every cell is eligible, and only the part of the artificial
//!   mask that hits observed cells is scored.
//!
//! `rate` is the target fraction of eligible cells. Random masking hits it
//! to the nearest cell. Structured patterns round half-up to a whole number
//! of units per sample (steps or features) or per batch (blocks), with at
//! least one unit whenever `rate > 0`.
//!
//! All draws come from [`crate::seed`] child seeds keyed by
//! `(seed, sample, epoch, batch)`, so a mask is a pure function of the spec,
//! the observation mask and the timing context.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Mask, Shape, TimeSeriesTensor};
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

pub const ARTIFICIAL_FILE: &str = "mask-artificial.csv";
pub const EVAL_FILE: &str = "mask-eval.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Random,
    Temporal,
    Spatial,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Augmentation,
    Overlay,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Augmentation => "Augmentation",
            Strategy::Overlay => "Overlay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockShape {
    pub steps: usize,
    pub features: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub pattern: Pattern,
    pub strategy: Strategy,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_shape: Option<BlockShape>,
    pub seed: u64,
}

impl MaskSpec {
    pub fn random(strategy: Strategy, rate: f64, seed: u64) -> Self {
        Self {
            pattern: Pattern::Random,
            strategy,
            rate,
            block_shape: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Argument(format!(
                "mask rate {} outside [0, 1]",
                self.rate
            )));
        }
        match (self.pattern, self.block_shape) {
            (Pattern::Block, None) => Err(Error::Argument(
                "block pattern requires block_shape".into(),
            )),
            (Pattern::Block, Some(b)) if b.steps == 0 || b.features == 0 => Err(
                Error::Argument("block_shape dimensions must be at least 1".into()),
            ),
            (Pattern::Block, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Argument(
                "block_shape is only valid for the block pattern".into(),
            )),
            (_, None) => Ok(()),
        }
    }
}

/// When a mask was drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "timing", rename_all = "snake_case")]
pub enum Timing {
    PreMask,
    MiniBatch {
        epoch: u64,
        /// Batch index, or `None` for the union of a whole epoch.
        batch: Option<u64>,
        samples: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: MaskSpec,
    #[serde(flatten)]
    pub timing: Timing,
    pub eligible_cells: usize,
    /// Units the rate asked for (cells, steps, features or blocks).
    pub requested_units: f64,
    pub placed_units: usize,
    pub seed_derivation: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub artificial: Mask,
    pub evaluation: Mask,
    pub provenance: Provenance,
}

impl MaskSet {
    pub fn shape(&self) -> Shape {
        self.artificial.shape()
    }

    pub fn is_empty(&self) -> bool {
        self.artificial.count() == 0
    }
}

const SEED_DERIVATION: &str =
    "ChaCha8 seeded by splitmix64 fold of (seed, stream, sample, epoch, batch)";

/// Round half-up with a little slack so that products like `0.3 * 5` that
/// land just under `.5` still round up.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Number of structured units to mask out of `available`.
fn unit_count(rate: f64, available: usize) -> usize {
    if rate <= 0.0 || available == 0 {
        return 0;
    }
    round_half_up(rate * available as f64).clamp(1, available)
}

/// Picks `k` of `items` uniformly without replacement (partial Fisher-Yates).
fn choose<T: Copy>(items: &mut [T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let (chosen, _) = items.partial_shuffle(rng, k);
    chosen.to_vec()
}

struct Draw<'a> {
    spec: &'a MaskSpec,
    observed: &'a Mask,
    samples: &'a [usize],
    epoch: u64,
    batch: u64,
}

impl Draw<'_> {
    fn eligible(&self, i: usize) -> bool {
        match self.spec.strategy {
            Strategy::Augmentation => self.observed.get_flat(i),
            Strategy::Overlay => true,
        }
    }

    fn sample_rng(&self, sample: usize) -> ChaCha8Rng {
        seed::rng(self.spec.seed, Stream::Mask, sample as u64, self.epoch, self.batch)
    }

    fn global_rng(&self) -> ChaCha8Rng {
        seed::rng(self.spec.seed, Stream::MaskGlobal, 0, self.epoch, self.batch)
    }

    fn eligible_count(&self) -> usize {
        let shape = self.observed.shape();
        let n = shape.sample_len();
        self.samples
            .iter()
            .map(|&s| (s * n..(s + 1) * n).filter(|&i| self.eligible(i)).count())
            .sum()
    }

    /// Returns the artificial mask plus (requested, placed) unit counts.
    fn run(&self) -> Result<(Mask, f64, usize)> {
        let shape = self.observed.shape();
        let mut artificial = Mask::empty(shape);
        let rate = self.spec.rate;
        if let Some(b) = self.spec.block_shape {
            if b.steps > shape.steps || b.features > shape.features {
                return Err(Error::Infeasible(format!(
                    "block {}x{} does not fit a {}x{} grid",
                    b.steps, b.features, shape.steps, shape.features
                )));
            }
        }
        if rate > 0.0 && self.eligible_count() == 0 {
            return Err(Error::NothingToMask);
        }
        if rate == 0.0 {
            return Ok((artificial, 0.0, 0));
        }

        match self.spec.pattern {
            Pattern::Random => {
                let n = shape.sample_len();
                let mut cells: Vec<usize> = self
                    .samples
                    .iter()
                    .flat_map(|&s| s * n..(s + 1) * n)
                    .filter(|&i| self.eligible(i))
                    .collect();
                let requested = rate * cells.len() as f64;
                let k = round_half_up(requested).min(cells.len());
                for i in choose(&mut cells, k, &mut self.global_rng()) {
                    artificial.set_flat(i, true);
                }
                Ok((artificial, requested, k))
            }
            Pattern::Temporal => {
                let mut requested = 0.0;
                let mut placed = 0;
                for &s in self.samples {
                    let mut steps: Vec<usize> = (0..shape.steps)
                        .filter(|&t| {
                            (0..shape.features).any(|f| self.eligible(shape.index(s, t, f)))
                        })
                        .collect();
                    requested += rate * steps.len() as f64;
                    let k = unit_count(rate, steps.len());
                    placed += k;
                    for t in choose(&mut steps, k, &mut self.sample_rng(s)) {
                        for f in 0..shape.features {
                            let i = shape.index(s, t, f);
                            if self.eligible(i) {
                                artificial.set_flat(i, true);
                            }
                        }
                    }
                }
                Ok((artificial, requested, placed))
            }
            Pattern::Spatial => {
                let mut requested = 0.0;
                let mut placed = 0;
                for &s in self.samples {
                    let mut features: Vec<usize> = (0..shape.features)
                        .filter(|&f| (0..shape.steps).any(|t| self.eligible(shape.index(s, t, f))))
                        .collect();
                    requested += rate * features.len() as f64;
                    let k = unit_count(rate, features.len());
                    placed += k;
                    for f in choose(&mut features, k, &mut self.sample_rng(s)) {
                        for t in 0..shape.steps {
                            let i = shape.index(s, t, f);
                            if self.eligible(i) {
                                artificial.set_flat(i, true);
                            }
                        }
                    }
                }
                Ok((artificial, requested, placed))
            }
            Pattern::Block => self.blocks(artificial),
        }
    }

    /// One block per selected sample. When the rate needs more blocks than
    /// there are samples, blocks are spread evenly and may overlap within a
    /// sample.
    fn blocks(&self, mut artificial: Mask) -> Result<(Mask, f64, usize)> {
        let shape = self.observed.shape();
        let b = self.spec.block_shape.expect("validated");
        let area = (b.steps * b.features) as f64;
        let n = shape.sample_len();
        let mut candidates: Vec<usize> = self
            .samples
            .iter()
            .copied()
            .filter(|&s| (s * n..(s + 1) * n).any(|i| self.eligible(i)))
            .collect();
        let requested = self.spec.rate * self.eligible_count() as f64 / area;
        let total = round_half_up(requested).max(1);
        let per_sample = total / candidates.len();
        let extra = total % candidates.len();

        let mut global = self.global_rng();
        // Samples receiving one block more than the rest, in draw order.
        let mut counts: Vec<(usize, usize)> = candidates.iter().map(|&s| (s, per_sample)).collect();
        let mut bumped = vec![false; shape.samples];
        for s in choose(&mut candidates, extra, &mut global) {
            bumped[s] = true;
        }
        for (s, c) in counts.iter_mut() {
            if bumped[*s] {
                *c += 1;
            }
        }

        for (s, count) in counts {
            if count == 0 {
                continue;
            }
            let mut rng = self.sample_rng(s);
            for _ in 0..count {
                let t0 = rng.random_range(0..=shape.steps - b.steps);
                let f0 = rng.random_range(0..=shape.features - b.features);
                for t in t0..t0 + b.steps {
                    for f in f0..f0 + b.features {
                        let i = shape.index(s, t, f);
                        if self.eligible(i) {
                            artificial.set_flat(i, true);
                        }
                    }
                }
            }
        }
        Ok((artificial, requested, total))
    }
}

fn finish(spec: &MaskSpec, observed: &Mask, artificial: Mask, eligible: usize, requested: f64, placed: usize, timing: Timing) -> Result<MaskSet> {
    let evaluation = match spec.strategy {
        Strategy::Augmentation => artificial.clone(),
        Strategy::Overlay => artificial.and(observed)?,
    };
    Ok(MaskSet {
        artificial,
        evaluation,
        provenance: Provenance {
            spec: spec.clone(),
            timing,
            eligible_cells: eligible,
            requested_units: requested,
            placed_units: placed,
            seed_derivation: SEED_DERIVATION.into(),
        },
    })
}

fn draw(spec: &MaskSpec, observed: &Mask, samples: &[usize], epoch: u64, batch: u64, timing: Timing) -> Result<MaskSet> {
    spec.validate()?;
    let d = Draw {
        spec,
        observed,
        samples,
        epoch,
        batch,
    };
    let eligible = d.eligible_count();
    let (artificial, requested, placed) = d.run()?;
    finish(spec, observed, artificial, eligible, requested, placed, timing)
}

/// Pre-mask: one fixed mask over the whole dataset.
pub fn generate_mask(spec: &MaskSpec, observed: &Mask) -> Result<MaskSet> {
    let samples: Vec<usize> = (0..observed.shape().samples).collect();
    draw(spec, observed, &samples, 0, 0, Timing::PreMask)
}

/// Mask for one mini-batch. Only the batch's samples can be set; the mask
/// keeps the full dataset shape so batch masks can be unioned.
pub fn minibatch_mask_stream(
    spec: &MaskSpec,
    observed: &Mask,
    epoch: u64,
    batch_index: u64,
    batch_samples: &[usize],
) -> Result<MaskSet> {
    if batch_samples.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n = observed.shape().samples;
    if let Some(&bad) = batch_samples.iter().find(|&&s| s >= n) {
        return Err(Error::Argument(format!(
            "batch sample {bad} out of range for {n} samples"
        )));
    }
    draw(
        spec,
        observed,
        batch_samples,
        epoch,
        batch_index,
        Timing::MiniBatch {
            epoch,
            batch: Some(batch_index),
            samples: batch_samples.to_vec(),
        },
    )
}

/// Seed-shuffled batch assignment for one epoch.
pub fn epoch_batches(n_samples: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    order.shuffle(&mut seed::rng(seed, Stream::BatchOrder, 0, epoch, 0));
    order
        .chunks(batch_size.max(1))
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect()
}

/// Union of the mini-batch masks of one epoch.
///
/// Classical imputers do not train, so in mini-batch mode they are scored
/// on the cells hidden by any batch of the epoch.
pub fn epoch_union(spec: &MaskSpec, observed: &Mask, epoch: u64, batch_size: usize) -> Result<MaskSet> {
    spec.validate()?;
    let shape = observed.shape();
    let batches = epoch_batches(shape.samples, batch_size, spec.seed, epoch);
    let mut artificial = Mask::empty(shape);
    let mut eligible = 0;
    let mut requested = 0.0;
    let mut placed = 0;
    let any_eligible = batches.iter().any(|b| {
        Draw {
            spec,
            observed,
            samples: b,
            epoch,
            batch: 0,
        }
        .eligible_count()
            > 0
    });
    if spec.rate > 0.0 && !any_eligible {
        return Err(Error::NothingToMask);
    }
    for (b, samples) in batches.iter().enumerate() {
        let d = Draw {
            spec,
            observed,
            samples,
            epoch,
            batch: b as u64,
        };
        if d.eligible_count() == 0 {
            continue;
        }
        let ms = minibatch_mask_stream(spec, observed, epoch, b as u64, samples)?;
        artificial = artificial.or(&ms.artificial)?;
        eligible += ms.provenance.eligible_cells;
        requested += ms.provenance.requested_units;
        placed += ms.provenance.placed_units;
    }
    finish(
        spec,
        observed,
        artificial,
        eligible,
        requested,
        placed,
        Timing::MiniBatch {
            epoch,
            batch: None,
            samples: (0..shape.samples).collect(),
        },
    )
}

/// Hides the artificially masked cells: `observed AND NOT artificial`, with
/// sentinel values at newly hidden cells.
pub fn apply_mask(tensor: &TimeSeriesTensor, maskset: &MaskSet) -> Result<TimeSeriesTensor> {
    if tensor.shape() != maskset.shape() {
        return Err(Error::Shape(format!(
            "tensor {} vs mask {}",
            tensor.shape(),
            maskset.shape()
        )));
    }
    tensor.with_observed(tensor.observed().and_not(&maskset.artificial)?)
}

/// Writes `mask-artificial.csv`, `mask-eval.csv` and `provenance.json`.
pub fn write_maskset(dir: &Path, layout: &TimeSeriesTensor, maskset: &MaskSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset::write_mask_csv(&dir.join(ARTIFICIAL_FILE), layout, &maskset.artificial)?;
    dataset::write_mask_csv(&dir.join(EVAL_FILE), layout, &maskset.evaluation)?;
    dataset::write_json(&dir.join(PROVENANCE_FILE), &maskset.provenance)
}

pub fn read_maskset(dir: &Path) -> Result<MaskSet> {
    let artificial = dataset::read_mask_grid(&dir.join(ARTIFICIAL_FILE))?;
    let evaluation = dataset::read_mask_grid(&dir.join(EVAL_FILE))?;
    dataset::check_same_rows(&artificial, ARTIFICIAL_FILE, &evaluation, EVAL_FILE)?;
    let shape = artificial.shape();
    let path = dir.join(PROVENANCE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let provenance = serde_json::from_str(&text).map_err(|source| Error::Json {
        file: PROVENANCE_FILE.into(),
        source,
    })?;
    Ok(MaskSet {
        artificial: Mask::from_bits(shape, artificial.cells)?,
        evaluation: Mask::from_bits(shape, evaluation.cells)?,
        provenance,
    })
}
