//! Per-row lookup-table learning by calibration-weighted k-means.
//!
//! Each weight row is scaled group by group, then its `2^n` dequantization
//! values are fitted to the scaled row by alternating two steps:
//!
//! * assignment: every scaled weight takes the nearest table value;
//! * update: every table value becomes the weighted mean of the scaled
//!   weights assigned to it, weighted by `alpha_ij * E|x_j|`.
//!
//! Minimizing the output error `E|sum_j (w_ij - dequant(q_ij)) x_j|` one term
//! at a time leads exactly to these two steps, and the group offsets `beta`
//! drop out of it, which is why they never appear below.
//!
//! Rows are independent. Each gets its own generator from
//! [`rng_for_row`], so results do not depend on the number of threads.

use rayon::prelude::*;

use crate::codebooks::{int_grid, nearest_index, NF4_VALUES};
use crate::config::{CodebookKind, InitMethod, LearnerConfig, QuantConfig, Weighting};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{rng_for_row, Rng};
use crate::scaling::{compute_scales, scale_weights, ScaleSet};
use crate::tensor::{Levels, QuantizedTensor};

/// Learned dequantization values for one weight row, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RowLut {
    pub row: usize,
    pub values: Vec<f32>,
}

/// A one-dimensional weighted clustering problem.
#[derive(Debug, Clone, PartialEq)]
pub struct KmProblem {
    samples: Vec<f64>,
    weights: Vec<f64>,
}

impl KmProblem {
    pub fn new(samples: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples with {} weights",
                samples.len(),
                weights.len()
            )));
        }
        if let Some((i, &v)) = samples.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value: v as f32 });
        }
        if let Some((i, &v)) = weights.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidStatistic { index: i, value: v as f32 });
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::AllZeroWeights);
        }
        Ok(Self { samples, weights })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `sum_j weight_j * (sample_j - centroid[assignment_j])^2`.
    pub fn loss(&self, centroids: &[f64], assignments: &[usize]) -> f64 {
        self.samples
            .iter()
            .zip(&self.weights)
            .zip(assignments)
            .map(|((x, w), &a)| {
                let d = x - centroids[a];
                w * d * d
            })
            .sum()
    }
}

/// Why the alternating loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// An assignment pass changed nothing: an exact fixed point.
    Stable,
    /// Relative loss improvement fell below `rel_tol`.
    Tolerance,
    ZeroLoss,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    /// Cluster centers, in the order the run produced them (not sorted).
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub loss: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Loss after every assignment pass of the winning run.
    pub loss_history: Vec<f64>,
}

/// Per-sample k-means weights for row `row`.
///
/// Missing statistics count as `E|x_j| = 1`.
pub fn build_sample_weights(
    scales: &ScaleSet,
    row: usize,
    stats: Option<&[f32]>,
    mode: Weighting,
) -> Result<Vec<f64>> {
    let (rows, cols) = scales.shape();
    if row >= rows {
        return Err(Error::ShapeMismatch(format!("row {row} of {rows}")));
    }
    if let Some(s) = stats {
        check_stats(s, cols)?;
    }
    Ok((0..cols)
        .map(|j| {
            let act = stats.map_or(1.0, |s| f64::from(s[j]));
            match mode {
                Weighting::WeightsOnly => 1.0,
                Weighting::WeightsTimesActivations => act,
                Weighting::WeightsTimesActivationsTimesScales => f64::from(scales.alpha_at(row, j)) * act,
            }
        })
        .collect())
}

pub(crate) fn check_stats(stats: &[f32], cols: usize) -> Result<()> {
    if stats.len() != cols {
        return Err(Error::ShapeMismatch(format!(
            "activation statistics have {} channels, weights have {cols} columns",
            stats.len()
        )));
    }
    if let Some((index, &value)) = stats.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidStatistic { index, value });
    }
    Ok(())
}

/// Draws an index with probability proportional to `mass`. `total` must be
/// the positive sum of `mass`.
fn draw_proportional(mass: &[f64], total: f64, rng: &mut Rng) -> usize {
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            acc += m;
            last_positive = i;
            if target < acc {
                return i;
            }
        }
    }
    last_positive
}

/// k-means++ seeding: the first center is drawn proportionally to the sample
/// weights, each further one proportionally to `weight * D^2`, `D` being the
/// distance to the nearest chosen center.
///
/// If every remaining weighted distance is zero, the draw falls back to plain
/// `D^2` (zero-weight samples still get a center), and once every distinct
/// value is taken the remaining centers repeat the last one.
pub fn kmeans_pp_init(p: &KmProblem, k: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let total: f64 = p.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let first = p.samples[draw_proportional(&p.weights, total, rng)];
    let mut centers = Vec::with_capacity(k);
    centers.push(first);
    let mut d2: Vec<f64> = p.samples.iter().map(|x| (x - first) * (x - first)).collect();
    let mut mass = vec![0.0; p.len()];
    while centers.len() < k {
        for ((m, w), d) in mass.iter_mut().zip(&p.weights).zip(&d2) {
            *m = w * d;
        }
        let mut total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            mass.copy_from_slice(&d2);
            total = mass.iter().sum();
        }
        let next = if total > 0.0 {
            p.samples[draw_proportional(&mass, total, rng)]
        } else {
            *centers.last().unwrap()
        };
        centers.push(next);
        for (d, x) in d2.iter_mut().zip(&p.samples) {
            *d = d.min((x - next) * (x - next));
        }
    }
    Ok(centers)
}

fn random_init(p: &KmProblem, k: usize, rng: &mut Rng) -> Vec<f64> {
    // Partial Fisher-Yates over sample indices.
    let mut idx: Vec<usize> = (0..p.len()).collect();
    let take = k.min(idx.len());
    for i in 0..take {
        let j = i + rng.below(idx.len() - i);
        idx.swap(i, j);
    }
    let mut centers: Vec<f64> = idx[..take].iter().map(|&i| p.samples[i]).collect();
    while centers.len() < k {
        centers.push(*centers.last().unwrap());
    }
    centers
}

fn sample_range(p: &KmProblem) -> (f64, f64) {
    p.samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// `k` evenly spaced centers across the sample range. For asymmetric scaled
/// rows this is the integer grid `0..=2^n - 1` itself.
fn grid_init(p: &KmProblem, k: usize) -> Vec<f64> {
    let (lo, hi) = sample_range(p);
    if k == 1 {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

fn nf4_init(p: &KmProblem, k: usize) -> Result<Vec<f64>> {
    if k != NF4_VALUES.len() {
        return Err(Error::InvalidConfig(format!(
            "nf4 seeding needs 16 centers, got {k}"
        )));
    }
    let (lo, hi) = sample_range(p);
    Ok(NF4_VALUES
        .iter()
        .map(|&v| lo + (hi - lo) * (f64::from(v) + 1.0) / 2.0)
        .collect())
}

/// Nearest center by absolute distance, ties to the lower index. Reference
/// for the sorted search used by the assignment pass.
pub fn nearest_center(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = (x - centers[0]).abs();
    for (i, &c) in centers.iter().enumerate().skip(1) {
        let d = (x - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Assignment pass. Returns whether any assignment changed.
fn assign(samples: &[f64], centers: &[f64], out: &mut [usize]) -> bool {
    let k = centers.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| centers[i]).collect();
    // Position of the first entry in each run of equal values; that entry
    // carries the lowest original index of the run.
    let mut run_start = vec![0usize; k];
    for pos in 1..k {
        run_start[pos] = if sorted[pos] == sorted[pos - 1] { run_start[pos - 1] } else { pos };
    }

    let mut changed = false;
    for (slot, &x) in out.iter_mut().zip(samples) {
        let p = sorted.partition_point(|v| *v < x);
        let pick = if p == 0 {
            order[0]
        } else if p == k {
            order[run_start[k - 1]]
        } else {
            let left = order[run_start[p - 1]];
            let right = order[p];
            let dl = (x - sorted[p - 1]).abs();
            let dr = (sorted[p] - x).abs();
            if dl < dr {
                left
            } else if dr < dl {
                right
            } else {
                left.min(right)
            }
        };
        if *slot != pick {
            *slot = pick;
            changed = true;
        }
    }
    changed
}

/// Update pass: each center moves to the weighted mean of its members.
///
/// A cluster whose members all have zero weight takes their plain mean. An
/// empty cluster is re-seeded at the sample with the largest weighted squared
/// error (plain squared error breaks ties).
fn update(p: &KmProblem, assignments: &[usize], centers: &mut [f64]) {
    let k = centers.len();
    let mut anchor = vec![f64::NAN; k];
    let mut count = vec![0usize; k];
    let mut wsum = vec![0.0f64; k];
    let mut wacc = vec![0.0f64; k];
    let mut uacc = vec![0.0f64; k];
    for ((&x, &w), &a) in p.samples.iter().zip(&p.weights).zip(assignments) {
        if count[a] == 0 {
            anchor[a] = x;
        }
        // Accumulate offsets from the first member so clusters of equal
        // values reproduce that value exactly.
        let d = x - anchor[a];
        count[a] += 1;
        wsum[a] += w;
        wacc[a] += w * d;
        uacc[a] += d;
    }
    for c in 0..k {
        if count[c] == 0 {
            continue;
        }
        centers[c] = if wsum[c] > 0.0 {
            anchor[c] + wacc[c] / wsum[c]
        } else {
            anchor[c] + uacc[c] / count[c] as f64
        };
    }

    if count.iter().all(|&n| n > 0) {
        return;
    }
    let mut err: Vec<(f64, f64)> = p
        .samples
        .iter()
        .zip(&p.weights)
        .zip(assignments)
        .map(|((x, w), &a)| {
            let d = x - centers[a];
            (w * d * d, d * d)
        })
        .collect();
    for c in 0..k {
        if count[c] > 0 {
            continue;
        }
        let mut best = 0;
        for i in 1..err.len() {
            if err[i].0 > err[best].0 || (err[i].0 == err[best].0 && err[i].1 > err[best].1) {
                best = i;
            }
        }
        centers[c] = p.samples[best];
        err[best] = (-1.0, -1.0);
    }
}

/// Alternates assignment and update passes from the given centers.
pub fn lloyd(p: &KmProblem, init: Vec<f64>, cfg: &LearnerConfig) -> KmeansOutcome {
    let mut centers = init;
    let mut assignments = vec![usize::MAX; p.len()];
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let changed = assign(&p.samples, &centers, &mut assignments);
        let loss = p.loss(&centers, &assignments);
        debug_assert!(
            !(loss > prev * (1.0 + 1e-9) + 1e-300),
            "loss increased from {prev} to {loss}"
        );
        history.push(loss);
        iterations += 1;
        if !changed {
            stop = StopReason::Stable;
            break;
        }
        if loss == 0.0 {
            stop = StopReason::ZeroLoss;
            break;
        }
        // A zero tolerance means "until the assignments stop changing".
        if cfg.rel_tol > 0.0 && prev.is_finite() && prev - loss <= cfg.rel_tol * prev {
            stop = StopReason::Tolerance;
            break;
        }
        prev = loss;
        update(p, &assignments, &mut centers);
    }
    if stop == StopReason::MaxIters {
        // Leave assignments consistent with the final centers.
        assign(&p.samples, &centers, &mut assignments);
        history.push(p.loss(&centers, &assignments));
    }
    let loss = *history.last().expect("max_iters >= 1");
    KmeansOutcome {
        centroids: centers,
        assignments,
        loss,
        iterations,
        stop,
        loss_history: history,
    }
}

/// Weighted k-means with the configured seeding, keeping the lowest-loss run
/// of `cfg.restarts`. Restarts draw from `rng` in sequence.
pub fn weighted_kmeans(p: &KmProblem, k: usize, cfg: &LearnerConfig, rng: &mut Rng) -> Result<KmeansOutcome> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let mut best: Option<KmeansOutcome> = None;
    for _ in 0..cfg.restarts {
        let init = match cfg.init {
            InitMethod::KMeansPlusPlus => kmeans_pp_init(p, k, rng)?,
            InitMethod::Random => random_init(p, k, rng),
            InitMethod::IntGridSeed => grid_init(p, k),
            InitMethod::Nf4Seed => nf4_init(p, k)?,
        };
        let run = lloyd(p, init, cfg);
        if best.as_ref().is_none_or(|b| run.loss < b.loss) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Learns one row's table of `2^bits` values and returns it with the row's
/// codes (indices into the ascending table).
pub fn learn_row_lut(
    row: usize,
    scaled: &[f32],
    weights: &[f64],
    bits: u8,
    cfg: &LearnerConfig,
    rng: &mut Rng,
) -> Result<(RowLut, Vec<u8>)> {
    let k = 1usize << bits;
    let p = KmProblem::new(scaled.iter().map(|&v| f64::from(v)).collect(), weights.to_vec())?;
    let out = weighted_kmeans(&p, k, cfg, rng)?;
    let mut values: Vec<f32> = out.centroids.iter().map(|&c| c as f32).collect();
    values.sort_by(f32::total_cmp);
    let codes = scaled.iter().map(|&x| nearest_index(&values, x) as u8).collect();
    Ok((RowLut { row, values }, codes))
}

/// Quantizes `w` to a learned per-row format (any2/any3/any4/any8).
///
/// `stats` holds `E|x_j|` for each input channel; `None` weights every
/// channel equally. Rows run in parallel on the current rayon pool.
pub fn quantize_any(w: &Matrix, cfg: &QuantConfig, stats: Option<&[f32]>) -> Result<QuantizedTensor> {
    cfg.validate()?;
    if cfg.codebook != CodebookKind::AnyN {
        return Err(Error::InvalidConfig(format!(
            "quantize_any needs a learned format, got {:?}",
            cfg.codebook
        )));
    }
    w.check_finite()?;
    let (rows, cols) = w.shape();
    if let Some(s) = stats {
        check_stats(s, cols)?;
    }
    let grid = int_grid(cfg.bits, cfg.int_range)?;
    let scales = compute_scales(w, cfg, grid.qmin(), grid.qmax())?;
    let scaled = scale_weights(w, &scales)?;

    let per_row: Vec<(RowLut, Vec<u8>)> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut weights = build_sample_weights(&scales, i, stats, cfg.learner.weighting)?;
            if weights.iter().all(|v| *v == 0.0) {
                weights.fill(1.0);
            }
            let mut rng = rng_for_row(cfg.seed, i);
            learn_row_lut(i, scaled.row(i), &weights, cfg.bits, &cfg.learner, &mut rng)
        })
        .collect::<Result<_>>()?;

    let mut luts = Vec::with_capacity(rows * cfg.levels());
    let mut codes = Vec::with_capacity(rows * cols);
    for (lut, c) in per_row {
        luts.extend_from_slice(&lut.values);
        codes.extend_from_slice(&c);
    }
    QuantizedTensor::from_codes(
        *cfg,
        rows,
        cols,
        &codes,
        Levels::PerRow {
            width: cfg.levels(),
            values: luts,
        },
        scales,
    )
}
