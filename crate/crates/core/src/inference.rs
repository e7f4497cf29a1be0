//! Bootstrap significance tests for robust-vs-standard metric differences.
//!
//! Two schemes over paired daily return series: random contiguous blocks
//! resampled with replacement, and a maximum-entropy scheme that regenerates
//! values from a piecewise-uniform density while keeping the block's rank
//! ordering, so serial dependence survives the resampling. Replications are
//! paired throughout (same block, and for the maximum-entropy scheme the
//! same uniform draws, on both series) and the p-value is the share of
//! replications whose difference has the opposite sign to the full-sample
//! estimate.
//!
//! Replication r draws from an RNG stream indexed by r alone, so results are
//! bit-identical across runs and thread counts for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::Metric;

/// Fraction trimmed from each end when averaging absolute first differences
/// for the maximum-entropy tail extension.
pub const MEB_TRIM: f64 = 0.10;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("series of {found} observations is shorter than the block length {block}")]
    SeriesTooShort { block: usize, found: usize },
    #[error("paired series have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, found {found}")]
    TooShort { needed: usize, found: usize },
    #[error("replication count must be positive")]
    NoReplications,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScheme {
    RandomBlock,
    MaxEntropy,
}

/// Outcome of one bootstrap test on one metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: String,
    /// Mean of the paired robust-minus-standard differences across
    /// replications.
    pub mean_difference: f64,
    /// Share of replications whose difference has the sign opposite to the
    /// full-sample estimate; zero differences count as agreeing.
    pub p_value: f64,
    pub replications: usize,
    pub block_length: usize,
    pub scheme: BootstrapScheme,
}

/// Random-block bootstrap of one metric's paired difference.
pub fn block_bootstrap(
    robust: &[f64],
    standard: &[f64],
    metric: Metric,
    block_length: usize,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult, InferenceError> {
    let mut out = bootstrap_suite(
        robust,
        standard,
        &[metric],
        BootstrapScheme::RandomBlock,
        block_length,
        reps,
        seed,
    )?;
    Ok(out.pop().unwrap())
}

/// Maximum-entropy bootstrap of one metric's paired difference.
pub fn meb_bootstrap(
    robust: &[f64],
    standard: &[f64],
    metric: Metric,
    block_length: usize,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult, InferenceError> {
    let mut out = bootstrap_suite(
        robust,
        standard,
        &[metric],
        BootstrapScheme::MaxEntropy,
        block_length,
        reps,
        seed,
    )?;
    Ok(out.pop().unwrap())
}

/// Paired differences of a bootstrap run, before aggregation. Useful when
/// several runs are pooled into one test.
#[derive(Debug, Clone)]
pub struct BootstrapDiffs {
    /// Full-sample robust-minus-standard estimate per metric.
    pub sample_estimates: Vec<f64>,
    /// `diffs[rep][metric]`, in replication order.
    pub diffs: Vec<Vec<f64>>,
}

/// Run one scheme over several metrics at once, sharing block draws across
/// metrics within each replication. Results come back in `metrics` order.
pub fn bootstrap_suite(
    robust: &[f64],
    standard: &[f64],
    metrics: &[Metric],
    scheme: BootstrapScheme,
    block_length: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BootstrapResult>, InferenceError> {
    let raw = bootstrap_replication_diffs(robust, standard, metrics, scheme, block_length, reps, seed)?;
    let results = metrics
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            let per_metric: Vec<f64> = raw.diffs.iter().map(|d| d[mi]).collect();
            let (mean_difference, p_value) =
                aggregate_differences(&per_metric, raw.sample_estimates[mi]);
            BootstrapResult {
                metric: m.name().to_string(),
                mean_difference,
                p_value,
                replications: reps,
                block_length,
                scheme,
            }
        })
        .collect();
    Ok(results)
}

/// Mean difference and opposite-sign share against a sample estimate.
pub fn aggregate_differences(diffs: &[f64], sample_estimate: f64) -> (f64, f64) {
    let sample_sign = sign(sample_estimate);
    let mut sum = 0.0;
    let mut opposite = 0usize;
    for &d in diffs {
        sum += d;
        if d.is_finite() && sign(d) != 0 && sign(d) != sample_sign {
            opposite += 1;
        }
    }
    (sum / diffs.len() as f64, opposite as f64 / diffs.len() as f64)
}

/// The replication-level machinery behind [`bootstrap_suite`].
pub fn bootstrap_replication_diffs(
    robust: &[f64],
    standard: &[f64],
    metrics: &[Metric],
    scheme: BootstrapScheme,
    block_length: usize,
    reps: usize,
    seed: u64,
) -> Result<BootstrapDiffs, InferenceError> {
    if robust.len() != standard.len() {
        return Err(InferenceError::LengthMismatch(robust.len(), standard.len()));
    }
    let n = robust.len();
    if n < block_length {
        return Err(InferenceError::SeriesTooShort { block: block_length, found: n });
    }
    if reps == 0 {
        return Err(InferenceError::NoReplications);
    }

    let select = |series: &[f64]| -> Vec<f64> {
        let all = Metric::compute_all(series);
        metrics.iter().map(|m| all[m.index()]).collect()
    };
    let full_rob = select(robust);
    let full_std = select(standard);
    let sample_estimates: Vec<f64> =
        full_rob.iter().zip(&full_std).map(|(a, b)| a - b).collect();

    // one difference vector per replication, reduced in replication order
    let diffs: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64 + 1);
            let start = rng.random_range(0..=n - block_length);
            let rob_block = &robust[start..start + block_length];
            let std_block = &standard[start..start + block_length];
            let (vals_rob, vals_std) = match scheme {
                BootstrapScheme::RandomBlock => (select(rob_block), select(std_block)),
                BootstrapScheme::MaxEntropy => {
                    let uniforms: Vec<f64> =
                        (0..block_length).map(|_| rng.random::<f64>()).collect();
                    let rob_rep = meb_replicate_with(rob_block, &uniforms);
                    let std_rep = meb_replicate_with(std_block, &uniforms);
                    (select(&rob_rep.values), select(&std_rep.values))
                }
            };
            vals_rob.iter().zip(&vals_std).map(|(a, b)| a - b).collect()
        })
        .collect();

    Ok(BootstrapDiffs { sample_estimates, diffs })
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// A maximum-entropy replicate of a series.
#[derive(Debug, Clone)]
pub struct MebDraw {
    pub values: Vec<f64>,
    /// The input was constant and is returned unchanged.
    pub degenerate: bool,
}

/// Maximum-entropy replicate with a fresh uniform sample derived from `seed`.
pub fn meb_replicate(series: &[f64], seed: u64) -> Result<MebDraw, InferenceError> {
    if series.len() < 4 {
        return Err(InferenceError::TooShort { needed: 4, found: series.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniforms: Vec<f64> = (0..series.len()).map(|_| rng.random::<f64>()).collect();
    Ok(meb_replicate_with(series, &uniforms))
}

/// Core of the maximum-entropy bootstrap. The sorted sample induces a
/// piecewise-uniform density: one interval per order statistic, bounded by
/// midpoints of neighbours and extended at the ends by the trimmed mean
/// absolute first difference. Each interval's mass is 1/n and its mean is
/// shifted onto a weighted average of neighbouring order statistics, which
/// preserves the series mean in expectation. The mapped draws are sorted and
/// laid out in the original's rank order.
pub(crate) fn meb_replicate_with(series: &[f64], uniforms: &[f64]) -> MebDraw {
    let n = series.len();
    assert!(n >= 2 && uniforms.len() == n);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| series[a].partial_cmp(&series[b]).unwrap());
    let sorted: Vec<f64> = order.iter().map(|&i| series[i]).collect();

    if sorted[0] == sorted[n - 1] {
        return MebDraw { values: series.to_vec(), degenerate: true };
    }

    let mut abs_diffs: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    abs_diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let trim = (abs_diffs.len() as f64 * MEB_TRIM).floor() as usize;
    let kept = &abs_diffs[trim..abs_diffs.len() - trim];
    let dmean = kept.iter().sum::<f64>() / kept.len() as f64;

    // interval knots: z[0..=n], interval k spans (z[k], z[k+1])
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(sorted[0] - dmean);
    for w in sorted.windows(2) {
        knots.push(0.5 * (w[0] + w[1]));
    }
    knots.push(sorted[n - 1] + dmean);

    // target interval means
    let mut means = Vec::with_capacity(n);
    means.push(0.75 * sorted[0] + 0.25 * sorted[1]);
    for k in 1..n - 1 {
        means.push(0.25 * sorted[k - 1] + 0.5 * sorted[k] + 0.25 * sorted[k + 1]);
    }
    means.push(0.25 * sorted[n - 2] + 0.75 * sorted[n - 1]);

    let mut draws: Vec<f64> = uniforms
        .iter()
        .map(|&u| {
            let scaled = u * n as f64;
            let k = (scaled as usize).min(n - 1);
            let frac = scaled - k as f64;
            let raw = knots[k] + frac * (knots[k + 1] - knots[k]);
            raw + (means[k] - 0.5 * (knots[k] + knots[k + 1]))
        })
        .collect();
    draws.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut values = vec![0.0; n];
    for (rank, &time_pos) in order.iter().enumerate() {
        values[time_pos] = draws[rank];
    }
    MebDraw { values, degenerate: false }
}
