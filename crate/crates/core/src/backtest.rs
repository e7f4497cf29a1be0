//! Hedged-portfolio construction and evaluation.
//!
//! Builds daily hedged returns from a hedge path with periodic rebalancing
//! and turnover costs, then reports variance-reduction effectiveness (plain,
//! left-tail conditioned, and the conditional return ratio) together with
//! performance and risk metrics: P&L, Sharpe, Omega, maximum drawdown, 95%
//! VaR and expected shortfall.
//!
//! Conventions, applied everywhere: the cost rate `bp` is a pure fraction
//! (5 bp = 0.0005); opening the initial position counts as turnover; P&L is
//! the plain sum of daily returns; VaR and ES are reported loss-positive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::RealizedSeries;
use crate::robust_hedge::HedgePath;

/// Trading days per year used for Sharpe annualization.
pub const ANNUALIZATION_DAYS: f64 = 252.0;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("dates of returns and hedge path are misaligned: {0}")]
    MisalignedDates(String),
    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("unhedged returns have zero variance")]
    ZeroUnhedgedVariance,
    #[error("only {found} dates satisfy the conditioning threshold, need {needed}")]
    TooFewConditioningDates { needed: usize, found: usize },
    #[error("conditional mean of the unhedged return is zero")]
    ZeroConditionalMean,
    #[error("returns have zero standard deviation, Sharpe undefined")]
    ZeroStandardDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HedgeMethod {
    Standard,
    Robust,
}

/// Daily returns of the hedged portfolio next to its unhedged counterpart,
/// with the turnover costs actually charged.
#[derive(Debug, Clone)]
pub struct HedgedReturns {
    pub dates: Vec<chrono::NaiveDate>,
    /// Unhedged leg, the raw returns of the hedged asset.
    pub r_unhedged: Vec<f64>,
    /// Hedged portfolio before costs.
    pub r_hedged: Vec<f64>,
    /// Hedged portfolio after costs, `r_hedged - costs`.
    pub r_net: Vec<f64>,
    /// Per-day cost, nonzero only on rebalance days.
    pub costs: Vec<f64>,
    /// Cost rate as a pure fraction.
    pub bp: f64,
}

/// Apply a hedge path to a pair of daily return series. The hedge prevailing
/// on a date is the path value at the most recent rebalance, rebalances
/// happening every `path.tau` positions starting at the first. Turnover
/// `|delta h| * bp` is charged on rebalance days, the opening position
/// counting in full.
pub fn hedged_returns(
    r_s: &RealizedSeries,
    r_f: &RealizedSeries,
    path: &HedgePath,
    which: HedgeMethod,
    bp: f64,
) -> Result<HedgedReturns, BacktestError> {
    assert!(bp >= 0.0, "cost rate must be non-negative");
    if r_s.dates != r_f.dates || r_s.dates != path.dates {
        return Err(BacktestError::MisalignedDates(format!(
            "{} / {} / {} rows",
            r_s.len(),
            r_f.len(),
            path.len()
        )));
    }
    let h_path = match which {
        HedgeMethod::Standard => &path.h_standard,
        HedgeMethod::Robust => &path.h_robust,
    };
    let n = h_path.len();
    let tau = path.tau.max(1);

    let mut r_hedged = Vec::with_capacity(n);
    let mut costs = vec![0.0; n];
    let mut current_h = 0.0;
    for t in 0..n {
        if t % tau == 0 {
            let new_h = h_path[t];
            costs[t] = (new_h - current_h).abs() * bp;
            current_h = new_h;
        }
        r_hedged.push(r_s.values[t] - current_h * r_f.values[t]);
    }
    let r_net: Vec<f64> = r_hedged.iter().zip(&costs).map(|(r, c)| r - c).collect();
    Ok(HedgedReturns {
        dates: path.dates.clone(),
        r_unhedged: r_s.values.clone(),
        r_hedged,
        r_net,
        costs,
        bp,
    })
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Variance reduction of the hedged portfolio, `1 - Var(r_h) / Var(r_S)`.
pub fn hedge_effectiveness(r_h: &[f64], r_s: &[f64]) -> Result<f64, BacktestError> {
    if r_h.len() < 2 || r_h.len() != r_s.len() {
        return Err(BacktestError::InsufficientData { needed: 2, found: r_h.len().min(r_s.len()) });
    }
    let var_s = sample_variance(r_s);
    if var_s <= 0.0 {
        return Err(BacktestError::ZeroUnhedgedVariance);
    }
    Ok(1.0 - sample_variance(r_h) / var_s)
}

/// Variance reduction restricted to days where the unhedged return falls
/// below `delta`, both variances conditioned on the same date set.
pub fn conditional_hedge_effectiveness(
    r_h: &[f64],
    r_s: &[f64],
    delta: f64,
) -> Result<f64, BacktestError> {
    let (ch, cs) = condition_on_threshold(r_h, r_s, delta);
    if cs.len() < 2 {
        return Err(BacktestError::TooFewConditioningDates { needed: 2, found: cs.len() });
    }
    let var_s = sample_variance(&cs);
    if var_s <= 0.0 {
        return Err(BacktestError::ZeroUnhedgedVariance);
    }
    Ok(1.0 - sample_variance(&ch) / var_s)
}

/// Ratio of conditional means below the threshold,
/// `E[r_h | r_S < delta] / E[r_S | r_S < delta]`.
pub fn tail_return_ratio(r_h: &[f64], r_s: &[f64], delta: f64) -> Result<f64, BacktestError> {
    let (ch, cs) = condition_on_threshold(r_h, r_s, delta);
    if cs.is_empty() {
        return Err(BacktestError::TooFewConditioningDates { needed: 1, found: 0 });
    }
    let mean_s = cs.iter().sum::<f64>() / cs.len() as f64;
    if mean_s == 0.0 {
        return Err(BacktestError::ZeroConditionalMean);
    }
    let mean_h = ch.iter().sum::<f64>() / ch.len() as f64;
    Ok(mean_h / mean_s)
}

fn condition_on_threshold(r_h: &[f64], r_s: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(r_h.len(), r_s.len(), "conditioning requires aligned series");
    let mut ch = Vec::new();
    let mut cs = Vec::new();
    for (h, s) in r_h.iter().zip(r_s) {
        if *s < delta {
            ch.push(*h);
            cs.push(*s);
        }
    }
    (ch, cs)
}

/// First quartile with linear interpolation between order statistics.
pub fn quartile_threshold(r_s: &[f64]) -> f64 {
    assert!(!r_s.is_empty(), "threshold of an empty sample");
    let mut sorted = r_s.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_linear(&sorted, 0.25)
}

/// Interpolated quantile on a sorted sample (the common definition with
/// position `(n - 1) q`).
fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Lower empirical quantile: the ceil(q n)-th order statistic.
fn quantile_lower(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

/// Named portfolio metrics, shared between reports and bootstrap inference.
/// All of them map a daily net-return slice to a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pnl,
    Sharpe,
    Omega,
    MaxDrawdown,
    Var95,
    Es95,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Pnl,
        Metric::Sharpe,
        Metric::Omega,
        Metric::MaxDrawdown,
        Metric::Var95,
        Metric::Es95,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Pnl => "pnl",
            Metric::Sharpe => "sharpe",
            Metric::Omega => "omega",
            Metric::MaxDrawdown => "max_drawdown",
            Metric::Var95 => "var95",
            Metric::Es95 => "es95",
        }
    }

    /// Position in [`Metric::ALL`] and in [`Metric::compute_all`] output.
    pub fn index(&self) -> usize {
        Metric::ALL.iter().position(|m| m == self).unwrap()
    }

    /// Evaluate on a return series. Degenerate inputs yield non-finite
    /// values (NaN Sharpe on constant series, infinite Omega without
    /// losses); report construction validates these separately.
    pub fn compute(&self, returns: &[f64]) -> f64 {
        Metric::compute_all(returns)[self.index()]
    }

    /// Evaluate every metric in one pass (and one sort), in [`Metric::ALL`]
    /// order. Bootstrap replications call this millions of times.
    pub fn compute_all(returns: &[f64]) -> [f64; 6] {
        let n = returns.len() as f64;
        let mut sum = 0.0;
        let mut gains = 0.0;
        let mut losses = 0.0;
        let mut cum = 0.0;
        let mut peak = 0.0_f64;
        let mut dd = 0.0_f64;
        for &r in returns {
            sum += r;
            if r >= 0.0 {
                gains += r;
            } else {
                losses -= r;
            }
            cum += r;
            peak = peak.max(cum);
            dd = dd.max(peak - cum);
        }
        let mean = sum / n;
        let std = sample_variance(returns).sqrt();
        let sharpe = mean / std * ANNUALIZATION_DAYS.sqrt();
        let omega = gains / losses;

        let mut sorted = returns.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = quantile_lower(&sorted, 0.05);
        let var = -q;
        let mut tail_sum = 0.0;
        let mut tail_n = 0usize;
        for &r in &sorted {
            if r <= q {
                tail_sum += r;
                tail_n += 1;
            } else {
                break;
            }
        }
        let es = -(tail_sum / tail_n as f64);
        [sum, sharpe, omega, dd, var, es]
    }
}

/// Effectiveness and performance metrics of one hedged-return series at one
/// cost level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricsReport {
    pub he: f64,
    pub he_c: f64,
    pub he_r: f64,
    pub pnl: f64,
    pub sharpe: f64,
    pub omega: f64,
    /// Omega had no losses to weigh against the gains.
    pub omega_capped: bool,
    pub max_drawdown: f64,
    pub var95: f64,
    pub es95: f64,
    pub delta_threshold: f64,
    pub cost_bp: f64,
}

/// Full report: effectiveness on gross hedged returns (cost-free by
/// definition), performance and tail metrics on net returns.
pub fn performance_report(r: &HedgedReturns, delta: f64) -> Result<MetricsReport, BacktestError> {
    if r.r_net.len() < 30 {
        return Err(BacktestError::InsufficientData { needed: 30, found: r.r_net.len() });
    }
    let he = hedge_effectiveness(&r.r_hedged, &r.r_unhedged)?;
    let he_c = conditional_hedge_effectiveness(&r.r_hedged, &r.r_unhedged, delta)?;
    let he_r = tail_return_ratio(&r.r_hedged, &r.r_unhedged, delta)?;

    let net = &r.r_net;
    let std = sample_variance(net).sqrt();
    if std <= 0.0 {
        return Err(BacktestError::ZeroStandardDeviation);
    }
    let omega_raw = Metric::Omega.compute(net);
    let omega_capped = !omega_raw.is_finite();
    Ok(MetricsReport {
        he,
        he_c,
        he_r,
        pnl: Metric::Pnl.compute(net),
        sharpe: Metric::Sharpe.compute(net),
        omega: omega_raw,
        omega_capped,
        max_drawdown: Metric::MaxDrawdown.compute(net),
        var95: Metric::Var95.compute(net),
        es95: Metric::Es95.compute(net),
        delta_threshold: delta,
        cost_bp: r.bp,
    })
}
