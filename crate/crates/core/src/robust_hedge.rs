//! Min-max hedge ratio under box uncertainty on variance forecasts.
//!
//! The worst case of the hedged-portfolio variance over a box of admissible
//! variances is attained at the upper corner, which turns the min-max problem
//! into a strictly convex quadratic with the closed-form minimizer
//! `sigma_SF / (sigma_F^2 + Theta_F)`. A brute-force grid oracle is kept
//! alongside the closed form so the two can be checked against each other.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ts_models::{ForecastPath, ThetaMode};

/// Integrated variance forecasts below this floor are clamped before they
/// reach a denominator.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error("sigma_F^2 + Theta_F must be positive, got {0}")]
    NonPositiveDenominator(f64),
    #[error("uncertainty values must be non-negative (Theta_S {theta_s}, Theta_F {theta_f})")]
    NegativeTheta { theta_s: f64, theta_f: f64 },
    #[error("forecast series are misaligned: {0}")]
    MisalignedForecasts(String),
}

/// Box of admissible variances around the point forecasts, with the
/// covariance held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBox {
    pub sigma_s_sq: f64,
    pub sigma_f_sq: f64,
    pub sigma_sf: f64,
    pub theta_s: f64,
    pub theta_f: f64,
}

impl UncertaintyBox {
    pub fn new(
        sigma_s_sq: f64,
        sigma_f_sq: f64,
        sigma_sf: f64,
        theta_s: f64,
        theta_f: f64,
    ) -> Result<Self, HedgeError> {
        if theta_s < 0.0 || theta_f < 0.0 {
            return Err(HedgeError::NegativeTheta { theta_s, theta_f });
        }
        if sigma_f_sq + theta_f <= 0.0 {
            return Err(HedgeError::NonPositiveDenominator(sigma_f_sq + theta_f));
        }
        Ok(Self { sigma_s_sq, sigma_f_sq, sigma_sf, theta_s, theta_f })
    }
}

/// Hedged-portfolio variance at the worst admissible point of the box:
/// (sigma_S^2 + Theta_S) + h^2 (sigma_F^2 + Theta_F) - 2 h sigma_SF.
pub fn worst_case_variance(h: f64, bx: &UncertaintyBox) -> f64 {
    (bx.sigma_s_sq + bx.theta_s) + h * h * (bx.sigma_f_sq + bx.theta_f) - 2.0 * h * bx.sigma_sf
}

/// Unique minimizer of the worst-case variance over all hedge ratios.
pub fn robust_hedge_ratio(bx: &UncertaintyBox) -> Result<f64, HedgeError> {
    let denom = bx.sigma_f_sq + bx.theta_f;
    if denom <= 0.0 {
        return Err(HedgeError::NonPositiveDenominator(denom));
    }
    Ok(bx.sigma_sf / denom)
}

/// Brute-force check of the closed form: for each grid point the inner
/// maximum is evaluated over the four corners of the box (the objective is
/// affine in both variances, so corner evaluation is exact), and the grid
/// argmin is returned. The grid must contain the analytic solution.
pub fn grid_minmax_oracle(bx: &UncertaintyBox, h_min: f64, h_max: f64, h_step: f64) -> f64 {
    assert!(h_step > 0.0 && h_max > h_min);
    let corners = [
        (bx.sigma_s_sq - bx.theta_s, bx.sigma_f_sq - bx.theta_f),
        (bx.sigma_s_sq - bx.theta_s, bx.sigma_f_sq + bx.theta_f),
        (bx.sigma_s_sq + bx.theta_s, bx.sigma_f_sq - bx.theta_f),
        (bx.sigma_s_sq + bx.theta_s, bx.sigma_f_sq + bx.theta_f),
    ];
    let steps = ((h_max - h_min) / h_step).round() as usize;
    let mut best_h = h_min;
    let mut best_val = f64::INFINITY;
    for i in 0..=steps {
        let h = h_min + i as f64 * h_step;
        let mut worst = f64::NEG_INFINITY;
        for &(s2, f2) in &corners {
            let v = s2 + h * h * f2 - 2.0 * h * bx.sigma_sf;
            if v > worst {
                worst = v;
            }
        }
        if worst < best_val {
            best_val = worst;
            best_h = h;
        }
    }
    best_h
}

/// Out-of-sample hedge-ratio path. `h_standard` ignores the uncertainty band;
/// `h_robust` adds it to the denominator. `theta_used` records the band per
/// date, `clamped_days` how many variance forecasts hit [`VARIANCE_FLOOR`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HedgePath {
    pub dates: Vec<NaiveDate>,
    pub h_standard: Vec<f64>,
    pub h_robust: Vec<f64>,
    pub theta_used: Vec<f64>,
    pub tau: usize,
    pub clamped_days: usize,
}

impl HedgePath {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Build the hedge path from per-origin integrated forecasts of the hedging
/// instrument's variance and of the pair covariance. Forecast lists must be
/// equally long with matching origin dates; theta comes from the variance
/// forecasts.
pub fn hedge_path(
    forecasts_f: &[ForecastPath],
    forecasts_sf: &[ForecastPath],
    tau: usize,
) -> Result<HedgePath, HedgeError> {
    if forecasts_f.len() != forecasts_sf.len() {
        return Err(HedgeError::MisalignedForecasts(format!(
            "{} variance vs {} covariance forecasts",
            forecasts_f.len(),
            forecasts_sf.len()
        )));
    }
    let mut dates = Vec::with_capacity(forecasts_f.len());
    let mut h_standard = Vec::with_capacity(forecasts_f.len());
    let mut h_robust = Vec::with_capacity(forecasts_f.len());
    let mut theta_used = Vec::with_capacity(forecasts_f.len());
    let mut clamped = 0usize;

    for (ff, fsf) in forecasts_f.iter().zip(forecasts_sf) {
        match (ff.origin_date, fsf.origin_date) {
            (Some(a), Some(b)) if a != b => {
                return Err(HedgeError::MisalignedForecasts(format!(
                    "origin {a} paired with {b}"
                )));
            }
            _ => {}
        }
        if ff.theta < 0.0 {
            return Err(HedgeError::NegativeTheta { theta_s: 0.0, theta_f: ff.theta });
        }
        let mut var_f = ff.integrated_point;
        if var_f < VARIANCE_FLOOR {
            var_f = VARIANCE_FLOOR;
            clamped += 1;
        }
        let cov = fsf.integrated_point;
        dates.push(ff.origin_date.unwrap_or_default());
        h_standard.push(cov / var_f);
        h_robust.push(cov / (var_f + ff.theta));
        theta_used.push(ff.theta);
    }
    Ok(HedgePath { dates, h_standard, h_robust, theta_used, tau, clamped_days: clamped })
}

/// Convenience for tests and synthetic studies: a forecast carrying only the
/// integrated value and band.
pub fn integrated_forecast(
    origin_date: Option<NaiveDate>,
    integrated_point: f64,
    theta: f64,
    tau: usize,
    theta_mode: ThetaMode,
) -> ForecastPath {
    ForecastPath {
        origin_date,
        horizon: tau,
        points: vec![integrated_point],
        integrated_point,
        theta,
        theta_mode,
    }
}
