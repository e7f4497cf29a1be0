//! Autoregressive models for daily realized measures.
//!
//! Covers fitting (plain AR(p) and the tied-coefficient HAR variant),
//! recursive multi-step forecasting with log-bias correction, the
//! moving-average impulse weights of the fitted recursion, closed-form and
//! empirical forecast-error bands for integrated multi-day variance,
//! impulse-response diagnostics for hedge-ratio dynamics, unit-root
//! screening, and out-of-sample RMSE comparison.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ols::{fit_ols, OlsError};

/// Horizon depth for which per-step error variances are estimated at fit
/// time unless a caller asks for more.
pub const DEFAULT_TAU_MAX: usize = 10;

/// Asymptotic 5% critical value for the constant-only ADF regression.
pub const ADF_CRITICAL_5PCT: f64 = -2.86;

/// Minimum number of in-sample error observations accepted when estimating
/// an empirical uncertainty band.
pub const MIN_EMPIRICAL_THETA_OBS: usize = 30;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least {needed} observations, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("log transform requires strictly positive values (found {0})")]
    NonPositiveValue(f64),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("horizon {tau} exceeds the fitted horizon depth {tau_max}")]
    HorizonExceeded { tau: usize, tau_max: usize },
    #[error("history must contain at least {needed} values, found {found}")]
    ShortHistory { needed: usize, found: usize },
    #[error("empirical band needs at least {needed} error observations, found {found}")]
    TooFewErrorObservations { needed: usize, found: usize },
    #[error("model is not stationary")]
    NonStationary,
    #[error("denominator is zero in the impulse-response ratio")]
    ZeroDenominator,
    #[error("base RMSE is zero, ratios undefined")]
    ZeroBaseRmse,
    #[error("series are empty or misaligned")]
    EmptyOverlap,
}

impl From<OlsError> for ModelError {
    fn from(e: OlsError) -> Self {
        match e {
            OlsError::Singular => {
                ModelError::DegenerateFit("singular design (constant or collinear lags)".into())
            }
            OlsError::TooFewObservations => {
                ModelError::InsufficientData { needed: 1, found: 0 }
            }
        }
    }
}

/// Scale on which a model is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Level,
    Log,
}

/// A fitted autoregression y_t = c + sum_k phi_k y_{t-k} + eta_t, carrying
/// everything downstream stages need: innovation variance, in-sample
/// per-horizon forecast-error variances (for log-bias correction), and a
/// stationarity flag from the characteristic roots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub intercept: f64,
    pub coeffs: Vec<f64>,
    /// Residual variance, RSS / (n_eff - p - 1).
    pub noise_variance: f64,
    /// `horizon_error_variance[j-1]` is the in-sample variance of the j-step
    /// forecast error on the fit scale, j = 1..=tau_max.
    pub horizon_error_variance: Vec<f64>,
    pub transform: Transform,
    /// All characteristic roots strictly outside the unit circle.
    pub stationary: bool,
    pub intercept_std_error: f64,
    pub coeff_std_errors: Vec<f64>,
    /// Number of regression rows used in the fit.
    pub n_obs: usize,
}

impl ArModel {
    /// Build a model from known parameters, with per-horizon error variances
    /// filled from the closed-form per-step expression. Used by simulation
    /// oracles and synthetic ground truth.
    pub fn from_parameters(
        intercept: f64,
        coeffs: Vec<f64>,
        noise_variance: f64,
        transform: Transform,
        tau_max: usize,
    ) -> Self {
        let stationary = is_stationary(&coeffs);
        let mut model = ArModel {
            order: coeffs.len(),
            intercept,
            coeffs,
            noise_variance,
            horizon_error_variance: Vec::new(),
            transform,
            stationary,
            intercept_std_error: 0.0,
            coeff_std_errors: Vec::new(),
            n_obs: 0,
        };
        model.horizon_error_variance =
            (1..=tau_max).map(|j| step_error_variance(&model, j)).collect();
        model
    }

    pub fn tau_max(&self) -> usize {
        self.horizon_error_variance.len()
    }

    /// Equilibrium (unconditional mean) of the recursion, c / (1 - sum phi).
    pub fn equilibrium(&self) -> Option<f64> {
        let s: f64 = self.coeffs.iter().sum();
        let denom = 1.0 - s;
        (denom.abs() > 1e-12).then(|| self.intercept / denom)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Multi-step forecast on the level scale, with the integrated total and the
/// uncertainty band used by the robust hedge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastPath {
    pub origin_date: Option<NaiveDate>,
    pub horizon: usize,
    /// Level-scale point forecasts, one per step ahead.
    pub points: Vec<f64>,
    /// Sum of the point forecasts over the horizon.
    pub integrated_point: f64,
    pub theta: f64,
    pub theta_mode: ThetaMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMode {
    ClosedForm,
    Empirical,
}

/// Scale on which an uncertainty band is expressed. The closed form lives on
/// the fit scale; empirical bands are measured on level forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaScale {
    Level,
    Log,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Theta {
    pub value: f64,
    pub mode: ThetaMode,
    pub scale: ThetaScale,
}

fn to_fit_scale(values: &[f64], transform: Transform) -> Result<Vec<f64>, ModelError> {
    match transform {
        Transform::Level => Ok(values.to_vec()),
        Transform::Log => values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v.ln())
                } else {
                    Err(ModelError::NonPositiveValue(v))
                }
            })
            .collect(),
    }
}

/// Fit an AR(p) by conditional Gaussian maximum likelihood (least squares on
/// the p-lag regression) with per-horizon error variances up to
/// [`DEFAULT_TAU_MAX`].
pub fn fit_ar(values: &[f64], p: usize, transform: Transform) -> Result<ArModel, ModelError> {
    fit_ar_with_horizon(values, p, transform, DEFAULT_TAU_MAX)
}

pub fn fit_ar_with_horizon(
    values: &[f64],
    p: usize,
    transform: Transform,
    tau_max: usize,
) -> Result<ArModel, ModelError> {
    assert!(p >= 1, "order must be at least 1");
    let needed = p + 20;
    if values.len() < needed {
        return Err(ModelError::InsufficientData { needed, found: values.len() });
    }
    let y = to_fit_scale(values, transform)?;

    let n = y.len();
    let mut rows = Vec::with_capacity(n - p);
    let mut targets = Vec::with_capacity(n - p);
    for t in p..n {
        let mut row = Vec::with_capacity(p + 1);
        row.push(1.0);
        for k in 1..=p {
            row.push(y[t - k]);
        }
        rows.push(row);
        targets.push(y[t]);
    }
    let ols = fit_ols(&rows, &targets)?;

    let intercept = ols.coeffs[0];
    let coeffs = ols.coeffs[1..].to_vec();
    let stationary = is_stationary(&coeffs);
    let mut model = ArModel {
        order: p,
        intercept,
        coeffs,
        noise_variance: ols.residual_variance,
        horizon_error_variance: Vec::new(),
        transform,
        stationary,
        intercept_std_error: ols.std_errors[0],
        coeff_std_errors: ols.std_errors[1..].to_vec(),
        n_obs: ols.n_obs,
    };
    model.horizon_error_variance = horizon_error_variances(&model, &y, tau_max)?;
    Ok(model)
}

/// Fit the HAR-style restriction y_{t+1} = c + a y_t + (b/4) sum_{i=1..4}
/// y_{t-i} and store it as a tied-coefficient AR(5), so forecasting, impulse
/// weights and error bands apply unchanged.
pub fn fit_har(values: &[f64], transform: Transform) -> Result<ArModel, ModelError> {
    fit_har_with_horizon(values, transform, DEFAULT_TAU_MAX)
}

pub fn fit_har_with_horizon(
    values: &[f64],
    transform: Transform,
    tau_max: usize,
) -> Result<ArModel, ModelError> {
    const P: usize = 5;
    let needed = P + 20;
    if values.len() < needed {
        return Err(ModelError::InsufficientData { needed, found: values.len() });
    }
    let y = to_fit_scale(values, transform)?;

    let n = y.len();
    let mut rows = Vec::with_capacity(n - P);
    let mut targets = Vec::with_capacity(n - P);
    for t in P..n {
        let avg = (y[t - 2] + y[t - 3] + y[t - 4] + y[t - 5]) / 4.0;
        rows.push(vec![1.0, y[t - 1], avg]);
        targets.push(y[t]);
    }
    let ols = fit_ols(&rows, &targets)?;

    let daily = ols.coeffs[1];
    let weekly = ols.coeffs[2];
    let coeffs = vec![daily, weekly / 4.0, weekly / 4.0, weekly / 4.0, weekly / 4.0];
    let se_w = ols.std_errors[2] / 4.0;
    let coeff_std_errors = vec![ols.std_errors[1], se_w, se_w, se_w, se_w];
    let stationary = is_stationary(&coeffs);
    let mut model = ArModel {
        order: P,
        intercept: ols.coeffs[0],
        coeffs,
        noise_variance: ols.residual_variance,
        horizon_error_variance: Vec::new(),
        transform,
        stationary,
        intercept_std_error: ols.std_errors[0],
        coeff_std_errors,
        n_obs: ols.n_obs,
    };
    model.horizon_error_variance = horizon_error_variances(&model, &y, tau_max)?;
    Ok(model)
}

/// In-sample j-step forecast-error variances on the fit scale, j=1..=tau_max.
/// For stationary models the vector is forced non-decreasing (the population
/// quantity is; sampling noise may locally invert the estimates).
fn horizon_error_variances(
    model: &ArModel,
    y: &[f64],
    tau_max: usize,
) -> Result<Vec<f64>, ModelError> {
    let p = model.order;
    let n = y.len();
    if tau_max == 0 {
        return Ok(Vec::new());
    }
    if n < p + tau_max + 3 {
        return Err(ModelError::InsufficientData { needed: p + tau_max + 3, found: n });
    }
    let mut errors: Vec<Vec<f64>> = vec![Vec::new(); tau_max];
    for origin in (p - 1)..(n - 1) {
        let horizon = (n - 1 - origin).min(tau_max);
        let preds = recurse_forecasts(model.intercept, &model.coeffs, &y[..=origin], horizon);
        for (j, &pred) in preds.iter().enumerate() {
            errors[j].push(y[origin + 1 + j] - pred);
        }
    }
    let mut out = Vec::with_capacity(tau_max);
    for errs in &errors {
        if errs.len() < 3 {
            return Err(ModelError::InsufficientData { needed: 3, found: errs.len() });
        }
        out.push(sample_variance(errs));
    }
    if model.stationary {
        for j in 1..out.len() {
            if out[j] < out[j - 1] {
                out[j] = out[j - 1];
            }
        }
    }
    Ok(out)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

fn sample_std(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

/// Plug-in recursion: each forecast feeds back as a lagged value. `history`
/// is on the fit scale, most recent value last.
fn recurse_forecasts(intercept: f64, coeffs: &[f64], history: &[f64], tau: usize) -> Vec<f64> {
    let p = coeffs.len();
    debug_assert!(history.len() >= p);
    let mut buf: Vec<f64> = history[history.len() - p..].to_vec();
    let mut out = Vec::with_capacity(tau);
    for _ in 0..tau {
        let mut v = intercept;
        for (k, &phi) in coeffs.iter().enumerate() {
            v += phi * buf[buf.len() - 1 - k];
        }
        out.push(v);
        buf.push(v);
    }
    out
}

/// Reverse a log-scale point forecast to the level scale,
/// exp(log_point + v/2), where v is the forecast-error variance.
pub fn log_bias_correct(log_point: f64, error_variance: f64) -> f64 {
    debug_assert!(error_variance >= 0.0);
    (log_point + 0.5 * error_variance).exp()
}

/// Forecast `tau` steps from `history` (fit scale, most recent last) and
/// attach the closed-form uncertainty band.
pub fn forecast_path(
    model: &ArModel,
    history: &[f64],
    tau: usize,
) -> Result<ForecastPath, ModelError> {
    let theta = integrated_error_variance(model, tau.max(1)).sqrt();
    forecast_path_with_theta(model, history, tau, theta, ThetaMode::ClosedForm)
}

/// Forecast with a caller-supplied band (typically the empirical level-scale
/// band estimated in sample).
pub fn forecast_path_with_theta(
    model: &ArModel,
    history: &[f64],
    tau: usize,
    theta: f64,
    theta_mode: ThetaMode,
) -> Result<ForecastPath, ModelError> {
    assert!(tau >= 1, "horizon must be at least 1");
    assert!(theta >= 0.0, "uncertainty band must be non-negative");
    if history.len() < model.order {
        return Err(ModelError::ShortHistory { needed: model.order, found: history.len() });
    }
    if tau > model.tau_max() {
        return Err(ModelError::HorizonExceeded { tau, tau_max: model.tau_max() });
    }
    let raw = recurse_forecasts(model.intercept, &model.coeffs, history, tau);
    let points: Vec<f64> = match model.transform {
        Transform::Level => raw,
        Transform::Log => raw
            .iter()
            .enumerate()
            .map(|(j, &lp)| log_bias_correct(lp, model.horizon_error_variance[j]))
            .collect(),
    };
    let integrated_point = points.iter().sum();
    Ok(ForecastPath {
        origin_date: None,
        horizon: tau,
        points,
        integrated_point,
        theta,
        theta_mode,
    })
}

/// Impulse weights of the moving-average representation: psi_0 = 1,
/// psi_i = sum_{k=1..min(i,p)} phi_k psi_{i-k}.
pub fn ma_coefficients(model: &ArModel, n: usize) -> Vec<f64> {
    psi_weights(&model.coeffs, n)
}

pub(crate) fn psi_weights(coeffs: &[f64], n: usize) -> Vec<f64> {
    let p = coeffs.len();
    let mut psi = Vec::with_capacity(n + 1);
    psi.push(1.0);
    for i in 1..=n {
        let mut v = 0.0;
        for k in 1..=i.min(p) {
            v += coeffs[k - 1] * psi[i - k];
        }
        psi.push(v);
    }
    psi
}

/// Variance of the j-step forecast error, (sum_{i<j} psi_i^2) sigma_eta^2.
pub fn step_error_variance(model: &ArModel, j: usize) -> f64 {
    assert!(j >= 1, "step must be at least 1");
    let psi = psi_weights(&model.coeffs, j - 1);
    psi.iter().map(|w| w * w).sum::<f64>() * model.noise_variance
}

/// Variance of the integrated error over tau steps. Grouping the error by
/// innovation gives each eta_{t+m} the cumulative weight sum_{i<=tau-m} psi_i,
/// so Var(e_tau) = sigma_eta^2 sum_m (C_{tau-m})^2.
pub fn integrated_error_variance(model: &ArModel, tau: usize) -> f64 {
    assert!(tau >= 1, "horizon must be at least 1");
    let psi = psi_weights(&model.coeffs, tau - 1);
    let mut cum = 0.0;
    let mut total = 0.0;
    for w in psi {
        cum += w;
        total += cum * cum;
    }
    total * model.noise_variance
}

/// In-sample integrated forecast errors for horizon `tau`, on the level scale
/// of `values`. For log fits the forecasts are bias-corrected before the
/// errors are taken, mirroring how forecasts are consumed downstream.
pub fn integrated_forecast_errors(
    model: &ArModel,
    values: &[f64],
    tau: usize,
) -> Result<Vec<f64>, ModelError> {
    assert!(tau >= 1);
    if tau > model.tau_max() {
        return Err(ModelError::HorizonExceeded { tau, tau_max: model.tau_max() });
    }
    let y = to_fit_scale(values, model.transform)?;
    let p = model.order;
    let n = y.len();
    if n < p + tau {
        return Err(ModelError::InsufficientData { needed: p + tau, found: n });
    }
    let mut errors = Vec::new();
    for origin in (p - 1)..(n - tau) {
        let raw = recurse_forecasts(model.intercept, &model.coeffs, &y[..=origin], tau);
        let forecast_sum: f64 = match model.transform {
            Transform::Level => raw.iter().sum(),
            Transform::Log => raw
                .iter()
                .enumerate()
                .map(|(j, &lp)| log_bias_correct(lp, model.horizon_error_variance[j]))
                .sum(),
        };
        let realized_sum: f64 = values[origin + 1..=origin + tau].iter().sum();
        errors.push(realized_sum - forecast_sum);
    }
    Ok(errors)
}

/// Uncertainty band for the integrated variance forecast over `tau` steps.
/// Closed form takes the square root of [`integrated_error_variance`] (fit
/// scale); the empirical mode takes the standard deviation of in-sample
/// integrated errors (level scale).
pub fn uncertainty_theta(
    model: &ArModel,
    tau: usize,
    mode: ThetaMode,
    in_sample_errors: Option<&[f64]>,
) -> Result<Theta, ModelError> {
    match mode {
        ThetaMode::ClosedForm => {
            let scale = match model.transform {
                Transform::Level => ThetaScale::Level,
                Transform::Log => ThetaScale::Log,
            };
            Ok(Theta { value: integrated_error_variance(model, tau).sqrt(), mode, scale })
        }
        ThetaMode::Empirical => {
            let errors = in_sample_errors.unwrap_or(&[]);
            if errors.len() < MIN_EMPIRICAL_THETA_OBS {
                return Err(ModelError::TooFewErrorObservations {
                    needed: MIN_EMPIRICAL_THETA_OBS,
                    found: errors.len(),
                });
            }
            Ok(Theta { value: sample_std(errors), mode, scale: ThetaScale::Level })
        }
    }
}

/// Deviation of the hedge ratio from its equilibrium value h steps after a
/// unit shock hits both the covariance and the variance recursion:
/// (cov_eq + psi_h^cov) / (var_eq + psi_h^var) - cov_eq / var_eq.
pub fn impulse_response_delta(
    model_sf: &ArModel,
    model_f: &ArModel,
    h: usize,
) -> Result<f64, ModelError> {
    if !model_sf.stationary || !model_f.stationary {
        return Err(ModelError::NonStationary);
    }
    let cov_eq = model_sf.equilibrium().ok_or(ModelError::NonStationary)?;
    let var_eq = model_f.equilibrium().ok_or(ModelError::NonStationary)?;
    let psi_sf = *ma_coefficients(model_sf, h).last().unwrap();
    let psi_f = *ma_coefficients(model_f, h).last().unwrap();
    let denom = var_eq + psi_f;
    if denom.abs() < 1e-300 || var_eq.abs() < 1e-300 {
        return Err(ModelError::ZeroDenominator);
    }
    Ok((cov_eq + psi_sf) / denom - cov_eq / var_eq)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    /// Statistic below the 5% constant-only critical value.
    pub reject_unit_root: bool,
    pub lag_order: usize,
    pub n_obs: usize,
}

/// Augmented Dickey-Fuller regression with a constant: delta y_t on
/// (1, y_{t-1}, delta y_{t-1}, ..., delta y_{t-lag}). The statistic is the
/// t-ratio on y_{t-1}.
pub fn adf_test(values: &[f64], lag_order: usize) -> Result<AdfResult, ModelError> {
    let needed = lag_order + 20;
    if values.len() < needed {
        return Err(ModelError::InsufficientData { needed, found: values.len() });
    }
    let n = values.len();
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();

    // row for time t uses diffs[t-1] as target; first usable t has lag_order
    // differences available before it
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for t in (lag_order + 1)..n {
        let mut row = Vec::with_capacity(lag_order + 2);
        row.push(1.0);
        row.push(values[t - 1]);
        for l in 1..=lag_order {
            row.push(diffs[t - 1 - l]);
        }
        rows.push(row);
        targets.push(diffs[t - 1]);
    }
    let ols = fit_ols(&rows, &targets)?;
    let beta = ols.coeffs[1];
    let se = ols.std_errors[1];
    if se <= 0.0 || !se.is_finite() {
        return Err(ModelError::DegenerateFit("zero standard error in ADF regression".into()));
    }
    let statistic = beta / se;
    Ok(AdfResult {
        statistic,
        reject_unit_root: statistic < ADF_CRITICAL_5PCT,
        lag_order,
        n_obs: ols.n_obs,
    })
}

/// Root mean squared forecast error over aligned slices.
pub fn rmse(forecasts: &[f64], realized: &[f64]) -> Result<f64, ModelError> {
    if forecasts.is_empty() || forecasts.len() != realized.len() {
        return Err(ModelError::EmptyOverlap);
    }
    let ss: f64 = forecasts.iter().zip(realized).map(|(f, r)| (f - r) * (f - r)).sum();
    Ok((ss / forecasts.len() as f64).sqrt())
}

/// RMSEs of two candidate forecast sets normalized by a base set's RMSE.
pub fn rmse_ratio(
    forecasts_a: &[f64],
    forecasts_b: &[f64],
    forecasts_base: &[f64],
    realized: &[f64],
) -> Result<(f64, f64), ModelError> {
    let base = rmse(forecasts_base, realized)?;
    if base == 0.0 {
        return Err(ModelError::ZeroBaseRmse);
    }
    Ok((rmse(forecasts_a, realized)? / base, rmse(forecasts_b, realized)? / base))
}

/// True when all roots of 1 - phi_1 z - ... - phi_p z^p lie strictly outside
/// the unit circle, via the Schur-Cohn reduction on the reversed polynomial.
pub fn is_stationary(coeffs: &[f64]) -> bool {
    let p = coeffs.len();
    if p == 0 {
        return true;
    }
    // reversed polynomial lambda^p - phi_1 lambda^{p-1} - ... - phi_p, whose
    // roots must lie strictly inside the unit circle
    let mut a: Vec<f64> = Vec::with_capacity(p + 1);
    for k in (1..=p).rev() {
        a.push(-coeffs[k - 1]);
    }
    a.push(1.0);

    while a.len() > 1 {
        let d = a.len() - 1;
        let lead = a[d];
        if lead.abs() <= f64::EPSILON {
            return false;
        }
        let delta = a[0] / lead;
        if delta.abs() >= 1.0 {
            return false;
        }
        let mut b = vec![0.0; d];
        for j in 1..=d {
            b[j - 1] = a[j] - delta * a[d - j];
        }
        a = b;
    }
    true
}
