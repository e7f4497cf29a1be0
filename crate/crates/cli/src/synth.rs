//! Synthetic intraday datasets with known realized-measure dynamics.
//!
//! Daily realized-variance targets follow log-scale autoregressions (and a
//! level-scale one for the pair covariance); intraday bar returns are drawn
//! jointly and then rescaled so each day's realized matrix reproduces the
//! target exactly. Fitting models to the emitted files therefore recovers
//! the generating parameters up to ordinary regression error.
//!
//! Two layouts: an explicit two-instrument spec with its own covariance
//! process, and a one-factor universe of any width where covariance targets
//! derive from per-symbol loadings.

use std::fs;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{AssetClass, WindowConfig};
use crate::pipeline::{write_atomic, AppError};

/// Autoregression spec for a target daily series.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArSpec {
    pub phi0: f64,
    pub phi: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSymbol {
    pub name: String,
    pub class: AssetClass,
    /// Log-scale dynamics of the symbol's daily realized variance.
    pub rv: ArSpec,
    /// Factor loading in [-1, 1]; pairwise return correlation is the product
    /// of loadings.
    #[serde(default = "default_loading")]
    pub loading: f64,
}

fn default_loading() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSynth {
    pub symbol_s: String,
    pub class_s: AssetClass,
    pub symbol_f: String,
    pub class_f: AssetClass,
    /// Log-scale AR for the two realized variances.
    pub rv_s: ArSpec,
    pub rv_f: ArSpec,
    /// Level-scale AR for the realized covariance (sign-free).
    pub rcv: ArSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSynth {
    pub symbols: Vec<SynthSymbol>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_days: usize,
    #[serde(default)]
    pub seed: u64,
    pub start_date: NaiveDate,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub pair: Option<PairSynth>,
    #[serde(default)]
    pub factor: Option<FactorSynth>,
}

impl SynthConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, AppError> {
        let cfg: SynthConfig =
            toml::from_str(s).map_err(|e| AppError::Config(format!("synth spec parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read synth spec {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        match (&self.pair, &self.factor) {
            (Some(_), Some(_)) => {
                Err(AppError::Config("give either a pair spec or a factor spec, not both".into()))
            }
            (None, None) => Err(AppError::Config("a pair or factor spec is required".into())),
            (Some(p), None) => {
                if p.symbol_s == p.symbol_f {
                    return Err(AppError::Config("pair symbols must differ".into()));
                }
                for spec in [&p.rv_s, &p.rv_f, &p.rcv] {
                    validate_ar(spec)?;
                }
                Ok(())
            }
            (None, Some(f)) => {
                if f.symbols.is_empty() {
                    return Err(AppError::Config("factor spec needs at least one symbol".into()));
                }
                for s in &f.symbols {
                    validate_ar(&s.rv)?;
                    if !(-1.0..=1.0).contains(&s.loading) {
                        return Err(AppError::Config(format!(
                            "loading {} of {} outside [-1, 1]",
                            s.loading, s.name
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn symbol_names(&self) -> Vec<(String, AssetClass)> {
        match (&self.pair, &self.factor) {
            (Some(p), _) => vec![
                (p.symbol_s.clone(), p.class_s),
                (p.symbol_f.clone(), p.class_f),
            ],
            (_, Some(f)) => f.symbols.iter().map(|s| (s.name.clone(), s.class)).collect(),
            _ => Vec::new(),
        }
    }
}

fn validate_ar(spec: &ArSpec) -> Result<(), AppError> {
    if spec.phi.is_empty() {
        return Err(AppError::Config("AR spec needs at least one lag coefficient".into()));
    }
    if spec.noise_std < 0.0 {
        return Err(AppError::Config("AR noise level must be non-negative".into()));
    }
    if !robusthedge::ts_models::is_stationary(&spec.phi) {
        return Err(AppError::Config(format!(
            "AR spec with coefficients {:?} is not stationary",
            spec.phi
        )));
    }
    Ok(())
}

/// Weekday sequence of `n` dates starting at or after `start`.
pub fn trading_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday() != Weekday::Sat && d.weekday() != Weekday::Sun {
            out.push(d);
        }
        d = d.succ_opt().expect("date overflow");
    }
    out
}

fn simulate_ar_path(spec: &ArSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let p = spec.phi.len();
    let burn = 300;
    let mut y: Vec<f64> = vec![spec.phi0 / (1.0 - spec.phi.iter().sum::<f64>()); p];
    for _ in 0..(n + burn) {
        let mut v = spec.phi0;
        for (k, &phi) in spec.phi.iter().enumerate() {
            v += phi * y[y.len() - 1 - k];
        }
        let eps: f64 = rng.sample(StandardNormal);
        y.push(v + spec.noise_std * eps);
    }
    y.split_off(p + burn)
}

/// Lower-triangular Cholesky factor; fails on a non positive definite input.
fn cholesky(mat: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = mat.len();
    let mut l = vec![vec![0.0_f64; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = mat[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Joint interval returns whose realized sum matrix equals `target` exactly:
/// raw draws are whitened with the Cholesky factor of their own sum matrix
/// and recolored with the target's.
fn exact_cov_returns(
    target: &[Vec<f64>],
    n_intervals: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, AppError> {
    let n_sym = target.len();
    assert!(n_intervals > n_sym, "need more intervals than symbols");
    let x: Vec<Vec<f64>> = (0..n_sym)
        .map(|_| (0..n_intervals).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut gram = vec![vec![0.0_f64; n_sym]; n_sym];
    for i in 0..n_sym {
        for j in 0..=i {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum();
            gram[i][j] = s;
            gram[j][i] = s;
        }
    }
    let l_gram = cholesky(&gram)
        .ok_or_else(|| AppError::Numeric("degenerate Gram matrix in bar generation".into()))?;
    let l_target = cholesky(target)
        .ok_or_else(|| AppError::Numeric("covariance target not positive definite".into()))?;

    // y = L_gram^{-1} x by forward substitution, column by column
    let mut y = vec![vec![0.0_f64; n_intervals]; n_sym];
    for col in 0..n_intervals {
        for i in 0..n_sym {
            let mut s = x[i][col];
            for k in 0..i {
                s -= l_gram[i][k] * y[k][col];
            }
            y[i][col] = s / l_gram[i][i];
        }
    }
    // r = L_target y
    let mut r = vec![vec![0.0_f64; n_intervals]; n_sym];
    for col in 0..n_intervals {
        for i in 0..n_sym {
            let mut s = 0.0;
            for k in 0..=i {
                s += l_target[i][k] * y[k][col];
            }
            r[i][col] = s;
        }
    }
    Ok(r)
}

/// Ground truth emitted next to the data files.
#[derive(Debug, Clone, Serialize)]
struct GroundTruth<'a> {
    spec: &'a SynthConfig,
    /// Clamped covariance targets (days where the raw AR draw violated the
    /// correlation bound).
    clamped_covariance_days: usize,
    note: &'static str,
}

/// Generate the dataset under `out_dir`: one bar CSV per symbol plus a
/// ground-truth JSON. Deterministic in the spec's seed.
pub fn generate_synthetic(spec: &SynthConfig, out_dir: &Path) -> Result<Vec<String>, AppError> {
    spec.validate()?;
    fs::create_dir_all(out_dir)
        .map_err(|e| AppError::Io(format!("cannot create {}: {e}", out_dir.display())))?;

    let window = spec.window.build()?;
    let m = window.max_intervals();
    let n_returns = m - 1;
    let dates = trading_dates(spec.start_date, spec.n_days);

    let symbols = spec.symbol_names();
    let n_sym = symbols.len();

    let stream_rng = |stream: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(stream);
        r
    };

    // daily covariance targets per day, n_sym x n_sym
    let mut clamped = 0usize;
    let targets: Vec<Vec<Vec<f64>>> = if let Some(pair) = &spec.pair {
        let log_rv_s = simulate_ar_path(&pair.rv_s, spec.n_days, &mut stream_rng(1));
        let log_rv_f = simulate_ar_path(&pair.rv_f, spec.n_days, &mut stream_rng(2));
        let rcv_raw = simulate_ar_path(&pair.rcv, spec.n_days, &mut stream_rng(3));
        (0..spec.n_days)
            .map(|t| {
                let rv_s = log_rv_s[t].exp();
                let rv_f = log_rv_f[t].exp();
                let bound = 0.99 * (rv_s * rv_f).sqrt();
                let mut rcv = rcv_raw[t];
                if rcv.abs() > bound {
                    rcv = rcv.signum() * bound;
                    clamped += 1;
                }
                vec![vec![rv_s, rcv], vec![rcv, rv_f]]
            })
            .collect()
    } else {
        let factor = spec.factor.as_ref().unwrap();
        let paths: Vec<Vec<f64>> = factor
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| simulate_ar_path(&s.rv, spec.n_days, &mut stream_rng(1 + i as u64)))
            .collect();
        (0..spec.n_days)
            .map(|t| {
                let rvs: Vec<f64> = paths.iter().map(|p| p[t].exp()).collect();
                let mut c = vec![vec![0.0; n_sym]; n_sym];
                for i in 0..n_sym {
                    for j in 0..n_sym {
                        if i == j {
                            c[i][j] = rvs[i];
                        } else {
                            let rho = factor.symbols[i].loading * factor.symbols[j].loading;
                            c[i][j] = rho * (rvs[i] * rvs[j]).sqrt();
                        }
                    }
                }
                c
            })
            .collect()
    };

    // bar paths: per day, exact-covariance interval returns chained into prices
    let mut prices = vec![100.0_f64; n_sym];
    let mut files: Vec<(String, String)> = symbols
        .iter()
        .map(|(name, _)| {
            (name.clone(), String::from("date,time,open,high,low,close,volume\n"))
        })
        .collect();

    let mut bar_rng = stream_rng(1_000);
    for (t, date) in dates.iter().enumerate() {
        // realized estimators rescale by M / (M - 1), so the generated sums
        // are shrunk to compensate
        let scale = n_returns as f64 / m as f64;
        let target: Vec<Vec<f64>> =
            targets[t].iter().map(|row| row.iter().map(|v| v * scale).collect()).collect();
        let rets = exact_cov_returns(&target, n_returns, &mut bar_rng)?;
        for (i, (_, body)) in files.iter_mut().enumerate() {
            let mut px = prices[i];
            for interval in 0..m {
                if interval > 0 {
                    px *= rets[i][interval - 1].exp();
                }
                let time = window.interval_end_time(interval);
                let date_str = date.format("%Y-%m-%d");
                let time_str = time.format("%H:%M");
                body.push_str(&format!(
                    "{date_str},{time_str},{px},{px},{px},{px},100\n"
                ));
            }
            prices[i] = px;
        }
    }

    let mut written = Vec::new();
    for (name, body) in &files {
        let path = out_dir.join(format!("{name}.csv"));
        write_atomic(&path, body.as_bytes())?;
        written.push(format!("{name}.csv"));
    }
    let truth = GroundTruth {
        spec,
        clamped_covariance_days: clamped,
        note: "rv specs are on the log scale; rcv spec (pair layout) is on the level scale",
    };
    let truth_path = out_dir.join("ground_truth.json");
    write_atomic(
        &truth_path,
        serde_json::to_string_pretty(&truth)
            .map_err(|e| AppError::Io(e.to_string()))?
            .as_bytes(),
    )?;
    written.push("ground_truth.json".into());
    Ok(written)
}
