//! Stage-by-stage pipeline: ingest, fit, forecast, hedge, backtest,
//! bootstrap, scatter, manifest.
//!
//! Every stage is deterministic given the config (all randomness flows from
//! the configured seeds), pair cells run in parallel and are reduced in a
//! fixed order, and each output file is written whole and renamed into
//! place, so a failed run leaves no partial files. The manifest lists every
//! file with its row count.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use robusthedge::backtest::{
    hedged_returns, performance_report, quartile_threshold, HedgeMethod, Metric,
};
use robusthedge::inference::{
    aggregate_differences, bootstrap_replication_diffs, BootstrapScheme,
};
use robusthedge::market_data::{
    align_pair, daily_close_returns, daily_realized_covariance, daily_realized_variance,
    pair_correlation, parse_bar_file, DataError, IntradayBarSeries, RealizedSeries, SeriesKind,
};
use robusthedge::robust_hedge::{hedge_path, HedgePath};
use robusthedge::ts_models::{
    adf_test, fit_ar_with_horizon, fit_har_with_horizon, forecast_path_with_theta,
    impulse_response_delta, integrated_forecast_errors, rmse, uncertainty_theta, ArModel,
    ForecastPath, ModelError, Theta, ThetaMode, ThetaScale, Transform,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    pair_type_code, DeltaRule, ModelKind, ModelSpec, PipelineConfig, ResolvedPair,
};
use crate::scatter::{scatter_rows, ScatterRow};

/// Error taxonomy mapped onto process exit codes: configuration problems
/// exit 1, data problems 2, numeric failures 3.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Data(_) | AppError::Io(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }
}

impl From<DataError> for AppError {
    fn from(e: DataError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<robusthedge::robust_hedge::HedgeError> for AppError {
    fn from(e: robusthedge::robust_hedge::HedgeError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<robusthedge::backtest::BacktestError> for AppError {
    fn from(e: robusthedge::backtest::BacktestError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<robusthedge::inference::InferenceError> for AppError {
    fn from(e: robusthedge::inference::InferenceError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

fn ctx<T>(r: Result<T, AppError>, stage: &str, what: &str) -> Result<T, AppError> {
    r.map_err(|e| match e {
        AppError::Config(m) => AppError::Config(format!("stage {stage}: {what}: {m}")),
        AppError::Data(m) => AppError::Data(format!("stage {stage}: {what}: {m}")),
        AppError::Numeric(m) => AppError::Numeric(format!("stage {stage}: {what}: {m}")),
        AppError::Io(m) => AppError::Io(format!("stage {stage}: {what}: {m}")),
    })
}

/// Write bytes to `path` via a temporary sibling and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::Io(format!("mkdir {}: {e}", parent.display())))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| AppError::Io(format!("write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| AppError::Io(format!("rename onto {}: {e}", path.display())))?;
    Ok(())
}

/// How far to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Fit,
    Forecast,
    Hedge,
    Backtest,
    Bootstrap,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub bootstrap_seed: u64,
    pub stages: Vec<StageManifest>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn files(&self) -> impl Iterator<Item = &FileEntry> {
        self.stages.iter().flat_map(|s| s.files.iter())
    }
}

/// Output recorder: writes files and keeps the manifest in sync.
struct Recorder {
    out_dir: PathBuf,
    stages: Vec<StageManifest>,
    warnings: Vec<String>,
}

impl Recorder {
    fn new(out_dir: &Path) -> Self {
        Recorder { out_dir: out_dir.to_path_buf(), stages: Vec::new(), warnings: Vec::new() }
    }

    fn stage_mut(&mut self, stage: &str) -> &mut StageManifest {
        if self.stages.last().map(|s| s.stage.as_str()) != Some(stage) {
            self.stages.push(StageManifest { stage: stage.into(), files: Vec::new() });
        }
        self.stages.last_mut().unwrap()
    }

    fn file(&mut self, stage: &str, rel: &str, rows: usize, bytes: &[u8]) -> Result<(), AppError> {
        write_atomic(&self.out_dir.join(rel), bytes)?;
        self.stage_mut(stage).files.push(FileEntry { path: rel.into(), rows });
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }
}

/// CSV body from header + preformatted lines.
fn csv_body(header: &str, lines: &[String]) -> Vec<u8> {
    let mut s = String::with_capacity(header.len() + 1 + lines.iter().map(|l| l.len() + 1).sum::<usize>());
    s.push_str(header);
    s.push('\n');
    for l in lines {
        s.push_str(l);
        s.push('\n');
    }
    s.into_bytes()
}

fn date_value_csv(series: &RealizedSeries) -> Vec<u8> {
    let lines: Vec<String> = series
        .dates
        .iter()
        .zip(&series.values)
        .map(|(d, v)| format!("{d},{v}"))
        .collect();
    csv_body("date,value", &lines)
}

/// One row of the backtest report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub hedged: String,
    pub hedging: String,
    pub pair_correlation: f64,
    pub pair_type: u8,
    pub method: String,
    pub model: String,
    pub tau: usize,
    pub bp: f64,
    pub delta: f64,
    pub he: f64,
    pub he_c: f64,
    pub he_r: f64,
    pub pnl: f64,
    pub sharpe: f64,
    pub omega: f64,
    pub omega_capped: bool,
    pub max_drawdown: f64,
    pub var95: f64,
    pub es95: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub hedged: String,
    pub hedging: String,
    pub model: String,
    pub tau: usize,
    pub bp: f64,
    pub measure: String,
    pub mean_difference: f64,
    pub p_value: f64,
    pub mean_difference_temporal: f64,
    pub p_value_temporal: f64,
}

pub fn rows_to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, AppError>
where
    T: Serialize,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| AppError::Io(format!("csv serialize: {e}")))?;
    }
    w.into_inner().map_err(|e| AppError::Io(format!("csv flush: {e}")))
}

/// Header-only CSV for empty row sets, so schemas stay visible.
fn empty_csv(header: &str) -> Vec<u8> {
    format!("{header}\n").into_bytes()
}

const REPORT_HEADER: &str = "hedged,hedging,pair_correlation,pair_type,method,model,tau,bp,delta,he,he_c,he_r,pnl,sharpe,omega,omega_capped,max_drawdown,var95,es95";
const BOOTSTRAP_HEADER: &str = "hedged,hedging,model,tau,bp,measure,mean_difference,p_value,mean_difference_temporal,p_value_temporal";

struct SymbolData {
    rv: RealizedSeries,
    returns: RealizedSeries,
    bars: IntradayBarSeries,
}

/// Per (pair, model) work product, accumulated in parallel.
struct CellOut {
    pair: ResolvedPair,
    model: String,
    model_json_f: String,
    model_json_sf: String,
    irf: Vec<(usize, f64)>,
    /// per tau: (forecast csv lines, hedge path on prevailing dates)
    per_tau: Vec<TauOut>,
    warnings: Vec<String>,
}

struct TauOut {
    tau: usize,
    /// forecast CSV already written from the cell: (relative path, rows)
    forecast_file: Option<(String, usize)>,
    path: HedgePath,
    report_rows: Vec<ReportRow>,
    /// net returns at the bootstrap cost level, (robust, standard)
    bootstrap_nets: Option<(Vec<f64>, Vec<f64>)>,
}

fn fit_model(spec: &ModelSpec, values: &[f64], transform: Transform, tau_max: usize) -> Result<ArModel, ModelError> {
    match spec.kind {
        ModelKind::Ar => fit_ar_with_horizon(values, spec.p, transform, tau_max),
        ModelKind::Har => fit_har_with_horizon(values, transform, tau_max),
    }
}

/// Run the pipeline through `through` and write the manifest. Rerunning with
/// an identical config and data reproduces every file bit for bit.
pub fn run_pipeline(cfg: &PipelineConfig, through: Stage) -> Result<RunManifest, AppError> {
    cfg.validate()?;
    let window = cfg.window.build()?;
    let mut rec = Recorder::new(&cfg.output_dir);

    // ingest: bars, realized variance, daily returns per symbol
    let mut symbols: BTreeMap<String, SymbolData> = BTreeMap::new();
    for spec in &cfg.symbols {
        let path = cfg.data_dir.join(format!("{}.csv", spec.name));
        let file = fs::File::open(&path).map_err(|e| {
            AppError::Data(format!("stage ingest: {}: cannot open {}: {e}", spec.name, path.display()))
        })?;
        let bars = ctx(
            parse_bar_file(file, &spec.name, &window).map_err(AppError::from),
            "ingest",
            &spec.name,
        )?;
        let (rv, missing) = daily_realized_variance(&bars, &window, cfg.missing_day_policy);
        if !missing.is_empty() {
            rec.warn(format!("ingest: {}: {} day(s) without usable intervals", spec.name, missing.len()));
        }
        let ret = daily_close_returns(&bars);
        if !ret.skipped_days.is_empty() {
            rec.warn(format!("ingest: {}: {} day(s) without bars skipped in returns", spec.name, ret.skipped_days.len()));
        }
        rec.file(
            "ingest",
            &format!("realized/rv_{}.csv", spec.name),
            rv.len(),
            &date_value_csv(&rv),
        )?;
        rec.file(
            "ingest",
            &format!("realized/returns_{}.csv", spec.name),
            ret.series.len(),
            &date_value_csv(&ret.series),
        )?;
        symbols.insert(spec.name.clone(), SymbolData { rv, returns: ret.series, bars });
    }

    let pairs = cfg.resolve_pairs(&cfg.pairs)?;

    // realized covariances, one per unordered pair
    let mut rcv_map: BTreeMap<(String, String), RealizedSeries> = BTreeMap::new();
    {
        let mut keys: Vec<(String, String)> = pairs
            .iter()
            .map(|p| unordered_key(&p.hedged, &p.hedging))
            .collect();
        keys.sort();
        keys.dedup();
        let computed: Vec<((String, String), RealizedSeries, usize)> = keys
            .par_iter()
            .map(|(a, b)| {
                let (rcv, missing) = daily_realized_covariance(
                    &symbols[a].bars,
                    &symbols[b].bars,
                    &window,
                    cfg.missing_day_policy,
                );
                ((a.clone(), b.clone()), rcv, missing.len())
            })
            .collect();
        for ((a, b), rcv, missing) in computed {
            if missing > 0 {
                rec.warn(format!("ingest: {a}-{b}: {missing} day(s) without joint intervals"));
            }
            rec.file("ingest", &format!("realized/rcv_{a}_{b}.csv"), rcv.len(), &date_value_csv(&rcv))?;
            rcv_map.insert((a, b), rcv);
        }
    }

    if through == Stage::Ingest {
        return finish(cfg, rec);
    }

    // fit diagnostics: ADF screening on the fit scales in use
    {
        let mut lines = Vec::new();
        let mut transforms: Vec<Transform> = cfg.models.iter().map(|m| m.transform).collect();
        transforms.sort_by_key(|t| matches!(t, Transform::Log));
        transforms.dedup();
        for spec in &cfg.symbols {
            let data = &symbols[&spec.name];
            let train = data.rv.slice_dates(NaiveDate::MIN, cfg.train_end);
            for tr in &transforms {
                let scale = match tr {
                    Transform::Level => "level",
                    Transform::Log => "log",
                };
                let vals: Vec<f64> = match tr {
                    Transform::Level => train.values.clone(),
                    Transform::Log => {
                        if train.values.iter().any(|&v| v <= 0.0) {
                            rec.warn(format!("fit: adf: rv_{} has non-positive values, log scale skipped", spec.name));
                            continue;
                        }
                        train.values.iter().map(|v| v.ln()).collect()
                    }
                };
                match adf_test(&vals, cfg.adf_lag) {
                    Ok(r) => lines.push(format!(
                        "rv_{},{scale},{},{},{}",
                        spec.name, cfg.adf_lag, r.statistic, r.reject_unit_root
                    )),
                    Err(e) => rec.warn(format!("fit: adf rv_{} ({scale}): {e}", spec.name)),
                }
            }
        }
        for ((a, b), rcv) in &rcv_map {
            let train = rcv.slice_dates(NaiveDate::MIN, cfg.train_end);
            match adf_test(&train.values, cfg.adf_lag) {
                Ok(r) => lines.push(format!(
                    "rcv_{a}_{b},level,{},{},{}",
                    cfg.adf_lag, r.statistic, r.reject_unit_root
                )),
                Err(e) => rec.warn(format!("fit: adf rcv_{a}_{b}: {e}")),
            }
        }
        rec.file(
            "fit",
            "adf.csv",
            lines.len(),
            &csv_body("series,scale,lag,statistic,reject_unit_root_5pct", &lines),
        )?;
    }

    // pair cells: fit, forecast, hedge, backtest
    let tau_max = cfg.tau_max();
    let cells: Vec<(usize, &ResolvedPair, &ModelSpec)> = {
        let mut v = Vec::new();
        let mut i = 0;
        for p in &pairs {
            for m in &cfg.models {
                v.push((i, p, m));
                i += 1;
            }
        }
        v
    };

    let cell_results: Vec<Result<CellOut, AppError>> = cells
        .par_iter()
        .map(|(_, pair, mspec)| {
            pair_cell(cfg, pair, mspec, &symbols, &rcv_map, tau_max, through)
        })
        .collect();

    let mut outs = Vec::with_capacity(cell_results.len());
    for r in cell_results {
        outs.push(r?);
    }

    // emit per-cell artifacts in deterministic order
    for out in &outs {
        rec.file(
            "fit",
            &format!("models/{}_{}_variance.json", out.pair.label(), out.model),
            1,
            out.model_json_f.as_bytes(),
        )?;
        rec.file(
            "fit",
            &format!("models/{}_{}_covariance.json", out.pair.label(), out.model),
            1,
            out.model_json_sf.as_bytes(),
        )?;
        for w in &out.warnings {
            rec.warn(w.clone());
        }
    }
    {
        let mut irf_lines = Vec::new();
        for out in &outs {
            for (h, v) in &out.irf {
                irf_lines.push(format!("{},{},{},{h},{v}", out.pair.hedged, out.pair.hedging, out.model));
            }
        }
        rec.file(
            "fit",
            "irf.csv",
            irf_lines.len(),
            &csv_body("hedged,hedging,model,horizon,delta", &irf_lines),
        )?;
    }

    if through == Stage::Fit {
        return finish(cfg, rec);
    }

    // out-of-sample one-step RMSE per symbol and model, first model as base
    {
        let mut lines = Vec::new();
        for spec in &cfg.symbols {
            let data = &symbols[&spec.name];
            let mut rmses: Vec<(String, f64)> = Vec::new();
            for mspec in &cfg.models {
                match symbol_rmse(cfg, mspec, &data.rv) {
                    Ok(v) => rmses.push((mspec.name(), v)),
                    Err(e) => rec.warn(format!("forecast: rmse {} {}: {e}", spec.name, mspec.name())),
                }
            }
            if let Some((_, base)) = rmses.first() {
                let base = *base;
                for (name, v) in &rmses {
                    let ratio = if base > 0.0 { v / base } else { f64::NAN };
                    lines.push(format!("{},{name},{v},{ratio}", spec.name));
                }
            }
        }
        rec.file(
            "forecast",
            "rmse.csv",
            lines.len(),
            &csv_body("symbol,model,rmse,ratio_vs_first_model", &lines),
        )?;
    }

    if cfg.emit_forecasts {
        for out in &outs {
            for t in &out.per_tau {
                if let Some((rel, rows)) = &t.forecast_file {
                    rec.stage_mut("forecast")
                        .files
                        .push(FileEntry { path: rel.clone(), rows: *rows });
                }
            }
        }
    }

    if through == Stage::Forecast {
        return finish(cfg, rec);
    }

    for out in &outs {
        for t in &out.per_tau {
            let lines: Vec<String> = (0..t.path.len())
                .map(|i| {
                    format!(
                        "{},{},{},{},{}",
                        t.path.dates[i],
                        t.path.h_standard[i],
                        t.path.h_robust[i],
                        t.path.theta_used[i],
                        t.path.tau
                    )
                })
                .collect();
            rec.file(
                "hedge",
                &format!("hedges/{}_{}_tau{}.csv", out.pair.label(), out.model, t.tau),
                lines.len(),
                &csv_body("date,h_standard,h_robust,theta,tau", &lines),
            )?;
        }
    }

    if through == Stage::Hedge {
        return finish(cfg, rec);
    }

    let report_rows: Vec<ReportRow> = outs
        .iter()
        .flat_map(|o| o.per_tau.iter().flat_map(|t| t.report_rows.iter().cloned()))
        .collect();
    let report_bytes = if report_rows.is_empty() {
        empty_csv(REPORT_HEADER)
    } else {
        rows_to_csv(&report_rows)?
    };
    rec.file("backtest", "report.csv", report_rows.len(), &report_bytes)?;

    if through == Stage::Backtest {
        return finish(cfg, rec);
    }

    // bootstrap stage
    {
        let boot_pairs = cfg.resolve_pairs(&cfg.bootstrap.pairs)?;
        let mut rows: Vec<BootstrapRow> = Vec::new();
        // (model, tau, metric) -> pooled accumulators
        let mut pooled: BTreeMap<(String, usize, usize), Pooled> = BTreeMap::new();

        let boot_cells: Vec<&CellOut> = outs
            .iter()
            .filter(|o| boot_pairs.iter().any(|p| *p == o.pair))
            .collect();

        // pooled sample estimates first
        let mut estimates: HashMap<(String, usize, usize), Vec<f64>> = HashMap::new();
        for out in &boot_cells {
            for t in &out.per_tau {
                if let Some((rob, std)) = &t.bootstrap_nets {
                    let all_r = Metric::compute_all(rob);
                    let all_s = Metric::compute_all(std);
                    for m in Metric::ALL {
                        estimates
                            .entry((out.model.clone(), t.tau, m.index()))
                            .or_default()
                            .push(all_r[m.index()] - all_s[m.index()]);
                    }
                }
            }
        }
        let pooled_estimate: HashMap<(String, usize, usize), f64> = estimates
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
            .collect();

        struct CellBoot {
            model: String,
            tau: usize,
            rows: Vec<BootstrapRow>,
            contributions: Vec<(usize, f64, usize, f64, usize, usize)>,
        }
        struct Pooled {
            sum_block: f64,
            opp_block: usize,
            sum_meb: f64,
            opp_meb: usize,
            n: usize,
        }

        let tasks: Vec<(&CellOut, &TauOut)> = boot_cells
            .iter()
            .flat_map(|o| o.per_tau.iter().map(move |t| (*o, t)))
            .collect();
        let boot_results: Vec<Result<CellBoot, AppError>> = tasks
            .par_iter()
            .filter(|(_, t)| t.bootstrap_nets.is_some())
            .map(|(out, t)| {
                let (rob, std) = t.bootstrap_nets.as_ref().unwrap();
                let what = format!("{} {} tau {}", out.pair, out.model, t.tau);
                let block = ctx(
                    bootstrap_replication_diffs(
                        rob,
                        std,
                        &Metric::ALL,
                        BootstrapScheme::RandomBlock,
                        cfg.bootstrap.block_length,
                        cfg.bootstrap.reps,
                        cfg.bootstrap.seed,
                    )
                    .map_err(AppError::from),
                    "bootstrap",
                    &what,
                )?;
                let meb = ctx(
                    bootstrap_replication_diffs(
                        rob,
                        std,
                        &Metric::ALL,
                        BootstrapScheme::MaxEntropy,
                        cfg.bootstrap.block_length,
                        cfg.bootstrap.reps,
                        cfg.bootstrap.seed,
                    )
                    .map_err(AppError::from),
                    "bootstrap",
                    &what,
                )?;
                let mut rows = Vec::new();
                let mut contributions = Vec::new();
                for m in Metric::ALL {
                    let mi = m.index();
                    let block_diffs: Vec<f64> = block.diffs.iter().map(|d| d[mi]).collect();
                    let meb_diffs: Vec<f64> = meb.diffs.iter().map(|d| d[mi]).collect();
                    let (bd, bp_val) = aggregate_differences(&block_diffs, block.sample_estimates[mi]);
                    let (md, mp) = aggregate_differences(&meb_diffs, meb.sample_estimates[mi]);
                    rows.push(BootstrapRow {
                        hedged: out.pair.hedged.clone(),
                        hedging: out.pair.hedging.clone(),
                        model: out.model.clone(),
                        tau: t.tau,
                        bp: cfg.bootstrap.bp,
                        measure: m.name().into(),
                        mean_difference: bd,
                        p_value: bp_val,
                        mean_difference_temporal: md,
                        p_value_temporal: mp,
                    });
                    let pe = pooled_estimate[&(out.model.clone(), t.tau, mi)];
                    let count_opp = |diffs: &[f64], est: f64| {
                        let es = if est > 0.0 { 1 } else if est < 0.0 { -1 } else { 0 };
                        diffs
                            .iter()
                            .filter(|&&d| {
                                let ds = if d > 0.0 { 1 } else if d < 0.0 { -1 } else { 0 };
                                d.is_finite() && ds != 0 && ds != es
                            })
                            .count()
                    };
                    contributions.push((
                        mi,
                        block_diffs.iter().sum::<f64>(),
                        count_opp(&block_diffs, pe),
                        meb_diffs.iter().sum::<f64>(),
                        count_opp(&meb_diffs, pe),
                        block_diffs.len(),
                    ));
                }
                Ok(CellBoot {
                    model: out.model.clone(),
                    tau: t.tau,
                    rows,
                    contributions,
                })
            })
            .collect();

        for r in boot_results {
            let cb = r?;
            rows.extend(cb.rows);
            for (mi, sb, ob, sm, om, n) in cb.contributions {
                let e = pooled.entry((cb.model.clone(), cb.tau, mi)).or_insert(Pooled {
                    sum_block: 0.0,
                    opp_block: 0,
                    sum_meb: 0.0,
                    opp_meb: 0,
                    n: 0,
                });
                e.sum_block += sb;
                e.opp_block += ob;
                e.sum_meb += sm;
                e.opp_meb += om;
                e.n += n;
            }
        }

        // pooled rows across the bootstrap pair list
        for ((model, tau, mi), p) in &pooled {
            let m = Metric::ALL[*mi];
            rows.push(BootstrapRow {
                hedged: "ALL".into(),
                hedging: "ALL".into(),
                model: model.clone(),
                tau: *tau,
                bp: cfg.bootstrap.bp,
                measure: m.name().into(),
                mean_difference: p.sum_block / p.n as f64,
                p_value: p.opp_block as f64 / p.n as f64,
                mean_difference_temporal: p.sum_meb / p.n as f64,
                p_value_temporal: p.opp_meb as f64 / p.n as f64,
            });
        }

        let bytes = if rows.is_empty() { empty_csv(BOOTSTRAP_HEADER) } else { rows_to_csv(&rows)? };
        rec.file("bootstrap", "bootstrap.csv", rows.len(), &bytes)?;
    }

    if through == Stage::Bootstrap {
        return finish(cfg, rec);
    }

    // scatter data
    {
        for metric in &cfg.scatter.metrics {
            let mut combos: Vec<(String, usize, f64)> = report_rows
                .iter()
                .map(|r| (r.model.clone(), r.tau, r.bp))
                .collect();
            combos.sort_by(|a, b| a.partial_cmp(b).unwrap());
            combos.dedup();
            for (model, tau, bp) in combos {
                let subset: Vec<ReportRow> = report_rows
                    .iter()
                    .filter(|r| r.model == model && r.tau == tau && r.bp == bp)
                    .cloned()
                    .collect();
                let rows: Vec<ScatterRow> =
                    ctx(scatter_rows(&subset, metric, cfg.scatter.color), "scatter", metric)?;
                let rel = format!("scatter/{metric}_{model}_tau{tau}_bp{bp}.csv");
                let bytes = if rows.is_empty() {
                    empty_csv("hedged,hedging,x_standard,y_robust,color")
                } else {
                    rows_to_csv(&rows)?
                };
                rec.file("scatter", &rel, rows.len(), &bytes)?;
            }
        }
    }

    finish(cfg, rec)
}

fn finish(cfg: &PipelineConfig, mut rec: Recorder) -> Result<RunManifest, AppError> {
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        bootstrap_seed: cfg.bootstrap.seed,
        stages: std::mem::take(&mut rec.stages),
        warnings: std::mem::take(&mut rec.warnings),
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| AppError::Io(e.to_string()))?;
    write_atomic(&cfg.output_dir.join("run_manifest.json"), &bytes)?;
    manifest.stages.push(StageManifest {
        stage: "manifest".into(),
        files: vec![FileEntry { path: "run_manifest.json".into(), rows: 1 }],
    });
    Ok(manifest)
}

fn unordered_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Out-of-sample one-step RMSE of level forecasts for one symbol's realized
/// variance under one model spec.
fn symbol_rmse(cfg: &PipelineConfig, mspec: &ModelSpec, rv: &RealizedSeries) -> Result<f64, AppError> {
    let train = rv.slice_dates(NaiveDate::MIN, cfg.train_end);
    let model = fit_model(mspec, &train.values, mspec.transform, 1)?;
    let fit_vals: Vec<f64> = match mspec.transform {
        Transform::Level => rv.values.clone(),
        Transform::Log => {
            if rv.values.iter().any(|&v| v <= 0.0) {
                return Err(AppError::Numeric("non-positive realized variance under log transform".into()));
            }
            rv.values.iter().map(|v| v.ln()).collect()
        }
    };
    let first_test = rv.dates.partition_point(|&d| d < cfg.test_start);
    if first_test < model.order || first_test >= rv.len() {
        return Err(AppError::Numeric("test window too short for one-step forecasts".into()));
    }
    let mut forecasts = Vec::new();
    let mut realized = Vec::new();
    for i in (first_test - 1)..(rv.len() - 1) {
        if i + 1 < model.order {
            continue;
        }
        let f = forecast_path_with_theta(&model, &fit_vals[..=i], 1, 0.0, ThetaMode::ClosedForm)?;
        forecasts.push(f.points[0]);
        realized.push(rv.values[i + 1]);
    }
    Ok(rmse(&forecasts, &realized)?)
}

/// Everything computed for one (pair, model) cell.
fn pair_cell(
    cfg: &PipelineConfig,
    pair: &ResolvedPair,
    mspec: &ModelSpec,
    symbols: &BTreeMap<String, SymbolData>,
    rcv_map: &BTreeMap<(String, String), RealizedSeries>,
    tau_max: usize,
    through: Stage,
) -> Result<CellOut, AppError> {
    let cell_name = format!("{pair} {}", mspec.name());
    let mut warnings = Vec::new();

    let s_data = &symbols[&pair.hedged];
    let f_data = &symbols[&pair.hedging];
    let rcv = &rcv_map[&unordered_key(&pair.hedged, &pair.hedging)];

    let aligned = align_pair(&s_data.rv, &f_data.rv, rcv);
    let n = aligned.dates.len();
    let train_len = aligned.dates.partition_point(|&d| d <= cfg.train_end);
    let first_test = aligned.dates.partition_point(|&d| d < cfg.test_start);

    // fit on the training window
    let model_f = ctx(
        fit_model(mspec, &aligned.rv_f[..train_len], mspec.transform, tau_max).map_err(AppError::from),
        "fit",
        &format!("{cell_name} variance"),
    )?;
    let model_sf = ctx(
        fit_model(mspec, &aligned.rcv[..train_len], Transform::Level, tau_max).map_err(AppError::from),
        "fit",
        &format!("{cell_name} covariance"),
    )?;
    if !model_f.stationary {
        warnings.push(format!("fit: {cell_name}: variance model is not stationary"));
    }
    if !model_sf.stationary {
        warnings.push(format!("fit: {cell_name}: covariance model is not stationary"));
    }

    // impulse-response profile of the hedge ratio
    let mut irf = Vec::new();
    if model_f.stationary && model_sf.stationary {
        for h in 0..=20 {
            match impulse_response_delta(&model_sf, &model_f, h) {
                Ok(v) => irf.push((h, v)),
                Err(e) => {
                    warnings.push(format!("fit: {cell_name}: impulse response at {h}: {e}"));
                    break;
                }
            }
        }
    }

    let mut out = CellOut {
        pair: pair.clone(),
        model: mspec.name(),
        model_json_f: model_f.to_json(),
        model_json_sf: model_sf.to_json(),
        irf,
        per_tau: Vec::new(),
        warnings,
    };
    if through < Stage::Forecast {
        return Ok(out);
    }

    // fit-scale series over the full aligned sample
    let fit_vals_f: Vec<f64> = match mspec.transform {
        Transform::Level => aligned.rv_f.clone(),
        Transform::Log => {
            let bad = aligned.rv_f.iter().find(|&&v| v <= 0.0);
            if let Some(&v) = bad {
                return Err(AppError::Numeric(format!(
                    "stage forecast: {cell_name}: non-positive realized variance {v} under log transform"
                )));
            }
            aligned.rv_f.iter().map(|v| v.ln()).collect()
        }
    };
    let fit_vals_sf = aligned.rcv.clone();

    // correlation on the training window, for reports
    let corr = pair_correlation(&s_data.returns, &f_data.returns, NaiveDate::MIN, cfg.train_end)
        .unwrap_or_else(|e| {
            out.warnings.push(format!("backtest: {cell_name}: correlation: {e}"));
            f64::NAN
        });
    let ptype = pair_type_code(
        cfg.class_of(&pair.hedged).expect("validated"),
        cfg.class_of(&pair.hedging).expect("validated"),
    );

    if first_test == 0 || first_test >= n {
        return Err(AppError::Data(format!(
            "stage forecast: {cell_name}: test window is empty after alignment"
        )));
    }
    if first_test < model_f.order + 1 {
        return Err(AppError::Data(format!(
            "stage forecast: {cell_name}: not enough history before the test window"
        )));
    }

    let ret_s: HashMap<NaiveDate, f64> = s_data
        .returns
        .dates
        .iter()
        .copied()
        .zip(s_data.returns.values.iter().copied())
        .collect();
    let ret_f: HashMap<NaiveDate, f64> = f_data
        .returns
        .dates
        .iter()
        .copied()
        .zip(f_data.returns.values.iter().copied())
        .collect();

    for &tau in &cfg.taus {
        // uncertainty band of the hedging instrument's integrated variance
        let theta: Theta = match cfg.theta_mode {
            ThetaMode::Empirical => {
                let errors = ctx(
                    integrated_forecast_errors(&model_f, &aligned.rv_f[..train_len], tau)
                        .map_err(AppError::from),
                    "forecast",
                    &format!("{cell_name} tau {tau}"),
                )?;
                ctx(
                    uncertainty_theta(&model_f, tau, ThetaMode::Empirical, Some(&errors))
                        .map_err(AppError::from),
                    "forecast",
                    &format!("{cell_name} tau {tau}"),
                )?
            }
            ThetaMode::ClosedForm => {
                let t = uncertainty_theta(&model_f, tau, ThetaMode::ClosedForm, None)
                    .map_err(AppError::from)?;
                if t.scale == ThetaScale::Log {
                    out.warnings.push(format!(
                        "forecast: {cell_name}: closed-form band is on the log scale but applied to a level denominator"
                    ));
                }
                t
            }
        };

        // daily forecast origins: each origin i prices the hedge prevailing
        // on the next aligned date
        let mut fc_f: Vec<ForecastPath> = Vec::new();
        let mut fc_sf: Vec<ForecastPath> = Vec::new();
        let emit = cfg.emit_forecasts && through >= Stage::Forecast;
        let mut forecast_lines = Vec::new();
        for i in (first_test - 1)..(n - 1) {
            let mut f = ctx(
                forecast_path_with_theta(&model_f, &fit_vals_f[..=i], tau, theta.value, theta.mode)
                    .map_err(AppError::from),
                "forecast",
                &format!("{cell_name} tau {tau} origin {}", aligned.dates[i]),
            )?;
            f.origin_date = Some(aligned.dates[i]);
            let mut sf = ctx(
                forecast_path_with_theta(
                    &model_sf,
                    &fit_vals_sf[..=i],
                    tau,
                    0.0,
                    ThetaMode::ClosedForm,
                )
                .map_err(AppError::from),
                "forecast",
                &format!("{cell_name} tau {tau} origin {}", aligned.dates[i]),
            )?;
            sf.origin_date = Some(aligned.dates[i]);
            if emit {
                for (j, p) in f.points.iter().enumerate() {
                    forecast_lines.push(format!(
                        "{},variance,{},{p},{}",
                        aligned.dates[i],
                        j + 1,
                        f.theta
                    ));
                }
                for (j, p) in sf.points.iter().enumerate() {
                    forecast_lines.push(format!(
                        "{},covariance,{},{p},{}",
                        aligned.dates[i],
                        j + 1,
                        sf.theta
                    ));
                }
            }
            fc_f.push(f);
            fc_sf.push(sf);
        }

        let forecast_file = if emit {
            let rel = format!("forecasts/{}_{}_tau{}.csv", pair.label(), mspec.name(), tau);
            let rows = forecast_lines.len();
            write_atomic(
                &cfg.output_dir.join(&rel),
                &csv_body("origin_date,leg,j,point,theta", &forecast_lines),
            )?;
            forecast_lines.clear();
            Some((rel, rows))
        } else {
            None
        };

        let raw_path = ctx(
            hedge_path(&fc_f, &fc_sf, tau).map_err(AppError::from),
            "hedge",
            &format!("{cell_name} tau {tau}"),
        )?;
        if raw_path.clamped_days > 0 {
            out.warnings.push(format!(
                "hedge: {cell_name} tau {tau}: {} variance forecast(s) clamped at the floor",
                raw_path.clamped_days
            ));
        }
        // shift decisions onto the dates they prevail: origin i applies from
        // aligned date i+1
        let prevailing: Vec<NaiveDate> =
            aligned.dates[first_test..].to_vec();
        debug_assert_eq!(prevailing.len(), raw_path.len());
        let path = HedgePath {
            dates: prevailing,
            h_standard: raw_path.h_standard,
            h_robust: raw_path.h_robust,
            theta_used: raw_path.theta_used,
            tau,
            clamped_days: raw_path.clamped_days,
        };

        let mut tau_out = TauOut {
            tau,
            forecast_file,
            path,
            report_rows: Vec::new(),
            bootstrap_nets: None,
        };

        if through >= Stage::Backtest {
            // join hedge dates with both return series
            let mut dates = Vec::new();
            let mut hs = Vec::new();
            let mut hr = Vec::new();
            let mut th = Vec::new();
            let mut rs = Vec::new();
            let mut rf = Vec::new();
            let mut dropped = 0usize;
            for (k, &d) in tau_out.path.dates.iter().enumerate() {
                match (ret_s.get(&d), ret_f.get(&d)) {
                    (Some(&a), Some(&b)) => {
                        dates.push(d);
                        hs.push(tau_out.path.h_standard[k]);
                        hr.push(tau_out.path.h_robust[k]);
                        th.push(tau_out.path.theta_used[k]);
                        rs.push(a);
                        rf.push(b);
                    }
                    _ => dropped += 1,
                }
            }
            if dropped > 0 {
                out.warnings.push(format!(
                    "backtest: {cell_name} tau {tau}: {dropped} hedge date(s) without returns dropped"
                ));
            }
            let eval_path = HedgePath {
                dates: dates.clone(),
                h_standard: hs,
                h_robust: hr,
                theta_used: th,
                tau,
                clamped_days: 0,
            };
            let r_s = RealizedSeries::new(pair.hedged.clone(), SeriesKind::Return, dates.clone(), rs)
                .map_err(|e| AppError::Data(format!("stage backtest: {cell_name}: {e}")))?;
            let r_f =
                RealizedSeries::new(pair.hedging.clone(), SeriesKind::Return, dates, rf)
                    .map_err(|e| AppError::Data(format!("stage backtest: {cell_name}: {e}")))?;

            let delta = match cfg.delta {
                DeltaRule::FirstQuartile => quartile_threshold(&r_s.values),
                DeltaRule::Fixed { value } => value,
            };

            for &bp_level in &cfg.bps {
                let bp_fraction = bp_level * 1e-4;
                for method in [HedgeMethod::Standard, HedgeMethod::Robust] {
                    let hr = ctx(
                        hedged_returns(&r_s, &r_f, &eval_path, method, bp_fraction)
                            .map_err(AppError::from),
                        "backtest",
                        &format!("{cell_name} tau {tau} bp {bp_level}"),
                    )?;
                    let rep = ctx(
                        performance_report(&hr, delta).map_err(AppError::from),
                        "backtest",
                        &format!("{cell_name} tau {tau} bp {bp_level}"),
                    )?;
                    tau_out.report_rows.push(ReportRow {
                        hedged: pair.hedged.clone(),
                        hedging: pair.hedging.clone(),
                        pair_correlation: corr,
                        pair_type: ptype,
                        method: match method {
                            HedgeMethod::Standard => "standard".into(),
                            HedgeMethod::Robust => "robust".into(),
                        },
                        model: mspec.name(),
                        tau,
                        bp: bp_level,
                        delta,
                        he: rep.he,
                        he_c: rep.he_c,
                        he_r: rep.he_r,
                        pnl: rep.pnl,
                        sharpe: rep.sharpe,
                        omega: rep.omega,
                        omega_capped: rep.omega_capped,
                        max_drawdown: rep.max_drawdown,
                        var95: rep.var95,
                        es95: rep.es95,
                    });
                }
            }

            if through >= Stage::Bootstrap {
                let bp_fraction = cfg.bootstrap.bp * 1e-4;
                let rob = hedged_returns(&r_s, &r_f, &eval_path, HedgeMethod::Robust, bp_fraction)
                    .map_err(AppError::from)?;
                let std =
                    hedged_returns(&r_s, &r_f, &eval_path, HedgeMethod::Standard, bp_fraction)
                        .map_err(AppError::from)?;
                tau_out.bootstrap_nets = Some((rob.r_net, std.r_net));
            }
        }

        out.per_tau.push(tau_out);
    }

    Ok(out)
}
