//! Scatter data: one point per pair, standard-method metric on x, robust on
//! y, colored by return correlation or by the class co-occurrence code.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ScatterColor;
use crate::pipeline::{AppError, ReportRow};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterRow {
    pub hedged: String,
    pub hedging: String,
    pub x_standard: f64,
    pub y_robust: f64,
    pub color: f64,
}

pub const SCATTER_METRICS: [&str; 9] =
    ["he", "he_c", "he_r", "pnl", "sharpe", "omega", "max_drawdown", "var95", "es95"];

fn metric_value(row: &ReportRow, metric: &str) -> Option<f64> {
    Some(match metric {
        "he" => row.he,
        "he_c" => row.he_c,
        "he_r" => row.he_r,
        "pnl" => row.pnl,
        "sharpe" => row.sharpe,
        "omega" => row.omega,
        "max_drawdown" => row.max_drawdown,
        "var95" => row.var95,
        "es95" => row.es95,
        _ => return None,
    })
}

/// Pair up standard and robust rows of one (model, tau, bp) slice. Both
/// methods must be present for every pair in the slice.
pub fn scatter_rows(
    rows: &[ReportRow],
    metric: &str,
    color: ScatterColor,
) -> Result<Vec<ScatterRow>, AppError> {
    if !SCATTER_METRICS.contains(&metric) {
        return Err(AppError::Config(format!(
            "unknown scatter metric {metric:?}, expected one of {SCATTER_METRICS:?}"
        )));
    }
    let mut out = Vec::new();
    for row in rows.iter().filter(|r| r.method == "standard") {
        let partner = rows
            .iter()
            .find(|r| {
                r.method == "robust" && r.hedged == row.hedged && r.hedging == row.hedging
            })
            .ok_or_else(|| {
                AppError::Data(format!(
                    "missing robust report for pair {}/{}",
                    row.hedged, row.hedging
                ))
            })?;
        let x = metric_value(row, metric).unwrap();
        let y = metric_value(partner, metric).unwrap();
        let color_value = match color {
            ScatterColor::PairCorrelation => row.pair_correlation,
            ScatterColor::PairType => row.pair_type as f64,
        };
        out.push(ScatterRow {
            hedged: row.hedged.clone(),
            hedging: row.hedging.clone(),
            x_standard: x,
            y_robust: y,
            color: color_value,
        });
    }
    // a robust row without a standard partner is just as much an error
    for row in rows.iter().filter(|r| r.method == "robust") {
        if !rows
            .iter()
            .any(|r| r.method == "standard" && r.hedged == row.hedged && r.hedging == row.hedging)
        {
            return Err(AppError::Data(format!(
                "missing standard report for pair {}/{}",
                row.hedged, row.hedging
            )));
        }
    }
    Ok(out)
}

/// Read a report CSV back into rows (for the standalone subcommand).
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>, AppError> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| AppError::Data(format!("cannot read report {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in rdr.deserialize() {
        let row: ReportRow =
            rec.map_err(|e| AppError::Data(format!("bad report row in {}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(rows)
}
