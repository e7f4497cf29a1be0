//! Intraday bar ingestion and daily realized measures.
//!
//! Raw per-symbol CSV files (date,time,open,high,low,close,volume) are parsed
//! into an interval grid over a fixed trading window, from which the module
//! derives interval log returns, daily realized variance and covariance with
//! a missing-interval correction, daily close-to-close returns, and in-sample
//! return correlations for instrument pairs.

use std::collections::BTreeMap;
use std::io;

use chrono::{NaiveDate, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },
    #[error("line {line}: non-positive close price {value}")]
    NonPositiveClose { line: u64, value: f64 },
    #[error("line {line}: dates out of order ({prev} followed by {next})")]
    OutOfOrderDates { line: u64, prev: NaiveDate, next: NaiveDate },
    #[error("missing required column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("day {0} not present in series")]
    DayNotFound(NaiveDate),
    #[error("invalid trading window: {0}")]
    InvalidWindow(String),
    #[error("series {0:?} violates its invariants: {1}")]
    InvalidSeries(String, String),
    #[error("only {found} overlapping dates, need at least {needed}")]
    InsufficientOverlap { needed: usize, found: usize },
    #[error("correlation undefined: a series is constant on the overlap")]
    DegenerateCorrelation,
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// Fixed intraday sampling grid: `[start, end]` split into intervals of
/// `interval_minutes`, the bar at an interval's end time closing it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradingWindow {
    start: NaiveTime,
    end: NaiveTime,
    interval_minutes: u32,
}

impl TradingWindow {
    pub fn new(start: NaiveTime, end: NaiveTime, interval_minutes: u32) -> Result<Self, DataError> {
        if interval_minutes == 0 {
            return Err(DataError::InvalidWindow("interval length must be positive".into()));
        }
        if end <= start {
            return Err(DataError::InvalidWindow(format!("end {end} not after start {start}")));
        }
        let span = (end - start).num_minutes() as u32;
        if span < interval_minutes {
            return Err(DataError::InvalidWindow("window shorter than one interval".into()));
        }
        Ok(Self { start, end, interval_minutes })
    }

    /// 10:00-15:30 in 5-minute intervals, 66 of them: the first and last half
    /// hours of the regular session are dropped.
    pub fn regular_session() -> Self {
        Self {
            start: NaiveTime::from_hms_opt(10, 0, 0).unwrap(),
            end: NaiveTime::from_hms_opt(15, 30, 0).unwrap(),
            interval_minutes: 5,
        }
    }

    pub fn start(&self) -> NaiveTime {
        self.start
    }

    pub fn end(&self) -> NaiveTime {
        self.end
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    /// Maximum number of intervals in the window (M).
    pub fn max_intervals(&self) -> usize {
        ((self.end - self.start).num_minutes() as u32 / self.interval_minutes) as usize
    }

    /// Grid slot for a bar stamped `t`: a bar belongs to the interval ending
    /// at its timestamp, so interval 0 covers `(start, start + len]`. Bars at
    /// or before `start`, or after `end`, fall outside the window.
    pub fn interval_index(&self, t: NaiveTime) -> Option<usize> {
        if t <= self.start || t > self.end {
            return None;
        }
        let mins = (t - self.start).num_minutes() as u64;
        let len = self.interval_minutes as u64;
        let idx = (mins + len - 1) / len - 1;
        let idx = idx as usize;
        (idx < self.max_intervals()).then_some(idx)
    }

    /// End time of interval `idx`, the timestamp its bar carries.
    pub fn interval_end_time(&self, idx: usize) -> NaiveTime {
        self.start + chrono::Duration::minutes(((idx as u32 + 1) * self.interval_minutes) as i64)
    }
}

/// Per-day bars of one symbol on the interval grid. Interval indices are
/// strictly increasing within a day, closes are positive, days strictly
/// increasing. A day may be present with no surviving bars (all filtered).
#[derive(Debug, Clone)]
pub struct IntradayBarSeries {
    symbol: String,
    days: Vec<NaiveDate>,
    bars: Vec<Vec<(usize, f64)>>,
}

impl IntradayBarSeries {
    pub fn from_days(
        symbol: impl Into<String>,
        days: Vec<(NaiveDate, Vec<(usize, f64)>)>,
    ) -> Result<Self, DataError> {
        let symbol = symbol.into();
        let mut dates = Vec::with_capacity(days.len());
        let mut bars = Vec::with_capacity(days.len());
        for (date, day_bars) in days {
            if let Some(&prev) = dates.last() {
                if date <= prev {
                    return Err(DataError::InvalidSeries(
                        symbol,
                        format!("days not strictly increasing at {date}"),
                    ));
                }
            }
            for w in day_bars.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(DataError::InvalidSeries(
                        symbol,
                        format!("interval indices not strictly increasing on {date}"),
                    ));
                }
            }
            if let Some(&(_, px)) = day_bars.iter().find(|&&(_, px)| px <= 0.0) {
                return Err(DataError::InvalidSeries(
                    symbol,
                    format!("non-positive close {px} on {date}"),
                ));
            }
            dates.push(date);
            bars.push(day_bars);
        }
        Ok(Self { symbol, days: dates, bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn bars_on(&self, day: NaiveDate) -> Option<&[(usize, f64)]> {
        let idx = self.days.binary_search(&day).ok()?;
        Some(&self.bars[idx])
    }

    fn bars_at(&self, idx: usize) -> &[(usize, f64)] {
        &self.bars[idx]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Variance,
    Covariance,
    Return,
}

/// Daily time series of a realized measure: RV of one symbol, RCV of a pair,
/// or close-to-close returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizedSeries {
    pub label: String,
    pub kind: SeriesKind,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
}

impl RealizedSeries {
    pub fn new(
        label: impl Into<String>,
        kind: SeriesKind,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Result<Self, DataError> {
        let label = label.into();
        if dates.len() != values.len() {
            return Err(DataError::InvalidSeries(label, "date/value length mismatch".into()));
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::InvalidSeries(label, "dates not strictly increasing".into()));
        }
        if kind == SeriesKind::Variance && values.iter().any(|&v| v < 0.0) {
            return Err(DataError::InvalidSeries(label, "negative variance value".into()));
        }
        Ok(Self { label, kind, dates, values })
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Restrict to dates in `[from, to]` (inclusive).
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> RealizedSeries {
        let lo = self.dates.partition_point(|&d| d < from);
        let hi = self.dates.partition_point(|&d| d <= to);
        RealizedSeries {
            label: self.label.clone(),
            kind: self.kind,
            dates: self.dates[lo..hi].to_vec(),
            values: self.values[lo..hi].to_vec(),
        }
    }
}

/// What to do with a trading day whose realized measure cannot be computed
/// (no usable interval returns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingDayPolicy {
    /// Omit the day from the output series.
    #[default]
    Drop,
    /// Carry the previous day's value forward; leading gaps are still dropped.
    ForwardFill,
}

/// Parse one symbol's bar file. The reader must be CSV with a header row
/// containing at least date, time and close columns; dates are ISO-8601 or
/// MM/DD/YYYY, auto-detected from the first row and fixed for the file.
/// Bars outside the trading window are discarded, bars are snapped to the
/// grid by their end time, and duplicate intervals keep the last row.
pub fn parse_bar_file<R: io::Read>(
    reader: R,
    symbol: &str,
    window: &TradingWindow,
) -> Result<IntradayBarSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);

    let headers = rdr.headers()?.clone();
    let col = |name: &'static str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(DataError::MissingColumn(name))
    };
    let date_col = col("date")?;
    let time_col = col("time")?;
    let close_col = col("close")?;

    let mut date_format: Option<&'static str> = None;
    let mut days: Vec<NaiveDate> = Vec::new();
    let mut day_bars: Vec<BTreeMap<usize, f64>> = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| -> Result<&str, DataError> {
            record.get(i).ok_or_else(|| DataError::MalformedRow {
                line,
                msg: format!("missing field {i}"),
            })
        };

        let date_str = field(date_col)?;
        let fmt = match date_format {
            Some(f) => f,
            None => {
                let f = detect_date_format(date_str).ok_or_else(|| DataError::MalformedRow {
                    line,
                    msg: format!("unrecognized date {date_str:?}"),
                })?;
                date_format = Some(f);
                f
            }
        };
        let date = NaiveDate::parse_from_str(date_str, fmt).map_err(|e| DataError::MalformedRow {
            line,
            msg: format!("bad date {date_str:?}: {e}"),
        })?;

        let time_str = field(time_col)?;
        let time = NaiveTime::parse_from_str(time_str, "%H:%M")
            .or_else(|_| NaiveTime::parse_from_str(time_str, "%H:%M:%S"))
            .map_err(|e| DataError::MalformedRow { line, msg: format!("bad time {time_str:?}: {e}") })?;

        let close_str = field(close_col)?;
        let close: f64 = close_str.parse().map_err(|e| DataError::MalformedRow {
            line,
            msg: format!("bad close {close_str:?}: {e}"),
        })?;
        if close <= 0.0 {
            return Err(DataError::NonPositiveClose { line, value: close });
        }

        match days.last() {
            Some(&prev) if date < prev => {
                return Err(DataError::OutOfOrderDates { line, prev, next: date })
            }
            Some(&prev) if date == prev => {}
            _ => {
                days.push(date);
                day_bars.push(BTreeMap::new());
            }
        }

        if let Some(idx) = window.interval_index(time) {
            // last row wins on duplicate intervals
            day_bars.last_mut().unwrap().insert(idx, close);
        }
    }

    let day_vecs = days
        .into_iter()
        .zip(day_bars)
        .map(|(d, m)| (d, m.into_iter().collect::<Vec<_>>()))
        .collect();
    IntradayBarSeries::from_days(symbol, day_vecs)
}

fn detect_date_format(s: &str) -> Option<&'static str> {
    if NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok() {
        Some("%Y-%m-%d")
    } else if NaiveDate::parse_from_str(s, "%m/%d/%Y").is_ok() {
        Some("%m/%d/%Y")
    } else {
        None
    }
}

/// Log returns between consecutive available intervals of one day. A return
/// is emitted only when both interval `i` and `i-1` carry bars, so missing
/// intervals shrink the output rather than bridging gaps.
pub fn interval_log_returns(
    series: &IntradayBarSeries,
    day: NaiveDate,
) -> Result<Vec<(usize, f64)>, DataError> {
    let bars = series.bars_on(day).ok_or(DataError::DayNotFound(day))?;
    Ok(returns_from_bars(bars))
}

fn returns_from_bars(bars: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for w in bars.windows(2) {
        let ((i0, p0), (i1, p1)) = (w[0], w[1]);
        if i1 == i0 + 1 {
            out.push((i1, (p1 / p0).ln()));
        }
    }
    out
}

/// Realized variance with the missing-interval correction, `(M / M_x) * sum r^2`.
/// An empty return list marks the day as missing and yields `None`.
pub fn realized_variance(returns: &[f64], m_max: usize) -> Option<f64> {
    assert!(m_max >= 1, "interval capacity must be at least 1");
    if returns.is_empty() {
        return None;
    }
    let sum_sq: f64 = returns.iter().map(|r| r * r).sum();
    Some(m_max as f64 / returns.len() as f64 * sum_sq)
}

/// Realized covariance over the inner join of two interval-indexed return
/// lists, `(M / M_xy) * sum r_x r_y`. An empty join yields `None`.
pub fn realized_covariance(
    returns_x: &[(usize, f64)],
    returns_y: &[(usize, f64)],
    m_max: usize,
) -> Option<f64> {
    assert!(m_max >= 1, "interval capacity must be at least 1");
    let mut sum = 0.0;
    let mut joined = 0usize;
    let (mut ix, mut iy) = (0usize, 0usize);
    while ix < returns_x.len() && iy < returns_y.len() {
        let (kx, rx) = returns_x[ix];
        let (ky, ry) = returns_y[iy];
        if kx == ky {
            sum += rx * ry;
            joined += 1;
            ix += 1;
            iy += 1;
        } else if kx < ky {
            ix += 1;
        } else {
            iy += 1;
        }
    }
    (joined > 0).then(|| m_max as f64 / joined as f64 * sum)
}

/// Daily realized variance series for one symbol. Days without a computable
/// value follow `policy`; the dates of such days are returned alongside.
pub fn daily_realized_variance(
    bars: &IntradayBarSeries,
    window: &TradingWindow,
    policy: MissingDayPolicy,
) -> (RealizedSeries, Vec<NaiveDate>) {
    let m = window.max_intervals();
    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();
    for (idx, &day) in bars.days().iter().enumerate() {
        let rets: Vec<f64> = returns_from_bars(bars.bars_at(idx)).into_iter().map(|(_, r)| r).collect();
        match realized_variance(&rets, m) {
            Some(v) => {
                dates.push(day);
                values.push(v);
            }
            None => {
                missing.push(day);
                if policy == MissingDayPolicy::ForwardFill {
                    if let Some(&last) = values.last() {
                        dates.push(day);
                        values.push(last);
                    }
                }
            }
        }
    }
    let series = RealizedSeries::new(bars.symbol(), SeriesKind::Variance, dates, values)
        .expect("constructed in order with non-negative values");
    (series, missing)
}

/// Daily realized covariance series for a pair, over the intersection of the
/// two symbols' trading days.
pub fn daily_realized_covariance(
    x: &IntradayBarSeries,
    y: &IntradayBarSeries,
    window: &TradingWindow,
    policy: MissingDayPolicy,
) -> (RealizedSeries, Vec<NaiveDate>) {
    let m = window.max_intervals();
    let label = format!("{}-{}", x.symbol(), y.symbol());
    let mut dates = Vec::new();
    let mut values = Vec::new();
    let mut missing = Vec::new();

    let (mut ix, mut iy) = (0usize, 0usize);
    while ix < x.days().len() && iy < y.days().len() {
        let (dx, dy) = (x.days()[ix], y.days()[iy]);
        if dx == dy {
            let rx = returns_from_bars(x.bars_at(ix));
            let ry = returns_from_bars(y.bars_at(iy));
            match realized_covariance(&rx, &ry, m) {
                Some(v) => {
                    dates.push(dx);
                    values.push(v);
                }
                None => {
                    missing.push(dx);
                    if policy == MissingDayPolicy::ForwardFill {
                        if let Some(&last) = values.last() {
                            dates.push(dx);
                            values.push(last);
                        }
                    }
                }
            }
            ix += 1;
            iy += 1;
        } else if dx < dy {
            ix += 1;
        } else {
            iy += 1;
        }
    }
    let series = RealizedSeries::new(label, SeriesKind::Covariance, dates, values)
        .expect("constructed in order");
    (series, missing)
}

/// Daily close-to-close log returns using the last in-window bar of each day.
/// Days with no bars are skipped and reported; the following return then
/// spans the gap.
#[derive(Debug, Clone)]
pub struct DailyReturns {
    pub series: RealizedSeries,
    /// Days that had no usable bar (gap warnings).
    pub skipped_days: Vec<NaiveDate>,
}

pub fn daily_close_returns(bars: &IntradayBarSeries) -> DailyReturns {
    let mut skipped = Vec::new();
    let mut closes: Vec<(NaiveDate, f64)> = Vec::new();
    for (idx, &day) in bars.days().iter().enumerate() {
        match bars.bars_at(idx).last() {
            Some(&(_, px)) => closes.push((day, px)),
            None => skipped.push(day),
        }
    }
    let mut dates = Vec::new();
    let mut values = Vec::new();
    for w in closes.windows(2) {
        let ((_, p0), (d1, p1)) = (w[0], w[1]);
        dates.push(d1);
        values.push((p1 / p0).ln());
    }
    let series = RealizedSeries::new(bars.symbol(), SeriesKind::Return, dates, values)
        .expect("constructed in order");
    DailyReturns { series, skipped_days: skipped }
}

/// Pearson correlation of two daily return series on their date overlap
/// within `[from, to]`.
pub fn pair_correlation(
    r_s: &RealizedSeries,
    r_f: &RealizedSeries,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<f64, DataError> {
    let a = r_s.slice_dates(from, to);
    let b = r_f.slice_dates(from, to);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < a.len() && j < b.len() {
        if a.dates[i] == b.dates[j] {
            xs.push(a.values[i]);
            ys.push(b.values[j]);
            i += 1;
            j += 1;
        } else if a.dates[i] < b.dates[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    if xs.len() < 3 {
        return Err(DataError::InsufficientOverlap { needed: 3, found: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(DataError::DegenerateCorrelation);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// RV, RV and RCV of a pair restricted to a shared date vector.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub dates: Vec<NaiveDate>,
    pub rv_s: Vec<f64>,
    pub rv_f: Vec<f64>,
    pub rcv: Vec<f64>,
}

/// Intersect the three series on dates. All outputs share one date vector.
pub fn align_pair(
    rv_s: &RealizedSeries,
    rv_f: &RealizedSeries,
    rcv: &RealizedSeries,
) -> AlignedPair {
    let mut dates = Vec::new();
    let mut vs = Vec::new();
    let mut vf = Vec::new();
    let mut vc = Vec::new();
    let (mut i, mut j, mut k) = (0usize, 0usize, 0usize);
    while i < rv_s.len() && j < rv_f.len() && k < rcv.len() {
        let (ds, df, dc) = (rv_s.dates[i], rv_f.dates[j], rcv.dates[k]);
        let m = ds.min(df).min(dc);
        if ds == df && df == dc {
            dates.push(ds);
            vs.push(rv_s.values[i]);
            vf.push(rv_f.values[j]);
            vc.push(rcv.values[k]);
            i += 1;
            j += 1;
            k += 1;
        } else {
            if ds == m {
                i += 1;
            }
            if df == m {
                j += 1;
            }
            if dc == m {
                k += 1;
            }
        }
    }
    AlignedPair { dates, rv_s: vs, rv_f: vf, rcv: vc }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn t(h: u32, m: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, 0).unwrap()
    }

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn regular_session_has_66_intervals() {
        let w = TradingWindow::regular_session();
        assert_eq!(w.max_intervals(), 66);
        assert_eq!(w.interval_index(t(10, 5)), Some(0));
        assert_eq!(w.interval_index(t(10, 3)), Some(0));
        assert_eq!(w.interval_index(t(10, 6)), Some(1));
        assert_eq!(w.interval_index(t(15, 30)), Some(65));
        assert_eq!(w.interval_index(t(10, 0)), None);
        assert_eq!(w.interval_index(t(9, 35)), None);
        assert_eq!(w.interval_index(t(16, 0)), None);
        assert_eq!(w.interval_end_time(0), t(10, 5));
        assert_eq!(w.interval_end_time(65), t(15, 30));
    }

    #[test]
    fn invalid_windows_rejected() {
        assert!(TradingWindow::new(t(10, 0), t(9, 0), 5).is_err());
        assert!(TradingWindow::new(t(10, 0), t(15, 30), 0).is_err());
        assert!(TradingWindow::new(t(10, 0), t(10, 2), 5).is_err());
    }

    const HEADER: &str = "date,time,open,high,low,close,volume\n";

    #[test]
    fn bars_outside_window_are_dropped() {
        let csv = format!(
            "{HEADER}2020-01-02,09:35,1,1,1,100,0\n2020-01-02,16:00,1,1,1,101,0\n"
        );
        let s = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap();
        assert_eq!(s.days(), &[d("2020-01-02")]);
        assert!(s.bars_on(d("2020-01-02")).unwrap().is_empty());
    }

    #[test]
    fn first_interval_placement() {
        let csv = format!("{HEADER}2020-01-02,10:05,1,1,1,100,0\n");
        let s = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap();
        assert_eq!(s.bars_on(d("2020-01-02")).unwrap(), &[(0, 100.0)]);
    }

    #[test]
    fn duplicate_interval_keeps_last_row() {
        let csv = format!("{HEADER}2020-01-02,10:05,1,1,1,100,0\n2020-01-02,10:05,1,1,1,103,0\n");
        let s = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap();
        assert_eq!(s.bars_on(d("2020-01-02")).unwrap(), &[(0, 103.0)]);
    }

    #[test]
    fn us_date_format_detected() {
        let csv = format!("{HEADER}01/02/2020,10:05,1,1,1,100,0\n01/03/2020,10:10,1,1,1,101,0\n");
        let s = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap();
        assert_eq!(s.days(), &[d("2020-01-02"), d("2020-01-03")]);
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = format!("{HEADER}2020-01-02,10:05,1,1,1,oops,0\n");
        let err = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap_err();
        match err {
            DataError::MalformedRow { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_positive_close_rejected() {
        let csv = format!("{HEADER}2020-01-02,10:05,1,1,1,-3,0\n");
        let err = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap_err();
        assert!(matches!(err, DataError::NonPositiveClose { line: 2, .. }));
    }

    #[test]
    fn out_of_order_dates_rejected() {
        let csv = format!(
            "{HEADER}2020-01-03,10:05,1,1,1,100,0\n2020-01-02,10:05,1,1,1,100,0\n"
        );
        let err = parse_bar_file(csv.as_bytes(), "X", &TradingWindow::regular_session()).unwrap_err();
        assert!(matches!(err, DataError::OutOfOrderDates { line: 3, .. }));
    }

    fn one_day_series(bars: Vec<(usize, f64)>) -> IntradayBarSeries {
        IntradayBarSeries::from_days("X", vec![(d("2020-01-02"), bars)]).unwrap()
    }

    #[test]
    fn constant_prices_give_zero_returns() {
        let s = one_day_series(vec![(0, 100.0), (1, 100.0), (2, 100.0)]);
        let r = interval_log_returns(&s, d("2020-01-02")).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn single_log_return() {
        let s = one_day_series(vec![(0, 100.0), (1, 110.0)]);
        let r = interval_log_returns(&s, d("2020-01-02")).unwrap();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r[0].1, 1.1_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn non_adjacent_intervals_yield_nothing() {
        let s = one_day_series(vec![(0, 100.0), (2, 110.0)]);
        assert!(interval_log_returns(&s, d("2020-01-02")).unwrap().is_empty());
    }

    #[test]
    fn missing_day_is_an_error() {
        let s = one_day_series(vec![(0, 100.0)]);
        assert!(matches!(
            interval_log_returns(&s, d("2020-01-03")),
            Err(DataError::DayNotFound(_))
        ));
    }

    #[test]
    fn realized_variance_examples() {
        assert_eq!(realized_variance(&[0.0; 10], 66), Some(0.0));
        // 33 returns summing to 0.5 in squares, scaled by 66/33
        let r: Vec<f64> = (0..33).map(|_| (0.5_f64 / 33.0).sqrt()).collect();
        assert_relative_eq!(realized_variance(&r, 66).unwrap(), 1.0, epsilon = 1e-12);
        let r = vec![0.01; 66];
        assert_relative_eq!(realized_variance(&r, 66).unwrap(), 6.6e-3, epsilon = 1e-15);
        assert_eq!(realized_variance(&[], 66), None);
    }

    #[test]
    fn realized_covariance_examples() {
        let rx: Vec<(usize, f64)> = vec![(0, 0.01), (1, -0.02), (2, 0.005)];
        let ry: Vec<(usize, f64)> = rx.iter().map(|&(i, r)| (i, -r)).collect();
        let vals: Vec<f64> = rx.iter().map(|&(_, r)| r).collect();
        let rv = realized_variance(&vals, 66).unwrap();
        assert_relative_eq!(realized_covariance(&rx, &rx, 66).unwrap(), rv, epsilon = 1e-15);
        assert_relative_eq!(realized_covariance(&rx, &ry, 66).unwrap(), -rv, epsilon = 1e-15);

        let rx = vec![(0, 0.03), (1, 0.01)];
        let ry = vec![(1, 0.02), (2, -0.04)];
        assert_relative_eq!(
            realized_covariance(&rx, &ry, 66).unwrap(),
            66.0 * 2e-4,
            epsilon = 1e-15
        );
        assert_eq!(realized_covariance(&[(0, 0.1)], &[(1, 0.1)], 66), None);
    }

    #[test]
    fn daily_returns_examples() {
        let s = IntradayBarSeries::from_days(
            "X",
            vec![
                (d("2020-01-02"), vec![(0, 90.0), (65, 100.0)]),
                (d("2020-01-03"), vec![(65, 100.0)]),
            ],
        )
        .unwrap();
        let out = daily_close_returns(&s);
        assert_eq!(out.series.values, vec![0.0]);

        let s = IntradayBarSeries::from_days(
            "X",
            vec![
                (d("2020-01-02"), vec![(65, 100.0)]),
                (d("2020-01-03"), vec![(65, 105.0)]),
                (d("2020-01-06"), vec![(65, 100.0)]),
            ],
        )
        .unwrap();
        let out = daily_close_returns(&s);
        assert_eq!(out.series.len(), 2);
        assert_abs_diff_eq!(out.series.values.iter().sum::<f64>(), 0.0, epsilon = 1e-15);

        let s = one_day_series(vec![(0, 100.0)]);
        assert!(daily_close_returns(&s).series.is_empty());
    }

    #[test]
    fn gap_days_skipped_with_warning() {
        let s = IntradayBarSeries::from_days(
            "X",
            vec![
                (d("2020-01-02"), vec![(65, 100.0)]),
                (d("2020-01-03"), vec![]),
                (d("2020-01-06"), vec![(65, 110.0)]),
            ],
        )
        .unwrap();
        let out = daily_close_returns(&s);
        assert_eq!(out.skipped_days, vec![d("2020-01-03")]);
        assert_eq!(out.series.dates, vec![d("2020-01-06")]);
        assert_relative_eq!(out.series.values[0], 1.1_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn missing_day_policies() {
        let s = IntradayBarSeries::from_days(
            "X",
            vec![
                (d("2020-01-02"), vec![(0, 100.0), (1, 101.0)]),
                (d("2020-01-03"), vec![]),
                (d("2020-01-06"), vec![(0, 100.0), (1, 99.0)]),
            ],
        )
        .unwrap();
        let w = TradingWindow::regular_session();
        let (dropped, missing) = daily_realized_variance(&s, &w, MissingDayPolicy::Drop);
        assert_eq!(dropped.len(), 2);
        assert_eq!(missing, vec![d("2020-01-03")]);

        let (filled, missing) = daily_realized_variance(&s, &w, MissingDayPolicy::ForwardFill);
        assert_eq!(filled.len(), 3);
        assert_eq!(missing, vec![d("2020-01-03")]);
        assert_eq!(filled.values[1], filled.values[0]);
    }

    fn ret_series(label: &str, start: &str, vals: &[f64]) -> RealizedSeries {
        let d0 = d(start);
        let dates: Vec<NaiveDate> = (0..vals.len() as i64)
            .map(|i| d0 + chrono::Duration::days(i))
            .collect();
        RealizedSeries::new(label, SeriesKind::Return, dates, vals.to_vec()).unwrap()
    }

    #[test]
    fn correlation_examples() {
        let a = ret_series("S", "2020-01-01", &[0.01, -0.02, 0.005, 0.003]);
        let b = a.clone();
        let lo = d("2020-01-01");
        let hi = d("2020-12-31");
        assert_relative_eq!(pair_correlation(&a, &b, lo, hi).unwrap(), 1.0, epsilon = 1e-12);

        let neg = RealizedSeries::new(
            "F",
            SeriesKind::Return,
            a.dates.clone(),
            a.values.iter().map(|v| -v).collect(),
        )
        .unwrap();
        assert_relative_eq!(pair_correlation(&a, &neg, lo, hi).unwrap(), -1.0, epsilon = 1e-12);

        let s = ret_series("S", "2020-01-01", &[1.0, 2.0, 3.0]);
        let f = ret_series("F", "2020-01-01", &[1.0, 3.0, 2.0]);
        assert_relative_eq!(pair_correlation(&s, &f, lo, hi).unwrap(), 0.5, epsilon = 1e-12);

        let c = ret_series("F", "2020-01-01", &[0.5, 0.5, 0.5]);
        assert!(matches!(
            pair_correlation(&s, &c, lo, hi),
            Err(DataError::DegenerateCorrelation)
        ));
    }

    #[test]
    fn alignment_intersects_dates() {
        let rv_s = RealizedSeries::new(
            "S",
            SeriesKind::Variance,
            vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-03")],
            vec![1.0, 2.0, 3.0],
        )
        .unwrap();
        let rv_f = RealizedSeries::new(
            "F",
            SeriesKind::Variance,
            vec![d("2020-01-02"), d("2020-01-03"), d("2020-01-04")],
            vec![4.0, 5.0, 6.0],
        )
        .unwrap();
        let rcv = RealizedSeries::new(
            "S-F",
            SeriesKind::Covariance,
            vec![d("2020-01-01"), d("2020-01-02"), d("2020-01-04")],
            vec![-1.0, -2.0, -3.0],
        )
        .unwrap();
        let aligned = align_pair(&rv_s, &rv_f, &rcv);
        assert_eq!(aligned.dates, vec![d("2020-01-02")]);
        assert_eq!(aligned.rv_s, vec![2.0]);
        assert_eq!(aligned.rv_f, vec![4.0]);
        assert_eq!(aligned.rcv, vec![-2.0]);
    }

    proptest! {
        #[test]
        fn rv_nonnegative_and_quadratic_in_scale(
            rets in proptest::collection::vec(-0.05f64..0.05, 1..80),
            c in -3.0f64..3.0,
        ) {
            let rv = realized_variance(&rets, 66).unwrap();
            prop_assert!(rv >= 0.0);
            let scaled: Vec<f64> = rets.iter().map(|r| c * r).collect();
            let rv_scaled = realized_variance(&scaled, 66).unwrap();
            prop_assert!((rv_scaled - c * c * rv).abs() <= 1e-12 * (1.0 + rv.abs()));
        }

        #[test]
        fn rcv_self_equals_rv_and_scales_bilinearly(
            rets in proptest::collection::vec(-0.05f64..0.05, 1..80),
            c in -3.0f64..3.0,
        ) {
            let keyed: Vec<(usize, f64)> = rets.iter().cloned().enumerate().collect();
            let rv = realized_variance(&rets, 66).unwrap();
            let rcv = realized_covariance(&keyed, &keyed, 66).unwrap();
            prop_assert!((rcv - rv).abs() <= 1e-12 * (1.0 + rv.abs()));

            let scaled: Vec<(usize, f64)> = keyed.iter().map(|&(i, r)| (i, c * r)).collect();
            let cross = realized_covariance(&keyed, &scaled, 66).unwrap();
            prop_assert!((cross - c * rv).abs() <= 1e-9 * (1.0 + rv.abs()));
        }

        #[test]
        fn full_day_correction_factor_is_one(
            rets in proptest::collection::vec(-0.05f64..0.05, 66)
        ) {
            let raw: f64 = rets.iter().map(|r| r * r).sum();
            let rv = realized_variance(&rets, 66).unwrap();
            prop_assert!((rv - raw).abs() <= 1e-15);
        }
    }
}
