//! Pipeline configuration: TOML file, validation, flag overrides and the
//! canonical config hash.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveTime};
use robusthedge::market_data::{MissingDayPolicy, TradingWindow};
use robusthedge::ts_models::{ThetaMode, Transform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::pipeline::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Equity,
    Bond,
    Commodity,
}

/// Co-occurrence code of an ordered (hedged, hedging) class pair: 1-3 for
/// same-class pairs, 4-9 for the six ordered mixed combinations.
pub fn pair_type_code(hedged: AssetClass, hedging: AssetClass) -> u8 {
    use AssetClass::*;
    match (hedged, hedging) {
        (Equity, Equity) => 1,
        (Bond, Bond) => 2,
        (Commodity, Commodity) => 3,
        (Equity, Bond) => 4,
        (Equity, Commodity) => 5,
        (Bond, Equity) => 6,
        (Bond, Commodity) => 7,
        (Commodity, Equity) => 8,
        (Commodity, Bond) => 9,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolSpec {
    pub name: String,
    pub class: AssetClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ar,
    Har,
}

/// One model of the realized-variance dynamics. Covariance series are always
/// fitted in levels (they can be negative); `transform` applies to variances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default = "default_order")]
    pub p: usize,
    #[serde(default = "default_transform")]
    pub transform: Transform,
}

fn default_order() -> usize {
    1
}

fn default_transform() -> Transform {
    Transform::Log
}

impl ModelSpec {
    pub fn name(&self) -> String {
        match self.kind {
            ModelKind::Ar => format!("ar{}", self.p),
            ModelKind::Har => "har".to_string(),
        }
    }

    pub fn order(&self) -> usize {
        match self.kind {
            ModelKind::Ar => self.p,
            ModelKind::Har => 5,
        }
    }
}

/// Either the keyword "all" or an explicit list of (hedged, hedging) names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairSelection {
    Keyword(String),
    List(Vec<(String, String)>),
}

impl Default for PairSelection {
    fn default() -> Self {
        PairSelection::List(Vec::new())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(default = "default_window_start")]
    pub start: String,
    #[serde(default = "default_window_end")]
    pub end: String,
    #[serde(default = "default_interval")]
    pub interval_minutes: u32,
}

fn default_window_start() -> String {
    "10:00".into()
}

fn default_window_end() -> String {
    "15:30".into()
}

fn default_interval() -> u32 {
    5
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            start: default_window_start(),
            end: default_window_end(),
            interval_minutes: default_interval(),
        }
    }
}

impl WindowConfig {
    pub fn build(&self) -> Result<TradingWindow, AppError> {
        let parse = |s: &str| {
            NaiveTime::parse_from_str(s, "%H:%M")
                .map_err(|e| AppError::Config(format!("bad window time {s:?}: {e}")))
        };
        TradingWindow::new(parse(&self.start)?, parse(&self.end)?, self.interval_minutes)
            .map_err(|e| AppError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DeltaRule {
    /// First quartile of the unhedged returns on the evaluation window.
    FirstQuartile,
    Fixed { value: f64 },
}

impl Default for DeltaRule {
    fn default() -> Self {
        DeltaRule::FirstQuartile
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_block_length")]
    pub block_length: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cost level (basis points) at which the bootstrap compares strategies.
    #[serde(default = "default_bootstrap_bp")]
    pub bp: f64,
    /// Pairs entering the bootstrap stage; defaults to every backtested pair.
    #[serde(default = "default_bootstrap_pairs")]
    pub pairs: PairSelection,
}

fn default_block_length() -> usize {
    250
}

fn default_reps() -> usize {
    10_000
}

fn default_bootstrap_bp() -> f64 {
    5.0
}

fn default_bootstrap_pairs() -> PairSelection {
    PairSelection::Keyword("all".into())
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            block_length: default_block_length(),
            reps: default_reps(),
            seed: 0,
            bp: default_bootstrap_bp(),
            pairs: default_bootstrap_pairs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterColor {
    PairCorrelation,
    PairType,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterConfig {
    #[serde(default = "default_scatter_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_scatter_color")]
    pub color: ScatterColor,
}

fn default_scatter_metrics() -> Vec<String> {
    vec!["he".into(), "pnl".into()]
}

fn default_scatter_color() -> ScatterColor {
    ScatterColor::PairCorrelation
}

impl Default for ScatterConfig {
    fn default() -> Self {
        ScatterConfig { metrics: default_scatter_metrics(), color: default_scatter_color() }
    }
}

/// Everything one run needs. Serialized canonically for the config hash, so
/// any semantic change shows up in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub symbols: Vec<SymbolSpec>,
    #[serde(default)]
    pub pairs: PairSelection,
    #[serde(default)]
    pub window: WindowConfig,
    pub models: Vec<ModelSpec>,
    #[serde(default = "default_taus")]
    pub taus: Vec<usize>,
    /// Cost levels in basis points.
    #[serde(default = "default_bps")]
    pub bps: Vec<f64>,
    #[serde(default = "default_theta_mode")]
    pub theta_mode: ThetaMode,
    #[serde(default)]
    pub delta: DeltaRule,
    pub train_end: NaiveDate,
    pub test_start: NaiveDate,
    #[serde(default)]
    pub missing_day_policy: MissingDayPolicy,
    #[serde(default = "default_adf_lag")]
    pub adf_lag: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_emit_forecasts")]
    pub emit_forecasts: bool,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub scatter: ScatterConfig,
}

fn default_taus() -> Vec<usize> {
    vec![1]
}

fn default_bps() -> Vec<f64> {
    vec![0.0, 5.0, 10.0]
}

fn default_theta_mode() -> ThetaMode {
    ThetaMode::Empirical
}

fn default_adf_lag() -> usize {
    5
}

fn default_emit_forecasts() -> bool {
    true
}

/// An ordered (hedged, hedging) pair resolved against the symbol table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedPair {
    pub hedged: String,
    pub hedging: String,
}

impl ResolvedPair {
    pub fn label(&self) -> String {
        format!("{}_{}", self.hedged, self.hedging)
    }
}

impl fmt::Display for ResolvedPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.hedged, self.hedging)
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, AppError> {
        toml::from_str(s).map_err(|e| AppError::Config(format!("config parse error: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Hash of the canonical JSON form: key order in the source file cannot
    /// change it, any semantic change does.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("canonical form");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        format!("{:x}", hasher.finalize())
    }

    pub fn validate(&self) -> Result<(), AppError> {
        if self.train_end >= self.test_start {
            return Err(AppError::Config(format!(
                "train_end {} must precede test_start {}",
                self.train_end, self.test_start
            )));
        }
        if self.models.is_empty() {
            return Err(AppError::Config("at least one model is required".into()));
        }
        if self.taus.is_empty() || self.taus.iter().any(|&t| t == 0) {
            return Err(AppError::Config("horizons must be positive and non-empty".into()));
        }
        if self.bps.is_empty() || self.bps.iter().any(|&b| b < 0.0) {
            return Err(AppError::Config("cost levels must be non-negative and non-empty".into()));
        }
        if self.bootstrap.reps == 0 {
            return Err(AppError::Config("bootstrap replications must be positive".into()));
        }
        if self.bootstrap.block_length < 4 {
            return Err(AppError::Config("bootstrap block length must be at least 4".into()));
        }
        for m in &self.models {
            if m.kind == ModelKind::Ar && m.p == 0 {
                return Err(AppError::Config("AR order must be at least 1".into()));
            }
        }
        let names: BTreeSet<&str> = self.symbols.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.symbols.len() {
            return Err(AppError::Config("duplicate symbol names".into()));
        }
        self.window.build()?;
        self.resolve_pairs(&self.pairs)?;
        self.resolve_pairs(&self.bootstrap.pairs)?;
        Ok(())
    }

    pub fn class_of(&self, symbol: &str) -> Option<AssetClass> {
        self.symbols.iter().find(|s| s.name == symbol).map(|s| s.class)
    }

    /// Expand a pair selection against the symbol table. "all" means every
    /// ordered pair of distinct symbols in table order.
    pub fn resolve_pairs(&self, selection: &PairSelection) -> Result<Vec<ResolvedPair>, AppError> {
        match selection {
            PairSelection::Keyword(k) if k == "all" => {
                let mut out = Vec::new();
                for s in &self.symbols {
                    for f in &self.symbols {
                        if s.name != f.name {
                            out.push(ResolvedPair {
                                hedged: s.name.clone(),
                                hedging: f.name.clone(),
                            });
                        }
                    }
                }
                Ok(out)
            }
            PairSelection::Keyword(k) => {
                Err(AppError::Config(format!("unknown pair keyword {k:?}, expected \"all\"")))
            }
            PairSelection::List(items) => {
                let mut out = Vec::new();
                for (hedged, hedging) in items {
                    if self.class_of(hedged).is_none() {
                        return Err(AppError::Config(format!(
                            "pair references unknown symbol {hedged:?}"
                        )));
                    }
                    if self.class_of(hedging).is_none() {
                        return Err(AppError::Config(format!(
                            "pair references unknown symbol {hedging:?}"
                        )));
                    }
                    if hedged == hedging {
                        return Err(AppError::Config(format!(
                            "pair {hedged}/{hedging} hedges a symbol with itself"
                        )));
                    }
                    out.push(ResolvedPair { hedged: hedged.clone(), hedging: hedging.clone() });
                }
                Ok(out)
            }
        }
    }

    /// The largest horizon any stage will request from a fitted model.
    pub fn tau_max(&self) -> usize {
        self.taus
            .iter()
            .copied()
            .max()
            .unwrap_or(1)
            .max(robusthedge::ts_models::DEFAULT_TAU_MAX)
    }
}
