//! Command-line front end. Exit codes: 0 ok, 1 configuration error, 2 data
//! error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robusthedge_cli::config::{PairSelection, PipelineConfig, ScatterColor};
use robusthedge_cli::pipeline::{rows_to_csv, run_pipeline, write_atomic, AppError, Stage};
use robusthedge_cli::scatter::{read_report, scatter_rows};
use robusthedge_cli::synth::{generate_synthetic, SynthConfig};

#[derive(Parser)]
#[command(
    name = "robusthedge",
    about = "Robust minimum-variance hedging from intraday realized measures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Override the global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the pair list, e.g. "AAA:BBB,CCC:DDD"
    #[arg(long)]
    pairs: Option<String>,
    /// Override the horizon list, e.g. "1,10"
    #[arg(long)]
    tau: Option<String>,
    /// Override the cost levels in basis points, e.g. "0,5,10"
    #[arg(long)]
    bp: Option<String>,
    /// Override the output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse bar files and emit realized measure CSVs
    Ingest(PipelineArgs),
    /// Fit models (plus ADF screening and impulse-response profiles)
    Fit(PipelineArgs),
    /// Produce out-of-sample forecasts and RMSE comparisons
    Forecast(PipelineArgs),
    /// Build standard and robust hedge paths
    Hedge(PipelineArgs),
    /// Evaluate hedged portfolios and write the report
    Backtest(PipelineArgs),
    /// Bootstrap significance tests of robust-vs-standard differences
    Bootstrap(PipelineArgs),
    /// Run every stage
    Run(PipelineArgs),
    /// Generate a synthetic dataset from a spec file
    Synth {
        /// Synthetic dataset spec (TOML)
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the bar files
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rebuild scatter data from an existing report
    Scatter {
        /// report.csv produced by the backtest stage
        #[arg(long)]
        report: PathBuf,
        /// Metric column to plot
        #[arg(long)]
        metric: String,
        /// Color key: pair_correlation or pair_type
        #[arg(long, default_value = "pair_correlation")]
        color: String,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, AppError> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| AppError::Config(format!("bad {what} entry {x:?}"))))
        .collect()
}

fn apply_overrides(mut cfg: PipelineConfig, args: &PipelineArgs) -> Result<PipelineConfig, AppError> {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.bootstrap.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    if let Some(tau) = &args.tau {
        cfg.taus = parse_list(tau, "tau")?;
    }
    if let Some(bp) = &args.bp {
        cfg.bps = parse_list(bp, "bp")?;
    }
    if let Some(pairs) = &args.pairs {
        if pairs.trim() == "all" {
            cfg.pairs = PairSelection::Keyword("all".into());
        } else {
            let mut list = Vec::new();
            for item in pairs.split(',') {
                let (a, b) = item.split_once(':').ok_or_else(|| {
                    AppError::Config(format!("bad pair {item:?}, expected HEDGED:HEDGING"))
                })?;
                list.push((a.trim().to_string(), b.trim().to_string()));
            }
            cfg.pairs = PairSelection::List(list);
        }
    }
    Ok(cfg)
}

fn run_stage(args: &PipelineArgs, through: Stage) -> Result<(), AppError> {
    let cfg = apply_overrides(PipelineConfig::load(&args.config)?, args)?;
    let manifest = run_pipeline(&cfg, through)?;
    let files: usize = manifest.files().count();
    println!(
        "ok: {} file(s) under {}, config {}",
        files,
        cfg.output_dir.display(),
        &manifest.config_hash[..12]
    );
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Ingest(a) => run_stage(&a, Stage::Ingest),
        Command::Fit(a) => run_stage(&a, Stage::Fit),
        Command::Forecast(a) => run_stage(&a, Stage::Forecast),
        Command::Hedge(a) => run_stage(&a, Stage::Hedge),
        Command::Backtest(a) => run_stage(&a, Stage::Backtest),
        Command::Bootstrap(a) => run_stage(&a, Stage::Bootstrap),
        Command::Run(a) => run_stage(&a, Stage::Full),
        Command::Synth { spec, out, seed } => {
            let mut spec = SynthConfig::load(&spec)?;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let files = generate_synthetic(&spec, &out)?;
            println!("ok: {} file(s) under {}", files.len(), out.display());
            Ok(())
        }
        Command::Scatter { report, metric, color, out } => {
            let color = match color.as_str() {
                "pair_correlation" => ScatterColor::PairCorrelation,
                "pair_type" => ScatterColor::PairType,
                other => {
                    return Err(AppError::Config(format!(
                        "unknown color key {other:?}, expected pair_correlation or pair_type"
                    )))
                }
            };
            let rows = read_report(&report)?;
            let pts = scatter_rows(&rows, &metric, color)?;
            let bytes = if pts.is_empty() {
                b"hedged,hedging,x_standard,y_robust,color\n".to_vec()
            } else {
                rows_to_csv(&pts)?
            };
            write_atomic(&out, &bytes)?;
            println!("ok: {} point(s) to {}", pts.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
