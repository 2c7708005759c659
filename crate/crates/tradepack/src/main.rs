//! Command-line driver: single analysis stages, the full pipeline run, and
//! the synthetic-market generator.
//!
//! Every command reads the shared configuration file (`--config`), applies
//! its own flag overrides, writes its output files into the output
//! directory, and prints the written paths. Exit status is zero exactly
//! when the command succeeded.

use std::error::Error;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use tradepack::detect::TradePackage;
use tradepack::impact::{FmFilter, PackageCondition, TransactionCondition};
use tradepack::ingest::{write_trade_file, InvestorType};
use tradepack::pipeline::{
    detect_stage, impact_package_one, impact_transaction_one, load_records, pdf_fit_file,
    profile_stage, regress_stage, run_pipeline, scaling_stage, summarize_stage, PipelineConfig,
    StageFile,
};
use tradepack::powerlaw::Regime;
use tradepack::synth::{generate_market, SynthConfig};

// ===== argument grammar =====

#[derive(Parser)]
#[command(
    name = "tradepack",
    version,
    about = "Detect trade packages in transaction streams and measure their \
             statistics and price impact"
)]
struct Cli {
    /// Configuration file (JSON). Pipeline config for analysis commands;
    /// market config for `synth`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory override.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stock activity summary table.
    Summarize {
        /// Trade file (CSV).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Per-stock metadata JSON.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Detect packages and write the package, rejection, and population
    /// tables.
    Detect {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Break length in trading days.
        #[arg(long)]
        break_days: Option<u32>,
        /// Dominant-side volume fraction threshold.
        #[arg(long)]
        theta: Option<f64>,
        /// Market-order count threshold (strict).
        #[arg(long = "min-market")]
        min_market: Option<u32>,
        /// Keep only packages completed within one trading day.
        #[arg(long)]
        one_day_only: bool,
    },
    /// Fit a power law to one package variable.
    FitPdf {
        #[arg(long)]
        input: Option<PathBuf>,
        /// Variable: T (execution time), N (trade count), V (volume).
        #[arg(long, value_parser = parse_var)]
        var: char,
        /// Fit regime; defaults to bounded for T, tail for N and V.
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
        /// Break length for the underlying detection.
        #[arg(long)]
        break_days: Option<u32>,
    },
    /// Scaling relations between execution time, trade count, and volume.
    Scaling {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// Fraction of the top conditioning decades kept for the fits.
        #[arg(long)]
        window_top_frac: Option<f64>,
    },
    /// Intraday volume and activity profiles of package transactions.
    Profile {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
        /// Restrict to one investor type.
        #[arg(long, value_parser = parse_investor_type)]
        investor_type: Option<InvestorType>,
    },
    /// Price-impact curves at the package or transaction level.
    Impact {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        level: LevelArg,
        /// Conditioning variable: T/V (package time/volume), t/v
        /// (transaction day-time/volume).
        #[arg(long, value_parser = parse_condition)]
        condition: char,
        /// Dominant-fraction class (package level): gt08, lt02, or all.
        #[arg(long, value_parser = parse_fm, default_value = "all")]
        fm: FmFilter,
    },
    /// Per-stock return regressions on the trading-second grid.
    Regress {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Lags in seconds for the per-lag model.
        #[arg(long, value_delimiter = ',')]
        lags: Option<Vec<usize>>,
    },
    /// Generate a synthetic market with planted ground truth.
    Synth {
        /// Trade file to write.
        #[arg(long, default_value = "data.csv")]
        out: PathBuf,
        /// Ground-truth JSON to write.
        #[arg(long, default_value = "truth.json")]
        truth: PathBuf,
    },
    /// Run every stage and write the manifest.
    Run {
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Bounded,
    Tail,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Package,
    Transaction,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Lagged,
    Ar,
}

fn parse_var(s: &str) -> Result<char, String> {
    match s {
        "T" | "t" => Ok('t'),
        "N" | "n" => Ok('n'),
        "V" | "v" => Ok('v'),
        _ => Err(format!("unknown variable {s:?}: expected T, N, or V")),
    }
}

/// Case-sensitive: uppercase conditions are package-level, lowercase are
/// transaction-level.
fn parse_condition(s: &str) -> Result<char, String> {
    match s {
        "T" => Ok('T'),
        "V" => Ok('V'),
        "t" => Ok('t'),
        "v" => Ok('v'),
        _ => Err(format!("unknown condition {s:?}: expected T, V, t, or v")),
    }
}

fn parse_fm(s: &str) -> Result<FmFilter, String> {
    match s {
        "gt08" => Ok(FmFilter::High),
        "lt02" => Ok(FmFilter::Low),
        "all" => Ok(FmFilter::All),
        _ => Err(format!("unknown class {s:?}: expected gt08, lt02, or all")),
    }
}

fn parse_investor_type(s: &str) -> Result<InvestorType, String> {
    match s {
        "inst" | "institution" => Ok(InvestorType::Institution),
        "indiv" | "individual" => Ok(InvestorType::Individual),
        _ => Err(format!("unknown investor type {s:?}: expected inst or indiv")),
    }
}

// ===== execution =====

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        // ignore "already initialized" if a pool exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut cause = e.source();
            while let Some(c) = cause {
                eprintln!("  caused by: {c}");
                cause = c.source();
            }
            ExitCode::FAILURE
        }
    }
}

/// Loads the pipeline configuration and applies global + per-command
/// overrides.
fn pipeline_config(cli: &Cli, input: Option<PathBuf>) -> Result<PipelineConfig, Box<dyn Error>> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| format!("cannot parse {}: {e}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(input) = input {
        cfg.input = input;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

/// Writes stage files into the output directory, printing each path.
fn emit(cfg: &PipelineConfig, files: Vec<StageFile>) -> Result<(), Box<dyn Error>> {
    fs::create_dir_all(&cfg.out_dir)?;
    for f in files {
        let path = cfg.out_dir.join(&f.name);
        fs::write(&path, f.content.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Detection at the primary break length, restricted to the configured
/// investor type.
fn detect_primary(
    records: &[tradepack::ingest::TradeRecord],
    cfg: &PipelineConfig,
) -> Result<(Vec<TradePackage>, Vec<TradePackage>), Box<dyn Error>> {
    let (mut detections, _) = detect_stage(records, cfg)?;
    let all = detections
        .remove(&cfg.primary_break())
        .expect("primary break detected")
        .packages;
    let kept = all
        .iter()
        .filter(|p| cfg.investor_type.is_none_or(|t| p.investor_type == t))
        .cloned()
        .collect();
    Ok((all, kept))
}

fn run(cli: Cli) -> Result<(), Box<dyn Error>> {
    match &cli.command {
        Command::Summarize { input, meta } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            if meta.is_some() {
                cfg.meta = meta.clone();
            }
            let (records, issues) = load_records(&cfg.input, cfg.lenient)?;
            let meta = match &cfg.meta {
                Some(path) => Some(serde_json::from_str(&fs::read_to_string(path)?)?),
                None => None,
            };
            let mut files = issues;
            files.extend(summarize_stage(&records, meta.as_ref()));
            emit(&cfg, files)
        }
        Command::Detect { input, break_days, theta, min_market, one_day_only } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            cfg.break_days = vec![break_days.unwrap_or_else(|| cfg.primary_break())];
            if let Some(theta) = theta {
                cfg.theta = *theta;
            }
            if let Some(m) = min_market {
                cfg.min_market_trades = *m;
            }
            if *one_day_only {
                cfg.one_day_only = true;
            }
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (_, files) = detect_stage(&records, &cfg)?;
            emit(&cfg, files)
        }
        Command::FitPdf { input, var, regime, break_days } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            if let Some(n) = break_days {
                cfg.break_days = vec![*n];
            }
            let regime = match regime {
                Some(RegimeArg::Bounded) => Regime::BoundedGeneral,
                Some(RegimeArg::Tail) => Regime::UnboundedTail,
                None if *var == 't' => Regime::BoundedGeneral,
                None => Regime::UnboundedTail,
            };
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (_, kept) = detect_primary(&records, &cfg)?;
            emit(&cfg, pdf_fit_file(&kept, &var.to_string(), regime)?)
        }
        Command::Scaling { input, bins, window_top_frac } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            if let Some(b) = bins {
                cfg.scaling_bins = *b;
            }
            if let Some(w) = window_top_frac {
                cfg.window_top_frac = *w;
            }
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (_, kept) = detect_primary(&records, &cfg)?;
            emit(&cfg, scaling_stage(&kept, &cfg)?)
        }
        Command::Profile { input, bins, investor_type } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            if let Some(b) = bins {
                cfg.profile_bins = *b;
            }
            if investor_type.is_some() {
                cfg.investor_type = *investor_type;
            }
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (_, kept) = detect_primary(&records, &cfg)?;
            emit(&cfg, profile_stage(&records, &kept, &cfg)?)
        }
        Command::Impact { input, level, condition, fm } => {
            let cfg = pipeline_config(&cli, input.clone())?;
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (all, _) = detect_primary(&records, &cfg)?;
            let files = match (level, condition) {
                (LevelArg::Package, 'T') => impact_package_one(
                    &all,
                    &cfg,
                    cfg.investor_type,
                    PackageCondition::ExecutionTime,
                    *fm,
                )?,
                (LevelArg::Package, 'V') => impact_package_one(
                    &all,
                    &cfg,
                    cfg.investor_type,
                    PackageCondition::Volume,
                    *fm,
                )?,
                (LevelArg::Transaction, 't') => impact_transaction_one(
                    &records,
                    &all,
                    &cfg,
                    cfg.investor_type,
                    TransactionCondition::DayTime,
                )?,
                (LevelArg::Transaction, 'v') => impact_transaction_one(
                    &records,
                    &all,
                    &cfg,
                    cfg.investor_type,
                    TransactionCondition::Volume,
                )?,
                (LevelArg::Package, _) => {
                    return Err("package level takes condition T or V".into())
                }
                (LevelArg::Transaction, _) => {
                    return Err("transaction level takes condition t or v".into())
                }
            };
            emit(&cfg, files)
        }
        Command::Regress { input, model, lags } => {
            let mut cfg = pipeline_config(&cli, input.clone())?;
            if let Some(lags) = lags {
                cfg.lags = lags.clone();
            }
            let (records, _) = load_records(&cfg.input, cfg.lenient)?;
            let (_, kept) = detect_primary(&records, &cfg)?;
            let files = regress_stage(&records, &kept, &cfg)?;
            let wanted = match model {
                ModelArg::Lagged => "regress_lagged.tsv",
                ModelArg::Ar => "regress_ar.tsv",
            };
            emit(
                &cfg,
                files
                    .into_iter()
                    .filter(|f| f.name == wanted || f.name == "regress_notes.tsv")
                    .collect(),
            )
        }
        Command::Synth { out, truth } => {
            let mut cfg: SynthConfig = match &cli.config {
                Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
                    .map_err(|e| format!("cannot parse {}: {e}", path.display()))?,
                None => SynthConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let market = generate_market(&cfg)?;
            let mut buf = Vec::new();
            write_trade_file(&mut buf, &market.records)?;
            fs::write(out, buf)?;
            fs::write(truth, market.truth.to_json()? + "\n")?;
            println!(
                "wrote {} ({} trades) and {} ({} packages)",
                out.display(),
                market.records.len(),
                truth.display(),
                market.truth.packages.len(),
            );
            Ok(())
        }
        Command::Run { input } => {
            let cfg = pipeline_config(&cli, input.clone())?;
            let manifest = run_pipeline(&cfg)?;
            for stage in &manifest.stages {
                println!("stage {}: {} files", stage.stage, stage.files.len());
            }
            println!("complete: {}", cfg.out_dir.join("manifest.json").display());
            Ok(())
        }
    }
}
