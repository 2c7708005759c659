//! End-to-end orchestration: ingest → summarize → detect → fit-pdf →
//! scaling → profile → impact → regress, with every stage output written to
//! one directory and a manifest recording the tool version, the config
//! digest, and a checksum per output file.
//!
//! A run is a pure function of `(config, input files)`: no timestamps,
//! host names, or absolute paths leak into outputs, so identical reruns
//! produce byte-identical manifests. Stage failures abort the run with the
//! stage name and cause; whatever was already written stays on disk and the
//! manifest is stamped `incomplete`.
//!
//! Every stage is also exposed as a standalone function returning its
//! rendered files, so the command-line tool can run any single stage
//! without the others.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detect::{detect_packages, package_stats, DetectionResult, DetectorConfig, TradePackage};
use crate::impact::{
    conditional_package_impact, conditional_transaction_impact, fit_impact_powerlaw,
    package_impact_anova, package_impacts, transaction_impacts, FmFilter, ImpactFit,
    PackageCondition, PackageImpact, TransactionCondition, TransactionImpact, TransactionSeries,
};
use crate::ingest::{
    merge_same_time_trades, parse_trade_file, summarize, InvestorType, ParseMode, StockCode,
    StockMeta, TradeRecord,
};
use crate::powerlaw::{fit_with_xmin_scan, PowerLawFit, Regime};
use crate::profile::{
    endpoint_time_pdfs, mean_volume_profile, transaction_time_pdf, Profile, Selector,
};
use crate::regress::{build_second_grid, regress_ar_volume, regress_lagged_volume, VOLUME_LAGS};
use crate::scaling::{scaling_exponents, BinnedSeries, PackageVars};

// ===== configuration =====

/// Full pipeline configuration; serializable so a run is reproducible from
/// the config file plus the input files alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Trade file (canonical CSV schema).
    pub input: PathBuf,
    /// Optional per-stock metadata JSON (market values by stock code).
    pub meta: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Skip malformed input lines instead of aborting.
    pub lenient: bool,
    /// Detection thresholds.
    pub theta: f64,
    pub min_market_trades: u32,
    pub one_day_only: bool,
    /// Break lengths (trading days) to detect at; the first is the primary
    /// population all statistical stages run on.
    pub break_days: Vec<u32>,
    /// When set, statistical stages keep only this investor type's packages.
    pub investor_type: Option<InvestorType>,
    pub scaling_bins: usize,
    pub window_top_frac: f64,
    pub profile_bins: usize,
    pub impact_bins: usize,
    /// Raw-share floor for the transaction-level impact power-law fit.
    pub transaction_volume_floor: f64,
    /// Lags (seconds) for the per-lag volume regressions.
    pub lags: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("data.csv"),
            meta: None,
            out_dir: PathBuf::from("out"),
            seed: 7,
            lenient: false,
            theta: 0.75,
            min_market_trades: 5,
            one_day_only: false,
            break_days: vec![1, 5, 10],
            investor_type: None,
            scaling_bins: 20,
            window_top_frac: 0.5,
            profile_bins: 48,
            impact_bins: 20,
            transaction_volume_floor: 1e3,
            lags: VOLUME_LAGS.to_vec(),
        }
    }
}

impl PipelineConfig {
    pub fn detector(&self, break_days: u32) -> DetectorConfig {
        DetectorConfig {
            break_days,
            theta: self.theta,
            min_market_trades: self.min_market_trades,
            one_day_only: self.one_day_only,
        }
    }

    /// Primary break length (first configured).
    pub fn primary_break(&self) -> u32 {
        self.break_days.first().copied().unwrap_or(1)
    }
}

/// Pipeline failure: the stage that failed plus the cause.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("stage {stage} failed: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err<E: std::fmt::Display>(
    stage: &'static str,
) -> impl Fn(E) -> PipelineError + Copy {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

// ===== rendered files and the manifest =====

/// One rendered output file: a name (relative to the output directory) and
/// its full content.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFile {
    pub name: String,
    pub content: String,
}

impl StageFile {
    fn new(name: &str, content: String) -> Self {
        StageFile { name: name.to_owned(), content }
    }
}

/// Checksum record of one written file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// One stage's written files, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub files: Vec<ManifestFile>,
}

/// The run record: version, config digest, per-stage output checksums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_sha256: String,
    /// `complete` when every stage succeeded, else `incomplete`.
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<StageManifest>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// ===== formatting helpers =====

/// TSV cell for a float: six significant digits, `NA` for non-finite.
fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.5e}")
    } else {
        "NA".to_owned()
    }
}

/// Rounds to 12 significant digits so JSON output is stable and readable.
fn sig12(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.11e}").parse().expect("formatted float re-parses")
    } else {
        x
    }
}

fn tsv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

// ===== ingest =====

/// Reads, parses, and same-second-merges the input trade file. Returns the
/// records plus rendered parse-issue files (lenient mode only).
pub fn load_records(
    path: &Path,
    lenient: bool,
) -> Result<(Vec<TradeRecord>, Vec<StageFile>), PipelineError> {
    let raw = fs::read(path)
        .map_err(|source| PipelineError::Read { path: path.to_owned(), source })?;
    let mode = if lenient { ParseMode::Lenient } else { ParseMode::Strict };
    let parsed = parse_trade_file(raw.as_slice(), mode)
        .map_err(|e| PipelineError::Parse { path: path.to_owned(), message: e.to_string() })?;
    let mut files = Vec::new();
    if lenient {
        files.push(StageFile::new(
            "ingest_issues.tsv",
            tsv(
                "line\tissue",
                parsed.skipped.iter().map(|i| format!("{}\t{}", i.line, i.kind)),
            ),
        ));
    }
    Ok((merge_same_time_trades(parsed.records), files))
}

fn load_meta(
    path: Option<&Path>,
) -> Result<Option<HashMap<StockCode, StockMeta>>, PipelineError> {
    let Some(path) = path else { return Ok(None) };
    let raw = fs::read_to_string(path)
        .map_err(|source| PipelineError::Read { path: path.to_owned(), source })?;
    let meta: HashMap<StockCode, StockMeta> = serde_json::from_str(&raw)
        .map_err(|e| PipelineError::Parse { path: path.to_owned(), message: e.to_string() })?;
    Ok(Some(meta))
}

// ===== stages =====

/// Per-stock activity summary table.
pub fn summarize_stage(
    records: &[TradeRecord],
    meta: Option<&HashMap<StockCode, StockMeta>>,
) -> Vec<StageFile> {
    let rows = summarize(records, meta);
    let opt = |v: Option<f64>| v.map_or("NA".to_owned(), cell);
    vec![StageFile::new(
        "summary.tsv",
        tsv(
            "stock\tn_investors\tn_trades\ttrades_mean\ttrades_median\ttrades_std\ta_tot\tc_flo\tc_tot",
            rows.iter().map(|s| {
                format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    s.stock,
                    s.n_investors,
                    s.n_trades,
                    cell(s.trades_mean),
                    cell(s.trades_median),
                    cell(s.trades_std),
                    opt(s.meta.a_tot),
                    opt(s.meta.c_flo),
                    opt(s.meta.c_tot),
                )
            }),
        ),
    )]
}

fn keep_type(packages: &[TradePackage], filter: Option<InvestorType>) -> Vec<TradePackage> {
    packages
        .iter()
        .filter(|p| filter.is_none_or(|t| p.investor_type == t))
        .cloned()
        .collect()
}

fn package_rows(packages: &[TradePackage]) -> impl Iterator<Item = String> + '_ {
    packages.iter().map(|p| {
        format!(
            "{}\t{}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.stock,
            p.investor,
            p.investor_type,
            p.sign,
            cell(p.t_secs),
            p.n_trades,
            p.n_market,
            p.volume,
            cell(p.f_m),
            cell(p.t_ini),
            cell(p.t_fin),
            p.within_one_day,
            p.first.date,
            p.first.time_string(),
            p.last.date,
            p.last.time_string(),
        )
    })
}

const PACKAGE_HEADER: &str = "stock\tinvestor\tinvestor_type\tsign\tt_secs\tn_trades\tn_market\t\
    volume\tf_m\tt_ini\tt_fin\twithin_one_day\tfirst_date\tfirst_time\tlast_date\tlast_time";

/// Runs detection at every configured break length. Emits one package table
/// and one rejection table per break length plus a population-statistics
/// table with one column per break length; returns the detections for the
/// downstream stages.
pub fn detect_stage(
    records: &[TradeRecord],
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<u32, DetectionResult>, Vec<StageFile>), PipelineError> {
    let fail = stage_err("detect");
    let mut detections = BTreeMap::new();
    let mut files = Vec::new();
    for &n in &cfg.break_days {
        let detection = detect_packages(records, &cfg.detector(n)).map_err(fail)?;
        detections.insert(n, detection);
    }

    for (&n, detection) in &detections {
        let kept = keep_type(&detection.packages, cfg.investor_type);
        files.push(StageFile::new(
            &format!("packages_n{n}.tsv"),
            tsv(PACKAGE_HEADER, package_rows(&kept)),
        ));
        files.push(StageFile::new(
            &format!("rejections_n{n}.tsv"),
            tsv(
                "stock\tinvestor\treason\tn_trades",
                detection.rejections.iter().map(|r| {
                    format!(
                        "{}\t{}\t{}\t{}",
                        r.stock,
                        r.investor,
                        serde_json::to_value(r.reason)
                            .expect("enum serializes")
                            .as_str()
                            .expect("reason is a string")
                            .to_owned(),
                        r.n_trades
                    )
                }),
            ),
        ));
    }

    // population means, one column per break length (statistic rows grouped
    // by investor type)
    let mut rows = Vec::new();
    for (group, pick) in [
        ("institutions", InvestorType::Institution),
        ("individuals", InvestorType::Individual),
    ] {
        if cfg.investor_type.is_some_and(|t| t != pick) {
            continue;
        }
        for stat in ["n_packages", "mean_t_secs", "mean_n_trades", "mean_volume"] {
            let mut row = format!("{group}\t{stat}");
            for detection in detections.values() {
                let kept = keep_type(&detection.packages, cfg.investor_type);
                let stats = package_stats(&kept).map_err(fail)?;
                let pop = match pick {
                    InvestorType::Institution => stats.institutions,
                    InvestorType::Individual => stats.individuals,
                };
                let value = match stat {
                    "n_packages" => pop.n_packages.to_string(),
                    "mean_t_secs" => cell(pop.mean_t_secs),
                    "mean_n_trades" => cell(pop.mean_n_trades),
                    _ => cell(pop.mean_volume),
                };
                row.push('\t');
                row.push_str(&value);
            }
            rows.push(row);
        }
    }
    let mut header = String::from("group\tstatistic");
    for &n in detections.keys() {
        header.push_str(&format!("\tn{n}"));
    }
    files.push(StageFile::new("package_stats.tsv", tsv(&header, rows)));

    Ok((detections, files))
}

/// JSON-facing form of a power-law fit, rounded to 12 significant digits.
#[derive(Serialize)]
pub struct PdfFitOut {
    pub regime: &'static str,
    pub delta: f64,
    pub sigma: f64,
    pub xmin: f64,
    pub xmax: Option<f64>,
    pub ks: f64,
    pub n_tail: usize,
    pub n_samples: usize,
}

impl PdfFitOut {
    pub fn from_fit(fit: &PowerLawFit, n_samples: usize) -> Self {
        PdfFitOut {
            regime: match fit.regime {
                Regime::BoundedGeneral => "bounded",
                Regime::UnboundedTail => "tail",
            },
            delta: sig12(fit.delta),
            sigma: sig12(fit.sigma),
            xmin: sig12(fit.x_min),
            xmax: fit.x_max.map(sig12),
            ks: sig12(fit.ks),
            n_tail: fit.n_tail,
            n_samples,
        }
    }
}

/// Package-variable power-law fit with a cutoff scan: execution times on a
/// finite support, trade counts and volumes as unbounded tails.
pub fn pdf_fit_one(
    packages: &[TradePackage],
    var: &str,
    regime: Regime,
) -> Result<PowerLawFit, PipelineError> {
    let fail = stage_err("fit-pdf");
    let samples: Vec<f64> = packages
        .iter()
        .map(|p| match var {
            "t" => p.t_secs,
            "n" => p.n_trades as f64,
            _ => p.volume as f64,
        })
        .filter(|&x| x > 0.0)
        .collect();
    fit_with_xmin_scan(&samples, regime).map_err(fail)
}

/// Distribution fits for all three package variables.
pub fn pdf_stage(packages: &[TradePackage]) -> Result<Vec<StageFile>, PipelineError> {
    let mut fits = BTreeMap::new();
    for (var, regime) in
        [("t", Regime::BoundedGeneral), ("n", Regime::UnboundedTail), ("v", Regime::UnboundedTail)]
    {
        let fit = pdf_fit_one(packages, var, regime)?;
        fits.insert(var, PdfFitOut::from_fit(&fit, packages.len()));
    }
    let json = serde_json::to_string_pretty(&fits).expect("serializable");
    Ok(vec![StageFile::new("pdf_fits.json", json + "\n")])
}

/// Single-variable fit file for the one-shot command.
pub fn pdf_fit_file(
    packages: &[TradePackage],
    var: &str,
    regime: Regime,
) -> Result<Vec<StageFile>, PipelineError> {
    let fit = pdf_fit_one(packages, var, regime)?;
    let json =
        serde_json::to_string_pretty(&PdfFitOut::from_fit(&fit, packages.len()))
            .expect("serializable");
    Ok(vec![StageFile::new(&format!("pdf_fit_{var}.json"), json + "\n")])
}

fn binned_rows<'a>(
    label: &'a str,
    series: &'a BinnedSeries,
) -> impl Iterator<Item = String> + 'a {
    (0..series.cond_mean.len()).map(move |b| {
        format!(
            "{label}\t{b}\t{}\t{}\t{}\t{}",
            cell(series.cond_mean[b]),
            cell(series.resp_mean[b]),
            cell(series.resp_stderr[b]),
            series.count[b],
        )
    })
}

const BIN_HEADER: &str = "series\tbin\tcond_mean\tresp_mean\tresp_stderr\tcount";

#[derive(Serialize)]
struct ExponentOut {
    exponent: f64,
    exponent_stderr: f64,
    amplitude: f64,
    r_squared: f64,
    n_bins_used: usize,
}

impl From<&crate::scaling::LogLogFit> for ExponentOut {
    fn from(f: &crate::scaling::LogLogFit) -> Self {
        ExponentOut {
            exponent: sig12(f.exponent),
            exponent_stderr: sig12(f.exponent_stderr),
            amplitude: sig12(f.amplitude),
            r_squared: sig12(f.r_squared),
            n_bins_used: f.n_bins_used,
        }
    }
}

/// Scaling exponents g₁, g₂, g₃ with their binned conditional means.
pub fn scaling_stage(
    packages: &[TradePackage],
    cfg: &PipelineConfig,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("scaling");
    let vars: Vec<PackageVars> = packages.iter().map(PackageVars::from).collect();
    let est = scaling_exponents(&vars, cfg.scaling_bins, cfg.window_top_frac).map_err(fail)?;

    let t: Vec<f64> = vars.iter().map(|p| p.t_secs).collect();
    let n: Vec<f64> = vars.iter().map(|p| p.n_trades).collect();
    let v: Vec<f64> = vars.iter().map(|p| p.volume).collect();
    let series = [
        ("t_given_v", crate::scaling::binned_conditional_mean(&v, &t, cfg.scaling_bins)),
        ("n_given_v", crate::scaling::binned_conditional_mean(&v, &n, cfg.scaling_bins)),
        ("t_given_n", crate::scaling::binned_conditional_mean(&n, &t, cfg.scaling_bins)),
    ];
    let mut rows = Vec::new();
    for (label, s) in &series {
        rows.extend(binned_rows(label, s.as_ref().map_err(|e| fail(e.clone()))?));
    }

    #[derive(Serialize)]
    struct ScalingOut {
        g1: ExponentOut,
        g2: ExponentOut,
        g3: ExponentOut,
        product_gap: f64,
        gap_sigma: f64,
        identity_within_2_sigma: bool,
    }
    let out = ScalingOut {
        g1: (&est.g1).into(),
        g2: (&est.g2).into(),
        g3: (&est.g3).into(),
        product_gap: sig12(est.product_gap),
        gap_sigma: sig12(est.gap_sigma),
        identity_within_2_sigma: est.identity_holds(2.0),
    };
    Ok(vec![
        StageFile::new("scaling_bins.tsv", tsv(BIN_HEADER, rows)),
        StageFile::new(
            "scaling_fits.json",
            serde_json::to_string_pretty(&out).expect("serializable") + "\n",
        ),
    ])
}

fn profile_rows<'a>(label: &'a str, p: &'a Profile) -> impl Iterator<Item = String> + 'a {
    (0..p.n_bins()).map(move |b| {
        format!(
            "{label}\t{}\t{}\t{}",
            cell(p.centers[b]),
            p.values[b].map_or("NA".to_owned(), cell),
            p.counts[b],
        )
    })
}

/// Intraday profiles of the package transactions: mean normalized volume
/// and transaction-time densities per selector, plus package start/end
/// densities.
pub fn profile_stage(
    records: &[TradeRecord],
    packages: &[TradePackage],
    cfg: &PipelineConfig,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("profile");
    let n = cfg.profile_bins;
    let mut rows: Vec<String> = Vec::new();
    for (label, selector) in [
        ("mean_volume_market", Selector::MarketOnly),
        ("mean_volume_limit", Selector::LimitOnly),
        ("mean_volume_all", Selector::All),
        ("mean_volume_concurrent", Selector::ConcurrentTrades),
    ] {
        let p = mean_volume_profile(records, packages, selector, n).map_err(fail)?;
        rows.extend(profile_rows(label, &p));
    }
    for (label, selector) in
        [("time_pdf_all", Selector::All), ("time_pdf_concurrent", Selector::ConcurrentTrades)]
    {
        let p = transaction_time_pdf(records, packages, selector, n).map_err(fail)?;
        rows.extend(profile_rows(label, &p));
    }
    let (start, end) = endpoint_time_pdfs(packages, n).map_err(fail)?;
    rows.extend(profile_rows("start_pdf", &start));
    rows.extend(profile_rows("end_pdf", &end));
    Ok(vec![StageFile::new(
        "profiles.tsv",
        tsv("series\tbin_center\tvalue\tcount", rows),
    )])
}

#[derive(Serialize)]
struct ImpactFitOut {
    amplitude: f64,
    amplitude_stderr: f64,
    exponent: f64,
    exponent_stderr: f64,
    r_squared: f64,
    majority_sign: i8,
    n_bins_used: usize,
    excluded_bins: Vec<usize>,
}

impl From<&ImpactFit> for ImpactFitOut {
    fn from(f: &ImpactFit) -> Self {
        ImpactFitOut {
            amplitude: sig12(f.amplitude),
            amplitude_stderr: sig12(f.amplitude_stderr),
            exponent: sig12(f.exponent),
            exponent_stderr: sig12(f.exponent_stderr),
            r_squared: sig12(f.r_squared),
            majority_sign: f.majority_sign,
            n_bins_used: f.n_bins_used,
            excluded_bins: f.excluded_bins.clone(),
        }
    }
}

#[derive(Serialize)]
struct AnovaOut {
    f: f64,
    p: f64,
    df_between: usize,
    df_within: usize,
    degenerate: bool,
}

/// Package- and transaction-level impact curves and fits.
///
/// Impacts are always normalized over the full population (both investor
/// types), then restricted to the configured type. F_m-restricted series
/// appear only when enough packages fall in the class.
pub fn impact_stage(
    records: &[TradeRecord],
    packages: &[TradePackage],
    cfg: &PipelineConfig,
    filter: Option<InvestorType>,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("impact");
    let n = cfg.impact_bins;

    // package level
    let all_impacts = package_impacts(packages).map_err(fail)?;
    let impacts: Vec<PackageImpact> = all_impacts
        .iter()
        .filter(|i| filter.is_none_or(|t| i.investor_type == t))
        .copied()
        .collect();

    let mut rows = Vec::new();
    let mut fits: BTreeMap<String, ImpactFitOut> = BTreeMap::new();
    let mut anovas: BTreeMap<String, AnovaOut> = BTreeMap::new();
    for (cond_label, condition) in [
        ("execution_time", PackageCondition::ExecutionTime),
        ("volume", PackageCondition::Volume),
    ] {
        for (fm_label, fm) in
            [("all", FmFilter::All), ("fm_high", FmFilter::High), ("fm_low", FmFilter::Low)]
        {
            let label = format!("{cond_label}_{fm_label}");
            let restricted = fm != FmFilter::All;
            let series = match conditional_package_impact(&impacts, condition, n, fm) {
                Ok(s) => s,
                // a sparse F_m class is omitted, not fatal
                Err(_) if restricted => continue,
                Err(e) => return Err(fail(e)),
            };
            rows.extend(binned_rows(&label, &series));
            if condition == PackageCondition::Volume {
                if let Ok(fit) = fit_impact_powerlaw(&series, 0.0) {
                    fits.insert(label.clone(), (&fit).into());
                }
            }
            let anova = match package_impact_anova(&impacts, condition, n, fm) {
                Ok(a) => a,
                Err(_) if restricted => continue,
                Err(e) => return Err(fail(e)),
            };
            anovas.insert(
                label,
                AnovaOut {
                    f: sig12(anova.f),
                    p: sig12(anova.p),
                    df_between: anova.df_between,
                    df_within: anova.df_within,
                    degenerate: anova.degenerate,
                },
            );
        }
    }

    // transaction level
    let txn = transaction_impacts(records, packages).map_err(fail)?;
    let kept: Vec<TransactionImpact> = txn
        .impacts
        .iter()
        .filter(|i| filter.is_none_or(|t| i.investor_type == t))
        .copied()
        .collect();
    let mut txn_rows = Vec::new();
    for (series_label, series) in [
        ("market_impact", TransactionSeries::MarketImpact),
        ("limit_impact", TransactionSeries::LimitImpact),
        ("concurrent", TransactionSeries::Concurrent),
    ] {
        for (cond_label, condition) in
            [("day_time", TransactionCondition::DayTime), ("volume", TransactionCondition::Volume)]
        {
            let label = format!("{series_label}_{cond_label}");
            let binned =
                conditional_transaction_impact(&kept, condition, series, n).map_err(fail)?;
            txn_rows.extend(binned_rows(&label, &binned));
        }
    }
    let market_by_volume = conditional_transaction_impact(
        &kept,
        TransactionCondition::Volume,
        TransactionSeries::MarketImpact,
        n,
    )
    .map_err(fail)?;
    let txn_fit =
        fit_impact_powerlaw(&market_by_volume, cfg.transaction_volume_floor).map_err(fail)?;

    #[derive(Serialize)]
    struct PackageImpactOut {
        n_packages: usize,
        fits: BTreeMap<String, ImpactFitOut>,
        anova: BTreeMap<String, AnovaOut>,
    }
    #[derive(Serialize)]
    struct TransactionImpactOut {
        n_transactions: usize,
        excluded_no_prior: usize,
        market_volume_fit: ImpactFitOut,
        volume_floor: f64,
    }
    Ok(vec![
        StageFile::new("impact_package_bins.tsv", tsv(BIN_HEADER, rows)),
        StageFile::new(
            "impact_package_fits.json",
            serde_json::to_string_pretty(&PackageImpactOut {
                n_packages: impacts.len(),
                fits,
                anova: anovas,
            })
            .expect("serializable")
                + "\n",
        ),
        StageFile::new("impact_transaction_bins.tsv", tsv(BIN_HEADER, txn_rows)),
        StageFile::new(
            "impact_transaction_fits.json",
            serde_json::to_string_pretty(&TransactionImpactOut {
                n_transactions: kept.len(),
                excluded_no_prior: txn.excluded_no_prior,
                market_volume_fit: (&txn_fit).into(),
                volume_floor: sig12(cfg.transaction_volume_floor),
            })
            .expect("serializable")
                + "\n",
        ),
    ])
}

fn fm_token(fm: FmFilter) -> &'static str {
    match fm {
        FmFilter::All => "all",
        FmFilter::High => "gt08",
        FmFilter::Low => "lt02",
    }
}

/// One package-level impact curve (one condition, one dominant-fraction
/// class) with its variance analysis and, for volume conditioning, the
/// power-law fit.
pub fn impact_package_one(
    packages: &[TradePackage],
    cfg: &PipelineConfig,
    filter: Option<InvestorType>,
    condition: PackageCondition,
    fm: FmFilter,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("impact");
    let all = package_impacts(packages).map_err(fail)?;
    let impacts: Vec<PackageImpact> = all
        .iter()
        .filter(|i| filter.is_none_or(|t| i.investor_type == t))
        .copied()
        .collect();
    let cond_label = match condition {
        PackageCondition::ExecutionTime => "time",
        PackageCondition::Volume => "volume",
    };
    let tag = format!("{cond_label}_{}", fm_token(fm));
    let series = conditional_package_impact(&impacts, condition, cfg.impact_bins, fm)
        .map_err(fail)?;
    let anova = package_impact_anova(&impacts, condition, cfg.impact_bins, fm).map_err(fail)?;
    let fit = if condition == PackageCondition::Volume {
        Some(fit_impact_powerlaw(&series, 0.0).map_err(fail)?)
    } else {
        None
    };

    #[derive(Serialize)]
    struct One {
        n_packages: usize,
        anova: AnovaOut,
        #[serde(skip_serializing_if = "Option::is_none")]
        fit: Option<ImpactFitOut>,
    }
    let out = One {
        n_packages: impacts.len(),
        anova: AnovaOut {
            f: sig12(anova.f),
            p: sig12(anova.p),
            df_between: anova.df_between,
            df_within: anova.df_within,
            degenerate: anova.degenerate,
        },
        fit: fit.as_ref().map(ImpactFitOut::from),
    };
    Ok(vec![
        StageFile::new(
            &format!("impact_package_{tag}.tsv"),
            tsv(BIN_HEADER, binned_rows(&tag, &series).collect::<Vec<_>>()),
        ),
        StageFile::new(
            &format!("impact_package_{tag}.json"),
            serde_json::to_string_pretty(&out).expect("serializable") + "\n",
        ),
    ])
}

/// Transaction-level impact curves for one conditioning variable: the three
/// series (market, limit, concurrent) plus, for volume conditioning, the
/// market-order power-law fit above the raw-share floor.
pub fn impact_transaction_one(
    records: &[TradeRecord],
    packages: &[TradePackage],
    cfg: &PipelineConfig,
    filter: Option<InvestorType>,
    condition: TransactionCondition,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("impact");
    let txn = transaction_impacts(records, packages).map_err(fail)?;
    let kept: Vec<TransactionImpact> = txn
        .impacts
        .iter()
        .filter(|i| filter.is_none_or(|t| i.investor_type == t))
        .copied()
        .collect();
    let cond_label = match condition {
        TransactionCondition::DayTime => "daytime",
        TransactionCondition::Volume => "volume",
    };
    let mut rows = Vec::new();
    let mut market_series = None;
    for (series_label, series) in [
        ("market_impact", TransactionSeries::MarketImpact),
        ("limit_impact", TransactionSeries::LimitImpact),
        ("concurrent", TransactionSeries::Concurrent),
    ] {
        let binned = conditional_transaction_impact(&kept, condition, series, cfg.impact_bins)
            .map_err(fail)?;
        rows.extend(binned_rows(series_label, &binned));
        if series == TransactionSeries::MarketImpact {
            market_series = Some(binned);
        }
    }
    let mut files = vec![StageFile::new(
        &format!("impact_transaction_{cond_label}.tsv"),
        tsv(BIN_HEADER, rows),
    )];
    if condition == TransactionCondition::Volume {
        let fit = fit_impact_powerlaw(
            &market_series.expect("market series rendered"),
            cfg.transaction_volume_floor,
        )
        .map_err(fail)?;
        #[derive(Serialize)]
        struct One {
            n_transactions: usize,
            excluded_no_prior: usize,
            market_volume_fit: ImpactFitOut,
            volume_floor: f64,
        }
        let out = One {
            n_transactions: kept.len(),
            excluded_no_prior: txn.excluded_no_prior,
            market_volume_fit: (&fit).into(),
            volume_floor: sig12(cfg.transaction_volume_floor),
        };
        files.push(StageFile::new(
            &format!("impact_transaction_{cond_label}.json"),
            serde_json::to_string_pretty(&out).expect("serializable") + "\n",
        ));
    }
    Ok(files)
}

/// Per-stock return regressions on the second grid: the per-lag volume
/// model and the joint autoregressive + volume model with its volume-only
/// restriction.
///
/// Stocks that cannot be fitted (no price variation, too few observations)
/// are listed in the notes file; the stage fails only when no stock fits.
pub fn regress_stage(
    records: &[TradeRecord],
    packages: &[TradePackage],
    cfg: &PipelineConfig,
) -> Result<Vec<StageFile>, PipelineError> {
    let fail = stage_err("regress");
    let stocks: BTreeSet<StockCode> = records.iter().map(|r| r.stock).collect();

    let mut lag_rows = Vec::new();
    let mut ar_rows = Vec::new();
    let mut notes = Vec::new();
    let mut fitted = 0usize;
    let mut ar_header: Option<String> = None;
    for &stock in &stocks {
        let outcome = (|| {
            let grid = build_second_grid(records, packages, stock, Some(crate::ingest::Aggressor::Market))?;
            let lagged = regress_lagged_volume(&grid, &cfg.lags)?;
            let ar = regress_ar_volume(&grid)?;
            Ok::<_, crate::regress::RegressError>((lagged, ar))
        })();
        let (lagged, ar) = match outcome {
            Ok(o) => o,
            Err(e) => {
                notes.push(format!("{stock}\t{e}"));
                continue;
            }
        };
        fitted += 1;
        for fit in &lagged {
            let coef = |name: &str| fit.result.coefficient(name).expect("named coefficient");
            let (b0, bv) = (coef("intercept"), coef("s_ln_v"));
            lag_rows.push(format!(
                "{stock}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                fit.lag,
                fit.result.n_obs,
                cell(b0.beta),
                cell(b0.t),
                cell(bv.beta),
                cell(bv.t),
                bv.significant,
                cell(fit.result.r_squared),
            ));
        }
        if ar_header.is_none() {
            let mut h = String::from("stock\tn_obs\tr_squared\tr_squared_volume_only");
            for c in &ar.full.coefficients {
                h.push_str(&format!("\tcoef_{}\tt_{}", c.name, c.name));
            }
            ar_header = Some(h);
        }
        let mut row = format!(
            "{stock}\t{}\t{}\t{}",
            ar.full.n_obs,
            cell(ar.full.r_squared),
            cell(ar.volume_only.r_squared),
        );
        for c in &ar.full.coefficients {
            row.push_str(&format!("\t{}\t{}", cell(c.beta), cell(c.t)));
        }
        ar_rows.push(row);
    }
    if fitted == 0 {
        return Err(fail(format!(
            "no stock could be fitted ({} skipped)",
            notes.len()
        )));
    }
    Ok(vec![
        StageFile::new(
            "regress_lagged.tsv",
            tsv(
                "stock\tlag\tn_obs\tcoef_intercept\tt_intercept\tcoef_s_ln_v\tt_s_ln_v\tsignificant\tr_squared",
                lag_rows,
            ),
        ),
        StageFile::new(
            "regress_ar.tsv",
            tsv(&ar_header.expect("at least one stock fitted"), ar_rows),
        ),
        StageFile::new("regress_notes.tsv", tsv("stock\tskip_reason", notes)),
    ])
}

// ===== the full run =====

fn write_stage(
    out_dir: &Path,
    stage: &str,
    files: Vec<StageFile>,
) -> Result<StageManifest, PipelineError> {
    let mut manifest_files = Vec::with_capacity(files.len());
    for f in files {
        let path = out_dir.join(&f.name);
        fs::write(&path, f.content.as_bytes())
            .map_err(|source| PipelineError::Write { path, source })?;
        manifest_files.push(ManifestFile {
            name: f.name,
            sha256: sha256_hex(f.content.as_bytes()),
            bytes: f.content.len(),
        });
    }
    Ok(StageManifest { stage: stage.to_owned(), files: manifest_files })
}

fn write_manifest(out_dir: &Path, manifest: &Manifest) -> Result<(), PipelineError> {
    let path = out_dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest).expect("serializable") + "\n";
    fs::write(&path, body).map_err(|source| PipelineError::Write { path, source })
}

/// Runs every stage, writing outputs and the manifest into
/// `config.out_dir`. On failure the manifest is still written, stamped
/// `incomplete` with the failing stage and cause, and the error is
/// returned.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(&config.out_dir)
        .map_err(|source| PipelineError::Write { path: config.out_dir.clone(), source })?;
    // the output location does not influence any output bytes, so it is
    // excluded from the digest: the same analysis in two directories gets
    // the same manifest
    let hashed = PipelineConfig { out_dir: PathBuf::new(), ..config.clone() };
    let config_sha256 =
        sha256_hex(serde_json::to_string(&hashed).expect("serializable").as_bytes());
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        config_sha256,
        status: "incomplete".to_owned(),
        failed_stage: None,
        error: None,
        stages: Vec::new(),
    };

    let mut run = || -> Result<(), PipelineError> {
        let (records, ingest_files) = load_records(&config.input, config.lenient)?;
        let meta = load_meta(config.meta.as_deref())?;

        let mut summary_files = ingest_files;
        summary_files.extend(summarize_stage(&records, meta.as_ref()));
        manifest.stages.push(write_stage(&config.out_dir, "summarize", summary_files)?);

        let (detections, detect_files) = detect_stage(&records, config)?;
        manifest.stages.push(write_stage(&config.out_dir, "detect", detect_files)?);

        let primary = &detections[&config.primary_break()];
        let kept = keep_type(&primary.packages, config.investor_type);

        manifest.stages.push(write_stage(&config.out_dir, "fit-pdf", pdf_stage(&kept)?)?);
        manifest.stages.push(write_stage(
            &config.out_dir,
            "scaling",
            scaling_stage(&kept, config)?,
        )?);
        manifest.stages.push(write_stage(
            &config.out_dir,
            "profile",
            profile_stage(&records, &kept, config)?,
        )?);
        manifest.stages.push(write_stage(
            &config.out_dir,
            "impact",
            impact_stage(&records, &primary.packages, config, config.investor_type)?,
        )?);
        manifest.stages.push(write_stage(
            &config.out_dir,
            "regress",
            regress_stage(&records, &kept, config)?,
        )?);
        Ok(())
    };

    match run() {
        Ok(()) => {
            manifest.status = "complete".to_owned();
            write_manifest(&config.out_dir, &manifest)?;
            Ok(manifest)
        }
        Err(e) => {
            manifest.failed_stage = Some(match &e {
                PipelineError::Stage { stage, .. } => (*stage).to_owned(),
                PipelineError::Read { .. } | PipelineError::Parse { .. } => "ingest".to_owned(),
                PipelineError::Write { .. } => "write".to_owned(),
            });
            manifest.error = Some(e.to_string());
            write_manifest(&config.out_dir, &manifest)?;
            Err(e)
        }
    }
}

// ===== tests =====
