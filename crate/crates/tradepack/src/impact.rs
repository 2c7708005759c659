//! Price impact of trade packages and of the transactions inside them.
//!
//! Package level: the log-price change between a package's first and last
//! transaction, folded by the package sign and scaled by the stock's mean
//! absolute package return, so buys and sells of every stock pool on one
//! axis. Transaction level: the instantaneous log-price change of each
//! package transaction against the last tape print before it, plus the
//! concurrent impact attributable to other investors' same-second trades.
//! Both levels feed equal-count conditional means, one-way ANOVA across the
//! condition bins, and power-law fits of the conditional impact curve.
//!
//! Only packages finished within one trading day enter (multi-day impacts
//! mix in overnight returns that the package did not cause).

use std::collections::HashMap;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::clock::DayClock;
use crate::detect::TradePackage;
use crate::ingest::{Aggressor, InvestorType, StockCode, TradeRecord};
use crate::scaling::{binned_conditional_mean, equal_count_groups, BinnedSeries, ScalingError};
use crate::stats::{self, Anova, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImpactError {
    #[error("no within-one-day packages to measure")]
    NoPackages,
    #[error("stock {0} has zero mean absolute return; scaled impact undefined")]
    MeanAbsReturnZero(StockCode),
    #[error("timestamp outside trading sessions")]
    OutsideSession,
    #[error("{got} bins remain after floor/sign exclusion; need at least 3")]
    TooFewBins { got: usize },
    #[error("all bin means are zero; no sign to fit")]
    AllZeroBins,
    #[error(transparent)]
    Binning(#[from] ScalingError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ===== package level =====

/// Scaled impact of one within-one-day package.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PackageImpact {
    pub stock: StockCode,
    pub investor_type: InvestorType,
    /// +1 buy-dominant, −1 sell-dominant.
    pub sign: i8,
    /// Log-price change from first to last transaction.
    pub r: f64,
    /// Sign-folded impact r scaled by the stock's mean absolute return.
    pub impact: f64,
    pub f_m: f64,
    /// Execution time in trading seconds (conditioning variable).
    pub t_secs: f64,
    /// Total share volume (conditioning variable).
    pub volume: f64,
}

/// Computes r and the scaled impact R for every within-one-day package.
///
/// The normalization ⟨|r|⟩ is per stock, pooled over both investor types.
pub fn package_impacts(packages: &[TradePackage]) -> Result<Vec<PackageImpact>, ImpactError> {
    let one_day: Vec<&TradePackage> = packages.iter().filter(|p| p.within_one_day).collect();
    if one_day.is_empty() {
        return Err(ImpactError::NoPackages);
    }

    let mut abs_sum: HashMap<StockCode, (f64, usize)> = HashMap::new();
    let rs: Vec<f64> = one_day
        .iter()
        .map(|pkg| {
            let r = (pkg.last_price() / pkg.first_price()).ln();
            let e = abs_sum.entry(pkg.stock).or_insert((0.0, 0));
            e.0 += r.abs();
            e.1 += 1;
            r
        })
        .collect();
    let mean_abs: HashMap<StockCode, f64> =
        abs_sum.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect();

    one_day
        .iter()
        .zip(rs)
        .map(|(pkg, r)| {
            let norm = mean_abs[&pkg.stock];
            if norm == 0.0 {
                return Err(ImpactError::MeanAbsReturnZero(pkg.stock));
            }
            Ok(PackageImpact {
                stock: pkg.stock,
                investor_type: pkg.investor_type,
                sign: pkg.sign,
                r,
                impact: pkg.sign as f64 * r / norm,
                f_m: pkg.f_m,
                t_secs: pkg.t_secs,
                volume: pkg.volume as f64,
            })
        })
        .collect()
}

/// Market-order-fraction subpopulations used throughout the impact analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FmFilter {
    /// F_m > 0.8 — packages worked mostly by market orders.
    High,
    /// F_m < 0.2 — packages worked mostly by limit orders.
    Low,
    /// No restriction.
    All,
}

impl FmFilter {
    pub fn keep(&self, f_m: f64) -> bool {
        match self {
            FmFilter::High => f_m > 0.8,
            FmFilter::Low => f_m < 0.2,
            FmFilter::All => true,
        }
    }
}

/// Conditioning variable for package-level impact curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PackageCondition {
    /// ⟨R|T⟩ against execution time.
    ExecutionTime,
    /// ⟨R|V⟩ against total volume.
    Volume,
}

fn package_condition_value(imp: &PackageImpact, condition: PackageCondition) -> f64 {
    match condition {
        PackageCondition::ExecutionTime => imp.t_secs,
        PackageCondition::Volume => imp.volume,
    }
}

/// Equal-count binned mean of package impact R against T or V, optionally
/// restricted to an F_m subpopulation.
pub fn conditional_package_impact(
    impacts: &[PackageImpact],
    condition: PackageCondition,
    n_bins: usize,
    fm: FmFilter,
) -> Result<BinnedSeries, ImpactError> {
    let kept: Vec<&PackageImpact> = impacts.iter().filter(|i| fm.keep(i.f_m)).collect();
    let x: Vec<f64> = kept.iter().map(|i| package_condition_value(i, condition)).collect();
    let y: Vec<f64> = kept.iter().map(|i| i.impact).collect();
    Ok(binned_conditional_mean(&x, &y, n_bins)?)
}

/// One-way ANOVA of the impact values across the same equal-count condition
/// bins as `conditional_package_impact`: are the bin means distinguishable?
pub fn package_impact_anova(
    impacts: &[PackageImpact],
    condition: PackageCondition,
    n_bins: usize,
    fm: FmFilter,
) -> Result<Anova, ImpactError> {
    let kept: Vec<&PackageImpact> = impacts.iter().filter(|i| fm.keep(i.f_m)).collect();
    let x: Vec<f64> = kept.iter().map(|i| package_condition_value(i, condition)).collect();
    let y: Vec<f64> = kept.iter().map(|i| i.impact).collect();
    let groups = equal_count_groups(&x, &y, n_bins)?;
    let views: Vec<&[f64]> = groups.iter().map(|g| g.as_slice()).collect();
    Ok(stats::anova_oneway(&views)?)
}

// ===== conditional-impact power-law fit =====

/// Power-law fit |⟨R|x⟩| = amplitude·x^exponent over large-x bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImpactFit {
    pub amplitude: f64,
    /// Delta-method standard error of the amplitude (e^intercept·σ_intercept).
    pub amplitude_stderr: f64,
    pub exponent: f64,
    pub exponent_stderr: f64,
    pub r_squared: f64,
    /// Sign carried by the majority of fitted bins: +1 or −1.
    pub majority_sign: i8,
    pub n_bins_used: usize,
    /// Bins above the floor whose mean crossed to the minority sign (or sat
    /// at zero), excluded from the log fit.
    pub excluded_bins: Vec<usize>,
}

/// Fits ln|⟨R|x⟩| against ln x over bins whose conditioning mean exceeds
/// `floor`. The impact curve may sit on either side of zero; bins whose mean
/// has the minority sign are excluded and reported rather than silently
/// folded into the magnitude.
pub fn fit_impact_powerlaw(series: &BinnedSeries, floor: f64) -> Result<ImpactFit, ImpactError> {
    let candidates: Vec<usize> =
        (0..series.n_bins()).filter(|&b| series.cond_mean[b] > floor).collect();
    if candidates.len() < 3 {
        return Err(ImpactError::TooFewBins { got: candidates.len() });
    }

    let positive = candidates.iter().filter(|&&b| series.resp_mean[b] > 0.0).count();
    let negative = candidates.iter().filter(|&&b| series.resp_mean[b] < 0.0).count();
    let majority_sign: i8 = if positive > negative {
        1
    } else if negative > positive {
        -1
    } else {
        // tie: follow the summed mean; a zero sum has no usable sign
        let total: f64 = candidates.iter().map(|&b| series.resp_mean[b]).sum();
        if total > 0.0 {
            1
        } else if total < 0.0 {
            -1
        } else {
            return Err(ImpactError::AllZeroBins);
        }
    };

    let mut ln_x = Vec::new();
    let mut ln_y = Vec::new();
    let mut excluded = Vec::new();
    for &b in &candidates {
        if series.resp_mean[b] * majority_sign as f64 > 0.0 {
            ln_x.push(series.cond_mean[b].ln());
            ln_y.push(series.resp_mean[b].abs().ln());
        } else {
            excluded.push(b);
        }
    }
    if ln_x.len() < 3 {
        return Err(ImpactError::TooFewBins { got: ln_x.len() });
    }

    let fit = stats::ols_line(&ln_x, &ln_y)?;
    Ok(ImpactFit {
        amplitude: fit.beta[0].exp(),
        amplitude_stderr: fit.beta[0].exp() * fit.stderr[0],
        exponent: fit.beta[1],
        exponent_stderr: fit.stderr[1],
        r_squared: fit.r_squared,
        majority_sign,
        n_bins_used: ln_x.len(),
        excluded_bins: excluded,
    })
}

// ===== transaction level =====

/// Scaled impacts of one transaction inside a package.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransactionImpact {
    pub stock: StockCode,
    pub investor_type: InvestorType,
    /// +1 buy, −1 sell.
    pub sign: i8,
    pub aggressor: Aggressor,
    /// Instantaneous log-price change against the prior tape print.
    pub r_i: f64,
    /// Sign-folded r_i scaled by the stock's mean absolute r_i.
    pub impact: f64,
    /// Log-price change caused by same-second trades of other investors
    /// (0 when there are none).
    pub r_con: f64,
    /// r_con folded by the SAME sign and scale as `impact`.
    pub impact_con: f64,
    /// Normalized day-time of the transaction.
    pub t: f64,
    /// Trading volume in raw shares.
    pub v: f64,
}

/// Transaction impacts plus bookkeeping about exclusions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionImpacts {
    pub impacts: Vec<TransactionImpact>,
    /// Package transactions with no earlier same-day tape print.
    pub excluded_no_prior: usize,
}

/// A stock's tape for one day: prints grouped per second, in canonical
/// order (the within-second sequence is not observable at one-second
/// resolution, so ties order by investor, side, aggressor, price, volume).
struct DayTape {
    seconds: Vec<u32>,
    /// Prints of each second, aligned with `seconds`.
    prints: Vec<Vec<TapePrint>>,
}

#[derive(Clone, Copy)]
struct TapePrint {
    investor: u64,
    price: f64,
    aggressor: Aggressor,
}

impl DayTape {
    /// Price of the last print strictly before `second`, if any.
    fn price_before(&self, second: u32) -> Option<f64> {
        let idx = self.seconds.partition_point(|&s| s < second);
        idx.checked_sub(1).map(|i| self.prints[i].last().expect("nonempty groups").price)
    }

    /// Last same-second market print of an investor other than `own`.
    fn last_concurrent(&self, second: u32, own: u64) -> Option<f64> {
        let idx = self.seconds.binary_search(&second).ok()?;
        self.prints[idx]
            .iter()
            .rev()
            .find(|p| p.investor != own && p.aggressor == Aggressor::Market)
            .map(|p| p.price)
    }
}

fn build_tapes(records: &[TradeRecord]) -> HashMap<(StockCode, NaiveDate), DayTape> {
    let mut sorted: Vec<&TradeRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        (a.stock, a.time, a.investor, a.side, a.aggressor)
            .cmp(&(b.stock, b.time, b.investor, b.side, b.aggressor))
            .then(a.price.total_cmp(&b.price))
            .then(a.volume.cmp(&b.volume))
    });
    let mut tapes: HashMap<(StockCode, NaiveDate), DayTape> = HashMap::new();
    for r in sorted {
        let tape = tapes
            .entry((r.stock, r.time.date))
            .or_insert_with(|| DayTape { seconds: Vec::new(), prints: Vec::new() });
        let print = TapePrint { investor: r.investor, price: r.price, aggressor: r.aggressor };
        if tape.seconds.last() == Some(&r.time.second) {
            tape.prints.last_mut().unwrap().push(print);
        } else {
            tape.seconds.push(r.time.second);
            tape.prints.push(vec![print]);
        }
    }
    tapes
}

/// Computes r_i, R_i and R_con for every transaction of every
/// within-one-day package.
///
/// `records` is the full merged stream; it supplies the tape. The prior
/// price p(t_−) is the last print strictly before the transaction's second;
/// first-of-day transactions without one are excluded and counted. The
/// concurrent return compares the transaction's price with the last
/// same-second market print of any other investor. ⟨|r_i|⟩ is per stock,
/// pooled over both investor types.
pub fn transaction_impacts(
    records: &[TradeRecord],
    packages: &[TradePackage],
) -> Result<TransactionImpacts, ImpactError> {
    let clock = DayClock::default();
    let tapes = build_tapes(records);

    struct Raw {
        stock: StockCode,
        investor_type: InvestorType,
        sign: i8,
        aggressor: Aggressor,
        r_i: f64,
        r_con: f64,
        t: f64,
        v: f64,
    }

    let mut raws: Vec<Raw> = Vec::new();
    let mut excluded_no_prior = 0usize;
    let mut abs_sum: HashMap<StockCode, (f64, usize)> = HashMap::new();

    for pkg in packages.iter().filter(|p| p.within_one_day) {
        let tape = &tapes[&(pkg.stock, pkg.first.date)];
        for trade in &pkg.trades {
            let Some(prior) = tape.price_before(trade.time.second) else {
                excluded_no_prior += 1;
                continue;
            };
            let r_i = (trade.price / prior).ln();
            let r_con = match tape.last_concurrent(trade.time.second, pkg.investor) {
                Some(p_con) => (p_con / trade.price).ln(),
                None => 0.0,
            };
            let t = clock.normalize(trade.time.second).ok_or(ImpactError::OutsideSession)?;
            let e = abs_sum.entry(pkg.stock).or_insert((0.0, 0));
            e.0 += r_i.abs();
            e.1 += 1;
            raws.push(Raw {
                stock: pkg.stock,
                investor_type: pkg.investor_type,
                sign: trade.side.sign(),
                aggressor: trade.aggressor,
                r_i,
                r_con,
                t,
                v: trade.volume as f64,
            });
        }
    }

    let mean_abs: HashMap<StockCode, f64> =
        abs_sum.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect();

    let impacts = raws
        .into_iter()
        .map(|raw| {
            let norm = mean_abs[&raw.stock];
            if norm == 0.0 {
                return Err(ImpactError::MeanAbsReturnZero(raw.stock));
            }
            let fold = raw.sign as f64 / norm;
            Ok(TransactionImpact {
                stock: raw.stock,
                investor_type: raw.investor_type,
                sign: raw.sign,
                aggressor: raw.aggressor,
                r_i: raw.r_i,
                impact: fold * raw.r_i,
                r_con: raw.r_con,
                impact_con: fold * raw.r_con,
                t: raw.t,
                v: raw.v,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(TransactionImpacts { impacts, excluded_no_prior })
}

/// Conditioning variable for transaction-level impact curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionCondition {
    /// ⟨R_i|t⟩ against normalized day-time.
    DayTime,
    /// ⟨R_i|v⟩ against raw share volume.
    Volume,
}

/// Which impact series of the transactions to aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TransactionSeries {
    /// R_i of market-order transactions.
    MarketImpact,
    /// R_i of limit-order transactions.
    LimitImpact,
    /// R_con of all package transactions.
    Concurrent,
}

/// Equal-count binned mean of a transaction impact series against time of
/// day or share volume.
pub fn conditional_transaction_impact(
    impacts: &[TransactionImpact],
    condition: TransactionCondition,
    series: TransactionSeries,
    n_bins: usize,
) -> Result<BinnedSeries, ImpactError> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for imp in impacts {
        let value = match series {
            TransactionSeries::MarketImpact if imp.aggressor == Aggressor::Market => imp.impact,
            TransactionSeries::LimitImpact if imp.aggressor == Aggressor::Limit => imp.impact,
            TransactionSeries::Concurrent => imp.impact_con,
            _ => continue,
        };
        x.push(match condition {
            TransactionCondition::DayTime => imp.t,
            TransactionCondition::Volume => imp.v,
        });
        y.push(value);
    }
    Ok(binned_conditional_mean(&x, &y, n_bins)?)
}
