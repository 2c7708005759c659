//! Trade-package detection.
//!
//! A trade package is a run of transactions by one investor in one stock
//! that behaves like a single large order worked over time. Detection has
//! two steps:
//!
//! 1. **Segmentation** — an investor's trades in a stock are split wherever
//!    consecutive trades are separated by at least `break_days` trading days
//!    (gaps measured on the dataset's own calendar, so closed days don't
//!    count).
//! 2. **Classification** — a segment qualifies as a package only if
//!    (a) its buy or sell share volume exceeds the fraction `theta` of the
//!    segment's total volume (strictly), and (b) it contains strictly more
//!    than `min_market_trades` market-order trades.
//!
//! Rejected segments are reported with the rule they failed, which the
//! synthetic-market tests use to audit precision.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{elapsed_trading_seconds, DayClock, EventTime, TradingCalendar};
use crate::ingest::{Aggressor, InvestorId, InvestorType, Side, StockCode, TradeRecord};

/// Detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Segment break length in trading days (≥ 1). A gap of at least this
    /// many trading days starts a new segment; 1 keeps packages within a
    /// single day.
    pub break_days: u32,
    /// Dominant-side volume fraction threshold, strict, in (0.5, 1].
    pub theta: f64,
    /// A package needs strictly more market-order trades than this.
    pub min_market_trades: u32,
    /// Keep only packages whose first and last trade share a date.
    pub one_day_only: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { break_days: 1, theta: 0.75, min_market_trades: 5, one_day_only: false }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("break_days must be ≥ 1, got {0}")]
    BadBreakDays(u32),
    #[error("theta must lie in (0.5, 1], got {0}")]
    BadTheta(f64),
    #[error("timestamp {0:?} outside trading sessions")]
    OutsideSession(EventTime),
    #[error("no packages in population")]
    EmptyPopulation,
}

/// Why a segment is not a package.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Neither side's volume fraction exceeds theta.
    ThetaFail,
    /// Not strictly more than `min_market_trades` market-order trades.
    TooFewMarketOrders,
}

/// A rejected segment, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub stock: StockCode,
    pub investor: InvestorId,
    pub reason: RejectReason,
    pub n_trades: usize,
}

/// A detected trade package.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradePackage {
    pub stock: StockCode,
    pub investor: InvestorId,
    pub investor_type: InvestorType,
    /// +1 for buy packages, −1 for sell packages.
    pub sign: i8,
    /// The member transactions, in time order.
    pub trades: Vec<TradeRecord>,
    /// Execution time T: trading-clock seconds between first and last trade
    /// (closed hours and the midday break excluded).
    pub t_secs: f64,
    /// Trade count N (market and limit orders alike).
    pub n_trades: usize,
    /// Market-order trade count.
    pub n_market: usize,
    /// Total share volume V.
    pub volume: u64,
    /// Market-order share of the volume, F_m ∈ [0, 1].
    pub f_m: f64,
    /// Normalized day-time of the first trade.
    pub t_ini: f64,
    /// Normalized day-time of the last trade.
    pub t_fin: f64,
    /// True when first and last trade share a date.
    pub within_one_day: bool,
    pub first: EventTime,
    pub last: EventTime,
}

impl TradePackage {
    /// Price of the first member transaction.
    pub fn first_price(&self) -> f64 {
        self.trades.first().expect("packages are non-empty").price
    }

    /// Price of the last member transaction.
    pub fn last_price(&self) -> f64 {
        self.trades.last().expect("packages are non-empty").price
    }
}

fn validate_config(config: &DetectorConfig) -> Result<(), DetectError> {
    if config.break_days < 1 {
        return Err(DetectError::BadBreakDays(config.break_days));
    }
    if !(config.theta > 0.5 && config.theta <= 1.0) {
        return Err(DetectError::BadTheta(config.theta));
    }
    Ok(())
}

/// Splits one investor's time-ordered trades in one stock into segments:
/// consecutive trades stay together while their trading-day gap is smaller
/// than `break_days`. Returns index ranges into `trades`.
pub fn segment_investor_trades(
    trades: &[TradeRecord],
    break_days: u32,
    calendar: &TradingCalendar,
) -> Vec<std::ops::Range<usize>> {
    let mut segments = Vec::new();
    if trades.is_empty() {
        return segments;
    }
    let mut start = 0;
    for i in 1..trades.len() {
        let gap = calendar
            .gap(trades[i - 1].time.date, trades[i].time.date)
            .expect("trade dates come from the calendar they built");
        if gap >= break_days as usize {
            segments.push(start..i);
            start = i;
        }
    }
    segments.push(start..trades.len());
    segments
}

/// Applies the volume-dominance and market-order-count rules to one segment
/// and assembles the package variables.
pub fn classify_package(
    segment: &[TradeRecord],
    config: &DetectorConfig,
    clock: &DayClock,
    calendar: &TradingCalendar,
) -> Result<Result<TradePackage, RejectReason>, DetectError> {
    validate_config(config)?;
    assert!(!segment.is_empty(), "segments hold at least one trade");

    let total_volume: u64 = segment.iter().map(|t| t.volume).sum();
    let buy_volume: u64 =
        segment.iter().filter(|t| t.side == Side::Buy).map(|t| t.volume).sum();
    let buy_frac = buy_volume as f64 / total_volume as f64;
    let sell_frac = 1.0 - buy_frac;

    let sign = if buy_frac > config.theta {
        1i8
    } else if sell_frac > config.theta {
        -1i8
    } else {
        return Ok(Err(RejectReason::ThetaFail));
    };

    let n_market = segment.iter().filter(|t| t.aggressor == Aggressor::Market).count();
    if n_market <= config.min_market_trades as usize {
        return Ok(Err(RejectReason::TooFewMarketOrders));
    }

    let first = segment.first().unwrap().time;
    let last = segment.last().unwrap().time;
    let t_ini = clock.normalize(first.second).ok_or(DetectError::OutsideSession(first))?;
    let t_fin = clock.normalize(last.second).ok_or(DetectError::OutsideSession(last))?;
    let t_secs = elapsed_trading_seconds(clock, calendar, first, last)
        .ok_or(DetectError::OutsideSession(first))?;
    let market_volume: u64 =
        segment.iter().filter(|t| t.aggressor == Aggressor::Market).map(|t| t.volume).sum();

    Ok(Ok(TradePackage {
        stock: segment[0].stock,
        investor: segment[0].investor,
        investor_type: segment[0].investor_type,
        sign,
        trades: segment.to_vec(),
        t_secs,
        n_trades: segment.len(),
        n_market,
        volume: total_volume,
        f_m: market_volume as f64 / total_volume as f64,
        t_ini,
        t_fin,
        within_one_day: first.date == last.date,
        first,
        last,
    }))
}

/// Everything detection produces: accepted packages in deterministic
/// (stock, investor, start-time) order plus the rejected segments.
#[derive(Debug, Clone, Default)]
pub struct DetectionResult {
    pub packages: Vec<TradePackage>,
    pub rejections: Vec<Rejection>,
    /// The calendar the gaps were measured on.
    pub calendar: TradingCalendar,
}

/// Runs segmentation and classification over every (investor, stock) pair in
/// a merged record stream.
pub fn detect_packages(
    records: &[TradeRecord],
    config: &DetectorConfig,
) -> Result<DetectionResult, DetectError> {
    validate_config(config)?;
    let clock = DayClock::default();
    let calendar = TradingCalendar::from_dates(records.iter().map(|r| r.time.date));

    let mut by_pair: HashMap<(StockCode, InvestorId), Vec<TradeRecord>> = HashMap::new();
    for r in records {
        by_pair.entry((r.stock, r.investor)).or_default().push(r.clone());
    }
    let mut pairs: Vec<((StockCode, InvestorId), Vec<TradeRecord>)> = by_pair.into_iter().collect();
    pairs.sort_by_key(|((s, i), _)| (*s, *i));

    let per_pair: Vec<(Vec<TradePackage>, Vec<Rejection>)> = pairs
        .par_iter()
        .map(|((stock, investor), trades)| {
            let mut trades = trades.clone();
            trades.sort_by_key(|t| t.time);
            let mut packages = Vec::new();
            let mut rejections = Vec::new();
            for range in segment_investor_trades(&trades, config.break_days, &calendar) {
                let segment = &trades[range];
                match classify_package(segment, config, &clock, &calendar)? {
                    Ok(pkg) => {
                        if !config.one_day_only || pkg.within_one_day {
                            packages.push(pkg);
                        }
                    }
                    Err(reason) => rejections.push(Rejection {
                        stock: *stock,
                        investor: *investor,
                        reason,
                        n_trades: segment.len(),
                    }),
                }
            }
            Ok((packages, rejections))
        })
        .collect::<Result<_, DetectError>>()?;

    let mut result = DetectionResult { calendar, ..Default::default() };
    for (packages, rejections) in per_pair {
        result.packages.extend(packages);
        result.rejections.extend(rejections);
    }
    result.packages.sort_by(|a, b| {
        (a.stock, a.investor, a.first).cmp(&(b.stock, b.investor, b.first))
    });
    Ok(result)
}

/// Population means of the package variables for one investor type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PackagePopulation {
    pub n_packages: usize,
    pub mean_t_secs: f64,
    pub mean_n_trades: f64,
    pub mean_volume: f64,
}

/// Package-population statistics split by investor type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PackageStats {
    pub institutions: PackagePopulation,
    pub individuals: PackagePopulation,
}

fn population<'a>(packages: impl Iterator<Item = &'a TradePackage>) -> PackagePopulation {
    let mut n = 0usize;
    let (mut t, mut nt, mut v) = (0.0, 0.0, 0.0);
    for p in packages {
        n += 1;
        t += p.t_secs;
        nt += p.n_trades as f64;
        v += p.volume as f64;
    }
    let d = n.max(1) as f64;
    PackagePopulation {
        n_packages: n,
        mean_t_secs: t / d,
        mean_n_trades: nt / d,
        mean_volume: v / d,
    }
}

/// Per-investor-type counts and means; errors when no packages exist at all.
pub fn package_stats(packages: &[TradePackage]) -> Result<PackageStats, DetectError> {
    if packages.is_empty() {
        return Err(DetectError::EmptyPopulation);
    }
    Ok(PackageStats {
        institutions: population(
            packages.iter().filter(|p| p.investor_type == InvestorType::Institution),
        ),
        individuals: population(
            packages.iter().filter(|p| p.investor_type == InvestorType::Individual),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn trade(
        investor: u64,
        date: &str,
        sec: u32,
        side: Side,
        aggr: Aggressor,
        vol: u64,
    ) -> TradeRecord {
        TradeRecord {
            stock: "000001".parse().unwrap(),
            investor,
            investor_type: if investor < 100 {
                InvestorType::Institution
            } else {
                InvestorType::Individual
            },
            time: EventTime::new(d(date), sec),
            side,
            aggressor: aggr,
            price: 10.0,
            volume: vol,
        }
    }

    /// n market buys spaced 60 s apart starting at 10:00:00.
    fn market_buys(investor: u64, date: &str, n: usize) -> Vec<TradeRecord> {
        (0..n)
            .map(|i| trade(investor, date, 36_000 + 60 * i as u32, Side::Buy, Aggressor::Market, 100))
            .collect()
    }

    #[test]
    fn segments_split_on_trading_day_gaps() {
        // trading days 1,2,3,10 of the calendar; break of 5 days
        let mut trades = Vec::new();
        for date in ["2003-01-06", "2003-01-07", "2003-01-08", "2003-01-17"] {
            trades.push(trade(1, date, 36_000, Side::Buy, Aggressor::Market, 100));
        }
        let calendar = TradingCalendar::from_dates(
            ["2003-01-06", "2003-01-07", "2003-01-08", "2003-01-09", "2003-01-10", "2003-01-13", "2003-01-14", "2003-01-15", "2003-01-16", "2003-01-17"]
                .map(d),
        );
        let segments = segment_investor_trades(&trades, 5, &calendar);
        assert_eq!(segments, vec![0..3, 3..4]);
        // with a 1-day break every date change splits
        let segments = segment_investor_trades(&trades, 1, &calendar);
        assert_eq!(segments.len(), 4);
    }

    #[test]
    fn theta_rule_is_strict_on_the_dominant_side() {
        let config = DetectorConfig::default();
        let clock = DayClock::default();
        let mut seg = market_buys(1, "2003-01-06", 6);
        // add a sell making the buy fraction exactly 0.75: rejected
        seg.push(trade(1, "2003-01-06", 36_500, Side::Sell, Aggressor::Market, 200));
        let calendar = TradingCalendar::from_dates(seg.iter().map(|t| t.time.date));
        assert_eq!(
            classify_package(&seg, &config, &clock, &calendar).unwrap(),
            Err(RejectReason::ThetaFail)
        );
        // shrink the sell: buy fraction rises above 0.75 and it passes
        seg.last_mut().unwrap().volume = 199;
        let pkg = classify_package(&seg, &config, &clock, &calendar).unwrap().unwrap();
        assert_eq!(pkg.sign, 1);
        assert_eq!(pkg.n_trades, 7);
    }

    #[test]
    fn market_order_count_is_strict() {
        let config = DetectorConfig::default();
        let clock = DayClock::default();
        // exactly 5 market orders: rejected even though all-buy
        let mut seg = market_buys(1, "2003-01-06", 5);
        seg.push(trade(1, "2003-01-06", 36_400, Side::Buy, Aggressor::Limit, 100));
        let calendar = TradingCalendar::from_dates(seg.iter().map(|t| t.time.date));
        assert_eq!(
            classify_package(&seg, &config, &clock, &calendar).unwrap(),
            Err(RejectReason::TooFewMarketOrders)
        );
        // a sixth market order passes
        let seg = market_buys(1, "2003-01-06", 6);
        let pkg = classify_package(&seg, &config, &clock, &calendar).unwrap().unwrap();
        assert_eq!(pkg.n_market, 6);
    }

    #[test]
    fn package_variables_are_assembled() {
        let clock = DayClock::default();
        let mut seg = market_buys(1, "2003-01-06", 7);
        seg.push(trade(1, "2003-01-06", 37_000, Side::Buy, Aggressor::Limit, 300));
        let calendar = TradingCalendar::from_dates(seg.iter().map(|t| t.time.date));
        let pkg = classify_package(&seg, &DetectorConfig::default(), &clock, &calendar)
            .unwrap()
            .unwrap();
        assert_eq!(pkg.n_trades, 8);
        assert_eq!(pkg.volume, 1_000);
        assert!((pkg.f_m - 0.7).abs() < 1e-12);
        assert_eq!(pkg.t_secs, 1_000.0); // 10:00:00 → 10:16:40
        assert!(pkg.within_one_day);
        assert!((pkg.t_ini - 1_800.0 / 14_400.0).abs() < 1e-12);
        assert!((pkg.t_fin - 2_800.0 / 14_400.0).abs() < 1e-12);
    }

    #[test]
    fn multi_day_execution_time_skips_closed_hours() {
        let clock = DayClock::default();
        let seg = vec![
            // last hour of day one afternoon
            trade(1, "2003-01-06", 14 * 3600, Side::Buy, Aggressor::Market, 100),
            trade(1, "2003-01-06", 14 * 3600 + 600, Side::Buy, Aggressor::Market, 100),
            trade(1, "2003-01-07", 10 * 3600, Side::Buy, Aggressor::Market, 100),
            trade(1, "2003-01-07", 10 * 3600 + 60, Side::Buy, Aggressor::Market, 100),
            trade(1, "2003-01-07", 10 * 3600 + 120, Side::Buy, Aggressor::Market, 100),
            trade(1, "2003-01-07", 10 * 3600 + 180, Side::Buy, Aggressor::Market, 100),
        ];
        let calendar = TradingCalendar::from_dates(seg.iter().map(|t| t.time.date));
        let pkg = classify_package(
            &seg,
            &DetectorConfig { break_days: 5, ..Default::default() },
            &clock,
            &calendar,
        )
        .unwrap()
        .unwrap();
        // 14:00 → close is 3600 s, open → 10:03 is 1980 s
        assert_eq!(pkg.t_secs, 3_600.0 + 1_980.0);
        assert!(!pkg.within_one_day);
    }

    #[test]
    fn detection_is_per_investor_and_ordered() {
        let mut records = Vec::new();
        records.extend(market_buys(2, "2003-01-06", 7));
        records.extend(market_buys(1, "2003-01-06", 7));
        records.extend(market_buys(200, "2003-01-07", 7));
        let result = detect_packages(&records, &DetectorConfig::default()).unwrap();
        assert_eq!(result.packages.len(), 3);
        let order: Vec<u64> = result.packages.iter().map(|p| p.investor).collect();
        assert_eq!(order, vec![1, 2, 200]);
        assert!(result.rejections.is_empty());
    }

    #[test]
    fn one_day_only_filters_spanning_packages() {
        let mut records = market_buys(1, "2003-01-06", 7);
        records.extend(market_buys(1, "2003-01-07", 7));
        // with a 5-day break this is one two-day package
        let config = DetectorConfig { break_days: 5, ..Default::default() };
        let all = detect_packages(&records, &config).unwrap();
        assert_eq!(all.packages.len(), 1);
        assert!(!all.packages[0].within_one_day);
        let one_day =
            detect_packages(&records, &DetectorConfig { one_day_only: true, ..config }).unwrap();
        assert!(one_day.packages.is_empty());
    }

    #[test]
    fn stats_split_by_investor_type() {
        let mut records = market_buys(1, "2003-01-06", 7); // institution
        records.extend(market_buys(200, "2003-01-06", 9)); // individual
        let result = detect_packages(&records, &DetectorConfig::default()).unwrap();
        let stats = package_stats(&result.packages).unwrap();
        assert_eq!(stats.institutions.n_packages, 1);
        assert_eq!(stats.individuals.n_packages, 1);
        assert!((stats.institutions.mean_n_trades - 7.0).abs() < 1e-12);
        assert!((stats.individuals.mean_n_trades - 9.0).abs() < 1e-12);
        assert!(package_stats(&[]).is_err());
    }

    #[test]
    fn config_validation() {
        let records = market_buys(1, "2003-01-06", 7);
        assert!(matches!(
            detect_packages(&records, &DetectorConfig { break_days: 0, ..Default::default() }),
            Err(DetectError::BadBreakDays(0))
        ));
        assert!(matches!(
            detect_packages(&records, &DetectorConfig { theta: 0.5, ..Default::default() }),
            Err(DetectError::BadTheta(_))
        ));
        assert!(detect_packages(
            &records,
            &DetectorConfig { theta: 1.0, ..Default::default() }
        )
        .is_ok());
    }

    proptest! {
        /// Raising theta or the market-order floor can only shrink the
        /// accepted set (segmentation is unchanged), and a longer break
        /// produces coarser segments — each one a union of consecutive
        /// short-break segments. Package counts are *not* monotone in the
        /// break length (merging two failing segments can create a passing
        /// one), so the break-length claim is about segments.
        #[test]
        fn detection_is_monotone_in_thresholds(
            seed_volumes in proptest::collection::vec(1u64..2000, 30),
            buys in proptest::collection::vec(proptest::bool::ANY, 30),
            markets in proptest::collection::vec(proptest::bool::ANY, 30),
            day_picks in proptest::collection::vec(0usize..4, 30),
        ) {
            let dates = ["2003-01-06", "2003-01-07", "2003-01-13", "2003-01-20"];
            let mut records: Vec<TradeRecord> = (0..30)
                .map(|i| {
                    trade(
                        1 + (i % 3) as u64,
                        dates[day_picks[i]],
                        36_000 + 30 * i as u32,
                        if buys[i] { Side::Buy } else { Side::Sell },
                        if markets[i] { Aggressor::Market } else { Aggressor::Limit },
                        seed_volumes[i],
                    )
                })
                .collect();
            records.sort_by_key(|r| r.time);

            let base = DetectorConfig { break_days: 1, theta: 0.6, min_market_trades: 2, ..Default::default() };
            let count = |cfg: &DetectorConfig| {
                detect_packages(&records, cfg).unwrap().packages.len()
            };
            let n_base = count(&base);
            let n_tight_theta = count(&DetectorConfig { theta: 0.8, ..base });
            let n_more_markets = count(&DetectorConfig { min_market_trades: 5, ..base });
            prop_assert!(n_tight_theta <= n_base);
            prop_assert!(n_more_markets <= n_base);

            // coarser breaks merge segments: boundaries of the 10-day
            // segmentation are a subset of the 1-day boundaries
            let calendar = TradingCalendar::from_dates(records.iter().map(|r| r.time.date));
            let mut per_investor: HashMap<u64, Vec<TradeRecord>> = HashMap::new();
            for r in &records {
                per_investor.entry(r.investor).or_default().push(r.clone());
            }
            for trades in per_investor.values() {
                let fine = segment_investor_trades(trades, 1, &calendar);
                let coarse = segment_investor_trades(trades, 10, &calendar);
                prop_assert!(coarse.len() <= fine.len());
                let fine_starts: Vec<usize> = fine.iter().map(|r| r.start).collect();
                for seg in &coarse {
                    prop_assert!(fine_starts.contains(&seg.start));
                }
            }
        }
    }
}
