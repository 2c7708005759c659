//! Intraday trading profiles of within-one-day packages.
//!
//! Everything here is plotted against normalized day-time t ∈ [0, 1]
//! (09:30 ↦ 0, 15:00 ↦ 1, midday break glued at 0.5): the mean transaction
//! volume ⟨v(t)⟩, the probability distribution of transaction times, the
//! distributions of package start/end times, and the total volume per time
//! bin. Transaction volumes are normalized per stock by the stock's mean
//! transaction volume over *all* its trades, so stocks of different
//! liquidity pool on one axis.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::clock::{DayClock, EventTime};
use crate::detect::TradePackage;
use crate::ingest::{Aggressor, StockCode, TradeRecord};

/// Default bin count: 5-minute bins over the 4-hour trading day.
pub const DEFAULT_PROFILE_BINS: usize = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("n_bins must be ≥ 1")]
    NoBins,
    #[error("timestamp {0:?} outside trading sessions")]
    OutsideSession(EventTime),
    #[error("no transactions selected; distribution undefined")]
    EmptySelection,
}

/// Which transactions of the package population enter a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Package transactions executed by market order.
    MarketOnly,
    /// Package transactions executed by limit order.
    LimitOnly,
    /// Every package transaction.
    All,
    /// Market transactions of *other* investors in the same stock and the
    /// same second as some package transaction, each counted once.
    ConcurrentTrades,
}

/// A per-bin statistic over normalized day-time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Profile {
    /// Bin centers (i + ½)/n_bins.
    pub centers: Vec<f64>,
    /// Per-bin value; `None` marks an empty bin of a mean profile (empty
    /// bins of count distributions carry `Some(0.0)`).
    pub values: Vec<Option<f64>>,
    /// Per-bin transaction count.
    pub counts: Vec<usize>,
}

impl Profile {
    fn empty(n_bins: usize) -> Self {
        Profile {
            centers: (0..n_bins).map(|i| (i as f64 + 0.5) / n_bins as f64).collect(),
            values: vec![None; n_bins],
            counts: vec![0; n_bins],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Total transactions across bins.
    pub fn total_count(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// One transaction chosen by a selector: its normalized time and its
/// stock-normalized volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedTransaction {
    pub stock: StockCode,
    /// Normalized day-time in [0, 1].
    pub t: f64,
    /// Volume over the stock's mean transaction volume.
    pub volume_norm: f64,
}

fn bin_of(t: f64, n_bins: usize) -> usize {
    ((t * n_bins as f64) as usize).min(n_bins - 1)
}

/// Mean transaction volume per stock over every trade in the stream.
pub fn stock_mean_volumes(records: &[TradeRecord]) -> HashMap<StockCode, f64> {
    let mut sums: HashMap<StockCode, (f64, usize)> = HashMap::new();
    for r in records {
        let e = sums.entry(r.stock).or_insert((0.0, 0));
        e.0 += r.volume as f64;
        e.1 += 1;
    }
    sums.into_iter().map(|(s, (v, n))| (s, v / n as f64)).collect()
}

/// Applies a selector to the within-one-day packages of a record stream.
///
/// `records` is the full merged stream (it supplies both the per-stock
/// volume normalization and the candidate concurrent trades); packages
/// spanning several days are skipped. The result is sorted by (stock, time,
/// volume) so downstream aggregation is independent of input order.
pub fn select_transactions(
    records: &[TradeRecord],
    packages: &[TradePackage],
    selector: Selector,
) -> Result<Vec<SelectedTransaction>, ProfileError> {
    let clock = DayClock::default();
    let mean_volume = stock_mean_volumes(records);

    let normalize = |r: &TradeRecord| -> Result<SelectedTransaction, ProfileError> {
        let t = clock.normalize(r.time.second).ok_or(ProfileError::OutsideSession(r.time))?;
        Ok(SelectedTransaction {
            stock: r.stock,
            t,
            volume_norm: r.volume as f64 / mean_volume[&r.stock],
        })
    };

    let mut selected = Vec::new();
    match selector {
        Selector::MarketOnly | Selector::LimitOnly | Selector::All => {
            let keep = |a: Aggressor| match selector {
                Selector::MarketOnly => a == Aggressor::Market,
                Selector::LimitOnly => a == Aggressor::Limit,
                _ => true,
            };
            for pkg in packages.iter().filter(|p| p.within_one_day) {
                for trade in pkg.trades.iter().filter(|t| keep(t.aggressor)) {
                    selected.push(normalize(trade)?);
                }
            }
        }
        Selector::ConcurrentTrades => {
            // index market trades of the whole stream by (stock, second)
            let mut by_second: HashMap<(StockCode, EventTime), Vec<usize>> = HashMap::new();
            for (i, r) in records.iter().enumerate() {
                if r.aggressor == Aggressor::Market {
                    by_second.entry((r.stock, r.time)).or_default().push(i);
                }
            }
            let mut chosen: HashSet<usize> = HashSet::new();
            for pkg in packages.iter().filter(|p| p.within_one_day) {
                for trade in &pkg.trades {
                    let Some(candidates) = by_second.get(&(pkg.stock, trade.time)) else {
                        continue;
                    };
                    for &i in candidates {
                        if records[i].investor != pkg.investor {
                            chosen.insert(i);
                        }
                    }
                }
            }
            for i in chosen {
                selected.push(normalize(&records[i])?);
            }
        }
    }
    selected.sort_by(|a, b| {
        a.stock
            .cmp(&b.stock)
            .then(a.t.total_cmp(&b.t))
            .then(a.volume_norm.total_cmp(&b.volume_norm))
    });
    Ok(selected)
}

/// Mean normalized transaction volume ⟨v(t)⟩ per time bin. Empty bins are
/// `None`.
pub fn mean_volume_profile(
    records: &[TradeRecord],
    packages: &[TradePackage],
    selector: Selector,
    n_bins: usize,
) -> Result<Profile, ProfileError> {
    if n_bins == 0 {
        return Err(ProfileError::NoBins);
    }
    let selected = select_transactions(records, packages, selector)?;
    let mut profile = Profile::empty(n_bins);
    let mut sums = vec![0.0; n_bins];
    for s in &selected {
        let b = bin_of(s.t, n_bins);
        sums[b] += s.volume_norm;
        profile.counts[b] += 1;
    }
    for (b, &sum) in sums.iter().enumerate() {
        if profile.counts[b] > 0 {
            profile.values[b] = Some(sum / profile.counts[b] as f64);
        }
    }
    Ok(profile)
}

/// Total normalized volume Σv(t) per time bin (zero for empty bins); equals
/// the mean profile times the bin count, bin by bin.
pub fn total_volume_profile(
    records: &[TradeRecord],
    packages: &[TradePackage],
    selector: Selector,
    n_bins: usize,
) -> Result<Profile, ProfileError> {
    if n_bins == 0 {
        return Err(ProfileError::NoBins);
    }
    let selected = select_transactions(records, packages, selector)?;
    let mut profile = Profile::empty(n_bins);
    let mut sums = vec![0.0; n_bins];
    for s in &selected {
        let b = bin_of(s.t, n_bins);
        sums[b] += s.volume_norm;
        profile.counts[b] += 1;
    }
    profile.values = sums.into_iter().map(Some).collect();
    Ok(profile)
}

fn pdf_from_times(times: &[f64], n_bins: usize) -> Result<Profile, ProfileError> {
    if n_bins == 0 {
        return Err(ProfileError::NoBins);
    }
    if times.is_empty() {
        return Err(ProfileError::EmptySelection);
    }
    let mut profile = Profile::empty(n_bins);
    for &t in times {
        profile.counts[bin_of(t, n_bins)] += 1;
    }
    let total = times.len() as f64;
    profile.values = profile.counts.iter().map(|&c| Some(c as f64 / total)).collect();
    Ok(profile)
}

/// Probability distribution of transaction times: bin counts over the total.
pub fn transaction_time_pdf(
    records: &[TradeRecord],
    packages: &[TradePackage],
    selector: Selector,
    n_bins: usize,
) -> Result<Profile, ProfileError> {
    let selected = select_transactions(records, packages, selector)?;
    pdf_from_times(&selected.iter().map(|s| s.t).collect::<Vec<_>>(), n_bins)
}

/// Distributions of package start times t_ini and end times t_fin, over
/// within-one-day packages.
pub fn endpoint_time_pdfs(
    packages: &[TradePackage],
    n_bins: usize,
) -> Result<(Profile, Profile), ProfileError> {
    let one_day: Vec<&TradePackage> = packages.iter().filter(|p| p.within_one_day).collect();
    let ini: Vec<f64> = one_day.iter().map(|p| p.t_ini).collect();
    let fin: Vec<f64> = one_day.iter().map(|p| p.t_fin).collect();
    Ok((pdf_from_times(&ini, n_bins)?, pdf_from_times(&fin, n_bins)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{AFTERNOON_CLOSE, AFTERNOON_OPEN, MORNING_OPEN};
    use crate::detect::{detect_packages, DetectorConfig};
    use crate::ingest::{InvestorType, Side};
    use chrono::NaiveDate;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn trade(
        stock: &str,
        investor: u64,
        sec: u32,
        side: Side,
        aggr: Aggressor,
        vol: u64,
    ) -> TradeRecord {
        TradeRecord {
            stock: stock.parse().unwrap(),
            investor,
            investor_type: InvestorType::Institution,
            time: EventTime::new(d("2003-01-06"), sec),
            side,
            aggressor: aggr,
            price: 10.0,
            volume: vol,
        }
    }

    /// A 7-market-buy package for `investor` with volumes `vols` at
    /// consecutive minutes from `start_sec`.
    fn package_trades(stock: &str, investor: u64, start_sec: u32, vols: &[u64]) -> Vec<TradeRecord> {
        vols.iter()
            .enumerate()
            .map(|(i, &v)| trade(stock, investor, start_sec + 60 * i as u32, Side::Buy, Aggressor::Market, v))
            .collect()
    }

    fn detected(records: &[TradeRecord]) -> Vec<TradePackage> {
        detect_packages(records, &DetectorConfig::default()).unwrap().packages
    }

    #[test]
    fn equal_volumes_give_a_flat_profile_at_one() {
        let records = package_trades("000001", 1, MORNING_OPEN, &[500; 12]);
        let packages = detected(&records);
        assert_eq!(packages.len(), 1);
        let profile =
            mean_volume_profile(&records, &packages, Selector::All, DEFAULT_PROFILE_BINS).unwrap();
        for (value, count) in profile.values.iter().zip(&profile.counts) {
            match value {
                Some(v) => assert!((v - 1.0).abs() < 1e-12),
                None => assert_eq!(*count, 0),
            }
        }
        assert_eq!(profile.total_count(), 12);
    }

    #[test]
    fn market_and_limit_profiles_average_to_the_all_profile() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut records = Vec::new();
        for investor in 1..=20 {
            let start = MORNING_OPEN + rng.gen_range(0..6000);
            let mut trades = package_trades(
                "000001",
                investor,
                start,
                &(0..12).map(|_| rng.gen_range(100..5000)).collect::<Vec<_>>(),
            );
            // flip some members to limit orders (keeps > 5 market trades)
            for t in trades.iter_mut().take(4) {
                t.aggressor = Aggressor::Limit;
            }
            records.extend(trades);
        }
        let packages = detected(&records);
        assert_eq!(packages.len(), 20);

        let n_bins = 24;
        let market =
            mean_volume_profile(&records, &packages, Selector::MarketOnly, n_bins).unwrap();
        let limit = mean_volume_profile(&records, &packages, Selector::LimitOnly, n_bins).unwrap();
        let all = mean_volume_profile(&records, &packages, Selector::All, n_bins).unwrap();
        for b in 0..n_bins {
            let (cm, cl) = (market.counts[b] as f64, limit.counts[b] as f64);
            assert_eq!(market.counts[b] + limit.counts[b], all.counts[b]);
            if all.counts[b] == 0 {
                continue;
            }
            let weighted = (market.values[b].unwrap_or(0.0) * cm
                + limit.values[b].unwrap_or(0.0) * cl)
                / (cm + cl);
            assert!((weighted - all.values[b].unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn total_equals_mean_times_count_per_bin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut records = Vec::new();
        for investor in 1..=10 {
            records.extend(package_trades(
                "000002",
                investor,
                MORNING_OPEN + rng.gen_range(0..6700), // 8 trades span 420 s
                &(0..8).map(|_| rng.gen_range(100..5000)).collect::<Vec<_>>(),
            ));
        }
        let packages = detected(&records);
        let mean =
            mean_volume_profile(&records, &packages, Selector::All, DEFAULT_PROFILE_BINS).unwrap();
        let total =
            total_volume_profile(&records, &packages, Selector::All, DEFAULT_PROFILE_BINS).unwrap();
        for b in 0..DEFAULT_PROFILE_BINS {
            let expected = mean.values[b].unwrap_or(0.0) * mean.counts[b] as f64;
            assert!((total.values[b].unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn transaction_time_pdf_sums_to_one_and_localizes() {
        // a single transaction lands in exactly one bin with mass 1:
        // build a minimal package, then query the pdf of its market trades
        let records = package_trades("000001", 1, MORNING_OPEN + 1800, &[100; 6]);
        let packages = detected(&records);
        let pdf = transaction_time_pdf(&records, &packages, Selector::All, 4).unwrap();
        let sum: f64 = pdf.values.iter().map(|v| v.unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // 6 trades within 5 minutes starting 10:00 → all in the first
        // quarter of the day
        assert_eq!(pdf.counts[0], 6);
        assert!((pdf.values[0].unwrap() - 1.0).abs() < 1e-12);

        // uniform times → roughly uniform mass with binomial error bars;
        // each package's six trades get independent uniform trading seconds
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut records = Vec::new();
        for investor in 1..=400u64 {
            for _ in 0..6 {
                let u = rng.gen_range(0..14_400);
                let sec =
                    if u < 7_200 { MORNING_OPEN + u } else { AFTERNOON_OPEN + (u - 7_200) };
                records.push(trade("000001", investor, sec, Side::Buy, Aggressor::Market, 100));
            }
        }
        let packages = detected(&records);
        assert_eq!(packages.len(), 400);
        let n_bins = 8;
        let pdf = transaction_time_pdf(&records, &packages, Selector::All, n_bins).unwrap();
        let total = pdf.total_count() as f64;
        let p = 1.0 / n_bins as f64;
        let sigma = (p * (1.0 - p) / total).sqrt();
        for v in &pdf.values {
            assert!(
                (v.unwrap() - p).abs() < 4.0 * sigma,
                "bin mass {} vs uniform {p} (σ={sigma})",
                v.unwrap()
            );
        }
    }

    #[test]
    fn endpoint_pdfs_find_package_boundaries() {
        // packages spanning open→close: starts pile in bin 0, ends in last
        let mut records = Vec::new();
        for investor in 1..=5 {
            let mut trades = package_trades("000001", investor, MORNING_OPEN, &[100; 6]);
            trades.push(trade("000001", investor, AFTERNOON_CLOSE, Side::Buy, Aggressor::Market, 100));
            records.extend(trades);
        }
        let packages = detected(&records);
        let (ini, fin) = endpoint_time_pdfs(&packages, 10).unwrap();
        assert!((ini.values[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((fin.values[9].unwrap() - 1.0).abs() < 1e-12);
        let s: f64 = ini.values.iter().map(|v| v.unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);

        // afternoon-start packages: the t_ini mode sits just above 0.5
        let mut records = Vec::new();
        for investor in 1..=50 {
            records.extend(package_trades("000001", investor, AFTERNOON_OPEN + 60, &[100; 6]));
        }
        let packages = detected(&records);
        let (ini, _) = endpoint_time_pdfs(&packages, 10).unwrap();
        assert!((ini.values[5].unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn concurrent_selector_takes_other_investors_same_second_market_trades() {
        let mut records = package_trades("000001", 1, MORNING_OPEN + 600, &[100; 6]);
        // same second as package trade 0, other investor, market → selected
        records.push(trade("000001", 99, MORNING_OPEN + 600, Side::Sell, Aggressor::Market, 777));
        // same second, other investor, LIMIT → not selected
        records.push(trade("000001", 98, MORNING_OPEN + 600, Side::Sell, Aggressor::Limit, 500));
        // different second → not selected
        records.push(trade("000001", 97, MORNING_OPEN + 601, Side::Sell, Aggressor::Market, 500));
        // same second but the package's own investor → not selected
        records.push(trade("000001", 1, MORNING_OPEN + 660, Side::Buy, Aggressor::Market, 100));

        let packages = detected(&records);
        assert_eq!(packages.len(), 1);
        let selected =
            select_transactions(&records, &packages, Selector::ConcurrentTrades).unwrap();
        assert_eq!(selected.len(), 1);
        let mean_vol = stock_mean_volumes(&records)[&"000001".parse().unwrap()];
        assert!((selected[0].volume_norm - 777.0 / mean_vol).abs() < 1e-12);
    }

    #[test]
    fn concurrent_trades_are_counted_once_across_packages() {
        // two packages share a second; one noise print in that second
        let mut records = package_trades("000001", 1, MORNING_OPEN + 600, &[100; 6]);
        records.extend(package_trades("000001", 2, MORNING_OPEN + 600, &[100; 6]));
        records.push(trade("000001", 99, MORNING_OPEN + 600, Side::Sell, Aggressor::Market, 999));
        let packages = detected(&records);
        assert_eq!(packages.len(), 2);
        let selected =
            select_transactions(&records, &packages, Selector::ConcurrentTrades).unwrap();
        // the noise print once (not once per matching package), plus each
        // package's 6 trades are concurrent with the other package's
        assert_eq!(selected.len(), 13);
    }

    #[test]
    fn profiles_ignore_input_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut records = Vec::new();
        for investor in 1..=30 {
            records.extend(package_trades(
                "000003",
                investor,
                MORNING_OPEN + rng.gen_range(0..6600), // 9 trades span 480 s
                &(0..9).map(|_| rng.gen_range(100..3000)).collect::<Vec<_>>(),
            ));
        }
        let packages = detected(&records);
        let before =
            mean_volume_profile(&records, &packages, Selector::All, DEFAULT_PROFILE_BINS).unwrap();

        let mut shuffled_records = records.clone();
        shuffled_records.shuffle(&mut rng);
        let mut shuffled_packages = packages.clone();
        shuffled_packages.shuffle(&mut rng);
        let after = mean_volume_profile(
            &shuffled_records,
            &shuffled_packages,
            Selector::All,
            DEFAULT_PROFILE_BINS,
        )
        .unwrap();
        assert_eq!(before, after);
    }
}
