//! Temporary-impact regressions on a per-second return grid.
//!
//! Each stock's trading day becomes an array of 14 400 one-second slots.
//! A slot's return is the log change of the last trade price against the
//! previous priced slot *within the same session* — session starts reset
//! the fill, so neither overnight nor midday-break price jumps leak into
//! any return. Returns are normalized by the stock's return standard
//! deviation over priced (nonzero-return) seconds. A second channel carries
//! the signed log volume s·ln v of package transactions, zero elsewhere.
//!
//! Two models run on the grid: per-lag regressions of the return at t+i on
//! the signed log volume at t (how a package transaction moves prices i
//! seconds later), and a joint model with autoregressive return lags plus
//! lagged volume terms. Observations whose lags would straddle the midday
//! break or a day boundary are dropped.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::clock::DayClock;
use crate::detect::TradePackage;
use crate::ingest::{Aggressor, StockCode, TradeRecord};
use crate::stats::{self, OlsFit, StatsError};

/// Lags (seconds) of the per-lag volume-impact regressions.
pub const VOLUME_LAGS: [usize; 6] = [0, 5, 10, 15, 20, 25];
/// Return lags (seconds) of the autoregressive terms.
pub const AR_LAGS: [usize; 5] = [5, 10, 15, 20, 25];
/// Minimum observations a regression needs.
pub const MIN_OBSERVATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressError {
    #[error("stock {0} has no trades")]
    NoDays(StockCode),
    #[error("stock {0} has fewer than two priced returns; normalization undefined")]
    NoPriceVariation(StockCode),
    #[error("{got} observations; need at least {need}")]
    TooFewObservations { got: usize, need: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

// ===== the grid =====

/// Per-second return and signed-log-volume arrays for one stock.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondGrid {
    pub stock: StockCode,
    /// Days carried by the grid, in order; slot `d·14400 + g` is grid
    /// second `g` of `days[d]`.
    pub days: Vec<NaiveDate>,
    /// Dataset dates on which this stock did not trade (skipped).
    pub skipped_days: Vec<NaiveDate>,
    /// Normalized returns, `days.len() × 14400` slots.
    pub returns: Vec<f64>,
    /// Σ s·ln v over package transactions in each slot, 0 elsewhere.
    pub signed_log_volume: Vec<f64>,
    /// Marks slots carrying at least one package transaction.
    pub has_txn: Vec<bool>,
    /// The normalizer: sample standard deviation of raw returns over
    /// nonzero-return slots.
    pub return_std: f64,
}

impl SecondGrid {
    pub fn n_slots(&self) -> usize {
        self.returns.len()
    }

    /// Day length in slots.
    pub fn day_slots(&self) -> usize {
        DayClock::default().day_seconds() as usize
    }

    /// True when slots `a` and `b` (global indices) lie in the same session
    /// of the same day.
    pub fn same_session(&self, a: usize, b: usize) -> bool {
        let day = self.day_slots();
        a / day == b / day
            && DayClock::default().same_session_grid((a % day) as u32, (b % day) as u32)
    }
}

/// Builds the grid for one stock from the full merged stream and its
/// detected packages (only `stock`'s packages contribute volume).
///
/// Slot prices are the last print per second (canonical tie order); the
/// return std is measured over all nonzero raw returns of the stock, and
/// must exist (at least two priced moves).
pub fn build_second_grid(
    records: &[TradeRecord],
    packages: &[TradePackage],
    stock: StockCode,
    aggressor: Option<Aggressor>,
) -> Result<SecondGrid, RegressError> {
    let clock = DayClock::default();
    let day = clock.day_seconds() as usize;
    let split = clock.session_starts()[1] as usize;

    // last print per (date, slot), canonical order deciding within-slot ties
    let mut sorted: Vec<&TradeRecord> = records.iter().filter(|r| r.stock == stock).collect();
    sorted.sort_by(|a, b| {
        (a.time, a.investor, a.side, a.aggressor)
            .cmp(&(b.time, b.investor, b.side, b.aggressor))
            .then(a.price.total_cmp(&b.price))
            .then(a.volume.cmp(&b.volume))
    });
    let mut day_prices: BTreeMap<NaiveDate, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in &sorted {
        let slot = clock
            .grid_second(r.time.second)
            .expect("detectable records are in-session by parse contract")
            as usize;
        day_prices.entry(r.time.date).or_default().insert(slot, r.price);
    }
    if day_prices.is_empty() {
        return Err(RegressError::NoDays(stock));
    }

    let mut all_dates: Vec<NaiveDate> = records.iter().map(|r| r.time.date).collect();
    all_dates.sort_unstable();
    all_dates.dedup();
    let skipped_days: Vec<NaiveDate> =
        all_dates.into_iter().filter(|d| !day_prices.contains_key(d)).collect();

    let days: Vec<NaiveDate> = day_prices.keys().copied().collect();
    let mut raw_returns = vec![0.0; days.len() * day];
    for (d, date) in days.iter().enumerate() {
        let prices = &day_prices[date];
        // forward-fill restarts at each session: the first priced slot of a
        // session has no prior and contributes return 0
        for (start, end) in [(0, split), (split, day)] {
            let mut prev: Option<f64> = None;
            for (&slot, &price) in prices.range(start..end) {
                if let Some(p) = prev {
                    raw_returns[d * day + slot] = (price / p).ln();
                }
                prev = Some(price);
            }
        }
    }

    let nonzero: Vec<f64> = raw_returns.iter().copied().filter(|&r| r != 0.0).collect();
    let (_, std, _) = stats::mean_std_stderr(&nonzero);
    if nonzero.len() < 2 || std == 0.0 {
        return Err(RegressError::NoPriceVariation(stock));
    }
    let returns = raw_returns.into_iter().map(|r| r / std).collect();

    let mut signed_log_volume = vec![0.0; days.len() * day];
    let mut has_txn = vec![false; days.len() * day];
    for pkg in packages.iter().filter(|p| p.stock == stock) {
        for trade in &pkg.trades {
            if let Some(filter) = aggressor {
                if trade.aggressor != filter {
                    continue;
                }
            }
            let d = days.binary_search(&trade.time.date).expect("package dates have prints");
            let slot = clock.grid_second(trade.time.second).expect("in-session") as usize;
            let idx = d * day + slot;
            signed_log_volume[idx] += trade.side.sign() as f64 * (trade.volume as f64).ln();
            has_txn[idx] = true;
        }
    }

    Ok(SecondGrid { stock, days, skipped_days, returns, signed_log_volume, has_txn, return_std: std })
}

// ===== regression results =====

/// One named coefficient of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub beta: f64,
    pub stderr: f64,
    pub t: f64,
    /// |t| ≥ 1.96 (two-sided 5%, large-sample).
    pub significant: bool,
    /// True when the column was dropped as collinear (beta reported 0).
    pub dropped: bool,
}

/// A fitted linear model with named coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub n_obs: usize,
}

impl RegressionResult {
    fn from_fit(names: &[String], fit: &OlsFit) -> Self {
        let coefficients = names
            .iter()
            .enumerate()
            .map(|(i, name)| Coefficient {
                name: name.clone(),
                beta: fit.beta[i],
                stderr: fit.stderr[i],
                t: fit.t_stats[i],
                significant: fit.significant[i],
                dropped: fit.dropped.contains(&i),
            })
            .collect();
        RegressionResult { coefficients, r_squared: fit.r_squared, n_obs: fit.n_obs }
    }

    /// The coefficient with the given name.
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// The per-lag volume-impact fit at one lag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagFit {
    pub lag: usize,
    pub result: RegressionResult,
}

// ===== per-lag volume regressions =====

/// For each lag i, regresses the return i seconds after a package
/// transaction on the transaction's signed log volume:
/// R(t+i) = β₀* + β_i·s·ln v(t) + ε. Observations are the slots carrying a
/// package transaction; rows whose t+i leaves the session are dropped.
pub fn regress_lagged_volume(
    grid: &SecondGrid,
    lags: &[usize],
) -> Result<Vec<LagFit>, RegressError> {
    let base: Vec<usize> = (0..grid.n_slots()).filter(|&t| grid.has_txn[t]).collect();
    if base.len() < MIN_OBSERVATIONS {
        return Err(RegressError::TooFewObservations { got: base.len(), need: MIN_OBSERVATIONS });
    }
    let names = vec!["intercept".to_string(), "s_ln_v".to_string()];
    lags.iter()
        .map(|&lag| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &t in &base {
                let u = t + lag;
                if u < grid.n_slots() && grid.same_session(t, u) {
                    x.push(grid.signed_log_volume[t]);
                    y.push(grid.returns[u]);
                }
            }
            if y.len() < MIN_OBSERVATIONS {
                return Err(RegressError::TooFewObservations {
                    got: y.len(),
                    need: MIN_OBSERVATIONS,
                });
            }
            let ones = vec![1.0; y.len()];
            let fit = stats::ols_from_columns(&[&ones, &x], &y)?;
            Ok(LagFit { lag, result: RegressionResult::from_fit(&names, &fit) })
        })
        .collect()
}

// ===== autoregressive + lagged-volume model =====

/// The joint model and its volume-only restriction on identical rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArVolumeFit {
    /// R(t) on intercept, return lags, and signed-log-volume lags.
    pub full: RegressionResult,
    /// R(t) on intercept and s·ln v(t) over the same observations.
    pub volume_only: RegressionResult,
}

/// Fits R(t) = β₀* + Σ_j γ_j R(t−j) + Σ_i β_i s·ln v(t−i) + ε over every
/// slot whose full lag window stays inside one session (the volume channel
/// is zero where no transaction occurred). Also fits the volume-only
/// restriction on the same rows, so the two R² are directly comparable.
pub fn regress_ar_volume(grid: &SecondGrid) -> Result<ArVolumeFit, RegressError> {
    let max_lag = AR_LAGS.iter().chain(VOLUME_LAGS.iter()).copied().max().unwrap();
    let rows: Vec<usize> = (0..grid.n_slots())
        .filter(|&t| t >= max_lag && grid.same_session(t - max_lag, t))
        .collect();
    if rows.len() < MIN_OBSERVATIONS {
        return Err(RegressError::TooFewObservations { got: rows.len(), need: MIN_OBSERVATIONS });
    }

    let mut names = vec!["intercept".to_string()];
    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
    for &j in &AR_LAGS {
        names.push(format!("r_lag_{j}"));
        columns.push(rows.iter().map(|&t| grid.returns[t - j]).collect());
    }
    for &i in &VOLUME_LAGS {
        names.push(format!("v_lag_{i}"));
        columns.push(rows.iter().map(|&t| grid.signed_log_volume[t - i]).collect());
    }
    let y: Vec<f64> = rows.iter().map(|&t| grid.returns[t]).collect();

    let views: Vec<&[f64]> = columns.iter().map(|c| c.as_slice()).collect();
    let full_fit = stats::ols_from_columns(&views, &y)?;
    let full = RegressionResult::from_fit(&names, &full_fit);

    let v0 = names.iter().position(|n| n == "v_lag_0").unwrap();
    let slim_names = vec!["intercept".to_string(), "v_lag_0".to_string()];
    let slim_fit = stats::ols_from_columns(&[&columns[0], &columns[v0]], &y)?;
    let volume_only = RegressionResult::from_fit(&slim_names, &slim_fit);

    Ok(ArVolumeFit { full, volume_only })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{EventTime, AFTERNOON_OPEN, MORNING_CLOSE, MORNING_OPEN};
    use crate::detect::{detect_packages, DetectorConfig};
    use crate::ingest::{InvestorType, Side};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn d(s: &str) -> chrono::NaiveDate {
        s.parse().unwrap()
    }

    fn stock() -> StockCode {
        "000001".parse().unwrap()
    }

    fn trade(investor: u64, date: &str, sec: u32, price: f64, vol: u64) -> TradeRecord {
        TradeRecord {
            stock: stock(),
            investor,
            investor_type: InvestorType::Institution,
            time: EventTime::new(d(date), sec),
            side: Side::Buy,
            aggressor: Aggressor::Market,
            price,
            volume: vol,
        }
    }

    /// A grid with all-zero channels over one day.
    fn blank_grid() -> SecondGrid {
        let day = DayClock::default().day_seconds() as usize;
        SecondGrid {
            stock: stock(),
            days: vec![d("2003-01-06")],
            skipped_days: vec![],
            returns: vec![0.0; day],
            signed_log_volume: vec![0.0; day],
            has_txn: vec![false; day],
            return_std: 1.0,
        }
    }

    #[test]
    fn grid_has_day_slots_and_prices_make_returns() {
        let records = vec![
            trade(1, "2003-01-06", MORNING_OPEN + 900, 10.0, 100),
            trade(1, "2003-01-06", MORNING_OPEN + 1800, 10.1, 100),
            trade(1, "2003-01-06", MORNING_OPEN + 2400, 10.2, 100),
        ];
        let grid = build_second_grid(&records, &[], stock(), None).unwrap();
        assert_eq!(grid.n_slots(), 14_400);
        assert_eq!(grid.days.len(), 1);

        let nonzero: Vec<usize> =
            (0..grid.n_slots()).filter(|&t| grid.returns[t] != 0.0).collect();
        // the first print has no prior; the two moves land at their slots
        assert_eq!(nonzero, vec![1800, 2400]);
        let raw0 = grid.returns[1800] * grid.return_std;
        assert!((raw0 - (10.1f64 / 10.0).ln()).abs() < 1e-12);

        // normalized std over nonzero returns is 1
        let vals: Vec<f64> = nonzero.iter().map(|&t| grid.returns[t]).collect();
        let (_, std, _) = stats::mean_std_stderr(&vals);
        assert!((std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn session_boundaries_never_carry_returns() {
        let records = vec![
            trade(1, "2003-01-06", MORNING_OPEN + 60, 10.0, 100),
            trade(1, "2003-01-06", MORNING_CLOSE, 10.5, 100), // 11:30:00 → slot 7199
            trade(1, "2003-01-06", AFTERNOON_OPEN, 12.0, 100), // 13:00:00 → slot 7200
            trade(1, "2003-01-06", AFTERNOON_OPEN + 60, 12.1, 100),
        ];
        let grid = build_second_grid(&records, &[], stock(), None).unwrap();
        // the 10.5 → 12.0 break jump is suppressed: slot 7200 starts a session
        assert_eq!(grid.returns[7200], 0.0);
        assert!(grid.returns[7199] != 0.0); // 10.0 → 10.5 inside the morning
        assert!(grid.returns[7260] != 0.0); // 12.0 → 12.1 inside the afternoon
        let raw = grid.returns[7260] * grid.return_std;
        assert!((raw - (12.1f64 / 12.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn flat_day_contributes_zero_returns_and_missing_stock_days_are_reported() {
        let mut records = vec![
            // day 1: constant price
            trade(1, "2003-01-06", MORNING_OPEN + 60, 10.0, 100),
            trade(1, "2003-01-06", MORNING_OPEN + 120, 10.0, 100),
            // day 2: two moves
            trade(1, "2003-01-07", MORNING_OPEN + 60, 10.0, 100),
            trade(1, "2003-01-07", MORNING_OPEN + 120, 10.1, 100),
            trade(1, "2003-01-07", MORNING_OPEN + 180, 10.3, 100),
        ];
        // another stock trades on a third day; 000001 skips it
        records.push(TradeRecord { stock: "000002".parse().unwrap(), ..trade(1, "2003-01-08", MORNING_OPEN + 60, 5.0, 10) });

        let grid = build_second_grid(&records, &[], stock(), None).unwrap();
        assert_eq!(grid.days.len(), 2);
        assert_eq!(grid.skipped_days, vec![d("2003-01-08")]);
        assert!(grid.returns[..14_400].iter().all(|&r| r == 0.0));

        // a stock with only one price move cannot be normalized
        let thin = vec![
            trade(1, "2003-01-06", MORNING_OPEN + 60, 10.0, 100),
            trade(1, "2003-01-06", MORNING_OPEN + 120, 10.1, 100),
        ];
        assert!(matches!(
            build_second_grid(&thin, &[], stock(), None),
            Err(RegressError::NoPriceVariation(_))
        ));
    }

    #[test]
    fn volume_channel_sums_package_transactions() {
        let mut records = Vec::new();
        // enough prints for normalization
        records.push(trade(99, "2003-01-06", MORNING_OPEN, 10.0, 50));
        records.push(trade(99, "2003-01-06", MORNING_OPEN + 10, 10.1, 50));
        records.push(trade(99, "2003-01-06", MORNING_OPEN + 20, 10.2, 50));
        // a 6-trade package; two of its trades share a second
        for i in 0..6u32 {
            let sec = MORNING_OPEN + 600 + 60 * (i / 2) * 2; // offsets 600,600,720,720,840,840
            records.push(trade(1, "2003-01-06", sec, 10.0, 100 + i as u64));
        }
        let packages = detect_packages(&records, &DetectorConfig::default()).unwrap().packages;
        assert_eq!(packages.len(), 1);
        let grid = build_second_grid(&records, &packages, stock(), None).unwrap();

        let slot = 600usize;
        assert!(grid.has_txn[slot]);
        let expected = (100f64.ln()) + (101f64.ln());
        assert!((grid.signed_log_volume[slot] - expected).abs() < 1e-12);
        // market-only filter keeps them; limit-only empties the channel
        let grid_limit =
            build_second_grid(&records, &packages, stock(), Some(Aggressor::Limit)).unwrap();
        assert!(grid_limit.has_txn.iter().all(|&b| !b));
    }

    /// Plants impact coefficients on a blank grid: transactions at spaced
    /// slots, R(t+lag) = beta·s·ln v(t) + noise for each (lag, beta).
    fn plant(
        grid: &mut SecondGrid,
        planted: &[(usize, f64)],
        noise: f64,
        seed: u64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let day = grid.day_slots();
        for r in grid.returns.iter_mut() {
            *r = rng.gen_range(-noise..noise);
        }
        let mut t = 40;
        while t + 30 < day {
            // keep the whole lag window inside one session
            if grid.same_session(t - 30, t + 30) {
                let v = 10f64.powf(rng.gen_range(2.0..6.0));
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                grid.signed_log_volume[t] = s * v.ln();
                grid.has_txn[t] = true;
                for &(lag, beta) in planted {
                    grid.returns[t + lag] = beta * s * v.ln() + rng.gen_range(-noise..noise);
                }
            }
            t += 61;
        }
    }

    #[test]
    fn planted_lag_coefficients_are_recovered() {
        let mut grid = blank_grid();
        plant(&mut grid, &[(0, 0.1), (5, -0.02)], 0.1, 42);
        let fits = regress_lagged_volume(&grid, &VOLUME_LAGS).unwrap();

        let beta0 = fits[0].result.coefficient("s_ln_v").unwrap();
        assert!(
            (beta0.beta - 0.1).abs() < 2.0 * beta0.stderr,
            "β₀ {} ± {}",
            beta0.beta,
            beta0.stderr
        );
        assert!(beta0.significant);

        let beta5 = fits[1].result.coefficient("s_ln_v").unwrap();
        assert!((beta5.beta + 0.02).abs() < 2.0 * beta5.stderr);

        // unplanted lags stay near zero: |β| < 2σ for at least 3 of 4
        let quiet = fits[2..]
            .iter()
            .filter(|f| {
                let c = f.result.coefficient("s_ln_v").unwrap();
                c.beta.abs() < 2.0 * c.stderr
            })
            .count();
        assert!(quiet >= 3, "quiet lags: {quiet}");
    }

    #[test]
    fn ar_and_volume_terms_are_jointly_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut grid = blank_grid();
        let day = grid.day_slots();
        let (gamma, beta) = (0.3, 0.1);

        // volume channel on spaced slots
        let mut t = 30;
        while t < day {
            if grid.same_session(t - 25, t) {
                let v = 10f64.powf(rng.gen_range(2.0..6.0));
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                grid.signed_log_volume[t] = s * v.ln();
                grid.has_txn[t] = true;
            }
            t += 17;
        }
        // returns: AR at lag 5 plus volume impact plus noise
        for t in 0..day {
            let ar = if t >= 5 && grid.same_session(t - 5, t) { gamma * grid.returns[t - 5] } else { 0.0 };
            grid.returns[t] = ar + beta * grid.signed_log_volume[t] + rng.gen_range(-0.5..0.5);
        }

        let fit = regress_ar_volume(&grid).unwrap();
        let g = fit.full.coefficient("r_lag_5").unwrap();
        assert!((g.beta - gamma).abs() < 2.0 * g.stderr, "γ̂₅ {} ± {}", g.beta, g.stderr);
        assert!(g.significant);
        let b = fit.full.coefficient("v_lag_0").unwrap();
        assert!((b.beta - beta).abs() < 2.0 * b.stderr, "β̂₀ {} ± {}", b.beta, b.stderr);
        assert!(b.significant);

        // nesting: the full model explains at least as much as volume-only
        assert!(fit.full.r_squared >= fit.volume_only.r_squared - 1e-12);
        assert_eq!(fit.full.n_obs, fit.volume_only.n_obs);
    }

    #[test]
    fn zero_volume_channel_reduces_to_a_pure_ar_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut grid = blank_grid();
        let day = grid.day_slots();
        for t in 0..day {
            let ar = if t >= 5 && grid.same_session(t - 5, t) { 0.4 * grid.returns[t - 5] } else { 0.0 };
            grid.returns[t] = ar + rng.gen_range(-0.5..0.5);
        }
        let fit = regress_ar_volume(&grid).unwrap();
        // all volume columns are identically zero → dropped as collinear
        for i in VOLUME_LAGS {
            let c = fit.full.coefficient(&format!("v_lag_{i}")).unwrap();
            assert!(c.dropped);
            assert_eq!(c.beta, 0.0);
            assert!(!c.significant);
        }
        let g = fit.full.coefficient("r_lag_5").unwrap();
        assert!((g.beta - 0.4).abs() < 2.0 * g.stderr);
    }

    #[test]
    fn too_few_observations_is_reported() {
        let grid = blank_grid(); // no transactions at all
        assert!(matches!(
            regress_lagged_volume(&grid, &VOLUME_LAGS),
            Err(RegressError::TooFewObservations { got: 0, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// The joint model never explains less than its nested restriction,
        /// whatever the data.
        #[test]
        fn nesting_inequality_holds(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grid = blank_grid();
            let day = grid.day_slots();
            for t in 0..day {
                grid.returns[t] = rng.gen_range(-1.0..1.0);
                if rng.gen_bool(0.02) {
                    grid.signed_log_volume[t] = rng.gen_range(-10.0..10.0);
                    grid.has_txn[t] = true;
                }
            }
            let fit = regress_ar_volume(&grid).unwrap();
            prop_assert!(fit.full.r_squared >= fit.volume_only.r_squared - 1e-12);
        }
    }
}
