//! Deterministic synthetic-market generation with recorded ground truth.
//!
//! Two layers, both reproducible from `(config, seed)`:
//!
//! * **Full market**: [`generate_market`] plans per-investor trade packages
//!   (sizes from a bounded power law, splitting from the configured scaling
//!   laws, side/aggressor mixes honoring or deliberately violating the
//!   detection rules per an explicit label) plus background noise traders,
//!   then renders a price path over the merged tape — a random walk carrying
//!   planted per-trade impact jumps with partial mean reversion.
//!   [`planted_truth`] returns the same [`GroundTruth`] without rendering.
//! * **Direct samplers**: [`planted_scaling_packages`],
//!   [`planted_impact_packages`], and [`planted_regression_grid`] draw from
//!   the planted statistical laws alone, for validating the estimation
//!   modules without a detour through a full tape.
//!
//! Noise traders never execute more than [`SynthConfig::min_market_trades`]
//! market orders, so they can never be mistaken for packages: detection
//! precision on synthetic markets is 1 by construction.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{DayClock, EventTime};
use crate::detect::RejectReason;
use crate::impact::PackageImpact;
use crate::ingest::{Aggressor, InvestorId, InvestorType, Side, StockCode, TradeRecord};
use crate::powerlaw::{FitError, PowerLawFit, Regime};
use crate::regress::SecondGrid;
use crate::scaling::PackageVars;

// ===== configuration =====

/// Everything the generator needs; all laws are reproducible from
/// `(config, seed)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stocks: usize,
    /// Weekdays generated, starting at `start_date`.
    pub trading_days: usize,
    pub start_date: NaiveDate,
    /// Package investors per stock, one package each.
    pub institutions_per_stock: usize,
    pub individuals_per_stock: usize,
    pub noise_traders_per_stock: usize,
    /// Trades per noise trader are uniform in `1..=noise_trades_max`.
    pub noise_trades_max: u32,
    /// Price level; each stock draws its own base in `[0.5, 2) ×` this.
    pub base_price: f64,
    /// Log-price noise per square-root trading second.
    pub noise_volatility: f64,
    /// Package share volume V follows a bounded power law with this
    /// exponent on `[volume_x_min, volume_x_max]`. Keep `volume_x_min` well
    /// above typical trade counts so per-trade volumes stay positive.
    pub volume_delta: f64,
    pub volume_x_min: f64,
    pub volume_x_max: f64,
    /// Package splitting: trades per package N ∝ V^g₂ and execution time
    /// T ∝ N^g₃, each with lognormal jitter `scaling_jitter`.
    pub scaling_g2: f64,
    pub scaling_g3: f64,
    pub scaling_n_amp: f64,
    pub scaling_t_amp: f64,
    pub scaling_jitter: f64,
    /// Detection thresholds the planted packages are built against.
    pub theta: f64,
    pub min_market_trades: u32,
    /// Fraction of a package's trades executed as market orders.
    pub market_trade_frac: f64,
    /// Opposite-side share-volume fraction of rule-satisfying packages;
    /// must stay below `1 − theta` with margin.
    pub opposite_volume_frac: f64,
    /// Fraction of planted packages that deliberately violate one
    /// detection rule (labeled in the truth).
    pub violation_frac: f64,
    /// Package-impact law |⟨R|V⟩| = amplitude · V^exponent used by
    /// [`planted_impact_packages`], with relative scatter `impact_noise`.
    pub impact_amplitude: f64,
    pub impact_exponent: f64,
    pub impact_noise: f64,
    /// Raw log-price jump per planted market trade is
    /// `impact_jump_scale · β · s · ln v` for each `(lag, β)` profile entry;
    /// a fraction `impact_reversion` of every jump decays away with time
    /// constant `impact_reversion_tau` (trading seconds).
    pub impact_jump_scale: f64,
    pub impact_reversion: f64,
    pub impact_reversion_tau: f64,
    /// Lagged-response profile `(lag seconds, β)`; the lag-0 entry is the
    /// immediate jump, later entries are delayed follow-ups.
    pub lag_profile: Vec<(u32, f64)>,
    /// Intraday volume-weight boosts for the first and last `boost_frac`
    /// of the trading day (0 = flat).
    pub open_boost: f64,
    pub close_boost: f64,
    pub boost_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            n_stocks: 2,
            trading_days: 60,
            start_date: NaiveDate::from_ymd_opt(2003, 1, 6).unwrap(),
            institutions_per_stock: 40,
            individuals_per_stock: 80,
            noise_traders_per_stock: 200,
            noise_trades_max: 12,
            base_price: 10.0,
            noise_volatility: 2e-4,
            volume_delta: 2.40,
            volume_x_min: 3e4,
            volume_x_max: 1e8,
            scaling_g2: 0.74,
            scaling_g3: 0.18,
            scaling_n_amp: 0.01,
            scaling_t_amp: 900.0,
            scaling_jitter: 0.15,
            theta: 0.75,
            min_market_trades: 5,
            market_trade_frac: 0.7,
            opposite_volume_frac: 0.10,
            violation_frac: 0.0,
            impact_amplitude: 0.003,
            impact_exponent: 0.447,
            impact_noise: 0.3,
            impact_jump_scale: 2e-4,
            impact_reversion: 0.3,
            impact_reversion_tau: 60.0,
            lag_profile: vec![(0, 0.1), (5, -0.02)],
            open_boost: 1.0,
            close_boost: 0.5,
            boost_frac: 0.1,
        }
    }
}

/// Generation failure.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Law(#[from] FitError),
}

/// Fewest trades a planted package may carry (room for ≥ 6 market orders
/// plus opposite-side and limit admixtures).
const MIN_PACKAGE_TRADES: usize = 9;
/// Most trades a planted package may carry (so it fits inside one day).
const MAX_PACKAGE_TRADES: usize = 2000;
/// First investor id given to noise traders.
const NOISE_ID_BASE: u64 = 1_000_000;

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::BadConfig(m.to_owned()));
        if self.n_stocks == 0 {
            return bad("n_stocks must be positive");
        }
        if self.trading_days == 0 {
            return bad("trading_days must be positive");
        }
        if self.base_price.is_nan() || self.base_price <= 0.0 {
            return bad("base_price must be positive");
        }
        if self.noise_volatility < 0.0 {
            return bad("noise_volatility must be non-negative");
        }
        if !(self.volume_x_min > 0.0 && self.volume_x_max > self.volume_x_min) {
            return bad("volume support needs 0 < x_min < x_max");
        }
        if !(self.scaling_n_amp > 0.0 && self.scaling_t_amp > 0.0) {
            return bad("scaling amplitudes must be positive");
        }
        if self.scaling_jitter < 0.0 {
            return bad("scaling_jitter must be non-negative");
        }
        if !(self.theta > 0.5 && self.theta < 1.0) {
            return bad("theta must lie in (0.5, 1)");
        }
        if !(self.market_trade_frac > 0.0 && self.market_trade_frac <= 1.0) {
            return bad("market_trade_frac must lie in (0, 1]");
        }
        if self.opposite_volume_frac < 0.0
            || self.opposite_volume_frac > 0.8 * (1.0 - self.theta)
        {
            return bad("opposite_volume_frac must stay well below 1 - theta");
        }
        if !(0.0..=1.0).contains(&self.violation_frac) {
            return bad("violation_frac must lie in [0, 1]");
        }
        if self.impact_noise < 0.0 || self.impact_jump_scale < 0.0 {
            return bad("impact noise and jump scale must be non-negative");
        }
        if !(0.0..1.0).contains(&self.impact_reversion) {
            return bad("impact_reversion must lie in [0, 1)");
        }
        if self.impact_reversion_tau.is_nan() || self.impact_reversion_tau <= 0.0 {
            return bad("impact_reversion_tau must be positive");
        }
        if !(0.0..0.5).contains(&self.boost_frac) {
            return bad("boost_frac must lie in [0, 0.5)");
        }
        if self.open_boost < 0.0 || self.close_boost < 0.0 {
            return bad("volume boosts must be non-negative");
        }
        let day = DayClock::default().day_seconds() as f64;
        let t_high = self.scaling_t_amp
            * (MAX_PACKAGE_TRADES as f64).powf(self.scaling_g3)
            * (3.0 * self.scaling_jitter).exp();
        if t_high >= day {
            return bad("planted execution times do not fit inside one trading day");
        }
        let n_package_investors =
            self.n_stocks * (self.institutions_per_stock + self.individuals_per_stock);
        if n_package_investors as u64 >= NOISE_ID_BASE {
            return bad("too many package investors for the id scheme");
        }
        Ok(())
    }

    fn volume_law(&self) -> Result<PowerLawFit, FitError> {
        PowerLawFit::from_params(
            Regime::BoundedGeneral,
            self.volume_delta,
            self.volume_x_min,
            Some(self.volume_x_max),
        )
    }
}

// ===== ground truth =====

/// One planted package: its boundaries plus the rule-compliance label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPackage {
    pub stock: StockCode,
    pub investor: InvestorId,
    pub investor_type: InvestorType,
    /// Dominant side.
    pub side: Side,
    pub first: EventTime,
    pub last: EventTime,
    pub n_trades: usize,
    pub n_market: usize,
    /// Total share volume over both sides.
    pub volume: u64,
    /// Whether the package satisfies every detection rule.
    pub satisfies_rules: bool,
    /// The rule it was built to break, when it breaks one.
    pub violation: Option<RejectReason>,
}

/// The statistical laws the generator planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLaws {
    pub volume_delta: f64,
    pub volume_x_min: f64,
    pub volume_x_max: f64,
    pub scaling_g2: f64,
    pub scaling_g3: f64,
    pub impact_amplitude: f64,
    pub impact_exponent: f64,
    pub lag_profile: Vec<(u32, f64)>,
}

/// Per-stock normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StockTruth {
    pub stock: StockCode,
    /// Price level the stock's log-price path starts from.
    pub base_price: f64,
}

/// Everything the acceptance suite compares against: planted laws, per-stock
/// constants, and one record per planted package.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub laws: PlantedLaws,
    pub stocks: Vec<StockTruth>,
    pub packages: Vec<PlantedPackage>,
}

impl GroundTruth {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<GroundTruth> {
        serde_json::from_str(s)
    }
}

/// A rendered market: canonical records plus the truth they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMarket {
    pub records: Vec<TradeRecord>,
    pub truth: GroundTruth,
}

// ===== seeding and calendar =====

/// Independent substream seed for (stage, index) under one master seed
/// (splitmix64 finalizer over mixed words).
fn substream(seed: u64, stage: u64, index: u64) -> u64 {
    let mut x = seed
        ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

const STAGE_PLAN: u64 = 1;
const STAGE_RENDER: u64 = 2;
const STAGE_SCALING: u64 = 3;
const STAGE_IMPACT: u64 = 4;
const STAGE_GRID: u64 = 5;

/// The first `n` weekdays starting at `start`.
pub fn weekday_calendar(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut days = Vec::with_capacity(n);
    let mut d = start;
    while days.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d = d.succ_opt().expect("calendar horizon fits chrono range");
    }
    days
}

// ===== planning =====

#[derive(Debug, Clone)]
struct PlannedTrade {
    /// Trading-clock offset within the day.
    offset: u32,
    side: Side,
    aggressor: Aggressor,
    volume: u64,
}

#[derive(Debug, Clone)]
struct PlannedPackage {
    investor: InvestorId,
    investor_type: InvestorType,
    side: Side,
    day: usize,
    trades: Vec<PlannedTrade>,
    violation: Option<RejectReason>,
}

#[derive(Debug, Clone)]
struct PlannedNoise {
    investor: InvestorId,
    investor_type: InvestorType,
    day: usize,
    trade: PlannedTrade,
}

#[derive(Debug, Clone)]
struct StockPlan {
    stock: StockCode,
    base_price: f64,
    packages: Vec<PlannedPackage>,
    noise: Vec<PlannedNoise>,
}

#[derive(Debug, Clone)]
struct MarketPlan {
    calendar: Vec<NaiveDate>,
    stocks: Vec<StockPlan>,
}

/// Intraday volume-weight boost at normalized day-time `t`.
fn volume_boost(cfg: &SynthConfig, t: f64) -> f64 {
    if t < cfg.boost_frac {
        1.0 + cfg.open_boost
    } else if t >= 1.0 - cfg.boost_frac {
        1.0 + cfg.close_boost
    } else {
        1.0
    }
}

/// Forces `volumes` to sum to `target`, keeping every entry ≥ 1.
fn rebalance_volumes(volumes: &mut [u64], target: u64) {
    let total: u64 = volumes.iter().sum();
    if total < target {
        let imax = (0..volumes.len()).max_by_key(|&i| volumes[i]).unwrap();
        volumes[imax] += target - total;
        return;
    }
    let mut excess = total - target;
    let mut order: Vec<usize> = (0..volumes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(volumes[i]));
    for i in order {
        if excess == 0 {
            break;
        }
        let cut = (volumes[i] - 1).min(excess);
        volumes[i] -= cut;
        excess -= cut;
    }
}

/// Flips trades to the opposite side until their volume reaches `need`,
/// never exceeding `cap`; descending-volume pass first, then smallest-first
/// to close any remaining gap (`need ≤ cap` is the caller's contract for
/// compliant packages; violations may pass `need > cap` and rely on the
/// second pass).
fn flip_opposite_sides(
    trades: &mut [PlannedTrade],
    opposite: Side,
    need: u64,
    cap: u64,
    order: &mut [usize],
) -> u64 {
    let mut flipped = 0u64;
    order.sort_by_key(|&i| std::cmp::Reverse(trades[i].volume));
    for &i in order.iter() {
        if flipped >= need {
            break;
        }
        if flipped + trades[i].volume <= cap {
            trades[i].side = opposite;
            flipped += trades[i].volume;
        }
    }
    if flipped < need {
        // close the gap with the smallest still-unflipped trades
        order.sort_by_key(|&i| trades[i].volume);
        for &i in order.iter() {
            if flipped >= need {
                break;
            }
            if trades[i].side != opposite {
                trades[i].side = opposite;
                flipped += trades[i].volume;
            }
        }
    }
    flipped
}

fn plan_package(
    cfg: &SynthConfig,
    law: &PowerLawFit,
    rng: &mut ChaCha8Rng,
    investor: InvestorId,
    investor_type: InvestorType,
    n_days: usize,
) -> Result<PlannedPackage, SynthError> {
    let day_len = DayClock::default().day_seconds();

    let violation = if rng.gen_bool(cfg.violation_frac) {
        Some(if rng.gen_bool(0.5) {
            RejectReason::ThetaFail
        } else {
            RejectReason::TooFewMarketOrders
        })
    } else {
        None
    };

    // size, splitting, duration
    let jitter = |rng: &mut ChaCha8Rng| {
        let z: f64 = rng.sample(StandardNormal);
        (cfg.scaling_jitter * z).exp()
    };
    let v_raw = law.quantile(rng.gen::<f64>())?;
    let n_trades = (cfg.scaling_n_amp * v_raw.powf(cfg.scaling_g2) * jitter(rng))
        .round()
        .clamp(MIN_PACKAGE_TRADES as f64, MAX_PACKAGE_TRADES as f64) as usize;
    let volume = (v_raw.round() as u64).max(2 * n_trades as u64);
    let t_secs = (cfg.scaling_t_amp * (n_trades as f64).powf(cfg.scaling_g3) * jitter(rng))
        .round()
        .clamp(n_trades as f64, (day_len - 1) as f64) as u32;

    // placement: distinct trading-second offsets, endpoints pinned
    let day = rng.gen_range(0..n_days);
    let t0 = rng.gen_range(0..day_len - t_secs);
    let mut offsets = Vec::with_capacity(n_trades);
    offsets.push(t0);
    let mut interior: Vec<u32> = index_sample(rng, (t_secs - 1) as usize, n_trades - 2)
        .into_iter()
        .map(|i| t0 + 1 + i as u32)
        .collect();
    interior.sort_unstable();
    offsets.extend(interior);
    offsets.push(t0 + t_secs);

    // per-trade volumes: exponential weights shaped by the intraday boost
    let weights: Vec<f64> = offsets
        .iter()
        .map(|&o| {
            let w: f64 = rng.sample(Exp1);
            w * volume_boost(cfg, o as f64 / day_len as f64)
        })
        .collect();
    let weight_sum: f64 = weights.iter().sum();
    let mut volumes: Vec<u64> = weights
        .iter()
        .map(|w| ((volume as f64) * w / weight_sum).floor().max(1.0) as u64)
        .collect();
    rebalance_volumes(&mut volumes, volume);

    // sides: dominant side plus a bounded opposite-side admixture
    let side = if rng.gen_bool(0.5) { Side::Buy } else { Side::Sell };
    let mut trades: Vec<PlannedTrade> = offsets
        .iter()
        .zip(&volumes)
        .map(|(&offset, &v)| PlannedTrade {
            offset,
            side,
            aggressor: Aggressor::Limit,
            volume: v,
        })
        .collect();
    let (need, cap) = if violation == Some(RejectReason::ThetaFail) {
        // dominant fraction must NOT exceed theta: opposite ≥ (1−θ)·V
        let need = ((volume as f64) * (1.0 - cfg.theta)).ceil() as u64;
        (need, ((volume as f64) * 0.45) as u64)
    } else {
        let need = ((volume as f64) * cfg.opposite_volume_frac).round() as u64;
        (need, ((volume as f64) * 0.8 * (1.0 - cfg.theta)) as u64)
    };
    let mut order: Vec<usize> = (1..trades.len().saturating_sub(1)).collect();
    flip_opposite_sides(&mut trades, side.opposite(), need, cap, &mut order);

    // aggressors: enough market orders to pass rule, or too few to ever pass
    let n_market = if violation == Some(RejectReason::TooFewMarketOrders) {
        cfg.min_market_trades as usize
    } else {
        (cfg.market_trade_frac * n_trades as f64)
            .round()
            .max(cfg.min_market_trades as f64 + 1.0)
            .min(n_trades as f64) as usize
    };
    for i in index_sample(rng, n_trades, n_market) {
        trades[i].aggressor = Aggressor::Market;
    }

    Ok(PlannedPackage { investor, investor_type, side, day, trades, violation })
}

fn plan_market(cfg: &SynthConfig) -> Result<MarketPlan, SynthError> {
    cfg.validate()?;
    let calendar = weekday_calendar(cfg.start_date, cfg.trading_days);
    let law = cfg.volume_law()?;
    let per_stock = cfg.institutions_per_stock + cfg.individuals_per_stock;
    let day_len = DayClock::default().day_seconds();

    let mut stocks = Vec::with_capacity(cfg.n_stocks);
    for stock_idx in 0..cfg.n_stocks {
        let stock = StockCode::from_index(stock_idx + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.seed, STAGE_PLAN, stock_idx as u64));
        let base_price = cfg.base_price * rng.gen_range(0.5..2.0);

        let mut packages = Vec::with_capacity(per_stock);
        for k in 0..per_stock {
            let investor = 1 + (stock_idx * per_stock + k) as u64;
            let investor_type = if k < cfg.institutions_per_stock {
                InvestorType::Institution
            } else {
                InvestorType::Individual
            };
            packages.push(plan_package(cfg, &law, &mut rng, investor, investor_type, calendar.len())?);
        }

        let mut noise = Vec::new();
        for j in 0..cfg.noise_traders_per_stock {
            let investor = NOISE_ID_BASE + (stock_idx * cfg.noise_traders_per_stock + j) as u64;
            let investor_type = if rng.gen_bool(0.8) {
                InvestorType::Individual
            } else {
                InvestorType::Institution
            };
            let n_tr = rng.gen_range(1..=cfg.noise_trades_max);
            let n_market = rng.gen_range(0..=cfg.min_market_trades.min(n_tr));
            let market_picks: Vec<usize> =
                index_sample(&mut rng, n_tr as usize, n_market as usize).into_vec();
            for t in 0..n_tr {
                noise.push(PlannedNoise {
                    investor,
                    investor_type,
                    day: rng.gen_range(0..calendar.len()),
                    trade: PlannedTrade {
                        offset: rng.gen_range(0..day_len),
                        side: if rng.gen_bool(0.5) { Side::Buy } else { Side::Sell },
                        aggressor: if market_picks.contains(&(t as usize)) {
                            Aggressor::Market
                        } else {
                            Aggressor::Limit
                        },
                        volume: rng.gen_range(100..=2000),
                    },
                });
            }
        }
        stocks.push(StockPlan { stock, base_price, packages, noise });
    }
    Ok(MarketPlan { calendar, stocks })
}

impl MarketPlan {
    fn truth(&self, cfg: &SynthConfig) -> GroundTruth {
        let packages = self
            .stocks
            .iter()
            .flat_map(|sp| {
                sp.packages.iter().map(|p| {
                    let first = p.trades.first().expect("packages are never empty");
                    let last = p.trades.last().expect("packages are never empty");
                    let clock = DayClock::default();
                    PlantedPackage {
                        stock: sp.stock,
                        investor: p.investor,
                        investor_type: p.investor_type,
                        side: p.side,
                        first: EventTime::new(
                            self.calendar[p.day],
                            clock.wall_second(first.offset).expect("offset inside day"),
                        ),
                        last: EventTime::new(
                            self.calendar[p.day],
                            clock.wall_second(last.offset).expect("offset inside day"),
                        ),
                        n_trades: p.trades.len(),
                        n_market: p
                            .trades
                            .iter()
                            .filter(|t| t.aggressor == Aggressor::Market)
                            .count(),
                        volume: p.trades.iter().map(|t| t.volume).sum(),
                        satisfies_rules: p.violation.is_none(),
                        violation: p.violation,
                    }
                })
            })
            .collect();
        GroundTruth {
            laws: PlantedLaws {
                volume_delta: cfg.volume_delta,
                volume_x_min: cfg.volume_x_min,
                volume_x_max: cfg.volume_x_max,
                scaling_g2: cfg.scaling_g2,
                scaling_g3: cfg.scaling_g3,
                impact_amplitude: cfg.impact_amplitude,
                impact_exponent: cfg.impact_exponent,
                lag_profile: cfg.lag_profile.clone(),
            },
            stocks: self
                .stocks
                .iter()
                .map(|sp| StockTruth { stock: sp.stock, base_price: sp.base_price })
                .collect(),
            packages,
        }
    }
}

// ===== rendering =====

#[derive(Debug, Clone)]
struct PlannedEvent {
    /// Absolute trading second over the whole horizon.
    abs_t: u64,
    day: usize,
    offset: u32,
    investor: InvestorId,
    investor_type: InvestorType,
    side: Side,
    aggressor: Aggressor,
    volume: u64,
    /// Signed jump direction `s · (market ? +1 : −1)` for package trades.
    impact_dir: f64,
}

/// Log-price path state: a random walk plus a mean-reverting transient.
struct PricePath {
    walk: f64,
    transient: f64,
    cur: u64,
    sigma: f64,
    tau: f64,
    reversion: f64,
    /// Scheduled delayed jumps by absolute trading second.
    pending: BTreeMap<u64, f64>,
}

impl PricePath {
    fn advance(&mut self, to: u64, rng: &mut ChaCha8Rng) {
        if to > self.cur {
            let dt = (to - self.cur) as f64;
            self.transient *= (-dt / self.tau).exp();
            let z: f64 = rng.sample(StandardNormal);
            self.walk += self.sigma * dt.sqrt() * z;
            self.cur = to;
        }
    }

    fn apply_jump(&mut self, amount: f64) {
        self.walk += amount * (1.0 - self.reversion);
        self.transient += amount * self.reversion;
    }

    /// Applies all scheduled jumps up to `t`, then advances to `t`.
    fn settle(&mut self, t: u64, rng: &mut ChaCha8Rng) {
        loop {
            let next = match self.pending.first_key_value() {
                Some((&tj, _)) if tj <= t => tj,
                _ => break,
            };
            let amount = self.pending.remove(&next).unwrap();
            self.advance(next, rng);
            self.apply_jump(amount);
        }
        self.advance(t, rng);
    }

    fn price(&self) -> f64 {
        let p = (self.walk + self.transient).exp();
        ((p * 1000.0).round() / 1000.0).max(0.001)
    }
}

fn render(cfg: &SynthConfig, plan: &MarketPlan) -> Vec<TradeRecord> {
    let clock = DayClock::default();
    let day_len = clock.day_seconds() as u64;
    let mut records = Vec::new();

    for (stock_idx, sp) in plan.stocks.iter().enumerate() {
        let mut events: Vec<PlannedEvent> = Vec::new();
        for p in &sp.packages {
            let sign = p.side.sign() as f64;
            for t in &p.trades {
                events.push(PlannedEvent {
                    abs_t: p.day as u64 * day_len + t.offset as u64,
                    day: p.day,
                    offset: t.offset,
                    investor: p.investor,
                    investor_type: p.investor_type,
                    side: t.side,
                    aggressor: t.aggressor,
                    volume: t.volume,
                    impact_dir: sign
                        * if t.aggressor == Aggressor::Market { 1.0 } else { -1.0 },
                });
            }
        }
        for n in &sp.noise {
            events.push(PlannedEvent {
                abs_t: n.day as u64 * day_len + n.trade.offset as u64,
                day: n.day,
                offset: n.trade.offset,
                investor: n.investor,
                investor_type: n.investor_type,
                side: n.trade.side,
                aggressor: n.trade.aggressor,
                volume: n.trade.volume,
                impact_dir: 0.0,
            });
        }
        events.sort_by_key(|e| {
            (e.abs_t, e.investor, e.side.code() as u8, e.aggressor.code() as u8, e.volume)
        });

        let mut rng =
            ChaCha8Rng::seed_from_u64(substream(cfg.seed, STAGE_RENDER, stock_idx as u64));
        let mut path = PricePath {
            walk: sp.base_price.ln(),
            transient: 0.0,
            cur: 0,
            sigma: cfg.noise_volatility,
            tau: cfg.impact_reversion_tau,
            reversion: cfg.impact_reversion,
            pending: BTreeMap::new(),
        };

        for e in &events {
            path.settle(e.abs_t, &mut rng);
            if e.impact_dir != 0.0 {
                let q = (e.volume as f64).ln() * e.impact_dir * cfg.impact_jump_scale;
                for &(lag, beta) in &cfg.lag_profile {
                    // market orders drive the full lagged profile; limit
                    // executions only mark the immediate print
                    if e.aggressor == Aggressor::Limit && lag != 0 {
                        continue;
                    }
                    if lag == 0 {
                        path.apply_jump(beta * q);
                    } else {
                        *path.pending.entry(e.abs_t + lag as u64).or_insert(0.0) += beta * q;
                    }
                }
            }
            records.push(TradeRecord {
                stock: sp.stock,
                investor: e.investor,
                investor_type: e.investor_type,
                time: EventTime::new(
                    plan.calendar[e.day],
                    clock.wall_second(e.offset).expect("offset inside day"),
                ),
                side: e.side,
                aggressor: e.aggressor,
                price: path.price(),
                volume: e.volume,
            });
        }
    }
    records
}

// ===== public entry points =====

/// The ground truth [`generate_market`] would record, without rendering the
/// tape. Exactly equal to `generate_market(cfg)?.truth`.
pub fn planted_truth(cfg: &SynthConfig) -> Result<GroundTruth, SynthError> {
    Ok(plan_market(cfg)?.truth(cfg))
}

/// Generates the full synthetic market: canonical trade records plus the
/// recorded ground truth. Deterministic per `(config, seed)`.
pub fn generate_market(cfg: &SynthConfig) -> Result<SynthMarket, SynthError> {
    let plan = plan_market(cfg)?;
    let records = render(cfg, &plan);
    Ok(SynthMarket { records, truth: plan.truth(cfg) })
}

// ===== direct samplers =====

/// Draws `(T, N, V)` package triples straight from the configured splitting
/// laws: V bounded power law, N ∝ V^g₂, T ∝ N^g₃, lognormal jitter on N and
/// T. Continuous values — no calendar placement — so fitted exponents face
/// no discretization bias.
pub fn planted_scaling_packages(
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<PackageVars>, SynthError> {
    cfg.validate()?;
    let law = cfg.volume_law()?;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, STAGE_SCALING, 0));
    let jitter = |rng: &mut ChaCha8Rng| {
        let z: f64 = rng.sample(StandardNormal);
        (cfg.scaling_jitter * z).exp()
    };
    (0..n)
        .map(|_| {
            let v = law.quantile(rng.gen::<f64>())?;
            let n_t = cfg.scaling_n_amp * v.powf(cfg.scaling_g2) * jitter(&mut rng);
            let t = cfg.scaling_t_amp * n_t.powf(cfg.scaling_g3) * jitter(&mut rng);
            Ok(PackageVars { t_secs: t, n_trades: n_t, volume: v })
        })
        .collect()
}

/// Draws package impacts following |⟨R|V⟩| = A·V^γ with mean-preserving
/// relative scatter; volumes log-uniform over the configured support, signs
/// balanced. Feed to the conditional-impact binner to validate the
/// amplitude/exponent fit.
pub fn planted_impact_packages(
    cfg: &SynthConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<PackageImpact>, SynthError> {
    cfg.validate()?;
    let stock: StockCode = "000001".parse().expect("static code");
    let (ln_lo, ln_hi) = (cfg.volume_x_min.ln(), cfg.volume_x_max.ln());
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, STAGE_IMPACT, 0));
    Ok((0..n)
        .map(|_| {
            let v = rng.gen_range(ln_lo..ln_hi).exp();
            let sign: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
            let z: f64 = rng.sample(StandardNormal);
            let impact = cfg.impact_amplitude * v.powf(cfg.impact_exponent)
                * (1.0 + cfg.impact_noise * z);
            let n_t = cfg.scaling_n_amp * v.powf(cfg.scaling_g2);
            PackageImpact {
                stock,
                investor_type: InvestorType::Institution,
                sign,
                r: sign as f64 * impact,
                impact,
                f_m: 1.0,
                t_secs: cfg.scaling_t_amp * n_t.powf(cfg.scaling_g3),
                volume: v,
            }
        })
        .collect())
}

/// Builds a per-second grid with planted lagged volume responses: unit
/// Gaussian returns everywhere, transactions every `txn_spacing` seconds
/// (signs random, volumes log-uniform in [10², 10⁶]), and
/// `returns[t + lag] += β · s·ln v(t)` for each configured profile entry.
/// With an empty profile the grid is a pure-noise null for significance
/// calibration.
pub fn planted_regression_grid(
    cfg: &SynthConfig,
    days: usize,
    txn_spacing: usize,
    seed: u64,
) -> Result<SecondGrid, SynthError> {
    if days == 0 || txn_spacing == 0 {
        return Err(SynthError::BadConfig("days and txn_spacing must be positive".into()));
    }
    let clock = DayClock::default();
    let day_len = clock.day_seconds() as usize;
    let max_lag = cfg.lag_profile.iter().map(|&(l, _)| l as usize).max().unwrap_or(0);
    let margin = max_lag.max(30);

    let n_slots = days * day_len;
    let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, STAGE_GRID, 0));
    let mut returns: Vec<f64> = (0..n_slots)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z
        })
        .collect();
    let mut signed_log_volume = vec![0.0; n_slots];
    let mut has_txn = vec![false; n_slots];

    for d in 0..days {
        let mut t = margin;
        while t + margin < day_len {
            if clock.same_session_grid((t - margin) as u32, (t + margin) as u32) {
                let s = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let v = rng.gen_range(100f64.ln()..1e6f64.ln()).exp();
                let q = s * v.ln();
                let g = d * day_len + t;
                signed_log_volume[g] = q;
                has_txn[g] = true;
                for &(lag, beta) in &cfg.lag_profile {
                    returns[g + lag as usize] += beta * q;
                }
            }
            t += txn_spacing;
        }
    }

    Ok(SecondGrid {
        stock: "000001".parse().expect("static code"),
        days: weekday_calendar(cfg.start_date, days),
        skipped_days: Vec::new(),
        returns,
        signed_log_volume,
        has_txn,
        return_std: 1.0,
    })
}

// ===== tests =====

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{detect_packages, DetectorConfig};
    use crate::impact::{package_impacts, transaction_impacts};
    use crate::ingest::write_trade_file;
    use crate::profile::{mean_volume_profile, Selector};
    use crate::regress::regress_lagged_volume;
    use crate::scaling::scaling_exponents;
    use proptest::prelude::*;

    /// Small, fast market: one stock, a dozen packages, light noise.
    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_stocks: 1,
            trading_days: 20,
            institutions_per_stock: 6,
            individuals_per_stock: 6,
            noise_traders_per_stock: 0,
            ..SynthConfig::default()
        }
    }

    fn boundary_key(
        stock: StockCode,
        investor: InvestorId,
        first: EventTime,
        last: EventTime,
        n_trades: usize,
        volume: u64,
    ) -> (StockCode, InvestorId, EventTime, EventTime, usize, u64) {
        (stock, investor, first, last, n_trades, volume)
    }

    #[test]
    fn same_config_renders_byte_identical_markets() {
        let cfg = small_cfg();
        let a = generate_market(&cfg).unwrap();
        let b = generate_market(&cfg).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.records, b.records);

        let render_bytes = |m: &SynthMarket| {
            let mut buf = Vec::new();
            write_trade_file(&mut buf, &m.records).unwrap();
            buf
        };
        assert_eq!(render_bytes(&a), render_bytes(&b));

        // a different seed changes the tape
        let other = generate_market(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.records, other.records);
    }

    #[test]
    fn truth_shortcut_matches_generated_truth() {
        let cfg = small_cfg();
        assert_eq!(planted_truth(&cfg).unwrap(), generate_market(&cfg).unwrap().truth);
    }

    #[test]
    fn zero_noise_packages_are_recovered_with_exact_boundaries() {
        let cfg = small_cfg();
        let market = generate_market(&cfg).unwrap();
        assert_eq!(market.truth.packages.len(), 12);
        assert!(market.truth.packages.iter().all(|p| p.satisfies_rules));

        let detected = detect_packages(&market.records, &DetectorConfig::default()).unwrap();
        assert!(detected.rejections.is_empty());
        let mut got: Vec<_> = detected
            .packages
            .iter()
            .map(|p| boundary_key(p.stock, p.investor, p.first, p.last, p.n_trades, p.volume))
            .collect();
        let mut want: Vec<_> = market
            .truth
            .packages
            .iter()
            .map(|p| boundary_key(p.stock, p.investor, p.first, p.last, p.n_trades, p.volume))
            .collect();
        got.sort();
        want.sort();
        assert_eq!(got, want);

        // sign and market-order counts agree with the plan too
        for d in &detected.packages {
            let t = market.truth.packages.iter().find(|p| p.investor == d.investor).unwrap();
            assert_eq!(d.sign, t.side.sign());
            assert_eq!(d.n_market, t.n_market);
        }
    }

    #[test]
    fn planted_violations_are_rejected_for_the_planted_reason() {
        let cfg = SynthConfig { violation_frac: 0.5, seed: 11, ..small_cfg() };
        let market = generate_market(&cfg).unwrap();
        let truth = &market.truth.packages;
        let n_bad = truth.iter().filter(|p| !p.satisfies_rules).count();
        assert!(n_bad > 0, "seed should plant at least one violation");

        let detected = detect_packages(&market.records, &DetectorConfig::default()).unwrap();
        assert_eq!(detected.packages.len(), truth.len() - n_bad);
        assert_eq!(detected.rejections.len(), n_bad);
        for r in &detected.rejections {
            let planted = truth.iter().find(|p| p.investor == r.investor).unwrap();
            assert_eq!(Some(r.reason), planted.violation);
        }
    }

    #[test]
    fn noise_traders_create_no_false_packages() {
        let cfg = SynthConfig { noise_traders_per_stock: 120, ..small_cfg() };
        let market = generate_market(&cfg).unwrap();
        let detected = detect_packages(&market.records, &DetectorConfig::default()).unwrap();
        let mut got: Vec<InvestorId> = detected.packages.iter().map(|p| p.investor).collect();
        let mut want: Vec<InvestorId> = market.truth.packages.iter().map(|p| p.investor).collect();
        got.sort_unstable();
        want.sort_unstable();
        assert_eq!(got, want, "every detected package is a planted one and vice versa");
    }

    #[test]
    fn truth_round_trips_through_json() {
        let truth = planted_truth(&small_cfg()).unwrap();
        let json = truth.to_json().unwrap();
        assert_eq!(GroundTruth::from_json(&json).unwrap(), truth);
    }

    #[test]
    fn default_market_has_plausible_package_scale() {
        let truth = planted_truth(&SynthConfig::default()).unwrap();
        let n = truth.packages.len() as f64;
        let mean_trades: f64 = truth.packages.iter().map(|p| p.n_trades as f64).sum::<f64>() / n;
        let mean_volume: f64 = truth.packages.iter().map(|p| p.volume as f64).sum::<f64>() / n;
        assert!((10.0..100.0).contains(&mean_trades), "mean trades {mean_trades}");
        assert!((3e4..5e5).contains(&mean_volume), "mean volume {mean_volume}");
    }

    #[test]
    fn open_boost_concentrates_volume_near_the_open() {
        let cfg = SynthConfig {
            open_boost: 4.0,
            close_boost: 0.0,
            trading_days: 10,
            institutions_per_stock: 30,
            individuals_per_stock: 30,
            noise_traders_per_stock: 0,
            n_stocks: 1,
            ..SynthConfig::default()
        };
        let market = generate_market(&cfg).unwrap();
        let detected = detect_packages(&market.records, &DetectorConfig::default()).unwrap();
        let profile =
            mean_volume_profile(&market.records, &detected.packages, Selector::All, 10).unwrap();
        let first = profile.values[0].expect("first bin populated");
        let mid = profile.values[5].expect("mid bin populated");
        assert!(first > 1.5 * mid, "first-decile mean {first} vs mid-day {mid}");
    }

    #[test]
    fn market_orders_move_prices_with_them_and_limit_orders_against() {
        let market = generate_market(&SynthConfig::default()).unwrap();
        let detected = detect_packages(&market.records, &DetectorConfig::default()).unwrap();
        let impacts = transaction_impacts(&market.records, &detected.packages).unwrap();

        let mean = |agg: Aggressor| {
            let vals: Vec<f64> = impacts
                .impacts
                .iter()
                .filter(|i| i.aggressor == agg)
                .map(|i| i.impact)
                .collect();
            assert!(vals.len() > 100);
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        assert!(mean(Aggressor::Market) > 0.05, "market orders push prices their way");
        assert!(mean(Aggressor::Limit) < -0.05, "limit executions print against the passive side");

        // sign folding on package impacts: sells pool with buys at R > 0
        let pkg = package_impacts(&detected.packages).unwrap();
        let sells: Vec<f64> =
            pkg.iter().filter(|p| p.sign < 0).map(|p| p.impact).collect();
        assert!(sells.len() > 20);
        assert!(sells.iter().sum::<f64>() / sells.len() as f64 > 0.0);
    }

    #[test]
    fn scaling_sampler_recovers_planted_exponents() {
        // volume exponent 1 makes package sizes log-uniform, so the
        // equal-count bins share one log-width and the binned slope
        // estimator is unbiased; recovery is then limited only by noise
        let cfg = SynthConfig { volume_delta: 1.0, ..SynthConfig::default() };
        let vars = planted_scaling_packages(&cfg, 20_000, 5).unwrap();
        let est = scaling_exponents(&vars, 20, 0.5).unwrap();
        assert!(
            (est.g2.exponent - cfg.scaling_g2).abs() < 2.0 * est.g2.exponent_stderr,
            "g2 {} ± {}",
            est.g2.exponent,
            est.g2.exponent_stderr
        );
        assert!(
            (est.g3.exponent - cfg.scaling_g3).abs() < 2.0 * est.g3.exponent_stderr,
            "g3 {} ± {}",
            est.g3.exponent,
            est.g3.exponent_stderr
        );
        assert!(est.identity_holds(2.0), "gap {} σ {}", est.product_gap, est.gap_sigma);
    }

    #[test]
    fn scaling_identity_survives_heavy_tailed_volumes() {
        // under the default heavy-tailed volume law the wide upper bins
        // depress each fitted exponent, but the biases track each other, so
        // the product identity g1 = g2·g3 still holds within errors
        let cfg = SynthConfig::default();
        let vars = planted_scaling_packages(&cfg, 20_000, 5).unwrap();
        let est = scaling_exponents(&vars, 20, 0.5).unwrap();
        assert!(est.identity_holds(2.0), "gap {} σ {}", est.product_gap, est.gap_sigma);
    }

    #[test]
    fn impact_sampler_recovers_planted_curve() {
        use crate::impact::{conditional_package_impact, fit_impact_powerlaw, FmFilter, PackageCondition};
        let cfg = SynthConfig::default();
        let impacts = planted_impact_packages(&cfg, 10_000, 3).unwrap();
        let series =
            conditional_package_impact(&impacts, PackageCondition::Volume, 20, FmFilter::All)
                .unwrap();
        let fit = fit_impact_powerlaw(&series, 0.0).unwrap();
        assert!(
            (fit.exponent - cfg.impact_exponent).abs() < 2.0 * fit.exponent_stderr,
            "exponent {} ± {}",
            fit.exponent,
            fit.exponent_stderr
        );
        assert!(fit.excluded_bins.is_empty());
    }

    #[test]
    fn regression_grid_plants_recoverable_lag_profile() {
        let cfg = SynthConfig::default();
        let grid = planted_regression_grid(&cfg, 2, 45, 9).unwrap();
        let fits = regress_lagged_volume(&grid, &crate::regress::VOLUME_LAGS).unwrap();
        let b0 = fits[0].result.coefficient("s_ln_v").unwrap();
        assert!((b0.beta - 0.1).abs() < 2.0 * b0.stderr);
        assert!(b0.significant);
        let b5 = fits[1].result.coefficient("s_ln_v").unwrap();
        assert!((b5.beta + 0.02).abs() < 2.0 * b5.stderr);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let err = |cfg: SynthConfig| match planted_truth(&cfg) {
            Err(SynthError::BadConfig(m)) => m,
            other => panic!("expected config rejection, got {other:?}"),
        };
        assert!(err(SynthConfig { trading_days: 0, ..Default::default() }).contains("trading_days"));
        assert!(err(SynthConfig { n_stocks: 0, ..Default::default() }).contains("n_stocks"));
        assert!(
            err(SynthConfig { scaling_t_amp: 1e5, ..Default::default() }).contains("trading day")
        );
        assert!(matches!(
            planted_truth(&SynthConfig { volume_x_min: -1.0, ..Default::default() }),
            Err(SynthError::BadConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        /// Planted packages always honor their labels: compliant ones pass
        /// both volume-dominance and market-order rules strictly, violations
        /// break exactly the labeled rule.
        #[test]
        fn planted_labels_match_package_contents(seed in 0u64..1000) {
            let cfg = SynthConfig {
                seed,
                violation_frac: 0.3,
                n_stocks: 1,
                trading_days: 15,
                institutions_per_stock: 8,
                individuals_per_stock: 8,
                noise_traders_per_stock: 0,
                ..SynthConfig::default()
            };
            let market = generate_market(&cfg).unwrap();
            for (planted, records) in market.truth.packages.iter().map(|p| {
                let recs: Vec<&TradeRecord> =
                    market.records.iter().filter(|r| r.investor == p.investor).collect();
                (p, recs)
            }) {
                let volume: u64 = records.iter().map(|r| r.volume).sum();
                prop_assert_eq!(volume, planted.volume);
                let dominant: u64 = records
                    .iter()
                    .filter(|r| r.side == planted.side)
                    .map(|r| r.volume)
                    .sum();
                let n_market =
                    records.iter().filter(|r| r.aggressor == Aggressor::Market).count();
                let frac = dominant as f64 / volume as f64;
                match planted.violation {
                    None => {
                        prop_assert!(frac > cfg.theta);
                        prop_assert!(n_market > cfg.min_market_trades as usize);
                    }
                    Some(RejectReason::ThetaFail) => {
                        prop_assert!(frac <= cfg.theta);
                        prop_assert!(n_market > cfg.min_market_trades as usize);
                    }
                    Some(RejectReason::TooFewMarketOrders) => {
                        prop_assert!(frac > cfg.theta);
                        prop_assert!(n_market <= cfg.min_market_trades as usize);
                    }
                }
                // all trades in-session, within one day, distinct seconds
                prop_assert!(records.windows(2).all(|w| w[0].time < w[1].time));
                prop_assert!(records.iter().all(|r| r.time.date == planted.first.date));
            }
        }
    }
}
