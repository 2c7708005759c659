//! Power-law distributions and their estimation.
//!
//! Two regimes are supported:
//!
//! * **Bounded general**: `P(x) = c·x^(−δ)` on a finite support
//!   `[x_min, x_max]`, valid for any exponent including `δ < 1`, with
//!   `c = (1 − δ) / (x_max^(1−δ) − x_min^(1−δ))`. The exponent is fitted by
//!   solving the likelihood score equation
//!   `n/(δ−1) − n·(x_min·ln x_min·x_max^δ − x_max·ln x_max·x_min^δ) /
//!   (x_max·x_min^δ − x_min·x_max^δ) − Σ ln x_i = 0`,
//!   which this module evaluates in the cancellation-free form
//!   `n·(ln x_max + ln ρ·g(w)) − Σ ln x_i` with `ρ = x_max/x_min`,
//!   `w = (1−δ)·ln ρ` and `g(w) = 1/expm1(w) − 1/w`.
//! * **Unbounded tail**: `P(x) = c·x^(−δ)` on `[x_min, ∞)` for `δ > 1`, with
//!   `c = (δ−1)·x_min^(δ−1)` and the closed-form estimator
//!   `δ̂ = 1 + n·(Σ ln(x_i/x_min))⁻¹`.
//!
//! Every formula passes smoothly through the removable singularity at
//! `δ = 1` (where the bounded law degenerates to `c = 1/ln(x_max/x_min)`).
//!
//! Goodness of fit uses the Kolmogorov–Smirnov statistic in the sup-norm
//! convention (empirical CDF evaluated on both sides of each step), and
//! [`fit_with_xmin_scan`] selects the tail start `x_min` minimizing it, as
//! is standard for tail fitting.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which support the law lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Finite support `[x_min, x_max]`; any exponent.
    BoundedGeneral,
    /// Infinite tail `[x_min, ∞)`; requires `δ > 1`.
    UnboundedTail,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("support must satisfy 0 < x_min < x_max, got [{x_min}, {x_max}]")]
    BadSupport { x_min: f64, x_max: f64 },
    #[error("need at least {need} samples, got {n}")]
    InsufficientSamples { n: usize, need: usize },
    #[error("sample {x} outside support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
    #[error("samples must be positive, found {0}")]
    NonPositiveSample(f64),
    #[error("all samples identical ({0}); exponent unbounded")]
    DegenerateSample(f64),
    #[error("all tail samples equal x_min; estimated exponent infinite")]
    InfiniteExponent,
    #[error("score has no root in [{lo}, {hi}] (score {score_lo:.3e} … {score_hi:.3e})")]
    NoRootInBracket { lo: f64, hi: f64, score_lo: f64, score_hi: f64 },
    #[error("no tail start produced a valid fit")]
    ScanFailed,
    #[error("quantile must lie in [0, 1), got {0}")]
    BadQuantile(f64),
    #[error("unbounded tail requires delta > 1, got {0}")]
    TailExponentTooSmall(f64),
}

/// A fitted (or explicitly constructed) power law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub regime: Regime,
    /// Exponent δ of `P(x) ∝ x^(−δ)`.
    pub delta: f64,
    /// Normalization constant.
    pub c: f64,
    /// Lower support edge (tail start).
    pub x_min: f64,
    /// Upper support edge; `None` for the unbounded tail.
    pub x_max: Option<f64>,
    /// Standard error of δ from the observed Fisher information.
    pub sigma: f64,
    /// Kolmogorov–Smirnov distance of the fitted law to the sample.
    pub ks: f64,
    /// Number of samples at or above `x_min` used in the fit.
    pub n_tail: usize,
}

// ===== numerically stable kernels =====

/// `g(w) = 1/expm1(w) − 1/w`, smooth at `w = 0` where it equals −1/2.
fn expm1_recip_gap(w: f64) -> f64 {
    if w.abs() < 1e-4 {
        // Bernoulli series: 1/expm1(w) = 1/w − 1/2 + w/12 − w³/720 + …
        -0.5 + w / 12.0 - w.powi(3) / 720.0
    } else {
        w.exp_m1().recip() - w.recip()
    }
}

/// `w / expm1(w)`, smooth at `w = 0` where it equals 1.
fn w_over_expm1(w: f64) -> f64 {
    if w.abs() < 1e-4 {
        1.0 + w * (-0.5 + w / 12.0) - w.powi(4) / 720.0
    } else {
        w / w.exp_m1()
    }
}

fn check_support(x_min: f64, x_max: f64) -> Result<(), FitError> {
    if !(x_min > 0.0 && x_max > x_min && x_min.is_finite() && x_max.is_finite()) {
        return Err(FitError::BadSupport { x_min, x_max });
    }
    Ok(())
}

/// `ln c` for the bounded law, smooth in δ.
fn ln_c_bounded(delta: f64, x_min: f64, x_max: f64) -> f64 {
    let ln_rho = (x_max / x_min).ln();
    let u = 1.0 - delta;
    let w = u * ln_rho;
    // c = u / (x_min^u · expm1(w)) = (w/expm1(w)) / (ln ρ · x_min^u)
    w_over_expm1(w).ln() - ln_rho.ln() - u * x_min.ln()
}

/// Score (∂ log-likelihood/∂δ) of the bounded law, given the sample size and
/// the sum of log-samples. Strictly decreasing in δ.
fn score_bounded(delta: f64, x_min: f64, x_max: f64, n: f64, sum_ln: f64) -> f64 {
    let ln_rho = (x_max / x_min).ln();
    let w = (1.0 - delta) * ln_rho;
    n * (x_max.ln() + ln_rho * expm1_recip_gap(w)) - sum_ln
}

fn cdf_bounded(delta: f64, x_min: f64, x_max: f64, x: f64) -> f64 {
    let u = 1.0 - delta;
    let a = u * (x / x_min).ln();
    let b = u * (x_max / x_min).ln();
    if b.abs() < 1e-12 {
        // δ → 1 limit: F(x) = ln(x/x_min) / ln(x_max/x_min)
        (x / x_min).ln() / (x_max / x_min).ln()
    } else {
        a.exp_m1() / b.exp_m1()
    }
}

fn quantile_bounded(delta: f64, x_min: f64, x_max: f64, q: f64) -> f64 {
    let u = 1.0 - delta;
    let w = u * (x_max / x_min).ln();
    if w.abs() < 1e-12 {
        x_min * ((x_max / x_min).ln() * q).exp()
    } else {
        x_min * ((q * w.exp_m1()).ln_1p() / u).exp()
    }
}

impl PowerLawFit {
    /// Constructs a law from explicit parameters (nothing fitted: `sigma`,
    /// `ks`, and `n_tail` are zero). Used to sample planted distributions.
    pub fn from_params(
        regime: Regime,
        delta: f64,
        x_min: f64,
        x_max: Option<f64>,
    ) -> Result<Self, FitError> {
        let c = match regime {
            Regime::BoundedGeneral => {
                let x_max = x_max.ok_or(FitError::BadSupport { x_min, x_max: f64::NAN })?;
                check_support(x_min, x_max)?;
                ln_c_bounded(delta, x_min, x_max).exp()
            }
            Regime::UnboundedTail => {
                if x_min.is_nan() || x_min <= 0.0 {
                    return Err(FitError::BadSupport { x_min, x_max: f64::INFINITY });
                }
                if delta <= 1.0 {
                    return Err(FitError::TailExponentTooSmall(delta));
                }
                (delta - 1.0) * x_min.powf(delta - 1.0)
            }
        };
        Ok(PowerLawFit {
            regime,
            delta,
            c,
            x_min,
            x_max: match regime {
                Regime::BoundedGeneral => x_max,
                Regime::UnboundedTail => None,
            },
            sigma: 0.0,
            ks: 0.0,
            n_tail: 0,
        })
    }

    fn support_hi(&self) -> f64 {
        self.x_max.unwrap_or(f64::INFINITY)
    }

    fn check_in_support(&self, x: f64) -> Result<(), FitError> {
        if x < self.x_min || x > self.support_hi() {
            return Err(FitError::OutOfSupport { x, lo: self.x_min, hi: self.support_hi() });
        }
        Ok(())
    }

    /// Probability density at `x`; errors outside the support.
    pub fn pdf(&self, x: f64) -> Result<f64, FitError> {
        self.check_in_support(x)?;
        Ok(self.c * x.powf(-self.delta))
    }

    /// Cumulative distribution at `x`; 0 at `x_min`, 1 at `x_max` (or toward
    /// the tail); errors outside the support.
    pub fn cdf(&self, x: f64) -> Result<f64, FitError> {
        self.check_in_support(x)?;
        Ok(match self.regime {
            Regime::BoundedGeneral => cdf_bounded(self.delta, self.x_min, self.x_max.unwrap(), x),
            Regime::UnboundedTail => -(-(self.delta - 1.0) * (x / self.x_min).ln()).exp_m1(),
        })
    }

    /// Inverse CDF for `q ∈ [0, 1)`.
    pub fn quantile(&self, q: f64) -> Result<f64, FitError> {
        if !(0.0..1.0).contains(&q) {
            return Err(FitError::BadQuantile(q));
        }
        Ok(match self.regime {
            Regime::BoundedGeneral => quantile_bounded(self.delta, self.x_min, self.x_max.unwrap(), q),
            Regime::UnboundedTail => self.x_min * (1.0 - q).powf(-1.0 / (self.delta - 1.0)),
        })
    }

    /// Draws `count` samples by inverse-CDF transform of a seeded uniform
    /// stream. The same seed always yields the same sequence.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| self.quantile(rng.gen::<f64>()).expect("uniform draw lies in [0,1)"))
            .collect()
    }
}

// ===== maximum-likelihood estimation =====

fn validate_tail(samples: &[f64], x_min: f64, x_max: f64, need: usize) -> Result<(), FitError> {
    if samples.len() < need {
        return Err(FitError::InsufficientSamples { n: samples.len(), need });
    }
    for &x in samples {
        if x.is_nan() || x <= 0.0 {
            return Err(FitError::NonPositiveSample(x));
        }
        if x < x_min || x > x_max {
            return Err(FitError::OutOfSupport { x, lo: x_min, hi: x_max });
        }
    }
    Ok(())
}

/// Maximum-likelihood exponent of the bounded law on `[x_min, x_max]`:
/// the unique root of the score equation, found by bracketed bisection to
/// machine precision (the bracket `[10⁻⁶, 20]` expands geometrically, in
/// both directions, when the root lies outside). Needs ≥ 10 samples inside
/// the support.
pub fn mle_delta_bounded(samples: &[f64], x_min: f64, x_max: f64) -> Result<f64, FitError> {
    check_support(x_min, x_max)?;
    validate_tail(samples, x_min, x_max, 10)?;
    let first = samples[0];
    if samples.iter().all(|&x| x == first) {
        return Err(FitError::DegenerateSample(first));
    }
    let n = samples.len() as f64;
    let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();
    solve_bounded_score(x_min, x_max, n, sum_ln)
}

fn solve_bounded_score(x_min: f64, x_max: f64, n: f64, sum_ln: f64) -> Result<f64, FitError> {
    let score = |d: f64| score_bounded(d, x_min, x_max, n, sum_ln);

    // The score is strictly decreasing, so a root needs score(lo) > 0 and
    // score(hi) < 0.
    let (mut lo, mut hi) = (1e-6, 20.0);
    let mut grow = 1.0;
    while score(lo) <= 0.0 {
        lo -= grow;
        grow *= 2.0;
        if lo < -1e6 {
            return Err(FitError::NoRootInBracket {
                lo,
                hi,
                score_lo: score(lo),
                score_hi: score(hi),
            });
        }
    }
    while score(hi) >= 0.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(FitError::NoRootInBracket {
                lo,
                hi,
                score_lo: score(lo),
                score_hi: score(hi),
            });
        }
    }

    // Bisection to machine precision; each evaluation is O(1) given the
    // sufficient statistics, so the fixed iteration count is cheap and the
    // returned root satisfies |Δδ| ≪ 10⁻⁸.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if score(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form maximum-likelihood exponent of the unbounded tail law:
/// `δ̂ = 1 + n · (Σ ln(x_i/x_min))⁻¹`. Needs ≥ 2 samples at or above
/// `x_min`; fails with [`FitError::InfiniteExponent`] when every sample
/// equals `x_min`.
pub fn mle_delta_unbounded(samples: &[f64], x_min: f64) -> Result<f64, FitError> {
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(FitError::BadSupport { x_min, x_max: f64::INFINITY });
    }
    validate_tail(samples, x_min, f64::INFINITY, 2)?;
    let sum_ln_ratio: f64 = samples.iter().map(|x| (x / x_min).ln()).sum();
    if sum_ln_ratio == 0.0 {
        return Err(FitError::InfiniteExponent);
    }
    Ok(1.0 + samples.len() as f64 / sum_ln_ratio)
}

// ===== standard errors (observed Fisher information) =====

/// Standard error of the bounded-law exponent: `σ = (−n·ℓ″(δ̂))^(−1/2)`
/// where `ℓ` is the per-observation log-likelihood, evaluated by central
/// differences with step `10⁻⁴·δ̂` (floored away from zero for near-zero
/// exponents).
pub fn sigma_bounded(delta: f64, x_min: f64, x_max: f64, n: usize, mean_ln: f64) -> f64 {
    let h = 1e-4 * delta.abs().max(1e-2);
    let ell = |d: f64| ln_c_bounded(d, x_min, x_max) - d * mean_ln;
    let dd = (ell(delta + h) - 2.0 * ell(delta) + ell(delta - h)) / (h * h);
    let info = -dd * n as f64;
    if info > 0.0 {
        info.powf(-0.5)
    } else {
        f64::NAN
    }
}

/// Standard error of the tail exponent: `σ = (δ̂ − 1)/√n` (the observed
/// Fisher information of the tail law in closed form).
pub fn sigma_unbounded(delta: f64, n: usize) -> f64 {
    (delta - 1.0) / (n as f64).sqrt()
}

// ===== goodness of fit =====

/// Kolmogorov–Smirnov statistic of `fit` against the samples:
/// `sup_x |F_emp(x) − F(x)|` with the empirical CDF evaluated on both sides
/// of each step. Every sample must lie in the support.
pub fn ks_statistic(samples: &[f64], fit: &PowerLawFit) -> Result<f64, FitError> {
    if samples.is_empty() {
        return Err(FitError::InsufficientSamples { n: 0, need: 1 });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    fit.check_in_support(sorted[0])?;
    fit.check_in_support(*sorted.last().unwrap())?;
    Ok(ks_sorted(&sorted, |x| match fit.regime {
        Regime::BoundedGeneral => cdf_bounded(fit.delta, fit.x_min, fit.x_max.unwrap(), x),
        Regime::UnboundedTail => -(-(fit.delta - 1.0) * (x / fit.x_min).ln()).exp_m1(),
    }))
}

fn ks_sorted(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut sup = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let below = (i as f64 / n - f).abs();
        let above = ((i + 1) as f64 / n - f).abs();
        sup = sup.max(below.max(above));
    }
    sup
}

// ===== direct fits and the x_min scan =====

/// Fits the bounded law on a known support and attaches σ and KS.
pub fn fit_bounded(samples: &[f64], x_min: f64, x_max: f64) -> Result<PowerLawFit, FitError> {
    let delta = mle_delta_bounded(samples, x_min, x_max)?;
    let n = samples.len();
    let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();
    let mut fit = PowerLawFit::from_params(Regime::BoundedGeneral, delta, x_min, Some(x_max))?;
    fit.sigma = sigma_bounded(delta, x_min, x_max, n, sum_ln / n as f64);
    fit.n_tail = n;
    fit.ks = ks_statistic(samples, &fit)?;
    Ok(fit)
}

/// Fits the unbounded tail law at a known tail start and attaches σ and KS.
pub fn fit_tail(samples: &[f64], x_min: f64) -> Result<PowerLawFit, FitError> {
    let delta = mle_delta_unbounded(samples, x_min)?;
    let mut fit = PowerLawFit::from_params(Regime::UnboundedTail, delta, x_min, None)?;
    fit.sigma = sigma_unbounded(delta, samples.len());
    fit.n_tail = samples.len();
    fit.ks = ks_statistic(samples, &fit)?;
    Ok(fit)
}

/// Upper bound on the number of tail starts tried by the scan. Up to this
/// many samples the scan is exhaustive over every unique candidate value;
/// beyond it candidates are thinned evenly over the sorted unique values.
pub const SCAN_EXHAUSTIVE_LIMIT: usize = 1_000;

/// Fits a power law at every admissible tail start and keeps the one whose
/// KS distance is smallest (ties to the smaller `x_min`).
///
/// Candidates are the sorted unique sample values excluding the top ten
/// order statistics, so the smallest admissible tail holds eleven points.
/// For samples up to [`SCAN_EXHAUSTIVE_LIMIT`] the scan is exhaustive;
/// larger samples thin the candidate list evenly (first and last candidates
/// always included) to keep the scan near-linear. Candidates are fitted in
/// parallel; the minimization is a total order on (KS, x_min), so the result
/// does not depend on thread scheduling.
pub fn fit_with_xmin_scan(samples: &[f64], regime: Regime) -> Result<PowerLawFit, FitError> {
    let n = samples.len();
    if n < 12 {
        return Err(FitError::InsufficientSamples { n, need: 12 });
    }
    if n < 50 {
        log::warn!("x_min scan on only {n} samples; exponent estimates will be noisy");
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted[0].is_nan() || sorted[0] <= 0.0 {
        return Err(FitError::NonPositiveSample(sorted[0]));
    }
    let x_max = *sorted.last().unwrap();

    // unique values among the first n−10 order statistics
    let eligible = &sorted[..n - 10];
    let mut candidates: Vec<f64> = Vec::new();
    for &x in eligible {
        if candidates.last() != Some(&x) {
            candidates.push(x);
        }
    }
    let candidates: Vec<f64> = if candidates.len() <= scan_budget(n) {
        candidates
    } else {
        let budget = scan_budget(n);
        (0..budget)
            .map(|k| candidates[k * (candidates.len() - 1) / (budget - 1)])
            .collect()
    };

    let best = candidates
        .par_iter()
        .filter_map(|&x_min| {
            let start = sorted.partition_point(|&v| v < x_min);
            let tail = &sorted[start..];
            let sum_ln: f64 = tail.iter().map(|x| x.ln()).sum();
            let nt = tail.len() as f64;
            let (delta, cdf): (f64, Box<dyn Fn(f64) -> f64>) = match regime {
                Regime::BoundedGeneral => {
                    if tail[0] == tail[tail.len() - 1] || tail.len() < 10 {
                        return None;
                    }
                    let delta = solve_bounded_score(x_min, x_max, nt, sum_ln).ok()?;
                    (delta, Box::new(move |x| cdf_bounded(delta, x_min, x_max, x)))
                }
                Regime::UnboundedTail => {
                    let sum_ln_ratio = sum_ln - nt * x_min.ln();
                    if sum_ln_ratio <= 0.0 {
                        return None;
                    }
                    let delta = 1.0 + nt / sum_ln_ratio;
                    (delta, Box::new(move |x| -(-(delta - 1.0) * (x / x_min).ln()).exp_m1()))
                }
            };
            let ks = ks_sorted(tail, cdf);
            Some((ks, x_min, delta, tail.len(), sum_ln))
        })
        .min_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());

    let (ks, x_min, delta, n_tail, sum_ln) = best.ok_or(FitError::ScanFailed)?;
    let mut fit = match regime {
        Regime::BoundedGeneral => {
            let mut f = PowerLawFit::from_params(regime, delta, x_min, Some(x_max))?;
            f.sigma = sigma_bounded(delta, x_min, x_max, n_tail, sum_ln / n_tail as f64);
            f
        }
        Regime::UnboundedTail => {
            let mut f = PowerLawFit::from_params(regime, delta, x_min, None)?;
            f.sigma = sigma_unbounded(delta, n_tail);
            f
        }
    };
    fit.ks = ks;
    fit.n_tail = n_tail;
    Ok(fit)
}

/// Candidate budget for the scan at sample size `n`.
fn scan_budget(n: usize) -> usize {
    if n <= SCAN_EXHAUSTIVE_LIMIT {
        n
    } else {
        (2_000_000 / n).clamp(100, SCAN_EXHAUSTIVE_LIMIT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn bounded(delta: f64, x_min: f64, x_max: f64) -> PowerLawFit {
        PowerLawFit::from_params(Regime::BoundedGeneral, delta, x_min, Some(x_max)).unwrap()
    }

    fn tail(delta: f64, x_min: f64) -> PowerLawFit {
        PowerLawFit::from_params(Regime::UnboundedTail, delta, x_min, None).unwrap()
    }

    /// Simpson's rule over the support.
    fn integrate_pdf(fit: &PowerLawFit, lo: f64, hi: f64, steps: usize) -> f64 {
        let h = (hi - lo) / steps as f64;
        let f = |x: f64| fit.pdf(x).unwrap();
        let mut acc = f(lo) + f(hi);
        for i in 1..steps {
            let x = lo + i as f64 * h;
            acc += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn bounded_pdf_integrates_to_one() {
        for (delta, x_min, x_max) in [(0.3, 30.0, 14_400.0), (0.95, 1.0, 100.0), (2.5, 1.0, 50.0), (1.0 + 1e-9, 2.0, 90.0)] {
            let fit = bounded(delta, x_min, x_max);
            let integral = integrate_pdf(&fit, x_min, x_max, 200_000);
            assert!(
                (integral - 1.0).abs() < 1e-6,
                "∫pdf = {integral} for δ={delta}"
            );
        }
    }

    #[test]
    fn cdf_spans_zero_to_one() {
        let fit = bounded(0.3, 30.0, 14_400.0);
        assert!(fit.cdf(30.0).unwrap().abs() < 1e-12);
        assert!((fit.cdf(14_400.0).unwrap() - 1.0).abs() < 1e-12);
        let t = tail(2.4, 100.0);
        assert!(t.cdf(100.0).unwrap().abs() < 1e-12);
        assert!((t.cdf(1e12).unwrap() - 1.0).abs() < 1e-3);
        assert!(matches!(t.cdf(99.0), Err(FitError::OutOfSupport { .. })));
    }

    #[test]
    fn quantile_inverts_cdf() {
        for fit in [bounded(0.3, 30.0, 14_400.0), bounded(2.2, 1.0, 1e4), tail(2.92, 10.0)] {
            for q in [0.0, 0.001, 0.25, 0.5, 0.9, 0.999] {
                let x = fit.quantile(q).unwrap();
                assert!((fit.cdf(x).unwrap() - q).abs() < 1e-10, "q={q}");
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let fit = tail(2.4, 100.0);
        assert_eq!(fit.sample(64, 7), fit.sample(64, 7));
        assert_ne!(fit.sample(64, 7), fit.sample(64, 8));
    }

    #[test]
    fn bounded_mle_recovers_planted_exponents() {
        for (seed, delta) in [(1u64, 0.30), (2, 0.75), (3, 2.2)] {
            let law = bounded(delta, 30.0, 14_400.0);
            let samples = law.sample(20_000, seed);
            let fitted = fit_bounded(&samples, 30.0, 14_400.0).unwrap();
            assert!(
                (fitted.delta - delta).abs() < 2.0 * fitted.sigma,
                "δ̂={} σ={} planted {delta}",
                fitted.delta,
                fitted.sigma
            );
        }
    }

    #[test]
    fn uniform_samples_fit_with_near_zero_exponent() {
        // Uniform on [1, e] is the bounded law with δ = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<f64> =
            (0..20_000).map(|_| 1.0 + rng.gen::<f64>() * (std::f64::consts::E - 1.0)).collect();
        let x_max = samples.iter().cloned().fold(f64::MIN, f64::max);
        let fitted = fit_bounded(&samples, 1.0, x_max).unwrap();
        assert!(
            fitted.delta.abs() < 2.0 * fitted.sigma,
            "δ̂={} σ={}",
            fitted.delta,
            fitted.sigma
        );
    }

    #[test]
    fn unbounded_mle_matches_closed_form_and_recovers() {
        let law = tail(2.92, 10.0);
        let samples = law.sample(50_000, 4);
        let delta = mle_delta_unbounded(&samples, 10.0).unwrap();
        let sum: f64 = samples.iter().map(|x| (x / 10.0).ln()).sum();
        assert_eq!(delta, 1.0 + samples.len() as f64 / sum);
        assert!((delta - 2.92).abs() < 2.0 * sigma_unbounded(delta, samples.len()));
    }

    #[test]
    fn score_is_continuous_through_delta_one() {
        let (x_min, x_max, n, sum_ln) = (2.0, 800.0, 100.0, 340.0);
        let at = |d: f64| score_bounded(d, x_min, x_max, n, sum_ln);
        let limit = n * (x_min.ln() + x_max.ln()) / 2.0 - sum_ln;
        assert!((at(1.0) - limit).abs() < 1e-9);
        assert!((at(1.0 - 1e-7) - limit).abs() < 1e-3);
        assert!((at(1.0 + 1e-7) - limit).abs() < 1e-3);
        // strictly decreasing across the join
        assert!(at(0.999) > at(1.0) && at(1.0) > at(1.001));
    }

    #[test]
    fn score_at_root_is_negligible() {
        let law = bounded(0.6, 5.0, 5_000.0);
        let samples = law.sample(10_000, 11);
        let delta = mle_delta_bounded(&samples, 5.0, 5_000.0).unwrap();
        let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();
        let s = score_bounded(delta, 5.0, 5_000.0, samples.len() as f64, sum_ln);
        assert!(s.abs() < 1e-6, "score at root = {s}");
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        let flat = vec![5.0; 100];
        assert!(matches!(
            mle_delta_bounded(&flat, 1.0, 10.0),
            Err(FitError::DegenerateSample(_))
        ));
        assert!(matches!(mle_delta_unbounded(&flat, 5.0), Err(FitError::InfiniteExponent)));
        assert!(matches!(
            mle_delta_bounded(&[1.0; 5], 1.0, 10.0),
            Err(FitError::InsufficientSamples { need: 10, .. })
        ));
    }

    #[test]
    fn ks_of_exact_quantile_points_is_half_step() {
        // samples at quantiles (i − 0.5)/n have two-sided gap exactly 0.5/n
        let fit = tail(2.5, 1.0);
        let n = 100usize;
        let samples: Vec<f64> =
            (1..=n).map(|i| fit.quantile((i as f64 - 0.5) / n as f64).unwrap()).collect();
        let ks = ks_statistic(&samples, &fit).unwrap();
        assert!((ks - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn single_sample_at_median_has_ks_half() {
        let fit = tail(2.0, 1.0);
        let x = fit.quantile(0.5).unwrap();
        assert!((ks_statistic(&[x], &fit).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scan_recovers_tail_start_and_exponent() {
        let law = tail(2.4, 100.0);
        let samples = law.sample(5_000, 21);
        let fit = fit_with_xmin_scan(&samples, Regime::UnboundedTail).unwrap();
        assert!((fit.delta - 2.4).abs() < 3.0 * fit.sigma, "δ̂={} σ={}", fit.delta, fit.sigma);
        // pure power-law data: the best tail start keeps most of the sample
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        assert!(fit.x_min <= sorted[samples.len() / 2]);
        assert!(fit.n_tail >= samples.len() / 3);
    }

    #[test]
    fn scan_sigma_shrinks_like_inverse_sqrt_n() {
        let law = tail(2.4, 100.0);
        let small = fit_with_xmin_scan(&law.sample(2_000, 5), Regime::UnboundedTail).unwrap();
        let large = fit_with_xmin_scan(&law.sample(8_000, 5), Regime::UnboundedTail).unwrap();
        let expected = (small.n_tail as f64 / large.n_tail as f64).sqrt();
        let observed = large.sigma / small.sigma;
        assert!(
            (observed / expected - 1.0).abs() < 0.2,
            "σ ratio {observed} vs n-ratio prediction {expected}"
        );
    }

    proptest! {
        /// Multiplying samples and x_min by a power of two leaves the tail
        /// estimator exactly unchanged (ratios are exact in binary floating
        /// point); arbitrary positive factors agree to 1e-12.
        #[test]
        fn tail_mle_is_scale_equivariant(
            seed in 0u64..200,
            pow in -8i32..8,
            k in 0.1f64..10.0,
        ) {
            let law = tail(2.3, 1.0);
            let samples = law.sample(200, seed);
            let base = mle_delta_unbounded(&samples, 1.0).unwrap();

            let two_k = (2.0f64).powi(pow);
            let scaled: Vec<f64> = samples.iter().map(|x| x * two_k).collect();
            prop_assert_eq!(base, mle_delta_unbounded(&scaled, two_k).unwrap());

            let scaled: Vec<f64> = samples.iter().map(|x| x * k).collect();
            let rescaled = mle_delta_unbounded(&scaled, k).unwrap();
            prop_assert!((base - rescaled).abs() < 1e-12 * base.abs());
        }

        /// The bounded-law CDF is within [0,1] and monotone on random
        /// supports and exponents either side of 1.
        #[test]
        fn bounded_cdf_is_monotone(
            delta in 0.05f64..3.0,
            x_min in 0.5f64..10.0,
            span in 1.5f64..1000.0,
        ) {
            let x_max = x_min * span;
            let fit = bounded(delta, x_min, x_max);
            let mut prev = 0.0;
            for i in 0..=50 {
                let x = if i == 50 { x_max } else { x_min + (x_max - x_min) * i as f64 / 50.0 };
                let f = fit.cdf(x).unwrap();
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&f));
                prop_assert!(f >= prev - 1e-12);
                prev = f;
            }
        }
    }
}
