//! Scaling relations between package variables.
//!
//! Execution time T, trade count N, and total volume V of trade packages are
//! tied together by approximate power laws: ⟨T|V⟩ ∝ V^g₁, ⟨N|V⟩ ∝ V^g₂ and
//! ⟨T|N⟩ ∝ N^g₃, which forces the consistency identity g₁ = g₂·g₃. The
//! exponents are measured the standard way: equal-count bins on the
//! conditioning variable, a conditional mean per bin, and an ordinary
//! least-squares line through the bin means in log-log coordinates,
//! restricted to the large-value end where the power law holds.

use serde::Serialize;
use thiserror::Error;

use crate::detect::TradePackage;
use crate::stats::{self, StatsError};

/// Default number of equal-count bins.
pub const DEFAULT_BINS: usize = 20;
/// Default fraction of bins (largest conditioning values) used in log-log fits.
pub const DEFAULT_WINDOW_TOP_FRAC: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalingError {
    #[error("need at least {need} samples for {bins} bins, got {got}")]
    TooFewSamples { need: usize, bins: usize, got: usize },
    #[error("x/y length mismatch: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("bin {bin} has nonpositive mean ({cond}, {resp}); log-log fit undefined")]
    NonPositiveBinMean { bin: usize, cond: f64, resp: f64 },
    #[error("log-log window keeps {got} bins; need at least 3")]
    TooFewBins { got: usize },
    #[error("regression failed: {0}")]
    Stats(#[from] StatsError),
}

// ===== equal-count binning =====

/// Conditional means of a response on equal-count bins of a conditioning
/// variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedSeries {
    /// Bin edges on the conditioning variable, length `n_bins + 1`. Edge 0 is
    /// the smallest sample, the last edge the largest; interior edge `i` is
    /// the first conditioning value of bin `i`.
    pub edges: Vec<f64>,
    /// Per-bin mean of the conditioning variable.
    pub cond_mean: Vec<f64>,
    /// Per-bin mean of the response.
    pub resp_mean: Vec<f64>,
    /// Per-bin standard error of the response mean (0 for singleton bins).
    pub resp_stderr: Vec<f64>,
    /// Per-bin sample count; counts differ by at most one.
    pub count: Vec<usize>,
}

impl BinnedSeries {
    pub fn n_bins(&self) -> usize {
        self.count.len()
    }
}

/// The shared partition rule: indices sorted by `x` (ties keep input order)
/// and per-bin lengths differing by at most one — the first `len % n_bins`
/// bins take the extra sample.
fn sorted_order_and_lengths(
    x: &[f64],
    n_bins: usize,
) -> Result<(Vec<usize>, Vec<usize>), ScalingError> {
    if x.len() < n_bins || n_bins == 0 {
        return Err(ScalingError::TooFewSamples { need: n_bins.max(1), bins: n_bins, got: x.len() });
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let base = x.len() / n_bins;
    let extra = x.len() % n_bins;
    let lengths = (0..n_bins).map(|b| base + usize::from(b < extra)).collect();
    Ok((order, lengths))
}

/// The response values of each equal-count bin — the same partition that
/// `binned_conditional_mean` uses, exposed for per-bin tests like ANOVA.
pub fn equal_count_groups(
    x: &[f64],
    y: &[f64],
    n_bins: usize,
) -> Result<Vec<Vec<f64>>, ScalingError> {
    if x.len() != y.len() {
        return Err(ScalingError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let (order, lengths) = sorted_order_and_lengths(x, n_bins)?;
    let mut groups = Vec::with_capacity(n_bins);
    let mut start = 0;
    for len in lengths {
        groups.push(order[start..start + len].iter().map(|&i| y[i]).collect());
        start += len;
    }
    Ok(groups)
}

/// Sorts `(x, y)` pairs by `x` (ties keep input order) and splits them into
/// `n_bins` bins whose counts differ by at most one — the first
/// `len % n_bins` bins take the extra sample. Returns per-bin means of both
/// variables plus the standard error of the response mean.
pub fn binned_conditional_mean(
    x: &[f64],
    y: &[f64],
    n_bins: usize,
) -> Result<BinnedSeries, ScalingError> {
    if x.len() != y.len() {
        return Err(ScalingError::LengthMismatch { x: x.len(), y: y.len() });
    }
    let (order, lengths) = sorted_order_and_lengths(x, n_bins)?;
    let n = x.len();

    let n_bins = lengths.len();
    let mut series = BinnedSeries {
        edges: Vec::with_capacity(n_bins + 1),
        cond_mean: Vec::with_capacity(n_bins),
        resp_mean: Vec::with_capacity(n_bins),
        resp_stderr: Vec::with_capacity(n_bins),
        count: Vec::with_capacity(n_bins),
    };
    series.edges.push(x[order[0]]);

    let mut start = 0usize;
    for (bin, &len) in lengths.iter().enumerate() {
        let members = &order[start..start + len];
        let cond: Vec<f64> = members.iter().map(|&i| x[i]).collect();
        let resp: Vec<f64> = members.iter().map(|&i| y[i]).collect();
        let (cond_mean, _, _) = stats::mean_std_stderr(&cond);
        let (resp_mean, _, resp_se) = stats::mean_std_stderr(&resp);
        series.cond_mean.push(cond_mean);
        series.resp_mean.push(resp_mean);
        series.resp_stderr.push(resp_se);
        series.count.push(len);
        start += len;
        series.edges.push(if bin + 1 < n_bins { x[order[start]] } else { x[order[n - 1]] });
    }
    Ok(series)
}

// ===== log-log power-law fit =====

/// A straight-line fit in log-log coordinates: response ≈ amplitude·cond^exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub exponent: f64,
    pub exponent_stderr: f64,
    /// e^intercept of the log-log line.
    pub amplitude: f64,
    pub intercept_stderr: f64,
    pub r_squared: f64,
    /// Bins that entered the fit.
    pub n_bins_used: usize,
}

/// Fits ln(response mean) = intercept + g·ln(conditioning mean) by OLS over
/// the bins whose conditioning mean lies in `window` (inclusive; `None`
/// keeps every bin). The slope g is the scaling exponent.
pub fn fit_loglog_powerlaw(
    series: &BinnedSeries,
    window: Option<(f64, f64)>,
) -> Result<LogLogFit, ScalingError> {
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let mut ln_x = Vec::new();
    let mut ln_y = Vec::new();
    for bin in 0..series.n_bins() {
        let (c, r) = (series.cond_mean[bin], series.resp_mean[bin]);
        if c < lo || c > hi {
            continue;
        }
        if c <= 0.0 || r <= 0.0 {
            return Err(ScalingError::NonPositiveBinMean { bin, cond: c, resp: r });
        }
        ln_x.push(c.ln());
        ln_y.push(r.ln());
    }
    if ln_x.len() < 3 {
        return Err(ScalingError::TooFewBins { got: ln_x.len() });
    }
    let fit = stats::ols_line(&ln_x, &ln_y)?;
    Ok(LogLogFit {
        exponent: fit.beta[1],
        exponent_stderr: fit.stderr[1],
        amplitude: fit.beta[0].exp(),
        intercept_stderr: fit.stderr[0],
        r_squared: fit.r_squared,
        n_bins_used: ln_x.len(),
    })
}

// ===== the three package relations =====

/// The (T, N, V) triple of one package, the raw material of the scaling fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PackageVars {
    pub t_secs: f64,
    pub n_trades: f64,
    pub volume: f64,
}

impl From<&TradePackage> for PackageVars {
    fn from(p: &TradePackage) -> Self {
        PackageVars { t_secs: p.t_secs, n_trades: p.n_trades as f64, volume: p.volume as f64 }
    }
}

/// The three fitted exponents plus the g₁ = g₂·g₃ consistency check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingExponents {
    /// ⟨T|V⟩ ∝ V^g₁.
    pub g1: LogLogFit,
    /// ⟨N|V⟩ ∝ V^g₂.
    pub g2: LogLogFit,
    /// ⟨T|N⟩ ∝ N^g₃.
    pub g3: LogLogFit,
    /// |g₁ − g₂·g₃|.
    pub product_gap: f64,
    /// Standard error of g₁ − g₂·g₃ by the delta method, the fits treated
    /// as independent.
    pub gap_sigma: f64,
}

impl ScalingExponents {
    /// Whether the consistency identity holds within `k` combined standard
    /// errors.
    pub fn identity_holds(&self, k: f64) -> bool {
        self.product_gap < k * self.gap_sigma
    }
}

/// Turns a "top fraction of bins" request into an inclusive conditioning
/// window: bins with index ≥ n_bins·(1 − frac) are kept.
fn top_frac_window(series: &BinnedSeries, frac: f64) -> Option<(f64, f64)> {
    if frac >= 1.0 {
        return None;
    }
    let n = series.n_bins();
    let first = ((n as f64) * (1.0 - frac)).ceil() as usize;
    let first = first.min(n.saturating_sub(3)); // keep at least 3 bins
    Some((series.cond_mean[first], f64::INFINITY))
}

/// Estimates g₁, g₂, g₃ from a package population: 20 equal-count bins per
/// relation, log-log OLS over the top `window_top_frac` of bins.
pub fn scaling_exponents(
    packages: &[PackageVars],
    n_bins: usize,
    window_top_frac: f64,
) -> Result<ScalingExponents, ScalingError> {
    let t: Vec<f64> = packages.iter().map(|p| p.t_secs).collect();
    let n: Vec<f64> = packages.iter().map(|p| p.n_trades).collect();
    let v: Vec<f64> = packages.iter().map(|p| p.volume).collect();

    let fit_one = |x: &[f64], y: &[f64]| -> Result<LogLogFit, ScalingError> {
        let series = binned_conditional_mean(x, y, n_bins)?;
        let window = top_frac_window(&series, window_top_frac);
        fit_loglog_powerlaw(&series, window)
    };

    let (g1, (g2, g3)) = rayon::join(
        || fit_one(&v, &t),
        || rayon::join(|| fit_one(&v, &n), || fit_one(&n, &t)),
    );
    let (g1, g2, g3) = (g1?, g2?, g3?);

    let product_gap = (g1.exponent - g2.exponent * g3.exponent).abs();
    let gap_sigma = (g1.exponent_stderr.powi(2)
        + (g3.exponent * g2.exponent_stderr).powi(2)
        + (g2.exponent * g3.exponent_stderr).powi(2))
    .sqrt();

    Ok(ScalingExponents { g1, g2, g3, product_gap, gap_sigma })
}
