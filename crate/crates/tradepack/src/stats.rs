//! Shared statistical engine: ordinary least squares with classical standard
//! errors, and one-way analysis of variance.
//!
//! Both routines are deliberately textbook — QR-based OLS with homoskedastic
//! covariance, two-way-checkable ANOVA sums of squares — because downstream
//! acceptance tests compare them against independently coded normal-equation
//! and two-pass references.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};
use thiserror::Error;

/// Two-sided 5% significance threshold on |t| (large-sample normal value).
pub const T_CRITICAL: f64 = 1.96;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StatsError {
    #[error("need more observations ({n_obs}) than parameters ({n_params})")]
    TooFewObservations { n_obs: usize, n_params: usize },
    #[error("design matrix has no usable columns")]
    EmptyDesign,
    #[error("design/response length mismatch: {design} rows vs {response} responses")]
    LengthMismatch { design: usize, response: usize },
    #[error("ANOVA needs at least two groups with at least two values each")]
    DegenerateGroups,
}

// ===== ordinary least squares =====

/// An OLS fit. Coefficients dropped for collinearity keep their slot with a
/// zero estimate, zero t-statistic, and `significant = false`; their indices
/// are listed in `dropped`.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// `|t| >= 1.96`, per coefficient.
    pub significant: Vec<bool>,
    /// Classical covariance of the kept coefficients, embedded in the full
    /// parameter order (dropped rows/columns are zero).
    pub covariance: DMatrix<f64>,
    /// Centered R²; 0 when the response is constant.
    pub r_squared: f64,
    /// Residual sum of squares.
    pub rss: f64,
    pub n_obs: usize,
    /// Indices of design columns dropped as collinear.
    pub dropped: Vec<usize>,
}

impl OlsFit {
    pub fn n_params_kept(&self) -> usize {
        self.beta.len() - self.dropped.len()
    }
}

/// Ordinary least squares of `y` on the columns of `x` (include the
/// intercept as a column of ones if wanted).
///
/// Collinear columns are detected by a Gram–Schmidt scan (the first column
/// of each dependent set is kept) and dropped, then the reduced system is
/// solved by QR. Standard errors are classical:
/// `cov = s² (XᵀX)⁻¹` with `s² = RSS/(n − p)`.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit, StatsError> {
    let n = x.nrows();
    let p_all = x.ncols();
    if n != y.len() {
        return Err(StatsError::LengthMismatch { design: n, response: y.len() });
    }
    if p_all == 0 {
        return Err(StatsError::EmptyDesign);
    }

    // Rank detection: modified Gram–Schmidt over columns in order. A column
    // whose residual after projection onto the kept span is below tolerance
    // (relative to its own norm) is collinear and dropped; the first column
    // of any collinear set survives.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    for j in 0..p_all {
        let col = DVector::from_column_slice(x.column(j).as_slice());
        let norm0 = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        // re-orthogonalize once for numerical safety
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        if norm0 > 0.0 && v.norm() > 1e-10 * norm0 {
            basis.push(v.normalize());
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    drop(basis);
    if kept.is_empty() {
        return Err(StatsError::EmptyDesign);
    }
    let p = kept.len();
    if n <= p {
        return Err(StatsError::TooFewObservations { n_obs: n, n_params: p });
    }

    let xk = x.select_columns(kept.iter());
    // Thin QR: solve R β = Qᵀ y by back substitution.
    let qr = xk.clone().qr();
    let qty = qr.q().transpose() * y;
    let beta_k = qr
        .r()
        .solve_upper_triangular(&qty)
        .unwrap_or_else(|| (xk.transpose() * &xk).lu().solve(&(xk.transpose() * y)).unwrap());

    let fitted = &xk * &beta_k;
    let resid = y - &fitted;
    let rss = resid.dot(&resid);
    let sigma2 = rss / (n - p) as f64;

    let xtx_inv = (xk.transpose() * &xk)
        .try_inverse()
        .expect("kept columns have full rank");
    let cov_k = xtx_inv * sigma2;

    let ybar = y.mean();
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };

    // scatter the kept results back into full-parameter order
    let mut beta = vec![0.0; p_all];
    let mut stderr = vec![0.0; p_all];
    let mut t_stats = vec![0.0; p_all];
    let mut significant = vec![false; p_all];
    let mut covariance = DMatrix::zeros(p_all, p_all);
    for (ki, &j) in kept.iter().enumerate() {
        beta[j] = beta_k[ki];
        let se = cov_k[(ki, ki)].max(0.0).sqrt();
        stderr[j] = se;
        t_stats[j] = if se > 0.0 { beta_k[ki] / se } else { 0.0 };
        significant[j] = t_stats[j].abs() >= T_CRITICAL;
        for (kk, &jj) in kept.iter().enumerate() {
            covariance[(j, jj)] = cov_k[(ki, kk)];
        }
    }

    Ok(OlsFit {
        beta,
        stderr,
        t_stats,
        significant,
        covariance,
        r_squared,
        rss,
        n_obs: n,
        dropped,
    })
}

/// Convenience: builds the design matrix from column slices and runs [`ols`].
pub fn ols_from_columns(columns: &[&[f64]], y: &[f64]) -> Result<OlsFit, StatsError> {
    let n = y.len();
    for c in columns {
        if c.len() != n {
            return Err(StatsError::LengthMismatch { design: c.len(), response: n });
        }
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let yv = DVector::from_column_slice(y);
    ols(&x, &yv)
}

/// Simple regression `y = a + b·x`; returns (intercept, slope) fit.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<OlsFit, StatsError> {
    let ones = vec![1.0; x.len()];
    ols_from_columns(&[&ones, x], y)
}

// ===== one-way ANOVA =====

/// One-way analysis of variance over `k` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Anova {
    pub f: f64,
    /// Upper-tail p-value from the F(k−1, n−k) distribution.
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub ss_between: f64,
    pub ss_within: f64,
    /// True when the within-group variance is exactly zero while group means
    /// differ, which sends F to infinity.
    pub degenerate: bool,
}

/// One-way ANOVA: do the group means differ more than within-group noise
/// explains? Needs at least two groups with at least two values each.
pub fn anova_oneway(groups: &[&[f64]]) -> Result<Anova, StatsError> {
    let k = groups.len();
    if k < 2 || groups.iter().any(|g| g.len() < 2) {
        return Err(StatsError::DegenerateGroups);
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand_mean: f64 = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;

    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let mean: f64 = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand_mean).powi(2);
        ss_within += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;

    let (f, p, degenerate) = if ss_within == 0.0 {
        if ss_between == 0.0 {
            // no variation anywhere: indistinguishable groups
            (0.0, 1.0, false)
        } else {
            (f64::INFINITY, 0.0, true)
        }
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        let dist = FisherSnedecor::new(df_between as f64, df_within as f64)
            .expect("positive degrees of freedom");
        (f, 1.0 - dist.cdf(f), false)
    };

    Ok(Anova { f, p, df_between, df_within, ss_between, ss_within, degenerate })
}

/// Mean, sample standard deviation (n − 1), and standard error of a slice.
/// Returns (mean, std, stderr); std and stderr are 0 for fewer than two
/// values.
pub fn mean_std_stderr(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let std = (ss / (n - 1) as f64).sqrt();
    (mean, std, std / (n as f64).sqrt())
}
