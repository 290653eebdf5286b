//! Poisson log-linear regression fitted by iteratively reweighted least squares.
//!
//! The design has an intercept, the bucket index as a linear trend and,
//! optionally, the severity score. Each IRLS update is a Newton step on the
//! log-likelihood; steps that would lower the likelihood are halved until they
//! do not, so the recorded likelihood trace never decreases.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::curvefit::{condition_number, scaled_inverse};
use crate::error::{Error, Result};
use crate::forecast::{z_score, Forecast, ModelKind};
use crate::ingest::CountSeries;

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-10;
/// Buckets averaged to extrapolate severity into the future.
pub const SEVERITY_LOOKBACK: usize = 7;
pub const UNDER_DISPERSED_BELOW: f64 = 0.8;
pub const OVER_DISPERSED_ABOVE: f64 = 1.2;

const MAX_CONDITION: f64 = 1e12;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonFit {
    /// Intercept, slope per bucket and (when used) severity coefficient.
    pub coefficients: Vec<f64>,
    /// Inverse Fisher information at the solution.
    pub cov: DMatrix<f64>,
    pub log_likelihood: f64,
    /// Pearson chi-square over residual degrees of freedom.
    pub dispersion: f64,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub fitted: Vec<f64>,
    pub log_likelihood_history: Vec<f64>,
    pub uses_severity: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dispersion {
    Under,
    Equi,
    Over,
}

impl Dispersion {
    pub fn classify(ratio: f64) -> Self {
        if ratio < UNDER_DISPERSED_BELOW {
            Dispersion::Under
        } else if ratio > OVER_DISPERSED_ABOVE {
            Dispersion::Over
        } else {
            Dispersion::Equi
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dispersion::Under => "under",
            Dispersion::Equi => "equi",
            Dispersion::Over => "over",
        }
    }
}

/// Rows `[1, t, severity_t?]` for `t = 0..n-1`.
pub fn build_design(series: &CountSeries, use_severity: bool) -> Result<DMatrix<f64>> {
    let severity = if use_severity {
        Some(series.severity().ok_or_else(|| {
            Error::MissingCovariate("severity requested but the series carries none".into())
        })?)
    } else {
        None
    };
    let cols = if use_severity { 3 } else { 2 };
    Ok(DMatrix::from_fn(series.len(), cols, |r, c| match c {
        0 => 1.0,
        1 => r as f64,
        _ => severity.map_or(0.0, |s| s[r]),
    }))
}

/// Design rows for the `horizon` buckets after the series ends. Future
/// severity is the mean of the last seven observed values.
pub fn future_design(series: &CountSeries, use_severity: bool, horizon: usize) -> Result<DMatrix<f64>> {
    let recent = if use_severity {
        let sev = series.severity().ok_or_else(|| {
            Error::MissingCovariate("severity requested but the series carries none".into())
        })?;
        Some(recent_mean(sev, SEVERITY_LOOKBACK))
    } else {
        None
    };
    let n = series.len();
    let cols = if use_severity { 3 } else { 2 };
    Ok(DMatrix::from_fn(horizon, cols, |r, c| match c {
        0 => 1.0,
        1 => (n + r) as f64,
        _ => recent.unwrap_or(0.0),
    }))
}

pub(crate) fn recent_mean(values: &[f64], window: usize) -> f64 {
    let tail = &values[values.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn fit_poisson(series: &CountSeries, use_severity: bool) -> Result<PoissonFit> {
    let design = build_design(series, use_severity)?;
    let mut fit = fit_poisson_design(&design, series.counts())?;
    fit.uses_severity = use_severity;
    Ok(fit)
}

/// Poisson log-likelihood `sum(y ln mu - mu - ln y!)`.
pub fn log_likelihood(y: &[u64], mu: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .map(|(&yi, &m)| {
            let yi = yi as f64;
            if yi == 0.0 {
                -m
            } else {
                yi * m.ln() - m - ln_gamma(yi + 1.0)
            }
        })
        .sum()
}

fn means(design: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (design * beta).iter().map(|eta| eta.exp()).collect()
}

fn ll_at(design: &DMatrix<f64>, y: &[u64], beta: &DVector<f64>) -> f64 {
    let ll = log_likelihood(y, &means(design, beta));
    if ll.is_nan() {
        f64::NEG_INFINITY
    } else {
        ll
    }
}

/// Weighted least squares `(X'WX)^-1 X'Wz`.
fn weighted_solve(design: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let p = design.ncols();
    let mut xtwx = DMatrix::zeros(p, p);
    let mut xtwz = DVector::zeros(p);
    for (r, row) in design.row_iter().enumerate() {
        for i in 0..p {
            xtwz[i] += row[i] * w[r] * z[r];
            for j in 0..p {
                xtwx[(i, j)] += row[i] * w[r] * row[j];
            }
        }
    }
    let beta: DVector<f64> = xtwx.clone().cholesky()?.solve(&xtwz);
    beta.iter().all(|v| v.is_finite()).then_some((xtwx, beta))
}

/// IRLS on an arbitrary design with log link.
pub fn fit_poisson_design(design: &DMatrix<f64>, y: &[u64]) -> Result<PoissonFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(Error::Shape(format!("design has {n} rows for {} counts", y.len())));
    }
    if n < p + 1 {
        return Err(Error::InsufficientData { needed: p + 1, got: n });
    }
    if y.iter().all(|&c| c == 0) {
        return Err(Error::DegenerateSeries(
            "all-zero series: the Poisson rate collapses to 0".into(),
        ));
    }
    if condition_number(&(design.transpose() * design)) > MAX_CONDITION {
        return Err(Error::Collinearity(
            "design columns are collinear (a constant severity column duplicates the intercept); drop severity".into(),
        ));
    }

    // Start from a weighted regression of ln(y + 0.5).
    let y_f: Vec<f64> = y.iter().map(|&c| c as f64).collect();
    let start_w: Vec<f64> = y_f.iter().map(|v| v + 0.5).collect();
    let start_z: Vec<f64> = start_w.iter().map(|v| v.ln()).collect();
    let (_, mut beta) = weighted_solve(design, &start_w, &start_z)
        .ok_or_else(|| Error::Numeric("initial weighted regression is singular".into()))?;
    let mut ll = ll_at(design, y, &beta);
    if !ll.is_finite() {
        return Err(Error::Numeric("non-finite log-likelihood at the starting point".into()));
    }
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let eta = design * &beta;
        let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
        if mu.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(Error::Numeric(format!(
                "IRLS diverged at iteration {iterations}: non-finite working weights"
            )));
        }
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (y_f[i] - mu[i]) / mu[i]).collect();
        let (_, target) = weighted_solve(design, &mu, &z).ok_or_else(|| {
            Error::Numeric(format!("IRLS diverged at iteration {iterations}: singular weighted system"))
        })?;

        let mut candidate = target;
        let mut ll_new = ll_at(design, y, &candidate);
        let mut halvings = 0;
        while !(ll_new >= ll) && halvings < MAX_HALVINGS {
            candidate = (&beta + &candidate) * 0.5;
            ll_new = ll_at(design, y, &candidate);
            halvings += 1;
        }
        if !(ll_new >= ll) {
            // No ascent direction left at working precision.
            converged = true;
            break;
        }
        let change = (ll_new - ll).abs() / ll.abs().max(1e-300);
        beta = candidate;
        ll = ll_new;
        history.push(ll);
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }

    let fitted = means(design, &beta);
    if fitted.iter().any(|m| !m.is_finite() || *m <= 0.0) {
        return Err(Error::Numeric("IRLS diverged: fitted means left the positive reals".into()));
    }
    let (info, _) = weighted_solve(design, &fitted, &vec![0.0; n])
        .ok_or_else(|| Error::Numeric("information matrix is singular at the solution".into()))?;
    let cov = scaled_inverse(&info, 1.0)
        .ok_or_else(|| Error::Numeric("information matrix is ill-conditioned at the solution".into()))?;
    let pearson: f64 = y_f.iter().zip(&fitted).map(|(yi, m)| (yi - m).powi(2) / m).sum();

    Ok(PoissonFit {
        coefficients: beta.iter().copied().collect(),
        cov,
        log_likelihood: ll,
        dispersion: pearson / (n - p) as f64,
        n,
        iterations,
        converged,
        fitted,
        log_likelihood_history: history,
        uses_severity: false,
    })
}

pub fn dispersion_ratio(fit: &PoissonFit) -> f64 {
    fit.dispersion
}

/// Point forecast `exp(x'b)` with delta-method bounds
/// `exp(x'b +/- z * sqrt(x' cov x))`.
pub fn forecast_poisson(fit: &PoissonFit, future_design: &DMatrix<f64>, level: f64) -> Result<Forecast> {
    let p = fit.coefficients.len();
    if future_design.ncols() != p {
        return Err(Error::Shape(format!(
            "future design has {} columns, fit has {p} coefficients",
            future_design.ncols()
        )));
    }
    let z = z_score(level)?;
    let beta = DVector::from_column_slice(&fit.coefficients);
    let positive = |v: f64| v.exp().clamp(f64::MIN_POSITIVE, f64::MAX);
    let mut points = Vec::with_capacity(future_design.nrows());
    let mut lower = Vec::with_capacity(future_design.nrows());
    let mut upper = Vec::with_capacity(future_design.nrows());
    for row in future_design.row_iter() {
        let x = row.transpose();
        let eta = x.dot(&beta);
        let var = (x.transpose() * &fit.cov * &x)[(0, 0)].max(0.0);
        let half = z * var.sqrt();
        points.push(positive(eta));
        lower.push(positive(eta - half));
        upper.push(positive(eta + half));
    }
    Forecast::with_intervals(ModelKind::Poisson, points, lower, upper)
}
