//! Non-seasonal ARIMAX on `ln(1 + count)` with an optional severity regressor.
//!
//! The (differenced) log series `w_t` follows
//!
//! ```text
//! w_t = c + beta * x_t + sum_i phi_i w_{t-i} + e_t + sum_j theta_j e_{t-j}
//! ```
//!
//! estimated by conditional least squares: innovations before the first
//! usable observation are zero and the sum of squared one-step errors is
//! minimised with the Levenberg-Marquardt engine, starting from the ordinary
//! least-squares AR fit. MA coefficients are searched through their partial
//! autocorrelations, each boxed inside (-1, 1), which keeps the MA polynomial
//! invertible; unconstrained MA terms send the innovation recursion off to
//! infinity on short series. AR terms are left free. The intercept `c` is present only when `d = 0`; with
//! `d = 1` it would be a drift, which the severity term already supplies when
//! severity is constant.
//!
//! Forecast variance at step `h` is `sigma2 * sum_{j<h} psi_j^2`, with the
//! psi-weights cumulated once more when the series was differenced. Point
//! forecasts and bounds are mapped back to counts with `exp(x) - 1`, floored at 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::curvefit::{least_squares, Bounds, FitResult, LmConfig};
use crate::error::{Error, Result};
use crate::forecast::{z_score, Forecast, ModelKind};
use crate::ingest::{expm1_clipped, log1p_transform, CountSeries, RealSeries};
use crate::poisson::{recent_mean, SEVERITY_LOOKBACK};

pub const MAX_AR: usize = 3;
pub const MAX_MA: usize = 3;
/// Series shorter than this get `low_data_warning`.
pub const LOW_DATA_THRESHOLD: usize = 30;

/// Log-scale values are capped here before back-transforming so counts stay finite.
const LOG_CAP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaOrder {
    p: usize,
    d: usize,
    q: usize,
}

impl ArimaOrder {
    pub fn new(p: usize, d: usize, q: usize) -> Result<Self> {
        if p > MAX_AR || q > MAX_MA || d > 1 {
            return Err(Error::Invalid(format!(
                "unsupported order ({p},{d},{q}): need p <= {MAX_AR}, d <= 1, q <= {MAX_MA}"
            )));
        }
        Ok(Self { p, d, q })
    }

    pub fn p(self) -> usize {
        self.p
    }

    pub fn d(self) -> usize {
        self.d
    }

    pub fn q(self) -> usize {
        self.q
    }
}

impl Default for ArimaOrder {
    fn default() -> Self {
        Self { p: 1, d: 1, q: 1 }
    }
}

impl std::str::FromStr for ArimaOrder {
    type Err = Error;

    /// Parses `p,d,q`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Usage(format!("order `{s}` is not of the form p,d,q")))?;
        match parts[..] {
            [p, d, q] => ArimaOrder::new(p, d, q).map_err(|e| Error::Usage(e.to_string())),
            _ => Err(Error::Usage(format!("order `{s}` is not of the form p,d,q"))),
        }
    }
}

pub fn difference_values(values: &[f64], d: usize) -> Result<Vec<f64>> {
    if d > 1 {
        return Err(Error::Invalid(format!("difference order {d} unsupported")));
    }
    if values.len() < d + 1 {
        return Err(Error::InsufficientData {
            needed: d + 1,
            got: values.len(),
        });
    }
    Ok(match d {
        0 => values.to_vec(),
        _ => values.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Inverse of [`difference_values`]: prepends the anchor and cumulates.
pub fn undifference_values(diffed: &[f64], anchors: &[f64]) -> Result<Vec<f64>> {
    match anchors {
        [] => Ok(diffed.to_vec()),
        [anchor] => {
            let mut out = Vec::with_capacity(diffed.len() + 1);
            let mut level = *anchor;
            out.push(level);
            for v in diffed {
                level += v;
                out.push(level);
            }
            Ok(out)
        }
        _ => Err(Error::Invalid(format!("{} anchors given, at most 1 supported", anchors.len()))),
    }
}

pub fn difference(series: &RealSeries, d: usize) -> Result<RealSeries> {
    let values = difference_values(series.values(), d)?;
    let start = series.start() + chrono::Duration::days(d as i64 * series.granularity().days());
    RealSeries::new(start, series.granularity(), values)
}

pub fn undifference(diffed: &RealSeries, anchors: &[f64]) -> Result<RealSeries> {
    let values = undifference_values(diffed.values(), anchors)?;
    let start = diffed.start() - chrono::Duration::days(anchors.len() as i64 * diffed.granularity().days());
    RealSeries::new(start, diffed.granularity(), values)
}

/// Conditional least-squares ARMA(X) fit on an already differenced series.
#[derive(Debug, Clone, PartialEq)]
pub struct CssFit {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub intercept: Option<f64>,
    pub exog_coef: Option<f64>,
    /// One-step innovations, zero for the first `p` conditioning points.
    pub residuals: Vec<f64>,
    pub sse: f64,
    pub n_effective: usize,
    pub optimizer: FitResult,
}

const MAX_PARTIAL: f64 = 0.999;

/// Maps partial autocorrelations in (-1, 1) to the coefficients of an
/// invertible MA polynomial `1 + theta_1 B + ... + theta_q B^q`
/// (Durbin-Levinson recursion).
pub fn ma_from_partials(partials: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(partials.len());
    for (k, &r) in partials.iter().enumerate() {
        let prev = a.clone();
        for j in 0..k {
            a[j] = prev[j] - r * prev[k - 1 - j];
        }
        a.push(r);
    }
    a.into_iter().map(|v| -v).collect()
}

/// Inverse of [`ma_from_partials`]; `None` when the polynomial is not invertible.
pub fn partials_from_ma(ma: &[f64]) -> Option<Vec<f64>> {
    let mut a: Vec<f64> = ma.iter().map(|v| -v).collect();
    let mut partials = vec![0.0; a.len()];
    for k in (0..a.len()).rev() {
        let r = a[k];
        if r.abs() >= 1.0 {
            return None;
        }
        partials[k] = r;
        let prev = a.clone();
        for j in 0..k {
            a[j] = (prev[j] + r * prev[k - 1 - j]) / (1.0 - r * r);
        }
        a.truncate(k);
    }
    Some(partials)
}

struct Layout {
    p: usize,
    q: usize,
    intercept: bool,
    exog: bool,
}

impl Layout {
    fn len(&self) -> usize {
        usize::from(self.intercept) + usize::from(self.exog) + self.p + self.q
    }

    fn bounds(&self) -> Bounds {
        let n = self.len();
        let mut lower = vec![f64::NEG_INFINITY; n];
        let mut upper = vec![f64::INFINITY; n];
        for i in n - self.q..n {
            lower[i] = -MAX_PARTIAL;
            upper[i] = MAX_PARTIAL;
        }
        Bounds::new(lower, upper).expect("ordered bounds")
    }

    /// Internal parameters to `(c, beta, ar, ma)`.
    fn split(&self, params: &[f64]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let mut at = 0;
        let c = if self.intercept {
            at += 1;
            params[0]
        } else {
            0.0
        };
        let beta = if self.exog {
            at += 1;
            params[at - 1]
        } else {
            0.0
        };
        let ar = params[at..at + self.p].to_vec();
        let ma = ma_from_partials(&params[at + self.p..at + self.p + self.q]);
        (c, beta, ar, ma)
    }

    /// One-step predictions for `t = p..n-1` and the full innovation vector.
    fn recurse(&self, params: &[f64], w: &[f64], x: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let (c, beta, ar, ma) = self.split(params);
        let n = w.len();
        let mut resid = vec![0.0; n];
        let mut preds = Vec::with_capacity(n.saturating_sub(self.p));
        for t in self.p..n {
            let mut pred = c + x.map_or(0.0, |x| beta * x[t]);
            for (i, phi) in ar.iter().enumerate() {
                pred += phi * w[t - 1 - i];
            }
            for (j, theta) in ma.iter().enumerate() {
                if t > j {
                    pred += theta * resid[t - 1 - j];
                }
            }
            resid[t] = w[t] - pred;
            preds.push(pred);
        }
        (preds, resid)
    }
}

/// Ordinary least squares on `[1?, x?, lags]`, used as the optimizer's start.
fn ols_start(layout: &Layout, w: &[f64], x: Option<&[f64]>) -> Vec<f64> {
    let n = w.len();
    let rows = n - layout.p;
    let cols = layout.len() - layout.q;
    let mut start = vec![0.0; layout.len()];
    if cols == 0 || rows == 0 {
        return start;
    }
    let design = DMatrix::from_fn(rows, cols, |r, c| {
        let t = r + layout.p;
        let mut col = c;
        if layout.intercept {
            if col == 0 {
                return 1.0;
            }
            col -= 1;
        }
        if layout.exog {
            if col == 0 {
                return x.map_or(0.0, |x| x[t]);
            }
            col -= 1;
        }
        w[t - 1 - col]
    });
    let target = DVector::from_iterator(rows, w[layout.p..].iter().copied());
    let svd = design.svd(true, true);
    if let Ok(sol) = svd.solve(&target, 1e-12) {
        if sol.iter().all(|v| v.is_finite()) {
            start[..cols].copy_from_slice(sol.as_slice());
        }
    }
    start
}

/// Fits an ARMA(p, q) with optional intercept and exogenous regressor by
/// conditional least squares.
pub fn fit_arma_css(w: &[f64], exog: Option<&[f64]>, p: usize, q: usize, intercept: bool) -> Result<CssFit> {
    if let Some(x) = exog {
        if x.len() != w.len() {
            return Err(Error::Shape(format!("exogenous series has {} values for {} observations", x.len(), w.len())));
        }
    }
    let layout = Layout {
        p,
        q,
        intercept,
        exog: exog.is_some(),
    };
    let needed = p + q + 2 + usize::from(exog.is_some());
    if w.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: w.len(),
        });
    }
    if let (true, Some(x)) = (intercept, exog) {
        let sample = &x[p..];
        if sample.iter().all(|v| *v == sample[0]) {
            return Err(Error::Collinearity(
                "severity is constant and duplicates the intercept; drop severity or difference the series".into(),
            ));
        }
    }

    let p0 = ols_start(&layout, w, exog);
    let target = &w[p..];
    let config = LmConfig::default();
    let optimizer = least_squares(
        |params: &[f64]| layout.recurse(params, w, exog).0,
        target,
        &p0,
        &layout.bounds(),
        &config,
    )?;
    if !optimizer.converged {
        return Err(Error::Numeric(format!(
            "conditional least squares did not converge after {} iterations",
            optimizer.iterations
        )));
    }
    let (_, residuals) = layout.recurse(&optimizer.params, w, exog);
    let (c, beta, ar, ma) = layout.split(&optimizer.params);
    Ok(CssFit {
        ar,
        ma,
        intercept: intercept.then_some(c),
        exog_coef: exog.is_some().then_some(beta),
        residuals,
        sse: optimizer.sse,
        n_effective: target.len(),
        optimizer,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArimaxFit {
    pub order: ArimaOrder,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    /// Severity coefficient on the log scale.
    pub exog_coef: Option<f64>,
    /// Zero when `d = 1` (no intercept is estimated then).
    pub intercept: f64,
    /// Innovation variance on the log scale.
    pub sigma2: f64,
    pub n_effective: usize,
    pub low_data_warning: bool,
    /// Number of buckets in the series the model was fitted on.
    pub n_observed: usize,
    pub residuals: Vec<f64>,
    pub optimizer: FitResult,
}

pub fn fit_arimax(series: &CountSeries, order: ArimaOrder, use_severity: bool) -> Result<ArimaxFit> {
    let severity = if use_severity {
        Some(series.severity().ok_or_else(|| {
            Error::MissingCovariate("severity requested but the series carries none".into())
        })?)
    } else {
        None
    };
    let logged = log1p_transform(series);
    let d = order.d();
    let needed = order.p() + order.q() + 2 + usize::from(use_severity) + d;
    if series.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: series.len(),
        });
    }
    let w = difference_values(logged.values(), d)?;
    let x = severity.map(|s| &s[d..]);
    let css = fit_arma_css(&w, x, order.p(), order.q(), d == 0)?;
    Ok(ArimaxFit {
        order,
        ar: css.ar,
        ma: css.ma,
        exog_coef: css.exog_coef,
        intercept: css.intercept.unwrap_or(0.0),
        sigma2: css.sse / css.n_effective as f64,
        n_effective: css.n_effective,
        low_data_warning: series.len() < LOW_DATA_THRESHOLD,
        n_observed: series.len(),
        residuals: css.residuals,
        optimizer: css.optimizer,
    })
}

/// MA(infinity) weights `psi_0..psi_{h-1}` of the ARMA part, cumulated once
/// more when `integrate` is set.
pub fn psi_weights(ar: &[f64], ma: &[f64], h: usize, integrate: bool) -> Vec<f64> {
    let mut psi = Vec::with_capacity(h);
    for j in 0..h {
        let v = if j == 0 {
            1.0
        } else {
            let mut v = ma.get(j - 1).copied().unwrap_or(0.0);
            for (i, phi) in ar.iter().enumerate() {
                if j > i {
                    v += phi * psi[j - 1 - i];
                }
            }
            v
        };
        psi.push(if v.is_finite() { v.clamp(-1e150, 1e150) } else { 1e150 });
    }
    if integrate {
        let mut acc = 0.0;
        for v in psi.iter_mut() {
            acc = (acc + *v).clamp(-1e150, 1e150);
            *v = acc;
        }
    }
    psi
}

/// Forecast on the log scale before back-transforming.
#[derive(Debug, Clone, PartialEq)]
pub struct LogScaleForecast {
    pub points: Vec<f64>,
    pub half_widths: Vec<f64>,
}

pub fn forecast_arimax_log(fit: &ArimaxFit, series: &CountSeries, horizon: usize, level: f64) -> Result<LogScaleForecast> {
    if series.len() != fit.n_observed {
        return Err(Error::Shape(format!(
            "fit used {} buckets, forecast was given {}",
            fit.n_observed,
            series.len()
        )));
    }
    let z = z_score(level)?;
    let future_x = match fit.exog_coef {
        Some(_) => {
            let sev = series.severity().ok_or_else(|| {
                Error::MissingCovariate("fit uses severity but the series carries none".into())
            })?;
            recent_mean(sev, SEVERITY_LOOKBACK)
        }
        None => 0.0,
    };
    let logged = log1p_transform(series);
    let y = logged.values();
    let d = fit.order.d();
    let mut w = difference_values(y, d)?;
    let mut resid = fit.residuals.clone();
    let n = w.len();
    let exog_term = fit.exog_coef.map_or(0.0, |b| b * future_x);

    let mut level_now = *y.last().expect("non-empty series");
    let mut points = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let t = n + h;
        let mut pred = fit.intercept + exog_term;
        for (i, phi) in fit.ar.iter().enumerate() {
            if t > i {
                pred += phi * w[t - 1 - i];
            }
        }
        for (j, theta) in fit.ma.iter().enumerate() {
            if t > j {
                pred += theta * resid[t - 1 - j];
            }
        }
        let pred = if pred.is_finite() { pred.clamp(-LOG_CAP, LOG_CAP) } else { LOG_CAP };
        w.push(pred);
        resid.push(0.0);
        let value = if d == 1 {
            level_now = (level_now + pred).clamp(-LOG_CAP, LOG_CAP);
            level_now
        } else {
            pred
        };
        points.push(value);
    }

    let psi = psi_weights(&fit.ar, &fit.ma, horizon, d == 1);
    let mut cumulative = 0.0;
    let half_widths = psi
        .iter()
        .map(|p| {
            cumulative += fit.sigma2 * p * p;
            if !cumulative.is_finite() {
                cumulative = f64::MAX;
            }
            z * cumulative.sqrt()
        })
        .collect();
    Ok(LogScaleForecast { points, half_widths })
}

pub fn forecast_arimax(fit: &ArimaxFit, series: &CountSeries, horizon: usize, level: f64) -> Result<Forecast> {
    let log = forecast_arimax_log(fit, series, horizon, level)?;
    let back = |v: f64| expm1_clipped(v.min(LOG_CAP));
    let points = log.points.iter().map(|&v| back(v)).collect();
    let lower = log.points.iter().zip(&log.half_widths).map(|(&v, &hw)| back(v - hw)).collect();
    let upper = log.points.iter().zip(&log.half_widths).map(|(&v, &hw)| back(v + hw)).collect();
    Forecast::with_intervals(ModelKind::Arimax, points, lower, upper)
}
