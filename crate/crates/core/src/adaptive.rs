//! Picks logistic growth while recent counts are rising and exponential decay
//! otherwise, then forecasts with the chosen curve.

use serde::Serialize;

use crate::curvefit::FitResult;
use crate::error::{Error, Result};
use crate::forecast::Forecast;
use crate::growth::{fit_decay, fit_logistic, forecast_growth, GrowthKind, MIN_OBSERVATIONS};
use crate::ingest::CountSeries;

pub const DEFAULT_WINDOW: usize = 7;
pub const DEFAULT_HORIZON: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    /// OLS slope of counts per bucket over the window.
    pub slope: f64,
    /// Buckets actually used for the slope.
    pub window: usize,
    /// Selector's pick; logistic iff `slope > 0`.
    pub chosen: GrowthKind,
    /// Model that produced the forecast (differs from `chosen` after a fallback).
    pub used: GrowthKind,
    pub fallback_reason: Option<String>,
    pub converged: bool,
    pub params: Vec<f64>,
}

/// Least-squares slope of the last `min(window, n)` counts against bucket index.
pub fn trend_slope(series: &CountSeries, window: usize) -> Result<f64> {
    if window < 2 {
        return Err(Error::Invalid(format!("slope window must be at least 2, got {window}")));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let m = window.min(n);
    let y: Vec<f64> = series.counts()[n - m..].iter().map(|&c| c as f64).collect();
    let x_mean = (m - 1) as f64 / 2.0;
    let y_mean = y.iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, yi) in y.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (yi - y_mean);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

/// Logistic for a positive slope, decay otherwise (including zero).
pub fn select_model(slope: f64) -> GrowthKind {
    if slope > 0.0 {
        GrowthKind::Logistic
    } else {
        GrowthKind::Decay
    }
}

fn fit_kind(series: &CountSeries, kind: GrowthKind) -> Result<FitResult> {
    match kind {
        GrowthKind::Decay => fit_decay(series),
        GrowthKind::Logistic => fit_logistic(series),
    }
}

/// Fits `chosen`, falling back from logistic to decay on failure.
fn fit_with_fallback<F>(chosen: GrowthKind, fit: F) -> Result<(GrowthKind, FitResult, Option<String>)>
where
    F: Fn(GrowthKind) -> Result<FitResult>,
{
    match (chosen, fit(chosen)) {
        (_, Ok(result)) => Ok((chosen, result, None)),
        (GrowthKind::Logistic, Err(logistic_err)) => match fit(GrowthKind::Decay) {
            Ok(result) => Ok((GrowthKind::Decay, result, Some(format!("logistic failed: {logistic_err}")))),
            Err(decay_err) => Err(Error::ModelFailure(format!(
                "logistic: {logistic_err}; decay: {decay_err}"
            ))),
        },
        (GrowthKind::Decay, Err(decay_err)) => Err(Error::ModelFailure(format!("decay: {decay_err}"))),
    }
}

pub fn adaptive_forecast(series: &CountSeries, window: usize, horizon: usize) -> Result<(TrendReport, Forecast)> {
    if series.len() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_OBSERVATIONS,
            got: series.len(),
        });
    }
    let slope = trend_slope(series, window)?;
    let chosen = select_model(slope);
    let (used, fit, fallback_reason) = fit_with_fallback(chosen, |kind| fit_kind(series, kind))?;
    let forecast = forecast_growth(&fit, used, series.len(), horizon);
    let report = TrendReport {
        slope,
        window: window.min(series.len()),
        chosen,
        used,
        fallback_reason,
        converged: fit.converged,
        params: fit.params,
    };
    Ok((report, forecast))
}
