//! Walk-forward evaluation: fit on buckets up to a cutoff, score against the rest.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::Forecast;
use crate::ingest::CountSeries;
use crate::pipeline::{run_model, Diagnostics, ModelChoice, ModelConfig};

/// Splits into buckets starting on or before `cutoff` and the remainder.
pub fn split_at_cutoff(series: &CountSeries, cutoff: NaiveDate) -> Result<(CountSeries, CountSeries)> {
    if series.is_empty() || cutoff < series.start() || cutoff >= series.last_date() {
        return Err(Error::Range(format!(
            "cutoff {cutoff} must fall within [{}, {})",
            series.start(),
            series.last_date().max(series.start())
        )));
    }
    let step = series.granularity().days();
    let train_len = ((cutoff - series.start()).num_days() / step) as usize + 1;
    Ok((series.slice(0, train_len)?, series.slice(train_len, series.len())?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub mae: f64,
    pub rmse: f64,
    /// Mean of forecast minus actual; positive means over-forecasting.
    pub mean_error: f64,
    /// Share of actuals inside the interval, when the forecast has one.
    pub coverage: Option<f64>,
    pub per_step_errors: Vec<f64>,
}

/// Scores the first `min(forecast, holdout)` steps.
pub fn score_forecast(forecast: &Forecast, holdout: &CountSeries) -> Result<Score> {
    let steps = forecast.len().min(holdout.len());
    if steps == 0 {
        return Err(Error::Range("nothing to score: empty forecast or holdout".into()));
    }
    let actual = &holdout.counts()[..steps];
    let errors: Vec<f64> = forecast.points[..steps]
        .iter()
        .zip(actual)
        .map(|(&f, &a)| f - a as f64)
        .collect();
    let n = steps as f64;
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean_error = errors.iter().sum::<f64>() / n;
    let coverage = match (&forecast.lower, &forecast.upper) {
        (Some(lo), Some(hi)) => {
            let inside = actual
                .iter()
                .enumerate()
                .filter(|&(i, &a)| lo[i] <= a as f64 && a as f64 <= hi[i])
                .count();
            Some(inside as f64 / n)
        }
        _ => None,
    };
    Ok(Score {
        mae,
        rmse,
        mean_error,
        coverage,
        per_step_errors: errors,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub model: String,
    pub cutoff: NaiveDate,
    pub horizon: usize,
    pub train_length: usize,
    pub holdout_length: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mean_error: f64,
    pub interval_coverage: Option<f64>,
    pub per_step_errors: Vec<f64>,
    pub forecast: Forecast,
    pub actual: Vec<u64>,
    pub diagnostics: Diagnostics,
}

pub fn run_backtest(series: &CountSeries, model: ModelChoice, cutoff: NaiveDate, horizon: usize) -> Result<BacktestReport> {
    run_backtest_with(series, model, cutoff, horizon, &ModelConfig::default())
}

/// Only the training slice reaches the model; the holdout is touched solely by scoring.
pub fn run_backtest_with(
    series: &CountSeries,
    model: ModelChoice,
    cutoff: NaiveDate,
    horizon: usize,
    config: &ModelConfig,
) -> Result<BacktestReport> {
    if horizon == 0 {
        return Err(Error::Invalid("backtest horizon must be positive".into()));
    }
    let (train, holdout) = split_at_cutoff(series, cutoff)?;
    let steps = horizon.min(holdout.len());
    let run = run_model(&train, model, steps, config).map_err(|e| e.in_model(model.as_str()))?;
    let score = score_forecast(&run.forecast, &holdout)?;
    Ok(BacktestReport {
        model: model.as_str().to_string(),
        cutoff,
        horizon: steps,
        train_length: train.len(),
        holdout_length: holdout.len(),
        mae: score.mae,
        rmse: score.rmse,
        mean_error: score.mean_error,
        interval_coverage: score.coverage,
        per_step_errors: score.per_step_errors,
        forecast: run.forecast,
        actual: holdout.counts()[..steps].to_vec(),
        diagnostics: run.diagnostics,
    })
}
