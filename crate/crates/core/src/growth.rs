//! Exponential decay and logistic growth curves.
//!
//! Both are fitted on the bucket index `t = 0..n-1` and forecast by evaluating
//! the fitted curve past the last observation, floored at zero.

use serde::{Deserialize, Serialize};

use crate::curvefit::{levenberg_marquardt, Bounds, FitResult, LmConfig, ParametricModel};
use crate::error::{Error, Result};
use crate::forecast::{Forecast, ModelKind};
use crate::ingest::CountSeries;

pub const MIN_OBSERVATIONS: usize = 4;

/// `y(t) = a * exp(-b t) + c`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    /// Initial amplitude (sightings per bucket).
    pub a: f64,
    /// Decay rate per bucket.
    pub b: f64,
    /// Baseline level.
    pub c: f64,
}

impl DecayParams {
    pub fn from_slice(p: &[f64]) -> Self {
        Self { a: p[0], b: p[1], c: p[2] }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.a, self.b, self.c]
    }
}

/// `y(t) = L / (1 + exp(-k (t - t0)))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    /// Plateau `L`.
    pub plateau: f64,
    /// Growth rate `k` per bucket.
    pub rate: f64,
    /// Inflection bucket `t0`.
    pub midpoint: f64,
}

impl LogisticParams {
    pub fn from_slice(p: &[f64]) -> Self {
        Self {
            plateau: p[0],
            rate: p[1],
            midpoint: p[2],
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.plateau, self.rate, self.midpoint]
    }
}

pub fn eval_decay(p: &DecayParams, t: f64) -> f64 {
    p.a * (-p.b * t).exp() + p.c
}

pub fn eval_logistic(p: &LogisticParams, t: f64) -> f64 {
    p.plateau / (1.0 + (-p.rate * (t - p.midpoint)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthKind {
    Decay,
    Logistic,
}

impl GrowthKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            GrowthKind::Decay => ModelKind::Decay,
            GrowthKind::Logistic => ModelKind::Logistic,
        }
    }

    pub fn evaluate(self, params: &[f64], t: f64) -> f64 {
        match self {
            GrowthKind::Decay => eval_decay(&DecayParams::from_slice(params), t),
            GrowthKind::Logistic => eval_logistic(&LogisticParams::from_slice(params), t),
        }
    }
}

impl ParametricModel for GrowthKind {
    fn arity(&self) -> usize {
        3
    }

    fn evaluate(&self, params: &[f64], t: f64) -> f64 {
        GrowthKind::evaluate(*self, params, t)
    }
}

fn max_min(y: &[f64]) -> (f64, f64) {
    y.iter()
        .fold((f64::NEG_INFINITY, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)))
}

/// `(max(y), 0.5, min(y))`
pub fn decay_initial_guess(y: &[f64]) -> DecayParams {
    let (max, min) = max_min(y);
    DecayParams { a: max, b: 0.5, c: min }
}

/// `(1.5 * max(y), 0.3, median(t))` with `t = 0..n-1`.
pub fn logistic_initial_guess(y: &[f64]) -> LogisticParams {
    let (max, _) = max_min(y);
    LogisticParams {
        plateau: 1.5 * max,
        rate: 0.3,
        midpoint: (y.len().saturating_sub(1)) as f64 / 2.0,
    }
}

fn time_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

fn require_length(n: usize) -> Result<()> {
    if n < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_OBSERVATIONS,
            got: n,
        });
    }
    Ok(())
}

pub fn fit_decay(series: &CountSeries) -> Result<FitResult> {
    fit_decay_values(&series.values())
}

/// Unbounded decay fit on arbitrary real observations.
pub fn fit_decay_values(y: &[f64]) -> Result<FitResult> {
    require_length(y.len())?;
    let p0 = decay_initial_guess(y).to_vec();
    levenberg_marquardt(
        &GrowthKind::Decay,
        &time_grid(y.len()),
        y,
        &p0,
        &Bounds::unbounded(3),
        &LmConfig::default(),
    )
}

pub fn fit_logistic(series: &CountSeries) -> Result<FitResult> {
    fit_logistic_values(&series.values())
}

/// Logistic fit with all three parameters constrained nonnegative.
pub fn fit_logistic_values(y: &[f64]) -> Result<FitResult> {
    require_length(y.len())?;
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateSeries(
            "all-zero series has no logistic shape (plateau collapses to 0)".into(),
        ));
    }
    let p0 = logistic_initial_guess(y).to_vec();
    levenberg_marquardt(
        &GrowthKind::Logistic,
        &time_grid(y.len()),
        y,
        &p0,
        &Bounds::nonnegative(3),
        &LmConfig::default(),
    )
}

/// Evaluates the fitted curve at `t = n_observed .. n_observed + horizon - 1`,
/// clipping negatives to zero.
pub fn forecast_growth(fit: &FitResult, kind: GrowthKind, n_observed: usize, horizon: usize) -> Forecast {
    let points = (n_observed..n_observed + horizon)
        .map(|t| {
            let v = kind.evaluate(&fit.params, t as f64);
            if v.is_nan() {
                0.0
            } else {
                v.clamp(0.0, f64::MAX)
            }
        })
        .collect();
    Forecast::points_only(kind.model_kind(), points)
}
