//! One entry point that fits any supported model and collects its diagnostics.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::adaptive::{adaptive_forecast, DEFAULT_WINDOW};
use crate::arimax::{fit_arimax, forecast_arimax, ArimaOrder};
use crate::error::{Error, Result};
use crate::forecast::Forecast;
use crate::growth::{fit_decay, fit_logistic, forecast_growth, GrowthKind};
use crate::ingest::CountSeries;
use crate::poisson::{dispersion_ratio, fit_poisson, forecast_poisson, future_design, Dispersion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelChoice {
    Decay,
    Logistic,
    Poisson,
    Arimax,
    Adaptive,
}

impl ModelChoice {
    pub const ALL: [ModelChoice; 5] = [
        ModelChoice::Decay,
        ModelChoice::Logistic,
        ModelChoice::Poisson,
        ModelChoice::Arimax,
        ModelChoice::Adaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Decay => "decay",
            ModelChoice::Logistic => "logistic",
            ModelChoice::Poisson => "poisson",
            ModelChoice::Arimax => "arimax",
            ModelChoice::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == lower)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown model {s:?}; expected one of decay, logistic, poisson, arimax, adaptive"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Nominal interval coverage.
    pub level: f64,
    pub order: ArimaOrder,
    /// Use severity as a covariate when the series carries it.
    pub use_severity: bool,
    /// Slope window of the adaptive selector.
    pub window: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            level: 0.95,
            order: ArimaOrder::default(),
            use_severity: true,
            window: DEFAULT_WINDOW,
        }
    }
}

pub type Diagnostics = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub forecast: Forecast,
    pub diagnostics: Diagnostics,
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn growth_run(series: &CountSeries, kind: GrowthKind, horizon: usize) -> Result<ModelRun> {
    let fit = match kind {
        GrowthKind::Decay => fit_decay(series)?,
        GrowthKind::Logistic => fit_logistic(series)?,
    };
    let forecast = forecast_growth(&fit, kind, series.len(), horizon);
    let mut d = Diagnostics::new();
    d.insert("converged".into(), json!(fit.converged));
    d.insert("iterations".into(), json!(fit.iterations));
    d.insert("params".into(), json!(fit.params));
    d.insert("sse".into(), finite_or_null(fit.sse));
    Ok(ModelRun { forecast, diagnostics: d })
}

/// Fits `choice` on the whole of `series` and forecasts `horizon` buckets past its end.
pub fn run_model(series: &CountSeries, choice: ModelChoice, horizon: usize, config: &ModelConfig) -> Result<ModelRun> {
    let use_severity = config.use_severity && series.severity().is_some();
    match choice {
        ModelChoice::Decay => growth_run(series, GrowthKind::Decay, horizon),
        ModelChoice::Logistic => growth_run(series, GrowthKind::Logistic, horizon),
        ModelChoice::Poisson => {
            let fit = fit_poisson(series, use_severity)?;
            let design = future_design(series, use_severity, horizon)?;
            let forecast = forecast_poisson(&fit, &design, config.level)?;
            let ratio = dispersion_ratio(&fit);
            let mut d = Diagnostics::new();
            d.insert("coefficients".into(), json!(fit.coefficients));
            d.insert("converged".into(), json!(fit.converged));
            d.insert("dispersion".into(), finite_or_null(ratio));
            d.insert("dispersion_class".into(), json!(Dispersion::classify(ratio).as_str()));
            d.insert("iterations".into(), json!(fit.iterations));
            d.insert("level".into(), json!(config.level));
            d.insert("log_likelihood".into(), finite_or_null(fit.log_likelihood));
            d.insert("uses_severity".into(), json!(fit.uses_severity));
            Ok(ModelRun { forecast, diagnostics: d })
        }
        ModelChoice::Arimax => {
            let fit = fit_arimax(series, config.order, use_severity)?;
            let forecast = forecast_arimax(&fit, series, horizon, config.level)?;
            let o = fit.order;
            let mut d = Diagnostics::new();
            d.insert("ar".into(), json!(fit.ar));
            d.insert("converged".into(), json!(fit.optimizer.converged));
            d.insert("exog_coef".into(), fit.exog_coef.map_or(Value::Null, finite_or_null));
            d.insert("intercept".into(), finite_or_null(fit.intercept));
            d.insert("level".into(), json!(config.level));
            d.insert("low_data_warning".into(), json!(fit.low_data_warning));
            d.insert("ma".into(), json!(fit.ma));
            d.insert("order".into(), json!([o.p(), o.d(), o.q()]));
            d.insert("sigma2".into(), finite_or_null(fit.sigma2));
            d.insert("uses_severity".into(), json!(fit.exog_coef.is_some()));
            Ok(ModelRun { forecast, diagnostics: d })
        }
        ModelChoice::Adaptive => {
            let (report, forecast) = adaptive_forecast(series, config.window, horizon)?;
            let mut d = Diagnostics::new();
            d.insert("chosen_model".into(), json!(report.chosen.model_kind().as_str()));
            d.insert("converged".into(), json!(report.converged));
            d.insert(
                "fallback_reason".into(),
                report.fallback_reason.map_or(Value::Null, Value::String),
            );
            d.insert("params".into(), json!(report.params));
            d.insert("slope".into(), finite_or_null(report.slope));
            d.insert("slope_window".into(), json!(report.window));
            d.insert("used_model".into(), json!(report.used.model_kind().as_str()));
            Ok(ModelRun { forecast, diagnostics: d })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::ModelKind;

    #[test]
    fn parse_choice() {
        assert_eq!("Poisson".parse::<ModelChoice>().unwrap(), ModelChoice::Poisson);
        assert_eq!(" adaptive ".parse::<ModelChoice>().unwrap(), ModelChoice::Adaptive);
        let err = "prophet".parse::<ModelChoice>().unwrap_err();
        assert_eq!(err.exit_code(), 64);
        for m in ModelChoice::ALL {
            assert_eq!(m.as_str().parse::<ModelChoice>().unwrap(), m);
        }
    }

    #[test]
    fn every_model_runs() {
        let counts = vec![2, 5, 9, 14, 18, 16, 13, 11, 9, 8, 6, 5, 4, 4, 3, 2, 2, 1, 1, 1];
        let s = CountSeries::daily(counts).unwrap();
        for m in ModelChoice::ALL {
            let run = run_model(&s, m, 10, &ModelConfig::default()).unwrap();
            assert_eq!(run.forecast.len(), 10, "{m}");
            assert!(run.forecast.points.iter().all(|v| v.is_finite() && *v >= 0.0), "{m}");
            assert!(run.diagnostics.contains_key("converged"), "{m}");
        }
    }

    #[test]
    fn intervals_only_for_statistical_models() {
        let s = CountSeries::daily(vec![3, 4, 6, 5, 7, 8, 6, 9, 10, 8, 11, 12]).unwrap();
        let cfg = ModelConfig::default();
        assert!(!run_model(&s, ModelChoice::Decay, 5, &cfg).unwrap().forecast.has_intervals());
        let p = run_model(&s, ModelChoice::Poisson, 5, &cfg).unwrap();
        assert_eq!(p.forecast.model, ModelKind::Poisson);
        assert!(p.forecast.has_intervals());
        assert!(run_model(&s, ModelChoice::Arimax, 5, &cfg).unwrap().forecast.has_intervals());
    }

    #[test]
    fn severity_used_only_when_present() {
        let s = CountSeries::daily(vec![3, 4, 6, 5, 7, 8, 6, 9, 10, 8, 11, 12]).unwrap();
        let run = run_model(&s, ModelChoice::Poisson, 3, &ModelConfig::default()).unwrap();
        assert_eq!(run.diagnostics["uses_severity"], json!(false));
        let sev = vec![4.0, 5.0, 5.5, 6.0, 6.1, 6.3, 7.0, 7.2, 7.1, 7.5, 7.9, 8.0];
        let s = s.with_severity(sev).unwrap();
        let run = run_model(&s, ModelChoice::Poisson, 3, &ModelConfig::default()).unwrap();
        assert_eq!(run.diagnostics["uses_severity"], json!(true));
        let cfg = ModelConfig {
            use_severity: false,
            ..ModelConfig::default()
        };
        let run = run_model(&s, ModelChoice::Poisson, 3, &cfg).unwrap();
        assert_eq!(run.diagnostics["uses_severity"], json!(false));
    }
}
