use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model family that produced a forecast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Decay,
    Logistic,
    Poisson,
    Arimax,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Decay => "decay",
            ModelKind::Logistic => "logistic",
            ModelKind::Poisson => "poisson",
            ModelKind::Arimax => "arimax",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Point predictions per future bucket, with optional interval bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub model: ModelKind,
    pub points: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Forecast {
    pub fn points_only(model: ModelKind, points: Vec<f64>) -> Self {
        Self {
            model,
            points,
            lower: None,
            upper: None,
        }
    }

    pub fn with_intervals(model: ModelKind, points: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != points.len() || upper.len() != points.len() {
            return Err(Error::Shape("interval bounds differ in length from points".into()));
        }
        Ok(Self {
            model,
            points,
            lower: Some(lower),
            upper: Some(upper),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_intervals(&self) -> bool {
        self.lower.is_some() && self.upper.is_some()
    }

    /// Keeps the first `n` steps.
    pub fn truncated(&self, n: usize) -> Self {
        let cut = |v: &Vec<f64>| v[..n.min(v.len())].to_vec();
        Self {
            model: self.model,
            points: cut(&self.points),
            lower: self.lower.as_ref().map(cut),
            upper: self.upper.as_ref().map(cut),
        }
    }
}

/// Two-sided standard normal quantile for a central interval of mass `level`.
pub(crate) fn z_score(level: f64) -> Result<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Invalid(format!("interval level must lie in (0, 1), got {level}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}
