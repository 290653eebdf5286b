//! Forecasting CVE sighting counts with growth curves, Poisson regression and ARIMAX.

pub mod adaptive;
pub mod arimax;
pub mod backtest;
pub mod cli;
pub mod curvefit;
pub mod error;
pub mod forecast;
pub mod growth;
pub mod ingest;
pub mod pipeline;
pub mod plot;
pub mod poisson;

pub use error::{Error, Result};
