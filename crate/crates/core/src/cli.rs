//! Command-line front end: `aggregate`, `forecast`, `backtest` and `plot`.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::arimax::ArimaOrder;
use crate::backtest::{run_backtest_with, split_at_cutoff, BacktestReport};
use crate::error::{Error, Result};
use crate::forecast::{Forecast, ModelKind};
use crate::ingest::{
    aggregate, align_severity, clamp_outliers, cve_ids, is_valid_cve_id, parse_count_series, parse_severity, parse_sightings,
    CountSeries, Granularity, InputFormat,
};
use crate::pipeline::{run_model, Diagnostics, ModelChoice, ModelConfig, ModelRun};
use crate::plot::{render_svg, render_svg_with_actual};

#[derive(Debug, Parser)]
#[command(name = "sightcast", version, about = "Forecast per-CVE sighting counts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bucket sightings into a count series (CSV on output).
    Aggregate(AggregateArgs),
    /// Fit a model and write a forecast document (JSON).
    Forecast(ForecastArgs),
    /// Fit on data up to a cutoff and score against the rest.
    Backtest(BacktestArgs),
    /// Render a forecast document as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    /// Sightings file.
    #[arg(long, env = "SIGHTCAST_INPUT")]
    pub input: PathBuf,
    /// csv or jsonl sightings, or `counts` for a date,count series; inferred
    /// from the extension when omitted.
    #[arg(long, env = "SIGHTCAST_FORMAT")]
    pub format: Option<String>,
    /// CVE to select; required when the input holds more than one.
    #[arg(long, env = "SIGHTCAST_CVE")]
    pub cve: Option<String>,
    #[arg(long, env = "SIGHTCAST_GRANULARITY", default_value = "daily")]
    pub granularity: String,
    /// `date,score` CSV of severity scores.
    #[arg(long, env = "SIGHTCAST_SEVERITY")]
    pub severity: Option<PathBuf>,
    /// Clamp counts above median + FACTOR * IQR.
    #[arg(long, value_name = "FACTOR")]
    pub clamp_outliers: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[arg(long, env = "SIGHTCAST_OUTPUT")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// decay, logistic, poisson, arimax or adaptive.
    #[arg(long, env = "SIGHTCAST_MODEL", default_value = "adaptive")]
    pub model: String,
    #[arg(long, env = "SIGHTCAST_HORIZON", default_value_t = 10)]
    pub horizon: usize,
    /// Interval coverage for poisson and arimax.
    #[arg(long, env = "SIGHTCAST_LEVEL", default_value_t = 0.95)]
    pub level: f64,
    /// ARIMAX order as p,d,q.
    #[arg(long, env = "SIGHTCAST_ORDER", default_value = "1,1,1")]
    pub order: String,
    /// Slope window of the adaptive selector.
    #[arg(long, env = "SIGHTCAST_WINDOW", default_value_t = 7)]
    pub window: usize,
    /// Ignore severity even when supplied.
    #[arg(long)]
    pub no_severity: bool,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, env = "SIGHTCAST_OUTPUT")]
    pub output: Option<PathBuf>,
    /// Also write an SVG chart here.
    #[arg(long, env = "SIGHTCAST_SVG")]
    pub svg: Option<PathBuf>,
    /// Timestamp recorded in the document (RFC 3339); defaults to now.
    #[arg(long, env = "SIGHTCAST_GENERATED_AT")]
    pub generated_at: Option<String>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub series: SeriesArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Last date (inclusive) of the training window, YYYY-MM-DD.
    #[arg(long, env = "SIGHTCAST_CUTOFF")]
    pub cutoff: String,
    #[arg(long, env = "SIGHTCAST_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long, env = "SIGHTCAST_SVG")]
    pub svg: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Forecast document produced by `forecast`.
    #[arg(long, env = "SIGHTCAST_INPUT")]
    pub input: PathBuf,
    #[arg(long, env = "SIGHTCAST_OUTPUT")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub date: NaiveDate,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub date: NaiveDate,
    pub point: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDocument {
    pub cve_id: String,
    pub model: String,
    pub generated_at: String,
    pub granularity: Granularity,
    pub history: Vec<HistoryPoint>,
    pub forecast: Vec<ForecastPoint>,
    pub diagnostics: Diagnostics,
}

impl ForecastDocument {
    pub fn new(cve_id: &str, model: ModelChoice, generated_at: DateTime<Utc>, series: &CountSeries, run: &ModelRun) -> Self {
        let history = series
            .counts()
            .iter()
            .enumerate()
            .map(|(i, &count)| HistoryPoint {
                date: series.bucket_date(i),
                count,
                severity: series.severity().map(|s| s[i]),
            })
            .collect();
        let f = &run.forecast;
        let forecast = f
            .points
            .iter()
            .enumerate()
            .map(|(i, &point)| ForecastPoint {
                date: series.bucket_date(series.len() + i),
                point,
                lower: f.lower.as_ref().map(|v| v[i]),
                upper: f.upper.as_ref().map(|v| v[i]),
            })
            .collect();
        Self {
            cve_id: cve_id.to_string(),
            model: model.as_str().to_string(),
            generated_at: generated_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            granularity: series.granularity(),
            history,
            forecast,
            diagnostics: run.diagnostics.clone(),
        }
    }

    /// Rebuilds the observed series and forecast for plotting.
    pub fn to_parts(&self) -> Result<(CountSeries, Forecast)> {
        let first = self
            .history
            .first()
            .ok_or_else(|| Error::EmptySeries("forecast document history".into()))?;
        let mut series = CountSeries::new(
            first.date,
            self.granularity,
            self.history.iter().map(|h| h.count).collect(),
        )?;
        for (i, h) in self.history.iter().enumerate() {
            if h.date != series.bucket_date(i) {
                return Err(Error::Invalid(format!("history is not contiguous at {}", h.date)));
            }
        }
        if self.history.iter().all(|h| h.severity.is_some()) {
            series = series.with_severity(self.history.iter().filter_map(|h| h.severity).collect())?;
        }
        let kind = self.model_kind()?;
        let points = self.forecast.iter().map(|p| p.point).collect();
        let bounds = (
            self.forecast.iter().map(|p| p.lower).collect::<Option<Vec<f64>>>(),
            self.forecast.iter().map(|p| p.upper).collect::<Option<Vec<f64>>>(),
        );
        let forecast = match bounds {
            (Some(lo), Some(hi)) if !self.forecast.is_empty() => Forecast::with_intervals(kind, points, lo, hi)?,
            _ => Forecast::points_only(kind, points),
        };
        Ok((series, forecast))
    }

    fn model_kind(&self) -> Result<ModelKind> {
        let name = match self.diagnostics.get("used_model") {
            Some(Value::String(s)) if self.model == "adaptive" => s.as_str(),
            _ => self.model.as_str(),
        };
        serde_json::from_value(Value::String(name.to_string()))
            .map_err(|_| Error::Invalid(format!("unknown model `{name}` in forecast document")))
    }
}

/// Rounds every float to six decimals so documents diff cleanly.
fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let v = n.as_f64().unwrap_or(0.0);
            if v.abs() < 1e12 {
                let r = (v * 1e6).round() / 1e6;
                *value = serde_json::Number::from_f64(if r == 0.0 { 0.0 } else { r }).map_or(Value::Null, Value::Number);
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| Error::Numeric(e.to_string()))?;
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Numeric(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes via a temporary file in the same directory, then renames over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(path) => write_atomic(path, contents.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

enum Source {
    Sightings(InputFormat),
    Counts,
}

fn source_format(args: &SeriesArgs) -> Result<Source> {
    let name = match &args.format {
        Some(f) => f.to_ascii_lowercase(),
        None => match args.input.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "jsonl" || ext == "ndjson" => "jsonl".to_string(),
            _ => "csv".to_string(),
        },
    };
    if name == "counts" {
        Ok(Source::Counts)
    } else {
        name.parse().map(Source::Sightings)
    }
}

fn checked_cve(cve: &str) -> Result<String> {
    if is_valid_cve_id(cve) {
        Ok(cve.to_string())
    } else {
        Err(Error::Usage(format!("`{cve}` is not a CVE id")))
    }
}

/// Reads, filters and buckets the input; returns the CVE id and its series.
pub fn load_series(args: &SeriesArgs) -> Result<(String, CountSeries)> {
    let granularity: Granularity = args.granularity.parse()?;
    let text = read_file(&args.input)?;
    let (cve, mut series) = match source_format(args)? {
        Source::Counts => {
            let cve = args
                .cve
                .as_deref()
                .ok_or_else(|| Error::Usage("--cve is required with --format counts".into()))?;
            (checked_cve(cve)?, parse_count_series(&text, granularity)?)
        }
        Source::Sightings(format) => {
            let records = parse_sightings(&text, format)?;
            let cve = match &args.cve {
                Some(c) => checked_cve(c)?,
                None => match cve_ids(&records).as_slice() {
                    [only] => only.clone(),
                    [] => return Err(Error::EmptySeries("any CVE".into())),
                    many => {
                        return Err(Error::Usage(format!(
                            "input holds {} CVEs; choose one with --cve",
                            many.len()
                        )))
                    }
                },
            };
            let series = aggregate(&records, granularity, Some(&cve))?;
            (cve, series)
        }
    };
    if let Some(factor) = args.clamp_outliers {
        series = clamp_outliers(&series, factor)?;
    }
    if let Some(path) = &args.severity {
        series = align_severity(&series, &parse_severity(&read_file(path)?)?)?;
    }
    Ok((cve, series))
}

fn model_config(args: &ModelArgs) -> Result<(ModelChoice, ModelConfig)> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(Error::Usage(format!("--level must lie in (0, 1), got {}", args.level)));
    }
    if args.window < 2 {
        return Err(Error::Usage(format!("--window must be at least 2, got {}", args.window)));
    }
    let order: ArimaOrder = args.order.parse()?;
    Ok((
        args.model.parse()?,
        ModelConfig {
            level: args.level,
            order,
            use_severity: !args.no_severity,
            window: args.window,
        },
    ))
}

fn generated_at(arg: Option<&str>) -> Result<DateTime<Utc>> {
    match arg {
        Some(s) => DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| Error::Usage(format!("--generated-at `{s}` is not RFC 3339: {e}"))),
        None => Ok(Utc::now()),
    }
}

pub fn series_csv(series: &CountSeries) -> String {
    let mut out = String::from(if series.severity().is_some() { "date,count,severity\n" } else { "date,count\n" });
    for (i, c) in series.counts().iter().enumerate() {
        out.push_str(&format!("{},{c}", series.bucket_date(i)));
        if let Some(s) = series.severity() {
            out.push_str(&format!(",{}", s[i]));
        }
        out.push('\n');
    }
    out
}

fn cmd_aggregate(args: &AggregateArgs) -> Result<()> {
    let (_, series) = load_series(&args.series)?;
    emit(args.output.as_deref(), &series_csv(&series))
}

fn cmd_forecast(args: &ForecastArgs) -> Result<()> {
    let (choice, config) = model_config(&args.model)?;
    let stamp = generated_at(args.generated_at.as_deref())?;
    let (cve, series) = load_series(&args.series)?;
    let run = run_model(&series, choice, args.model.horizon, &config)?;
    let doc = ForecastDocument::new(&cve, choice, stamp, &series, &run);
    if let Some(svg) = &args.svg {
        let title = format!("{cve} {choice} forecast");
        write_atomic(svg, render_svg(&series, &run.forecast, &title).as_bytes())?;
    }
    emit(args.output.as_deref(), &to_json(&doc)?)
}

#[derive(Serialize)]
struct BacktestDocument<'a> {
    cve_id: &'a str,
    granularity: Granularity,
    #[serde(flatten)]
    report: &'a BacktestReport,
}

fn cmd_backtest(args: &BacktestArgs) -> Result<()> {
    let (choice, config) = model_config(&args.model)?;
    let cutoff = NaiveDate::parse_from_str(&args.cutoff, "%Y-%m-%d")
        .map_err(|e| Error::Usage(format!("--cutoff `{}` is not YYYY-MM-DD: {e}", args.cutoff)))?;
    let (cve, series) = load_series(&args.series)?;
    let report = run_backtest_with(&series, choice, cutoff, args.model.horizon, &config)?;
    if let Some(svg) = &args.svg {
        let (train, holdout) = split_at_cutoff(&series, cutoff)?;
        let actual = holdout.slice(0, report.horizon)?;
        let title = format!("{cve} {choice} backtest from {cutoff}");
        write_atomic(svg, render_svg_with_actual(&train, &report.forecast, Some(&actual), &title).as_bytes())?;
    }
    let doc = BacktestDocument {
        cve_id: &cve,
        granularity: series.granularity(),
        report: &report,
    };
    emit(args.output.as_deref(), &to_json(&doc)?)
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let text = read_file(&args.input)?;
    let doc: ForecastDocument = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let (series, forecast) = doc.to_parts()?;
    let title = args
        .title
        .clone()
        .unwrap_or_else(|| format!("{} {} forecast", doc.cve_id, doc.model));
    emit(args.output.as_deref(), &render_svg(&series, &forecast, &title))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Aggregate(a) => cmd_aggregate(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Plot(a) => cmd_plot(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
///
/// Failures print a single `error: <reason>: <message>` line on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let msg = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("error: usage: {msg}");
            return 64;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.reason());
            e.exit_code()
        }
    }
}
