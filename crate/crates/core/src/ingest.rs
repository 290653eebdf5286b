//! Sighting records and the regular count series built from them.
//!
//! Records arrive as CSV or JSON lines, one event per row. [`aggregate`] buckets
//! them by UTC day or ISO week and zero-fills every bucket without records, so
//! downstream models always see a contiguous series.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Timelike, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn cve_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"^CVE-\d{4}-\d{4,}$").expect("valid regex"))
}

/// True when `id` looks like `CVE-YYYY-NNNN` (four or more trailing digits).
pub fn is_valid_cve_id(id: &str) -> bool {
    cve_pattern().is_match(id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SightingKind {
    Seen,
    Confirmed,
    Exploited,
    Other,
}

impl SightingKind {
    /// Unknown labels map to [`SightingKind::Other`].
    pub fn from_label(label: &str) -> Self {
        match label.trim().to_ascii_lowercase().as_str() {
            "seen" => SightingKind::Seen,
            "confirmed" => SightingKind::Confirmed,
            "exploited" => SightingKind::Exploited,
            _ => SightingKind::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SightingRecord {
    pub timestamp: DateTime<Utc>,
    pub cve_id: String,
    pub source: String,
    pub kind: SightingKind,
}

impl SightingRecord {
    pub fn new(
        timestamp: DateTime<Utc>,
        cve_id: impl Into<String>,
        source: impl Into<String>,
        kind: SightingKind,
    ) -> Result<Self> {
        let cve_id = cve_id.into();
        if !is_valid_cve_id(&cve_id) {
            return Err(Error::Invalid(format!("malformed CVE id `{cve_id}`")));
        }
        Ok(Self {
            timestamp: timestamp.with_nanosecond(0).unwrap_or(timestamp),
            cve_id,
            source: source.into(),
            kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    JsonLines,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "json-lines" | "jsonlines" | "ndjson" => Ok(InputFormat::JsonLines),
            other => Err(Error::Usage(format!(
                "unknown input format `{other}` (expected csv or json-lines)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Daily,
    Weekly,
}

impl Granularity {
    pub fn days(self) -> i64 {
        match self {
            Granularity::Daily => 1,
            Granularity::Weekly => 7,
        }
    }

    /// First day of the bucket containing `date`. Weekly buckets start on Monday.
    pub fn bucket_start(self, date: NaiveDate) -> NaiveDate {
        match self {
            Granularity::Daily => date,
            Granularity::Weekly => {
                date - Duration::days(i64::from(date.weekday().num_days_from_monday()))
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Daily => "daily",
            Granularity::Weekly => "weekly",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "daily" | "day" => Ok(Granularity::Daily),
            "weekly" | "week" => Ok(Granularity::Weekly),
            other => Err(Error::Usage(format!(
                "unknown granularity `{other}` (expected daily or weekly)"
            ))),
        }
    }
}

/// Contiguous, zero-filled count series with an optional aligned severity covariate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountSeries {
    start: NaiveDate,
    granularity: Granularity,
    counts: Vec<u64>,
    severity: Option<Vec<f64>>,
}

impl CountSeries {
    pub fn new(start: NaiveDate, granularity: Granularity, counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptySeries("an empty count vector".into()));
        }
        Ok(Self {
            start: granularity.bucket_start(start),
            granularity,
            counts,
            severity: None,
        })
    }

    /// Daily series starting at an arbitrary fixed date; handy for synthetic data.
    pub fn daily(counts: Vec<u64>) -> Result<Self> {
        let start = NaiveDate::from_ymd_opt(2025, 1, 1).expect("valid date");
        Self::new(start, Granularity::Daily, counts)
    }

    pub fn with_severity(mut self, severity: Vec<f64>) -> Result<Self> {
        if severity.len() != self.counts.len() {
            return Err(Error::Shape(format!(
                "severity has {} values but the series has {} buckets",
                severity.len(),
                self.counts.len()
            )));
        }
        if let Some(bad) = severity.iter().find(|s| !(0.0..=10.0).contains(*s)) {
            return Err(Error::Invalid(format!("severity {bad} outside [0, 10]")));
        }
        self.severity = Some(severity);
        Ok(self)
    }

    pub fn without_severity(mut self) -> Self {
        self.severity = None;
        self
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn severity(&self) -> Option<&[f64]> {
        self.severity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    /// Start date of bucket `i` (may lie past the end of the series).
    pub fn bucket_date(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64 * self.granularity.days())
    }

    pub fn last_date(&self) -> NaiveDate {
        self.bucket_date(self.len() - 1)
    }

    pub fn is_all_zero(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }

    /// Buckets `[from, to)` as a new series.
    pub fn slice(&self, from: usize, to: usize) -> Result<Self> {
        if from >= to || to > self.len() {
            return Err(Error::Range(format!(
                "bucket range {from}..{to} invalid for series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            start: self.bucket_date(from),
            granularity: self.granularity,
            counts: self.counts[from..to].to_vec(),
            severity: self.severity.as_ref().map(|s| s[from..to].to_vec()),
        })
    }

    /// Appends `next`, which must begin at the bucket right after `self` ends.
    pub fn concat(&self, next: &CountSeries) -> Result<Self> {
        if next.granularity != self.granularity || next.start != self.bucket_date(self.len()) {
            return Err(Error::Range("series are not contiguous".into()));
        }
        let severity = match (&self.severity, &next.severity) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::Shape("only one side carries severity".into())),
        };
        Ok(Self {
            start: self.start,
            granularity: self.granularity,
            counts: self.counts.iter().chain(&next.counts).copied().collect(),
            severity,
        })
    }

    pub fn with_counts(&self, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != self.len() {
            return Err(Error::Shape("replacement counts differ in length".into()));
        }
        Ok(Self {
            counts,
            ..self.clone()
        })
    }
}

/// Real-valued counterpart of [`CountSeries`], used after transforms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealSeries {
    start: NaiveDate,
    granularity: Granularity,
    values: Vec<f64>,
}

impl RealSeries {
    pub fn new(start: NaiveDate, granularity: Granularity, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySeries("an empty value vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("series contains non-finite values".into()));
        }
        Ok(Self {
            start,
            granularity,
            values,
        })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    timestamp: String,
    cve_id: String,
    source: String,
    kind: String,
}

fn build_record(line: usize, timestamp: &str, cve_id: &str, source: &str, kind: &str) -> Result<SightingRecord> {
    let timestamp = DateTime::parse_from_rfc3339(timestamp.trim())
        .map_err(|e| Error::Parse {
            line,
            message: format!("invalid timestamp `{}`: {e}", timestamp.trim()),
        })?
        .with_timezone(&Utc);
    let cve_id = cve_id.trim();
    if !is_valid_cve_id(cve_id) {
        return Err(Error::Parse {
            line,
            message: format!("invalid CVE id `{cve_id}`"),
        });
    }
    SightingRecord::new(timestamp, cve_id, source.trim(), SightingKind::from_label(kind))
}

/// Parses sighting records, preserving input order.
///
/// CSV columns are `timestamp,cve_id,source,kind`; a header row is optional.
/// Errors name the 1-based input line.
pub fn parse_sightings(input: &str, format: InputFormat) -> Result<Vec<SightingRecord>> {
    match format {
        InputFormat::Csv => parse_csv(input),
        InputFormat::JsonLines => parse_json_lines(input),
    }
}

fn parse_csv(input: &str) -> Result<Vec<SightingRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(input.as_bytes());
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && row.get(0).is_some_and(|f| f.trim().eq_ignore_ascii_case("timestamp")) {
            continue;
        }
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, found {}", row.len()),
            });
        }
        out.push(build_record(line, &row[0], &row[1], &row[2], &row[3])?);
    }
    Ok(out)
}

fn parse_json_lines(input: &str) -> Result<Vec<SightingRecord>> {
    let mut out = Vec::new();
    for (idx, text) in input.lines().enumerate() {
        let line = idx + 1;
        if text.trim().is_empty() {
            continue;
        }
        let raw: JsonRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        out.push(build_record(line, &raw.timestamp, &raw.cve_id, &raw.source, &raw.kind)?);
    }
    Ok(out)
}

/// Buckets records into a zero-filled count series.
///
/// Every kind of sighting counts as one. Duplicates are counted separately.
pub fn aggregate(
    records: &[SightingRecord],
    granularity: Granularity,
    cve_filter: Option<&str>,
) -> Result<CountSeries> {
    let buckets: Vec<NaiveDate> = records
        .iter()
        .filter(|r| cve_filter.is_none_or(|cve| r.cve_id == cve))
        .map(|r| granularity.bucket_start(r.timestamp.date_naive()))
        .collect();
    let (Some(&first), Some(&last)) = (buckets.iter().min(), buckets.iter().max()) else {
        let what = cve_filter.map_or_else(|| "any CVE".to_string(), |c| format!("`{c}`"));
        return Err(Error::EmptySeries(what));
    };
    let step = granularity.days();
    let len = ((last - first).num_days() / step) as usize + 1;
    let mut counts = vec![0u64; len];
    for b in buckets {
        counts[((b - first).num_days() / step) as usize] += 1;
    }
    CountSeries::new(first, granularity, counts)
}

/// Distinct CVE ids in first-seen order.
pub fn cve_ids(records: &[SightingRecord]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if !ids.contains(&r.cve_id) {
            ids.push(r.cve_id.clone());
        }
    }
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityPoint {
    pub date: NaiveDate,
    pub score: f64,
}

/// Parses a `date,score` CSV side-file (header optional, score in [0, 10]).
pub fn parse_severity(input: &str) -> Result<Vec<SeverityPoint>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input.as_bytes());
    let mut out = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && row.get(0).is_some_and(|f| f.eq_ignore_ascii_case("date")) {
            continue;
        }
        if row.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", row.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("invalid date `{}`: {e}", &row[0]),
        })?;
        let score: f64 = row[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("invalid score `{}`", &row[1]),
        })?;
        if !(0.0..=10.0).contains(&score) {
            return Err(Error::Parse {
                line,
                message: format!("score {score} outside [0, 10]"),
            });
        }
        out.push(SeverityPoint { date, score });
    }
    Ok(out)
}

/// Reads a `date,count[,severity]` CSV (the shape written by `aggregate`).
///
/// Dates must be contiguous buckets at `granularity`.
pub fn parse_count_series(input: &str, granularity: Granularity) -> Result<CountSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input.as_bytes());
    let mut start = None;
    let mut columns = None;
    let mut counts = Vec::new();
    let mut severity = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(idx + 1, |p| p.line() as usize);
        if idx == 0 && row.get(0).is_some_and(|f| f.eq_ignore_ascii_case("date")) {
            continue;
        }
        let width = *columns.get_or_insert(row.len());
        if !(2..=3).contains(&row.len()) || row.len() != width {
            return Err(Error::Parse {
                line,
                message: format!("expected {width} fields (date,count[,severity]), found {}", row.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("invalid date `{}`: {e}", &row[0]),
        })?;
        let first = *start.get_or_insert(date);
        let expected = first + Duration::days(counts.len() as i64 * granularity.days());
        if date != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected bucket {expected}, found {date}"),
            });
        }
        counts.push(row[1].parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("invalid count `{}`", &row[1]),
        })?);
        if row.len() == 3 {
            severity.push(row[2].parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("invalid severity `{}`", &row[2]),
            })?);
        }
    }
    let start = start.ok_or_else(|| Error::EmptySeries("count file".into()))?;
    let series = CountSeries::new(start, granularity, counts)?;
    if severity.is_empty() {
        Ok(series)
    } else {
        series.with_severity(severity)
    }
}

/// Attaches severity to `series`, one value per bucket.
///
/// Each bucket takes the most recent score dated on or before the bucket's
/// last day. Buckets before the first score take the first score.
pub fn align_severity(series: &CountSeries, points: &[SeverityPoint]) -> Result<CountSeries> {
    if points.is_empty() {
        return Err(Error::MissingCovariate("severity file has no scores".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.date);
    let span = Duration::days(series.granularity().days() - 1);
    let severity = (0..series.len())
        .map(|i| {
            let bucket_end = series.bucket_date(i) + span;
            let idx = sorted.partition_point(|p| p.date <= bucket_end);
            sorted[idx.saturating_sub(1)].score
        })
        .collect();
    series.clone().with_severity(severity)
}

/// Elementwise `ln(1 + x)`.
pub fn log1p_transform(series: &CountSeries) -> RealSeries {
    RealSeries {
        start: series.start,
        granularity: series.granularity,
        values: series.counts.iter().map(|&c| (c as f64).ln_1p()).collect(),
    }
}

/// Elementwise `exp(x) - 1`, clipped below at zero.
pub fn inverse_log1p(series: &RealSeries) -> RealSeries {
    RealSeries {
        start: series.start,
        granularity: series.granularity,
        values: series.values.iter().map(|&v| expm1_clipped(v)).collect(),
    }
}

pub(crate) fn expm1_clipped(v: f64) -> f64 {
    v.exp_m1().max(0.0)
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn outlier_threshold(counts: &[u64], factor: f64) -> f64 {
    let mut sorted: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let median = quantile_sorted(&sorted, 0.5);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    median + factor * iqr
}

/// Caps values above `median + factor * IQR` at that threshold (rounded down).
///
/// The threshold is recomputed until no value exceeds it, so the result is a
/// fixed point: clamping twice equals clamping once.
pub fn clamp_outliers(series: &CountSeries, factor: f64) -> Result<CountSeries> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Invalid(format!("clamp factor must be positive, got {factor}")));
    }
    let mut counts = series.counts.clone();
    loop {
        let cap = outlier_threshold(&counts, factor).floor() as u64;
        let mut changed = false;
        for c in counts.iter_mut().filter(|c| **c > cap) {
            *c = cap;
            changed = true;
        }
        if !changed {
            break;
        }
    }
    series.with_counts(counts)
}
