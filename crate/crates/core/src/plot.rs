//! Static SVG chart of observed counts and a forecast.

use std::fmt::Write;

use crate::forecast::Forecast;
use crate::ingest::CountSeries;

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 480.0;

const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 64.0;
const Y_TICKS: usize = 5;
const MAX_X_LABELS: usize = 8;
/// Interval tops beyond this multiple of the data maximum are cut at the frame.
const BAND_HEADROOM: f64 = 3.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    buckets: usize,
    y_max: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (self.buckets.max(2) - 1) as f64;
        LEFT + (WIDTH - LEFT - RIGHT) * i as f64 / span
    }

    fn y(&self, v: f64) -> f64 {
        let v = if v.is_finite() { v.clamp(0.0, self.y_max) } else { self.y_max };
        HEIGHT - BOTTOM - (HEIGHT - TOP - BOTTOM) * v / self.y_max
    }
}

fn points_attr(coords: impl IntoIterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (i, (x, y)) in coords.into_iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

pub fn render_svg(series: &CountSeries, forecast: &Forecast, title: &str) -> String {
    render_svg_with_actual(series, forecast, None, title)
}

/// Like [`render_svg`], also drawing held-out actuals over the forecast period.
pub fn render_svg_with_actual(series: &CountSeries, forecast: &Forecast, actual: Option<&CountSeries>, title: &str) -> String {
    let n = series.len();
    let h = forecast.len();
    let actual_counts = actual.map(|a| a.counts()).unwrap_or(&[]);
    let buckets = n + h.max(actual_counts.len());

    let finite = |v: &f64| v.is_finite();
    let data_max = series
        .counts()
        .iter()
        .chain(actual_counts)
        .map(|&c| c as f64)
        .chain(forecast.points.iter().copied().filter(finite))
        .fold(0.0, f64::max);
    let band_max = forecast
        .upper
        .iter()
        .flatten()
        .copied()
        .filter(finite)
        .fold(0.0, f64::max)
        .min(BAND_HEADROOM * data_max.max(1.0));
    let y_max = (data_max.max(band_max) * 1.05).max(1.0);
    let frame = Frame { buckets, y_max };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r##"<rect x="0.00" y="0.00" width="{WIDTH:.2}" height="{HEIGHT:.2}" fill="#ffffff"/>"##);
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{:.2}" y="{:.2}" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        TOP / 2.0 + 4.0,
        escape(title)
    );

    // Axes and grid.
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        r##"<g class="axes" stroke="#333333" stroke-width="1"><line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"##
    );
    svg.push_str("<g class=\"y-ticks\">\n");
    for k in 0..=Y_TICKS {
        let v = y_max * k as f64 / Y_TICKS as f64;
        let y = frame.y(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
    }
    svg.push_str("</g>\n<g class=\"x-ticks\">\n");
    let label_step = buckets.div_ceil(MAX_X_LABELS).max(1);
    for i in (0..buckets).step_by(label_step) {
        let x = frame.x(i);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 20.0,
            series.bucket_date(i).format("%Y-%m-%d")
        );
    }
    svg.push_str("</g>\n");

    if h > 0 {
        if let (Some(lo), Some(hi)) = (&forecast.lower, &forecast.upper) {
            let upper = (0..h).map(|i| (frame.x(n + i), frame.y(hi[i])));
            let lower = (0..h).rev().map(|i| (frame.x(n + i), frame.y(lo[i])));
            let _ = writeln!(
                svg,
                r##"<polygon class="band" fill="#9ecae1" fill-opacity="0.4" stroke="none" points="{}"/>"##,
                points_attr(upper.chain(lower))
            );
        }
    }

    if n > 0 {
        let history = series.counts().iter().enumerate().map(|(i, &c)| (frame.x(i), frame.y(c as f64)));
        let _ = writeln!(
            svg,
            r##"<polyline class="history" fill="none" stroke="#1f4e79" stroke-width="2" points="{}"/>"##,
            points_attr(history.clone())
        );
        svg.push_str("<g class=\"history-markers\" fill=\"#1f4e79\">\n");
        for (x, y) in history {
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.50"/>"#);
        }
        svg.push_str("</g>\n");
    }

    if !actual_counts.is_empty() {
        let pts = actual_counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (frame.x(n + i), frame.y(c as f64)));
        let _ = writeln!(
            svg,
            r##"<polyline class="actual" fill="none" stroke="#555555" stroke-width="1.5" points="{}"/>"##,
            points_attr(pts)
        );
    }

    if h > 0 {
        let anchor = (n > 0).then(|| (frame.x(n - 1), frame.y(series.counts()[n - 1] as f64)));
        let pts = anchor
            .into_iter()
            .chain(forecast.points.iter().enumerate().map(|(i, &v)| (frame.x(n + i), frame.y(v))));
        let _ = writeln!(
            svg,
            r##"<polyline class="forecast" fill="none" stroke="#d62728" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"##,
            points_attr(pts)
        );
    }

    // Legend.
    let mut entries = vec![("history", "#1f4e79", "observed")];
    if h > 0 {
        entries.push(("forecast", "#d62728", forecast.model.as_str()));
    }
    if !actual_counts.is_empty() {
        entries.push(("actual", "#555555", "held out"));
    }
    svg.push_str("<g class=\"legend\">\n");
    for (k, (class, colour, label)) in entries.iter().enumerate() {
        let x = LEFT + 10.0 + 130.0 * k as f64;
        let y = HEIGHT - 18.0;
        let _ = writeln!(
            svg,
            r#"<line class="legend-{class}" x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0,
            escape(label)
        );
    }
    svg.push_str("</g>\n</svg>\n");
    svg
}
