//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the summary is always printed.
//! Set `UPDATE_GOLDEN=1` to rewrite the golden files instead of comparing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use sightcast::arimax::{fit_arimax, fit_arma_css, forecast_arimax_log, ArimaOrder};
use sightcast::backtest::run_backtest;
use sightcast::growth::{fit_decay, fit_decay_values, fit_logistic, fit_logistic_values};
use sightcast::ingest::{CountSeries, Granularity};
use sightcast::pipeline::{run_model, ModelChoice, ModelConfig};
use sightcast::poisson::{fit_poisson, fit_poisson_design};

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn rel_err(est: f64, truth: f64) -> f64 {
    (est - truth).abs() / truth.abs()
}

// --- 1 -------------------------------------------------------------------

fn parameter_recovery() -> Outcome {
    let t: Vec<f64> = (0..30).map(f64::from).collect();
    let mut worst_decay: f64 = 0.0;
    let mut worst_logistic: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (rng.random_range(5.0..50.0), rng.random_range(0.1..1.0), rng.random_range(0.0..3.0));
        let y: Vec<f64> = t.iter().map(|ti| a * (-b * ti).exp() + c).collect();
        match fit_decay_values(&y) {
            Ok(fit) => {
                for (est, truth) in fit.params.iter().zip([a, b, c]) {
                    worst_decay = worst_decay.max(rel_err(*est, truth));
                }
            }
            Err(e) => return outcome(false, format!("decay seed {seed}: {e}")),
        }

        let (l, k, t0) = (rng.random_range(20.0..200.0), rng.random_range(0.2..1.0), rng.random_range(5.0..20.0));
        let y: Vec<f64> = t.iter().map(|ti| l / (1.0 + (-k * (ti - t0)).exp())).collect();
        match fit_logistic_values(&y) {
            Ok(fit) => {
                for (est, truth) in fit.params.iter().zip([l, k, t0]) {
                    worst_logistic = worst_logistic.max(rel_err(*est, truth));
                }
            }
            Err(e) => return outcome(false, format!("logistic seed {seed}: {e}")),
        }
    }
    outcome(
        worst_decay <= 1e-3 && worst_logistic <= 1e-3,
        format!("max relative error decay {worst_decay:.2e}, logistic {worst_logistic:.2e} (limit 1e-3)"),
    )
}

// --- 2 -------------------------------------------------------------------

/// Poisson log-likelihood without the `ln y!` constant.
fn poisson_ll(y: &[u64], b0: f64, b1: f64) -> f64 {
    y.iter()
        .enumerate()
        .map(|(t, &yi)| {
            let eta = b0 + b1 * t as f64;
            yi as f64 * eta - eta.exp()
        })
        .sum()
}

/// Exhaustive search over a 0.01 lattice; returns the best lattice point.
fn grid_oracle(y: &[u64]) -> (f64, f64, f64) {
    const STEP: f64 = 0.01;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for i in 0..=700 {
        let b0 = -2.0 + STEP * f64::from(i);
        for j in 0..=120 {
            let b1 = -0.6 + STEP * f64::from(j);
            let ll = poisson_ll(y, b0, b1);
            if ll > best.0 {
                best = (ll, b0, b1);
            }
        }
    }
    best
}

/// Squared distance from `(b0, b1)` to `(c0, c1)` in the Fisher metric at `(b0, b1)`.
fn fisher_distance(y: &[u64], (b0, b1): (f64, f64), (c0, c1): (f64, f64)) -> f64 {
    let (d0, d1) = (c0 - b0, c1 - b1);
    (0..y.len())
        .map(|t| {
            let t = t as f64;
            let mu = (b0 + b1 * t).exp();
            mu * (d0 + d1 * t).powi(2)
        })
        .sum()
}

/// The fit must beat every lattice point, and the lattice argmax must sit no
/// farther from the fit (Fisher metric) than the far corner of the fit's own
/// lattice cell. Intercept and trend are strongly correlated, so raw
/// per-coefficient distance to the argmax can exceed one step even at the exact
/// optimum; both distances are reported.
fn poisson_oracle() -> Outcome {
    const STEP: f64 = 0.01;
    let instances: [(u64, usize, f64, f64); 3] = [(11, 12, 1.2, 0.15), (12, 10, 3.0, -0.2), (13, 8, 0.5, 0.3)];
    let mut notes = Vec::new();
    let mut ok = true;
    for (seed, n, b0, b1) in instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<u64> = (0..n)
            .map(|t| Poisson::new((b0 + b1 * t as f64).exp()).unwrap().sample(&mut rng) as u64)
            .collect();
        let series = CountSeries::daily(y.clone()).unwrap();
        let fit = match fit_poisson(&series, false) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        let (grid_ll, g0, g1) = grid_oracle(&y);
        let fitted = (fit.coefficients[0], fit.coefficients[1]);
        let fit_ll = poisson_ll(&y, fitted.0, fitted.1);
        let cell = (
            (fitted.0 / STEP).floor() * STEP,
            (fitted.1 / STEP).floor() * STEP,
        );
        let corner_reach = [(0.0, 0.0), (STEP, 0.0), (0.0, STEP), (STEP, STEP)]
            .iter()
            .map(|(dx, dy)| fisher_distance(&y, fitted, (cell.0 + dx, cell.1 + dy)))
            .fold(0.0, f64::max);
        let argmax_reach = fisher_distance(&y, fitted, (g0, g1));
        let this_ok = fit_ll >= grid_ll - 1e-9 && argmax_reach <= corner_reach;
        ok &= this_ok;
        notes.push(format!(
            "n={n} ll(fit)-ll(grid)={:.2e} fisher {argmax_reach:.2e}<={corner_reach:.2e} |d|=({:.4},{:.4})",
            fit_ll - grid_ll,
            (fitted.0 - g0).abs(),
            (fitted.1 - g1).abs()
        ));
    }

    let y: Vec<u64> = vec![3, 7, 0, 5, 2, 9, 4, 4, 1, 6];
    let mean = y.iter().sum::<u64>() as f64 / y.len() as f64;
    let design = nalgebra::DMatrix::from_element(y.len(), 1, 1.0);
    let intercept = match fit_poisson_design(&design, &y) {
        Ok(f) => f.coefficients[0],
        Err(e) => return outcome(false, format!("intercept-only: {e}")),
    };
    let gap = (intercept - mean.ln()).abs();
    ok &= gap <= 1e-8;
    notes.push(format!("intercept-only |b0 - ln mean| = {gap:.1e}"));
    outcome(ok, notes.join("; "))
}

// --- 3 -------------------------------------------------------------------

/// Ordinary least squares of `w_t` on `(1, w_{t-1})`.
fn lag_regression(w: &[f64]) -> (f64, f64) {
    let x = &w[..w.len() - 1];
    let y = &w[1..];
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let phi = sxy / sxx;
    (my - phi * mx, phi)
}

fn ar1_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let phi_true = rng.random_range(-0.8..0.8);
        let c_true = rng.random_range(-1.0..1.0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut w = vec![c_true / (1.0 - phi_true)];
        for _ in 1..200 {
            let prev = *w.last().unwrap();
            w.push(c_true + phi_true * prev + noise.sample(&mut rng));
        }
        let (c_ols, phi_ols) = lag_regression(&w);
        let fit = match fit_arma_css(&w, None, 1, 0, true) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("seed {seed}: {e}")),
        };
        worst = worst.max((fit.ar[0] - phi_ols).abs());
        worst = worst.max((fit.intercept.unwrap_or(f64::NAN) - c_ols).abs());
    }
    outcome(worst <= 1e-6, format!("max |CSS - lag regression| = {worst:.2e} (limit 1e-6)"))
}

// --- fuzz corpus (4, 5, 8) --------------------------------------------------

struct Case {
    series: CountSeries,
    model: ModelChoice,
    horizon: usize,
    config: ModelConfig,
}

fn random_counts(rng: &mut ChaCha8Rng) -> Vec<u64> {
    let n = rng.random_range(4..60usize);
    let draw = |rng: &mut ChaCha8Rng, lambda: f64| -> u64 {
        if lambda <= 0.0 {
            0
        } else {
            Poisson::new(lambda.min(1e7)).unwrap().sample(rng) as u64
        }
    };
    match rng.random_range(0..7) {
        0 => {
            let peak = rng.random_range(3..n.max(4)) as f64;
            let height = rng.random_range(5.0..80.0);
            (0..n)
                .map(|t| {
                    let t = t as f64;
                    let m = if t <= peak { height * t / peak } else { height * (-(t - peak) * 0.35).exp() };
                    draw(rng, m)
                })
                .collect()
        }
        1 => {
            let l = rng.random_range(10.0..300.0);
            let k = rng.random_range(0.1..1.2);
            let t0 = rng.random_range(0.0..n as f64);
            (0..n).map(|t| draw(rng, l / (1.0 + (-k * (t as f64 - t0)).exp()))).collect()
        }
        2 => {
            let lambda = rng.random_range(0.5..20.0);
            (0..n).map(|_| draw(rng, lambda)).collect()
        }
        3 => (0..n)
            .map(|_| if rng.random_bool(0.1) { rng.random_range(10..200) } else { draw(rng, 1.0) })
            .collect(),
        4 => (0..n).map(|_| if rng.random_bool(0.1) { 1 } else { 0 }).collect(),
        5 => (0..n).map(|_| rng.random_range(0..100)).collect(),
        _ => {
            let rate = rng.random_range(0.1..0.5);
            (0..n).map(|t| draw(rng, (rate * t as f64).exp())).collect()
        }
    }
}

fn corpus() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2025);
    (0..1000)
        .map(|_| {
            let counts = random_counts(&mut rng);
            let n = counts.len();
            let mut series = CountSeries::daily(counts).unwrap();
            if rng.random_bool(0.5) {
                let mut s: f64 = rng.random_range(2.0..9.0);
                let sev: Vec<f64> = (0..n)
                    .map(|_| {
                        s = (s + rng.random_range(-0.4..0.4)).clamp(0.0, 10.0);
                        s
                    })
                    .collect();
                series = series.with_severity(sev).unwrap();
            }
            let model = ModelChoice::ALL[rng.random_range(0..ModelChoice::ALL.len())];
            let order = ArimaOrder::new(rng.random_range(0..=2), rng.random_range(0..=1), rng.random_range(0..=2)).unwrap();
            let config = ModelConfig {
                level: [0.8, 0.9, 0.95, 0.99][rng.random_range(0..4)],
                order,
                ..ModelConfig::default()
            };
            Case {
                series,
                model,
                horizon: rng.random_range(1..=30),
                config,
            }
        })
        .collect()
}

fn nonnegativity(cases: &[Case]) -> Outcome {
    let mut produced = 0;
    let mut violations = 0;
    let mut errors: BTreeMap<&'static str, usize> = BTreeMap::new();
    for case in cases {
        match run_model(&case.series, case.model, case.horizon, &case.config) {
            Ok(run) => {
                produced += 1;
                let f = &run.forecast;
                let bounds = f.lower.iter().chain(f.upper.iter()).flatten();
                if f.len() != case.horizon || f.points.iter().chain(bounds).any(|v| !(*v >= 0.0)) {
                    violations += 1;
                }
            }
            Err(e) => *errors.entry(e.reason()).or_default() += 1,
        }
    }
    outcome(
        violations == 0,
        format!("{produced} forecasts, {violations} violations; typed errors {errors:?}"),
    )
}

fn interval_widening(cases: &[Case]) -> Outcome {
    let mut checked = 0;
    let mut bad = 0;
    for case in cases {
        let use_sev = case.series.severity().is_some();
        let Ok(fit) = fit_arimax(&case.series, case.config.order, use_sev) else {
            continue;
        };
        let Ok(log) = forecast_arimax_log(&fit, &case.series, case.horizon, case.config.level) else {
            continue;
        };
        checked += 1;
        if log.half_widths.windows(2).any(|w| w[1] < w[0]) {
            bad += 1;
        }
    }
    outcome(bad == 0 && checked > 0, format!("{checked} ARIMAX fits, {bad} with shrinking half-width"))
}

fn monotone_objectives(cases: &[Case]) -> Outcome {
    let (mut lm_fits, mut lm_bad, mut irls_fits, mut irls_bad) = (0, 0, 0, 0);
    let mut lm = |h: &[f64]| {
        lm_fits += 1;
        if h.windows(2).any(|w| w[1] > w[0]) {
            lm_bad += 1;
        }
    };
    for case in cases {
        let s = &case.series;
        if let Ok(f) = fit_decay(s) {
            lm(&f.sse_history);
        }
        if let Ok(f) = fit_logistic(s) {
            lm(&f.sse_history);
        }
        if let Ok(f) = fit_arimax(s, case.config.order, s.severity().is_some()) {
            lm(&f.optimizer.sse_history);
        }
        if let Ok(f) = fit_poisson(s, s.severity().is_some()) {
            irls_fits += 1;
            if f.log_likelihood_history.windows(2).any(|w| w[1] < w[0]) {
                irls_bad += 1;
            }
        }
    }
    outcome(
        lm_bad == 0 && irls_bad == 0,
        format!("LM {lm_fits} fits / {lm_bad} increases; IRLS {irls_fits} fits / {irls_bad} decreases"),
    )
}

// --- 6, 7 ------------------------------------------------------------------

fn date(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn adaptive_selection() -> Outcome {
    let rise = (1..=10).map(|i| 3 * i as u64);
    let fall = (1..=10).map(|k| (30.0 * 0.7f64.powi(k)).round() as u64);
    let counts: Vec<u64> = rise.chain(fall).collect();
    let series = CountSeries::new(date("2025-10-01"), Granularity::Daily, counts).unwrap();
    let chosen = |idx: usize| -> String {
        match run_backtest(&series, ModelChoice::Adaptive, series.bucket_date(idx), 5) {
            Ok(r) => r.diagnostics["chosen_model"].as_str().unwrap_or("?").to_string(),
            Err(e) => format!("error: {e}"),
        }
    };
    // Peak at index 9; the window needs a few falling buckets to turn negative.
    let after_peak = chosen(14);
    let during_rise = chosen(6);
    let first_decay = (10..19).find(|&i| chosen(i) == "decay");
    outcome(
        after_peak == "decay" && during_rise == "logistic",
        format!(
            "cutoff 5 buckets after peak -> {after_peak}; during rise -> {during_rise}; first decay pick at {} bucket(s) past peak",
            first_decay.map_or("none".to_string(), |i| (i - 9).to_string())
        ),
    )
}

fn overestimation() -> Outcome {
    let counts: Vec<u64> = (0..30)
        .map(|t| (50.0 / (1.0 + (-0.5 * (t as f64 - 8.0)).exp())).round() as u64)
        .collect();
    let series = CountSeries::new(date("2025-10-01"), Granularity::Daily, counts).unwrap();
    let cutoff = series.bucket_date(12);
    let poisson = match run_backtest(&series, ModelChoice::Poisson, cutoff, 10) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("poisson: {e}")),
    };
    let decay = match run_backtest(&series, ModelChoice::Decay, cutoff, 10) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("decay: {e}")),
    };
    outcome(
        poisson.mean_error > 0.0 && decay.mae < poisson.mae,
        format!(
            "poisson mean error {:+.3}, MAE {:.3}; decay MAE {:.3}",
            poisson.mean_error, poisson.mae, decay.mae
        ),
    )
}

// --- 9 -------------------------------------------------------------------

struct Scenario {
    name: &'static str,
    input: &'static str,
    extra: &'static [&'static str],
    model: &'static str,
    cutoff: &'static str,
}

const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "burst_and_fade",
        input: "burst_and_fade.csv",
        extra: &["--cve", "CVE-2025-61932"],
        model: "adaptive",
        cutoff: "2025-11-01",
    },
    Scenario {
        name: "rising",
        input: "rising.jsonl",
        extra: &[],
        model: "poisson",
        cutoff: "2025-09-14",
    },
    Scenario {
        name: "flat",
        input: "flat.csv",
        extra: &[],
        model: "decay",
        cutoff: "2025-06-14",
    },
    Scenario {
        name: "spiky",
        input: "spiky.csv",
        extra: &["--order", "1,0,1"],
        model: "arimax",
        cutoff: "2025-03-22",
    },
    Scenario {
        name: "all_zero",
        input: "all_zero.counts.csv",
        extra: &["--format", "counts", "--cve", "CVE-2025-0001"],
        model: "adaptive",
        cutoff: "2025-08-12",
    },
    Scenario {
        name: "short_12day",
        input: "short_12day.csv",
        extra: &["--severity", "@fixtures/short_12day.severity.csv"],
        model: "arimax",
        cutoff: "2025-11-18",
    },
];

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run_cli(args: &[String]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sightcast"))
        .args(args)
        .env_clear()
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn scenario_outputs(s: &Scenario, dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let fixtures = manifest_dir().join("tests/fixtures");
    let extra: Vec<String> = s
        .extra
        .iter()
        .map(|a| match a.strip_prefix("@fixtures/") {
            Some(rest) => fixtures.join(rest).display().to_string(),
            None => a.to_string(),
        })
        .collect();
    let input = fixtures.join(s.input).display().to_string();
    let file = |suffix: &str| dir.join(format!("{}.{suffix}", s.name));
    let mut produced = Vec::new();
    for command in ["forecast", "backtest"] {
        let json = file(&format!("{command}.json"));
        let svg = file(&format!("{command}.svg"));
        let mut args: Vec<String> = vec![command.into(), "--input".into(), input.clone(), "--model".into(), s.model.into()];
        args.extend(extra.iter().cloned());
        args.extend(["--horizon".into(), "10".into()]);
        if command == "forecast" {
            args.extend(["--generated-at".into(), "2025-12-01T00:00:00Z".into()]);
        } else {
            args.extend(["--cutoff".into(), s.cutoff.into()]);
        }
        args.extend(["--output".into(), json.display().to_string(), "--svg".into(), svg.display().to_string()]);
        run_cli(&args)?;
        for path in [json, svg] {
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            produced.push((path.file_name().unwrap().to_string_lossy().into_owned(), bytes));
        }
    }
    Ok(produced)
}

fn golden_files() -> Outcome {
    let golden = manifest_dir().join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1");
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for s in SCENARIOS {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            match scenario_outputs(s, dir.path()) {
                Ok(files) => runs.push(files),
                Err(e) => return outcome(false, format!("{}: {e}", s.name)),
            }
        }
        if runs[0] != runs[1] {
            mismatches.push(format!("{} differs between runs", s.name));
        }
        for (name, bytes) in &runs[0] {
            let path = golden.join(name);
            if update {
                std::fs::create_dir_all(&golden).unwrap();
                std::fs::write(&path, bytes).unwrap();
            }
            compared += 1;
            match std::fs::read(&path) {
                Ok(expected) if &expected == bytes => {}
                Ok(_) => mismatches.push(format!("{name} differs from golden")),
                Err(_) => mismatches.push(format!("{name} golden missing")),
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{compared} files byte-identical across {} scenarios", SCENARIOS.len())
        } else {
            mismatches.join("; ")
        },
    )
}

fn main() {
    // Libtest-style filter arguments are accepted and ignored.
    let started = Instant::now();
    let cases = corpus();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("parameter recovery", Box::new(parameter_recovery)),
        ("poisson grid oracle", Box::new(poisson_oracle)),
        ("AR(1) lag-regression oracle", Box::new(ar1_oracle)),
        ("nonnegative forecasts", Box::new(|| nonnegativity(&cases))),
        ("ARIMAX interval widening", Box::new(|| interval_widening(&cases))),
        ("adaptive selection", Box::new(adaptive_selection)),
        ("poisson overestimates, decay closer", Box::new(overestimation)),
        ("IRLS and LM monotonicity", Box::new(|| monotone_objectives(&cases))),
        ("golden files", Box::new(golden_files)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = check();
        let status = if result.ok { "PASS" } else { "FAIL" };
        if !result.ok {
            failed += 1;
        }
        println!(
            "criterion {} {status} {name} [{:.2}s]: {}",
            i + 1,
            t.elapsed().as_secs_f64(),
            result.detail
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.2}s)",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

