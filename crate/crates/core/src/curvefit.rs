//! Bounded Levenberg-Marquardt least squares.
//!
//! The engine minimises `sum (y_j - f_j(p))^2` where `f(p)` is any vector-valued
//! prediction function. [`levenberg_marquardt`] is the curve-fitting entry point
//! for a [`ParametricModel`] evaluated on a time grid; [`least_squares`] accepts an
//! arbitrary prediction closure (the ARMA estimator uses it for its recursive
//! one-step predictions).
//!
//! Damping follows the classic Marquardt schedule: start at `1e-3`, multiply by
//! ten on a rejected step and divide by ten on an accepted one. Box constraints
//! are enforced by projecting each trial point onto the box; coordinates that sit
//! on a bound and whose step points outward are frozen for that step.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A curve `y = f(p, t)` with a fixed number of parameters.
pub trait ParametricModel {
    fn arity(&self) -> usize;
    fn evaluate(&self, params: &[f64], t: f64) -> f64;
}

/// Wraps a closure as a [`ParametricModel`].
pub struct FnModel<F> {
    arity: usize,
    f: F,
}

impl<F: Fn(&[f64], f64) -> f64> FnModel<F> {
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<F: Fn(&[f64], f64) -> f64> ParametricModel for FnModel<F> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn evaluate(&self, params: &[f64], t: f64) -> f64 {
        (self.f)(params, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Shape("lower and upper bounds differ in length".into()));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i] <= upper[i])) {
            return Err(Error::Invalid(format!(
                "bound {i}: lower {} exceeds upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(arity: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; arity],
            upper: vec![f64::INFINITY; arity],
        }
    }

    pub fn nonnegative(arity: usize) -> Self {
        Self {
            lower: vec![0.0; arity],
            upper: vec![f64::INFINITY; arity],
        }
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.len() && p.iter().enumerate().all(|(i, v)| self.lower[i] <= *v && *v <= self.upper[i])
    }

    fn project(&self, p: &mut [f64]) {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: Vec<f64>,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sse / (n - arity) * (J'J)^-1` at the solution; `None` when J'J is
    /// numerically singular.
    pub covariance: Option<DMatrix<f64>>,
    /// SSE at the start and after every accepted step.
    pub sse_history: Vec<f64>,
}

const MAX_CONDITION: f64 = 1e12;
const MAX_DAMPING: f64 = 1e32;

/// Central-difference Jacobian of `model` over the grid `t`, shape `|t| x arity`.
///
/// Step for parameter `i` is `max(1e-6, 1e-6 * |p_i|)`.
pub fn numerical_jacobian<M: ParametricModel + ?Sized>(
    model: &M,
    params: &[f64],
    t: &[f64],
) -> Result<DMatrix<f64>> {
    check_finite(params, "parameters")?;
    jacobian_of(&|p: &[f64]| t.iter().map(|&tj| model.evaluate(p, tj)).collect(), params, t.len())
}

fn jacobian_of<F>(predict: &F, params: &[f64], rows: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Vec<f64> + ?Sized,
{
    let mut jac = DMatrix::zeros(rows, params.len());
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        let h = (1e-6 * params[i].abs()).max(1e-6);
        probe[i] = params[i] + h;
        let hi = predict(&probe);
        probe[i] = params[i] - h;
        let lo = predict(&probe);
        probe[i] = params[i];
        for j in 0..rows {
            let d = (hi[j] - lo[j]) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite model output while differentiating parameter {i}"
                )));
            }
            jac[(j, i)] = d;
        }
    }
    Ok(jac)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite {what}")))
    }
}

fn sum_sq_residuals(y: &[f64], f: &[f64]) -> f64 {
    let s: f64 = y.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum();
    if s.is_nan() {
        f64::INFINITY
    } else {
        s
    }
}

/// Fits `model` to `(t, y)` starting from `p0`.
pub fn levenberg_marquardt<M: ParametricModel + ?Sized>(
    model: &M,
    t: &[f64],
    y: &[f64],
    p0: &[f64],
    bounds: &Bounds,
    config: &LmConfig,
) -> Result<FitResult> {
    let arity = model.arity();
    if t.len() != y.len() {
        return Err(Error::Shape(format!("{} time points but {} observations", t.len(), y.len())));
    }
    if y.len() < arity + 1 {
        return Err(Error::InsufficientData {
            needed: arity + 1,
            got: y.len(),
        });
    }
    if p0.len() != arity {
        return Err(Error::Shape(format!("initial guess has {} entries, model has {arity}", p0.len())));
    }
    check_finite(t, "time grid")?;
    least_squares(
        |p: &[f64]| t.iter().map(|&tj| model.evaluate(p, tj)).collect(),
        y,
        p0,
        bounds,
        config,
    )
}

/// Minimises `sum (y - predict(p))^2` over the box `bounds`.
pub fn least_squares<F>(
    predict: F,
    y: &[f64],
    p0: &[f64],
    bounds: &Bounds,
    config: &LmConfig,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n_params = p0.len();
    if bounds.len() != n_params {
        return Err(Error::Shape(format!("{} bounds for {n_params} parameters", bounds.len())));
    }
    check_finite(y, "observations")?;
    check_finite(p0, "initial guess")?;
    if !bounds.contains(p0) {
        return Err(Error::Invalid("initial guess lies outside the bounds".into()));
    }

    let mut p = p0.to_vec();
    let mut f = predict(&p);
    if f.len() != y.len() {
        return Err(Error::Shape(format!("model produced {} values for {} observations", f.len(), y.len())));
    }
    check_finite(&f, "model output at the initial guess")?;
    let mut sse = sum_sq_residuals(y, &f);
    let mut history = vec![sse];
    let mut damping = config.initial_damping;
    let mut converged = sse == 0.0;
    let mut iterations = 0;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let jac = jacobian_of(&predict, &p, y.len())?;
        let resid = DVector::from_iterator(y.len(), y.iter().zip(&f).map(|(a, b)| a - b));
        let normal = jac.transpose() * &jac;
        let grad = jac.transpose() * &resid;

        let projected_grad: f64 = (0..n_params)
            .map(|i| {
                let g = grad[i];
                let pinned = (p[i] <= bounds.lower[i] && g < 0.0) || (p[i] >= bounds.upper[i] && g > 0.0);
                if pinned {
                    0.0
                } else {
                    g * g
                }
            })
            .sum::<f64>()
            .sqrt();
        if projected_grad < config.tol {
            converged = true;
            break;
        }

        let max_diag = normal.diagonal().iter().cloned().fold(0.0, f64::max).max(1.0);
        let scale: Vec<f64> = normal.diagonal().iter().map(|d| d.max(1e-12 * max_diag)).collect();

        loop {
            let Some(step) = damped_step(&normal, &grad, &scale, damping, &p, bounds) else {
                damping *= 10.0;
                if damping > MAX_DAMPING {
                    break;
                }
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            bounds.project(&mut trial);

            let moved: f64 = trial.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let size: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            if moved <= 1e-15 * (size + 1e-15) {
                // No representable progress left: stationary to machine precision.
                converged = true;
                break;
            }

            let f_trial = predict(&trial);
            let sse_trial = sum_sq_residuals(y, &f_trial);
            if sse_trial < sse {
                let rel = (sse - sse_trial) / sse;
                p = trial;
                f = f_trial;
                sse = sse_trial;
                history.push(sse);
                damping = (damping / 10.0).max(1e-15);
                if rel < config.tol || sse == 0.0 {
                    converged = true;
                }
                break;
            }
            damping *= 10.0;
            if damping > MAX_DAMPING {
                break;
            }
        }
        if damping > MAX_DAMPING {
            break;
        }
    }

    let covariance = covariance_at(&predict, &p, y.len(), sse)?;
    Ok(FitResult {
        params: p,
        sse,
        iterations,
        converged,
        covariance,
        sse_history: history,
    })
}

/// Solves `(J'J + damping * diag(scale)) step = J'r` with outward-pointing
/// coordinates on an active bound frozen at zero.
fn damped_step(
    normal: &DMatrix<f64>,
    grad: &DVector<f64>,
    scale: &[f64],
    damping: f64,
    p: &[f64],
    bounds: &Bounds,
) -> Option<Vec<f64>> {
    let n = p.len();
    let mut free: Vec<usize> = (0..n).collect();
    loop {
        let k = free.len();
        let mut step = vec![0.0; n];
        if k == 0 {
            return Some(step);
        }
        let mut a = DMatrix::zeros(k, k);
        let mut b = DVector::zeros(k);
        for (ri, &i) in free.iter().enumerate() {
            b[ri] = grad[i];
            for (ci, &j) in free.iter().enumerate() {
                a[(ri, ci)] = normal[(i, j)];
            }
            a[(ri, ri)] += damping * scale[i];
        }
        let solved = a.clone().cholesky().map(|c| c.solve(&b)).or_else(|| a.lu().solve(&b))?;
        if solved.iter().any(|v| !v.is_finite()) {
            return None;
        }
        for (ri, &i) in free.iter().enumerate() {
            step[i] = solved[ri];
        }
        let before = free.len();
        free.retain(|&i| {
            !((p[i] <= bounds.lower[i] && step[i] < 0.0) || (p[i] >= bounds.upper[i] && step[i] > 0.0))
        });
        if free.len() == before {
            return Some(step);
        }
    }
}

fn covariance_at<F>(predict: &F, p: &[f64], rows: usize, sse: f64) -> Result<Option<DMatrix<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = p.len();
    if k == 0 || rows <= k {
        return Ok(None);
    }
    let jac = match jacobian_of(predict, p, rows) {
        Ok(j) => j,
        Err(_) => return Ok(None),
    };
    let normal = jac.transpose() * &jac;
    Ok(scaled_inverse(&normal, sse / (rows - k) as f64))
}

/// `factor * m^-1` for a symmetric matrix, or `None` when its condition number
/// exceeds `1e12`.
pub(crate) fn scaled_inverse(m: &DMatrix<f64>, factor: f64) -> Option<DMatrix<f64>> {
    if condition_number(m) > MAX_CONDITION {
        return None;
    }
    let inv = m.clone().try_inverse()?;
    let sym = (&inv + inv.transpose()) * (0.5 * factor);
    sym.iter().all(|v| v.is_finite()).then_some(sym)
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() || m.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
