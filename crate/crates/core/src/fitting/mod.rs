//! Weighted nonlinear least squares (Levenberg–Marquardt) and the model zoo
//! built on it: the antibunching/bunching g2 model, the saturation law and a
//! straight line.

mod g2;
mod saturation;

pub use g2::{fit_g2, fit_g2_with, G2Fit, G2FitOptions, G2Model, ResidualKind};
pub use saturation::{
    fit_saturation, g2_vs_power, PowerPoint, PowerSweep, SaturationFit, SaturationModel,
    SaturationPoint,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("{points} points cannot constrain {params} parameters")]
    InsufficientData { points: usize, params: usize },
    #[error("sigma[{0}] must be finite and positive")]
    InvalidSigma(usize),
    #[error("x, y and sigma lengths differ")]
    LengthMismatch,
    #[error("initial parameters have length {found}, model expects {expected}")]
    BadInit { expected: usize, found: usize },
    #[error("model has no automatic initial guess; pass explicit parameters")]
    MissingInit,
    #[error("curvature matrix is singular at the optimum")]
    SingularCurvature,
    #[error("residuals became non-finite")]
    NonFinite,
    #[error("no antibunching dip: deepest point is only {significance:.2} sigma below the plateau")]
    NoDipDetected { significance: f64 },
    #[error("insufficient span: {0}")]
    InsufficientSpan(String),
}

/// Engine settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop when an accepted step lowers chi2 by less than this fraction.
    pub rel_tolerance: f64,
    /// Relative step of the central-difference Jacobian.
    pub fd_step: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-10,
            fd_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Curvature-matrix errors scaled by `sqrt(chi2_reduced)`.
    pub standard_errors: Vec<f64>,
    /// Row-major `p x p` covariance, same scaling as the errors.
    pub covariance: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub chi2_reduced: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.standard_errors[i])
    }

    pub fn cov(&self, i: usize, j: usize) -> f64 {
        self.covariance[i * self.names.len() + j]
    }

    /// Standard error of a scalar function of the parameters, given its
    /// gradient.
    pub fn propagate(&self, gradient: &[f64]) -> f64 {
        let p = self.names.len();
        let mut var = 0.0;
        for i in 0..p {
            for j in 0..p {
                var += gradient[i] * gradient[j] * self.cov(i, j);
            }
        }
        var.max(0.0).sqrt()
    }
}

/// `(x, y, sigma)` columns.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, sigma: Vec<f64>) -> Result<Self, FitError> {
        if x.len() != y.len() || x.len() != sigma.len() {
            return Err(FitError::LengthMismatch);
        }
        if let Some(i) = sigma.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(FitError::InvalidSigma(i));
        }
        Ok(Self { x, y, sigma })
    }

    pub fn from_triples(points: &[(f64, f64, f64)]) -> Result<Self, FitError> {
        Self::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
            points.iter().map(|p| p.2).collect(),
        )
    }

    /// Unit weights.
    pub fn unweighted(x: Vec<f64>, y: Vec<f64>) -> Result<Self, FitError> {
        let n = x.len();
        Self::new(x, y, vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// A curve `y = f(x; params)`.
pub trait Model {
    fn param_names(&self) -> Vec<String>;

    fn eval(&self, x: f64, params: &[f64]) -> f64;

    /// Maps parameters back into the feasible box.
    fn project(&self, _params: &mut [f64]) {}

    fn initial_guess(&self, _data: &Dataset) -> Option<Vec<f64>> {
        None
    }
}

/// `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl Model for Linear {
    fn param_names(&self) -> Vec<String> {
        vec!["intercept".into(), "slope".into()]
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] + p[1] * x
    }

    fn initial_guess(&self, data: &Dataset) -> Option<Vec<f64>> {
        let n = data.len();
        if n == 0 {
            return None;
        }
        let (x0, y0) = (data.x[0], data.y[0]);
        let (x1, y1) = (data.x[n - 1], data.y[n - 1]);
        let slope = if x1 != x0 { (y1 - y0) / (x1 - x0) } else { 0.0 };
        Some(vec![y0 - slope * x0, slope])
    }
}

/// Fits `model` to `data`, minimizing `sum(((y - f(x)) / sigma)^2)`.
/// A result with `converged == false` is the best point found before the
/// iteration limit.
pub fn fit(model: &dyn Model, data: &Dataset, init: Option<&[f64]>) -> Result<FitResult, FitError> {
    fit_with(model, data, init, &FitConfig::default())
}

pub fn fit_with(
    model: &dyn Model,
    data: &Dataset,
    init: Option<&[f64]>,
    cfg: &FitConfig,
) -> Result<FitResult, FitError> {
    let names = model.param_names();
    let init = match init {
        Some(p) => p.to_vec(),
        None => model.initial_guess(data).ok_or(FitError::MissingInit)?,
    };
    if init.len() != names.len() {
        return Err(FitError::BadInit {
            expected: names.len(),
            found: init.len(),
        });
    }
    if data.len() < names.len() {
        return Err(FitError::InsufficientData {
            points: data.len(),
            params: names.len(),
        });
    }
    let residual = |p: &[f64], r: &mut [f64]| {
        for (i, ri) in r.iter_mut().enumerate() {
            *ri = (data.y[i] - model.eval(data.x[i], p)) / data.sigma[i];
        }
    };
    minimize(residual, data.len(), &init, names, |p| model.project(p), cfg)
}

/// Levenberg–Marquardt on an arbitrary residual vector of length `n`.
/// `project` clamps parameters into their feasible region after every step.
pub fn minimize<R, P>(
    mut residual: R,
    n: usize,
    init: &[f64],
    names: Vec<String>,
    mut project: P,
    cfg: &FitConfig,
) -> Result<FitResult, FitError>
where
    R: FnMut(&[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
{
    let d = descend(&mut residual, n, init, &mut project, cfg)?;
    let np = init.len();
    let (p, r, chi2) = (d.values, d.residuals, d.chi2);
    let jac = jacobian(&mut residual, &mut project, &p, &r, &d.scale, cfg.fd_step);
    let a = jac.transpose() * &jac;
    let dof = n - np;
    let chi2_reduced = chi2 / dof.max(1) as f64;
    let inv = invert_spd(&a).ok_or(FitError::SingularCurvature)?;
    let covariance: Vec<f64> = (0..np * np)
        .map(|k| inv[(k / np, k % np)] * chi2_reduced)
        .collect();
    let standard_errors = (0..np).map(|i| covariance[i * np + i].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names,
        values: p,
        standard_errors,
        covariance,
        chi2,
        dof,
        chi2_reduced,
        converged: d.converged,
        iterations: d.iterations,
    })
}

/// Least-squares minimum without the covariance step, for callers that
/// only need the best point (which may sit on a flat or degenerate ridge).
#[derive(Debug, Clone, PartialEq)]
pub struct MinimumPoint {
    pub values: Vec<f64>,
    pub chi2: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn minimize_point<R, P>(
    mut residual: R,
    n: usize,
    init: &[f64],
    mut project: P,
    cfg: &FitConfig,
) -> Result<MinimumPoint, FitError>
where
    R: FnMut(&[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
{
    let d = descend(&mut residual, n, init, &mut project, cfg)?;
    Ok(MinimumPoint {
        values: d.values,
        chi2: d.chi2,
        converged: d.converged,
        iterations: d.iterations,
    })
}

struct Descent {
    values: Vec<f64>,
    residuals: Vec<f64>,
    chi2: f64,
    scale: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn descend<R, P>(
    residual: &mut R,
    n: usize,
    init: &[f64],
    project: &mut P,
    cfg: &FitConfig,
) -> Result<Descent, FitError>
where
    R: FnMut(&[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
{
    let np = init.len();
    if n < np {
        return Err(FitError::InsufficientData { points: n, params: np });
    }
    let mut p = init.to_vec();
    project(&mut p);
    let scale: Vec<f64> = p.iter().map(|v| if *v != 0.0 { v.abs() } else { 1.0 }).collect();

    let mut r = vec![0.0; n];
    residual(&p, &mut r);
    let mut chi2 = sum_sq(&r);
    if !chi2.is_finite() {
        return Err(FitError::NonFinite);
    }

    let mut lambda = 1e-3;
    let mut converged = chi2 == 0.0;
    let mut iterations = 0;
    let mut trial = vec![0.0; np];
    let mut r_trial = vec![0.0; n];
    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let jac = jacobian(residual, project, &p, &r, &scale, cfg.fd_step);
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let max_diag = (0..np).map(|i| a[(i, i)]).fold(0.0, f64::max);
        if max_diag == 0.0 {
            // residuals do not depend on any parameter
            converged = true;
            break;
        }
        loop {
            let mut damped = a.clone();
            for i in 0..np {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let step = damped.cholesky().map(|c| c.solve(&g));
            let Some(step) = step else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    converged = true;
                    break;
                }
                continue;
            };
            // jac is -d(residual)/dp, so the step is +(J^T J + damping)^-1 J^T r
            for i in 0..np {
                trial[i] = p[i] + step[i];
            }
            project(&mut trial);
            residual(&trial, &mut r_trial);
            let chi2_trial = sum_sq(&r_trial);
            if chi2_trial.is_finite() && chi2_trial < chi2 {
                let drop = chi2 - chi2_trial;
                p.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                chi2 = chi2_trial;
                lambda = (lambda / 10.0).max(1e-12);
                if chi2 == 0.0 || drop <= cfg.rel_tolerance * (chi2 + drop) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no downhill step left at machine precision
                converged = true;
                break;
            }
        }
    }
    Ok(Descent {
        values: p,
        residuals: r,
        chi2,
        scale,
        converged,
        iterations,
    })
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Derivative of the model (minus the residual derivative) by central
/// differences; one-sided where the projection blocks a side.
fn jacobian<R, P>(
    residual: &mut R,
    project: &mut P,
    p: &[f64],
    r0: &[f64],
    scale: &[f64],
    rel_step: f64,
) -> DMatrix<f64>
where
    R: FnMut(&[f64], &mut [f64]),
    P: FnMut(&mut [f64]),
{
    let n = r0.len();
    let np = p.len();
    let mut jac = DMatrix::zeros(n, np);
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut q = p.to_vec();
    for j in 0..np {
        // floor keeps the step resolvable when a parameter collapses toward 0
        let h = rel_step * p[j].abs().max(1e-2 * scale[j]);
        q.copy_from_slice(p);
        q[j] = p[j] + h;
        project(&mut q);
        let up_ok = q.iter().zip(p).enumerate().all(|(k, (a, b))| if k == j { *a == p[j] + h } else { a == b });
        q.copy_from_slice(p);
        q[j] = p[j] - h;
        project(&mut q);
        let down_ok = q.iter().zip(p).enumerate().all(|(k, (a, b))| if k == j { *a == p[j] - h } else { a == b });
        let (hi, lo, width) = match (up_ok, down_ok) {
            (true, true) => (p[j] + h, p[j] - h, 2.0 * h),
            (true, false) => (p[j] + h, p[j], h),
            (false, true) => (p[j], p[j] - h, h),
            (false, false) => continue,
        };
        q.copy_from_slice(p);
        q[j] = hi;
        if hi == p[j] {
            plus.copy_from_slice(r0);
        } else {
            residual(&q, &mut plus);
        }
        q[j] = lo;
        if lo == p[j] {
            minus.copy_from_slice(r0);
        } else {
            residual(&q, &mut minus);
        }
        for i in 0..n {
            jac[(i, j)] = (minus[i] - plus[i]) / width;
        }
    }
    jac
}

/// Inverse of a symmetric positive definite matrix, via Jacobi scaling and
/// Cholesky. `None` when numerically singular.
fn invert_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let np = a.nrows();
    let d: Vec<f64> = (0..np).map(|i| a[(i, i)]).collect();
    if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let s: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = DMatrix::from_fn(np, np, |i, j| a[(i, j)] * s[i] * s[j]);
    let eig = scaled.clone().symmetric_eigen();
    let (min, max) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(min > 1e-13 * max) {
        return None;
    }
    let inv = scaled.cholesky()?.inverse();
    Some(DMatrix::from_fn(np, np, |i, j| inv[(i, j)] * s[i] * s[j]))
}
