//! Full-sample empirical risk minimization, the benchmark every distributed
//! estimator is compared against, and the fresh-sample initial estimator.
//!
//! Smooth losses use gradient descent with Armijo backtracking, starting
//! each line search from the Barzilai–Borwein step. The check
//! loss uses full-batch subgradient descent with `c/√t` steps and a
//! polynomially weighted running average of the iterates; the subgradient
//! is preconditioned by the inverse sample Gram matrix `(X'X/n)⁻¹`, which
//! makes the step constant scale-free across designs.
//!
//! All solvers keep the margins `Xθ` up to date incrementally, so a line
//! search trial costs `O(n)` instead of a pass over the covariates.

use nalgebra::{DMatrix, DVector};

use crate::data::GeneratedProblem;
use crate::dataset::Dataset;
use crate::error::{FoneError, Result};
use crate::linalg::{axpy, dot, norm2};
use crate::model::LossModel;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Window over which the averaged check-loss objective must improve.
const QUANTILE_WINDOW: usize = 100;
/// Step constant `c` in `c/√t`; the preconditioning makes one value work
/// across designs.
const QUANTILE_STEP: f64 = 4.0;
const ARMIJO: f64 = 1e-4;
/// Relative size of objective changes treated as rounding noise.
const NOISE: f64 = 1e-13;
/// Margins are recomputed from scratch this often to stop drift.
const REFRESH_EVERY: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ErmResult {
    pub theta_hat: Vec<f64>,
    /// Norm of the mean (sub)gradient at `theta_hat`.
    pub final_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when every logistic response is identical (no finite minimizer).
    pub degenerate: bool,
    /// Check-loss only: fraction of strictly negative residuals.
    pub negative_residual_fraction: Option<f64>,
    /// Check-loss only: whether that fraction lies in `τ ± (p+1)/n`.
    pub residual_sign_ok: Option<bool>,
}

/// `Xθ`
pub(crate) fn margins(data: &Dataset, theta: &[f64]) -> Vec<f64> {
    data.rows().map(|(_, x)| dot(x, theta)).collect()
}

/// `X' s`
fn weighted_row_sum(data: &Dataset, s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; data.dim()];
    for ((_, x), &si) in data.rows().zip(s) {
        if si != 0.0 {
            axpy(si, x, &mut out);
        }
    }
    out
}

fn mean_loss(model: &LossModel, data: &Dataset, u: &[f64]) -> f64 {
    let total: f64 = data
        .responses()
        .iter()
        .zip(u)
        .map(|(&y, &m)| model.loss_at(y, m))
        .sum();
    total / data.len() as f64
}

fn mean_grad(model: &LossModel, data: &Dataset, u: &[f64]) -> Vec<f64> {
    let inv = 1.0 / data.len() as f64;
    let s: Vec<f64> = data
        .responses()
        .iter()
        .zip(u)
        .map(|(&y, &m)| model.slope_at(y, m) * inv)
        .collect();
    weighted_row_sum(data, &s)
}

/// `d/ds f(u + s v)` at `s = 0`, with `v = X d`.
fn directional_derivative(model: &LossModel, data: &Dataset, u: &[f64], v: &[f64]) -> f64 {
    let total: f64 = data
        .responses()
        .iter()
        .zip(u)
        .zip(v)
        .map(|((&y, &m), &vi)| model.slope_at(y, m) * vi)
        .sum();
    total / data.len() as f64
}

pub fn solve_erm(
    model: &LossModel,
    data: &Dataset,
    tol: f64,
    max_iter: usize,
) -> Result<ErmResult> {
    model.validate()?;
    if data.is_empty() {
        return Err(FoneError::InvalidParameter(
            "cannot minimize over an empty dataset".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(FoneError::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    match model {
        LossModel::Quantile { tau } => solve_check_loss(*tau, data, tol, max_iter),
        _ => solve_smooth(model, data, tol, max_iter),
    }
}

fn solve_smooth(model: &LossModel, data: &Dataset, tol: f64, max_iter: usize) -> Result<ErmResult> {
    let p = data.dim();
    let degenerate = matches!(model, LossModel::Logistic) && {
        let first = data.response(0);
        data.responses().iter().all(|&y| y == first)
    };
    if degenerate {
        log::warn!("all logistic responses are identical; the empirical risk has no minimizer");
    }
    let mut theta = vec![0.0; p];
    let mut u = vec![0.0; data.len()];
    let mut f = mean_loss(model, data, &u);
    let mut grad = mean_grad(model, data, &u);
    let mut gnorm = norm2(&grad);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut trial_u = vec![0.0; data.len()];
    while gnorm > tol && iterations < max_iter {
        iterations += 1;
        // direction d = -grad; v = X d
        let v: Vec<f64> = data.rows().map(|(_, x)| -dot(x, &grad)).collect();
        let mut accepted = false;
        let mut accepted_step = 0.0;
        for _ in 0..60 {
            for ((t, &ui), &vi) in trial_u.iter_mut().zip(&u).zip(&v) {
                *t = ui + step * vi;
            }
            let trial_f = mean_loss(model, data, &trial_u);
            let sufficient = trial_f <= f - ARMIJO * step * gnorm * gnorm;
            // Near the optimum the decrease drops below the rounding noise of
            // f; fall back to requiring a smaller directional derivative.
            let in_noise = (trial_f - f).abs() <= NOISE * f.abs().max(1.0)
                && directional_derivative(model, data, &trial_u, &v).abs() < gnorm * gnorm;
            if sufficient || in_noise {
                axpy(-step, &grad, &mut theta);
                std::mem::swap(&mut u, &mut trial_u);
                f = trial_f;
                accepted = true;
                accepted_step = step;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // step underflow: the objective is flat to machine precision
            break;
        }
        if iterations % REFRESH_EVERY == 0 {
            u = margins(data, &theta);
            f = mean_loss(model, data, &u);
        }
        let new_grad = mean_grad(model, data, &u);
        // Barzilai–Borwein trial step s's / s'y with s = -step·grad and
        // y the gradient change; keeps plain doubling when curvature is not
        // positive along s.
        let sy: f64 = grad
            .iter()
            .zip(&new_grad)
            .map(|(g0, g1)| -accepted_step * g0 * (g1 - g0))
            .sum();
        let ss = accepted_step * accepted_step * gnorm * gnorm;
        grad = new_grad;
        gnorm = norm2(&grad);
        log::trace!("gradient descent iteration {iterations}: loss {f:e}, gradient norm {gnorm:e}, step {step:e}");
        if !gnorm.is_finite() {
            return Err(FoneError::NonFinite("gradient"));
        }
        step = if sy > 0.0 && (ss / sy).is_finite() {
            ss / sy
        } else {
            2.0 * step
        };
    }
    let grad = mean_grad(model, data, &margins(data, &theta));
    let final_grad_norm = norm2(&grad);
    Ok(ErmResult {
        theta_hat: theta,
        final_grad_norm,
        iterations,
        converged: !degenerate && final_grad_norm <= tol,
        degenerate,
        negative_residual_fraction: None,
        residual_sign_ok: None,
    })
}

fn gram_cholesky(data: &Dataset) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let p = data.dim();
    let n = data.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    // Row-major n×p storage is column-major p×n, so each block is X' directly.
    const BLOCK: usize = 4096;
    let mut start = 0;
    while start < n {
        let rows = BLOCK.min(n - start);
        let mut xt = DMatrix::<f64>::zeros(p, rows);
        for r in 0..rows {
            xt.column_mut(r).copy_from_slice(data.row(start + r));
        }
        gram.gemm(1.0 / n as f64, &xt, &xt.transpose(), 1.0);
        start += rows;
    }
    gram.cholesky().ok_or(FoneError::NotPositiveDefinite)
}

fn solve_check_loss(tau: f64, data: &Dataset, tol: f64, max_iter: usize) -> Result<ErmResult> {
    let model = LossModel::Quantile { tau };
    let n = data.len();
    let p = data.dim();
    let chol = gram_cholesky(data)?;

    let inv_n = 1.0 / n as f64;
    let mut theta = vec![0.0; p];
    let mut u = vec![0.0; n];
    let mut avg = theta.clone();
    let mut avg_u = u.clone();
    let mut window_start = mean_loss(&model, data, &avg_u);
    let mut g = mean_grad(&model, data, &u);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let t = iterations as f64;
        let dir = chol.solve(&DVector::from_column_slice(&g));
        let dir = dir.as_slice();
        let step = QUANTILE_STEP / t.sqrt();
        axpy(-step, dir, &mut theta);
        // weights proportional to t
        let w = 2.0 / (t + 1.0);
        for (a, v) in avg.iter_mut().zip(&theta) {
            *a += w * (v - *a);
        }
        // One pass over the rows: move the margins along the step, fold
        // them into the running average, and accumulate the next subgradient.
        let refresh = iterations % REFRESH_EVERY == 0;
        g.iter_mut().for_each(|v| *v = 0.0);
        for (i, (y, x)) in data.rows().enumerate() {
            let ui = if refresh {
                dot(x, &theta)
            } else {
                u[i] - step * dot(x, dir)
            };
            u[i] = ui;
            avg_u[i] += w * (ui - avg_u[i]);
            let s = model.slope_at(y, ui);
            if s != 0.0 {
                axpy(s * inv_n, x, &mut g);
            }
        }
        if iterations % QUANTILE_WINDOW == 0 {
            let f = mean_loss(&model, data, &avg_u);
            if window_start - f < tol {
                converged = true;
                break;
            }
            window_start = f;
        }
    }
    let final_u = margins(data, &avg);
    let negatives = data
        .responses()
        .iter()
        .zip(&final_u)
        .filter(|(&y, &m)| y - m < 0.0)
        .count();
    let frac = negatives as f64 / n as f64;
    let band = (p as f64 + 1.0) / n as f64;
    let sign_ok = (frac - tau).abs() <= band;
    if !sign_ok {
        log::warn!("check-loss ERM residual sign fraction {frac} outside {tau} ± {band}");
    }
    let final_grad_norm = norm2(&mean_grad(&model, data, &final_u));
    Ok(ErmResult {
        theta_hat: avg,
        final_grad_norm,
        iterations,
        converged,
        degenerate: false,
        negative_residual_fraction: Some(frac),
        residual_sign_ok: Some(sign_ok),
    })
}

/// Minimizes the empirical risk on `n0` fresh samples drawn from the same
/// process as `problem`.
pub fn initial_estimator(problem: &GeneratedProblem, n0: usize, seed: u64) -> Result<Vec<f64>> {
    let p = problem.design.p;
    if n0 < p {
        return Err(FoneError::InvalidParameter(format!(
            "initial sample size {n0} is below the dimension {p}"
        )));
    }
    let fresh = problem.draw_samples(n0, seed)?;
    let res = solve_erm(&problem.model, &fresh, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    if !res.converged {
        log::debug!(
            "initial estimator stopped after {} iterations with gradient norm {}",
            res.iterations,
            res.final_grad_norm
        );
    }
    Ok(res.theta_hat)
}
