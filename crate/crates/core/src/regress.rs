//! Robust simple linear regression: Huber M-estimation fitted by
//! iteratively reweighted least squares, with a MAD residual scale
//! recomputed each iteration and weighted-least-squares inference at
//! convergence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum RegressError {
    #[error("regressor is constant; slope is unidentifiable")]
    ConstantRegressor,
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
}

/// IRLS tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberParams {
    /// Huber tuning constant; 1.345 gives 95% efficiency under normal
    /// errors.
    pub c: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for HuberParams {
    fn default() -> Self {
        HuberParams {
            c: 1.345,
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

/// A fitted line with robust scale and normal-approximation inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta0: f64,
    pub beta1: f64,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    /// MAD-based robust residual scale at convergence.
    pub scale: f64,
    pub se_beta0: f64,
    pub se_beta1: f64,
    /// Two-sided p-value for beta1 under the normal approximation.
    pub p_beta1: f64,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Huber IRLS fit of `y` on `x`.
///
/// Starts at the least-squares solution; each iteration recomputes the
/// residual scale as `1.4826 * median|r - median(r)|`, applies Huber
/// weights `min(1, c*s/|r|)`, and solves the weighted normal equations,
/// stopping when the largest coefficient change drops below `tol`. When no
/// residual at the least-squares solution exceeds `c * scale`, the fit
/// equals ordinary least squares. A fit that exhausts `max_iter` is
/// returned with `converged = false` rather than as an error.
pub fn huber_fit(x: &[f64], y: &[f64], params: HuberParams) -> Result<RegressionFit, RegressError> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(RegressError::TooFewObservations {
            needed: 3,
            got: x.len().min(y.len()),
        });
    }
    let n = x.len();
    if x.iter().all(|&v| v == x[0]) {
        return Err(RegressError::ConstantRegressor);
    }

    let (mut beta0, mut beta1) =
        solve_weighted(x, y, None).ok_or(RegressError::ConstantRegressor)?;

    let mut weights = vec![1.0f64; n];
    let mut residuals: Vec<f64> = (0..n).map(|i| y[i] - beta0 - beta1 * x[i]).collect();
    let mut scale = stats::mad_scale(&residuals).unwrap_or(0.0);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        iterations += 1;
        if scale == 0.0 {
            // Degenerate MAD (at least half the residuals equal the
            // median): no scale to weight against, keep the current fit.
            converged = true;
            break;
        }
        for i in 0..n {
            let u = residuals[i].abs() / scale;
            weights[i] = if u <= params.c { 1.0 } else { params.c / u };
        }
        let Some((b0, b1)) = solve_weighted(x, y, Some(&weights)) else {
            break;
        };
        let delta = (b0 - beta0).abs().max((b1 - beta1).abs());
        beta0 = b0;
        beta1 = b1;
        for i in 0..n {
            residuals[i] = y[i] - beta0 - beta1 * x[i];
        }
        scale = stats::mad_scale(&residuals).unwrap_or(0.0);
        if delta < params.tol {
            converged = true;
            break;
        }
    }

    // Weighted-least-squares covariance at the final weights:
    // sigma^2 (X'WX)^-1 with sigma^2 = sum(w r^2) / (n - 2).
    let (sw, swx, swxx) = weighted_sums(x, &weights);
    let dof = (n - 2) as f64;
    let sigma2 = (0..n)
        .map(|i| weights[i] * residuals[i] * residuals[i])
        .sum::<f64>()
        / dof;
    let det = sw * swxx - swx * swx;
    let (se_beta0, se_beta1, p_beta1) = if det > 0.0 && sigma2.is_finite() {
        let var_b0 = sigma2 * swxx / det;
        let var_b1 = sigma2 * sw / det;
        let se0 = var_b0.max(0.0).sqrt();
        let se1 = var_b1.max(0.0).sqrt();
        let p = if se1 > 0.0 {
            stats::normal_two_sided_p(beta1 / se1)
        } else {
            0.0
        };
        (se0, se1, p)
    } else {
        (0.0, 0.0, 1.0)
    };

    Ok(RegressionFit {
        beta0,
        beta1,
        residuals,
        scale,
        se_beta0,
        se_beta1,
        p_beta1,
        n,
        iterations,
        converged,
    })
}

fn weighted_sums(x: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swxx = 0.0;
    for i in 0..x.len() {
        sw += w[i];
        swx += w[i] * x[i];
        swxx += w[i] * x[i] * x[i];
    }
    (sw, swx, swxx)
}

/// Solves the (weighted) normal equations for intercept and slope.
fn solve_weighted(x: &[f64], y: &[f64], w: Option<&[f64]>) -> Option<(f64, f64)> {
    let n = x.len();
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for i in 0..n {
        let wi = w.map_or(1.0, |w| w[i]);
        sw += wi;
        swx += wi * x[i];
        swy += wi * y[i];
        swxx += wi * x[i] * x[i];
        swxy += wi * x[i] * y[i];
    }
    let det = sw * swxx - swx * swx;
    if !det.is_finite() || det.abs() < f64::MIN_POSITIVE * 1e6 {
        return None;
    }
    let beta1 = (sw * swxy - swx * swy) / det;
    let beta0 = (swxx * swy - swx * swxy) / det;
    (beta0.is_finite() && beta1.is_finite()).then_some((beta0, beta1))
}
