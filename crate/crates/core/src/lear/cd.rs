//! Cyclic coordinate descent for the LASSO.
//!
//! Minimizes `||y - X θ||² + λ ||θ||₁` (no `1/n` factor, no intercept; callers
//! center their data when they want one).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use tracing::warn;

use crate::{EpfError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    /// Stop when the largest coefficient change in a sweep, measured on the
    /// standardized column scale, drops below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_sweeps: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub theta: Array1<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective value after each sweep.
    pub objective_trace: Vec<f64>,
}

// Relative slack on the zero-solution test: `Xᵀy` summed in a different order
// can land an ulp above `λ/2` when the caller set `λ = 2‖Xᵀy‖∞` exactly.
const NULL_RTOL: f64 = 1e-12;

/// `θ = 0` is optimal iff `‖Xᵀy‖∞ ≤ λ/2`.
fn null_fit(p: usize, max_corr: f64, lambda: f64, yty: f64) -> Option<LassoFit> {
    (0.5 * lambda >= max_corr * (1.0 - NULL_RTOL)).then(|| LassoFit {
        theta: Array1::zeros(p),
        sweeps: 0,
        converged: true,
        objective_trace: vec![yty],
    })
}

fn max_abs<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Soft-thresholding operator `sign(z) · max(|z| − γ, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `||y - Xθ||² + λ||θ||₁`.
pub fn lasso_objective(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, theta: ArrayView1<'_, f64>, lambda: f64) -> f64 {
    let r = &y - &x.dot(&theta);
    r.dot(&r) + lambda * theta.iter().map(|t| t.abs()).sum::<f64>()
}

pub(crate) fn check_finite(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(EpfError::Shape(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EpfError::Numeric("design or response contains non-finite values".into()));
    }
    Ok(())
}

/// LASSO estimate at a fixed `lambda`, optionally warm-started from `init`.
///
/// Running out of sweeps is not an error: the last iterate is returned with
/// `converged == false` and a warning is logged.
pub fn lasso_cd(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    opts: &LassoOptions,
    init: Option<ArrayView1<'_, f64>>,
) -> Result<LassoFit> {
    check_finite(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EpfError::Numeric(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let (n, p) = x.dim();
    // Column-major copy: each coordinate update walks one column.
    let xt: Array2<f64> = x.t().as_standard_layout().into_owned();
    let sq_norms: Vec<f64> = xt.rows().into_iter().map(|c| c.dot(&c)).collect();
    let std_scale: Vec<f64> = sq_norms.iter().map(|s| (s / n.max(1) as f64).sqrt()).collect();
    if let Some(fit) = null_fit(p, max_abs(&xt.dot(&y)), lambda, y.dot(&y)) {
        return Ok(fit);
    }

    let mut theta = match init {
        Some(t) if t.len() == p => t.to_owned(),
        Some(t) => {
            return Err(EpfError::Shape(format!(
                "warm start has {} coefficients, design has {p} columns",
                t.len()
            )))
        }
        None => Array1::zeros(p),
    };
    for j in 0..p {
        if sq_norms[j] == 0.0 {
            theta[j] = 0.0;
        }
    }
    let mut resid = &y - &x.dot(&theta);
    let half_lambda = 0.5 * lambda;
    let objective = |resid: &Array1<f64>, theta: &Array1<f64>| {
        resid.dot(resid) + lambda * theta.iter().map(|t| t.abs()).sum::<f64>()
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if sq_norms[j] == 0.0 {
                continue;
            }
            let col = xt.row(j);
            let old = theta[j];
            let rho = col.dot(&resid) + sq_norms[j] * old;
            let new = soft_threshold(rho, half_lambda) / sq_norms[j];
            if new != old {
                resid.scaled_add(old - new, &col);
                theta[j] = new;
                max_change = max_change.max((new - old).abs() * std_scale[j]);
            }
        }
        trace.push(objective(&resid, &theta));
        if max_change < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!(sweeps, lambda, "coordinate descent hit the sweep limit");
    }
    Ok(LassoFit {
        theta,
        sweeps,
        converged,
        objective_trace: trace,
    })
}

/// [`lasso_cd`] on sufficient statistics: `gram = XᵀX`, `xty = Xᵀy`, `yty = yᵀy`.
///
/// Each coordinate update costs O(p) instead of O(n). Sweeps alternate between
/// the current nonzero set and full passes; convergence is declared only on a
/// full pass.
pub fn lasso_cd_gram(
    gram: ArrayView2<'_, f64>,
    xty: ArrayView1<'_, f64>,
    yty: f64,
    n: usize,
    lambda: f64,
    opts: &LassoOptions,
    init: Option<ArrayView1<'_, f64>>,
) -> Result<LassoFit> {
    let p = xty.len();
    if gram.dim() != (p, p) {
        return Err(EpfError::Shape(format!("Gram matrix is {:?}, expected ({p}, {p})", gram.dim())));
    }
    if gram.iter().chain(xty.iter()).any(|v| !v.is_finite()) || !yty.is_finite() {
        return Err(EpfError::Numeric("sufficient statistics contain non-finite values".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EpfError::Numeric(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let diag: Vec<f64> = (0..p).map(|j| gram[[j, j]]).collect();
    let std_scale: Vec<f64> = diag.iter().map(|s| (s / n.max(1) as f64).sqrt()).collect();
    if let Some(fit) = null_fit(p, max_abs(xty), lambda, yty) {
        return Ok(fit);
    }
    let mut theta = match init {
        Some(t) if t.len() == p => t.to_owned(),
        Some(t) => {
            return Err(EpfError::Shape(format!(
                "warm start has {} coefficients, design has {p} columns",
                t.len()
            )))
        }
        None => Array1::zeros(p),
    };
    for j in 0..p {
        if diag[j] == 0.0 {
            theta[j] = 0.0;
        }
    }
    // grad = Xᵀ(y − Xθ)
    let mut grad = &xty - &gram.dot(&theta);
    let half_lambda = 0.5 * lambda;
    let objective = |theta: &Array1<f64>, grad: &Array1<f64>| {
        let rss = yty - theta.dot(&xty) - theta.dot(grad);
        rss.max(0.0) + lambda * theta.iter().map(|t| t.abs()).sum::<f64>()
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    let mut full_pass = true;
    let mut coords: Vec<usize> = (0..p).collect();
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        if full_pass {
            coords = (0..p).collect();
        }
        let mut max_change: f64 = 0.0;
        for &j in &coords {
            if diag[j] == 0.0 {
                continue;
            }
            let old = theta[j];
            let rho = grad[j] + diag[j] * old;
            let new = soft_threshold(rho, half_lambda) / diag[j];
            if new != old {
                grad.scaled_add(old - new, &gram.column(j));
                theta[j] = new;
                max_change = max_change.max((new - old).abs() * std_scale[j]);
            }
        }
        trace.push(objective(&theta, &grad));
        if max_change < opts.tol {
            if full_pass {
                converged = true;
                break;
            }
            full_pass = true;
        } else {
            full_pass = false;
            coords = (0..p).filter(|&j| theta[j] != 0.0).collect();
        }
    }
    if !converged {
        warn!(sweeps, lambda, "coordinate descent hit the sweep limit");
    }
    Ok(LassoFit {
        theta,
        sweeps,
        converged,
        objective_trace: trace,
    })
}
