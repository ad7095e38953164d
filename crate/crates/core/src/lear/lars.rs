//! LARS computation of the full LASSO path, and AIC selection along it.
//!
//! Penalties are reported in the same parameterization as [`super::lasso_cd`]:
//! at every point of the path the active coefficients satisfy
//! `2 x_jᵀ r = λ sign(θ_j)`, so `λ = 2 · max_j |x_jᵀ r|`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::cd::check_finite;
use crate::{EpfError, Result};

/// What happened at a breakpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathEvent {
    /// The all-zero starting point.
    Start,
    /// Column entered the active set after this step.
    Enter(usize),
    /// Column left the active set because its coefficient crossed zero.
    Drop(usize),
    /// Penalty reached zero or the active set is full.
    End,
}

#[derive(Debug, Clone)]
pub struct Breakpoint {
    pub lambda: f64,
    pub theta: Array1<f64>,
    pub n_active: usize,
    pub rss: f64,
    pub event: PathEvent,
}

/// Piecewise-linear LASSO path, penalties strictly decreasing.
#[derive(Debug, Clone)]
pub struct LarsPath {
    pub breakpoints: Vec<Breakpoint>,
}

impl LarsPath {
    /// Columns in the order they entered (re-entries included).
    pub fn entry_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        if let Some(first) = self.breakpoints.get(1) {
            // The first step moves the initially most correlated column.
            if let Some(j) = first.theta.iter().position(|&t| t != 0.0) {
                order.push(j);
            }
        }
        order.extend(self.breakpoints.iter().filter_map(|b| match b.event {
            PathEvent::Enter(j) => Some(j),
            _ => None,
        }));
        order
    }

    /// Coefficients at penalty `lambda`, by linear interpolation between breakpoints.
    pub fn theta_at(&self, lambda: f64) -> Array1<f64> {
        let bps = &self.breakpoints;
        if lambda >= bps[0].lambda {
            return bps[0].theta.clone();
        }
        for w in bps.windows(2) {
            let (hi, lo) = (&w[0], &w[1]);
            if lambda >= lo.lambda {
                let t = (hi.lambda - lambda) / (hi.lambda - lo.lambda);
                return &hi.theta + &((&lo.theta - &hi.theta) * t);
            }
        }
        bps.last().expect("non-empty path").theta.clone()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LarsOptions {
    /// Largest active set; defaults to `min(p, n - 1)`.
    pub max_active: Option<usize>,
    pub max_steps: Option<usize>,
}

/// Lower-triangular Cholesky factor of the active Gram matrix, grown one column at a time.
struct Cholesky {
    k: usize,
    l: Vec<f64>,
    cap: usize,
}

impl Cholesky {
    fn new(cap: usize) -> Self {
        Self {
            k: 0,
            l: vec![0.0; cap * cap],
            cap,
        }
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.cap + j]
    }

    /// Solves `L z = b` in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..self.k {
            let mut s = b[i];
            for j in 0..i {
                s -= self.at(i, j) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Solves `Lᵀ z = b` in place.
    fn backward(&self, b: &mut [f64]) {
        for i in (0..self.k).rev() {
            let mut s = b[i];
            for j in i + 1..self.k {
                s -= self.at(j, i) * b[j];
            }
            b[i] = s / self.at(i, i);
        }
    }

    /// Appends a column with Gram entries `cross` (against the current set) and
    /// diagonal `diag`. Returns false when it is numerically collinear.
    fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        let mut row = cross.to_vec();
        self.forward(&mut row);
        let d = diag - row.iter().map(|v| v * v).sum::<f64>();
        if !(d > 1e-10 * diag.max(f64::MIN_POSITIVE)) {
            return false;
        }
        let i = self.k;
        for (j, v) in row.into_iter().enumerate() {
            self.l[i * self.cap + j] = v;
        }
        self.l[i * self.cap + i] = d.sqrt();
        self.k += 1;
        true
    }

    fn rebuild(&mut self, gram: ArrayView2<'_, f64>, active: &[usize]) -> bool {
        self.k = 0;
        for (i, &j) in active.iter().enumerate() {
            let cross: Vec<f64> = active[..i].iter().map(|&a| gram[[a, j]]).collect();
            if !self.push(&cross, gram[[j, j]]) {
                return false;
            }
        }
        true
    }
}

/// Full LASSO path of `(X, y)` by least angle regression with drop steps.
pub fn lars_path(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<LarsPath> {
    check_finite(x, y)?;
    let gram = x.t().dot(&x);
    lars_path_with_gram(x, gram.view(), y, &LarsOptions::default())
}

/// [`lars_path`] reusing a precomputed Gram matrix `XᵀX`.
pub fn lars_path_with_gram(
    x: ArrayView2<'_, f64>,
    gram: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    opts: &LarsOptions,
) -> Result<LarsPath> {
    check_finite(x, y)?;
    let (n, p) = x.dim();
    if gram.dim() != (p, p) {
        return Err(EpfError::Shape(format!("Gram matrix is {:?}, expected ({p}, {p})", gram.dim())));
    }
    let max_active = opts.max_active.unwrap_or(p.min(n.saturating_sub(1))).min(p);
    let max_steps = opts.max_steps.unwrap_or(8 * p + 16);

    // Contiguous columns for the residual updates.
    let xt = x.t().as_standard_layout().into_owned();
    let mut corr: Array1<f64> = x.t().dot(&y);
    let mut theta = Array1::<f64>::zeros(p);
    let mut resid = y.to_owned();
    let argmax = |corr: &Array1<f64>, skip: &dyn Fn(usize) -> bool| {
        corr.iter()
            .enumerate()
            .filter(|(j, _)| !skip(*j))
            .fold(None, |best: Option<(usize, f64)>, (j, &c)| match best {
                Some((_, b)) if b >= c.abs() => best,
                _ => Some((j, c.abs())),
            })
    };
    let mut c_max = argmax(&corr, &|_| false).map(|(_, c)| c).unwrap_or(0.0);
    let c_floor = c_max * 1e-12;

    let mut path = vec![Breakpoint {
        lambda: 2.0 * c_max,
        theta: theta.clone(),
        n_active: 0,
        rss: resid.dot(&resid),
        event: PathEvent::Start,
    }];
    if c_max <= f64::MIN_POSITIVE || max_active == 0 {
        return Ok(LarsPath { breakpoints: path });
    }

    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut is_active = vec![false; p];
    let mut excluded = vec![false; p];
    let mut chol = Cholesky::new(max_active.max(1));
    let mut next_enter = argmax(&corr, &|_| false).map(|(j, _)| j);
    // A dropped column may not immediately re-enter with its old sign.
    let mut just_dropped: Option<(usize, f64)> = None;

    for _ in 0..max_steps {
        if let Some(j) = next_enter.take() {
            let cross: Vec<f64> = active.iter().map(|&a| gram[[a, j]]).collect();
            if chol.push(&cross, gram[[j, j]]) {
                active.push(j);
                signs.push(corr[j].signum());
                is_active[j] = true;
            } else {
                excluded[j] = true;
            }
        }
        if active.is_empty() {
            match argmax(&corr, &|j| excluded[j]) {
                Some((j, c)) if c > c_floor => {
                    next_enter = Some(j);
                    continue;
                }
                _ => break,
            }
        }

        // Equiangular direction: w = A · G_AA⁻¹ s
        let mut dir = signs.clone();
        chol.forward(&mut dir);
        chol.backward(&mut dir);
        let norm = signs.iter().zip(&dir).map(|(s, d)| s * d).sum::<f64>();
        if !(norm > 0.0) {
            return Err(EpfError::Numeric("LARS equiangular direction is degenerate".into()));
        }
        let a_eq = 1.0 / norm.sqrt();
        dir.iter_mut().for_each(|d| *d *= a_eq);

        let mut along = Array1::<f64>::zeros(p);
        for (k, &j) in active.iter().enumerate() {
            along.scaled_add(dir[k], &gram.row(j)); // symmetric: rows are contiguous
        }

        let gamma_end = c_max / a_eq;
        let tiny = 1e-12 * gamma_end;
        let mut gamma_enter = f64::INFINITY;
        let mut enter_idx = None;
        if active.len() < max_active {
            for j in 0..p {
                if is_active[j] || excluded[j] {
                    continue;
                }
                let blocked = just_dropped.filter(|&(d, _)| d == j).map(|(_, sign)| sign);
                for (sign, cand) in [
                    (1.0, (c_max - corr[j]) / (a_eq - along[j])),
                    (-1.0, (c_max + corr[j]) / (a_eq + along[j])),
                ] {
                    if blocked != Some(sign) && cand > tiny && cand < gamma_enter {
                        gamma_enter = cand;
                        enter_idx = Some(j);
                    }
                }
            }
        }
        let mut gamma_drop = f64::INFINITY;
        let mut drop_pos = None;
        for (k, &j) in active.iter().enumerate() {
            if dir[k] != 0.0 {
                let g = -theta[j] / dir[k];
                if g > tiny && g < gamma_drop {
                    gamma_drop = g;
                    drop_pos = Some(k);
                }
            }
        }

        let (gamma, event) = if gamma_drop < gamma_enter.min(gamma_end) {
            (gamma_drop, PathEvent::Drop(active[drop_pos.expect("set with gamma_drop")]))
        } else if gamma_enter < gamma_end {
            (gamma_enter, PathEvent::Enter(enter_idx.expect("set with gamma_enter")))
        } else {
            (gamma_end, PathEvent::End)
        };

        for (k, &j) in active.iter().enumerate() {
            theta[j] += gamma * dir[k];
            resid.scaled_add(-gamma * dir[k], &xt.row(j));
        }
        corr.scaled_add(-gamma, &along);
        c_max -= gamma * a_eq;
        just_dropped = None;
        match event {
            PathEvent::Drop(j) => {
                let k = active.iter().position(|&a| a == j).expect("active");
                just_dropped = Some((j, signs[k]));
                theta[j] = 0.0;
                active.remove(k);
                signs.remove(k);
                is_active[j] = false;
                if !chol.rebuild(gram, &active) {
                    return Err(EpfError::Numeric("active Gram matrix lost rank after a drop".into()));
                }
            }
            PathEvent::Enter(j) => next_enter = Some(j),
            PathEvent::End => c_max = 0.0,
            PathEvent::Start => unreachable!(),
        }
        c_max = c_max.max(0.0);
        path.push(Breakpoint {
            lambda: 2.0 * c_max,
            theta: theta.clone(),
            n_active: theta.iter().filter(|&&t| t != 0.0).count(),
            rss: resid.dot(&resid),
            event,
        });
        if event == PathEvent::End || c_max <= c_floor {
            break;
        }
    }
    Ok(LarsPath { breakpoints: path })
}

/// `n · ln(RSS / n) + 2 · df`, df = number of nonzero coefficients.
pub fn aic(rss: f64, n: usize, n_active: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).ln() + 2.0 * n_active as f64
}

/// Index of the AIC-minimizing breakpoint; ties go to the larger penalty.
///
/// When every breakpoint fits exactly (RSS = 0) the smallest penalty is chosen.
pub fn select_breakpoint_aic(path: &LarsPath, n: usize) -> Result<usize> {
    let bps = &path.breakpoints;
    if bps.is_empty() {
        return Err(EpfError::Numeric("empty LARS path".into()));
    }
    if bps.iter().all(|b| b.rss == 0.0) {
        let (i, _) = bps
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
            .expect("non-empty");
        return Ok(i);
    }
    let mut best = 0;
    let mut best_aic = f64::INFINITY;
    for (i, b) in bps.iter().enumerate() {
        let score = aic(b.rss, n, b.n_active);
        // Penalties decrease along the path, so strict improvement keeps ties sparse.
        if score < best_aic || (score == best_aic && b.lambda > bps[best].lambda) {
            best = i;
            best_aic = score;
        }
    }
    Ok(best)
}

/// Penalty chosen by in-sample AIC along the path.
pub fn select_lambda_aic(path: &LarsPath, n: usize) -> Result<f64> {
    Ok(path.breakpoints[select_breakpoint_aic(path, n)?].lambda)
}

/// Gram matrix of a design (exposed so callers can share it across responses).
pub fn gram(x: ArrayView2<'_, f64>) -> Array2<f64> {
    x.t().dot(&x)
}
