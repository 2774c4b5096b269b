//! Bounded Levenberg–Marquardt for small dense least-squares problems.
//!
//! Minimises `Σ r_i(p)²` subject to box bounds. Each iteration solves the
//! Marquardt-scaled damped normal equations on the parameters that are not
//! pinned against an active bound, projects the trial point back into the box
//! and only accepts it if the residual sum of squares strictly decreases, so
//! the sequence of accepted objectives is monotone. The damping factor follows
//! Nielsen's gain-ratio update.

use nalgebra::{DMatrix, DVector, SVD};

/// A residual vector with its Jacobian.
pub trait Problem {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    /// Fills `out` with residuals at `params`.
    fn residuals(&self, params: &[f64], out: &mut [f64]);
    /// Fills `jac` (num_residuals × num_params) with `∂r_i/∂p_j`.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>);
}

#[derive(Debug, Clone)]
pub struct Options {
    pub max_iterations: usize,
    /// Stop once an accepted step changes the rss by less than this fraction.
    pub rel_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Relative rss change fell below tolerance.
    RelativeChange,
    /// Residuals vanished exactly.
    ZeroResidual,
    /// No damping level produces a decrease; the point is stationary to
    /// working precision.
    Stalled,
    IterationCap,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub params: Vec<f64>,
    pub rss: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
    pub jacobian: DMatrix<f64>,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.termination != Termination::IterationCap
    }
}

#[derive(Debug, Clone)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn project(&self, p: &mut [f64]) {
        for ((v, lo), hi) in p.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Runs the optimiser from `start`. Returns `None` if the objective is not
/// finite at the (projected) starting point.
pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    start: &[f64],
    bounds: &Bounds,
    opts: &Options,
) -> Option<Outcome> {
    let np = problem.num_params();
    let nr = problem.num_residuals();
    assert_eq!(start.len(), np);
    assert_eq!(bounds.lower.len(), np);

    let mut p = start.to_vec();
    bounds.project(&mut p);
    let mut r = vec![0.0; nr];
    problem.residuals(&p, &mut r);
    let mut rss = sum_sq(&r);
    if !rss.is_finite() {
        return None;
    }
    let mut jac = DMatrix::zeros(nr, np);
    problem.jacobian(&p, &mut jac);

    let mut history = vec![rss];
    let mut lambda = opts.initial_damping;
    let mut nu = 2.0;
    let mut trial = vec![0.0; np];
    let mut r_trial = vec![0.0; nr];
    let mut iterations = 0;
    let mut termination = Termination::IterationCap;

    'outer: while iterations < opts.max_iterations {
        if rss == 0.0 {
            termination = Termination::ZeroResidual;
            break;
        }
        iterations += 1;

        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        let free: Vec<usize> = (0..np)
            .filter(|&j| {
                let at_lo = p[j] <= bounds.lower[j] && grad[j] > 0.0;
                let at_hi = p[j] >= bounds.upper[j] && grad[j] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        if free.is_empty() {
            termination = Termination::Stalled;
            break;
        }
        let jf = jac.select_columns(free.iter());
        let mut jtj = jf.tr_mul(&jf);
        let g: DVector<f64> = DVector::from_iterator(free.len(), free.iter().map(|&j| grad[j]));
        let scale: Vec<f64> = (0..free.len())
            .map(|k| {
                let d = jtj[(k, k)].sqrt();
                if d > 0.0 && d.is_finite() {
                    d
                } else {
                    1.0
                }
            })
            .collect();
        for a in 0..free.len() {
            for b in 0..free.len() {
                jtj[(a, b)] /= scale[a] * scale[b];
            }
        }
        let gs = DVector::from_iterator(free.len(), (0..free.len()).map(|k| g[k] / scale[k]));

        loop {
            let mut damped = jtj.clone();
            for k in 0..free.len() {
                damped[(k, k)] += lambda;
            }
            if damped.iter().any(|v| !v.is_finite()) || gs.iter().any(|v| !v.is_finite()) {
                termination = Termination::Stalled;
                break 'outer;
            }
            let step_scaled = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&gs)),
                None => match capped_svd(damped, true)
                    .and_then(|svd| svd.solve(&(-&gs), 1e-300).ok())
                {
                    Some(s) => s,
                    None => {
                        termination = Termination::Stalled;
                        break 'outer;
                    }
                },
            };
            trial.copy_from_slice(&p);
            for (k, &j) in free.iter().enumerate() {
                trial[j] += step_scaled[k] / scale[k];
            }
            bounds.project(&mut trial);
            let delta = DVector::from_iterator(np, (0..np).map(|j| trial[j] - p[j]));
            let step_norm = delta.norm();
            if step_norm <= 1e-15 * (DVector::from_column_slice(&p).norm() + 1e-300) {
                termination = Termination::Stalled;
                break 'outer;
            }
            problem.residuals(&trial, &mut r_trial);
            let rss_trial = sum_sq(&r_trial);
            if rss_trial.is_finite() && rss_trial < rss {
                let lin = &rv + &jac * &delta;
                let predicted = rss - lin.norm_squared();
                let rho = if predicted > 0.0 {
                    (rss - rss_trial) / predicted
                } else {
                    1.0
                };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let rel_change = (rss - rss_trial) / rss;
                std::mem::swap(&mut p, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                rss = rss_trial;
                history.push(rss);
                problem.jacobian(&p, &mut jac);
                if rel_change < opts.rel_tolerance {
                    termination = Termination::RelativeChange;
                    break 'outer;
                }
                break;
            }
            lambda *= nu;
            nu *= 2.0;
            if !lambda.is_finite() || lambda > 1e20 {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }
    if rss == 0.0 {
        termination = Termination::ZeroResidual;
    }

    Some(Outcome {
        params: p,
        rss,
        iterations,
        termination,
        history,
        jacobian: jac,
    })
}

/// Undamped Gauss–Newton refinement of a converged point. Each step solves
/// `J δ = −r` by SVD (columns scaled to unit norm), so it is driven by the
/// gradient rather than by objective comparisons that rounding blurs near a
/// minimum. Steps continue while they keep shrinking, stay inside the bounds
/// and do not raise the objective beyond rounding; parameters sitting on a
/// bound are held fixed.
pub fn gauss_newton_polish<P: Problem + ?Sized>(
    problem: &P,
    start: &[f64],
    bounds: &Bounds,
    max_steps: usize,
) -> Vec<f64> {
    let np = problem.num_params();
    let nr = problem.num_residuals();
    let mut p = start.to_vec();
    let mut r = vec![0.0; nr];
    problem.residuals(&p, &mut r);
    let mut rss = sum_sq(&r);
    if !rss.is_finite() {
        return p;
    }
    let mut jac = DMatrix::zeros(nr, np);
    let mut r_trial = vec![0.0; nr];
    let mut last_step = f64::INFINITY;
    for _ in 0..max_steps {
        problem.jacobian(&p, &mut jac);
        let free: Vec<usize> = (0..np)
            .filter(|&j| p[j] > bounds.lower[j] && p[j] < bounds.upper[j])
            .collect();
        if free.is_empty() {
            break;
        }
        let mut jf = jac.select_columns(free.iter());
        let norms: Vec<f64> = jf.column_iter().map(|c| c.norm()).collect();
        if norms.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            break;
        }
        for (k, n) in norms.iter().enumerate() {
            jf.column_mut(k).unscale_mut(*n);
        }
        let Some(svd) = capped_svd(jf, true) else {
            break;
        };
        let cutoff = svd.singular_values.max() * 1e-12;
        let Ok(step) = svd.solve(&(-DVector::from_column_slice(&r)), cutoff) else {
            break;
        };
        let mut trial = p.clone();
        for (k, &j) in free.iter().enumerate() {
            trial[j] += step[k] / norms[k];
        }
        if (0..np).any(|j| trial[j] < bounds.lower[j] || trial[j] > bounds.upper[j]) {
            break;
        }
        let step_len = (0..np).map(|j| (trial[j] - p[j]).powi(2)).sum::<f64>().sqrt();
        if !(step_len < last_step) {
            break;
        }
        problem.residuals(&trial, &mut r_trial);
        let rss_trial = sum_sq(&r_trial);
        if !(rss_trial <= rss * (1.0 + 1e-12)) {
            break;
        }
        p = trial;
        std::mem::swap(&mut r, &mut r_trial);
        rss = rss_trial;
        last_step = step_len;
    }
    p
}

/// Linear least squares `min ‖A x − b‖²` where the columns flagged in
/// `nonneg` are constrained to `x_j ≥ 0`. Exhaustive over active sets, so
/// only meant for a handful of constrained columns. Returns the coefficients
/// and the residual sum of squares.
pub fn nonneg_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, nonneg: &[bool]) -> (Vec<f64>, f64) {
    let cols = a.ncols();
    assert_eq!(nonneg.len(), cols);
    let constrained: Vec<usize> = (0..cols).filter(|&j| nonneg[j]).collect();
    let always: Vec<usize> = (0..cols).filter(|&j| !nonneg[j]).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << constrained.len()) {
        let mut active: Vec<usize> = always.clone();
        active.extend(
            constrained
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &j)| j),
        );
        active.sort_unstable();
        let mut coef = vec![0.0; cols];
        if !active.is_empty() {
            let sub = a.select_columns(active.iter());
            let Some(sol) = capped_svd(sub, true).and_then(|svd| svd.solve(b, 1e-14).ok()) else {
                continue;
            };
            if active.iter().zip(sol.iter()).any(|(&j, &v)| nonneg[j] && v < 0.0) {
                continue;
            }
            for (&j, &v) in active.iter().zip(sol.iter()) {
                coef[j] = v;
            }
        }
        let rss = (a * DVector::from_column_slice(&coef) - b).norm_squared();
        if rss.is_finite() && best.as_ref().is_none_or(|bst| rss < bst.0) {
            best = Some((rss, coef));
        }
    }
    best.map(|(r, c)| (c, r))
        .unwrap_or_else(|| (vec![0.0; cols], b.norm_squared()))
}

/// SVD with an iteration cap; `None` for non-finite input or no convergence
/// (the uncapped decomposition loops forever on NaN).
fn capped_svd(m: DMatrix<f64>, vectors: bool) -> Option<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    SVD::try_new(m, vectors, vectors, f64::EPSILON, 10_000)
}

/// `(JᵀJ)⁻¹`, or `None` when `JᵀJ` is numerically singular.
pub fn inverse_normal_matrix(jac: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = jac.ncols();
    if n == 0 || jac.nrows() < n {
        return None;
    }
    let jtj = jac.tr_mul(jac);
    let scale: Vec<f64> = (0..n).map(|k| jtj[(k, k)].sqrt()).collect();
    if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return None;
    }
    let scaled = DMatrix::from_fn(n, n, |a, b| jtj[(a, b)] / (scale[a] * scale[b]));
    let svd = capped_svd(scaled.clone(), false)?;
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return None;
    }
    let inv = scaled.try_inverse()?;
    Some(DMatrix::from_fn(n, n, |a, b| inv[(a, b)] / (scale[a] * scale[b])))
}

/// Small-sample corrected Akaike information criterion for a Gaussian
/// least-squares fit of `n` points with `k` parameters.
pub fn aicc(rss: f64, n: usize, k: usize) -> f64 {
    let nf = n as f64;
    let kf = k as f64;
    if n <= k + 1 {
        return f64::INFINITY;
    }
    nf * (rss / nf).ln() + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0)
}

/// Lower bound applied to an rss before taking its logarithm, so that fits
/// reaching the rounding floor compare by parameter count alone.
pub fn rss_floor(total_sum_sq: f64) -> f64 {
    (1e-28 * total_sum_sq).max(f64::MIN_POSITIVE)
}
