//! Multi-exponential hole-area decays.
//!
//! A decay curve is modelled as `baseline + Σ A_i · exp(−t/τ_i)` with one to
//! three components. Fits run several starts (peel-off, a geometric lifetime
//! grid, the caller's guess and, during model selection, the previous
//! component count extended by an empty component) and keep the lowest
//! residual. Lifetimes are optimised on a log scale so components spread over
//! several decades condition well.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::lsq::{self, Bounds, Problem};
use crate::model::{ClassId, Condition};

pub const MAX_COMPONENTS: usize = 3;
/// Smallest accepted ratio between adjacent lifetimes of a selected model.
pub const LIFETIME_RATIO_GUARD: f64 = 3.0;
/// Largest accepted lifetime of a selected model, in units of the last
/// sample time; slower components are indistinguishable from an offset.
pub const LIFETIME_HORIZON_GUARD: f64 = 10.0;
/// Smallest accepted lifetime of a selected model, in units of the first
/// sample time; faster components have decayed before the first read and
/// only bend the earliest points.
pub const LIFETIME_FLOOR_GUARD: f64 = 1.0;
/// Amplitudes below this fraction of the total are treated as collapsed.
const COLLAPSED_AMPLITUDE: f64 = 1e-9;

pub fn min_samples(n_components: usize) -> usize {
    match n_components {
        0 | 1 => 4,
        2 => 8,
        _ => 12,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySample {
    pub t: f64,
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub condition: Condition,
    pub samples: Vec<DecaySample>,
}

impl DecayCurve {
    pub fn new(condition: Condition, samples: Vec<DecaySample>) -> Result<Self> {
        let c = Self { condition, samples };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.condition.validate()?;
        if self.samples.is_empty() {
            return Err(Error::invalid("decay curve has no samples"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.t.is_finite() && s.area.is_finite()) {
                return Err(Error::invalid(format!("sample {i}: non-finite time or area")));
            }
            if s.t < 0.0 {
                return Err(Error::invalid(format!("sample {i}: negative time {}", s.t)));
            }
            if let Some(sig) = s.sigma {
                if !(sig > 0.0 && sig.is_finite()) {
                    return Err(Error::invalid(format!("sample {i}: sigma must be positive")));
                }
            }
        }
        if let Some(i) = self.samples.windows(2).position(|w| w[1].t <= w[0].t) {
            return Err(Error::invalid(format!(
                "sample times not strictly increasing at sample {}",
                i + 1
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn areas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.area).collect()
    }

    fn inverse_sigmas(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.sigma.map_or(1.0, |v| 1.0 / v))
            .collect()
    }

    fn has_sigma(&self) -> bool {
        self.samples.iter().any(|s| s.sigma.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    pub amplitude: f64,
    /// Seconds.
    pub lifetime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiExpModel {
    pub components: Vec<ExpComponent>,
    #[serde(default)]
    pub baseline: f64,
}

impl MultiExpModel {
    pub fn new(components: Vec<ExpComponent>, baseline: f64) -> Self {
        let mut m = Self { components, baseline };
        m.sort();
        m
    }

    fn sort(&mut self) {
        self.components.sort_by(|a, b| a.lifetime.total_cmp(&b.lifetime));
    }

    pub fn eval(&self, t: f64) -> f64 {
        eval_multiexp(self, t)
    }

    pub fn weights(&self) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.amplitude).sum();
        self.components.iter().map(|c| c.amplitude / total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.components.len() > MAX_COMPONENTS {
            return Err(Error::invalid("a multi-exponential model has 1 to 3 components"));
        }
        if self
            .components
            .iter()
            .any(|c| !(c.amplitude >= 0.0 && c.lifetime > 0.0 && c.lifetime.is_finite()))
        {
            return Err(Error::invalid("amplitudes must be >= 0 and lifetimes positive"));
        }
        Ok(())
    }
}

pub fn eval_multiexp(model: &MultiExpModel, t: f64) -> f64 {
    model.baseline
        + model
            .components
            .iter()
            .map(|c| c.amplitude * (-t / c.lifetime).exp())
            .sum::<f64>()
}

#[derive(Debug, Clone, Default)]
pub struct DecayFitOptions {
    /// Fit a constant offset instead of fixing it at zero.
    pub free_baseline: bool,
    pub init: Option<MultiExpModel>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: MultiExpModel,
    /// `A_i / Σ A_j`, ordered like the (ascending-lifetime) components.
    pub weights: Vec<f64>,
    /// Covariance over (A_1, τ_1, …, A_n, τ_n[, baseline]). Derived from the
    /// local curvature of the fit alone; it does not capture model error.
    pub param_cov: Option<Vec<Vec<f64>>>,
    pub amplitude_sigma: Vec<Option<f64>>,
    pub lifetime_sigma: Vec<Option<f64>>,
    pub rss: f64,
    pub aicc: f64,
    pub n_params: usize,
    pub n_points: usize,
    /// First sample time of the fitted curve, s.
    pub start: f64,
    /// Last sample time of the fitted curve, s.
    pub horizon: f64,
    pub converged: bool,
    /// An amplitude collapsed to zero; `n − 1` components describe the data.
    pub degenerate: bool,
}

impl FitReport {
    pub fn n_components(&self) -> usize {
        self.model.components.len()
    }

    /// True when every amplitude is positive, adjacent lifetimes differ by
    /// at least [`LIFETIME_RATIO_GUARD`] and no lifetime exceeds
    /// [`LIFETIME_HORIZON_GUARD`] times the horizon or falls below
    /// [`LIFETIME_FLOOR_GUARD`] times the first sample time.
    pub fn passes_guard(&self) -> bool {
        !self.degenerate
            && self.model.components.iter().all(|c| {
                c.amplitude > 0.0
                    && c.lifetime <= LIFETIME_HORIZON_GUARD * self.horizon
                    && c.lifetime >= LIFETIME_FLOOR_GUARD * self.start
            })
            && self
                .model
                .components
                .windows(2)
                .all(|w| w[1].lifetime >= LIFETIME_RATIO_GUARD * w[0].lifetime)
    }

    /// Relaxation rates `1/τ_i` with `σ_rate = σ_τ / τ²`.
    pub fn rates(&self) -> Vec<(f64, Option<f64>)> {
        self.model
            .components
            .iter()
            .zip(&self.lifetime_sigma)
            .map(|(c, s)| (1.0 / c.lifetime, s.map(|s| s / (c.lifetime * c.lifetime))))
            .collect()
    }
}

struct MultiExpProblem<'a> {
    t: &'a [f64],
    y: &'a [f64],
    inv_sigma: &'a [f64],
    n: usize,
    free_baseline: bool,
}

impl MultiExpProblem<'_> {
    fn num_p(&self) -> usize {
        2 * self.n + usize::from(self.free_baseline)
    }
}

impl Problem for MultiExpProblem<'_> {
    fn num_params(&self) -> usize {
        self.num_p()
    }
    fn num_residuals(&self) -> usize {
        self.t.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let base = if self.free_baseline { p[2 * self.n] } else { 0.0 };
        for (i, &t) in self.t.iter().enumerate() {
            let mut v = base;
            for k in 0..self.n {
                v += p[2 * k] * (-t * (-p[2 * k + 1]).exp()).exp();
            }
            out[i] = (v - self.y[i]) * self.inv_sigma[i];
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (i, &t) in self.t.iter().enumerate() {
            let w = self.inv_sigma[i];
            for k in 0..self.n {
                let rate = (-p[2 * k + 1]).exp();
                let e = (-t * rate).exp();
                jac[(i, 2 * k)] = e * w;
                jac[(i, 2 * k + 1)] = p[2 * k] * e * t * rate * w;
            }
            if self.free_baseline {
                jac[(i, 2 * self.n)] = w;
            }
        }
    }
}

/// Non-negative amplitudes (and an unconstrained baseline) for fixed
/// lifetimes, by exhaustive search over active sets.
fn nonneg_amplitudes(
    t: &[f64],
    y: &[f64],
    inv_sigma: &[f64],
    lifetimes: &[f64],
    free_baseline: bool,
) -> (Vec<f64>, f64) {
    let n = lifetimes.len();
    let cols = n + usize::from(free_baseline);
    let full = DMatrix::from_fn(t.len(), cols, |i, j| {
        let v = if j < n { (-t[i] / lifetimes[j]).exp() } else { 1.0 };
        v * inv_sigma[i]
    });
    let rhs = DVector::from_iterator(t.len(), y.iter().zip(inv_sigma).map(|(y, w)| y * w));
    let nonneg: Vec<bool> = (0..cols).map(|j| j < n).collect();
    let (coef, _) = lsq::nonneg_lstsq(&full, &rhs, &nonneg);
    let baseline = if free_baseline { coef[n] } else { 0.0 };
    (coef[..n].to_vec(), baseline)
}

/// Peel-off lifetimes: fit the last decade of the remaining data with one
/// exponential, subtract it, move the window to earlier times and repeat.
fn peel_lifetimes(t: &[f64], y: &[f64], n: usize) -> Vec<f64> {
    let mut resid = y.to_vec();
    let mut end = t.len();
    let mut taus = Vec::with_capacity(n);
    for k in 0..n {
        if end < 2 {
            let last = taus.last().copied().unwrap_or(t[t.len() - 1]);
            taus.push(last / 10.0);
            continue;
        }
        let t_hi = t[end - 1];
        let start = if k + 1 < n {
            let s = t[..end].partition_point(|&x| x < t_hi / 10.0);
            s.min(end.saturating_sub(3))
        } else {
            0
        };
        let pts: Vec<usize> = (start..end).filter(|&i| resid[i] > 0.0).collect();
        let fallback = (t[start].max(t_hi * 1e-3) * t_hi).sqrt().max(f64::MIN_POSITIVE);
        let (tau, amp) = if pts.len() >= 2 {
            // ln r = ln A − t/τ, weighted by r² to mimic uniform errors on r
            let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &i in &pts {
                let w = resid[i] * resid[i];
                let ly = resid[i].ln();
                sw += w;
                sx += w * t[i];
                sy += w * ly;
                sxx += w * t[i] * t[i];
                sxy += w * t[i] * ly;
            }
            let den = sw * sxx - sx * sx;
            let slope = if den > 0.0 { (sw * sxy - sx * sy) / den } else { f64::NAN };
            if slope < 0.0 && slope.is_finite() {
                let intercept = (sy - slope * sx) / sw;
                (-1.0 / slope, intercept.exp())
            } else {
                (fallback, 0.0)
            }
        } else {
            (fallback, 0.0)
        };
        let tau = if tau.is_finite() && tau > 0.0 { tau } else { fallback };
        if amp.is_finite() {
            for i in 0..t.len() {
                resid[i] -= amp * (-t[i] / tau).exp();
            }
        }
        taus.push(tau);
        end = start;
    }
    taus
}

fn geometric_lifetimes(t: &[f64], n: usize) -> Vec<f64> {
    let lo = t.iter().copied().find(|&x| x > 0.0).unwrap_or(1e-3);
    let hi = t[t.len() - 1].max(lo * 10.0);
    (0..n)
        .map(|k| lo * (hi / lo).powf((k as f64 + 0.5) / n as f64))
        .collect()
}

fn pack(amps: &[f64], taus: &[f64], baseline: Option<f64>) -> Vec<f64> {
    let mut p: Vec<f64> = amps
        .iter()
        .zip(taus)
        .flat_map(|(a, t)| [*a, t.ln()])
        .collect();
    if let Some(b) = baseline {
        p.push(b);
    }
    p
}

fn fit_with_starts(
    curve: &DecayCurve,
    n: usize,
    opts: &DecayFitOptions,
    extra_start: Option<&MultiExpModel>,
) -> Result<FitReport> {
    curve.validate()?;
    if n == 0 || n > MAX_COMPONENTS {
        return Err(Error::invalid(format!("component count must be 1..=3, got {n}")));
    }
    let need = min_samples(n);
    if curve.samples.len() < need {
        return Err(Error::invalid(format!(
            "{n}-component fit needs at least {need} samples, got {}",
            curve.samples.len()
        )));
    }
    let t = curve.times();
    let y = curve.areas();
    let inv_sigma = curve.inverse_sigmas();
    // The optimiser works on areas divided by their largest magnitude so its
    // step guards do not depend on the area units; results are mapped back.
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let y_n: Vec<f64> = y.iter().map(|v| v / scale).collect();
    let inv_sigma_n: Vec<f64> = curve
        .samples
        .iter()
        .map(|s| s.sigma.map_or(1.0, |v| scale / v))
        .collect();
    let problem = MultiExpProblem {
        t: &t,
        y: &y_n,
        inv_sigma: &inv_sigma_n,
        n,
        free_baseline: opts.free_baseline,
    };
    let base_of = |b: f64| opts.free_baseline.then_some(b / scale);

    let mut starts: Vec<Vec<f64>> = Vec::new();
    for taus in [peel_lifetimes(&t, &y_n, n), geometric_lifetimes(&t, n)] {
        let (amps, b) = nonneg_amplitudes(&t, &y_n, &inv_sigma_n, &taus, opts.free_baseline);
        starts.push(pack(&amps, &taus, base_of(b * scale)));
    }
    for m in [opts.init.as_ref(), extra_start].into_iter().flatten() {
        if m.components.len() == n && m.validate().is_ok() {
            let amps: Vec<f64> = m.components.iter().map(|c| c.amplitude / scale).collect();
            let taus: Vec<f64> = m.components.iter().map(|c| c.lifetime).collect();
            starts.push(pack(&amps, &taus, base_of(m.baseline)));
        }
    }

    let np = problem.num_p();
    let mut bounds = Bounds::unbounded(np);
    for k in 0..n {
        bounds.lower[2 * k] = 0.0;
        bounds.lower[2 * k + 1] = -700.0;
        bounds.upper[2 * k + 1] = 700.0;
    }
    let lsq_opts = lsq::Options {
        max_iterations: opts.max_iterations.unwrap_or(200),
        ..lsq::Options::default()
    };
    let best = starts
        .iter()
        .filter_map(|s| lsq::minimize(&problem, s, &bounds, &lsq_opts))
        .min_by(|a, b| a.rss.total_cmp(&b.rss))
        .ok_or(Error::NonFinite("decay fit objective"))?;
    let converged = best.converged();
    // Polish until no step helps: the relative-change stop leaves parameters
    // only loosely pinned, and equivalent inputs must give matching fits.
    let polish_opts = lsq::Options {
        max_iterations: 100,
        rel_tolerance: 0.0,
        ..lsq::Options::default()
    };
    let best = match lsq::minimize(&problem, &best.params, &bounds, &polish_opts) {
        Some(polished) if polished.rss <= best.rss => polished,
        _ => best,
    };

    // Back to the caller's area units.
    let mut p = lsq::gauss_newton_polish(&problem, &best.params, &bounds, 20);
    for k in 0..n {
        p[2 * k] *= scale;
    }
    if opts.free_baseline {
        p[2 * n] *= scale;
    }
    let raw_problem = MultiExpProblem {
        t: &t,
        y: &y,
        inv_sigma: &inv_sigma,
        n,
        free_baseline: opts.free_baseline,
    };
    let mut resid = vec![0.0; t.len()];
    raw_problem.residuals(&p, &mut resid);
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    let mut jacobian = DMatrix::zeros(t.len(), np);
    raw_problem.jacobian(&p, &mut jacobian);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[2 * a + 1].total_cmp(&p[2 * b + 1]));
    let components: Vec<ExpComponent> = order
        .iter()
        .map(|&k| ExpComponent {
            amplitude: p[2 * k],
            lifetime: p[2 * k + 1].exp(),
        })
        .collect();
    let baseline = if opts.free_baseline { p[2 * n] } else { 0.0 };
    let model = MultiExpModel { components, baseline };
    let total_amp: f64 = model.components.iter().map(|c| c.amplitude).sum();
    let degenerate = model
        .components
        .iter()
        .any(|c| !(c.amplitude > COLLAPSED_AMPLITUDE * total_amp));

    // Covariance in (A, τ) order after sorting; lnτ → τ by the chain rule.
    let npts = t.len();
    let sigma2 = if curve.has_sigma() {
        1.0
    } else {
        rss / (npts.saturating_sub(np).max(1)) as f64
    };
    let mut perm: Vec<usize> = order.iter().flat_map(|&k| [2 * k, 2 * k + 1]).collect();
    if opts.free_baseline {
        perm.push(2 * n);
    }
    let dvals: Vec<f64> = perm
        .iter()
        .map(|&j| if j < 2 * n && j % 2 == 1 { p[j].exp() } else { 1.0 })
        .collect();
    let param_cov: Option<Vec<Vec<f64>>> = lsq::inverse_normal_matrix(&jacobian).map(|inv| {
        (0..np)
            .map(|a| {
                (0..np)
                    .map(|b| inv[(perm[a], perm[b])] * sigma2 * dvals[a] * dvals[b])
                    .collect()
            })
            .collect()
    });
    let sd = |idx: usize| -> Option<f64> {
        param_cov
            .as_ref()
            .map(|c| c[idx][idx])
            .filter(|v| *v >= 0.0 && v.is_finite())
            .map(f64::sqrt)
    };
    let amplitude_sigma = (0..n).map(|k| sd(2 * k)).collect();
    let lifetime_sigma = (0..n).map(|k| sd(2 * k + 1)).collect();

    let weighted_sq: f64 = y.iter().zip(&inv_sigma).map(|(y, w)| (y * w).powi(2)).sum();
    Ok(FitReport {
        weights: model.weights(),
        model,
        param_cov,
        amplitude_sigma,
        lifetime_sigma,
        rss,
        aicc: lsq::aicc(rss.max(lsq::rss_floor(weighted_sq)), npts, np),
        n_params: np,
        n_points: npts,
        start: t[0],
        horizon: t[npts - 1],
        converged,
        degenerate,
    })
}

/// Weighted least-squares fit with `n` exponential components. Weights are
/// `1/σ²` when the curve carries uncertainties and uniform otherwise.
pub fn fit_multiexp(curve: &DecayCurve, n: usize, opts: &DecayFitOptions) -> Result<FitReport> {
    fit_with_starts(curve, n, opts, None)
}

/// Nested-model F statistic comparing `n − 1` against `n` components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

fn f_test(smaller: &FitReport, larger: &FitReport) -> Option<FTest> {
    let df1 = (larger.n_params - smaller.n_params) as f64;
    let df2 = larger.n_points as f64 - larger.n_params as f64;
    if df1 <= 0.0 || df2 <= 0.0 || !(larger.rss > 0.0) {
        return None;
    }
    let statistic = ((smaller.rss - larger.rss) / df1) / (larger.rss / df2);
    let dist = FisherSnedecor::new(df1, df2).ok()?;
    let p_value = if statistic > 0.0 { 1.0 - dist.cdf(statistic) } else { 1.0 };
    Some(FTest {
        n: larger.n_components(),
        statistic,
        p_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSelection {
    pub chosen_n: usize,
    /// Index `k` holds the `k + 1`-component fit, if it succeeded.
    pub reports: Vec<Option<FitReport>>,
    pub failures: Vec<String>,
    /// The lowest-AICc fit failed the guards and a guarded one was chosen.
    pub fallback: bool,
    pub f_tests: Vec<FTest>,
}

impl ComponentSelection {
    pub fn chosen(&self) -> &FitReport {
        self.reports[self.chosen_n - 1]
            .as_ref()
            .expect("chosen report exists")
    }
}

/// Fits 1..=max_n components and keeps the lowest AICc among fits whose
/// amplitudes are positive, whose adjacent lifetimes differ by ≥ 3× and whose
/// lifetimes lie between the first sample time and 10× the last one.
pub fn select_components(
    curve: &DecayCurve,
    max_n: usize,
    opts: &DecayFitOptions,
) -> Result<ComponentSelection> {
    if max_n == 0 || max_n > MAX_COMPONENTS {
        return Err(Error::invalid(format!("max_n must be 1..=3, got {max_n}")));
    }
    let mut reports: Vec<Option<FitReport>> = Vec::new();
    let mut failures = Vec::new();
    for n in 1..=max_n {
        let extension = reports
            .last()
            .and_then(|r| r.as_ref())
            .map(|prev: &FitReport| extend_with_empty(&prev.model, &curve.times()));
        match fit_with_starts(curve, n, opts, extension.as_ref()) {
            Ok(r) => reports.push(Some(r)),
            Err(e) => {
                failures.push(format!("n={n}: {e}"));
                reports.push(None);
            }
        }
    }

    let by_aicc = |guarded: bool| {
        reports
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().map(|r| (i + 1, r)))
            .filter(|(_, r)| !guarded || r.passes_guard())
            .min_by(|a, b| a.1.aicc.total_cmp(&b.1.aicc))
            .map(|(n, _)| n)
    };
    let best = by_aicc(false).ok_or_else(|| Error::AllFitsFailed(failures.join("; ")))?;
    let guarded = by_aicc(true).ok_or_else(|| {
        Error::AllFitsFailed(format!(
            "no fit passes the amplitude/lifetime guards; {}",
            failures.join("; ")
        ))
    })?;

    let f_tests = reports
        .windows(2)
        .filter_map(|w| match (&w[0], &w[1]) {
            (Some(a), Some(b)) => f_test(a, b),
            _ => None,
        })
        .collect();

    Ok(ComponentSelection {
        chosen_n: guarded,
        fallback: guarded != best,
        reports,
        failures,
        f_tests,
    })
}

/// `model` plus a zero-amplitude component in the widest lifetime gap.
fn extend_with_empty(model: &MultiExpModel, times: &[f64]) -> MultiExpModel {
    let lo = times.iter().copied().find(|&x| x > 0.0).unwrap_or(1e-3);
    let hi = times[times.len() - 1];
    let mut marks = vec![lo];
    marks.extend(model.components.iter().map(|c| c.lifetime));
    marks.push(hi.max(lo));
    marks.sort_by(f64::total_cmp);
    let (a, b) = marks
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by(|x, y| (x.1 / x.0).total_cmp(&(y.1 / y.0)))
        .unwrap_or((lo, hi));
    let mut components = model.components.clone();
    components.push(ExpComponent {
        amplitude: 0.0,
        lifetime: (a * b).sqrt().max(f64::MIN_POSITIVE),
    });
    MultiExpModel::new(components, model.baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub class: ClassId,
    /// Constant fitted to the weights across conditions.
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub components: Vec<WeightSummary>,
}

/// Mean (constant fit) and sample standard deviation of each component weight.
pub fn weight_stats(reports: &[FitReport]) -> Result<WeightStats> {
    let weights: Vec<Vec<f64>> = reports.iter().map(|r| r.weights.clone()).collect();
    weight_stats_from_weights(&weights)
}

pub fn weight_stats_from_weights(weights: &[Vec<f64>]) -> Result<WeightStats> {
    if weights.len() < 2 {
        return Err(Error::invalid("weight statistics need at least two reports"));
    }
    let n = weights[0].len();
    if n == 0 || n > MAX_COMPONENTS {
        return Err(Error::invalid("reports must hold 1 to 3 components"));
    }
    if weights.iter().any(|w| w.len() != n) {
        return Err(Error::invalid("mixed component counts in one weight group"));
    }
    let count = weights.len();
    let components = (0..n)
        .map(|k| {
            let mean = weights.iter().map(|w| w[k]).sum::<f64>() / count as f64;
            let var = weights.iter().map(|w| (w[k] - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            WeightSummary {
                class: ClassId::from_index(k).expect("at most three components"),
                mean,
                std: var.sqrt(),
                count,
            }
        })
        .collect();
    Ok(WeightStats { components })
}
