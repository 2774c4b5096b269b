//! Global fit of the relaxation model to measured rates.
//!
//! All datasets share the constants and exponents `(g, Γ⁰, γ, l, m, n)`; every
//! (regime, class) pair carries its own three strengths `α`. Several regimes
//! (for instance the three low-temperature and two high-temperature classes)
//! are fitted in one call so they share exactly one set of exponents.
//!
//! The objective is `Σ ((f(θ; cond) − y) / σ)²`, or by default its log-space
//! counterpart `Σ ((ln f − ln y) / (σ/y))²`. A coarse grid over the free
//! exponents, with the strengths solved by non-negative linear least squares
//! at each grid node, seeds a bounded Levenberg–Marquardt refinement.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::{self, Bounds, Problem};
use crate::model::{
    self, rate_grid, sech_squared, zeeman_argument, ClassId, Condition, RateBreakdown,
    RelaxationModel, BOHR_MAGNETON, BOLTZMANN,
};

pub const MIN_POINTS_PER_CLASS: usize = 4;

pub const SHARED_NAMES: [&str; 6] = [
    "g_factor",
    "zero_field_linewidth",
    "field_broadening",
    "tls_field_exp",
    "tls_temp_exp",
    "raman_temp_exp",
];
pub const ALPHA_NAMES: [&str; 3] = ["alpha_ff", "alpha_tls", "alpha_raman"];

const G: usize = 0;
const GAMMA0: usize = 1;
const GAMMA: usize = 2;
const L: usize = 3;
const M: usize = 4;
const N: usize = 5;
const N_SHARED: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpace {
    #[default]
    LogRate,
    LinearRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub condition: Condition,
    /// s⁻¹.
    pub rate: f64,
    /// s⁻¹.
    pub sigma: f64,
}

/// Measured rates of one ion class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDataset {
    /// Regime label of the model this class belongs to; may be empty when a
    /// single model is fitted.
    #[serde(default)]
    pub regime: String,
    pub class_id: ClassId,
    pub points: Vec<RatePoint>,
}

impl RateDataset {
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_POINTS_PER_CLASS {
            return Err(Error::invalid(format!(
                "class {} needs at least {MIN_POINTS_PER_CLASS} rate points, got {}",
                self.key(),
                self.points.len()
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            p.condition.validate()?;
            if !(p.rate > 0.0 && p.rate.is_finite()) {
                return Err(Error::invalid(format!("{} point {i}: rate must be positive", self.key())));
            }
            if !(p.sigma > 0.0 && p.sigma.is_finite()) {
                return Err(Error::invalid(format!("{} point {i}: sigma must be positive", self.key())));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> ClassKey {
        ClassKey {
            regime: self.regime.clone(),
            class_id: self.class_id,
        }
    }
}

/// `regime:class`, or just `class` when the regime is empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassKey {
    pub regime: String,
    pub class_id: ClassId,
}

impl fmt::Display for ClassKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.regime.is_empty() {
            write!(f, "{}", self.class_id)
        } else {
            write!(f, "{}:{}", self.regime, self.class_id)
        }
    }
}

impl std::str::FromStr for ClassKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.rsplit_once(':') {
            Some((regime, class)) => Ok(ClassKey {
                regime: regime.trim().to_string(),
                class_id: class.parse()?,
            }),
            None => Ok(ClassKey {
                regime: String::new(),
                class_id: s.parse()?,
            }),
        }
    }
}

fn default_fixed() -> Vec<String> {
    vec!["field_broadening".into(), "zero_field_linewidth".into()]
}
fn default_max_iterations() -> usize {
    200
}
fn default_tolerance() -> f64 {
    1e-10
}
fn default_grid_points() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFitConfig {
    /// Names (or `*` patterns) of parameters held at their initial value.
    /// Shared names are listed in [`SHARED_NAMES`]; strengths are addressed as
    /// `regime:class.alpha_ff` and so on.
    #[serde(default = "default_fixed")]
    pub fixed: Vec<String>,
    /// Overrides of the default box bounds, keyed by parameter name.
    #[serde(default)]
    pub bounds: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub loss_space: LossSpace,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Grid nodes per free exponent for the initial search.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_true")]
    pub grid_search: bool,
    /// Temperatures (K) whose points are dropped before fitting.
    #[serde(default)]
    pub exclude_temperatures: Vec<f64>,
}

impl Default for GlobalFitConfig {
    fn default() -> Self {
        Self {
            fixed: default_fixed(),
            bounds: BTreeMap::new(),
            loss_space: LossSpace::LogRate,
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            grid_points: default_grid_points(),
            grid_search: true,
            exclude_temperatures: Vec::new(),
        }
    }
}

impl GlobalFitConfig {
    pub fn all_fixed() -> Self {
        Self {
            fixed: vec!["*".into()],
            ..Self::default()
        }
    }

    fn is_fixed(&self, name: &str) -> bool {
        self.fixed.iter().any(|pat| glob_match(pat, name))
    }

    fn bounds_for(&self, name: &str) -> (f64, f64) {
        if let Some(b) = self.bounds.get(name) {
            return *b;
        }
        let short = name.rsplit('.').next().unwrap_or(name);
        match short {
            "g_factor" => (1e-6, 15.0),
            "zero_field_linewidth" => (1.0, f64::INFINITY),
            "field_broadening" => (0.0, f64::INFINITY),
            "tls_field_exp" | "tls_temp_exp" | "raman_temp_exp" => (0.0, 10.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    fn excludes(&self, cond: &Condition) -> bool {
        self.exclude_temperatures
            .iter()
            .any(|t| (t - cond.temperature).abs() <= 1e-9 * t.abs().max(cond.temperature))
    }
}

/// `*` matches any run of characters.
fn glob_match(pattern: &str, name: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == name;
    }
    let mut rest = name;
    for (i, part) in parts.iter().enumerate() {
        if i == 0 {
            match rest.strip_prefix(part) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == parts.len() - 1 {
            return rest.ends_with(part);
        } else {
            match rest.find(part) {
                Some(pos) => rest = &rest[pos + part.len()..],
                None => return false,
            }
        }
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParam {
    pub name: String,
    pub value: f64,
    pub free: bool,
    /// Covariance-based standard error; absent for fixed parameters or when
    /// the Jacobian is singular.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResidual {
    pub class: String,
    pub condition: Condition,
    pub observed: f64,
    pub sigma: f64,
    pub predicted: f64,
    /// Weighted residual in the configured loss space.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalFitResult {
    pub models: Vec<RelaxationModel>,
    pub parameters: Vec<FittedParam>,
    /// Covariance over the free parameters, in `parameters` order.
    pub param_cov: Option<Vec<Vec<f64>>>,
    pub covariance_available: bool,
    pub residuals: Vec<PointResidual>,
    pub objective: f64,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub loss_space: LossSpace,
}

impl GlobalFitResult {
    pub fn model(&self, regime: &str) -> Option<&RelaxationModel> {
        if regime.is_empty() && self.models.len() == 1 {
            return self.models.first();
        }
        self.models.iter().find(|m| m.regime_label == regime)
    }

    pub fn param(&self, name: &str) -> Option<&FittedParam> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn free_names(&self) -> Vec<String> {
        self.parameters
            .iter()
            .filter(|p| p.free)
            .map(|p| p.name.clone())
            .collect()
    }
}

/// Flattened layout: six shared parameters followed by three strengths per
/// class of every model, in model order.
struct Layout {
    names: Vec<String>,
    /// (model index, class index) of each strength triple.
    slots: Vec<(usize, usize)>,
}

impl Layout {
    fn new(models: &[RelaxationModel]) -> Self {
        let mut names: Vec<String> = SHARED_NAMES.iter().map(|s| s.to_string()).collect();
        let mut slots = Vec::new();
        for (mi, m) in models.iter().enumerate() {
            for (ci, c) in m.classes.iter().enumerate() {
                let key = ClassKey {
                    regime: m.regime_label.clone(),
                    class_id: c.class_id,
                };
                for a in ALPHA_NAMES {
                    names.push(format!("{key}.{a}"));
                }
                slots.push((mi, ci));
            }
        }
        Self { names, slots }
    }

    fn pack(&self, models: &[RelaxationModel]) -> Vec<f64> {
        let s = &models[0].shared;
        let mut v = vec![
            s.g_factor,
            s.zero_field_linewidth,
            s.field_broadening,
            s.tls_field_exp,
            s.tls_temp_exp,
            s.raman_temp_exp,
        ];
        for &(mi, ci) in &self.slots {
            let c = &models[mi].classes[ci];
            v.extend([c.alpha_ff, c.alpha_tls, c.alpha_raman]);
        }
        v
    }

    fn unpack(&self, theta: &[f64], template: &[RelaxationModel]) -> Vec<RelaxationModel> {
        let mut models = template.to_vec();
        for m in &mut models {
            m.shared.g_factor = theta[G];
            m.shared.zero_field_linewidth = theta[GAMMA0];
            m.shared.field_broadening = theta[GAMMA];
            m.shared.tls_field_exp = theta[L];
            m.shared.tls_temp_exp = theta[M];
            m.shared.raman_temp_exp = theta[N];
        }
        for (k, &(mi, ci)) in self.slots.iter().enumerate() {
            let c = &mut models[mi].classes[ci];
            let base = N_SHARED + 3 * k;
            c.alpha_ff = theta[base];
            c.alpha_tls = theta[base + 1];
            c.alpha_raman = theta[base + 2];
        }
        models
    }
}

/// One data point bound to its strength slot.
struct Obs {
    slot: usize,
    cond: Condition,
    y: f64,
    sigma: f64,
    label: String,
}

struct GlobalProblem<'a> {
    obs: &'a [Obs],
    loss: LossSpace,
    /// Full parameter vector; free entries are overwritten from the solver.
    template: Vec<f64>,
    free: Vec<usize>,
}

/// Rate and its gradient with respect to the full parameter vector for one
/// observation (only shared entries and the observation's slot are nonzero).
struct RateEval {
    total: f64,
    shared_grad: [f64; N_SHARED],
    alpha_grad: [f64; 3],
}

fn eval_rate(theta: &[f64], slot: usize, cond: &Condition) -> RateEval {
    let base = N_SHARED + 3 * slot;
    let (a_ff, a_tls, a_r) = (theta[base], theta[base + 1], theta[base + 2]);
    let (t, b) = (cond.temperature, cond.field);
    let dx_dg = BOHR_MAGNETON * b / (2.0 * BOLTZMANN * t);
    let x = theta[G] * dx_dg;
    let sech2 = sech_squared(x);
    let tanh = x.tanh();
    let width = theta[GAMMA0] + theta[GAMMA] * b;
    let ff_unit = sech2 / width;
    let ff = a_ff * ff_unit;
    let bl = b.powf(theta[L]);
    let tm = t.powf(theta[M]);
    let tn = t.powf(theta[N]);
    let tls = a_tls * bl * tm;
    let raman = a_r * tn;
    let ln_b = if b > 0.0 { b.ln() } else { 0.0 };
    let ln_t = t.ln();
    RateEval {
        total: ff + tls + raman,
        shared_grad: [
            -2.0 * ff * tanh * dx_dg,
            -ff / width,
            -ff * b / width,
            tls * ln_b,
            tls * ln_t,
            raman * ln_t,
        ],
        alpha_grad: [ff_unit, bl * tm, tn],
    }
}

impl GlobalProblem<'_> {
    fn full(&self, free_params: &[f64]) -> Vec<f64> {
        let mut theta = self.template.clone();
        for (k, &j) in self.free.iter().enumerate() {
            theta[j] = free_params[k];
        }
        theta
    }

    fn residual_of(&self, o: &Obs, f: f64) -> f64 {
        match self.loss {
            LossSpace::LogRate => (f.max(f64::MIN_POSITIVE).ln() - o.y.ln()) * o.y / o.sigma,
            LossSpace::LinearRate => (f - o.y) / o.sigma,
        }
    }
}

impl Problem for GlobalProblem<'_> {
    fn num_params(&self) -> usize {
        self.free.len()
    }
    fn num_residuals(&self) -> usize {
        self.obs.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        let theta = self.full(p);
        for (i, o) in self.obs.iter().enumerate() {
            let e = eval_rate(&theta, o.slot, &o.cond);
            out[i] = self.residual_of(o, e.total);
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        let theta = self.full(p);
        for (i, o) in self.obs.iter().enumerate() {
            let e = eval_rate(&theta, o.slot, &o.cond);
            let factor = match self.loss {
                LossSpace::LogRate => o.y / (o.sigma * e.total.max(f64::MIN_POSITIVE)),
                LossSpace::LinearRate => 1.0 / o.sigma,
            };
            let base = N_SHARED + 3 * o.slot;
            for (k, &j) in self.free.iter().enumerate() {
                let d = if j < N_SHARED {
                    e.shared_grad[j]
                } else if (base..base + 3).contains(&j) {
                    e.alpha_grad[j - base]
                } else {
                    0.0
                };
                jac[(i, k)] = d * factor;
            }
        }
    }
}

fn check_models(models: &[RelaxationModel]) -> Result<()> {
    if models.is_empty() {
        return Err(Error::invalid("global fit needs at least one initial model"));
    }
    for m in models {
        m.validate()?;
        if m.shared != models[0].shared {
            return Err(Error::invalid(
                "initial models must carry identical shared parameters",
            ));
        }
    }
    for (i, m) in models.iter().enumerate() {
        if models[..i].iter().any(|o| o.regime_label == m.regime_label) {
            return Err(Error::invalid(format!("duplicate regime {:?}", m.regime_label)));
        }
    }
    Ok(())
}

fn bind_observations(
    datasets: &[RateDataset],
    models: &[RelaxationModel],
    layout: &Layout,
    config: &GlobalFitConfig,
) -> Result<Vec<Obs>> {
    let mut obs = Vec::new();
    for ds in datasets {
        let mi = if ds.regime.is_empty() && models.len() == 1 {
            0
        } else {
            models
                .iter()
                .position(|m| m.regime_label == ds.regime)
                .ok_or_else(|| Error::UnknownClass(ds.key().to_string()))?
        };
        let ci = models[mi]
            .classes
            .iter()
            .position(|c| c.class_id == ds.class_id)
            .ok_or_else(|| Error::UnknownClass(ds.key().to_string()))?;
        let slot = layout
            .slots
            .iter()
            .position(|&s| s == (mi, ci))
            .expect("layout covers every class");
        let kept: Vec<&RatePoint> = ds.points.iter().filter(|p| !config.excludes(&p.condition)).collect();
        let filtered = RateDataset {
            regime: ds.regime.clone(),
            class_id: ds.class_id,
            points: kept.iter().map(|p| **p).collect(),
        };
        filtered.validate()?;
        let label = ClassKey {
            regime: models[mi].regime_label.clone(),
            class_id: ds.class_id,
        }
        .to_string();
        obs.extend(kept.into_iter().map(|p| Obs {
            slot,
            cond: p.condition,
            y: p.rate,
            sigma: p.sigma,
            label: label.clone(),
        }));
    }
    if obs.is_empty() {
        return Err(Error::invalid("no rate data to fit"));
    }
    Ok(obs)
}

/// Objective value of `models` against `datasets` (no fitting).
pub fn objective(datasets: &[RateDataset], models: &[RelaxationModel], loss: LossSpace) -> Result<f64> {
    check_models(models)?;
    let layout = Layout::new(models);
    let config = GlobalFitConfig {
        loss_space: loss,
        ..GlobalFitConfig::default()
    };
    let obs = bind_observations(datasets, models, &layout, &config)?;
    let problem = GlobalProblem {
        obs: &obs,
        loss,
        template: layout.pack(models),
        free: Vec::new(),
    };
    let mut r = vec![0.0; obs.len()];
    problem.residuals(&[], &mut r);
    Ok(r.iter().map(|x| x * x).sum())
}

/// Non-negative least squares for the free strengths at fixed shared values.
fn solve_strengths(theta: &mut [f64], obs: &[Obs], free: &[bool], n_slots: usize) {
    for slot in 0..n_slots {
        let base = N_SHARED + 3 * slot;
        let cols: Vec<usize> = (0..3).filter(|&k| free[base + k]).collect();
        if cols.is_empty() {
            continue;
        }
        let rows: Vec<&Obs> = obs.iter().filter(|o| o.slot == slot).collect();
        let mut a = DMatrix::zeros(rows.len(), cols.len());
        let mut rhs = DVector::zeros(rows.len());
        for (i, o) in rows.iter().enumerate() {
            let e = eval_rate(theta, slot, &o.cond);
            let mut fixed_part = 0.0;
            for k in 0..3 {
                if !free[base + k] {
                    fixed_part += theta[base + k] * e.alpha_grad[k];
                }
            }
            for (c, &k) in cols.iter().enumerate() {
                a[(i, c)] = e.alpha_grad[k] / o.sigma;
            }
            rhs[i] = (o.y - fixed_part) / o.sigma;
        }
        let (coef, _) = lsq::nonneg_lstsq(&a, &rhs, &vec![true; cols.len()]);
        for (c, &k) in cols.iter().enumerate() {
            theta[base + k] = coef[c];
        }
    }
}

fn grid_values(lo: f64, hi: f64, n: usize, log: bool) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let u = (i as f64 + 0.5) / n as f64;
            if log {
                let lo = lo.max(0.05);
                lo * (hi / lo).powf(u)
            } else {
                lo + (hi - lo) * u
            }
        })
        .collect()
}

const GRID_STARTS: usize = 4;

/// Jointly fits shared constants/exponents and per-class strengths.
pub fn fit_global(
    datasets: &[RateDataset],
    config: &GlobalFitConfig,
    init: &[RelaxationModel],
) -> Result<GlobalFitResult> {
    check_models(init)?;
    let layout = Layout::new(init);
    let obs = bind_observations(datasets, init, &layout, config)?;
    let theta0 = layout.pack(init);
    let np_full = theta0.len();
    let free_mask: Vec<bool> = layout.names.iter().map(|n| !config.is_fixed(n)).collect();
    let free: Vec<usize> = (0..np_full).filter(|&j| free_mask[j]).collect();
    let (lower, upper): (Vec<f64>, Vec<f64>) = layout.names.iter().map(|n| config.bounds_for(n)).unzip();
    for j in 0..np_full {
        if !(lower[j] <= upper[j]) {
            return Err(Error::invalid(format!("bounds for {} are not ordered", layout.names[j])));
        }
    }

    let mut problem = GlobalProblem {
        obs: &obs,
        loss: config.loss_space,
        template: theta0.clone(),
        free: free.clone(),
    };
    let bounds = Bounds {
        lower: free.iter().map(|&j| lower[j]).collect(),
        upper: free.iter().map(|&j| upper[j]).collect(),
    };
    let restrict = |theta: &[f64]| -> Vec<f64> { free.iter().map(|&j| theta[j]).collect() };
    let obj_at = |problem: &GlobalProblem, theta: &[f64]| -> f64 {
        let mut r = vec![0.0; obs.len()];
        problem.residuals(&restrict(theta), &mut r);
        r.iter().map(|x| x * x).sum()
    };

    let mut starts: Vec<Vec<f64>> = vec![theta0.clone()];
    let grid_exps: Vec<usize> = [G, L, M, N].into_iter().filter(|&j| free_mask[j]).collect();
    if config.grid_search && !free.is_empty() {
        let axes: Vec<Vec<f64>> = grid_exps
            .iter()
            .map(|&j| {
                let hi = if upper[j].is_finite() { upper[j] } else { lower[j] + 10.0 };
                grid_values(lower[j], hi, config.grid_points.max(1), j == G)
            })
            .collect();
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::new();
        let total: usize = axes.iter().map(|a| a.len()).product();
        for idx in 0..total {
            let mut theta = theta0.clone();
            let mut rem = idx;
            for (a, &j) in axes.iter().zip(&grid_exps) {
                theta[j] = a[rem % a.len()];
                rem /= a.len();
            }
            solve_strengths(&mut theta, &obs, &free_mask, layout.slots.len());
            let v = obj_at(&problem, &theta);
            if v.is_finite() {
                scored.push((v, theta));
            }
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        starts.extend(scored.into_iter().take(GRID_STARTS).map(|s| s.1));
    }

    let lsq_opts = lsq::Options {
        max_iterations: config.max_iterations,
        rel_tolerance: config.tolerance,
        ..lsq::Options::default()
    };
    let best = if free.is_empty() {
        None
    } else {
        starts
            .iter()
            .filter_map(|s| lsq::minimize(&problem, &restrict(s), &bounds, &lsq_opts))
            .min_by(|a, b| a.rss.total_cmp(&b.rss))
    };

    let mut theta = theta0.clone();
    let (objective_history, iterations, converged, jac) = match &best {
        Some(out) => {
            for (k, &j) in free.iter().enumerate() {
                theta[j] = out.params[k];
            }
            (out.history.clone(), out.iterations, out.converged(), Some(&out.jacobian))
        }
        None if free.is_empty() => (vec![obj_at(&problem, &theta)], 0, true, None),
        None => return Err(Error::NonFinite("global objective at every start")),
    };
    problem.template = theta.clone();
    let models = layout.unpack(&theta, init);

    let cov = jac.and_then(lsq::inverse_normal_matrix);
    let mut free_pos = vec![None; np_full];
    for (k, &j) in free.iter().enumerate() {
        free_pos[j] = Some(k);
    }
    let parameters = layout
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| FittedParam {
            name: name.clone(),
            value: theta[j],
            free: free_mask[j],
            sigma: free_pos[j]
                .and_then(|k| cov.as_ref().map(|c| c[(k, k)]))
                .filter(|v| *v >= 0.0 && v.is_finite())
                .map(f64::sqrt),
        })
        .collect();
    let param_cov = cov.as_ref().map(|c| {
        (0..c.nrows())
            .map(|a| (0..c.ncols()).map(|b| c[(a, b)]).collect())
            .collect()
    });

    let mut residuals = Vec::with_capacity(obs.len());
    let mut objective = 0.0;
    for o in &obs {
        let predicted = eval_rate(&theta, o.slot, &o.cond).total;
        let r = problem.residual_of(o, predicted);
        objective += r * r;
        residuals.push(PointResidual {
            class: o.label.clone(),
            condition: o.cond,
            observed: o.y,
            sigma: o.sigma,
            predicted,
            residual: r,
        });
    }
    if !objective.is_finite() {
        return Err(Error::NonFinite("global objective"));
    }

    Ok(GlobalFitResult {
        models,
        parameters,
        covariance_available: cov.is_some(),
        param_cov,
        residuals,
        objective,
        objective_history,
        iterations,
        converged,
        loss_space: config.loss_space,
    })
}

/// Model decomposition along a sweep of conditions for one class.
pub fn predict_curves(
    result: &GlobalFitResult,
    regime: &str,
    class_id: ClassId,
    sweep: &[Condition],
) -> Result<Vec<(Condition, RateBreakdown)>> {
    let model = result
        .model(regime)
        .ok_or_else(|| Error::UnknownClass(format!("{regime}:{class_id}")))?;
    if model.class(class_id).is_none() {
        return Err(Error::UnknownClass(format!("{regime}:{class_id}")));
    }
    if sweep.is_empty() {
        return Ok(Vec::new());
    }
    rate_grid(model, class_id, sweep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub value: f64,
    pub objective: f64,
}

/// Profile of the objective along one parameter: at every value the named
/// parameter is held fixed and the remaining free ones are re-optimised from
/// the fitted optimum.
pub fn profile_uncertainty(
    datasets: &[RateDataset],
    config: &GlobalFitConfig,
    result: &GlobalFitResult,
    name: &str,
    values: &[f64],
) -> Result<Vec<ProfilePoint>> {
    let param = result
        .param(name)
        .ok_or_else(|| Error::invalid(format!("unknown parameter {name:?}")))?;
    if !param.free {
        return Err(Error::invalid(format!("parameter {name:?} was fixed in the fit")));
    }
    let layout = Layout::new(&result.models);
    let j = layout.names.iter().position(|n| n == name).expect("known parameter");
    let mut cfg = config.clone();
    cfg.fixed.push(name.to_string());
    cfg.grid_search = false;
    values
        .iter()
        .map(|&v| {
            let mut theta = layout.pack(&result.models);
            theta[j] = v;
            let start = layout.unpack(&theta, &result.models);
            let fit = fit_global(datasets, &cfg, &start)?;
            Ok(ProfilePoint {
                value: v,
                objective: fit.objective,
            })
        })
        .collect()
}

/// Starting model with generic exponents, used when the caller has no better
/// guess: g = 1, l = 1, m = 1.2, n = 3, the reference Γ⁰ and γ, unit strengths.
pub fn generic_init(regime: &str, classes: &[ClassId]) -> RelaxationModel {
    let mut shared = model::reference_shared_params();
    shared.g_factor = 1.0;
    shared.tls_field_exp = 1.0;
    shared.tls_temp_exp = 1.2;
    shared.raman_temp_exp = 3.0;
    RelaxationModel {
        regime_label: regime.to_string(),
        shared,
        classes: classes
            .iter()
            .map(|&c| model::ClassParams::new(c, 1e8, 1.0, 0.1))
            .collect(),
    }
}

/// Splits a combined dataset list by regime, for per-regime comparisons.
pub fn datasets_by_regime(datasets: &[RateDataset]) -> BTreeMap<String, Vec<RateDataset>> {
    let mut out: BTreeMap<String, Vec<RateDataset>> = BTreeMap::new();
    for d in datasets {
        out.entry(d.regime.clone()).or_default().push(d.clone());
    }
    out
}

/// `zeeman_argument` re-exported for callers building custom sweeps.
pub fn polarisation_argument(g: f64, cond: &Condition) -> f64 {
    zeeman_argument(g, cond)
}
