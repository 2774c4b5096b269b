//! Seeded synthetic experiments: hole-area decay curves and spectral traces.
//!
//! Every random draw comes from [`crate::rng::CounterRng`], so a dataset is a
//! pure function of its model, plan and noise specification. Conditions are
//! simulated on independent streams (`stream = condition index`), which lets
//! them be generated in parallel without changing a single bit of output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decay::{DecayCurve, DecaySample, ExpComponent, MultiExpModel};
use crate::error::{Error, Result};
use crate::lineshape::{
    self, ShapeKind, SpectralTrace, TraceMeta, MIN_TRACE_POINTS, SCAN_WINDOW,
};
use crate::model::{rate_breakdown, Condition, RelaxationModel};
use crate::rng::CounterRng;

pub const SCHEMA_VERSION: u32 = 1;
/// Stream offset reserved for spectral-trace noise so it never collides with
/// the per-condition decay streams.
const TRACE_STREAM: u64 = 1 << 40;

/// Log-spaced read times `t_k = first · 10^(k / per_decade)` for
/// `k = 0..=K`, with `K` the smallest count that reaches `horizon`.
pub fn wait_schedule(first_read: f64, horizon: f64, reads_per_decade: usize) -> Result<Vec<f64>> {
    if !(first_read > 0.0 && first_read.is_finite() && horizon.is_finite() && horizon > first_read) {
        return Err(Error::invalid(format!(
            "wait schedule needs horizon > first_read > 0, got ({first_read}, {horizon})"
        )));
    }
    if reads_per_decade == 0 {
        return Err(Error::invalid("reads_per_decade must be at least 1"));
    }
    let rpd = reads_per_decade as f64;
    let exact = rpd * (horizon / first_read).log10();
    // Tolerate round-off so that exact decades give exactly K = rpd · decades.
    let k_max = if (exact - exact.round()).abs() < 1e-9 {
        exact.round()
    } else {
        exact.ceil()
    } as usize;
    Ok((0..=k_max)
        .map(|k| {
            if k == 0 {
                first_read
            } else {
                first_read * 10f64.powf(k as f64 / rpd)
            }
        })
        .collect())
}

fn default_first_read() -> f64 {
    0.1
}
fn default_reads_per_decade() -> usize {
    12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub conditions: Vec<Condition>,
    /// s after the burn.
    #[serde(default = "default_first_read")]
    pub first_read: f64,
    /// s.
    pub horizon: f64,
    #[serde(default = "default_reads_per_decade")]
    pub reads_per_decade: usize,
    pub initial_area: f64,
    /// One weight per model class, in model class order; each in [0, 1],
    /// summing to 1.
    pub class_weights: Vec<f64>,
}

impl ExperimentPlan {
    /// Plan with the default read cadence (0.1 s, 12 reads per decade).
    pub fn new(conditions: Vec<Condition>, horizon: f64, initial_area: f64, class_weights: Vec<f64>) -> Self {
        Self {
            conditions,
            first_read: default_first_read(),
            horizon,
            reads_per_decade: default_reads_per_decade(),
            initial_area,
            class_weights,
        }
    }

    pub fn validate(&self, model: &RelaxationModel) -> Result<()> {
        if self.conditions.is_empty() {
            return Err(Error::invalid("plan has no conditions"));
        }
        for c in &self.conditions {
            c.validate()?;
        }
        wait_schedule(self.first_read, self.horizon, self.reads_per_decade)?;
        if !(self.initial_area.is_finite() && self.initial_area > 0.0) {
            return Err(Error::invalid("initial_area must be positive"));
        }
        if self.class_weights.len() != model.classes.len() {
            return Err(Error::invalid(format!(
                "plan has {} class weights but the model has {} classes",
                self.class_weights.len(),
                model.classes.len()
            )));
        }
        if self.class_weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::invalid("class weights must lie in [0, 1]"));
        }
        let sum: f64 = self.class_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("class weights sum to {sum}, not 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_rel: f64,
    pub sigma_abs: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_rel: 0.0,
            sigma_abs: 0.0,
            seed: 0,
        }
    }

    pub fn relative(sigma_rel: f64, seed: u64) -> Self {
        Self {
            sigma_rel,
            sigma_abs: 0.0,
            seed,
        }
    }

    pub fn absolute(sigma_abs: f64, seed: u64) -> Self {
        Self {
            sigma_rel: 0.0,
            sigma_abs,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_rel", self.sigma_rel), ("sigma_abs", self.sigma_abs)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_rel == 0.0 && self.sigma_abs == 0.0
    }

    /// Standard deviation at a noiseless value `x`.
    pub fn sigma_at(&self, x: f64) -> f64 {
        self.sigma_rel * x.abs() + self.sigma_abs
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub model: RelaxationModel,
    pub plan: ExperimentPlan,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub curves: Vec<DecayCurve>,
    pub provenance: Provenance,
}

impl SyntheticDataset {
    /// Rebuilds the dataset from its own provenance record.
    pub fn regenerate(&self) -> Result<SyntheticDataset> {
        regenerate(&self.provenance)
    }
}

pub fn regenerate(p: &Provenance) -> Result<SyntheticDataset> {
    simulate_decay(&p.model, &p.plan, &p.noise)
}

/// Weighted multi-exponential implied by the model at one condition:
/// amplitudes `initial_area · W_i`, lifetimes `1 / rate_i(cond)`.
pub fn implied_decay_model(model: &RelaxationModel, plan: &ExperimentPlan, cond: &Condition) -> Result<MultiExpModel> {
    let components = model
        .classes
        .iter()
        .zip(&plan.class_weights)
        .map(|(c, &w)| {
            let r = rate_breakdown(model, c.class_id, cond)?;
            if !(r.total.is_finite() && r.total > 0.0) {
                return Err(Error::NonFinite("class rate"));
            }
            Ok(ExpComponent {
                amplitude: plan.initial_area * w,
                lifetime: r.lifetime,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiExpModel {
        components,
        baseline: 0.0,
    })
}

/// Noise-free area `initial_area · Σ W_i exp(−t · rate_i)`; evaluated in
/// model class order so the value does not depend on lifetime ordering.
fn noiseless_area(model: &MultiExpModel, t: f64) -> f64 {
    model
        .components
        .iter()
        .map(|c| c.amplitude * (-t / c.lifetime).exp())
        .sum::<f64>()
        + model.baseline
}

/// Simulates one decay curve per plan condition.
pub fn simulate_decay(model: &RelaxationModel, plan: &ExperimentPlan, noise: &NoiseSpec) -> Result<SyntheticDataset> {
    model.validate()?;
    plan.validate(model)?;
    noise.validate()?;
    let times = wait_schedule(plan.first_read, plan.horizon, plan.reads_per_decade)?;
    let curves = plan
        .conditions
        .par_iter()
        .enumerate()
        .map(|(ci, cond)| {
            let implied = implied_decay_model(model, plan, cond)?;
            let rng = CounterRng::for_stream(noise.seed, ci as u64);
            let samples = times
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let clean = noiseless_area(&implied, t);
                    let sigma = noise.sigma_at(clean);
                    let area = if sigma > 0.0 {
                        clean + sigma * rng.normal(i as u64)
                    } else {
                        clean
                    };
                    DecaySample {
                        t,
                        area,
                        sigma: (sigma > 0.0).then_some(sigma),
                    }
                })
                .collect();
            DecayCurve::new(*cond, samples)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        curves,
        provenance: Provenance {
            schema_version: SCHEMA_VERSION,
            model: model.clone(),
            plan: plan.clone(),
            noise: *noise,
        },
    })
}

/// Hole profile to render into a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    pub shape: ShapeKind,
    pub center: f64,
    pub fwhm: f64,
    pub depth: f64,
    pub baseline: f64,
}

/// Samples a hole profile on a uniform grid over `scan`, with the centre
/// displaced by `drift` and additive Gaussian noise of standard deviation
/// `sigma_rel·|clean| + sigma_abs`. The signal-to-noise ratio of the result is
/// `depth / sigma_abs`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_trace(
    shape: ShapeKind,
    center: f64,
    fwhm: f64,
    depth: f64,
    baseline: f64,
    scan: (f64, f64),
    points: usize,
    noise: &NoiseSpec,
    drift: f64,
) -> Result<SpectralTrace> {
    simulate_trace_with_meta(
        &HoleSpec {
            shape,
            center,
            fwhm,
            depth,
            baseline,
        },
        scan,
        points,
        noise,
        drift,
        TraceMeta {
            condition: Condition {
                temperature: 1.0,
                field: 0.0,
            },
            wait_time: 0.0,
            shift_hz: 0.0,
        },
    )
}

pub fn simulate_trace_with_meta(
    hole: &HoleSpec,
    scan: (f64, f64),
    points: usize,
    noise: &NoiseSpec,
    drift: f64,
    meta: TraceMeta,
) -> Result<SpectralTrace> {
    if !(hole.fwhm > 0.0 && hole.fwhm.is_finite()) {
        return Err(Error::invalid(format!("fwhm must be positive, got {}", hole.fwhm)));
    }
    if !(scan.0.is_finite() && scan.1.is_finite() && scan.1 > scan.0 && scan.0 >= 0.0) {
        return Err(Error::invalid(format!("scan window ({}, {}) is not valid", scan.0, scan.1)));
    }
    if points < MIN_TRACE_POINTS {
        return Err(Error::invalid(format!(
            "trace needs at least {MIN_TRACE_POINTS} points, got {points}"
        )));
    }
    if !(drift.is_finite() && hole.center.is_finite() && hole.depth.is_finite() && hole.baseline.is_finite()) {
        return Err(Error::NonFinite("trace parameter"));
    }
    noise.validate()?;
    let rng = CounterRng::for_stream(noise.seed, TRACE_STREAM);
    let step = (scan.1 - scan.0) / (points - 1) as f64;
    let freq: Vec<f64> = (0..points)
        .map(|i| if i == points - 1 { scan.1 } else { scan.0 + step * i as f64 })
        .collect();
    let signal = freq
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let clean = lineshape::eval_profile(hole.shape, hole.center + drift, hole.fwhm, hole.depth, hole.baseline, f)?;
            let sigma = noise.sigma_at(clean);
            Ok(if sigma > 0.0 {
                clean + sigma * rng.normal(i as u64)
            } else {
                clean
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralTrace::new(freq, signal, meta)
}

/// Rendering of a decay dataset into raw spectral traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceTemplate {
    pub shape: ShapeKind,
    pub fwhm: f64,
    pub baseline: f64,
    /// Hole depth of a sample whose area equals the plan's initial area.
    pub initial_depth: f64,
    pub points: usize,
    /// Absolute signal noise per trace sample.
    pub sigma_abs: f64,
    /// Maximum |drift| of the hole centre, Hz; each trace draws its drift
    /// uniformly from ±max_drift.
    pub max_drift: f64,
}

impl Default for TraceTemplate {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Gaussian,
            fwhm: 7.5e6,
            baseline: 1.0,
            initial_depth: 0.925,
            points: 801,
            sigma_abs: 0.0,
            max_drift: 0.0,
        }
    }
}

/// One trace per decay sample. Decay areas are in arbitrary units, so the
/// hole depth is `initial_depth · area / initial_area`: rendered hole areas
/// are proportional to the sample areas. Trace `k` of condition `c` uses noise seed
/// `stream_key(seed, c)` mixed with `k`, so traces are independent.
pub fn traces_from_dataset(
    dataset: &SyntheticDataset,
    template: &TraceTemplate,
    seed: u64,
) -> Result<Vec<SpectralTrace>> {
    let initial = dataset.provenance.plan.initial_area;
    if !(template.initial_depth > 0.0) || !(initial > 0.0) {
        return Err(Error::invalid("initial depth and initial area must be positive"));
    }
    let jobs: Vec<(usize, usize)> = dataset
        .curves
        .iter()
        .enumerate()
        .flat_map(|(ci, c)| (0..c.samples.len()).map(move |k| (ci, k)))
        .collect();
    jobs.par_iter()
        .map(|&(ci, k)| {
            let curve = &dataset.curves[ci];
            let sample = curve.samples[k];
            let stream = CounterRng::for_stream(seed, ci as u64);
            let drift = template.max_drift * (2.0 * stream.uniform(k as u64) - 1.0);
            let noise = NoiseSpec::absolute(template.sigma_abs, stream.bits(k as u64 + (1 << 32)));
            simulate_trace_with_meta(
                &HoleSpec {
                    shape: template.shape,
                    center: lineshape::DEFAULT_CENTER,
                    fwhm: template.fwhm,
                    depth: template.initial_depth * sample.area / initial,
                    baseline: template.baseline,
                },
                SCAN_WINDOW,
                template.points,
                &noise,
                drift,
                TraceMeta {
                    condition: curve.condition,
                    wait_time: sample.t,
                    shift_hz: 0.0,
                },
            )
        })
        .collect()
}
