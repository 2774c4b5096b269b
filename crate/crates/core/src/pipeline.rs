//! End-to-end analysis: traces → hole areas → decay fits → rates → global
//! model fit → prediction curves, plus plot-ready exports.
//!
//! Stages run in that order. Failures of single items (one trace, one decay
//! curve) are recorded in the report and the run continues; the run fails
//! only when a whole stage produces nothing. A global fit that cannot run
//! because there are too few rate points is reported as partial completion.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decay::{self, DecayCurve, DecayFitOptions, DecaySample, FitReport, MultiExpModel, WeightStats};
use crate::error::{Error, Result};
use crate::global::{
    self, fit_global, generic_init, GlobalFitConfig, GlobalFitResult, RateDataset, RatePoint,
    MIN_POINTS_PER_CLASS,
};
use crate::io::{self, write_atomic};
use crate::lineshape::{self, HoleFit, ShapeKind, SpectralTrace, DEFAULT_CENTER};
use crate::model::{rate_breakdown, ClassId, Condition, RateBreakdown, RelaxationModel, HIGH_TEMPERATURE, LOW_TEMPERATURE};

pub const SCHEMA_VERSION: u32 = 1;

fn default_center() -> f64 {
    DEFAULT_CENTER
}
fn default_max_components() -> usize {
    decay::MAX_COMPONENTS
}
fn default_fallback_sigma() -> f64 {
    0.05
}
fn default_sweep_points() -> usize {
    101
}
fn default_regimes() -> BTreeMap<usize, String> {
    BTreeMap::from([
        (1, "single-component".to_string()),
        (2, HIGH_TEMPERATURE.to_string()),
        (3, LOW_TEMPERATURE.to_string()),
    ])
}

/// One prediction sweep: vary field at fixed temperature or vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "vary", rename_all = "snake_case")]
pub enum Sweep {
    /// Field from `from` to `to` (T) at `temperature` (K), linear spacing.
    Field { temperature: f64, from: f64, to: f64 },
    /// Temperature from `from` to `to` (K) at `field` (T), log spacing.
    Temperature { field: f64, from: f64, to: f64 },
}

impl Sweep {
    fn conditions(&self, points: usize) -> Result<Vec<Condition>> {
        let n = points.max(2);
        (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                match *self {
                    Sweep::Field { temperature, from, to } => Condition::new(temperature, from + (to - from) * u),
                    Sweep::Temperature { field, from, to } => Condition::new(from * (to / from).powf(u), field),
                }
            })
            .collect()
    }

    fn x_of(&self, c: &Condition) -> f64 {
        match self {
            Sweep::Field { .. } => c.field,
            Sweep::Temperature { .. } => c.temperature,
        }
    }

    fn matches(&self, c: &Condition) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-12);
        match *self {
            Sweep::Field { temperature, .. } => close(c.temperature, temperature),
            Sweep::Temperature { field, .. } => close(c.field, field),
        }
    }

    fn label(&self) -> String {
        match self {
            Sweep::Field { temperature, .. } => format!("field_at_{:.0}mK", temperature * 1e3),
            Sweep::Temperature { field, .. } => format!("temperature_at_{:.0}mT", field * 1e3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Frequency the hole minimum is moved to during recentering, Hz.
    #[serde(default = "default_center")]
    pub target_center: f64,
    /// Largest component count tried per decay curve.
    #[serde(default = "default_max_components")]
    pub max_components: usize,
    #[serde(default)]
    pub free_baseline: bool,
    /// Holes whose fitted area is below this many standard errors are
    /// treated as undetected and left out of the decay curve.
    #[serde(default = "default_min_hole_significance")]
    pub min_hole_significance: f64,
    /// Relative rate uncertainty used when a decay fit yields no usable
    /// lifetime standard error.
    #[serde(default = "default_fallback_sigma")]
    pub fallback_rate_sigma: f64,
    /// Regime label assigned to curves by their selected component count.
    #[serde(default = "default_regimes")]
    pub regimes: BTreeMap<usize, String>,
    #[serde(default)]
    pub global: GlobalFitConfig,
    /// Starting models for the global fit; generic starts are used otherwise.
    #[serde(default)]
    pub init_models: Vec<RelaxationModel>,
    /// Prediction sweeps; derived from the data when empty.
    #[serde(default)]
    pub sweeps: Vec<Sweep>,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
}

fn default_min_hole_significance() -> f64 {
    3.0
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineInput {
    Traces(Vec<SpectralTrace>),
    Decays(Vec<DecayCurve>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Complete,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub stage: String,
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleRecord {
    pub wait_time: f64,
    pub shift_hz: f64,
    pub fit: HoleFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleGroup {
    pub condition: Condition,
    pub shape: ShapeKind,
    pub delta_aicc: f64,
    pub shape_indeterminate: bool,
    pub holes: Vec<HoleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRecord {
    /// Index of this record; rate rows refer back to it.
    pub id: usize,
    pub curve: DecayCurve,
    pub selected_components: usize,
    pub regime: String,
    pub fallback: bool,
    /// AICc of the 1-, 2-, ... component fits (absent where a fit failed).
    pub aicc: Vec<Option<f64>>,
    pub f_test_p_values: Vec<f64>,
    pub report: FitReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub regime: String,
    pub class_id: ClassId,
    pub condition: Condition,
    pub rate: f64,
    pub sigma: f64,
    pub sigma_imputed: bool,
    /// `DecayRecord::id` this rate came from.
    pub decay_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeWeights {
    pub regime: String,
    pub stats: WeightStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionCurve {
    pub regime: String,
    pub class_id: ClassId,
    pub sweep: Sweep,
    pub x: Vec<f64>,
    pub rates: Vec<RateBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub status: Status,
    pub notes: Vec<String>,
    pub failures: Vec<ItemFailure>,
    pub holes: Vec<HoleGroup>,
    pub decays: Vec<DecayRecord>,
    pub rates: Vec<RateRow>,
    pub weights: Vec<RegimeWeights>,
    pub global_fit: Option<GlobalFitResult>,
    pub predictions: Vec<PredictionCurve>,
}

impl PipelineReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Rates fed to the global fit, grouped per (regime, class).
    pub fn rate_datasets(&self) -> Vec<RateDataset> {
        rate_datasets(&self.rates)
    }
}

fn same_condition(a: &Condition, b: &Condition) -> bool {
    a.temperature.to_bits() == b.temperature.to_bits() && a.field.to_bits() == b.field.to_bits()
}

/// Groups traces by exact condition, each group sorted by wait time; groups in
/// order of first appearance.
fn group_traces(traces: Vec<SpectralTrace>) -> Vec<(Condition, Vec<SpectralTrace>)> {
    let mut groups: Vec<(Condition, Vec<SpectralTrace>)> = Vec::new();
    for t in traces {
        match groups.iter_mut().find(|g| same_condition(&g.0, &t.meta.condition)) {
            Some(g) => g.1.push(t),
            None => groups.push((t.meta.condition, vec![t])),
        }
    }
    for g in &mut groups {
        g.1.sort_by(|a, b| a.meta.wait_time.total_cmp(&b.meta.wait_time));
    }
    groups
}

struct HoleStageOut {
    group: Option<HoleGroup>,
    curve: Option<DecayCurve>,
    failures: Vec<ItemFailure>,
}

/// Fits without a usable area uncertainty (noiseless traces) count as detected.
fn hole_detected(fit: &HoleFit, min_significance: f64) -> bool {
    match fit.area_sigma().filter(|s| *s > 0.0 && s.is_finite()) {
        Some(s) => fit.area >= min_significance * s,
        None => fit.area > 0.0,
    }
}

fn hole_stage_group(cond: Condition, traces: &[SpectralTrace], config: &PipelineConfig) -> HoleStageOut {
    let item = |t: &SpectralTrace| format!("{} t={}s", cond, t.meta.wait_time);
    let mut failures = Vec::new();
    let recentered: Vec<SpectralTrace> = traces
        .iter()
        .filter_map(|t| match lineshape::recenter(t, config.target_center) {
            Ok(r) => Some(r),
            Err(e) => {
                failures.push(ItemFailure {
                    stage: "recenter".into(),
                    item: item(t),
                    error: e.to_string(),
                });
                None
            }
        })
        .collect();
    let Some(first) = recentered.first() else {
        return HoleStageOut { group: None, curve: None, failures };
    };
    let verdict = match lineshape::classify_shape(first) {
        Ok(v) => v,
        Err(e) => {
            failures.push(ItemFailure {
                stage: "classify".into(),
                item: item(first),
                error: e.to_string(),
            });
            return HoleStageOut { group: None, curve: None, failures };
        }
    };
    let shape = verdict.shape;
    let fits: Vec<(usize, Result<HoleFit>)> = recentered
        .par_iter()
        .enumerate()
        .map(|(i, t)| (i, lineshape::fit_hole(t, shape, None)))
        .collect();
    let mut holes = Vec::new();
    for (i, fit) in fits {
        let t = &recentered[i];
        match fit {
            Ok(fit) if !hole_detected(&fit, config.min_hole_significance) => failures.push(ItemFailure {
                stage: "hole_detect".into(),
                item: item(t),
                error: format!(
                    "hole area {:e} is below {} standard errors",
                    fit.area, config.min_hole_significance
                ),
            }),
            Ok(fit) => holes.push(HoleRecord {
                wait_time: t.meta.wait_time,
                shift_hz: t.meta.shift_hz,
                fit,
            }),
            Err(e) => failures.push(ItemFailure {
                stage: "hole_fit".into(),
                item: item(t),
                error: e.to_string(),
            }),
        }
    }
    // Area uncertainties come from the fit covariance; if any is unusable
    // (e.g. noiseless traces) the whole curve is fitted unweighted.
    let sigmas: Vec<Option<f64>> = holes
        .iter()
        .map(|h| h.fit.area_sigma().filter(|s| *s > 0.0 && s.is_finite()))
        .collect();
    let weighted = sigmas.iter().all(Option::is_some);
    let samples: Vec<DecaySample> = holes
        .iter()
        .zip(&sigmas)
        .map(|(h, s)| DecaySample {
            t: h.wait_time,
            area: h.fit.area,
            sigma: if weighted { *s } else { None },
        })
        .collect();
    let curve = match DecayCurve::new(cond, samples) {
        Ok(c) => Some(c),
        Err(e) => {
            failures.push(ItemFailure {
                stage: "area".into(),
                item: cond.to_string(),
                error: e.to_string(),
            });
            None
        }
    };
    HoleStageOut {
        group: Some(HoleGroup {
            condition: cond,
            shape,
            delta_aicc: verdict.delta_aicc,
            shape_indeterminate: verdict.indeterminate,
            holes,
        }),
        curve,
        failures,
    }
}

fn rate_datasets(rows: &[RateRow]) -> Vec<RateDataset> {
    let mut out: Vec<RateDataset> = Vec::new();
    for r in rows {
        let point = RatePoint {
            condition: r.condition,
            rate: r.rate,
            sigma: r.sigma,
        };
        match out.iter_mut().find(|d| d.regime == r.regime && d.class_id == r.class_id) {
            Some(d) => d.points.push(point),
            None => out.push(RateDataset {
                regime: r.regime.clone(),
                class_id: r.class_id,
                points: vec![point],
            }),
        }
    }
    out.sort_by(|a, b| (&a.regime, a.class_id).cmp(&(&b.regime, b.class_id)));
    out
}

/// Default sweeps: a field sweep at every measured temperature and a
/// temperature sweep at every field measured at three or more temperatures.
fn default_sweeps(points: &[RatePoint]) -> Vec<Sweep> {
    let mut temps: Vec<f64> = points.iter().map(|p| p.condition.temperature).collect();
    temps.sort_by(f64::total_cmp);
    temps.dedup();
    let max_field = points.iter().map(|p| p.condition.field).fold(0.0, f64::max).max(0.2);
    let mut sweeps: Vec<Sweep> = temps
        .iter()
        .map(|&t| Sweep::Field {
            temperature: t,
            from: 0.0,
            to: max_field,
        })
        .collect();
    let mut fields: Vec<f64> = points.iter().map(|p| p.condition.field).collect();
    fields.sort_by(f64::total_cmp);
    fields.dedup();
    for b in fields {
        let mut ts: Vec<f64> = points
            .iter()
            .filter(|p| p.condition.field == b)
            .map(|p| p.condition.temperature)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        if ts.len() >= 3 {
            sweeps.push(Sweep::Temperature {
                field: b,
                from: ts[0],
                to: ts[ts.len() - 1],
            });
        }
    }
    sweeps
}

/// Runs every stage on already-ingested input.
pub fn run_pipeline(input: PipelineInput, config: &PipelineConfig) -> Result<PipelineReport> {
    if config.max_components == 0 || config.max_components > decay::MAX_COMPONENTS {
        return Err(Error::invalid("max_components must be 1..=3"));
    }
    let mut failures = Vec::new();
    let mut notes = Vec::new();
    let mut status = Status::Complete;

    // Stage 1: holes → decay curves.
    let (holes, curves) = match input {
        PipelineInput::Decays(c) => (Vec::new(), c),
        PipelineInput::Traces(traces) => {
            if traces.is_empty() {
                return Err(Error::EmptyStage("ingest (no traces)".into()));
            }
            let groups = group_traces(traces);
            let outs: Vec<HoleStageOut> = groups
                .par_iter()
                .map(|(cond, ts)| hole_stage_group(*cond, ts, config))
                .collect();
            let mut holes = Vec::new();
            let mut curves = Vec::new();
            for o in outs {
                failures.extend(o.failures);
                holes.extend(o.group);
                curves.extend(o.curve);
            }
            if curves.is_empty() {
                return Err(Error::EmptyStage("hole fitting".into()));
            }
            (holes, curves)
        }
    };
    if curves.is_empty() {
        return Err(Error::EmptyStage("ingest (no decay curves)".into()));
    }

    // Stage 2: decay fits with component selection.
    let opts = DecayFitOptions {
        free_baseline: config.free_baseline,
        ..DecayFitOptions::default()
    };
    let selections: Vec<Result<decay::ComponentSelection>> = curves
        .par_iter()
        .map(|c| decay::select_components(c, config.max_components, &opts))
        .collect();
    let mut decays = Vec::new();
    for (curve, sel) in curves.into_iter().zip(selections) {
        match sel {
            Ok(sel) => {
                let n = sel.chosen_n;
                let regime = config
                    .regimes
                    .get(&n)
                    .cloned()
                    .unwrap_or_else(|| format!("{n}-component"));
                for f in &sel.failures {
                    failures.push(ItemFailure {
                        stage: "decay_fit".into(),
                        item: curve.condition.to_string(),
                        error: f.clone(),
                    });
                }
                decays.push(DecayRecord {
                    id: decays.len(),
                    selected_components: n,
                    regime,
                    fallback: sel.fallback,
                    aicc: sel.reports.iter().map(|r| r.as_ref().map(|r| r.aicc)).collect(),
                    f_test_p_values: sel.f_tests.iter().map(|f| f.p_value).collect(),
                    report: sel.chosen().clone(),
                    curve,
                });
            }
            Err(e) => failures.push(ItemFailure {
                stage: "decay_fit".into(),
                item: curve.condition.to_string(),
                error: e.to_string(),
            }),
        }
    }
    if decays.is_empty() {
        return Err(Error::EmptyStage("decay fitting".into()));
    }

    // Stage 3: rate table; components in ascending lifetime become A, B, C.
    let mut rates = Vec::new();
    for d in &decays {
        for (k, (rate, sigma)) in d.report.rates().into_iter().enumerate() {
            let class_id = ClassId::from_index(k).expect("at most three components");
            let usable = sigma.filter(|s| *s > 0.0 && s.is_finite());
            rates.push(RateRow {
                regime: d.regime.clone(),
                class_id,
                condition: d.curve.condition,
                rate,
                sigma: usable.unwrap_or(config.fallback_rate_sigma * rate),
                sigma_imputed: usable.is_none(),
                decay_id: d.id,
            });
        }
    }

    // Stage 4: weight statistics per regime.
    let mut by_regime: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for d in &decays {
        by_regime.entry(d.regime.clone()).or_default().push(d.report.weights.clone());
    }
    let mut weights = Vec::new();
    for (regime, ws) in &by_regime {
        match decay::weight_stats_from_weights(ws) {
            Ok(stats) => weights.push(RegimeWeights {
                regime: regime.clone(),
                stats,
            }),
            Err(e) => notes.push(format!("weights for {regime}: {e}")),
        }
    }

    // Stage 5: global fit over every class with enough points.
    let all = rate_datasets(&rates);
    let (usable, short): (Vec<RateDataset>, Vec<RateDataset>) = all
        .into_iter()
        .partition(|d| d.points.len() >= MIN_POINTS_PER_CLASS);
    for d in &short {
        status = Status::Partial;
        notes.push(format!(
            "class {} has {} rate point(s); the global fit needs at least {MIN_POINTS_PER_CLASS}",
            d.key(),
            d.points.len()
        ));
    }
    let mut global_fit = None;
    if usable.is_empty() {
        status = Status::Partial;
        notes.push("global fit skipped: too few rate points".into());
    } else {
        let init = init_models(&usable, config);
        match fit_global(&usable, &config.global, &init) {
            Ok(fit) => {
                if !fit.converged {
                    notes.push("global fit reached its iteration cap".into());
                }
                global_fit = Some(fit);
            }
            Err(e) => {
                status = Status::Partial;
                failures.push(ItemFailure {
                    stage: "global_fit".into(),
                    item: "all classes".into(),
                    error: e.to_string(),
                });
            }
        }
    }

    // Stage 6: prediction curves.
    let mut predictions = Vec::new();
    if let Some(fit) = &global_fit {
        for d in &usable {
            let sweeps = if config.sweeps.is_empty() {
                default_sweeps(&d.points)
            } else {
                config.sweeps.clone()
            };
            for sweep in sweeps {
                let conds = sweep.conditions(config.sweep_points)?;
                let rows = global::predict_curves(fit, &d.regime, d.class_id, &conds)?;
                predictions.push(PredictionCurve {
                    regime: d.regime.clone(),
                    class_id: d.class_id,
                    sweep,
                    x: rows.iter().map(|(c, _)| sweep.x_of(c)).collect(),
                    rates: rows.into_iter().map(|(_, r)| r).collect(),
                });
            }
        }
    }

    Ok(PipelineReport {
        schema_version: SCHEMA_VERSION,
        status,
        notes,
        failures,
        holes,
        decays,
        rates,
        weights,
        global_fit,
        predictions,
    })
}

/// User-supplied models restricted to the classes that have data, or generic
/// starts sharing one set of exponents.
fn init_models(datasets: &[RateDataset], config: &PipelineConfig) -> Vec<RelaxationModel> {
    let mut regimes: Vec<String> = datasets.iter().map(|d| d.regime.clone()).collect();
    regimes.dedup();
    let shared = config.init_models.first().map(|m| m.shared);
    regimes
        .iter()
        .map(|regime| {
            let ids: Vec<ClassId> = datasets
                .iter()
                .filter(|d| &d.regime == regime)
                .map(|d| d.class_id)
                .collect();
            let mut m = config
                .init_models
                .iter()
                .find(|m| &m.regime_label == regime)
                .cloned()
                .unwrap_or_else(|| generic_init(regime, &ids));
            m.classes.retain(|c| ids.contains(&c.class_id));
            for id in &ids {
                if m.class(*id).is_none() {
                    m.classes.push(generic_init(regime, &[*id]).classes[0]);
                }
            }
            m.classes.sort_by_key(|c| c.class_id);
            if let Some(s) = shared {
                m.shared = s;
            }
            m
        })
        .collect()
}

/// Writes the report, per-stage tables and prediction curves into `dir`;
/// returns every path written.
pub fn persist_report(report: &PipelineReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let path = dir.join("report.json");
    write_atomic(&path, report.to_json()?.as_bytes())?;
    written.push(path);
    let decay_dir = dir.join("decays");
    for d in &report.decays {
        let p = decay_dir.join(format!("decay_{:03}_{}.csv", d.id, io::condition_stem(&d.curve.condition)));
        written.extend(io::write_decay(&p, &d.curve)?);
    }
    let rates = report.rate_datasets();
    if !rates.is_empty() {
        let p = dir.join("rates.csv");
        io::write_rates(&p, &rates)?;
        written.push(p);
    }
    if let Some(fit) = &report.global_fit {
        let p = dir.join("model.json");
        io::write_models(&p, &fit.models)?;
        written.push(p);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Rates,
    Weights,
    Decays,
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rates" => Ok(PlotKind::Rates),
            "weights" => Ok(PlotKind::Weights),
            "decays" => Ok(PlotKind::Decays),
            other => Err(Error::invalid(format!("unknown plot kind {other:?} (rates|weights|decays)"))),
        }
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(io::fmt_f64).unwrap_or_default()
}

/// An in-memory plot file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotFile {
    pub name: String,
    pub contents: String,
}

/// Builds the plot files for one kind without touching the filesystem.
pub fn build_plot_data(report: &PipelineReport, which: PlotKind, svg: bool) -> Result<Vec<PlotFile>> {
    let files = match which {
        PlotKind::Rates => rate_plots(report, svg)?,
        PlotKind::Weights => weight_plots(report)?,
        PlotKind::Decays => decay_plots(report)?,
    };
    if files.is_empty() {
        return Err(Error::EmptyStage(format!("{which:?}").to_lowercase()));
    }
    Ok(files)
}

/// Writes plot-ready CSVs (and optionally SVGs) into `dir`. Everything is
/// built in memory first, so a missing stage writes nothing.
pub fn emit_plot_data(report: &PipelineReport, which: PlotKind, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let files = build_plot_data(report, which, svg)?;
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let p = dir.join(&f.name);
        write_atomic(&p, f.contents.as_bytes())?;
        out.push(p);
    }
    Ok(out)
}

fn rate_plots(report: &PipelineReport, svg: bool) -> Result<Vec<PlotFile>> {
    let Some(fit) = &report.global_fit else {
        return Err(Error::EmptyStage("global fit".into()));
    };
    let mut files = Vec::new();
    for curve in &report.predictions {
        let model = fit
            .model(&curve.regime)
            .ok_or_else(|| Error::UnknownClass(curve.regime.clone()))?;
        let data: Vec<&RateRow> = report
            .rates
            .iter()
            .filter(|r| r.regime == curve.regime && r.class_id == curve.class_id && curve.sweep.matches(&r.condition))
            .collect();
        let mut rows: Vec<(f64, Option<&RateRow>, RateBreakdown)> = curve
            .x
            .iter()
            .zip(&curve.rates)
            .map(|(x, r)| (*x, None, *r))
            .collect();
        for d in &data {
            rows.push((curve.sweep.x_of(&d.condition), Some(*d), rate_breakdown(model, curve.class_id, &d.condition)?));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_some().cmp(&b.1.is_some())));
        let mut csv = String::from("x,data,data_sigma,total,flip_flop,tls_direct,raman\n");
        for (x, d, r) in &rows {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                io::fmt_f64(*x),
                opt(d.map(|d| d.rate)),
                opt(d.map(|d| d.sigma)),
                io::fmt_f64(r.total),
                io::fmt_f64(r.flip_flop),
                io::fmt_f64(r.tls_direct),
                io::fmt_f64(r.raman)
            );
        }
        let stem = format!("rates_{}_{}_{}", slug(&curve.regime), curve.class_id, curve.sweep.label());
        files.push(PlotFile {
            name: format!("{stem}.csv"),
            contents: csv,
        });
        if svg {
            files.push(PlotFile {
                name: format!("{stem}.svg"),
                contents: render_rate_svg(curve, &data, &stem),
            });
        }
    }
    Ok(files)
}

fn weight_plots(report: &PipelineReport) -> Result<Vec<PlotFile>> {
    let mut files = Vec::new();
    for rw in &report.weights {
        let comps = &rw.stats.components;
        let mut csv = String::from("temperature_K,field_T");
        for c in comps {
            let k = c.class;
            let _ = write!(csv, ",w_{k},mean_{k},lower_{k},upper_{k}");
        }
        csv.push('\n');
        for d in report.decays.iter().filter(|d| d.regime == rw.regime) {
            let _ = write!(
                csv,
                "{},{}",
                io::fmt_f64(d.curve.condition.temperature),
                io::fmt_f64(d.curve.condition.field)
            );
            for (c, w) in comps.iter().zip(&d.report.weights) {
                let _ = write!(
                    csv,
                    ",{},{},{},{}",
                    io::fmt_f64(*w),
                    io::fmt_f64(c.mean),
                    io::fmt_f64(c.mean - c.std),
                    io::fmt_f64(c.mean + c.std)
                );
            }
            csv.push('\n');
        }
        files.push(PlotFile {
            name: format!("weights_{}.csv", slug(&rw.regime)),
            contents: csv,
        });
    }
    Ok(files)
}

fn decay_plots(report: &PipelineReport) -> Result<Vec<PlotFile>> {
    Ok(report
        .decays
        .iter()
        .map(|d| {
            let model: &MultiExpModel = &d.report.model;
            let mut csv = String::from("t_s,area,sigma,fit\n");
            for s in &d.curve.samples {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    io::fmt_f64(s.t),
                    io::fmt_f64(s.area),
                    opt(s.sigma),
                    io::fmt_f64(model.eval(s.t))
                );
            }
            PlotFile {
                name: format!("decay_{:03}_{}.csv", d.id, io::condition_stem(&d.curve.condition)),
                contents: csv,
            }
        })
        .collect())
}

/// Log–log plot of the four model curves with the data as points.
fn render_rate_svg(curve: &PredictionCurve, data: &[&RateRow], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let log_x = matches!(curve.sweep, Sweep::Temperature { .. });
    let xs: Vec<f64> = curve.x.iter().copied().chain(data.iter().map(|d| curve.sweep.x_of(&d.condition))).collect();
    let ys: Vec<f64> = curve
        .rates
        .iter()
        .flat_map(|r| [r.total, r.flip_flop, r.tls_direct, r.raman])
        .chain(data.iter().map(|d| d.rate))
        .filter(|y| *y > 0.0)
        .collect();
    let tx = |x: f64| if log_x { x.max(1e-300).log10() } else { x };
    let (x0, x1) = xs.iter().map(|&x| tx(x)).fold((f64::INFINITY, f64::NEG_INFINITY), |a, x| (a.0.min(x), a.1.max(x)));
    let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    let ymin = (ys.iter().copied().fold(f64::INFINITY, f64::min).log10().floor()).max(ymax - 6.0);
    let px = |x: f64| PAD + (tx(x) - x0) / (x1 - x0).max(1e-300) * (W - 2.0 * PAD);
    let py = |y: f64| {
        let ly = y.max(10f64.powf(ymin)).log10();
        H - PAD - (ly - ymin) / (ymax - ymin).max(1e-300) * (H - 2.0 * PAD)
    };
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"20\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    type Series = (&'static str, &'static str, fn(&RateBreakdown) -> f64);
    let series: [Series; 4] = [
        ("total", "black", |r| r.total),
        ("flip-flop", "#1f77b4", |r| r.flip_flop),
        ("tls", "#2ca02c", |r| r.tls_direct),
        ("raman", "#d62728", |r| r.raman),
    ];
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = curve
            .x
            .iter()
            .zip(&curve.rates)
            .filter(|(_, r)| get(r) > 0.0)
            .map(|(x, r)| format!("{:.2},{:.2}", px(*x), py(get(r))))
            .collect();
        let dash = if i == 0 { "" } else { " stroke-dasharray=\"6,4\"" };
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\"{dash} points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>", W - PAD + 5.0, PAD + 15.0 * i as f64 + 10.0);
    }
    for d in data {
        let (x, y) = (px(curve.sweep.x_of(&d.condition)), py(d.rate));
        let _ = writeln!(
            s,
            "<line x1=\"{x:.2}\" x2=\"{x:.2}\" y1=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\"/><circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\"/>",
            py(d.rate + d.sigma),
            py((d.rate - d.sigma).max(d.rate * 1e-3))
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{PAD}\" y=\"{}\">1e{ymin} … 1e{ymax} s⁻¹ vs {}</text>\n</svg>",
        H - 20.0,
        if log_x { "temperature (log)" } else { "field" }
    );
    s
}
