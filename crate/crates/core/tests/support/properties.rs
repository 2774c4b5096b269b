//! One randomized property per module invariant, 1000 cases each.
//!
//! Every property runs on its own `proptest` runner with a fixed ChaCha seed,
//! so a failure reproduces exactly; the minimal failing input is reported.

use std::cell::RefCell;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rayon::prelude::*;

use holeburn::decay::{
    eval_multiexp, fit_multiexp, select_components, DecayCurve, DecayFitOptions, DecaySample,
    ExpComponent, MultiExpModel,
};
use holeburn::global::{fit_global, objective, GlobalFitConfig, LossSpace, RateDataset, RatePoint};
use holeburn::io;
use holeburn::lineshape::{
    classify_shape, fit_hole, recenter, ShapeKind, SpectralTrace, TraceMeta, DEFAULT_CENTER,
    SCAN_WINDOW,
};
use holeburn::model::{
    breakdown_for, sech_squared, zeeman_argument, ClassId, ClassParams, Condition,
    RelaxationModel, SharedModelParams,
};
use holeburn::pipeline::{self, PipelineConfig, PipelineInput, PlotKind};
use holeburn::rng::CounterRng;
use holeburn::simulate::{
    implied_decay_model, regenerate, simulate_decay, simulate_trace, ExperimentPlan, NoiseSpec,
};

pub const CASES: u32 = 1000;

pub type PropertyOutcome = (String, Result<(), String>, Duration);

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        max_shrink_iters: 256,
        max_global_rejects: 50_000,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn prop<S>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> PropertyOutcome
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let start = Instant::now();
    let result = runner().run(&strategy, test).map_err(|e| e.to_string());
    (name.to_string(), result, start.elapsed())
}

fn fail<E: Display>(e: E) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), TestCaseError> {
    if rel_diff(got, want) <= tol {
        Ok(())
    } else {
        Err(TestCaseError::fail(format!(
            "{what}: {got:e} vs {want:e} (relative difference {:e} > {tol:e})",
            rel_diff(got, want)
        )))
    }
}

// ---------------------------------------------------------------- strategies

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> + Clone {
    (0.0..=1.0f64).prop_map(move |u| (lo.ln() + u * (hi.ln() - lo.ln())).exp())
}

fn temperature() -> impl Strategy<Value = f64> + Clone {
    log_uniform(5e-3, 2.4)
}

fn field() -> impl Strategy<Value = f64> + Clone {
    prop_oneof![1 => Just(0.0), 9 => 0.0..=0.2f64]
}

fn condition() -> impl Strategy<Value = Condition> + Clone {
    (temperature(), field()).prop_map(|(t, b)| Condition::new(t, b).unwrap())
}

fn shared() -> impl Strategy<Value = SharedModelParams> + Clone {
    (
        log_uniform(0.05, 15.0),
        log_uniform(1e8, 1e10),
        log_uniform(1e10, 1e12),
        0.1..3.0f64,
        0.1..3.0f64,
        1.0..5.0f64,
    )
        .prop_map(|(g, g0, gam, l, m, n)| SharedModelParams {
            g_factor: g,
            zero_field_linewidth: g0,
            field_broadening: gam,
            tls_field_exp: l,
            tls_temp_exp: m,
            raman_temp_exp: n,
        })
}

fn class(id: ClassId) -> impl Strategy<Value = ClassParams> + Clone {
    (log_uniform(1e6, 1e10), log_uniform(1e-4, 50.0), log_uniform(1e-4, 1.0))
        .prop_map(move |(ff, tls, r)| ClassParams::new(id, ff, tls, r))
}

/// Shared parameters in the range the fits are exercised on.
fn fit_shared() -> impl Strategy<Value = SharedModelParams> + Clone {
    (0.2..2.0f64, 0.5..2.0f64, 0.1..1.5f64, 2.0..4.0f64).prop_map(|(g, l, m, n)| SharedModelParams {
        g_factor: g,
        zero_field_linewidth: 1.3e9,
        field_broadening: 150e9,
        tls_field_exp: l,
        tls_temp_exp: m,
        raman_temp_exp: n,
    })
}

fn fit_model(max_classes: usize) -> impl Strategy<Value = RelaxationModel> + Clone {
    (
        fit_shared(),
        prop::collection::vec(
            (log_uniform(1e6, 1e9), log_uniform(1e-3, 10.0), log_uniform(1e-3, 1.0)),
            1..=max_classes,
        ),
    )
        .prop_map(|(shared, alphas)| RelaxationModel {
            regime_label: "r".into(),
            shared,
            classes: alphas
                .into_iter()
                .enumerate()
                .map(|(i, (ff, tls, r))| ClassParams::new(ClassId::from_index(i).unwrap(), ff, tls, r))
                .collect(),
        })
}

/// Rate datasets from `model` at `conds` with 5% multiplicative noise.
fn noisy_rates(model: &RelaxationModel, conds: &[Condition], seed: u64) -> Vec<RateDataset> {
    model
        .classes
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let rng = CounterRng::for_stream(seed, ci as u64);
            RateDataset {
                regime: model.regime_label.clone(),
                class_id: c.class_id,
                points: conds
                    .iter()
                    .enumerate()
                    .map(|(i, cond)| {
                        let exact = breakdown_for(&model.shared, c, cond).unwrap().total;
                        let y = exact * (1.0 + 0.05 * rng.normal(i as u64)).max(0.5);
                        RatePoint { condition: *cond, rate: y, sigma: 0.05 * y }
                    })
                    .collect(),
            }
        })
        .collect()
}

fn fit_conditions() -> impl Strategy<Value = Vec<Condition>> + Clone {
    prop::collection::vec((log_uniform(0.01, 2.0), 0.0..=0.2f64), 8..=12)
        .prop_map(|v| v.into_iter().map(|(t, b)| Condition::new(t, b).unwrap()).collect())
}

fn small_fit_config() -> GlobalFitConfig {
    GlobalFitConfig {
        grid_search: false,
        max_iterations: 100,
        ..GlobalFitConfig::default()
    }
}

/// Fisher–Yates shuffle driven by the counter generator.
fn shuffle<T>(items: &mut [T], rng: &CounterRng, offset: u64) {
    for i in (1..items.len()).rev() {
        let j = (rng.uniform(offset + i as u64) * (i + 1) as f64) as usize;
        items.swap(i, j.min(i));
    }
}

#[derive(Debug, Clone)]
struct HoleCase {
    shape: ShapeKind,
    center: f64,
    fwhm: f64,
    depth: f64,
    baseline: f64,
    points: usize,
}

fn hole_case() -> impl Strategy<Value = HoleCase> + Clone {
    (
        any::<bool>(),
        300e6..500e6f64,
        log_uniform(5e6, 4e7),
        0.05..1.0f64,
        0.5..2.0f64,
        256usize..=1024,
    )
        .prop_map(|(lor, center, fwhm, depth, baseline, points)| HoleCase {
            shape: if lor { ShapeKind::Lorentzian } else { ShapeKind::Gaussian },
            center,
            fwhm,
            depth,
            baseline,
            points,
        })
}

fn render(h: &HoleCase, noise: &NoiseSpec) -> Result<SpectralTrace, TestCaseError> {
    simulate_trace(h.shape, h.center, h.fwhm, h.depth, h.baseline, SCAN_WINDOW, h.points, noise, 0.0)
        .map_err(fail)
}

/// Multi-exponential model with adjacent lifetime ratios in [10, 100].
fn decay_model() -> impl Strategy<Value = MultiExpModel> + Clone {
    (
        log_uniform(0.1, 100.0),
        prop::collection::vec((log_uniform(10.0, 100.0), 0.05..1.0f64), 1..=3),
    )
        .prop_map(|(tau0, parts)| {
            let mut tau = tau0;
            let components = parts
                .iter()
                .enumerate()
                .map(|(i, &(ratio, amp))| {
                    if i > 0 {
                        tau *= ratio;
                    }
                    ExpComponent { amplitude: amp, lifetime: tau }
                })
                .collect();
            MultiExpModel::new(components, 0.0)
        })
}

/// `count` log-spaced samples from 0.01·τ_min to 10·τ_max, with relative
/// noise `rel` (σ recorded when `rel > 0`).
fn sample_curve(model: &MultiExpModel, count: usize, rel: f64, seed: u64) -> DecayCurve {
    let taus: Vec<f64> = model.components.iter().map(|c| c.lifetime).collect();
    let lo = 0.01 * taus[0];
    let hi = 10.0 * taus[taus.len() - 1];
    let rng = CounterRng::for_stream(seed, 0);
    let samples = (0..count)
        .map(|i| {
            let t = lo * (hi / lo).powf(i as f64 / (count - 1) as f64);
            let clean = eval_multiexp(model, t);
            if rel > 0.0 {
                let s = rel * clean;
                DecaySample { t, area: clean + s * rng.normal(i as u64), sigma: Some(s) }
            } else {
                DecaySample { t, area: clean, sigma: None }
            }
        })
        .collect();
    DecayCurve::new(Condition::new(1.0, 0.0).unwrap(), samples).unwrap()
}

#[derive(Debug, Clone)]
struct SimCase {
    model: RelaxationModel,
    plan: ExperimentPlan,
    noise: NoiseSpec,
}

fn sim_case(max_conditions: usize) -> impl Strategy<Value = SimCase> + Clone {
    (
        fit_model(3),
        prop::collection::vec(condition(), 1..=max_conditions),
        log_uniform(1e2, 1e5),
        log_uniform(1e-3, 1e3),
        prop::collection::vec(0.05..1.0f64, 3),
        (0.0..0.05f64, 0.0..1e-3f64, any::<u64>()),
    )
        .prop_map(|(model, conds, horizon, area, raw, (rel, abs, seed))| {
            let k = model.classes.len();
            let total: f64 = raw[..k].iter().sum();
            let weights = raw[..k].iter().map(|w| w / total).collect();
            SimCase {
                model,
                plan: ExperimentPlan::new(conds, horizon, area, weights),
                noise: NoiseSpec { sigma_rel: rel, sigma_abs: abs, seed },
            }
        })
}

/// Small decay-curve input for whole-pipeline properties: one class, four
/// or five conditions, 1% relative area noise.
fn pipeline_input() -> impl Strategy<Value = Vec<DecayCurve>> + Clone {
    (
        fit_model(1),
        prop::collection::vec((log_uniform(0.05, 2.0), 0.0..=0.2f64), 4..=5),
        any::<u64>(),
    )
        .prop_map(|(model, raw, seed)| {
            let conds: Vec<Condition> = raw.into_iter().map(|(t, b)| Condition::new(t, b).unwrap()).collect();
            let rate = conds
                .iter()
                .map(|c| breakdown_for(&model.shared, &model.classes[0], c).unwrap().total)
                .fold(f64::INFINITY, f64::min);
            let plan = ExperimentPlan {
                reads_per_decade: 6,
                ..ExperimentPlan::new(conds, 20.0 / rate, 1.0, vec![1.0])
            };
            simulate_decay(&model, &plan, &NoiseSpec::relative(0.01, seed))
                .unwrap()
                .curves
        })
}

#[allow(clippy::field_reassign_with_default)]
fn pipeline_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.max_components = 2;
    c.global.grid_search = false;
    c.global.max_iterations = 100;
    c.sweep_points = 21;
    c
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

// ---------------------------------------------------------------- model-core

fn model_additivity() -> PropertyOutcome {
    prop("model-core: total is the sum of the three terms", (shared(), class(ClassId::A), condition()), |(s, c, cond)| {
        let r = breakdown_for(&s, &c, &cond).map_err(fail)?;
        prop_assert_eq!(r.total, r.flip_flop + r.tls_direct + r.raman);
        let other_order = r.raman + r.tls_direct + r.flip_flop;
        prop_assert!(rel_diff(r.total, other_order) <= 4.0 * f64::EPSILON);
        Ok(())
    })
}

fn model_sech_bounds() -> PropertyOutcome {
    prop("model-core: sech² lies in (0, 1] and is 1 at B = 0", (log_uniform(0.05, 15.0), condition()), |(g, cond)| {
        let x = zeeman_argument(g, &cond);
        let v = sech_squared(x);
        prop_assert!((0.0..=1.0).contains(&v), "sech²({x}) = {v}");
        // 4·e^{−2x} underflows past x ≈ 354; below that the value is positive.
        if x < 354.0 {
            prop_assert!(v > 0.0, "sech²({x}) = {v}");
        }
        let zero = Condition::new(cond.temperature, 0.0).unwrap();
        prop_assert_eq!(sech_squared(zeeman_argument(g, &zero)), 1.0);
        Ok(())
    })
}

fn model_flip_flop_monotone() -> PropertyOutcome {
    let strategy = (shared(), class(ClassId::A), temperature(), 0.0..0.2f64, 1e-4..0.1f64, 1e-3..1.0f64);
    prop("model-core: flip-flop falls with B, rises with T", strategy, |(s, c, t, b, db, dt)| {
        let ff = |t: f64, b: f64| breakdown_for(&s, &c, &Condition::new(t, b).unwrap()).unwrap().flip_flop;
        let x_hi = zeeman_argument(s.g_factor, &Condition::new(t, b + db).unwrap());
        prop_assume!(x_hi < 300.0);
        prop_assert!(ff(t, b + db) < ff(t, b), "B {b} → {}: {} vs {}", b + db, ff(t, b), ff(t, b + db));
        // Increasing in T at B > 0; the change must exceed rounding, which
        // needs x ≳ 1e-4 (sech² ≈ 1 − x²).
        let bb = b.max(1e-4);
        let x = zeeman_argument(s.g_factor, &Condition::new(t, bb).unwrap());
        prop_assume!(x > 1e-4);
        prop_assert!(ff(t * (1.0 + dt), bb) > ff(t, bb), "T {t} → {}", t * (1.0 + dt));
        Ok(())
    })
}

fn model_tls_raman_monotone() -> PropertyOutcome {
    let strategy = (shared(), class(ClassId::A), temperature(), 0.0..0.2f64, 1e-4..0.1f64, 1e-3..1.0f64);
    prop("model-core: TLS rises with B and T, Raman with T", strategy, |(s, c, t, b, db, dt)| {
        let at = |t: f64, b: f64| breakdown_for(&s, &c, &Condition::new(t, b).unwrap()).unwrap();
        prop_assert!(at(t, b + db).tls_direct > at(t, b).tls_direct);
        let bb = b.max(1e-4);
        prop_assert!(at(t * (1.0 + dt), bb).tls_direct > at(t, bb).tls_direct);
        prop_assert!(at(t * (1.0 + dt), b).raman > at(t, b).raman);
        Ok(())
    })
}

fn model_linearity() -> PropertyOutcome {
    let strategy = (shared(), class(ClassId::A), class(ClassId::A), condition());
    prop("model-core: linear in every strength", strategy, |(s, a, b, cond)| {
        let r = |c: &ClassParams| breakdown_for(&s, c, &cond).unwrap();
        let (ra, rb) = (r(&a), r(&b));
        let sum = ClassParams::new(ClassId::A, a.alpha_ff + b.alpha_ff, a.alpha_tls + b.alpha_tls, a.alpha_raman + b.alpha_raman);
        let rs = r(&sum);
        for (name, got, want) in [
            ("flip-flop", rs.flip_flop, ra.flip_flop + rb.flip_flop),
            ("tls", rs.tls_direct, ra.tls_direct + rb.tls_direct),
            ("raman", rs.raman, ra.raman + rb.raman),
        ] {
            close(name, got, want, 8.0 * f64::EPSILON)?;
        }
        let doubled = ClassParams::new(ClassId::A, 2.0 * a.alpha_ff, 2.0 * a.alpha_tls, 2.0 * a.alpha_raman);
        let rd = r(&doubled);
        prop_assert_eq!(rd.flip_flop, 2.0 * ra.flip_flop);
        prop_assert_eq!(rd.tls_direct, 2.0 * ra.tls_direct);
        prop_assert_eq!(rd.raman, 2.0 * ra.raman);
        Ok(())
    })
}

fn model_lifetime_reciprocal() -> PropertyOutcome {
    prop("model-core: lifetime × total = 1", (shared(), class(ClassId::A), condition()), |(s, c, cond)| {
        let r = breakdown_for(&s, &c, &cond).map_err(fail)?;
        prop_assert!((r.lifetime * r.total - 1.0).abs() <= 1e-14, "{}", r.lifetime * r.total);
        Ok(())
    })
}

// ---------------------------------------------------------------- lineshape

fn lineshape_area_quadrature() -> PropertyOutcome {
    prop("lineshape: area formula matches quadrature of the fit", (hole_case(), 0.0..0.05f64, any::<u64>()), |(h, snr_inv, seed)| {
        let trace = render(&h, &NoiseSpec::absolute(snr_inv * h.depth, seed))?;
        let fit = fit_hole(&trace, h.shape, None).map_err(fail)?;
        // Composite Simpson over ±1000 FWHM at FWHM/50 spacing.
        let half = 1000.0 * fit.fwhm;
        let n = 100_000usize;
        let step = 2.0 * half / n as f64;
        let g = |k: usize| fit.baseline - fit.eval(fit.center - half + k as f64 * step);
        let mut acc = g(0) + g(n);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * g(k);
        }
        close("area", fit.area, acc * step / 3.0, 1e-3)
    })
}

fn lineshape_noiseless_recovery() -> PropertyOutcome {
    prop("lineshape: noiseless fit recovers all parameters", hole_case(), |h| {
        let trace = render(&h, &NoiseSpec::none())?;
        let fit = fit_hole(&trace, h.shape, None).map_err(fail)?;
        close("center", fit.center, h.center, 1e-6)?;
        close("fwhm", fit.fwhm, h.fwhm, 1e-6)?;
        close("depth", fit.depth, h.depth, 1e-6)?;
        close("baseline", fit.baseline, h.baseline, 1e-6)
    })
}

fn lineshape_recenter_preserves_fit() -> PropertyOutcome {
    prop("lineshape: recenter preserves fitted area and width", (hole_case(), 0.0..0.05f64, any::<u64>()), |(h, snr_inv, seed)| {
        let trace = render(&h, &NoiseSpec::absolute(snr_inv * h.depth, seed))?;
        let before = fit_hole(&trace, h.shape, None).map_err(fail)?;
        let moved = recenter(&trace, DEFAULT_CENTER).map_err(fail)?;
        let after = fit_hole(&moved, h.shape, None).map_err(fail)?;
        close("area", after.area, before.area, 1e-9)?;
        close("fwhm", after.fwhm, before.fwhm, 1e-9)
    })
}

fn lineshape_mirror_stable() -> PropertyOutcome {
    prop("lineshape: shape verdict survives reversing the scan", (hole_case(), 0.0..0.1f64, any::<u64>()), |(h, snr_inv, seed)| {
        let trace = render(&h, &NoiseSpec::absolute(snr_inv * h.depth, seed))?;
        let v = classify_shape(&trace).map_err(fail)?;
        let m = classify_shape(&trace.mirrored()).map_err(fail)?;
        prop_assert_eq!(v.shape, m.shape, "Δaicc {} vs {}", v.delta_aicc, m.delta_aicc);
        Ok(())
    })
}

fn lineshape_true_shape_wins() -> PropertyOutcome {
    prop("lineshape: true shape has the lower AICc on clean data", hole_case(), |h| {
        let trace = render(&h, &NoiseSpec::none())?;
        let v = classify_shape(&trace).map_err(fail)?;
        let (truth, wrong) = match h.shape {
            ShapeKind::Lorentzian => (&v.lorentzian, &v.gaussian),
            ShapeKind::Gaussian => (&v.gaussian, &v.lorentzian),
        };
        prop_assert!(truth.aicc <= wrong.aicc, "true {} vs wrong {}", truth.aicc, wrong.aicc);
        Ok(())
    })
}

// ---------------------------------------------------------------- decay-fit

fn decay_rss_nested() -> PropertyOutcome {
    prop("decay-fit: RSS never grows with more components", (decay_model(), 40usize..=80, any::<u64>()), |(m, count, seed)| {
        let curve = sample_curve(&m, count, 0.01, seed);
        let sel = select_components(&curve, 3, &DecayFitOptions::default()).map_err(fail)?;
        let rss: Vec<f64> = sel
            .reports
            .iter()
            .enumerate()
            .map(|(i, r)| r.as_ref().map(|r| r.rss).ok_or_else(|| fail(format!("n={} fit failed", i + 1))))
            .collect::<Result<_, _>>()?;
        for w in rss.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "rss {:?}", rss);
        }
        Ok(())
    })
}

fn decay_scale_invariance() -> PropertyOutcome {
    let strategy = (decay_model(), 40usize..=80, any::<bool>(), log_uniform(1e-3, 1e3), any::<u64>());
    prop("decay-fit: scaling the areas scales only the amplitudes", strategy, |(m, count, weighted, c, seed)| {
        let curve = sample_curve(&m, count, if weighted { 0.01 } else { 0.0 }, seed);
        let mut scaled = curve.clone();
        for s in &mut scaled.samples {
            s.area *= c;
            s.sigma = s.sigma.map(|v| v * c);
        }
        let n = m.components.len();
        let a = fit_multiexp(&curve, n, &DecayFitOptions::default()).map_err(fail)?;
        let b = fit_multiexp(&scaled, n, &DecayFitOptions::default()).map_err(fail)?;
        for k in 0..n {
            close("weight", b.weights[k], a.weights[k], 1e-9)?;
            close("lifetime", b.model.components[k].lifetime, a.model.components[k].lifetime, 1e-9)?;
            close("amplitude", b.model.components[k].amplitude, c * a.model.components[k].amplitude, 1e-9)?;
        }
        Ok(())
    })
}

fn decay_baseline_invariance() -> PropertyOutcome {
    prop("decay-fit: a constant offset leaves free-baseline lifetimes unchanged", (decay_model(), 40usize..=80, -0.5..2.0f64), |(m, count, offset)| {
        let curve = sample_curve(&m, count, 0.0, 0);
        let mut shifted = curve.clone();
        for s in &mut shifted.samples {
            s.area += offset;
        }
        let opts = DecayFitOptions { free_baseline: true, ..Default::default() };
        let n = m.components.len();
        let a = fit_multiexp(&curve, n, &opts).map_err(fail)?;
        let b = fit_multiexp(&shifted, n, &opts).map_err(fail)?;
        for k in 0..n {
            close("lifetime", b.model.components[k].lifetime, a.model.components[k].lifetime, 1e-6)?;
        }
        close("baseline shift", b.model.baseline - a.model.baseline + 1.0, offset + 1.0, 1e-6)
    })
}

fn decay_monotone() -> PropertyOutcome {
    prop("decay-fit: positive-amplitude decays fall monotonically", (decay_model(), 0.0..1.0f64, log_uniform(1e-3, 10.0)), |(m, u, dt)| {
        let tmax = 10.0 * m.components.last().unwrap().lifetime;
        let t1 = u * tmax;
        let t2 = t1 + dt * m.components[0].lifetime;
        let (a1, a2) = (eval_multiexp(&m, t1), eval_multiexp(&m, t2));
        prop_assert!(a2 <= a1);
        if a2 > 1e-290 {
            prop_assert!(a2 < a1, "t {t1} → {t2}: {a1} vs {a2}");
        }
        Ok(())
    })
}

fn decay_round_trip() -> PropertyOutcome {
    prop("decay-fit: noiseless round trip to 1e-4", (decay_model(), 40usize..=80), |(m, count)| {
        let curve = sample_curve(&m, count, 0.0, 0);
        let fit = fit_multiexp(&curve, m.components.len(), &DecayFitOptions::default()).map_err(fail)?;
        for (got, want) in fit.model.components.iter().zip(&m.components) {
            close("amplitude", got.amplitude, want.amplitude, 1e-4)?;
            close("lifetime", got.lifetime, want.lifetime, 1e-4)?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- global-fit

fn global_reorder_invariance() -> PropertyOutcome {
    prop("global-fit: objective ignores dataset and point order", (fit_model(3), fit_conditions(), any::<u64>()), |(m, conds, seed)| {
        let ds = noisy_rates(&m, &conds, seed);
        let rng = CounterRng::for_stream(seed, 99);
        let mut shuffled = ds.clone();
        shuffle(&mut shuffled, &rng, 0);
        for (k, d) in shuffled.iter_mut().enumerate() {
            shuffle(&mut d.points, &rng, 1000 * (k as u64 + 1));
        }
        for loss in [LossSpace::LogRate, LossSpace::LinearRate] {
            let a = objective(&ds, std::slice::from_ref(&m), loss).map_err(fail)?;
            let b = objective(&shuffled, std::slice::from_ref(&m), loss).map_err(fail)?;
            close("objective", b, a, 1e-12)?;
        }
        Ok(())
    })
}

fn global_linear_scaling() -> PropertyOutcome {
    let strategy = (fit_model(3), fit_conditions(), any::<u64>(), log_uniform(1e-3, 1e3), 0usize..3);
    prop("global-fit: linear loss is invariant to rescaling a dataset", strategy, |(m, conds, seed, c, pick)| {
        let ds = noisy_rates(&m, &conds, seed);
        let k = pick % m.classes.len();
        let mut ds2 = ds.clone();
        for p in &mut ds2[k].points {
            p.rate *= c;
            p.sigma *= c;
        }
        let mut m2 = m.clone();
        let cl = &mut m2.classes[k];
        cl.alpha_ff *= c;
        cl.alpha_tls *= c;
        cl.alpha_raman *= c;
        let a = objective(&ds, std::slice::from_ref(&m), LossSpace::LinearRate).map_err(fail)?;
        let b = objective(&ds2, std::slice::from_ref(&m2), LossSpace::LinearRate).map_err(fail)?;
        close("objective", b, a, 1e-10)
    })
}

fn perturbed_init(m: &RelaxationModel, u: &[f64]) -> RelaxationModel {
    let mut init = m.clone();
    init.shared.g_factor *= 0.8 + 0.4 * u[0];
    init.shared.tls_field_exp *= 0.8 + 0.4 * u[1];
    init.shared.tls_temp_exp *= 0.8 + 0.4 * u[2];
    init.shared.raman_temp_exp *= 0.8 + 0.4 * u[3];
    for (i, c) in init.classes.iter_mut().enumerate() {
        c.alpha_ff *= 0.5 + u[4 + i];
        c.alpha_tls *= 0.5 + u[5 + i];
        c.alpha_raman *= 0.5 + u[6 + i];
    }
    init
}

fn global_history_monotone() -> PropertyOutcome {
    let strategy = (fit_model(2), fit_conditions(), any::<u64>(), prop::collection::vec(0.0..1.0f64, 8));
    prop("global-fit: accepted objective values never increase", strategy, |(m, conds, seed, u)| {
        let ds = noisy_rates(&m, &conds, seed);
        let init = perturbed_init(&m, &u);
        let r = fit_global(&ds, &small_fit_config(), &[init]).map_err(fail)?;
        for w in r.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0], "history {:?}", r.objective_history);
        }
        Ok(())
    })
}

fn global_all_fixed() -> PropertyOutcome {
    let strategy = (fit_model(3), fit_conditions(), any::<u64>(), prop::collection::vec(0.0..1.0f64, 10));
    prop("global-fit: fixing everything returns the initial model", strategy, |(m, conds, seed, u)| {
        let ds = noisy_rates(&m, &conds, seed);
        let init = perturbed_init(&m, &u);
        let config = GlobalFitConfig { fixed: vec!["*".into()], ..small_fit_config() };
        let r = fit_global(&ds, &config, std::slice::from_ref(&init)).map_err(fail)?;
        prop_assert_eq!(&r.models[0], &init);
        Ok(())
    })
}

fn global_permutation_equivariance() -> PropertyOutcome {
    let strategy = (fit_model(3), fit_conditions(), any::<u64>(), prop::collection::vec(0.0..1.0f64, 10), any::<u64>());
    prop("global-fit: relabelling classes permutes the result", strategy, |(m, conds, seed, u, perm_seed)| {
        prop_assume!(m.classes.len() >= 2);
        let ds = noisy_rates(&m, &conds, seed);
        let init = perturbed_init(&m, &u);
        let k = m.classes.len();
        let mut perm: Vec<usize> = (0..k).collect();
        shuffle(&mut perm, &CounterRng::new(perm_seed), 0);
        let relabel = |id: ClassId| ClassId::from_index(perm[id.index()]).unwrap();
        let ds2: Vec<RateDataset> = ds
            .iter()
            .map(|d| RateDataset { class_id: relabel(d.class_id), ..d.clone() })
            .collect();
        let mut init2 = init.clone();
        for c in &mut init2.classes {
            c.class_id = relabel(c.class_id);
        }
        let a = fit_global(&ds, &small_fit_config(), &[init]).map_err(fail)?;
        let b = fit_global(&ds2, &small_fit_config(), &[init2]).map_err(fail)?;
        let (ma, mb) = (&a.models[0], &b.models[0]);
        for (x, y) in [
            (ma.shared.g_factor, mb.shared.g_factor),
            (ma.shared.tls_field_exp, mb.shared.tls_field_exp),
            (ma.shared.tls_temp_exp, mb.shared.tls_temp_exp),
            (ma.shared.raman_temp_exp, mb.shared.raman_temp_exp),
        ] {
            close("shared parameter", y, x, 1e-8)?;
        }
        for c in &ma.classes {
            let d = mb.class(relabel(c.class_id)).ok_or_else(|| fail("relabelled class missing"))?;
            for (x, y) in [(c.alpha_ff, d.alpha_ff), (c.alpha_tls, d.alpha_tls), (c.alpha_raman, d.alpha_raman)] {
                prop_assert!(rel_diff(x, y) <= 1e-8, "{:?} vs {:?}", c, d);
            }
        }
        close("objective", b.objective, a.objective, 1e-10)
    })
}

// ---------------------------------------------------------------- simulator

fn simulator_determinism() -> PropertyOutcome {
    prop("simulator: identical inputs give identical output", sim_case(3), |case| {
        let a = simulate_decay(&case.model, &case.plan, &case.noise).map_err(fail)?;
        let b = simulate_decay(&case.model, &case.plan, &case.noise).map_err(fail)?;
        let ja = serde_json::to_string(&a).map_err(fail)?;
        prop_assert_eq!(&ja, &serde_json::to_string(&b).map_err(fail)?);
        let c = regenerate(&a.provenance).map_err(fail)?;
        prop_assert_eq!(&ja, &serde_json::to_string(&c).map_err(fail)?);
        Ok(())
    })
}

fn simulator_limits() -> PropertyOutcome {
    prop("simulator: area → initial as t → 0 and → 0 as t → ∞", sim_case(3), |case| {
        let clean = simulate_decay(&case.model, &case.plan, &NoiseSpec::none()).map_err(fail)?;
        for (curve, cond) in clean.curves.iter().zip(&case.plan.conditions) {
            let m = implied_decay_model(&case.model, &case.plan, cond).map_err(fail)?;
            let tau_min = m.components.iter().map(|c| c.lifetime).fold(f64::INFINITY, f64::min);
            let tau_max = m.components.iter().map(|c| c.lifetime).fold(0.0, f64::max);
            close("area(0⁺)", m.eval(1e-9 * tau_min), case.plan.initial_area, 1e-8)?;
            prop_assert!(m.eval(1e3 * tau_max) <= 1e-12 * case.plan.initial_area);
            for s in &curve.samples {
                close("sample", s.area, m.eval(s.t), 1e-12)?;
            }
        }
        Ok(())
    })
}

fn simulator_single_class() -> PropertyOutcome {
    prop("simulator: weights (1, 0, 0) give one exponential", sim_case(3), |case| {
        let k = case.model.classes.len();
        let mut weights = vec![0.0; k];
        weights[0] = 1.0;
        let plan = ExperimentPlan { class_weights: weights, ..case.plan.clone() };
        let ds = simulate_decay(&case.model, &plan, &NoiseSpec::none()).map_err(fail)?;
        for (curve, cond) in ds.curves.iter().zip(&plan.conditions) {
            let rate = breakdown_for(&case.model.shared, &case.model.classes[0], cond).unwrap().total;
            for s in &curve.samples {
                let want = plan.initial_area * (-s.t * rate).exp();
                prop_assert!((s.area - want).abs() <= 1e-13 * plan.initial_area, "t {}: {} vs {}", s.t, s.area, want);
            }
        }
        Ok(())
    })
}

fn simulator_noise_statistics() -> PropertyOutcome {
    let start = Instant::now();
    let acc = RefCell::new((0usize, 0.0f64, 0.0f64));
    let strategy = (sim_case(1), any::<u64>(), 1e-3..0.05f64, 0.0..1e-3f64);
    let (name, result, _) = prop("simulator: seed changes only the noise, with the set σ", strategy, |(case, other_seed, rel, abs)| {
        let noise = NoiseSpec { sigma_rel: rel, sigma_abs: abs, seed: case.noise.seed };
        let clean = simulate_decay(&case.model, &case.plan, &NoiseSpec::none()).map_err(fail)?;
        let noisy = simulate_decay(&case.model, &case.plan, &noise).map_err(fail)?;
        prop_assume!(other_seed != noise.seed);
        let other = simulate_decay(&case.model, &case.plan, &NoiseSpec { seed: other_seed, ..noise }).map_err(fail)?;
        let (c, n, o) = (&clean.curves[0].samples, &noisy.curves[0].samples, &other.curves[0].samples);
        prop_assert_eq!(c.len(), n.len());
        let mut differs = false;
        let mut a = acc.borrow_mut();
        for ((c, n), o) in c.iter().zip(n).zip(o) {
            prop_assert_eq!(c.t, n.t);
            prop_assert_eq!(c.t, o.t);
            differs |= n.area != o.area;
            let sigma = rel * c.area.abs() + abs;
            let z = (n.area - c.area) / sigma;
            a.0 += 1;
            a.1 += z;
            a.2 += z * z;
        }
        prop_assert!(differs, "a different seed left the noise unchanged");
        Ok(())
    });
    let result = result.and_then(|()| {
        let (n, s, ss) = *acc.borrow();
        let nf = n as f64;
        let mean = s / nf;
        let var = ss / nf - mean * mean;
        if mean.abs() > 5.0 / nf.sqrt() || (var - 1.0).abs() > 5.0 * (2.0 / nf).sqrt() {
            Err(format!("standardised noise over {n} samples: mean {mean:.4}, variance {var:.4}"))
        } else {
            Ok(())
        }
    });
    (name, result, start.elapsed())
}

// ---------------------------------------------------------------- io-cli

fn io_pipeline_determinism() -> PropertyOutcome {
    prop("io-cli: pipeline report is byte-identical across runs", pipeline_input(), |curves| {
        let config = pipeline_config();
        let a = pipeline::run_pipeline(PipelineInput::Decays(curves.clone()), &config).map_err(fail)?;
        let b = pipeline::run_pipeline(PipelineInput::Decays(curves), &config).map_err(fail)?;
        prop_assert_eq!(a.to_json().map_err(fail)?, b.to_json().map_err(fail)?);
        Ok(())
    })
}

fn finite_f64() -> impl Strategy<Value = f64> + Clone {
    prop_oneof![
        -1e300..1e300f64,
        -1.0..1.0f64,
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

fn io_csv_round_trip() -> PropertyOutcome {
    let trace = (
        prop::collection::vec((1e-3..1e9f64, finite_f64()), 16..64),
        condition(),
        0.0..1e5f64,
        finite_f64(),
    );
    let decay = (prop::collection::vec((1e-3..1e3f64, finite_f64(), prop::option::of(1e-9..1e3f64)), 4..40), condition());
    let rates = prop::collection::vec(
        (condition(), log_uniform(1e-8, 1e3), log_uniform(1e-10, 1e2)),
        1..20,
    );
    let strategy = (trace, decay, rates, fit_model(3));
    prop("io-cli: CSV and JSON round trips are exact", strategy, |((tr, tc, tw, shift), (dc, dcond), rp, model)| {
        let dir = tempfile::tempdir().map_err(fail)?;
        // Trace: cumulative positive steps give a strictly increasing axis.
        let mut f = 0.0;
        let (freq, signal): (Vec<f64>, Vec<f64>) = tr
            .iter()
            .map(|&(step, y)| {
                f += step;
                (f, y)
            })
            .unzip();
        let trace = SpectralTrace::new(freq, signal, TraceMeta { condition: tc, wait_time: tw, shift_hz: shift }).map_err(fail)?;
        let p = dir.path().join("trace.csv");
        io::write_trace(&p, &trace).map_err(fail)?;
        prop_assert_eq!(&io::read_trace(&p).map_err(fail)?, &trace);

        let mut t = 0.0;
        let samples = dc
            .iter()
            .map(|&(step, area, sigma)| {
                t += step;
                DecaySample { t, area, sigma }
            })
            .collect();
        let curve = DecayCurve::new(dcond, samples).map_err(fail)?;
        let p = dir.path().join("decay.csv");
        io::write_decay(&p, &curve).map_err(fail)?;
        prop_assert_eq!(&io::read_decay(&p).map_err(fail)?, &curve);

        let ds = vec![RateDataset {
            regime: "low-temperature".into(),
            class_id: ClassId::B,
            points: rp.iter().map(|&(condition, rate, sigma)| RatePoint { condition, rate, sigma }).collect(),
        }];
        let text = io::rates_csv_string(&ds);
        prop_assert_eq!(&io::parse_rates_csv(Path::new("rates.csv"), &text).map_err(fail)?, &ds);

        let p = dir.path().join("model.json");
        io::write_models(&p, std::slice::from_ref(&model)).map_err(fail)?;
        prop_assert_eq!(&io::read_models(&p).map_err(fail)?, &vec![model]);
        Ok(())
    })
}

fn io_manifest_complete() -> PropertyOutcome {
    prop("io-cli: the manifest lists every written file", (pipeline_input(), any::<bool>()), |(curves, svg)| {
        let report = pipeline::run_pipeline(PipelineInput::Decays(curves), &pipeline_config()).map_err(fail)?;
        let dir = tempfile::tempdir().map_err(fail)?;
        let mut manifest = io::RunManifest::new("pipeline", Vec::new(), &serde_json::json!({}));
        manifest.record(pipeline::persist_report(&report, dir.path()).map_err(fail)?);
        for kind in [PlotKind::Rates, PlotKind::Weights, PlotKind::Decays] {
            let plots = dir.path().join("plots");
            if let Ok(files) = pipeline::emit_plot_data(&report, kind, &plots, svg) {
                manifest.record(files);
            }
        }
        manifest.write(&dir.path().join("manifest.json")).map_err(fail)?;
        let listed: Vec<PathBuf> = manifest.outputs.clone();
        for file in files_under(dir.path()) {
            prop_assert!(listed.contains(&file), "{} missing from the manifest", file.display());
        }
        Ok(())
    })
}

macro_rules! registry {
    ($($f:ident),* $(,)?) => {
        const PROPERTIES: &[(&str, fn() -> PropertyOutcome)] = &[$((stringify!($f), $f)),*];
    };
}

registry![
    model_additivity,
    model_sech_bounds,
    model_flip_flop_monotone,
    model_tls_raman_monotone,
    model_linearity,
    model_lifetime_reciprocal,
    lineshape_area_quadrature,
    lineshape_noiseless_recovery,
    lineshape_recenter_preserves_fit,
    lineshape_mirror_stable,
    lineshape_true_shape_wins,
    decay_rss_nested,
    decay_scale_invariance,
    decay_baseline_invariance,
    decay_monotone,
    decay_round_trip,
    global_reorder_invariance,
    global_linear_scaling,
    global_history_monotone,
    global_all_fixed,
    global_permutation_equivariance,
    simulator_determinism,
    simulator_limits,
    simulator_single_class,
    simulator_noise_statistics,
    io_pipeline_determinism,
    io_csv_round_trip,
    io_manifest_complete,
];

/// Runs every property in parallel and reports them in a fixed order.
/// `HOLEBURN_PROPERTY_FILTER` (a substring of the function name) restricts
/// the run when diagnosing a single property.
pub fn run_all() -> Vec<PropertyOutcome> {
    let filter = std::env::var("HOLEBURN_PROPERTY_FILTER").unwrap_or_default();
    PROPERTIES
        .par_iter()
        .filter(|(key, _)| key.contains(filter.as_str()))
        .map(|(_, f)| f())
        .collect()
}

pub fn count() -> usize {
    PROPERTIES.len()
}
