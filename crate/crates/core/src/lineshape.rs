//! Spectral-hole profiles: evaluation, least-squares fitting, Lorentzian vs.
//! Gaussian classification and frequency recentering.
//!
//! A hole is parameterised by its centre, full width at half maximum, depth
//! below the baseline and the baseline itself:
//!
//! ```text
//! Lorentzian:  s(f) = baseline − depth · (Γ/2)² / ((f − c)² + (Γ/2)²)
//! Gaussian:    s(f) = baseline − depth · exp(−4 ln2 · (f − c)² / Γ²)
//! ```
//!
//! Both reach `baseline − depth` at the centre and `baseline − depth/2` at
//! `c ± Γ/2`. The hole area (integral of `baseline − s`) is
//! `(π/2)·depth·Γ` for the Lorentzian and `depth·Γ·sqrt(π / (4 ln2))` for the
//! Gaussian.

use std::f64::consts::{LN_2, PI};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Boundary, Error, Result};
use crate::lsq::{self, Bounds, Problem};
use crate::model::Condition;

pub const MIN_TRACE_POINTS: usize = 16;
/// Conventional read-scan window, Hz offsets.
pub const SCAN_WINDOW: (f64, f64) = (200e6, 600e6);
/// Burn offset the hole is aligned to after recentering.
pub const DEFAULT_CENTER: f64 = 400e6;
/// AICc margin below which a shape verdict is reported as indeterminate.
pub const DECISIVE_AICC_MARGIN: f64 = 2.0;
const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Lorentzian,
    Gaussian,
}

impl ShapeKind {
    pub fn other(self) -> Self {
        match self {
            ShapeKind::Lorentzian => ShapeKind::Gaussian,
            ShapeKind::Gaussian => ShapeKind::Lorentzian,
        }
    }
}

impl std::str::FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lorentzian" | "lorentz" => Ok(ShapeKind::Lorentzian),
            "gaussian" | "gauss" => Ok(ShapeKind::Gaussian),
            other => Err(Error::invalid(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub condition: Condition,
    /// Seconds since the end of the burn pulse.
    pub wait_time: f64,
    /// Accumulated frequency shift applied by recentering, Hz.
    #[serde(default)]
    pub shift_hz: f64,
}

/// A sampled hole profile at one wait time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTrace {
    pub freq: Vec<f64>,
    pub signal: Vec<f64>,
    pub meta: TraceMeta,
}

impl SpectralTrace {
    pub fn new(freq: Vec<f64>, signal: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        let t = Self { freq, signal, meta };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freq.len() != self.signal.len() {
            return Err(Error::invalid(format!(
                "trace has {} frequencies but {} signal values",
                self.freq.len(),
                self.signal.len()
            )));
        }
        if self.freq.len() < MIN_TRACE_POINTS {
            return Err(Error::invalid(format!(
                "trace needs at least {MIN_TRACE_POINTS} samples, got {}",
                self.freq.len()
            )));
        }
        if self.freq.iter().chain(&self.signal).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trace sample"));
        }
        if let Some(i) = self.freq.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "frequency axis not strictly increasing at sample {}",
                i + 1
            )));
        }
        self.meta.condition.validate()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    /// Mirror image about the midpoint of the scan: the sample order is
    /// reversed and the frequency axis reflected so it stays increasing.
    pub fn mirrored(&self) -> Self {
        let n = self.len();
        let pivot = self.freq[0] + self.freq[n - 1];
        Self {
            freq: (0..n).map(|i| pivot - self.freq[n - 1 - i]).collect(),
            signal: self.signal.iter().rev().copied().collect(),
            meta: self.meta,
        }
    }
}

/// Profile value, checked.
pub fn eval_profile(
    shape: ShapeKind,
    center: f64,
    fwhm: f64,
    depth: f64,
    baseline: f64,
    freq: f64,
) -> Result<f64> {
    if !(fwhm > 0.0) {
        return Err(Error::invalid(format!("fwhm must be positive, got {fwhm}")));
    }
    Ok(baseline - depth * unit_profile(shape, freq - center, fwhm))
}

/// Unit-depth hole shape: 1 at zero detuning, 1/2 at ±fwhm/2.
pub fn unit_profile(shape: ShapeKind, detuning: f64, fwhm: f64) -> f64 {
    match shape {
        ShapeKind::Lorentzian => {
            let h2 = 0.25 * fwhm * fwhm;
            h2 / (detuning * detuning + h2)
        }
        ShapeKind::Gaussian => (-4.0 * LN_2 * detuning * detuning / (fwhm * fwhm)).exp(),
    }
}

/// `∫ (baseline − s(f)) df` over the real line, divided by `depth·fwhm`.
pub fn area_factor(shape: ShapeKind) -> f64 {
    match shape {
        ShapeKind::Lorentzian => PI / 2.0,
        ShapeKind::Gaussian => (PI / (4.0 * LN_2)).sqrt(),
    }
}

pub fn hole_area(shape: ShapeKind, depth: f64, fwhm: f64) -> f64 {
    area_factor(shape) * depth * fwhm
}

/// Starting point for a hole fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleInit {
    pub center: f64,
    pub fwhm: f64,
    pub depth: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoleFit {
    pub shape: ShapeKind,
    pub center: f64,
    pub fwhm: f64,
    pub depth: f64,
    pub baseline: f64,
    pub area: f64,
    pub rss: f64,
    pub aicc: f64,
    pub n_points: usize,
    /// Covariance of (center, fwhm, depth, baseline); absent when singular.
    pub param_cov: Option<Vec<Vec<f64>>>,
    pub converged: bool,
    /// Set when the trace carries no hole and the fit has zero depth.
    pub degenerate: bool,
}

impl HoleFit {
    /// Hole depth as a fraction of the baseline absorption, clamped to [0, 1].
    pub fn transfer_efficiency(&self) -> Option<f64> {
        (self.baseline > 0.0).then(|| (self.depth / self.baseline).clamp(0.0, 1.0))
    }

    /// One-sigma uncertainty of the analytic area from the fit covariance.
    pub fn area_sigma(&self) -> Option<f64> {
        let cov = self.param_cov.as_ref()?;
        let k = area_factor(self.shape);
        // ∂area/∂fwhm = k·depth, ∂area/∂depth = k·fwhm
        let g = [0.0, k * self.depth, k * self.fwhm, 0.0];
        let mut var = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                var += g[a] * cov[a][b] * g[b];
            }
        }
        (var >= 0.0 && var.is_finite()).then(|| var.sqrt())
    }

    pub fn init(&self) -> HoleInit {
        HoleInit {
            center: self.center,
            fwhm: self.fwhm,
            depth: self.depth,
            baseline: self.baseline,
        }
    }

    pub fn eval(&self, freq: f64) -> f64 {
        self.baseline - self.depth * unit_profile(self.shape, freq - self.center, self.fwhm)
    }
}

/// Centred moving average with windows truncated at the ends.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Default initialiser: baseline from the median of the outer 10% of
/// samples, centre at the minimum of a 5-point moving average, depth from
/// the lowest sample and width from the half-depth crossings.
pub fn initial_guess(trace: &SpectralTrace) -> HoleInit {
    let n = trace.len();
    let edge = ((n as f64 * 0.05).round() as usize).max(1);
    let mut outer: Vec<f64> = trace.signal[..edge]
        .iter()
        .chain(&trace.signal[n - edge..])
        .copied()
        .collect();
    let baseline = median(&mut outer);

    let smooth = moving_average(&trace.signal, SMOOTHING_WINDOW);
    let ic = argmin(&smooth);
    let center = trace.freq[ic];
    let min = trace.signal.iter().copied().fold(f64::INFINITY, f64::min);
    let depth = (baseline - min).max(0.0);

    let half = baseline - 0.5 * depth;
    let crossing = |range: &mut dyn Iterator<Item = usize>, step: isize| -> Option<f64> {
        for i in range {
            if trace.signal[i] >= half {
                let j = (i as isize - step) as usize;
                let (f0, s0) = (trace.freq[i], trace.signal[i]);
                let (f1, s1) = (trace.freq[j], trace.signal[j]);
                let t = if s0 != s1 { (half - s0) / (s1 - s0) } else { 0.0 };
                return Some(f0 + t * (f1 - f0));
            }
        }
        None
    };
    let left = crossing(&mut (0..ic).rev(), -1);
    let right = crossing(&mut (ic + 1..n), 1);
    let span = trace.freq[n - 1] - trace.freq[0];
    let spacing = span / (n - 1) as f64;
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => 2.0 * (center - l),
        (None, Some(r)) => 2.0 * (r - center),
        (None, None) => span / 4.0,
    };
    HoleInit {
        center,
        fwhm: fwhm.max(spacing),
        depth,
        baseline,
    }
}

struct HoleProblem<'a> {
    shape: ShapeKind,
    u: Vec<f64>,
    y: &'a [f64],
}

impl HoleProblem<'_> {
    fn partials(&self, p: &[f64], u: f64) -> (f64, [f64; 4]) {
        let (c, w, depth, base) = (p[0], p[1], p[2], p[3]);
        let d = u - c;
        match self.shape {
            ShapeKind::Lorentzian => {
                let h = 0.5 * w;
                let h2 = h * h;
                let den = d * d + h2;
                let l = h2 / den;
                let den2 = den * den;
                let dl_dc = 2.0 * d * h2 / den2;
                let dl_dw = h * d * d / den2;
                (base - depth * l, [-depth * dl_dc, -depth * dl_dw, -l, 1.0])
            }
            ShapeKind::Gaussian => {
                let k = 4.0 * LN_2;
                let g = (-k * d * d / (w * w)).exp();
                let dg_dc = g * 2.0 * k * d / (w * w);
                let dg_dw = g * 2.0 * k * d * d / (w * w * w);
                (base - depth * g, [-depth * dg_dc, -depth * dg_dw, -g, 1.0])
            }
        }
    }
}

impl Problem for HoleProblem<'_> {
    fn num_params(&self) -> usize {
        4
    }
    fn num_residuals(&self) -> usize {
        self.u.len()
    }
    fn residuals(&self, p: &[f64], out: &mut [f64]) {
        for (i, (&u, &y)) in self.u.iter().zip(self.y).enumerate() {
            out[i] = self.partials(p, u).0 - y;
        }
    }
    fn jacobian(&self, p: &[f64], jac: &mut DMatrix<f64>) {
        for (i, &u) in self.u.iter().enumerate() {
            let (_, g) = self.partials(p, u);
            for (j, gj) in g.iter().enumerate() {
                jac[(i, j)] = *gj;
            }
        }
    }
}

/// Least-squares fit of one hole shape to a trace.
pub fn fit_hole(trace: &SpectralTrace, shape: ShapeKind, init: Option<&HoleInit>) -> Result<HoleFit> {
    trace.validate()?;
    let n = trace.len();
    let guess = init.copied().unwrap_or_else(|| initial_guess(trace));
    let sum_sq: f64 = trace.signal.iter().map(|y| y * y).sum();

    let (smin, smax) = trace
        .signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if smin == smax || !(guess.depth > 0.0) {
        let mean = trace.signal.iter().sum::<f64>() / n as f64;
        let rss: f64 = trace.signal.iter().map(|y| (y - mean).powi(2)).sum();
        return Ok(HoleFit {
            shape,
            center: guess.center,
            fwhm: guess.fwhm,
            depth: 0.0,
            baseline: mean,
            area: 0.0,
            rss,
            aicc: lsq::aicc(rss.max(lsq::rss_floor(sum_sq)), n, 4),
            n_points: n,
            param_cov: None,
            converged: true,
            degenerate: true,
        });
    }

    // Work on a normalised frequency axis so all four parameters are O(1).
    let f0 = 0.5 * (trace.freq[0] + trace.freq[n - 1]);
    let scale = trace.freq[n - 1] - trace.freq[0];
    let problem = HoleProblem {
        shape,
        u: trace.freq.iter().map(|f| (f - f0) / scale).collect(),
        y: &trace.signal,
    };
    let start = [
        (guess.center - f0) / scale,
        guess.fwhm / scale,
        guess.depth,
        guess.baseline,
    ];
    let bounds = Bounds {
        lower: vec![f64::NEG_INFINITY, 1e-9, 0.0, f64::NEG_INFINITY],
        upper: vec![f64::INFINITY; 4],
    };
    let out = lsq::minimize(&problem, &start, &bounds, &lsq::Options::default())
        .ok_or(Error::NonFinite("hole fit objective"))?;
    if !out.converged() {
        return Err(Error::NoConvergence {
            iterations: out.iterations,
            rss: out.rss,
        });
    }
    let p = &out.params;
    let center = f0 + p[0] * scale;
    let fwhm = p[1] * scale;
    let (depth, baseline) = (p[2], p[3]);
    if fwhm > scale {
        return Err(Error::Unresolved(format!(
            "fitted width {fwhm:e} Hz exceeds the {scale:e} Hz scan window"
        )));
    }

    let dof = n.saturating_sub(4).max(1) as f64;
    let sigma2 = out.rss / dof;
    let units = [scale, scale, 1.0, 1.0];
    let param_cov = lsq::inverse_normal_matrix(&out.jacobian).map(|inv| {
        (0..4)
            .map(|a| (0..4).map(|b| inv[(a, b)] * sigma2 * units[a] * units[b]).collect())
            .collect()
    });

    Ok(HoleFit {
        shape,
        center,
        fwhm,
        depth,
        baseline,
        area: hole_area(shape, depth, fwhm),
        rss: out.rss,
        aicc: lsq::aicc(out.rss.max(lsq::rss_floor(sum_sq)), n, 4),
        n_points: n,
        param_cov,
        converged: true,
        degenerate: depth == 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeVerdict {
    pub shape: ShapeKind,
    /// AICc of the rejected shape minus AICc of the selected one.
    pub delta_aicc: f64,
    pub indeterminate: bool,
    pub lorentzian: HoleFit,
    pub gaussian: HoleFit,
}

impl ShapeVerdict {
    pub fn selected(&self) -> &HoleFit {
        match self.shape {
            ShapeKind::Lorentzian => &self.lorentzian,
            ShapeKind::Gaussian => &self.gaussian,
        }
    }
}

/// Fits both shapes and keeps the one with the lower AICc.
pub fn classify_shape(trace: &SpectralTrace) -> Result<ShapeVerdict> {
    let init = initial_guess(trace);
    let lorentzian = fit_hole(trace, ShapeKind::Lorentzian, Some(&init))?;
    let gaussian = fit_hole(trace, ShapeKind::Gaussian, Some(&init))?;
    let (shape, delta) = if gaussian.aicc < lorentzian.aicc {
        (ShapeKind::Gaussian, lorentzian.aicc - gaussian.aicc)
    } else {
        (ShapeKind::Lorentzian, gaussian.aicc - lorentzian.aicc)
    };
    Ok(ShapeVerdict {
        shape,
        delta_aicc: delta,
        indeterminate: !(delta >= DECISIVE_AICC_MARGIN),
        lorentzian,
        gaussian,
    })
}

/// Shifts the frequency axis so the smoothed minimum sits at `target_center`.
pub fn recenter(trace: &SpectralTrace, target_center: f64) -> Result<SpectralTrace> {
    trace.validate()?;
    let n = trace.len();
    let smooth = moving_average(&trace.signal, SMOOTHING_WINDOW);
    let i = argmin(&smooth);
    let half = SMOOTHING_WINDOW / 2;
    if i < half {
        return Err(Error::MinimumOnBoundary(Boundary::Lower));
    }
    if i + half >= n {
        return Err(Error::MinimumOnBoundary(Boundary::Upper));
    }
    let shift = target_center - trace.freq[i];
    let mut out = trace.clone();
    for f in &mut out.freq {
        *f += shift;
    }
    out.meta.shift_hz += shift;
    Ok(out)
}

/// Drops samples more than `widths` fitted FWHM above the hole centre, where
/// the detector-bandwidth side feature sits.
pub fn mask_side_feature(trace: &SpectralTrace, fit: &HoleFit, widths: f64) -> Result<SpectralTrace> {
    let cutoff = fit.center + widths * fit.fwhm;
    let keep: Vec<usize> = (0..trace.len()).filter(|&i| trace.freq[i] <= cutoff).collect();
    SpectralTrace::new(
        keep.iter().map(|&i| trace.freq[i]).collect(),
        keep.iter().map(|&i| trace.signal[i]).collect(),
        trace.meta,
    )
}
