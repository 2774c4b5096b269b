//! Three-mechanism spin-relaxation rate model.
//!
//! The decay rate of ion class `i` at temperature `T` and field `B` is
//!
//! ```text
//! 1/T_i = α_ff / (Γ⁰ + γB) · sech²(g μ_B B / 2kT)   flip-flop
//!       + α_TLS · B^l · T^m                          direct coupling to two-level systems
//!       + α_R · T^n                                  Raman-type
//! ```
//!
//! The constants and exponents `(g, Γ⁰, γ, l, m, n)` are shared between all
//! classes; the three strengths `α` are per class. All quantities are SI:
//! kelvin, tesla, hertz, seconds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CODATA 2018 Bohr magneton, J/T.
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;
/// Exact SI Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Argument above which `sech²(x)` switches to `4·exp(-2x)`.
const SECH_LARGE_ARG: f64 = 350.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub bohr_magneton: f64,
    pub boltzmann: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            bohr_magneton: BOHR_MAGNETON,
            boltzmann: BOLTZMANN,
        }
    }
}

/// A (temperature, field) measurement condition in kelvin and tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    #[serde(rename = "temperature_K")]
    pub temperature: f64,
    #[serde(rename = "field_T")]
    pub field: f64,
}

impl Condition {
    pub fn new(temperature: f64, field: f64) -> Result<Self> {
        let c = Self { temperature, field };
        c.validate()?;
        Ok(c)
    }

    /// Builds a condition from millikelvin and millitesla.
    pub fn from_milli(temperature_mk: f64, field_mt: f64) -> Result<Self> {
        Self::new(temperature_mk * 1e-3, field_mt * 1e-3)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() {
            return Err(Error::NonFinite("temperature"));
        }
        if !self.field.is_finite() {
            return Err(Error::NonFinite("field"));
        }
        if self.temperature <= 0.0 {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {} K",
                self.temperature
            )));
        }
        if self.field < 0.0 {
            return Err(Error::invalid(format!(
                "field must be non-negative, got {} T",
                self.field
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "T = {} mK, B = {} mT",
            self.temperature * 1e3,
            self.field * 1e3
        )
    }
}

/// Constants and exponents common to every ion class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedModelParams {
    pub g_factor: f64,
    /// Γ⁰, Hz.
    #[serde(rename = "zero_field_linewidth_hz")]
    pub zero_field_linewidth: f64,
    /// γ, Hz per tesla.
    #[serde(rename = "field_broadening_hz_per_t")]
    pub field_broadening: f64,
    pub tls_field_exp: f64,
    pub tls_temp_exp: f64,
    pub raman_temp_exp: f64,
}

impl SharedModelParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("g_factor", self.g_factor),
            ("zero_field_linewidth", self.zero_field_linewidth),
            ("field_broadening", self.field_broadening),
            ("tls_field_exp", self.tls_field_exp),
            ("tls_temp_exp", self.tls_temp_exp),
            ("raman_temp_exp", self.raman_temp_exp),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v < 0.0 {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.zero_field_linewidth <= 0.0 {
            return Err(Error::invalid("zero_field_linewidth must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassId {
    A,
    B,
    C,
}

impl ClassId {
    pub const ALL: [ClassId; 3] = [ClassId::A, ClassId::B, ClassId::C];

    /// Class of the `index`-th component when lifetimes are sorted ascending.
    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ClassId::A => "A",
            ClassId::B => "B",
            ClassId::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(ClassId::A),
            "B" | "b" => Ok(ClassId::B),
            "C" | "c" => Ok(ClassId::C),
            other => Err(Error::UnknownClass(other.to_string())),
        }
    }
}

/// Mechanism strengths of one ion class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub class_id: ClassId,
    /// s⁻².
    pub alpha_ff: f64,
    /// s⁻¹·T⁻ˡ·K⁻ᵐ.
    pub alpha_tls: f64,
    /// s⁻¹·K⁻ⁿ.
    pub alpha_raman: f64,
}

impl ClassParams {
    pub fn new(class_id: ClassId, alpha_ff: f64, alpha_tls: f64, alpha_raman: f64) -> Self {
        Self {
            class_id,
            alpha_ff,
            alpha_tls,
            alpha_raman,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha_ff", self.alpha_ff),
            ("alpha_tls", self.alpha_tls),
            ("alpha_raman", self.alpha_raman),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(name));
            }
            if v < 0.0 {
                return Err(Error::invalid(format!(
                    "class {}: {name} must be >= 0, got {v}",
                    self.class_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationModel {
    pub regime_label: String,
    pub shared: SharedModelParams,
    pub classes: Vec<ClassParams>,
}

impl RelaxationModel {
    pub fn validate(&self) -> Result<()> {
        self.shared.validate()?;
        if self.classes.is_empty() || self.classes.len() > 3 {
            return Err(Error::invalid(format!(
                "a model holds 1 to 3 classes, got {}",
                self.classes.len()
            )));
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate()?;
            if self.classes[..i].iter().any(|o| o.class_id == c.class_id) {
                return Err(Error::invalid(format!("duplicate class {}", c.class_id)));
            }
        }
        Ok(())
    }

    pub fn class(&self, id: ClassId) -> Option<&ClassParams> {
        self.classes.iter().find(|c| c.class_id == id)
    }

    pub fn class_mut(&mut self, id: ClassId) -> Option<&mut ClassParams> {
        self.classes.iter_mut().find(|c| c.class_id == id)
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.class_id).collect()
    }
}

/// Per-mechanism decomposition of a relaxation rate, all in s⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub flip_flop: f64,
    pub tls_direct: f64,
    pub raman: f64,
    pub total: f64,
    /// 1/total in seconds; infinite when every mechanism vanishes.
    pub lifetime: f64,
}

/// `sech²(x)` for `x >= 0`, overflow-free for arbitrarily large arguments.
pub fn sech_squared(x: f64) -> f64 {
    let x = x.abs();
    if x > SECH_LARGE_ARG {
        4.0 * (-2.0 * x).exp()
    } else {
        let s = 2.0 / (x.exp() + (-x).exp());
        s * s
    }
}

/// Zeeman argument `g μ_B B / (2 k T)` of the flip-flop polarisation factor.
pub fn zeeman_argument(g_factor: f64, cond: &Condition) -> f64 {
    let k = PhysicalConstants::default();
    g_factor * k.bohr_magneton * cond.field / (2.0 * k.boltzmann * cond.temperature)
}

/// Evaluates the three mechanisms for one class directly from its parameters.
pub fn breakdown_for(
    shared: &SharedModelParams,
    class: &ClassParams,
    cond: &Condition,
) -> Result<RateBreakdown> {
    cond.validate()?;
    let x = zeeman_argument(shared.g_factor, cond);
    let linewidth = shared.zero_field_linewidth + shared.field_broadening * cond.field;
    let flip_flop = class.alpha_ff / linewidth * sech_squared(x);
    let tls_direct = class.alpha_tls
        * cond.field.powf(shared.tls_field_exp)
        * cond.temperature.powf(shared.tls_temp_exp);
    let raman = class.alpha_raman * cond.temperature.powf(shared.raman_temp_exp);
    let total = flip_flop + tls_direct + raman;
    if !(flip_flop.is_finite() && tls_direct.is_finite() && raman.is_finite()) {
        return Err(Error::NonFinite("relaxation rate"));
    }
    Ok(RateBreakdown {
        flip_flop,
        tls_direct,
        raman,
        total,
        lifetime: 1.0 / total,
    })
}

pub fn rate_breakdown(
    model: &RelaxationModel,
    class_id: ClassId,
    cond: &Condition,
) -> Result<RateBreakdown> {
    let class = model
        .class(class_id)
        .ok_or_else(|| Error::UnknownClass(class_id.to_string()))?;
    breakdown_for(&model.shared, class, cond)
}

pub fn rate_grid(
    model: &RelaxationModel,
    class_id: ClassId,
    conditions: &[Condition],
) -> Result<Vec<(Condition, RateBreakdown)>> {
    if conditions.is_empty() {
        return Err(Error::invalid("rate grid needs at least one condition"));
    }
    conditions
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rate_breakdown(model, class_id, c)
                .map(|r| (*c, r))
                .map_err(|e| Error::invalid(format!("condition #{i} ({c}): {e}")))
        })
        .collect()
}

/// Minimiser of the total rate over field at fixed temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldMinimum {
    pub field: f64,
    pub rate: f64,
}

const MIN_SEARCH_GRID: usize = 201;
const FIELD_REL_TOL: f64 = 1e-4;
const MAX_FIELD: f64 = 2.0;

/// Locates the field minimising the total rate within `field_range` by a
/// coarse bracketing scan followed by golden-section refinement.
pub fn find_rate_minimum_over_field(
    model: &RelaxationModel,
    class_id: ClassId,
    temperature: f64,
    field_range: (f64, f64),
) -> Result<FieldMinimum> {
    let (lo, hi) = field_range;
    if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi > MAX_FIELD || lo >= hi {
        return Err(Error::invalid(format!(
            "field range ({lo}, {hi}) T must be ordered and within [0, {MAX_FIELD}] T"
        )));
    }
    let total = |b: f64| -> Result<f64> {
        rate_breakdown(model, class_id, &Condition::new(temperature, b)?).map(|r| r.total)
    };

    let step = (hi - lo) / (MIN_SEARCH_GRID - 1) as f64;
    let grid: Vec<f64> = (0..MIN_SEARCH_GRID)
        .map(|i| if i + 1 == MIN_SEARCH_GRID { hi } else { lo + step * i as f64 })
        .collect();
    let values = grid.iter().map(|&b| total(b)).collect::<Result<Vec<_>>>()?;
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(MIN_SEARCH_GRID - 1)];
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = total(x1)?;
    let mut f2 = total(x2)?;
    while (b - a) > FIELD_REL_TOL * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = total(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = total(x2)?;
        }
    }
    let refined = 0.5 * (a + b);
    let candidates = [
        (lo, values[0]),
        (hi, values[MIN_SEARCH_GRID - 1]),
        (refined, total(refined)?),
    ];
    let (field, rate) = candidates
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty candidates");
    Ok(FieldMinimum { field, rate })
}

/// Reference constants and exponents: γ = 150 GHz/T, Γ⁰ = 1.3 GHz, g = 0.50,
/// l = 1.35, m = 0.20, n = 3.0.
pub fn reference_shared_params() -> SharedModelParams {
    SharedModelParams {
        g_factor: 0.50,
        zero_field_linewidth: 1.3e9,
        field_broadening: 150e9,
        tls_field_exp: 1.35,
        tls_temp_exp: 0.20,
        raman_temp_exp: 3.0,
    }
}

pub const LOW_TEMPERATURE: &str = "low-temperature";
pub const HIGH_TEMPERATURE: &str = "high-temperature";

/// Reference strengths of the three classes seen near 7 mK.
pub fn reference_low_temperature() -> RelaxationModel {
    RelaxationModel {
        regime_label: LOW_TEMPERATURE.to_string(),
        shared: reference_shared_params(),
        classes: vec![
            ClassParams::new(ClassId::A, 1.1e9, 12.5, 0.0),
            ClassParams::new(ClassId::B, 0.020e9, 0.29, 0.0),
            ClassParams::new(ClassId::C, 0.00079e9, 0.0012, 0.0),
        ],
    }
}

/// Reference strengths of the two classes seen between 44 and 2400 mK.
pub fn reference_high_temperature() -> RelaxationModel {
    RelaxationModel {
        regime_label: HIGH_TEMPERATURE.to_string(),
        shared: reference_shared_params(),
        classes: vec![
            ClassParams::new(ClassId::A, 0.62e9, 5.1, 0.27),
            ClassParams::new(ClassId::B, 0.0070e9, 0.086, 0.0102),
        ],
    }
}
