//! Reference parameters, condition grids and pinned oracle values.

use holeburn::decay::{ExpComponent, MultiExpModel};
use holeburn::global::{RateDataset, RatePoint};
use holeburn::model::{
    rate_breakdown, ClassId, ClassParams, Condition, RelaxationModel, SharedModelParams,
};
use holeburn::rng::CounterRng;

/// Reference constants and exponents (taken literally, not from the library
/// presets, so the presets are checked against them).
pub fn literal_shared() -> SharedModelParams {
    SharedModelParams {
        g_factor: 0.50,
        zero_field_linewidth: 1.3e9,
        field_broadening: 150e9,
        tls_field_exp: 1.35,
        tls_temp_exp: 0.20,
        raman_temp_exp: 3.0,
    }
}

pub fn literal_low() -> RelaxationModel {
    RelaxationModel {
        regime_label: "low-temperature".into(),
        shared: literal_shared(),
        classes: vec![
            ClassParams::new(ClassId::A, 1.1e9, 12.5, 0.0),
            ClassParams::new(ClassId::B, 0.020e9, 0.29, 0.0),
            ClassParams::new(ClassId::C, 0.00079e9, 0.0012, 0.0),
        ],
    }
}

pub fn literal_high() -> RelaxationModel {
    RelaxationModel {
        regime_label: "high-temperature".into(),
        shared: literal_shared(),
        classes: vec![
            ClassParams::new(ClassId::A, 0.62e9, 5.1, 0.27),
            ClassParams::new(ClassId::B, 0.0070e9, 0.086, 0.0102),
        ],
    }
}

/// Field sweep at 7 mK, mT.
pub const FIELDS_7MK: [f64; 12] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 125.0, 150.0, 200.0];
/// Field sweeps at 80 mK and 800 mK, mT.
pub const FIELDS_HIGH: [f64; 10] = [0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0, 150.0, 200.0];
/// Temperature sweep at 50 mT, mK.
pub const TEMPS_50MT: [f64; 13] = [44.0, 52.0, 80.0, 120.0, 180.0, 250.0, 400.0, 600.0, 800.0, 1000.0, 1500.0, 2000.0, 2400.0];

pub fn low_conditions() -> Vec<Condition> {
    FIELDS_7MK.iter().map(|&b| Condition::from_milli(7.0, b).unwrap()).collect()
}

pub fn high_conditions() -> Vec<Condition> {
    let mut c: Vec<Condition> = [80.0, 800.0]
        .iter()
        .flat_map(|&t| FIELDS_HIGH.iter().map(move |&b| Condition::from_milli(t, b).unwrap()))
        .collect();
    // 80 mK and 800 mK at 50 mT already belong to the field sweeps.
    c.extend(
        TEMPS_50MT
            .iter()
            .filter(|&&t| t != 80.0 && t != 800.0)
            .map(|&t| Condition::from_milli(t, 50.0).unwrap()),
    );
    c
}

/// Rates of every class of `model` at `conds`; with `noise = Some((rel, seed))`
/// each rate is multiplied by `1 + rel·z` and its sigma is `rel` times the
/// noisy value, otherwise sigma is 5% of the exact rate.
pub fn rate_datasets(model: &RelaxationModel, conds: &[Condition], noise: Option<(f64, u64)>) -> Vec<RateDataset> {
    model
        .classes
        .iter()
        .enumerate()
        .map(|(ci, c)| {
            let stream = (model.regime_label.len() as u64) << 8 | ci as u64;
            let rng = noise.map(|(_, seed)| CounterRng::for_stream(seed, stream));
            RateDataset {
                regime: model.regime_label.clone(),
                class_id: c.class_id,
                points: conds
                    .iter()
                    .enumerate()
                    .map(|(i, cond)| {
                        let exact = rate_breakdown(model, c.class_id, cond).unwrap().total;
                        match (noise, &rng) {
                            (Some((rel, _)), Some(rng)) => {
                                let y = exact * (1.0 + rel * rng.normal(i as u64));
                                RatePoint { condition: *cond, rate: y, sigma: rel * y }
                            }
                            _ => RatePoint { condition: *cond, rate: exact, sigma: 0.05 * exact },
                        }
                    })
                    .collect(),
            }
        })
        .collect()
}

pub fn literal_datasets(noise: Option<(f64, u64)>) -> Vec<RateDataset> {
    let mut d = rate_datasets(&literal_low(), &low_conditions(), noise);
    d.extend(rate_datasets(&literal_high(), &high_conditions(), noise));
    d
}

pub fn three_class_decay() -> MultiExpModel {
    MultiExpModel::new(
        vec![
            ExpComponent { amplitude: 0.52, lifetime: 6.3 },
            ExpComponent { amplitude: 0.31, lifetime: 395.7 },
            ExpComponent { amplitude: 0.17, lifetime: 33961.8 },
        ],
        0.0,
    )
}

pub fn two_class_decay() -> MultiExpModel {
    MultiExpModel::new(
        vec![
            ExpComponent { amplitude: 0.62, lifetime: 8.4 },
            ExpComponent { amplitude: 0.38, lifetime: 591.4 },
        ],
        0.0,
    )
}

/// Pinned values from a 50-digit evaluation of the rate formula
/// (independent script, frozen here).
pub mod pinned {
    /// (regime, class, T mK, B mT, total s⁻¹, lifetime s)
    pub const RATES: [(&str, char, f64, f64, f64, f64); 5] = [
        ("low", 'A', 7.0, 50.0, 0.119357, 8.37824),
        ("low", 'B', 7.0, 50.0, 0.00257758, 387.96),
        ("low", 'C', 7.0, 50.0, 3.52007e-5, 28408.5),
        ("high", 'A', 800.0, 50.0, 0.294154, 3.39958),
        ("high", 'B', 800.0, 50.0, 0.00745897, 134.067),
    ];
    /// Field of minimum total rate, high-T class A at 800 mK, T.
    pub const HIGH_A_800MK_MIN_FIELD: f64 = 0.03612;
}
