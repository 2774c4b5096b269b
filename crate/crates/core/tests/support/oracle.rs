//! Independent arbitrary-precision evaluation of the relaxation-rate model.
//!
//! Written directly from the formula with 256-bit arithmetic; it shares no
//! code with the library and receives exactly the same `f64` inputs.

use astro_float::{BigFloat, Consts, RoundingMode};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

pub struct Oracle {
    cc: Consts,
}

/// Inputs, all as the `f64` values the library sees.
#[derive(Clone, Copy, Debug)]
pub struct Inputs {
    pub g: f64,
    pub gamma0: f64,
    pub gamma: f64,
    pub l: f64,
    pub m: f64,
    pub n: f64,
    pub alpha_ff: f64,
    pub alpha_tls: f64,
    pub alpha_r: f64,
    pub mu_b: f64,
    pub k_b: f64,
    pub temperature: f64,
    pub field: f64,
}

/// The three terms and the total, as decimal-parsed `f64` of the exact values.
#[derive(Clone, Copy, Debug)]
pub struct Terms {
    pub flip_flop: f64,
    pub tls: f64,
    pub raman: f64,
    pub total: f64,
}

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, P)
}

fn to_f64(x: &BigFloat) -> f64 {
    let s = format!("{x}");
    s.parse().unwrap_or_else(|_| panic!("cannot parse oracle value {s}"))
}

impl Oracle {
    pub fn new() -> Self {
        Self {
            cc: Consts::new().expect("constants cache"),
        }
    }

    fn pow(&mut self, base: f64, exp: f64) -> BigFloat {
        if base == 0.0 {
            return big(if exp == 0.0 { 1.0 } else { 0.0 });
        }
        big(base).pow(&big(exp), P, RM, &mut self.cc)
    }

    pub fn eval(&mut self, i: &Inputs) -> Terms {
        let one = big(1.0);
        // x = g μB B / (2 k T)
        let num = big(i.g).mul(&big(i.mu_b), P, RM).mul(&big(i.field), P, RM);
        let den = big(2.0).mul(&big(i.k_b), P, RM).mul(&big(i.temperature), P, RM);
        let x = num.div(&den, P, RM);
        let cosh = x.cosh(P, RM, &mut self.cc);
        let sech2 = one.div(&cosh.mul(&cosh, P, RM), P, RM);
        let width = big(i.gamma0).add(&big(i.gamma).mul(&big(i.field), P, RM), P, RM);
        let ff = big(i.alpha_ff).div(&width, P, RM).mul(&sech2, P, RM);
        let bl = self.pow(i.field, i.l);
        let tm = self.pow(i.temperature, i.m);
        let tls = big(i.alpha_tls).mul(&bl, P, RM).mul(&tm, P, RM);
        let tn = self.pow(i.temperature, i.n);
        let raman = big(i.alpha_r).mul(&tn, P, RM);
        let total = ff.add(&tls, P, RM).add(&raman, P, RM);
        Terms {
            flip_flop: to_f64(&ff),
            tls: to_f64(&tls),
            raman: to_f64(&raman),
            total: to_f64(&total),
        }
    }
}
