//! Spin-relaxation modelling and fitting for spectral hole burning in
//! erbium-doped fiber.
//!
//! The crate covers the whole analysis chain, from hole spectra to a global
//! relaxation model:
//!
//! | module | role |
//! |---|---|
//! | [`model`] | relaxation-rate model: flip-flop, direct TLS and Raman terms |
//! | [`lineshape`] | Lorentzian/Gaussian hole fits, recentering, shape selection |
//! | [`decay`] | multi-exponential decay fits with AICc component selection |
//! | [`global`] | shared-exponent fit of the rate model to many rate datasets |
//! | [`simulate`] | deterministic synthetic decays and spectra |
//! | [`pipeline`] | spectra → decays → rates → global model, with plot data |
//! | [`io`] | CSV/JSON formats, atomic writes, run manifests |
//! | [`lsq`] | bounded Levenberg–Marquardt and small linear solvers |
//! | [`rng`] | counter-based random numbers |
//!
//! Units are SI throughout (K, T, Hz, s); only the command-line tool speaks
//! millikelvin and millitesla.
//!
//! ```
//! use holeburn::{rate_breakdown, reference_low_temperature, ClassId, Condition};
//!
//! let model = reference_low_temperature();
//! let r = rate_breakdown(&model, ClassId::C, &Condition::from_milli(7.0, 50.0)?)?;
//! assert!((r.lifetime - 28408.5).abs() < 1.0);
//! # Ok::<(), holeburn::Error>(())
//! ```

// `!(x > 0.0)` is used on purpose throughout: unlike `x <= 0.0` it also
// rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod decay;
pub mod error;
pub mod global;
pub mod io;
pub mod lineshape;
pub mod lsq;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod simulate;

pub use decay::{fit_multiexp, select_components, DecayCurve, DecaySample, MultiExpModel};
pub use error::{Error, Result};
pub use global::{fit_global, GlobalFitConfig, GlobalFitResult, RateDataset};
pub use lineshape::{classify_shape, fit_hole, recenter, ShapeKind, SpectralTrace};
pub use model::{
    find_rate_minimum_over_field, rate_breakdown, reference_high_temperature,
    reference_low_temperature, ClassId, ClassParams, Condition, RateBreakdown, RelaxationModel,
    SharedModelParams,
};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineInput, PipelineReport};
pub use simulate::{simulate_decay, ExperimentPlan, NoiseSpec};

/// The README and the guide's chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/relaxation-model.md")]
    mod relaxation_model {}
    #[doc = include_str!("../../../book/src/line-shapes.md")]
    mod line_shapes {}
    #[doc = include_str!("../../../book/src/decay-fitting.md")]
    mod decay_fitting {}
    #[doc = include_str!("../../../book/src/global-fit.md")]
    mod global_fit {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/pipeline-cli.md")]
    mod pipeline_cli {}
    #[doc = include_str!("../../../book/src/random-numbers.md")]
    mod random_numbers {}
    #[doc = include_str!("../../../book/src/file-formats.md")]
    mod file_formats {}
}
