//! Counter-based random numbers for reproducible synthetic data.
//!
//! Every draw is a pure function of `(key, counter)`:
//!
//! ```text
//! bits(key, i) = mix64(key + (i + 1) · 0x9E3779B97F4A7C15)      (wrapping u64)
//! mix64(z):  z = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9
//!            z = (z ^ (z >> 27)) · 0x94D049BB133111EB
//!            z ^ (z >> 31)
//! ```
//!
//! which is the SplitMix64 output function evaluated at an explicit counter.
//! Uniforms take the top 53 bits, `u = ((bits >> 11) + 0.5) · 2⁻⁵³`, so they
//! lie strictly inside (0, 1). Standard normals use Box–Muller on the
//! uniforms at counters `2i` and `2i + 1`, keeping only the cosine branch:
//! `z_i = sqrt(-2 ln u₁) · cos(2π u₂)`.
//!
//! Independent streams (one per simulated condition, say) use
//! `key = stream_key(seed, stream) = mix64(seed ^ mix64(stream + 0x9E3779B97F4A7C15))`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of stream `stream` derived from a user seed.
pub fn stream_key(seed: u64, stream: u64) -> u64 {
    mix64(seed ^ mix64(stream.wrapping_add(GOLDEN)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn for_stream(seed: u64, stream: u64) -> Self {
        Self::new(stream_key(seed, stream))
    }

    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in the open interval (0, 1).
    pub fn uniform(&self, counter: u64) -> f64 {
        ((self.bits(counter) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal deviate number `index`.
    pub fn normal(&self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
