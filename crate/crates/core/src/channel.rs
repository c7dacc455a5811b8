//! Block-fading gain distributions and seeded channel draws.
//!
//! A [`FadingSpec`] pairs one [`GainFamily`] for the main link with one for
//! the eavesdropper link; the two gains are always drawn independently.
//!
//! Draws are produced in fixed-size chunks. Chunk `k` of a stream is generated
//! by its own ChaCha8 generator keyed on `(seed, domain)` with stream id `k`,
//! so any chunk can be regenerated in isolation and parallel generation yields
//! exactly the sequence a sequential loop would.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of draws per independently seeded chunk.
pub const CHUNK_LEN: usize = 1 << 14;

/// RNG domain for channel gain draws.
pub const DOMAIN_CHANNEL: u64 = 0x6368_616e_6e65_6c00;

/// One fading realization: power gains of the main and eavesdropper links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub h_m: f64,
    pub h_e: f64,
}

impl ChannelState {
    pub fn new(h_m: f64, h_e: f64) -> Self {
        Self { h_m, h_e }
    }

    pub fn min_gain(&self) -> f64 {
        self.h_m.min(self.h_e)
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(h_m={}, h_e={})", self.h_m, self.h_e)
    }
}

/// Position of a fading block: super-block `s` in `1..=S`, block `b` in `1..=B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockIndex {
    pub s: usize,
    pub b: usize,
}

impl BlockIndex {
    pub fn new(s: usize, b: usize, s_count: usize, b_count: usize) -> Result<Self> {
        if s == 0 || s > s_count || b == 0 || b > b_count {
            return Err(Error::Parameter(format!(
                "block index ({s}, {b}) outside 1..={s_count} x 1..={b_count}"
            )));
        }
        Ok(Self { s, b })
    }

    /// Zero-based position in the flattened block sequence.
    pub fn flat(&self, b_count: usize) -> usize {
        (self.s - 1) * b_count + (self.b - 1)
    }
}

/// Distribution family of a single power gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainFamily {
    /// `scale` times a chi-square variable with `dof` degrees of freedom.
    ChiSquare { dof: u32, scale: f64 },
    Exponential { mean: f64 },
    Deterministic { value: f64 },
    /// `v1` with probability `p1`, otherwise `v2`.
    TwoPoint { v1: f64, v2: f64, p1: f64 },
}

impl GainFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        match *self {
            GainFamily::ChiSquare { dof, scale } => {
                if dof == 0 {
                    return bad("chi_square dof must be >= 1".into());
                }
                if !(scale.is_finite() && scale > 0.0) {
                    return bad(format!("chi_square scale must be positive, got {scale}"));
                }
            }
            GainFamily::Exponential { mean } => {
                if !(mean.is_finite() && mean > 0.0) {
                    return bad(format!("exponential mean must be positive, got {mean}"));
                }
            }
            GainFamily::Deterministic { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return bad(format!("deterministic value must be >= 0, got {value}"));
                }
            }
            GainFamily::TwoPoint { v1, v2, p1 } => {
                if !(v1.is_finite() && v1 >= 0.0 && v2.is_finite() && v2 >= 0.0) {
                    return bad(format!("two_point values must be >= 0, got {v1}, {v2}"));
                }
                if !(0.0..=1.0).contains(&p1) {
                    return bad(format!("two_point p1 must lie in [0, 1], got {p1}"));
                }
            }
        }
        Ok(())
    }

    /// Analytic mean of the gain.
    pub fn mean(&self) -> f64 {
        match *self {
            GainFamily::ChiSquare { dof, scale } => dof as f64 * scale,
            GainFamily::Exponential { mean } => mean,
            GainFamily::Deterministic { value } => value,
            GainFamily::TwoPoint { v1, v2, p1 } => p1 * v1 + (1.0 - p1) * v2,
        }
    }

    /// Analytic variance of the gain.
    pub fn variance(&self) -> f64 {
        match *self {
            GainFamily::ChiSquare { dof, scale } => 2.0 * dof as f64 * scale * scale,
            GainFamily::Exponential { mean } => mean * mean,
            GainFamily::Deterministic { .. } => 0.0,
            GainFamily::TwoPoint { v1, v2, p1 } => p1 * (1.0 - p1) * (v1 - v2).powi(2),
        }
    }

    /// `E[1/h]`, or `None` when it is infinite.
    pub fn inverse_mean(&self) -> Option<f64> {
        match *self {
            // E[1/chi2_k] = 1/(k-2), infinite for k <= 2
            GainFamily::ChiSquare { dof, scale } if dof > 2 => {
                Some(1.0 / (scale * (dof as f64 - 2.0)))
            }
            GainFamily::ChiSquare { .. } | GainFamily::Exponential { .. } => None,
            GainFamily::Deterministic { value } => (value > 0.0).then(|| 1.0 / value),
            GainFamily::TwoPoint { v1, v2, p1 } => {
                let part = |v: f64, p: f64| {
                    if p == 0.0 {
                        Some(0.0)
                    } else if v > 0.0 {
                        Some(p / v)
                    } else {
                        None
                    }
                };
                Some(part(v1, p1)? + part(v2, 1.0 - p1)?)
            }
        }
    }

    /// Essential supremum (`+inf` for unbounded families).
    pub fn ess_sup(&self) -> f64 {
        match *self {
            GainFamily::ChiSquare { .. } | GainFamily::Exponential { .. } => f64::INFINITY,
            GainFamily::Deterministic { value } => value,
            GainFamily::TwoPoint { v1, v2, p1 } => {
                if p1 == 0.0 {
                    v2
                } else if p1 == 1.0 {
                    v1
                } else {
                    v1.max(v2)
                }
            }
        }
    }

    fn sampler(&self) -> GainSampler {
        match *self {
            GainFamily::ChiSquare { dof, scale } => GainSampler::ChiSquare(
                ChiSquared::new(dof as f64).expect("validated dof"),
                scale,
            ),
            GainFamily::Exponential { mean } => {
                GainSampler::Exponential(Exp::new(1.0 / mean).expect("validated mean"))
            }
            GainFamily::Deterministic { value } => GainSampler::Constant(value),
            GainFamily::TwoPoint { v1, v2, p1 } => GainSampler::TwoPoint { v1, v2, p1 },
        }
    }
}

#[derive(Debug, Clone)]
enum GainSampler {
    ChiSquare(ChiSquared<f64>, f64),
    Exponential(Exp<f64>),
    Constant(f64),
    TwoPoint { v1: f64, v2: f64, p1: f64 },
}

impl GainSampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            GainSampler::ChiSquare(d, scale) => scale * d.sample(rng),
            GainSampler::Exponential(d) => d.sample(rng),
            GainSampler::Constant(v) => *v,
            GainSampler::TwoPoint { v1, v2, p1 } => {
                if rng.random::<f64>() < *p1 {
                    *v1
                } else {
                    *v2
                }
            }
        }
    }
}

/// Fading model: independent gain distributions for the main and
/// eavesdropper links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingSpec {
    pub main: GainFamily,
    pub eve: GainFamily,
}

impl FadingSpec {
    pub fn new(main: GainFamily, eve: GainFamily) -> Self {
        Self { main, eve }
    }

    pub fn deterministic(h_m: f64, h_e: f64) -> Self {
        Self::new(
            GainFamily::Deterministic { value: h_m },
            GainFamily::Deterministic { value: h_e },
        )
    }

    pub fn exponential(mean_m: f64, mean_e: f64) -> Self {
        Self::new(
            GainFamily::Exponential { mean: mean_m },
            GainFamily::Exponential { mean: mean_e },
        )
    }

    /// Chi-square gains with `dof` degrees of freedom, scaled to the given means.
    pub fn chi_square_with_means(dof: u32, mean_m: f64, mean_e: f64) -> Self {
        let k = dof as f64;
        Self::new(
            GainFamily::ChiSquare { dof, scale: mean_m / k },
            GainFamily::ChiSquare { dof, scale: mean_e / k },
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.main.validate()?;
        self.eve.validate()
    }

    /// `E[1/min(h_m, h_e)]` is finite iff both `E[1/h_m]` and `E[1/h_e]` are.
    pub fn inverse_min_finite(&self) -> bool {
        self.main.inverse_mean().is_some() && self.eve.inverse_mean().is_some()
    }
}

/// Validated, immutable channel sampler.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: FadingSpec,
    seed: u64,
    main: GainSampler,
    eve: GainSampler,
}

impl Sampler {
    pub fn new(spec: FadingSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            seed,
            main: spec.main.sampler(),
            eve: spec.eve.sampler(),
        })
    }

    pub fn spec(&self) -> &FadingSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fills `out` with the first `out.len()` draws of chunk `chunk`.
    pub fn fill_chunk(&self, chunk: u64, out: &mut [ChannelState]) {
        debug_assert!(out.len() <= CHUNK_LEN);
        let mut rng = stream_rng(self.seed, DOMAIN_CHANNEL, chunk);
        for slot in out.iter_mut() {
            let h_m = self.main.draw(&mut rng);
            let h_e = self.eve.draw(&mut rng);
            *slot = ChannelState { h_m, h_e };
        }
    }

    /// The first `count` draws of this stream.
    pub fn take(&self, count: usize) -> Vec<ChannelState> {
        let mut out = vec![ChannelState::new(0.0, 0.0); count];
        out.par_chunks_mut(CHUNK_LEN)
            .enumerate()
            .for_each(|(k, chunk)| self.fill_chunk(k as u64, chunk));
        out
    }
}

/// Draws `count` i.i.d. channel states; bit-exact for fixed `(spec, seed, count)`.
pub fn sample(spec: &FadingSpec, seed: u64, count: usize) -> Result<Vec<ChannelState>> {
    if count == 0 {
        return Err(Error::Parameter("sample count must be >= 1".into()));
    }
    Ok(Sampler::new(*spec, seed)?.take(count))
}

/// Analytic mean of one gain family.
pub fn mean(family: &GainFamily) -> Result<f64> {
    family.validate()?;
    Ok(family.mean())
}

/// ChaCha8 generator for sub-stream `index` of `domain` under `seed`.
pub fn stream_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}

/// Derives an independent child seed; used for per-task seeding.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag.rotate_left(17) ^ 0x9e37_79b9_7f4a_7c15)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
