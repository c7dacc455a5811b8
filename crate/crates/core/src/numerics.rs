//! Seeded Monte Carlo expectations, bisection and fixed-point solving.
//!
//! Monte Carlo sums are accumulated per [`CHUNK_LEN`] chunk and merged in
//! chunk order, so a result does not depend on how many worker threads ran.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, FadingSpec, Sampler, CHUNK_LEN};
use crate::error::{Error, Result};

/// Any integrand sample with magnitude above this trips [`Error::Divergence`].
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Fraction of the total absolute mass a single sample may carry before the
/// estimate is flagged as unstable (heavy-tailed or infinite mean).
pub const UNSTABLE_SHARE: f64 = 0.01;

/// Samples needed before the instability heuristic is applied.
pub const UNSTABLE_MIN_SAMPLES: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Parameter("mc.samples must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 1_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, max_iter: usize) -> Self {
        Self { abs_tol, max_iter }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol.is_finite() && self.abs_tol > 0.0) {
            return Err(Error::Parameter(format!("abs_tol must be positive, got {}", self.abs_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { abs_tol: 1e-9, max_iter: 200 }
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
    /// Largest single-sample magnitude.
    pub max_abs: f64,
    /// Set when one sample dominates the sum, the usual symptom of an
    /// infinite expectation that stayed below [`DIVERGENCE_LIMIT`].
    pub unstable: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_error: 0.0, count: 1, max_abs: value.abs(), unstable: false }
    }
}

/// Streaming mean/variance accumulator (Welford, merged with Chan's update).
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
    abs_sum: f64,
    max_abs: f64,
}

impl Accumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
        self.abs_sum += x.abs();
        self.max_abs = self.max_abs.max(x.abs());
    }

    pub fn merge(&mut self, other: &Accumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64 / n as f64);
        self.n = n;
        self.abs_sum += other.abs_sum;
        self.max_abs = self.max_abs.max(other.max_abs);
    }

    pub fn estimate(&self) -> Estimate {
        let std_error = if self.n > 1 {
            (self.m2.max(0.0) / (self.n - 1) as f64 / self.n as f64).sqrt()
        } else {
            0.0
        };
        let unstable = self.n >= UNSTABLE_MIN_SAMPLES
            && self.max_abs > UNSTABLE_SHARE * self.abs_sum;
        Estimate { mean: self.mean, std_error, count: self.n, max_abs: self.max_abs, unstable }
    }
}

fn accumulate_chunk<F>(f: &F, states: &[ChannelState]) -> Result<Accumulator>
where
    F: Fn(&ChannelState) -> f64,
{
    let mut acc = Accumulator::default();
    for state in states {
        let v = f(state);
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                context: format!("integrand value {v}"),
                state: Some(*state),
            });
        }
        acc.push(v);
    }
    Ok(acc)
}

fn merge_in_order(parts: Vec<Result<Accumulator>>) -> Result<Estimate> {
    let mut total = Accumulator::default();
    for part in parts {
        total.merge(&part?);
    }
    Ok(total.estimate())
}

/// Mean of `f` over pre-drawn states (common random numbers).
pub fn mean_over<F>(states: &[ChannelState], f: F) -> Result<Estimate>
where
    F: Fn(&ChannelState) -> f64 + Sync,
{
    if states.is_empty() {
        return Err(Error::Parameter("cannot average over zero states".into()));
    }
    let parts: Vec<_> = states
        .par_chunks(CHUNK_LEN)
        .map(|chunk| accumulate_chunk(&f, chunk))
        .collect();
    merge_in_order(parts)
}

/// Monte Carlo estimate of `E[f(h)]` under `spec`, streamed chunk by chunk.
///
/// Bit-identical to `mean_over(&sample(spec, mc.seed, mc.samples)?, f)`.
pub fn expect<F>(f: F, spec: &FadingSpec, mc: &McConfig) -> Result<Estimate>
where
    F: Fn(&ChannelState) -> f64 + Sync,
{
    mc.validate()?;
    let sampler = Sampler::new(*spec, mc.seed)?;
    let chunks = mc.samples.div_ceil(CHUNK_LEN);
    let parts: Vec<_> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let len = CHUNK_LEN.min(mc.samples - k * CHUNK_LEN);
            let mut buf = vec![ChannelState::new(0.0, 0.0); len];
            sampler.fill_chunk(k as u64, &mut buf);
            accumulate_chunk(&f, &buf)
        })
        .collect();
    merge_in_order(parts)
}

/// Root of a monotone `g` on `[lo, hi]` by bisection.
///
/// Stops once the bracketing interval is no wider than `tol.abs_tol` and
/// returns its midpoint, or returns early on an exact zero.
pub fn bisect<G>(g: G, lo: f64, hi: f64, tol: &Tolerance) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    tol.validate()?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Parameter(format!("invalid bracket [{lo}, {hi}]")));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut ga, gb) = (g(a), g(b));
    if ga.is_nan() || gb.is_nan() {
        return Err(Error::Convergence(format!("g is NaN on bracket [{lo}, {hi}]")));
    }
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(Error::Bracketing { lo, hi, g_lo: ga, g_hi: gb });
    }
    for _ in 0..tol.max_iter {
        let mid = 0.5 * (a + b);
        if b - a <= tol.abs_tol || mid <= a || mid >= b {
            return Ok(mid);
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    if b - a <= tol.abs_tol {
        return Ok(0.5 * (a + b));
    }
    Err(Error::Convergence(format!(
        "bisection exceeded {} iterations (interval width {})",
        tol.max_iter,
        b - a
    )))
}

/// Solves `x = rhs(x)` for a nonincreasing, nonnegative `rhs`.
///
/// `g(x) = rhs(x) - x` is strictly decreasing with `g(0) >= 0` and
/// `g(rhs(0)) <= 0`, so the root is unique and bracketed by `[0, rhs(0)]`.
pub fn fixed_point_nonincreasing<F>(rhs: F, tol: &Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let top = rhs(0.0);
    if !top.is_finite() || top < 0.0 {
        return Err(Error::Convergence(format!("rhs(0) = {top} is not a valid upper bracket")));
    }
    if top == 0.0 {
        return Ok(0.0);
    }
    bisect(|x| rhs(x) - x, 0.0, top, tol)
}
