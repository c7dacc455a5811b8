//! Secrecy-outage accounting for the main-CSI scheme.
//!
//! The key used in super-block `s` is only as secret as the secrecy the
//! channel actually provided while it was sent in `s - 1`. With per-block
//! secret rate `r(s-1, b) = [log(1 + P h_m) - R - log(1 + P h_e)]^+` the
//! super-block's secrecy budget is `sum_b r(s-1, b)` and its demand is `B R`.
//! A deficit `D` leaks at most `D` bits per channel use in total, so at most
//! `floor(D / eps')` blocks of `s` can fall more than `eps'` short of full
//! equivocation. Those blocks (taken as the last ones of `s`) are marked in
//! outage. This is a rate-accounting model of the outage event, not an
//! equivocation measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageParams {
    pub s_count: usize,
    pub b_count: usize,
    /// Per-block data rate `R`.
    pub rate: f64,
    /// Target outage probability.
    pub epsilon: f64,
    /// Per-block equivocation slack.
    pub epsilon_prime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageStats {
    /// `beta / B` for super-blocks `2..=S`.
    pub beta_fraction: Vec<f64>,
    pub outage_blocks: usize,
    /// Outage fraction over data-carrying blocks.
    pub outage_rate: f64,
    pub within_epsilon: bool,
    /// Flattened per-block outage flags (super-block 1 never in outage).
    #[serde(skip)]
    pub flags: Vec<bool>,
}

/// Marks outage blocks from realized per-block secret rates (bits/use,
/// flattened in `(s, b)` order).
pub fn outage_ledger(params: &OutageParams, per_block_rates: &[f64]) -> Result<OutageStats> {
    let OutageParams { s_count, b_count, rate, epsilon, epsilon_prime } = *params;
    if s_count < 2 || b_count == 0 {
        return Err(Error::Parameter(format!("need S >= 2 and B >= 1, got S={s_count}, B={b_count}")));
    }
    if per_block_rates.len() != s_count * b_count {
        return Err(Error::Parameter(format!(
            "expected {} per-block rates, got {}",
            s_count * b_count,
            per_block_rates.len()
        )));
    }
    if !(epsilon_prime > 0.0) || !(rate >= 0.0) {
        return Err(Error::Parameter("need eps' > 0 and R >= 0".into()));
    }
    let mut flags = vec![false; s_count * b_count];
    let mut beta_fraction = Vec::with_capacity(s_count - 1);
    let mut outage_blocks = 0;
    for s in 2..=s_count {
        let prev = &per_block_rates[(s - 2) * b_count..(s - 1) * b_count];
        let budget: f64 = prev.iter().map(|r| r.max(0.0)).sum();
        let deficit = (b_count as f64 * rate - budget).max(0.0);
        let beta = ((deficit / epsilon_prime).floor() as usize).min(b_count);
        let base = (s - 1) * b_count;
        flags[base + b_count - beta..base + b_count].iter_mut().for_each(|f| *f = true);
        outage_blocks += beta;
        beta_fraction.push(beta as f64 / b_count as f64);
    }
    let outage_rate = outage_blocks as f64 / ((s_count - 1) * b_count) as f64;
    Ok(OutageStats {
        beta_fraction,
        outage_blocks,
        outage_rate,
        within_epsilon: outage_rate <= epsilon,
        flags,
    })
}
