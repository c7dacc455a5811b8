//! Block-by-block simulation of the two-stage key-renewal scheme.
//!
//! Super-block 1 only generates key. In every later super-block `s` the
//! transmitter one-time-pads each block's delay-sensitive packet with fresh
//! bits of the key generated in `s - 1`, while the channel's secure rate
//! generates the key for `s + 1`. Wiretap binning is not simulated: a block
//! contributes exactly `floor(n' * rate)` key bits, and those bits are real
//! pseudorandom material that both ends hold, so the XOR round trip and the
//! key bookkeeping are exercised on actual payloads.

pub mod ledger;
pub mod outage;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::bounds::{allocate_rates_full, within_cap, Evaluator};
use crate::channel::{derive_seed, stream_rng, ChannelState, FadingSpec, Sampler};
use crate::error::{Error, Result};
use crate::numerics::{mean_over, McConfig, Tolerance};
use crate::power::{Csi, PowerPolicy};

pub use ledger::{otp_encrypt, otp_encrypt_bits, Draw, KeyLedger, LedgerAudit};
pub use outage::{outage_ledger, OutageParams, OutageStats};

const DOMAIN_KEY: u64 = 0x6b65_795f_6d61_7400;
const DOMAIN_PAYLOAD: u64 = 0x7061_796c_6f61_6400;
const PLANNING_TAG: u64 = 0x706c_616e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Key rate `[log(1+P h_m) - log(1+P h_e)]^+`, one-time-pad rate `R_1`.
    FullCsi,
    /// Data rate `rate_target` per block, all of it one-time padded.
    MainCsi,
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_planning_samples() -> usize {
    200_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of super-blocks `S` (the first only generates key).
    pub s_count: usize,
    /// Blocks per super-block `B`.
    pub b_count: usize,
    /// Channel uses per block.
    pub n_prime: u64,
    pub seed: u64,
    pub spec: FadingSpec,
    pub policy: PowerPolicy,
    /// Key-rate backoff in bits/use.
    pub delta: f64,
    pub mode: SimMode,
    /// Main-CSI data rate `R`; ignored in full-CSI mode.
    #[serde(default)]
    pub rate_target: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_prime: f64,
    /// Draws used to plan the full-CSI pad rate `R_1`.
    #[serde(default = "default_planning_samples")]
    pub planning_samples: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.s_count < 2 {
            return bad(format!("s_count must be >= 2, got {}", self.s_count));
        }
        if self.b_count == 0 || self.n_prime == 0 {
            return bad("b_count and n_prime must be >= 1".into());
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta must be >= 0, got {}", self.delta));
        }
        if !(self.rate_target.is_finite() && self.rate_target >= 0.0) {
            return bad(format!("rate_target must be >= 0, got {}", self.rate_target));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) || !(self.epsilon_prime > 0.0) {
            return bad("need 0 < epsilon <= 1 and epsilon_prime > 0".into());
        }
        if self.planning_samples == 0 {
            return bad("planning_samples must be >= 1".into());
        }
        if self.mode == SimMode::MainCsi && self.policy.family.requires_full_csi() {
            return Err(Error::CsiMismatch(self.policy.family.name().into()));
        }
        if self.mode == SimMode::MainCsi && self.policy.csi != Csi::MainOnly {
            return bad("main-CSI simulation needs a policy calibrated for main-only CSI".into());
        }
        self.spec.validate()
    }

    fn planning_mc(&self) -> McConfig {
        McConfig::new(self.planning_samples, derive_seed(self.seed, PLANNING_TAG))
    }
}

/// Per-block record for the optional CSV trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub s: usize,
    pub b: usize,
    pub h_m: f64,
    pub h_e: f64,
    pub power: f64,
    pub r_k_bits: u64,
    pub r_1_bits: u64,
    pub enc_error: bool,
    pub outage: bool,
}

pub const TRACE_HEADER: &str = "s,b,h_m,h_e,power,r_k_bits,r_1_bits,enc_error,outage";

impl TraceRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.s,
            self.b,
            self.h_m,
            self.h_e,
            self.power,
            self.r_k_bits,
            self.r_1_bits,
            self.enc_error as u8,
            self.outage as u8
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SimMode,
    pub s_count: usize,
    pub b_count: usize,
    pub n_prime: u64,
    pub delta: f64,
    /// Per-block one-time-pad rate (`R_1` or `rate_target`).
    pub pad_rate: f64,
    /// Planned mean key-generation rate before backoff.
    pub mean_key_rate: f64,
    /// Data blocks whose pad could not be covered by the ledger.
    pub enc_error_count: usize,
    pub enc_error_rate: f64,
    /// Data blocks whose channel could not carry the pad rate.
    pub cap_violation_count: usize,
    pub outage_block_count: usize,
    pub outage_rate: f64,
    /// `beta / B` per data super-block (main-CSI only).
    pub outage_beta_fraction: Vec<f64>,
    /// Whether `outage_rate <= epsilon` (main-CSI only).
    pub outage_within_epsilon: Option<bool>,
    pub decrypt_failures: usize,
    /// Key bits generated in super-block `s` minus bits drawn from it in `s + 1`.
    pub per_superblock_key_balance: Vec<i64>,
    pub generated_key_bits: u64,
    pub consumed_key_bits: u64,
    pub data_bits: u64,
    /// Data bits per channel use over all `S B n'` uses.
    pub achieved_throughput: f64,
    /// Same, excluding the key-only first super-block.
    pub throughput_excluding_init: f64,
    pub audit: LedgerAudit,
}

/// Mean key-generation rate `E[R_k]` for `config`'s mode before backoff.
pub fn mean_key_rate(config: &SimConfig) -> Result<f64> {
    let draws = crate::channel::sample(&config.spec, config.planning_mc().seed, config.planning_samples)?;
    let policy = config.policy;
    let target = config.rate_target;
    let est = mean_over(&draws, |s| match policy.evaluate(s) {
        Ok(p) => {
            let gap = (1.0 + p * s.h_m).log2() - (1.0 + p * s.h_e).log2();
            match config.mode {
                SimMode::FullCsi => gap.max(0.0),
                SimMode::MainCsi => (gap - target).max(0.0),
            }
        }
        Err(_) => 0.0,
    })?;
    Ok(est.mean)
}

struct Plan {
    pad_rate: f64,
    mean_key_rate: f64,
}

/// Full-CSI pad rate: the largest constant below both the backed-off mean key
/// rate (minus the margin) and the pointwise cap.
fn plan(config: &SimConfig) -> Result<Plan> {
    let mean_key = mean_key_rate(config)?;
    match config.mode {
        SimMode::MainCsi => Ok(Plan { pad_rate: config.rate_target, mean_key_rate: mean_key }),
        SimMode::FullCsi => {
            let draws = crate::channel::sample(&config.spec, config.planning_mc().seed, config.planning_samples)?;
            let eval = Evaluator::from_draws(&config.spec, draws, Tolerance::default())?;
            let policy = config.policy;
            let delta = config.delta;
            let accrual = mean_over(eval.draws(), |s| match policy.evaluate(s) {
                Ok(p) => {
                    let r_k = ((1.0 + p * s.h_m).log2() - (1.0 + p * s.h_e).log2()).max(0.0);
                    (r_k - delta).max(0.0)
                }
                Err(_) => 0.0,
            })?;
            let cap = eval.cap_floor(&policy);
            let pad_rate = (accrual.mean - delta).min(cap).max(0.0);
            Ok(Plan { pad_rate, mean_key_rate: mean_key })
        }
    }
}

fn bits(n_prime: u64, rate: f64) -> u64 {
    (n_prime as f64 * rate).floor() as u64
}

/// Runs the protocol; see [`run_with_trace`].
pub fn run(config: &SimConfig) -> Result<SimReport> {
    run_with_trace(config).map(|(report, _)| report)
}

/// Runs the protocol and returns the per-block trace alongside the report.
pub fn run_with_trace(config: &SimConfig) -> Result<(SimReport, Vec<TraceRow>)> {
    config.validate()?;
    let Plan { pad_rate, mean_key_rate } = plan(config)?;
    let (s_count, b_count, n_prime) = (config.s_count, config.b_count, config.n_prime);
    let states = Sampler::new(config.spec, config.seed)?.take(s_count * b_count);

    let mut alice = KeyLedger::new();
    let mut bob = KeyLedger::new();
    let mut trace = Vec::with_capacity(states.len());
    let mut secret_rates = Vec::with_capacity(states.len());
    let (mut enc_errors, mut cap_violations, mut decrypt_failures) = (0usize, 0usize, 0usize);
    let mut data_bits = 0u64;
    let pad_bits = bits(n_prime, pad_rate);

    for s in 1..=s_count {
        let mut payload_rng = stream_rng(config.seed, DOMAIN_PAYLOAD, s as u64);
        let mut key_bits_this = 0u64;
        for b in 1..=b_count {
            let state: ChannelState = states[(s - 1) * b_count + (b - 1)];
            let power = config.policy.evaluate(&state).unwrap_or(0.0);
            let a = (1.0 + power * state.h_m).log2();
            let e = (1.0 + power * state.h_e).log2();
            let (key_rate, carries_pad) = match config.mode {
                SimMode::FullCsi => {
                    let r1 = if within_cap(pad_rate, a.min(e)) { pad_rate } else { 0.0 };
                    let alloc = allocate_rates_full(&config.policy, &state, state.h_e, r1)
                        .map(|r| r.r_k)
                        .unwrap_or(0.0);
                    secret_rates.push(alloc);
                    (alloc, within_cap(pad_rate, a.min(e)))
                }
                SimMode::MainCsi => {
                    let secret = (a - pad_rate - e).max(0.0);
                    secret_rates.push(secret);
                    (secret, within_cap(pad_rate, a))
                }
            };
            let r_k_bits = bits(n_prime, (key_rate - config.delta).max(0.0));
            key_bits_this += r_k_bits;

            let mut row = TraceRow {
                s,
                b,
                h_m: state.h_m,
                h_e: state.h_e,
                power,
                r_k_bits,
                r_1_bits: 0,
                enc_error: false,
                outage: false,
            };
            if s >= 2 && pad_bits > 0 {
                if !carries_pad {
                    cap_violations += 1;
                } else {
                    let mut plain = vec![0u8; pad_bits.div_ceil(8) as usize];
                    payload_rng.fill_bytes(&mut plain);
                    if !pad_bits.is_multiple_of(8) {
                        let last = plain.len() - 1;
                        plain[last] &= 0xffu8 << (8 - pad_bits % 8);
                    }
                    match otp_encrypt_bits(&plain, pad_bits, &mut alice, s) {
                        Ok(cipher) => {
                            match otp_encrypt_bits(&cipher, pad_bits, &mut bob, s) {
                                Ok(decoded) if decoded == plain => {}
                                _ => decrypt_failures += 1,
                            }
                            data_bits += pad_bits;
                            row.r_1_bits = pad_bits;
                        }
                        Err(Error::InsufficientKey { .. }) => {
                            enc_errors += 1;
                            row.enc_error = true;
                        }
                        Err(other) => return Err(other),
                    }
                }
            }
            trace.push(row);
        }
        // key decoded at the end of the super-block
        let mut material = vec![0u8; key_bits_this.div_ceil(8) as usize];
        stream_rng(config.seed, DOMAIN_KEY, s as u64).fill_bytes(&mut material);
        bob.credit(s, material.clone(), key_bits_this)?;
        alice.credit(s, material, key_bits_this)?;
        if s >= 2 {
            alice.retire(s - 1);
            bob.retire(s - 1);
        }
    }

    let data_blocks = (s_count - 1) * b_count;
    let (outage_stats, within) = match config.mode {
        SimMode::MainCsi => {
            let params = OutageParams {
                s_count,
                b_count,
                rate: pad_rate,
                epsilon: config.epsilon,
                epsilon_prime: config.epsilon_prime,
            };
            let stats = outage_ledger(&params, &secret_rates)?;
            for (row, flag) in trace.iter_mut().zip(&stats.flags) {
                row.outage = *flag;
            }
            let within = Some(stats.within_epsilon);
            (Some(stats), within)
        }
        SimMode::FullCsi => (None, None),
    };

    let per_superblock_key_balance = (1..=s_count)
        .map(|s| alice.generated_bits(s) as i64 - alice.consumed_bits(s) as i64)
        .collect();
    let generated_key_bits = (1..=s_count).map(|s| alice.generated_bits(s)).sum();
    let consumed_key_bits = (1..=s_count).map(|s| alice.consumed_bits(s)).sum();
    let total_uses = (s_count * b_count) as f64 * n_prime as f64;
    let report = SimReport {
        mode: config.mode,
        s_count,
        b_count,
        n_prime,
        delta: config.delta,
        pad_rate,
        mean_key_rate,
        enc_error_count: enc_errors,
        enc_error_rate: enc_errors as f64 / data_blocks as f64,
        cap_violation_count: cap_violations,
        outage_block_count: outage_stats.as_ref().map_or(0, |o| o.outage_blocks),
        outage_rate: outage_stats.as_ref().map_or(0.0, |o| o.outage_rate),
        outage_beta_fraction: outage_stats.map(|o| o.beta_fraction).unwrap_or_default(),
        outage_within_epsilon: within,
        decrypt_failures,
        per_superblock_key_balance,
        generated_key_bits,
        consumed_key_bits,
        data_bits,
        achieved_throughput: data_bits as f64 / total_uses,
        throughput_excluding_init: data_bits as f64 / (data_blocks as f64 * n_prime as f64),
        audit: alice.audit(),
    };
    Ok((report, trace))
}
