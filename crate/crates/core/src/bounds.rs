//! Delay-limited secrecy rate bounds for the block-fading wiretap channel.
//!
//! All rates are in bits per channel use (base-2 logarithms). Each bound is a
//! maximum over a menu of power-policy families; every family is calibrated
//! to the power budget on the same draws the bound is evaluated on, so menu
//! members and sweep points share common random numbers.
//!
//! Minima over the channel state ("delay-limited" terms) are taken over the
//! Monte Carlo sample. For untruncated inversion the minimum is known in
//! closed form and that value is used instead.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample, ChannelState, FadingSpec, CHUNK_LEN};
use crate::error::{Error, Result};
use crate::numerics::{expect, fixed_point_nonincreasing, mean_over, Estimate, McConfig, Tolerance};
use crate::power::{calibrate_on, Csi, PolicyFamily, PowerBudget, PowerPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Full-CSI converse: `max_P min{E[R_s]^+, min_h log(1 + P h_m)}`.
    UpperFull,
    /// Full-CSI two-stage (key renewal + one-time pad) achievable rate.
    LowerFull,
    /// Main-CSI converse with `P = P(h_m)`.
    UpperMain,
    /// Main-CSI epsilon-achievable rate (fixed point).
    LowerMainEps,
    /// High-SNR limit `E[log(h_m/h_e); h_m > h_e]`.
    HighSnrLimit,
}

impl BoundKind {
    pub const ALL: [BoundKind; 5] = [
        BoundKind::UpperFull,
        BoundKind::LowerFull,
        BoundKind::UpperMain,
        BoundKind::LowerMainEps,
        BoundKind::HighSnrLimit,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::UpperFull => "upper_full",
            BoundKind::LowerFull => "lower_full",
            BoundKind::UpperMain => "upper_main",
            BoundKind::LowerMainEps => "lower_main_eps",
            BoundKind::HighSnrLimit => "high_snr_limit",
        }
    }
}

impl fmt::Display for BoundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Diagnostics attached to a bound value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFlag {
    /// `E[1/min(h_m, h_e)]` is infinite, so the high-SNR limit is not
    /// guaranteed to be achievable.
    InverseMinMomentInfinite,
    /// One Monte Carlo sample dominated the sum.
    UnstableEstimate,
}

/// One evaluated bound point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub kind: BoundKind,
    /// `None` for the SNR-independent high-SNR limit.
    pub snr_db: Option<f64>,
    pub p_bar: Option<f64>,
    pub value: f64,
    pub standard_error: f64,
    /// The menu member attaining the maximum.
    pub policy: Option<PowerPolicy>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<BoundFlag>,
}

pub const CSV_HEADER: &str = "kind,snr_db,p_bar,value,stderr,policy_family,policy_c";

impl BoundResult {
    /// Row matching [`CSV_HEADER`]. Absent SNR fields are written as `inf`,
    /// absent policies as empty fields.
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "inf".to_string(), |x| x.to_string());
        let (family, c) = match &self.policy {
            Some(p) => (p.family.to_string(), p.c.to_string()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{}",
            self.kind,
            opt(self.snr_db),
            opt(self.p_bar),
            self.value,
            self.standard_error,
            family,
            c
        )
    }
}

/// Choice of the auxiliary function `q(h) >= h_e` that splits the secure rate
/// between key sharing and direct secure data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QChoice {
    /// `q(h) = h_e`: all secure rate goes to the key (`R_2 = 0`).
    #[default]
    Eavesdropper,
    /// A constant at least the essential supremum of `h_e`.
    Constant(f64),
}

/// Per-state rate split of the full-CSI two-stage scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation {
    /// Instantaneous secrecy rate.
    pub r_s: f64,
    /// Key-sharing rate.
    pub r_k: f64,
    /// One-time-pad data rate.
    pub r_1: f64,
    /// Directly secured data rate.
    pub r_2: f64,
    /// Extra randomization rate.
    pub r_x: f64,
}

fn log1p2(x: f64) -> f64 {
    (1.0 + x).log2()
}

/// `(log(1 + P h_m), log(1 + P h_e))`, NaN on a policy singularity.
fn link_rates(policy: &PowerPolicy, s: &ChannelState) -> (f64, f64) {
    match policy.evaluate(s) {
        Ok(p) => (log1p2(p * s.h_m), log1p2(p * s.h_e)),
        Err(_) => (f64::NAN, f64::NAN),
    }
}

/// `rate <= cap` up to floating-point rounding of the cap.
pub fn within_cap(rate: f64, cap: f64) -> bool {
    rate <= cap + 1e-12 * cap.abs().max(1.0)
}

/// Rate split for one state; `r1_value` must respect the pointwise cap
/// `min{log(1 + P h_m), log(1 + P h_e)}`.
pub fn allocate_rates_full(
    policy: &PowerPolicy,
    state: &ChannelState,
    q_value: f64,
    r1_value: f64,
) -> Result<RateAllocation> {
    if !(q_value >= state.h_e) {
        return Err(Error::Precondition(format!("q = {q_value} below h_e = {}", state.h_e)));
    }
    if !(r1_value >= 0.0) {
        return Err(Error::Precondition(format!("r_1 = {r1_value} is negative")));
    }
    let p = policy.evaluate(state)?;
    let a = log1p2(p * state.h_m);
    let e = log1p2(p * state.h_e);
    let cap = a.min(e);
    if !within_cap(r1_value, cap) {
        return Err(Error::Precondition(format!("r_1 = {r1_value} exceeds pointwise cap {cap}")));
    }
    let r_1 = r1_value.min(cap);
    let r_s = (a - e).max(0.0);
    let r_k = (a - log1p2(p * q_value)).max(0.0);
    Ok(RateAllocation { r_s, r_k, r_1, r_2: (r_s - r_k).max(0.0), r_x: cap - r_1 })
}

/// One menu member's contribution to a bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyBound {
    pub policy: PowerPolicy,
    pub value: f64,
    pub standard_error: f64,
    pub unstable: bool,
}

fn tag_policy(err: Error, family: &PolicyFamily) -> Error {
    match err {
        Error::Divergence { context, state } => Error::Divergence {
            context: format!("policy {family}: {context}"),
            state,
        },
        Error::Singularity(state) => Error::Divergence {
            context: format!("policy {family} is singular"),
            state: Some(state),
        },
        other => other,
    }
}

/// Parallel minimum of `f` over the draws.
fn sample_min<F>(draws: &[ChannelState], f: F) -> f64
where
    F: Fn(&ChannelState) -> f64 + Sync + Send,
{
    draws
        .par_iter()
        .map(f)
        .reduce(|| f64::INFINITY, |a, b| a.min(b))
}

/// Deterministic parallel sum (per-chunk partial sums added in chunk order).
fn ordered_sum(values: &[f64], f: impl Fn(f64) -> f64 + Sync) -> f64 {
    let parts: Vec<f64> = values
        .par_chunks(CHUNK_LEN)
        .map(|c| c.iter().map(|&v| f(v)).sum::<f64>())
        .collect();
    parts.iter().sum()
}

/// Pre-drawn channel states shared by every bound and policy (common random
/// numbers).
#[derive(Debug, Clone)]
pub struct Evaluator {
    spec: FadingSpec,
    draws: Vec<ChannelState>,
    tol: Tolerance,
}

impl Evaluator {
    pub fn new(spec: &FadingSpec, mc: &McConfig, tol: Tolerance) -> Result<Self> {
        mc.validate()?;
        tol.validate()?;
        Ok(Self { spec: *spec, draws: sample(spec, mc.seed, mc.samples)?, tol })
    }

    pub fn from_draws(spec: &FadingSpec, draws: Vec<ChannelState>, tol: Tolerance) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::Parameter("evaluator needs at least one draw".into()));
        }
        tol.validate()?;
        Ok(Self { spec: *spec, draws, tol })
    }

    pub fn spec(&self) -> &FadingSpec {
        &self.spec
    }

    pub fn draws(&self) -> &[ChannelState] {
        &self.draws
    }

    pub fn tolerance(&self) -> &Tolerance {
        &self.tol
    }

    pub fn calibrate(&self, family: PolicyFamily, csi: Csi, budget: PowerBudget) -> Result<PowerPolicy> {
        calibrate_on(family, csi, &self.spec, &self.draws, budget, &self.tol)
            .map_err(|e| tag_policy(e, &family))
    }

    /// `min_h log(1 + P h_m)` over the sample.
    pub fn delay_floor(&self, policy: &PowerPolicy) -> f64 {
        match policy.family {
            PolicyFamily::InversionMain => log1p2(policy.c),
            PolicyFamily::InversionMin if self.draws.iter().any(|s| s.h_m <= s.h_e) => {
                log1p2(policy.c)
            }
            _ => sample_min(&self.draws, |s| link_rates(policy, s).0),
        }
    }

    /// `min_h min{log(1 + P h_m), log(1 + P h_e)}` over the sample.
    pub fn cap_floor(&self, policy: &PowerPolicy) -> f64 {
        match policy.family {
            // P * min(h_m, h_e) = c identically
            PolicyFamily::InversionMin => log1p2(policy.c),
            _ => sample_min(&self.draws, |s| {
                let (a, e) = link_rates(policy, s);
                a.min(e)
            }),
        }
    }

    /// `E[log(1 + P h_m) - log(1 + P h_e)]^+` with the positive part taken
    /// per sample.
    pub fn secrecy_term(&self, policy: &PowerPolicy) -> Result<Estimate> {
        mean_over(&self.draws, |s| {
            let (a, e) = link_rates(policy, s);
            (a - e).max(0.0)
        })
        .map_err(|e| tag_policy(e, &policy.family))
    }

    /// Converse value `min{E[R_s]^+, min_h log(1 + P h_m)}` for one policy.
    pub fn upper_for(&self, policy: &PowerPolicy) -> Result<PolicyBound> {
        let secrecy = self.secrecy_term(policy)?;
        let floor = self.delay_floor(policy);
        let (value, standard_error) = if secrecy.mean <= floor {
            (secrecy.mean, secrecy.std_error)
        } else {
            (floor, 0.0)
        };
        Ok(PolicyBound { policy: *policy, value, standard_error, unstable: secrecy.unstable })
    }

    fn q_value(&self, q: QChoice, s: &ChannelState) -> f64 {
        match q {
            QChoice::Eavesdropper => s.h_e,
            QChoice::Constant(v) => v,
        }
    }

    fn check_q(&self, q: QChoice) -> Result<()> {
        if let QChoice::Constant(v) = q {
            let sup = self.spec.eve.ess_sup();
            let sample_sup = self.draws.iter().fold(0.0f64, |m, s| m.max(s.h_e));
            if !(v >= sup && v >= sample_sup) {
                return Err(Error::Precondition(format!(
                    "constant q = {v} must be >= ess sup h_e = {sup}"
                )));
            }
        }
        Ok(())
    }

    /// Two-stage achievable rate for one policy.
    ///
    /// `R_1` is the largest constant satisfying `R_1 <= E[R_k]` and the
    /// pointwise cap; the value is `R_1 + min_h R_2(h)`.
    pub fn lower_full_for(&self, policy: &PowerPolicy, q: QChoice) -> Result<PolicyBound> {
        self.check_q(q)?;
        let key = mean_over(&self.draws, |s| {
            let (a, _) = link_rates(policy, s);
            let p = policy.evaluate(s).unwrap_or(f64::NAN);
            (a - log1p2(p * self.q_value(q, s))).max(0.0)
        })
        .map_err(|e| tag_policy(e, &policy.family))?;
        let cap = self.cap_floor(policy);
        let direct_floor = match q {
            QChoice::Eavesdropper => 0.0,
            QChoice::Constant(v) => sample_min(&self.draws, |s| {
                let (a, e) = link_rates(policy, s);
                let p = policy.evaluate(s).unwrap_or(f64::NAN);
                let r_s = (a - e).max(0.0);
                let r_k = (a - log1p2(p * v)).max(0.0);
                (r_s - r_k).max(0.0)
            }),
        };
        let (r_1, standard_error) = if key.mean <= cap {
            (key.mean, key.std_error)
        } else {
            (cap, 0.0)
        };
        Ok(PolicyBound {
            policy: *policy,
            value: r_1.max(0.0) + direct_floor,
            standard_error,
            unstable: key.unstable,
        })
    }

    /// Main-CSI fixed point `R = min{E[log(1+P h_m) - R - log(1+P h_e)]^+,
    /// min_h log(1+P h_m)}` for one policy, with the secrecy-term estimate
    /// at the root.
    pub fn fixed_point_for(&self, policy: &PowerPolicy) -> Result<(PolicyBound, f64)> {
        let gaps: Vec<f64> = self
            .draws
            .par_iter()
            .map(|s| {
                let (a, e) = link_rates(policy, s);
                a - e
            })
            .collect();
        if let Some(i) = gaps.iter().position(|g| !g.is_finite()) {
            return Err(tag_policy(Error::Singularity(self.draws[i]), &policy.family));
        }
        let floor = self.delay_floor(policy);
        let n = gaps.len() as f64;
        let rhs = |r: f64| (ordered_sum(&gaps, |g| (g - r).max(0.0)) / n).min(floor);
        let root = fixed_point_nonincreasing(rhs, &self.tol)?;
        let term = mean_over(&self.draws, |s| {
            let (a, e) = link_rates(policy, s);
            (a - root - e).max(0.0)
        })?;
        let standard_error = if term.mean <= floor { term.std_error } else { 0.0 };
        Ok((
            PolicyBound { policy: *policy, value: root, standard_error, unstable: term.unstable },
            rhs(root),
        ))
    }

    fn best<F>(&self, menu: &[PolicyFamily], csi: Csi, budget: PowerBudget, eval: F) -> Result<PolicyBound>
    where
        F: Fn(&PowerPolicy) -> Result<PolicyBound> + Sync,
    {
        if menu.is_empty() {
            return Err(Error::EmptyMenu);
        }
        let results: Vec<Result<PolicyBound>> = menu
            .par_iter()
            .map(|family| {
                let policy = self.calibrate(*family, csi, budget)?;
                eval(&policy)
            })
            .collect();
        let mut best: Option<PolicyBound> = None;
        for r in results {
            let r = r?;
            if best.as_ref().is_none_or(|b| r.value > b.value) {
                best = Some(r);
            }
        }
        Ok(best.expect("menu is nonempty"))
    }

    fn finish(&self, kind: BoundKind, budget: PowerBudget, b: PolicyBound) -> BoundResult {
        let mut flags = Vec::new();
        if b.unstable {
            flags.push(BoundFlag::UnstableEstimate);
        }
        BoundResult {
            kind,
            snr_db: Some(budget.snr_db()),
            p_bar: Some(budget.p_bar),
            value: b.value.max(0.0),
            standard_error: b.standard_error,
            policy: Some(b.policy),
            flags,
        }
    }

    pub fn upper_full(&self, budget: PowerBudget, menu: &[PolicyFamily]) -> Result<BoundResult> {
        let b = self.best(menu, Csi::Full, budget, |p| self.upper_for(p))?;
        Ok(self.finish(BoundKind::UpperFull, budget, b))
    }

    pub fn lower_full(&self, budget: PowerBudget, menu: &[PolicyFamily], q: QChoice) -> Result<BoundResult> {
        self.check_q(q)?;
        let b = self.best(menu, Csi::Full, budget, |p| self.lower_full_for(p, q))?;
        Ok(self.finish(BoundKind::LowerFull, budget, b))
    }

    pub fn upper_main(&self, budget: PowerBudget, menu: &[PolicyFamily]) -> Result<BoundResult> {
        let b = self.best(menu, Csi::MainOnly, budget, |p| self.upper_for(p))?;
        Ok(self.finish(BoundKind::UpperMain, budget, b))
    }

    pub fn lower_main_fixed_point(&self, budget: PowerBudget, menu: &[PolicyFamily]) -> Result<BoundResult> {
        if menu.is_empty() {
            return Err(Error::EmptyMenu);
        }
        // R* <= rhs(0) = converse value, so a member whose converse value
        // does not beat the incumbent cannot win.
        let uppers: Vec<Result<PolicyBound>> = menu
            .par_iter()
            .map(|family| {
                let policy = self.calibrate(*family, Csi::MainOnly, budget)?;
                self.upper_for(&policy)
            })
            .collect();
        let mut best: Option<PolicyBound> = None;
        for upper in uppers {
            let upper = upper?;
            if best.as_ref().is_some_and(|b| upper.value <= b.value) {
                continue;
            }
            let (candidate, _) = self.fixed_point_for(&upper.policy)?;
            if best.as_ref().is_none_or(|b| candidate.value > b.value) {
                best = Some(candidate);
            }
        }
        Ok(self.finish(BoundKind::LowerMainEps, budget, best.expect("menu is nonempty")))
    }

    /// High-SNR limit on the shared draws.
    pub fn high_snr_limit(&self) -> Result<BoundResult> {
        let est = mean_over(&self.draws, high_snr_integrand)?;
        Ok(high_snr_result(&self.spec, est))
    }
}

fn high_snr_integrand(s: &ChannelState) -> f64 {
    if s.h_m > s.h_e {
        (s.h_m / s.h_e).log2()
    } else {
        0.0
    }
}

fn high_snr_result(spec: &FadingSpec, est: Estimate) -> BoundResult {
    let mut flags = Vec::new();
    if !spec.inverse_min_finite() {
        flags.push(BoundFlag::InverseMinMomentInfinite);
    }
    if est.unstable {
        flags.push(BoundFlag::UnstableEstimate);
    }
    BoundResult {
        kind: BoundKind::HighSnrLimit,
        snr_db: None,
        p_bar: None,
        value: est.mean,
        standard_error: est.std_error,
        policy: None,
        flags,
    }
}

pub fn upper_full(
    spec: &FadingSpec,
    budget: PowerBudget,
    mc: &McConfig,
    menu: &[PolicyFamily],
) -> Result<BoundResult> {
    Evaluator::new(spec, mc, Tolerance::default())?.upper_full(budget, menu)
}

pub fn lower_full(
    spec: &FadingSpec,
    budget: PowerBudget,
    mc: &McConfig,
    menu: &[PolicyFamily],
    q: QChoice,
) -> Result<BoundResult> {
    Evaluator::new(spec, mc, Tolerance::default())?.lower_full(budget, menu, q)
}

pub fn upper_main(
    spec: &FadingSpec,
    budget: PowerBudget,
    mc: &McConfig,
    menu: &[PolicyFamily],
) -> Result<BoundResult> {
    Evaluator::new(spec, mc, Tolerance::default())?.upper_main(budget, menu)
}

pub fn lower_main_fixed_point(
    spec: &FadingSpec,
    budget: PowerBudget,
    mc: &McConfig,
    menu: &[PolicyFamily],
    tol: &Tolerance,
) -> Result<BoundResult> {
    Evaluator::new(spec, mc, *tol)?.lower_main_fixed_point(budget, menu)
}

/// `E[log(h_m / h_e); h_m > h_e]`, streamed so large sample counts stay cheap.
pub fn high_snr_limit(spec: &FadingSpec, mc: &McConfig) -> Result<BoundResult> {
    let est = expect(high_snr_integrand, spec, mc)?;
    Ok(high_snr_result(spec, est))
}
