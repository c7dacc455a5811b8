//! Power-control policy families and their calibration to an average power
//! budget.
//!
//! Every family is `c` times a fixed shape function of the channel state, so
//! `E[P(h)] = c * E[shape(h)]` and calibration to `E[P] = p_bar` is the ratio
//! `p_bar / E[shape]` evaluated on the supplied draws.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelState, FadingSpec};
use crate::error::{Error, Result};
use crate::numerics::{mean_over, McConfig, Tolerance};

/// Number of thresholds in the truncated-inversion grid.
pub const THRESHOLD_GRID_LEN: usize = 16;
/// Grid spans `[THRESHOLD_GRID_LO, THRESHOLD_GRID_HI]` times the gain mean.
pub const THRESHOLD_GRID_LO: f64 = 1e-3;
pub const THRESHOLD_GRID_HI: f64 = 1.0;

/// Transmitter channel knowledge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Csi {
    /// Both `h_m` and `h_e` known.
    Full,
    /// Only `h_m` known.
    #[serde(rename = "main")]
    MainOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolicyFamily {
    Constant,
    /// `c / min(h_m, h_e)`
    InversionMin,
    /// `c / h_m`
    InversionMain,
    /// `c / min(h_m, h_e)` when `min >= threshold`, else silent.
    TruncatedInversionMin { threshold: f64 },
    /// `c / h_m` when `h_m >= threshold`, else silent.
    TruncatedInversionMain { threshold: f64 },
}

impl PolicyFamily {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyFamily::Constant => "constant",
            PolicyFamily::InversionMin => "inversion_min",
            PolicyFamily::InversionMain => "inversion_main",
            PolicyFamily::TruncatedInversionMin { .. } => "truncated_inversion_min",
            PolicyFamily::TruncatedInversionMain { .. } => "truncated_inversion_main",
        }
    }

    pub fn requires_full_csi(&self) -> bool {
        matches!(self, PolicyFamily::InversionMin | PolicyFamily::TruncatedInversionMin { .. })
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            PolicyFamily::TruncatedInversionMin { threshold }
            | PolicyFamily::TruncatedInversionMain { threshold } => Some(threshold),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threshold() {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Parameter(format!("threshold must be >= 0, got {t}")));
            }
        }
        Ok(())
    }

    /// Power at `c = 1`.
    pub fn shape(&self, state: &ChannelState) -> Result<f64> {
        let inverse = |g: f64, threshold: Option<f64>| match threshold {
            Some(t) if g < t => Ok(0.0),
            _ if g > 0.0 => Ok(1.0 / g),
            _ => Err(Error::Singularity(*state)),
        };
        match *self {
            PolicyFamily::Constant => Ok(1.0),
            PolicyFamily::InversionMin => inverse(state.min_gain(), None),
            PolicyFamily::InversionMain => inverse(state.h_m, None),
            PolicyFamily::TruncatedInversionMin { threshold } => {
                inverse(state.min_gain(), Some(threshold))
            }
            PolicyFamily::TruncatedInversionMain { threshold } => {
                inverse(state.h_m, Some(threshold))
            }
        }
    }

    /// Whether `E[shape]` is analytically finite under `spec`.
    fn shape_mean_finite(&self, spec: &FadingSpec) -> bool {
        match self {
            PolicyFamily::InversionMin => spec.inverse_min_finite(),
            PolicyFamily::InversionMain => spec.main.inverse_mean().is_some(),
            // truncated at zero behaves like the untruncated family
            PolicyFamily::TruncatedInversionMin { threshold } if *threshold == 0.0 => {
                spec.inverse_min_finite()
            }
            PolicyFamily::TruncatedInversionMain { threshold } if *threshold == 0.0 => {
                spec.main.inverse_mean().is_some()
            }
            _ => true,
        }
    }
}

impl fmt::Display for PolicyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.threshold() {
            Some(t) => write!(f, "{}(t={t})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// A policy family with its scale constant and CSI assumption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPolicy {
    #[serde(flatten)]
    pub family: PolicyFamily,
    pub c: f64,
    pub csi: Csi,
}

impl PowerPolicy {
    pub fn new(family: PolicyFamily, c: f64, csi: Csi) -> Result<Self> {
        check_csi(&family, csi)?;
        family.validate()?;
        if !(c.is_finite() && c >= 0.0) {
            return Err(Error::Parameter(format!("policy scale c must be >= 0, got {c}")));
        }
        Ok(Self { family, c, csi })
    }

    /// Instantaneous transmit power in `state`.
    pub fn evaluate(&self, state: &ChannelState) -> Result<f64> {
        Ok(self.c * self.family.shape(state)?)
    }
}

impl fmt::Display for PowerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} c={}", self.family, self.c)
    }
}

fn check_csi(family: &PolicyFamily, csi: Csi) -> Result<()> {
    if csi == Csi::MainOnly && family.requires_full_csi() {
        return Err(Error::CsiMismatch(family.name().into()));
    }
    Ok(())
}

/// Long-term average power constraint (unit noise variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerBudget {
    pub p_bar: f64,
}

impl PowerBudget {
    pub fn new(p_bar: f64) -> Result<Self> {
        if !(p_bar.is_finite() && p_bar > 0.0) {
            return Err(Error::Parameter(format!("p_bar must be positive, got {p_bar}")));
        }
        Ok(Self { p_bar })
    }

    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0))
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.p_bar.log10()
    }
}

/// Calibrates `family` on fresh draws from `spec`.
pub fn calibrate(
    family: PolicyFamily,
    csi: Csi,
    spec: &FadingSpec,
    budget: PowerBudget,
    mc: &McConfig,
    tol: &Tolerance,
) -> Result<PowerPolicy> {
    mc.validate()?;
    let draws = crate::channel::sample(spec, mc.seed, mc.samples)?;
    calibrate_on(family, csi, spec, &draws, budget, tol)
}

/// Calibrates `family` so that the sample mean of `P(h)` over `draws` equals
/// `budget.p_bar`.
pub fn calibrate_on(
    family: PolicyFamily,
    csi: Csi,
    spec: &FadingSpec,
    draws: &[ChannelState],
    budget: PowerBudget,
    tol: &Tolerance,
) -> Result<PowerPolicy> {
    check_csi(&family, csi)?;
    family.validate()?;
    tol.validate()?;
    let hint = || format!("E[P] for {family} is infinite under this fading; use a truncated family");
    if !family.shape_mean_finite(spec) {
        return Err(Error::Divergence { context: hint(), state: None });
    }
    let est = mean_over(draws, |s| family.shape(s).unwrap_or(f64::INFINITY)).map_err(|e| match e {
        Error::Divergence { state, .. } => Error::Divergence { context: hint(), state },
        other => other,
    })?;
    // the analytic check above decides divergence; a heavy but integrable tail
    // only widens the estimate
    if est.mean <= 0.0 {
        return Err(Error::Convergence(format!(
            "{family} allocates no power on any sampled state; lower the threshold"
        )));
    }
    let c = budget.p_bar / est.mean;
    let achieved = c * est.mean;
    if (achieved - budget.p_bar).abs() > tol.abs_tol * budget.p_bar {
        return Err(Error::Convergence(format!(
            "calibrated E[P] = {achieved} misses p_bar = {}",
            budget.p_bar
        )));
    }
    PowerPolicy::new(family, c, csi)
}

/// `THRESHOLD_GRID_LEN` log-spaced thresholds in `[1e-3, 1] * gain_mean`.
pub fn threshold_grid(gain_mean: f64) -> Vec<f64> {
    let (lo, hi) = (THRESHOLD_GRID_LO.ln(), THRESHOLD_GRID_HI.ln());
    let steps = (THRESHOLD_GRID_LEN - 1) as f64;
    (0..THRESHOLD_GRID_LEN)
        .map(|i| gain_mean * (lo + (hi - lo) * i as f64 / steps).exp())
        .collect()
}

/// Candidate families for a sweep.
///
/// Main-only families are always included; full CSI adds the families that
/// also look at `h_e`, so the full-CSI menu contains the main-only one.
/// Untruncated inversion is left out when its power expectation is infinite.
pub fn standard_menu(csi: Csi, spec: &FadingSpec) -> Vec<PolicyFamily> {
    let mut menu = vec![PolicyFamily::Constant];
    if PolicyFamily::InversionMain.shape_mean_finite(spec) {
        menu.push(PolicyFamily::InversionMain);
    }
    let main_mean = spec.main.mean();
    if main_mean > 0.0 {
        menu.extend(
            threshold_grid(main_mean)
                .into_iter()
                .map(|threshold| PolicyFamily::TruncatedInversionMain { threshold }),
        );
    }
    if csi == Csi::Full {
        if PolicyFamily::InversionMin.shape_mean_finite(spec) {
            menu.push(PolicyFamily::InversionMin);
        }
        let min_mean = main_mean.min(spec.eve.mean());
        if min_mean > 0.0 {
            menu.extend(
                threshold_grid(min_mean)
                    .into_iter()
                    .map(|threshold| PolicyFamily::TruncatedInversionMin { threshold }),
            );
        }
    }
    menu
}
