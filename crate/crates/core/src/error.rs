use thiserror::Error;

use crate::channel::ChannelState;

/// Errors raised by the numerical and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A distribution, policy or configuration parameter is out of range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// An integrand produced a non-finite or exploding value, or its
    /// expectation is known to be infinite.
    #[error("divergent expectation ({context}){}", state_suffix(.state))]
    Divergence {
        context: String,
        state: Option<ChannelState>,
    },

    /// `bisect` was handed an interval without a sign change.
    #[error("no sign change on [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi}")]
    Bracketing { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    /// Iteration budget exhausted, or a calibration that cannot converge.
    #[error("failed to converge: {0}")]
    Convergence(String),

    /// Untruncated channel inversion evaluated at a zero gain.
    #[error("power policy is singular at state {0}")]
    Singularity(ChannelState),

    /// A caller-side precondition was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A policy that needs the eavesdropper gain was used with main-only CSI.
    #[error("policy family `{0}` requires full CSI but main-only CSI was requested")]
    CsiMismatch(String),

    #[error("policy menu is empty")]
    EmptyMenu,

    /// Not enough unconsumed key bits for a one-time pad.
    #[error("insufficient key: need {needed} bits, {available} available")]
    InsufficientKey { needed: u64, available: u64 },
}

fn state_suffix(state: &Option<ChannelState>) -> String {
    match state {
        Some(s) => format!(" at state {s}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
