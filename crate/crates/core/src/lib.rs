//! Delay-limited secrecy rates over block-fading wiretap channels.
//!
//! * [`channel`]: gain distributions and reproducible block draws.
//! * [`numerics`]: Monte Carlo expectations, bisection, fixed points.
//! * [`power`]: power-control families and budget calibration.
//! * [`bounds`]: converse and achievable delay-limited secrecy rates for full
//!   and main-only transmitter CSI, and the high-SNR limit.
//! * [`protocol`]: super-block simulation of key renewal with one-time-pad
//!   encryption, encoding errors and secrecy-outage accounting.
//! * [`experiment`]: JSON-configured SNR sweeps and simulation runs.

pub mod bounds;
pub mod channel;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod power;
pub mod protocol;

pub use error::{Error, Result};
