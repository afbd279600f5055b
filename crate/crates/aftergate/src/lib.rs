//! Monte Carlo toolkit for the after-gate faked-state attack on a gated
//! dual-APD QKD receiver.
//!
//! The receiver's detectors are gated: outside the Geiger windows they still
//! respond to bright light in linear mode, with a click threshold that an
//! eavesdropper can straddle. Eve intercepts every signal, then re-injects
//! bright pulses timed shortly *after* Bob's gates - full power when she
//! guessed his basis, which always clicks on her bit's detector, and two
//! half-power pulses when she didn't, which never click. Her costs are the
//! afterpulses her bright pulses breed and the dead-time ceiling on Bob's
//! click rate; this crate exists to quantify that trade across gate
//! frequency and line transmittance.
//!
//! Layering, bottom up: [`rng`] (splittable deterministic streams),
//! [`optics`] (thresholds, phase encoding, faked-state routing),
//! [`detector`] (gated APD with trap-level afterpulse memory and dead-time
//! modes), [`protocol`] (frames, sifting, QBER, the spacing monitor),
//! [`eve`] (intercept, pulse scheduling, rate calibration), [`calibration`]
//! + [`optim`] (afterpulse curve fits), [`harness`] (grid sweeps, export),
//! [`config`] / [`trace`] (file formats).

pub mod calibration;
pub mod config;
pub mod detector;
pub mod error;
pub mod eve;
pub mod harness;
pub mod optics;
pub mod optim;
pub mod protocol;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
