//! Simulation and optimization toolkit for over-the-air computation
//! assisted by a simultaneously transmitting and reflecting
//! reconfigurable intelligent surface (STAR-RIS).
//!
//! A fusion center with an `N`-antenna uniform linear array recovers the
//! sum of `K` device readings from one superimposed uplink transmission.
//! A STAR-RIS with `M` elements serves devices on both sides of the
//! surface; each element's transmission and reflection phases are
//! coupled through a binary selection. Modules:
//!
//! * [`scenario`]: system parameters, deployment geometry, seeded RNG streams
//! * [`channel`]: Rician fading with distance path loss and array steering
//! * [`model`]: computation MSE, effective channels, signal-chain Monte Carlo
//! * [`aobpc`]: alternating optimization with binary-coupled phase updates
//! * [`baselines`]: conventional-RIS and relaxed-coupling benchmark schemes
//! * [`analysis`]: closed-form MSE, rank-one inverse recursion, gap witnesses

pub mod analysis;
pub mod aobpc;
pub mod baselines;
pub mod channel;
pub mod error;
pub mod model;
pub mod scenario;

pub use error::{Error, Result};
