//! Link-level simulator and analytical calculator for multicast downlinks
//! whose transmitter is a programmable metasurface (PMS) fed by a small
//! number of RF chains.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] and [`config`]: system parameters, unit conversion, geometry.
//! * [`channel`]: user drops, path loss and i.i.d. Rayleigh fading.
//! * [`beamtraining`]: finite-resolution codebooks and the bisection search.
//! * [`estimation`]: equivalent-channel moments, pilots and MMSE estimates.
//! * [`rate`]: closed-form and Monte Carlo achievable rates.
//! * [`powercontrol`]: max-min power allocations.
//! * [`asymptotics`]: limiting multicast rates.
//! * [`harness`]: figure and sweep runners that emit CSV.

pub mod asymptotics;
pub mod beamtraining;
pub mod channel;
pub mod config;
pub mod estimation;
pub mod harness;
pub mod model;
pub mod powercontrol;
pub mod rate;
pub mod rng;

pub use num_complex::Complex64;
