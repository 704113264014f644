//! Simulation and optimization toolkit for atomic frequency comb (AFC)
//! storage in inhomogeneously broadened absorbers.
//!
//! The crate is organised bottom-up:
//!
//! * [`spectral`]: frequency grids, sampled spectra, Fourier-series
//!   coefficients of periodic absorption profiles, Lorentzian convolution.
//! * [`efficiency`]: forward retrieval efficiency from comb coefficients and
//!   optimal square/Lorentzian comb widths under the no-gain constraint.
//! * [`propagation`]: causal linear-response propagation of a weak probe,
//!   echo extraction, the recursive echo-amplitude ODE and the spectral
//!   energy law.
//! * [`pulses`]: preparation pulse trains (sinc-weighted and pulse pairs) and
//!   their exact spectra.
//! * [`pumping`]: pumping rate, three-level rate equations and the engraved
//!   absorption comb.
//! * [`magnetic`]: Zeeman side combs, anti-combs, matching fields and
//!   superhyperfine broadening.
//! * [`fit`]: least-squares fit of a measured absorption spectrum with
//!   the pumping model.
//! * [`experiment`]: declarative experiment runner producing CSV tables and a
//!   JSON manifest.
//!
//! All detunings are angular frequencies (rad/s). Conversions from ordinary
//! frequency happen at the configuration boundary only.

pub mod efficiency;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod magnetic;
pub mod optimize;
pub mod propagation;
pub mod pulses;
pub mod pumping;
pub mod spectral;

pub use error::{AfcError, Result};

/// Converts an ordinary frequency in Hz to angular frequency in rad/s.
#[inline]
pub fn hz_to_angular(hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * hz
}

/// Converts an angular frequency in rad/s to ordinary frequency in Hz.
#[inline]
pub fn angular_to_hz(omega: f64) -> f64 {
    omega / (2.0 * std::f64::consts::PI)
}
