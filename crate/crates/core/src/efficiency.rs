//! Forward retrieval efficiency of an atomic frequency comb and the comb
//! shapes that maximize it under the no-gain constraint `0 ≤ α ≤ α_M`.
//!
//! The efficiency of the first echo only involves the mean absorption `α_0`
//! and the first modulation coefficient `α_{-1}`:
//! `η = |α_{-1} L|² e^{-α_0 L}`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AfcError, Result};
use crate::optimize::golden_section_maximize;
use crate::spectral::{fourier_coefficients, AbsorptionProfile, FrequencyGrid};

/// `4 e^{-2}`, the forward-retrieval bound without gain.
pub const FORWARD_EFFICIENCY_BOUND: f64 = 0.541_341_132_946_450_9;

/// Relative bracket tolerance of the width optimizers (in units of `π/T`).
pub const WIDTH_TOLERANCE: f64 = 1e-9;

/// Whether gain (negative mean absorption) is admissible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// Quantum storage: no population inversion, `α_0 ≥ 0`.
    #[default]
    NoGain,
    /// Classical storage: gain allowed for exploration.
    Classical,
}

/// Efficiency together with the optical-depth products it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub eta: f64,
    pub alpha0_l: f64,
    pub alpha1_l: f64,
    /// `true` when the comb width was optimized.
    pub optimum: bool,
}

/// `η = |α_{-1} L|² e^{-α_0 L}`.
pub fn efficiency_from_coefficients(alpha0: f64, alpha_minus1: Complex64, length: f64, mode: GainMode) -> Result<f64> {
    if !(length > 0.0) {
        return Err(AfcError::contract(format!("medium length must be positive, got {length}")));
    }
    if mode == GainMode::NoGain && alpha0 < 0.0 {
        return Err(AfcError::contract(format!(
            "mean absorption α_0 = {alpha0} is negative (gain) while population inversion is excluded"
        )));
    }
    let a1l = alpha_minus1.norm() * length;
    Ok(a1l * a1l * (-alpha0 * length).exp())
}

/// Efficiency of a sampled periodic profile of length `length`.
pub fn profile_efficiency(profile: &AbsorptionProfile, length: f64) -> Result<EfficiencyReport> {
    let c = fourier_coefficients(profile, 1)?;
    let eta = efficiency_from_coefficients(c.alpha0(), c.alpha_minus1(), length, GainMode::NoGain)?;
    Ok(EfficiencyReport {
        eta,
        alpha0_l: c.alpha0() * length,
        alpha1_l: c.alpha_minus1().norm() * length,
        optimum: false,
    })
}

/// `(α_0, α_{-1})` of a square comb of height `alpha_max` and half-width
/// `Γ`, given `ΓT`.
pub fn square_comb_coefficients(alpha_max: f64, gamma_t: f64) -> (f64, f64) {
    (alpha_max * gamma_t / PI, alpha_max * gamma_t.sin() / PI)
}

/// `(α_0, α_{-1})` of a periodic Lorentzian comb whose maximum equals
/// `alpha_max`, given the half-width `b` through `bT`.
///
/// The periodized Lorentzian `Σ_m b² / (b² + (Δ − 2πm/T)²)` has Fourier
/// coefficients `(bT/2) e^{-|n| bT}` and maximum `(bT/2) coth(bT/2)`;
/// rescaling the maximum to `α_M` gives `α_0 = α_M tanh(bT/2)` and
/// `α_{-1} = α_0 e^{-bT}`.
pub fn lorentzian_comb_coefficients(alpha_max: f64, half_width_t: f64) -> (f64, f64) {
    let a0 = alpha_max * (0.5 * half_width_t).tanh();
    (a0, a0 * (-half_width_t).exp())
}

/// Closed-form optimal square half-width `Γ_OPT = arctan(2π / α_M L) / T`.
pub fn square_comb_optimal_width(alpha_max_l: f64, period_time: f64) -> Result<f64> {
    check_depth(alpha_max_l)?;
    if !(period_time > 0.0) {
        return Err(AfcError::contract(format!("period time must be positive, got {period_time}")));
    }
    Ok((2.0 * PI / alpha_max_l).atan() / period_time)
}

/// Efficiency of the optimal square comb.
///
/// Evaluates `η` at `Γ_OPT`, i.e. `(α_M L/π)² sin²(Γ_OPT T) e^{-α_M L Γ_OPT T/π}`.
pub fn square_comb_optimal_efficiency(alpha_max_l: f64) -> Result<EfficiencyReport> {
    check_depth(alpha_max_l)?;
    let x = (2.0 * PI / alpha_max_l).atan();
    let (a0l, a1l) = square_comb_coefficients(alpha_max_l, x);
    Ok(EfficiencyReport { eta: a1l * a1l * (-a0l).exp(), alpha0_l: a0l, alpha1_l: a1l, optimum: true })
}

/// Square-comb efficiency at a given `ΓT`.
pub fn square_comb_efficiency(alpha_max_l: f64, gamma_t: f64) -> f64 {
    let (a0l, a1l) = square_comb_coefficients(alpha_max_l, gamma_t);
    a1l * a1l * (-a0l).exp()
}

/// Lorentzian-comb efficiency at a given half-width `bT`.
pub fn lorentzian_comb_efficiency(alpha_max_l: f64, half_width_t: f64) -> f64 {
    let (a0l, a1l) = lorentzian_comb_coefficients(alpha_max_l, half_width_t);
    a1l * a1l * (-a0l).exp()
}

/// Numerical maximizer of the square-comb efficiency over `ΓT ∈ (0, π)`.
pub fn square_comb_numeric_optimum(alpha_max_l: f64) -> Result<(f64, f64)> {
    check_depth(alpha_max_l)?;
    if alpha_max_l == 0.0 {
        return Ok((0.5 * PI, 0.0));
    }
    // ln η = 2 ln sin x − α_M L x/π + const keeps curvature well scaled.
    let m = golden_section_maximize(
        |x| 2.0 * x.sin().ln() - alpha_max_l * x / PI,
        0.0,
        PI,
        WIDTH_TOLERANCE * PI,
        500,
    )?;
    Ok((m.x, square_comb_efficiency(alpha_max_l, m.x)))
}

/// Optimum of a Lorentzian comb.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorentzianOptimum {
    /// Half-width at half-maximum of each peak (rad/s).
    pub half_width: f64,
    pub report: EfficiencyReport,
}

/// Numerically optimal half-width of a Lorentzian comb of peak height `α_M`.
pub fn lorentzian_comb_optimal_width(alpha_max_l: f64, period_time: f64) -> Result<LorentzianOptimum> {
    if !(alpha_max_l > 0.0) || !alpha_max_l.is_finite() {
        return Err(AfcError::contract(format!("optical depth must be positive, got {alpha_max_l}")));
    }
    if !(period_time > 0.0) {
        return Err(AfcError::contract(format!("period time must be positive, got {period_time}")));
    }
    let m = golden_section_maximize(
        |x| {
            let (a0l, a1l) = lorentzian_comb_coefficients(alpha_max_l, x);
            2.0 * a1l.ln() - a0l
        },
        0.0,
        PI,
        WIDTH_TOLERANCE * PI,
        500,
    )
    .map_err(|e| AfcError::Numeric(format!("Lorentzian width optimization at α_M L = {alpha_max_l}: {e}")))?;
    let (a0l, a1l) = lorentzian_comb_coefficients(alpha_max_l, m.x);
    if !(m.x > 0.0 && m.x < PI) {
        return Err(AfcError::Numeric(format!(
            "Lorentzian optimum hit the bracket edge (bT = {}) at α_M L = {alpha_max_l}",
            m.x
        )));
    }
    Ok(LorentzianOptimum {
        half_width: m.x / period_time,
        report: EfficiencyReport { eta: a1l * a1l * (-a0l).exp(), alpha0_l: a0l, alpha1_l: a1l, optimum: true },
    })
}

fn check_depth(alpha_max_l: f64) -> Result<()> {
    if !(alpha_max_l >= 0.0) || alpha_max_l.is_nan() {
        return Err(AfcError::contract(format!("optical depth must be ≥ 0, got {alpha_max_l}")));
    }
    Ok(())
}

/// Parametric comb shape.
#[derive(Debug, Clone, PartialEq)]
pub enum CombShape {
    Square,
    /// Periodic Lorentzian peaks, maximum rescaled to `α_M`.
    Lorentzian,
    /// A user-supplied profile, resampled onto the target grid.
    Custom(AbsorptionProfile),
}

/// Description of a comb.
#[derive(Debug, Clone, PartialEq)]
pub struct CombSpec {
    pub shape: CombShape,
    /// `α_M` (1/m).
    pub alpha_max: f64,
    /// Medium length `L` (m).
    pub length: f64,
    /// Comb delay `T` (s).
    pub period_time: f64,
    /// Half-width at half-maximum `Γ` (rad/s) for parametric shapes.
    pub width: f64,
}

impl CombSpec {
    pub fn alpha_max_l(&self) -> f64 {
        self.alpha_max * self.length
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_max >= 0.0 && self.length >= 0.0) {
            return Err(AfcError::contract("α_M and L must be non-negative"));
        }
        if !(self.period_time > 0.0) {
            return Err(AfcError::contract("comb delay T must be positive"));
        }
        let gt = self.width * self.period_time;
        match self.shape {
            CombShape::Square if !(0.0..PI).contains(&gt) => Err(AfcError::config(format!(
                "square comb with ΓT = {gt} overlaps its neighbours (need 0 ≤ ΓT < π)"
            ))),
            CombShape::Lorentzian if !(gt > 0.0) => {
                Err(AfcError::config(format!("Lorentzian comb needs a positive width (ΓT = {gt})")))
            }
            _ => Ok(()),
        }
    }
}

/// Samples a comb on a periodic grid whose period is `2π/T`.
///
/// Square teeth are centred on zero detuning; each sample takes the fraction
/// of its cell covered by the tooth, so the sampled `α_0` equals `α_M ΓT/π`
/// exactly and the edges carry a sub-cell bias only in higher orders.
pub fn build_comb_profile(spec: &CombSpec, grid: &FrequencyGrid) -> Result<AbsorptionProfile> {
    spec.validate()?;
    let period = grid
        .period()
        .ok_or_else(|| AfcError::contract("comb profiles need a periodic grid"))?;
    let expected = 2.0 * PI / spec.period_time;
    if ((period - expected) / expected).abs() > 1e-9 {
        return Err(AfcError::contract(format!(
            "grid period {period} does not match 2π/T = {expected}"
        )));
    }
    let h = grid.spacing();
    let wrap = |d: f64| (d + 0.5 * period).rem_euclid(period) - 0.5 * period;
    let values: Vec<f64> = match &spec.shape {
        CombShape::Square => {
            let g = spec.width;
            grid.points()
                .map(|d| {
                    let w = wrap(d);
                    // Cell [w − h/2, w + h/2] overlapped with [−Γ, Γ]; teeth
                    // of neighbouring periods cannot reach since Γ < P/2.
                    let lo = (w - 0.5 * h).max(-g);
                    let hi = (w + 0.5 * h).min(g);
                    spec.alpha_max * ((hi - lo).max(0.0) / h)
                })
                .collect()
        }
        CombShape::Lorentzian => {
            let bt = spec.width * spec.period_time;
            let q = (-bt).exp();
            let peak = (1.0 + q) / (1.0 - q);
            grid.points()
                .map(|d| {
                    let k = (1.0 - q * q) / (1.0 + q * q - 2.0 * q * (d * spec.period_time).cos());
                    spec.alpha_max * k / peak
                })
                .collect()
        }
        CombShape::Custom(profile) => grid.points().map(|d| profile.value_at(d)).collect(),
    };
    AbsorptionProfile::clamped(grid.clone(), values, spec.alpha_max)
}
