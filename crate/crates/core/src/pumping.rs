//! Frequency-selective optical pumping of a three-level system and the
//! absorption comb it engraves.
//!
//! Levels: 1 (ground, probed), 2 (excited, lifetime `T₁`, branching `r`
//! back to 1) and 3 (shelving, relaxing to 1 with `T_Z`). A repeated
//! preparation pattern of duration `T_p` acts as a continuous rate
//!
//! ```text
//! R(Δ) = power_scale / (2 T_p) · (L̂ ⊗ |Ẽ|²)(Δ)
//! ```
//!
//! with `L̂` the unit-area Lorentzian (the `1/π` of the unnormalized line
//! shape is folded into the prefactor). The comb is assumed uniform along
//! the crystal: pump depletion is not modelled.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::profile_efficiency;
use crate::error::{AfcError, Result};
use crate::pulses::{sequence_spectrum, PulseSequence};
use crate::spectral::{fourier_coefficients, lorentzian_convolve, AbsorptionProfile, FrequencyGrid, SampledSpectrum};

/// Padding of the open pump grid on each side, in comb periods.
pub const PUMP_PAD_PERIODS: usize = 20;

/// Total population per frequency bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationNormalization {
    /// `N = 2`: two thermally equal ground sublevels, so an unpumped
    /// sample absorbs `α_M`.
    #[default]
    TwoGroundSublevels,
    /// `N = 1`, the literal closed form; unpumped absorption is `α_M/2`.
    Literal,
}

impl PopulationNormalization {
    pub fn total(self) -> f64 {
        match self {
            PopulationNormalization::TwoGroundSublevels => 2.0,
            PopulationNormalization::Literal => 1.0,
        }
    }
}

/// Pumping parameters. None of the lifetimes has a default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpConfig {
    /// Excited-state lifetime `T₁` (s).
    pub t1: f64,
    /// Shelving-state lifetime `T_Z` (s).
    pub tz: f64,
    /// Branching ratio from 2 back to 1.
    pub r: f64,
    /// Pattern duration `T_p` (s).
    pub tp: f64,
    /// Homogeneous half-width `γ` (rad/s).
    pub gamma: f64,
    /// Multiplier on `|Ẽ|²`, in (rad/s)² for relative pulse amplitudes.
    pub power_scale: f64,
    #[serde(default)]
    pub normalization: PopulationNormalization,
}

impl PumpConfig {
    /// `ε = 1/((1−r) T_Z/T₁ + 3)`.
    pub fn epsilon(&self) -> f64 {
        1.0 / ((1.0 - self.r) * self.tz / self.t1 + 3.0)
    }

    pub fn with_power(mut self, power_scale: f64) -> Self {
        self.power_scale = power_scale;
        self
    }

    /// Lists every violated precondition.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("T1", self.t1), ("TZ", self.tz), ("Tp", self.tp), ("gamma", self.gamma)] {
            if !(x > 0.0) || !x.is_finite() {
                v.push(format!("{name} must be positive and finite (got {x})"));
            }
        }
        if !(0.0..=1.0).contains(&self.r) {
            v.push(format!("branching ratio r must lie in [0, 1] (got {})", self.r));
        }
        if !(self.power_scale >= 0.0) || !self.power_scale.is_finite() {
            v.push(format!("power scale must be ≥ 0 (got {})", self.power_scale));
        }
        // Steady absorption falls with R only if 2r − 1 ≤ (1−r) T_Z/T₁;
        // otherwise pumping piles population back into level 1.
        if v.is_empty() && 2.0 * self.r - 1.0 > (1.0 - self.r) * self.tz / self.t1 {
            v.push(format!(
                "r = {} with T_Z/T_1 = {} makes pumping raise absorption above α_M (need 2r − 1 ≤ (1−r) T_Z/T_1)",
                self.r,
                self.tz / self.t1
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(AfcError::config(v.join("; ")))
        }
    }
}

/// `R(Δ)` from a power spectrum `|Ẽ|²` (s², relative amplitudes).
pub fn pumping_rate(power_spectrum: &SampledSpectrum, config: &PumpConfig) -> Result<SampledSpectrum> {
    config.validate()?;
    if let Some((i, v)) = power_spectrum.values.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(AfcError::contract(format!("power spectrum bin {i} is negative or NaN ({v})")));
    }
    let mut out = lorentzian_convolve(power_spectrum, config.gamma)?;
    let k = config.power_scale / (2.0 * config.tp);
    for v in out.values.iter_mut() {
        // FFT round-off can leave −1e-30 where the spectrum vanishes.
        *v = (*v * k).max(0.0);
    }
    Ok(out)
}

/// `n₁ᴾ / N` as a function of `x = R T₁`, after the excited state has
/// decayed: `((1+r)x + 2) / (x/ε + 4)`.
pub fn relative_absorption(x: f64, r: f64, epsilon: f64) -> f64 {
    if x.is_infinite() {
        return (1.0 + r) * epsilon;
    }
    ((1.0 + r) * x + 2.0) / (x / epsilon + 4.0)
}

/// Closed-form steady state after the post-sequence decay,
/// `α = α_M N ((1+r)RT₁ + 2)/(RT₁/ε + 4)`.
pub fn steady_state_absorption(rate: &SampledSpectrum, config: &PumpConfig, alpha_max: f64) -> Result<AbsorptionProfile> {
    config.validate()?;
    let eps = config.epsilon();
    let n = config.normalization.total();
    let values: Vec<f64> = rate
        .values
        .iter()
        .map(|&rv| alpha_max * n * relative_absorption(rv * config.t1, config.r, eps))
        .collect();
    if let Some(v) = values.iter().find(|v| **v > alpha_max * (1.0 + 1e-12)) {
        return Err(AfcError::Numeric(format!("steady absorption {v} exceeds α_M = {alpha_max}")));
    }
    AbsorptionProfile::clamped(rate.grid.clone(), values, alpha_max)
}

/// Per-bin populations.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationState {
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub n3: Vec<f64>,
    /// `N = n₁ + n₂ + n₃` in every bin.
    pub total: f64,
}

impl PopulationState {
    /// `n₁ = n₃ = N/2`, `n₂ = 0` in `bins` bins.
    pub fn thermal(bins: usize, total: f64) -> Self {
        Self { n1: vec![0.5 * total; bins], n2: vec![0.0; bins], n3: vec![0.5 * total; bins], total }
    }

    /// Ground population after the excited state decays, `n₁ + r n₂`.
    pub fn n1_after_decay(&self, r: f64) -> Vec<f64> {
        self.n1.iter().zip(&self.n2).map(|(a, b)| a + r * b).collect()
    }
}

/// Linear part and drift of the reduced system in `(n₁, n₂)` with
/// `n₃ = N − n₁ − n₂`.
fn reduced_system(rate: f64, c: &PumpConfig, total: f64) -> ([[f64; 2]; 2], [f64; 2]) {
    let h = 0.5 * rate;
    let a = [
        [-(h + 2.0 / c.tz), h + c.r / c.t1 - 1.0 / c.tz],
        [h, -(h + 1.0 / c.t1)],
    ];
    (a, [total / c.tz, 0.0])
}

/// Fixed point `A y* + b = 0`, solved directly.
fn fixed_point(a: &[[f64; 2]; 2], b: &[f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [(-b[0] * a[1][1] + b[1] * a[0][1]) / det, (-b[1] * a[0][0] + b[0] * a[1][0]) / det]
}

/// `e^{At} v` for a 2×2 matrix with real negative-real-part spectrum,
/// written so that no intermediate grows.
fn expm_apply(a: &[[f64; 2]; 2], t: f64, v: [f64; 2]) -> [f64; 2] {
    let s = 0.5 * (a[0][0] + a[1][1]);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let disc = s * s - det;
    // e^{At} = c0 I + c1 (A − sI)
    let (c0, c1) = if disc >= 0.0 {
        let q = disc.sqrt();
        let (e1, e2) = (((s + q) * t).exp(), ((s - q) * t).exp());
        let c1 = if q * t < 1e-6 { (s * t).exp() * t * (1.0 + (q * t).powi(2) / 6.0) } else { (e1 - e2) / (2.0 * q) };
        (0.5 * (e1 + e2), c1)
    } else {
        let w = (-disc).sqrt();
        let es = (s * t).exp();
        let c1 = if w * t < 1e-6 { es * t } else { es * (w * t).sin() / w };
        (es * (w * t).cos(), c1)
    };
    let m = [[a[0][0] - s, a[0][1]], [a[1][0], a[1][1] - s]];
    [
        c0 * v[0] + c1 * (m[0][0] * v[0] + m[0][1] * v[1]),
        c0 * v[1] + c1 * (m[1][0] * v[0] + m[1][1] * v[1]),
    ]
}

/// Advances one bin by `duration` under constant `rate`, exactly.
pub fn advance_bin(n1: f64, n2: f64, rate: f64, config: &PumpConfig, total: f64, duration: f64) -> (f64, f64, f64) {
    let (a, b) = reduced_system(rate, config, total);
    let star = fixed_point(&a, &b);
    let d = expm_apply(&a, duration, [n1 - star[0], n2 - star[1]]);
    let (m1, m2) = (star[0] + d[0], star[1] + d[1]);
    (m1, m2, total - m1 - m2)
}

/// Advances every bin of `state` by `duration` under `rate`.
pub fn evolve(state: &PopulationState, rate: &[f64], config: &PumpConfig, duration: f64) -> Result<PopulationState> {
    config.validate()?;
    if !(duration >= 0.0) || !duration.is_finite() {
        return Err(AfcError::contract(format!("duration must be ≥ 0, got {duration}")));
    }
    if rate.len() != state.n1.len() {
        return Err(AfcError::contract("rate and population arrays differ in length"));
    }
    let total = state.total;
    let res: Vec<(f64, f64, f64)> = (0..rate.len())
        .into_par_iter()
        .map(|i| advance_bin(state.n1[i], state.n2[i], rate[i], config, total, duration))
        .collect();
    if let Some(i) = res.iter().position(|(a, b, c)| !(a.is_finite() && b.is_finite() && c.is_finite())) {
        return Err(AfcError::Numeric(format!("population update produced a non-finite value in bin {i}")));
    }
    Ok(PopulationState {
        n1: res.iter().map(|r| r.0).collect(),
        n2: res.iter().map(|r| r.1).collect(),
        n3: res.iter().map(|r| r.2).collect(),
        total,
    })
}

/// Integrates the rate equations from the thermal state for `duration`.
pub fn integrate_rate_equations(rate: &SampledSpectrum, config: &PumpConfig, duration: f64) -> Result<PopulationState> {
    if !(duration > 0.0) {
        return Err(AfcError::contract(format!("duration must be positive, got {duration}")));
    }
    let start = PopulationState::thermal(rate.values.len(), config.normalization.total());
    evolve(&start, &rate.values, config, duration)
}

/// Pump for `repetitions · T_p`, then wait `wait` seconds in the dark.
pub fn run_schedule(rate: &SampledSpectrum, config: &PumpConfig, repetitions: usize, wait: f64) -> Result<PopulationState> {
    let pumped = integrate_rate_equations(rate, config, repetitions as f64 * config.tp)?;
    evolve(&pumped, &vec![0.0; rate.values.len()], config, wait)
}

/// `|Ẽ|²` of a sequence on `grid` (power scale not applied).
pub fn power_spectrum(seq: &PulseSequence, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    let s = sequence_spectrum(seq, grid)?;
    SampledSpectrum::new(grid.clone(), s.power)
}

/// Pumping rate of `seq` evaluated on `grid`.
///
/// The spectrum is computed on an open grid padded by
/// [`PUMP_PAD_PERIODS`] comb periods on both sides with the same spacing and
/// aligned samples, convolved there, and read back on `grid`.
pub fn sequence_pumping_rate(seq: &PulseSequence, config: &PumpConfig, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    config.validate()?;
    let h = grid.spacing();
    if h > 0.5 * config.gamma {
        return Err(AfcError::Resolution(format!(
            "grid spacing {h:e} rad/s is coarser than γ/2 = {:e} rad/s",
            0.5 * config.gamma
        )));
    }
    let period = 2.0 * PI / seq.spacing;
    let pad_points = (PUMP_PAD_PERIODS as f64 * period / h).ceil() as usize;
    let n = grid.len() + 2 * pad_points;
    let start = grid.delta_min() - pad_points as f64 * h;
    let open = FrequencyGrid::new(start, start + (n - 1) as f64 * h, n)?;
    let values: Vec<f64> = (0..n).into_par_iter().map(|i| seq.field_spectrum(open.point(i)).norm_sqr()).collect();
    let rate = pumping_rate(&SampledSpectrum::new(open, values)?, config)?;
    SampledSpectrum::new(grid.clone(), rate.values[pad_points..pad_points + grid.len()].to_vec())
}

/// Engraved absorption profile on `grid` for `seq` under `config`.
pub fn predict_comb(seq: &PulseSequence, config: &PumpConfig, alpha_max: f64, grid: &FrequencyGrid) -> Result<AbsorptionProfile> {
    let rate = sequence_pumping_rate(seq, config, grid)?;
    steady_state_absorption(&rate, config, alpha_max)
}

/// `power_scale` at which the peak of `R T₁` over `grid` equals `target`.
pub fn power_scale_for_peak_rate(seq: &PulseSequence, config: &PumpConfig, grid: &FrequencyGrid, target: f64) -> Result<f64> {
    let unit = sequence_pumping_rate(seq, &config.with_power(1.0), grid)?;
    let peak = unit.max() * config.t1;
    if !(peak > 0.0) {
        return Err(AfcError::config(format!("sequence '{}' does not pump inside the grid", seq.label)));
    }
    Ok(target / peak)
}

/// One point of an efficiency-versus-power curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerPoint {
    pub power_scale: f64,
    pub mean_transmission: f64,
    pub eta: f64,
    pub alpha0_l: f64,
    pub alpha1_l: f64,
}

/// Efficiency and mean transmission over the central period for each
/// power scale. `grid` must be periodic with the comb period.
pub fn efficiency_vs_power_curve(
    seq: &PulseSequence,
    config: &PumpConfig,
    alpha_max_l: f64,
    powers: &[f64],
    grid: &FrequencyGrid,
) -> Result<Vec<PowerPoint>> {
    if powers.windows(2).any(|w| !(w[1] > w[0])) || powers.iter().any(|p| !(*p > 0.0)) {
        return Err(AfcError::contract("power grid must be positive and strictly ascending"));
    }
    if !grid.is_periodic() {
        return Err(AfcError::contract("efficiency needs a periodic (central-period) grid"));
    }
    // Pump once at unit power; R scales linearly with the power.
    let unit = sequence_pumping_rate(seq, &config.with_power(1.0), grid)?;
    powers
        .par_iter()
        .map(|&p| {
            let rate = SampledSpectrum::new(grid.clone(), unit.values.iter().map(|v| v * p).collect())?;
            let profile = steady_state_absorption(&rate, &config.with_power(p), alpha_max_l)?;
            let rep = profile_efficiency(&profile, 1.0)?;
            Ok(PowerPoint {
                power_scale: p,
                mean_transmission: profile.mean_transmission(1.0),
                eta: rep.eta,
                alpha0_l: rep.alpha0_l,
                alpha1_l: rep.alpha1_l,
            })
        })
        .collect()
}

/// `|α_{−1}| / α_0` of a periodic profile.
pub fn comb_contrast(profile: &AbsorptionProfile) -> Result<f64> {
    let c = fourier_coefficients(profile, 1)?;
    Ok(c.alpha_minus1().norm() / c.alpha0())
}

/// Two-column absorption record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionRecord {
    pub detuning_hz: f64,
    pub alpha_per_m: f64,
}

pub fn write_absorption_csv<W: Write>(profile: &AbsorptionProfile, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (d, a) in profile.grid().points().zip(profile.values()) {
        w.serialize(AbsorptionRecord { detuning_hz: crate::angular_to_hz(d), alpha_per_m: *a })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(detuning_hz, alpha_per_m)` records in file order.
pub fn read_absorption_csv<R: Read>(input: R) -> Result<Vec<AbsorptionRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let recs = r.deserialize().collect::<std::result::Result<Vec<AbsorptionRecord>, _>>()?;
    if recs.is_empty() {
        return Err(AfcError::Parse("absorption file has no records".into()));
    }
    if let Some(rec) = recs.iter().find(|r| !(r.detuning_hz.is_finite() && r.alpha_per_m.is_finite())) {
        return Err(AfcError::Parse(format!("non-finite record {rec:?}")));
    }
    Ok(recs)
}
