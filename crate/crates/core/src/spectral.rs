//! Shared numerical substrate: uniform detuning grids, sampled spectra,
//! periodic absorption profiles, their Fourier-series coefficients and
//! Lorentzian (homogeneous-line) convolution.
//!
//! Conventions:
//!
//! * Detunings are angular frequencies (rad/s).
//! * A grid with a period is *half-open*: it holds an integer number of comb
//!   periods and the point at `delta_max` is the image of `delta_min`, so it is
//!   not stored. Grids without a period are closed and include both ends.
//! * Fourier analysis uses `α_n = (1/P) ∫_P α(Δ) e^{+i n Δ T} dΔ` with
//!   `P = 2π/T`, so that `α(Δ) = Σ α_n e^{-i n Δ T}`. With this sign a square
//!   comb of half-width `Γ` centred on zero has `α_{-1} = α_M sin(ΓT)/π`.
//! * The homogeneous lineshape is the unit-area Lorentzian
//!   `L̂(Δ) = γ / (π (γ² + Δ²))`; a flat spectrum is a fixed point of the
//!   convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{AfcError, Result};

/// Relative tolerance used to decide that a span is a whole number of periods.
const PERIOD_TOLERANCE: f64 = 1e-9;

/// Minimum number of samples per period accepted by Fourier analysis.
pub const MIN_SAMPLES_PER_PERIOD: usize = 8;

/// Uniform detuning axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    start: f64,
    spacing: f64,
    len: usize,
    period: Option<f64>,
}

impl FrequencyGrid {
    /// Closed, non-periodic grid with `n_points` samples from `delta_min` to
    /// `delta_max` inclusive.
    pub fn new(delta_min: f64, delta_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 {
            return Err(AfcError::contract(format!("a grid needs at least 2 points, got {n_points}")));
        }
        if !(delta_max > delta_min) || !delta_min.is_finite() || !delta_max.is_finite() {
            return Err(AfcError::contract(format!(
                "grid bounds must be finite with delta_max > delta_min (got {delta_min}, {delta_max})"
            )));
        }
        Ok(Self {
            start: delta_min,
            spacing: (delta_max - delta_min) / (n_points - 1) as f64,
            len: n_points,
            period: None,
        })
    }

    /// Closed, non-periodic grid with the given spacing covering at least
    /// `[delta_min, delta_max]`.
    pub fn with_spacing(delta_min: f64, delta_max: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(AfcError::contract(format!("grid spacing must be positive, got {spacing}")));
        }
        let n = ((delta_max - delta_min) / spacing).ceil() as usize + 1;
        let n = n.max(2);
        Ok(Self { start: delta_min, spacing, len: n, period: None })
    }

    /// Half-open periodic grid of `periods` whole periods centred on zero,
    /// with `points_per_period` samples per period. The sample at zero
    /// detuning is present whenever `points_per_period * periods` is even.
    pub fn periodic(period: f64, periods: usize, points_per_period: usize) -> Result<Self> {
        let span = period * periods as f64;
        Self::periodic_from(-0.5 * span, period, periods, points_per_period)
    }

    /// Half-open periodic grid starting at `start`.
    pub fn periodic_from(start: f64, period: f64, periods: usize, points_per_period: usize) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(AfcError::contract(format!("period must be positive, got {period}")));
        }
        if periods == 0 || points_per_period < 2 {
            return Err(AfcError::contract(format!(
                "periodic grid needs ≥1 period and ≥2 points per period (got {periods}, {points_per_period})"
            )));
        }
        Ok(Self {
            start,
            spacing: period / points_per_period as f64,
            len: periods * points_per_period,
            period: Some(period),
        })
    }

    /// First sample.
    pub fn delta_min(&self) -> f64 {
        self.start
    }

    /// Upper end of the axis. For periodic grids this point is excluded
    /// (it coincides with `delta_min` modulo the span).
    pub fn delta_max(&self) -> f64 {
        match self.period {
            Some(_) => self.start + self.spacing * self.len as f64,
            None => self.start + self.spacing * (self.len - 1) as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Comb period in angular frequency, if the grid is periodic.
    pub fn period(&self) -> Option<f64> {
        self.period
    }

    /// Comb delay `T = 2π / period`.
    pub fn period_time(&self) -> Option<f64> {
        self.period.map(|p| 2.0 * PI / p)
    }

    pub fn is_periodic(&self) -> bool {
        self.period.is_some()
    }

    /// Length of the axis covered by the samples' cells.
    pub fn span(&self) -> f64 {
        self.delta_max() - self.delta_min()
    }

    pub fn points_per_period(&self) -> Option<usize> {
        self.period.map(|p| (p / self.spacing).round() as usize)
    }

    pub fn point(&self, i: usize) -> f64 {
        self.start + self.spacing * i as f64
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len).map(move |i| self.point(i))
    }

    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.len < 2 || !(self.spacing > 0.0) {
            return Err(AfcError::contract("grid must have ≥2 points and positive spacing"));
        }
        if let Some(p) = self.period {
            let periods = self.span() / p;
            if (periods - periods.round()).abs() > PERIOD_TOLERANCE * periods.max(1.0) || periods.round() < 1.0 {
                return Err(AfcError::contract(format!(
                    "periodic grid span {} is not a whole number of periods {}",
                    self.span(),
                    p
                )));
            }
        }
        Ok(())
    }

    /// Index of the sample nearest to `x` (wrapping for periodic grids,
    /// clamping otherwise).
    pub fn nearest_index(&self, x: f64) -> usize {
        let raw = ((x - self.start) / self.spacing).round();
        if self.period.is_some() {
            (raw as i64).rem_euclid(self.len as i64) as usize
        } else {
            raw.clamp(0.0, (self.len - 1) as f64) as usize
        }
    }
}

/// Real-valued spectrum sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSpectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
}

impl SampledSpectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(AfcError::contract(format!(
                "spectrum has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().map(f).collect();
        Self { grid, values }
    }

    /// Rectangle-rule integral (exact trapezoid for periodic grids).
    pub fn integral(&self) -> f64 {
        let h = self.grid.spacing();
        if self.grid.is_periodic() {
            self.values.iter().sum::<f64>() * h
        } else {
            let n = self.values.len();
            let inner: f64 = self.values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (self.values[0] + self.values[n - 1]))
        }
    }

    /// Linear interpolation at `x`; periodic grids wrap, others clamp to the
    /// end values.
    pub fn value_at(&self, x: f64) -> f64 {
        interpolate(&self.grid, &self.values, x)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Linear interpolation of samples on `grid` at `x`.
pub fn interpolate(grid: &FrequencyGrid, values: &[f64], x: f64) -> f64 {
    let u = (x - grid.delta_min()) / grid.spacing();
    let n = values.len();
    if grid.is_periodic() {
        let u = u.rem_euclid(n as f64);
        let i0 = (u.floor() as usize) % n;
        let i1 = (i0 + 1) % n;
        let frac = u - u.floor();
        values[i0] * (1.0 - frac) + values[i1] * frac
    } else {
        if u <= 0.0 {
            return values[0];
        }
        if u >= (n - 1) as f64 {
            return values[n - 1];
        }
        let i0 = u.floor() as usize;
        let frac = u - i0 as f64;
        values[i0] * (1.0 - frac) + values[i0 + 1] * frac
    }
}

/// Sampled absorption coefficient `α(Δ)` (1/m) bounded by the no-gain
/// ceiling `α_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionProfile {
    grid: FrequencyGrid,
    values: Vec<f64>,
    alpha_max: f64,
}

impl AbsorptionProfile {
    /// Builds a profile, rejecting values outside `[0, alpha_max]`.
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, alpha_max: f64) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(AfcError::contract(format!(
                "profile has {} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if !(alpha_max >= 0.0) || !alpha_max.is_finite() {
            return Err(AfcError::contract(format!("alpha_max must be finite and ≥ 0, got {alpha_max}")));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && **v <= alpha_max)) {
            return Err(AfcError::contract(format!(
                "absorption {v} at index {i} violates the no-gain bound [0, {alpha_max}]"
            )));
        }
        Ok(Self { grid, values, alpha_max })
    }

    /// Builds a profile after clamping every value into `[0, alpha_max]`.
    pub fn clamped(grid: FrequencyGrid, mut values: Vec<f64>, alpha_max: f64) -> Result<Self> {
        for v in values.iter_mut() {
            *v = v.clamp(0.0, alpha_max);
        }
        Self::new(grid, values, alpha_max)
    }

    /// Uniform absorber `α(Δ) = alpha` on `grid`.
    pub fn uniform(grid: FrequencyGrid, alpha: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![alpha; n], alpha)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value_at(&self, x: f64) -> f64 {
        interpolate(&self.grid, &self.values, x)
    }

    /// Mean of `exp(-α L)` over the samples.
    pub fn mean_transmission(&self, length: f64) -> f64 {
        self.values.iter().map(|a| (-a * length).exp()).sum::<f64>() / self.values.len() as f64
    }

    pub fn as_spectrum(&self) -> SampledSpectrum {
        SampledSpectrum { grid: self.grid.clone(), values: self.values.clone() }
    }
}

/// Fourier-series coefficients `α_n`, `|n| ≤ n_max`, of a periodic profile.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierCoefficients {
    period_time: f64,
    coeffs: Vec<Complex64>,
}

impl FourierCoefficients {
    /// Builds coefficients from non-negative orders `α_0..=α_{n_max}`;
    /// negative orders are the complex conjugates (real profile).
    pub fn from_nonnegative(period_time: f64, nonneg: &[Complex64]) -> Result<Self> {
        if nonneg.is_empty() {
            return Err(AfcError::contract("at least α_0 is required"));
        }
        if !(period_time > 0.0) {
            return Err(AfcError::contract(format!("period time must be positive, got {period_time}")));
        }
        let n_max = nonneg.len() - 1;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * n_max + 1];
        coeffs[n_max] = Complex64::new(nonneg[0].re, 0.0);
        for (n, c) in nonneg.iter().enumerate().skip(1) {
            coeffs[n_max + n] = *c;
            coeffs[n_max - n] = c.conj();
        }
        Ok(Self { period_time, coeffs })
    }

    pub fn n_max(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    /// Comb delay `T`.
    pub fn period_time(&self) -> f64 {
        self.period_time
    }

    /// Coefficient of order `n`; zero beyond the stored range.
    pub fn get(&self, n: i64) -> Complex64 {
        let n_max = self.n_max() as i64;
        if n.abs() > n_max {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(n + n_max) as usize]
        }
    }

    pub fn alpha0(&self) -> f64 {
        self.get(0).re
    }

    pub fn alpha_minus1(&self) -> Complex64 {
        self.get(-1)
    }

    /// Coefficients of the profile after convolution with the unit-area
    /// Lorentzian of half-width `gamma`: `α_n e^{-|n| γ T}`.
    pub fn homogeneously_broadened(&self, gamma: f64) -> Self {
        let n_max = self.n_max() as i64;
        let coeffs = (-n_max..=n_max)
            .map(|n| self.get(n) * (-(n.abs() as f64) * gamma * self.period_time).exp())
            .collect();
        Self { period_time: self.period_time, coeffs }
    }

    /// Evaluates the truncated series on `grid` and clamps to `[0, alpha_max]`.
    pub fn synthesize(&self, grid: &FrequencyGrid, alpha_max: f64) -> Result<AbsorptionProfile> {
        let t = self.period_time;
        let n_max = self.n_max() as i64;
        let values = grid
            .points()
            .map(|d| {
                let mut acc = self.alpha0();
                for n in 1..=n_max {
                    // α_n e^{-inΔT} + α_{-n} e^{+inΔT} = 2 Re(α_n e^{-inΔT})
                    acc += 2.0 * (self.get(n) * Complex64::cis(-(n as f64) * d * t)).re;
                }
                acc
            })
            .collect();
        AbsorptionProfile::clamped(grid.clone(), values, alpha_max)
    }
}

/// Fourier-series coefficients of a periodic profile up to order `n_max`.
///
/// Uses equal-weight quadrature over the whole (half-open) grid, which is the
/// periodic trapezoid rule. Negative orders are filled by conjugation, so the
/// result is exactly Hermitian.
pub fn fourier_coefficients(profile: &AbsorptionProfile, n_max: usize) -> Result<FourierCoefficients> {
    let grid = profile.grid();
    let period_time = grid
        .period_time()
        .ok_or_else(|| AfcError::contract("Fourier analysis needs a periodic grid"))?;
    let ppp = grid.points_per_period().unwrap_or(0);
    if ppp < MIN_SAMPLES_PER_PERIOD {
        return Err(AfcError::Resolution(format!(
            "{ppp} samples per period; at least {MIN_SAMPLES_PER_PERIOD} are required"
        )));
    }
    if 2 * n_max >= ppp {
        return Err(AfcError::Resolution(format!(
            "order {n_max} aliases with {ppp} samples per period"
        )));
    }
    let inv_n = 1.0 / profile.values().len() as f64;
    let nonneg: Vec<Complex64> = (0..=n_max)
        .map(|n| {
            let k = n as f64 * period_time;
            profile
                .values()
                .iter()
                .zip(grid.points())
                .map(|(a, d)| Complex64::cis(k * d) * *a)
                .sum::<Complex64>()
                * inv_n
        })
        .collect();
    FourierCoefficients::from_nonnegative(period_time, &nonneg)
}

/// Unit-area Lorentzian of half-width `gamma` at detuning `x`.
#[inline]
pub fn lorentzian(x: f64, gamma: f64) -> f64 {
    gamma / (PI * (gamma * gamma + x * x))
}

/// Unit-area Lorentzian periodized with period `span`:
/// `Σ_m L̂(x + m·span) = (1/span) sinh(γτ) / (cosh(γτ) − cos(xτ))`, `τ = 2π/span`.
pub fn periodized_lorentzian(x: f64, gamma: f64, span: f64) -> f64 {
    let tau = 2.0 * PI / span;
    let a = gamma * tau;
    let q = (-a).exp();
    // sinh a / (cosh a − cos b) rewritten to avoid overflow for large a.
    (1.0 - q * q) / (1.0 + q * q - 2.0 * q * (x * tau).cos()) / span
}

/// Convolution of a sampled spectrum with the unit-area Lorentzian of
/// half-width `gamma`.
///
/// Periodic grids use circular convolution with the exactly periodized
/// kernel; open grids weight each sample by the kernel's integral over its
/// cell and extend the end samples to ±∞. In both cases the weights sum to
/// one, so constants are preserved.
pub fn lorentzian_convolve(spectrum: &SampledSpectrum, gamma: f64) -> Result<SampledSpectrum> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(AfcError::contract(format!("Lorentzian half-width must be positive, got {gamma}")));
    }
    let grid = &spectrum.grid;
    let n = grid.len();
    let h = grid.spacing();
    let values = if grid.is_periodic() {
        let span = grid.span();
        let mut kernel: Vec<f64> = (0..n)
            .map(|k| {
                let offset = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                periodized_lorentzian(offset * h, gamma, span)
            })
            .collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|w| *w /= norm);
        circular_convolve(&spectrum.values, &kernel)
    } else {
        let cell = |m: f64| ((m + 0.5) * h / gamma).atan() - ((m - 0.5) * h / gamma).atan();
        let m_len = (2 * n - 1).next_power_of_two();
        let mut kernel = vec![0.0; m_len];
        for k in 0..n {
            let w = cell(k as f64) / PI;
            kernel[k] = w;
            if k > 0 {
                kernel[m_len - k] = w;
            }
        }
        let mut padded = spectrum.values.clone();
        padded.resize(m_len, 0.0);
        let mut out = circular_convolve(&padded, &kernel);
        out.truncate(n);
        let (s0, s_last) = (spectrum.values[0], spectrum.values[n - 1]);
        for (i, o) in out.iter_mut().enumerate() {
            let left = ((-(i as f64) - 0.5) * h / gamma).atan() / PI + 0.5;
            let right = 0.5 - (((n - 1 - i) as f64 + 0.5) * h / gamma).atan() / PI;
            *o += s0 * left + s_last * right;
        }
        out
    };
    Ok(SampledSpectrum { grid: grid.clone(), values })
}

/// Lorentzian-smoothed value `(α ⊗ L̂)(x)` of a periodic profile at arbitrary
/// detunings, by direct quadrature with the periodized kernel normalized on
/// the sample set.
pub fn lorentzian_smoothed_at(grid: &FrequencyGrid, values: &[f64], gamma: f64, x: f64) -> Result<f64> {
    if !grid.is_periodic() {
        return Err(AfcError::contract("direct smoothing needs a periodic grid"));
    }
    let span = grid.span();
    let (mut num, mut den) = (0.0, 0.0);
    for (d, v) in grid.points().zip(values) {
        let w = periodized_lorentzian(d - x, gamma, span);
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Circular convolution `out_i = Σ_j a_j k_{(i-j) mod n}` via FFT.
pub fn circular_convolve(a: &[f64], kernel: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), kernel.len(), "circular convolution needs equal lengths");
    let n = a.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let mut fk: Vec<Complex64> = kernel.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fwd.process(&mut fa);
    fwd.process(&mut fk);
    for (x, y) in fa.iter_mut().zip(&fk) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa.iter().map(|c| c.re * scale).collect()
}

/// Forward/inverse FFT pair of a fixed length, planned once.
pub struct FftPair {
    pub forward: Arc<dyn Fft<f64>>,
    pub inverse: Arc<dyn Fft<f64>>,
}

impl FftPair {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(grid: &FrequencyGrid, half_width: f64, alpha_max: f64) -> AbsorptionProfile {
        let p = grid.period().unwrap();
        let values = grid
            .points()
            .map(|d| {
                let w = (d + 0.5 * p).rem_euclid(p) - 0.5 * p;
                if w.abs() < half_width {
                    alpha_max
                } else {
                    0.0
                }
            })
            .collect();
        AbsorptionProfile::new(grid.clone(), values, alpha_max).unwrap()
    }

    // Independent oracle: composite midpoint rule on a fine sub-grid of the
    // analytic square comb.
    fn square_coefficient_quadrature(order: i64, gamma_t: f64) -> Complex64 {
        let t = 1.0;
        let p = 2.0 * PI / t;
        let m = 200_000;
        let h = p / m as f64;
        (0..m)
            .map(|j| {
                let d = -0.5 * p + (j as f64 + 0.5) * h;
                let a = if (d * t).abs() < gamma_t { 1.0 } else { 0.0 };
                Complex64::cis(order as f64 * d * t) * a * h
            })
            .sum::<Complex64>()
            / p
    }

    #[test]
    fn square_comb_half_duty_matches_closed_form() {
        let t = 1.0;
        let grid = FrequencyGrid::periodic(2.0 * PI / t, 1, 10_000).unwrap();
        let prof = square(&grid, PI / 2.0 / t, 1.0);
        let c = fourier_coefficients(&prof, 3).unwrap();
        assert!((c.alpha0() - 0.5).abs() < 2e-4);
        assert!((c.alpha_minus1().re - 1.0 / PI).abs() < 2e-4);
        assert!(c.alpha_minus1().im.abs() < 1e-9);
    }

    #[test]
    fn square_comb_fifth_duty_matches_closed_form_and_quadrature() {
        let t = 1.0;
        let grid = FrequencyGrid::periodic(2.0 * PI / t, 1, 10_000).unwrap();
        let prof = square(&grid, PI / 5.0 / t, 1.0);
        let c = fourier_coefficients(&prof, 1).unwrap();
        let oracle0 = square_coefficient_quadrature(0, PI / 5.0);
        let oracle1 = square_coefficient_quadrature(-1, PI / 5.0);
        assert!((oracle0.re - 0.2).abs() < 1e-5);
        assert!((oracle1.re - (PI / 5.0).sin() / PI).abs() < 1e-5);
        assert!((c.alpha0() - 0.2).abs() < 2e-4);
        assert!((c.alpha_minus1().re - 0.187_098_9).abs() < 2e-4);
    }

    #[test]
    fn constant_profile_has_only_dc() {
        let grid = FrequencyGrid::periodic(3.0, 2, 64).unwrap();
        let prof = AbsorptionProfile::uniform(grid, 2.5).unwrap();
        let c = fourier_coefficients(&prof, 4).unwrap();
        assert!((c.alpha0() - 2.5).abs() < 1e-12);
        for n in 1..=4 {
            assert!(c.get(n).norm() < 1e-12);
            assert!(c.get(-n).norm() < 1e-12);
        }
    }

    #[test]
    fn fourier_needs_period_and_resolution() {
        let open = FrequencyGrid::new(-1.0, 1.0, 100).unwrap();
        let prof = AbsorptionProfile::uniform(open, 1.0).unwrap();
        assert!(matches!(fourier_coefficients(&prof, 1), Err(AfcError::Contract(_))));
        let coarse = FrequencyGrid::periodic(1.0, 1, 6).unwrap();
        let prof = AbsorptionProfile::uniform(coarse, 1.0).unwrap();
        assert!(matches!(fourier_coefficients(&prof, 1), Err(AfcError::Resolution(_))));
    }

    #[test]
    fn no_gain_bound_enforced() {
        let grid = FrequencyGrid::periodic(1.0, 1, 8).unwrap();
        assert!(AbsorptionProfile::new(grid.clone(), vec![-0.1; 8], 1.0).is_err());
        assert!(AbsorptionProfile::new(grid.clone(), vec![1.1; 8], 1.0).is_err());
        let p = AbsorptionProfile::clamped(grid, vec![1.1; 8], 1.0).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn convolving_constant_is_identity() {
        for grid in [FrequencyGrid::periodic(10.0, 1, 400).unwrap(), FrequencyGrid::new(-5.0, 5.0, 401).unwrap()] {
            let s = SampledSpectrum::from_fn(grid, |_| 1.0);
            let out = lorentzian_convolve(&s, 0.2).unwrap();
            assert!(out.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn spike_becomes_lorentzian() {
        let grid = FrequencyGrid::new(-50.0, 50.0, 4001).unwrap();
        let h = grid.spacing();
        let mut values = vec![0.0; grid.len()];
        values[2000] = 1.0 / h;
        let out = lorentzian_convolve(&SampledSpectrum::new(grid.clone(), values).unwrap(), 1.0).unwrap();
        for (d, v) in grid.points().zip(&out.values) {
            let expect = lorentzian(d, 1.0);
            assert!((v - expect).abs() < 2e-3 * lorentzian(0.0, 1.0), "at {d}: {v} vs {expect}");
        }
        let half = out.values[2000] / 2.0;
        let idx = (2000..4001).find(|&i| out.values[i] < half).unwrap();
        assert!((grid.point(idx) - 1.0).abs() < 2.0 * h);
    }

    #[test]
    fn wide_square_keeps_its_centre() {
        // Oracle: direct quadrature of the analytic square against the kernel.
        let gamma = 1.0;
        let grid = FrequencyGrid::new(-100.0, 100.0, 8001).unwrap();
        let s = SampledSpectrum::from_fn(grid.clone(), |d| if d.abs() <= 10.0 { 1.0 } else { 0.0 });
        let out = lorentzian_convolve(&s, gamma).unwrap();
        let centre = out.values[4000];
        let analytic_centre = 2.0 * (10.0f64).atan() / PI;
        assert!((centre - analytic_centre).abs() < 1e-3);
        assert!((1.0 - centre) < 0.07);
        // Edge softened over ~γ: value at the nominal edge is about one half.
        let edge = out.value_at(10.0);
        assert!((edge - 0.5).abs() < 0.05);
    }

    #[test]
    fn periodic_convolution_preserves_integral() {
        let grid = FrequencyGrid::periodic(2.0 * PI, 3, 512).unwrap();
        let s = SampledSpectrum::from_fn(grid, |d| 1.0 + (3.0 * d).sin().abs() + (d * 0.5).cos());
        let out = lorentzian_convolve(&s, 0.05).unwrap();
        let (a, b) = (s.integral(), out.integral());
        assert!(((a - b) / a).abs() < 1e-9);
    }

    #[test]
    fn periodic_cosine_is_damped_by_exp_gamma_t() {
        let t = 1.5;
        let gamma = 0.03;
        let grid = FrequencyGrid::periodic(2.0 * PI / t, 1, 2048).unwrap();
        let s = SampledSpectrum::from_fn(grid.clone(), |d| (d * t).cos());
        let out = lorentzian_convolve(&s, gamma).unwrap();
        let damp = (-gamma * t).exp();
        for (d, v) in grid.points().zip(&out.values) {
            assert!((v - damp * (d * t).cos()).abs() < 1e-9);
        }
    }

    #[test]
    fn broadened_coefficients_match_convolved_profile() {
        let t = 1.0;
        let gamma = 0.02;
        let grid = FrequencyGrid::periodic(2.0 * PI / t, 1, 4096).unwrap();
        let prof = square(&grid, 0.7, 1.0);
        let conv = lorentzian_convolve(&prof.as_spectrum(), gamma).unwrap();
        let conv_prof = AbsorptionProfile::clamped(grid, conv.values, 1.0).unwrap();
        let a = fourier_coefficients(&prof, 2).unwrap().homogeneously_broadened(gamma);
        let b = fourier_coefficients(&conv_prof, 2).unwrap();
        for n in -2..=2 {
            assert!((a.get(n) - b.get(n)).norm() < 1e-9);
        }
    }

    #[test]
    fn periodized_kernel_has_unit_mass() {
        let span = 7.0;
        let m = 20_000;
        let h = span / m as f64;
        let total: f64 = (0..m).map(|i| periodized_lorentzian(i as f64 * h, 0.3, span) * h).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothed_at_matches_fft_convolution_on_grid() {
        let grid = FrequencyGrid::periodic(2.0 * PI, 1, 256).unwrap();
        let s = SampledSpectrum::from_fn(grid.clone(), |d| if d.abs() < 1.0 { 1.0 } else { 0.2 });
        let conv = lorentzian_convolve(&s, 0.1).unwrap();
        for i in [0, 17, 128, 200] {
            let direct = lorentzian_smoothed_at(&grid, &s.values, 0.1, grid.point(i)).unwrap();
            assert!((direct - conv.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_accessors() {
        let g = FrequencyGrid::periodic(2.0, 3, 10).unwrap();
        assert_eq!(g.len(), 30);
        assert!((g.span() - 6.0).abs() < 1e-12);
        assert_eq!(g.points_per_period(), Some(10));
        assert!((g.delta_min() + 3.0).abs() < 1e-12);
        assert!(g.validate().is_ok());
        assert_eq!(g.nearest_index(g.delta_max()), 0);
        assert!(FrequencyGrid::new(1.0, 1.0, 5).is_err());
        assert!(FrequencyGrid::new(0.0, 1.0, 1).is_err());
    }
}
