//! Preparation pulse trains and their exact spectra.
//!
//! A train of identical sub-pulses at times `t_k` with complex amplitudes
//! `A_k` has the field spectrum `Ẽ(ω) = s̃(ω) Σ_k A_k e^{iωt_k}`, where `s̃` is
//! the spectrum of one sub-pulse. With `t_k = kT` the sum (the array factor)
//! is a Fourier series in `ωT`, so sinc-weighted amplitudes give periodic
//! square bands.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AfcError, Result};
use crate::spectral::FrequencyGrid;

/// How the width argument of [`make_s_sequence`] maps to the sinc weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SincConvention {
    /// `P(k) = sinc(kΓT/2)`: `Γ` is the full band width, the band half-width
    /// is `Γ/2`.
    #[default]
    Printed,
    /// `P(k) = sinc(kΓT)`: `Γ` is the band half-width.
    HalfWidth,
}

impl SincConvention {
    /// Band half-width produced by the width argument `gamma`.
    pub fn band_half_width(self, gamma: f64) -> f64 {
        match self {
            SincConvention::Printed => 0.5 * gamma,
            SincConvention::HalfWidth => gamma,
        }
    }

    /// Width argument that produces the band half-width `half_width`.
    pub fn argument_for(self, half_width: f64) -> f64 {
        match self {
            SincConvention::Printed => 2.0 * half_width,
            SincConvention::HalfWidth => half_width,
        }
    }
}

/// Envelope of one sub-pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    /// Constant amplitude over `duration`.
    #[default]
    Rectangular,
    /// Gaussian whose intensity FWHM equals `duration`.
    Gaussian,
}

/// One sub-pulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    /// Centre time (s).
    pub center: f64,
    /// Relative complex amplitude; a negative real weight is stored with
    /// phase π.
    pub amplitude: Complex64,
    /// Duration (s); the FWHM for Gaussian sub-pulses.
    pub duration: f64,
}

/// A preparation pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub pulses: Vec<Pulse>,
    pub shape: PulseShape,
    /// Inter-pulse spacing `T` (s).
    pub spacing: f64,
    /// Duration `T_p` of one repetition of the pattern (s).
    pub pattern_duration: f64,
    /// Half-width of the square bands the sequence is designed for, when
    /// it is an S-sequence (rad/s).
    pub band_half_width: Option<f64>,
    pub label: String,
}

/// `sin(u)/u` with `sinc(0) = 1`.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

impl PulseSequence {
    /// Checks the sequence invariants: centres on multiples of `T`,
    /// `|A_k| ≤ 1` and a footprint inside `T_p`.
    pub fn validate(&self) -> Result<()> {
        if self.pulses.is_empty() {
            return Err(AfcError::contract("a pulse sequence needs at least one pulse"));
        }
        if !(self.spacing > 0.0 && self.pattern_duration > 0.0) {
            return Err(AfcError::contract("pulse spacing and pattern duration must be positive"));
        }
        for p in &self.pulses {
            let k = p.center / self.spacing;
            if (k - k.round()).abs() > 1e-9 * k.abs().max(1.0) {
                return Err(AfcError::contract(format!("pulse centre {} s is not a multiple of T", p.center)));
            }
            if p.amplitude.norm() > 1.0 + 1e-12 {
                return Err(AfcError::contract(format!("pulse amplitude {} exceeds 1", p.amplitude.norm())));
            }
            if !(p.duration > 0.0 && p.duration <= self.spacing) {
                return Err(AfcError::contract(format!(
                    "pulse duration {} s must be positive and no longer than T = {} s",
                    p.duration, self.spacing
                )));
            }
        }
        if self.occupied_time() > self.pattern_duration * (1.0 + 1e-12) {
            return Err(AfcError::config(format!(
                "{} pulses occupy {} s, longer than the {} s pattern",
                self.pulses.len(),
                self.occupied_time(),
                self.pattern_duration
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    /// Time slots taken by the pulses, one period `T` each.
    pub fn occupied_time(&self) -> f64 {
        self.pulses.len() as f64 * self.spacing
    }

    /// From the start of the first pulse to the end of the last.
    pub fn span(&self) -> f64 {
        let first = self.pulses.iter().map(|p| p.center - 0.5 * p.duration).fold(f64::INFINITY, f64::min);
        let last = self.pulses.iter().map(|p| p.center + 0.5 * p.duration).fold(f64::NEG_INFINITY, f64::max);
        last - first
    }

    /// Array factor `Σ_k A_k e^{iωt_k}`.
    pub fn array_factor(&self, omega: f64) -> Complex64 {
        self.pulses.iter().map(|p| p.amplitude * Complex64::cis(omega * p.center)).sum()
    }

    /// Field spectrum `∫ ε(t) e^{iωt} dt`.
    pub fn field_spectrum(&self, omega: f64) -> Complex64 {
        self.pulses
            .iter()
            .map(|p| p.amplitude * sub_pulse_spectrum(self.shape, p.duration, omega) * Complex64::cis(omega * p.center))
            .sum()
    }
}

fn sub_pulse_spectrum(shape: PulseShape, duration: f64, omega: f64) -> f64 {
    match shape {
        PulseShape::Rectangular => duration * sinc(0.5 * omega * duration),
        PulseShape::Gaussian => {
            let sigma = duration / (2.0 * 2f64.ln().sqrt());
            sigma * (2.0 * PI).sqrt() * (-0.5 * (omega * sigma).powi(2)).exp()
        }
    }
}

/// Sinc-weighted train with pulses at `kT`, `k = −k_max..=k_max`.
///
/// Amplitudes are `sinc(k x)` with `x = ΓT/2` or `x = ΓT` depending on the
/// convention; the designed band half-width is stored on the sequence.
pub fn make_s_sequence(
    gamma_width: f64,
    period_time: f64,
    k_max: usize,
    pulse_duration: f64,
    pattern_duration: f64,
    convention: SincConvention,
) -> Result<PulseSequence> {
    if !(period_time > 0.0) {
        return Err(AfcError::contract(format!("pulse spacing must be positive, got {period_time}")));
    }
    let half_width = convention.band_half_width(gamma_width);
    let ht = half_width * period_time;
    if !(ht > 0.0 && ht < PI) {
        return Err(AfcError::config(format!(
            "band half-width {half_width:e} rad/s gives {ht} rad per period; need 0 < Γ_band T < π"
        )));
    }
    if k_max == 0 {
        return Err(AfcError::contract("an S-sequence needs k_max ≥ 1"));
    }
    let k_max = k_max as i64;
    let pulses = (-k_max..=k_max)
        .map(|k| {
            let w = sinc(k as f64 * ht);
            Pulse {
                center: k as f64 * period_time,
                amplitude: Complex64::from_polar(w.abs(), if w < 0.0 { PI } else { 0.0 }),
                duration: pulse_duration,
            }
        })
        .collect();
    let seq = PulseSequence {
        pulses,
        shape: PulseShape::Rectangular,
        spacing: period_time,
        pattern_duration,
        band_half_width: Some(half_width),
        label: format!("S(ΓT={:.6}, {convention:?})", gamma_width * period_time),
    };
    seq.validate()?;
    Ok(seq)
}

/// S-sequence whose square bands have half-width `π/(q T)`, the `S_{1/q}`
/// family.
pub fn make_s_fraction_sequence(
    q: f64,
    period_time: f64,
    k_max: usize,
    pulse_duration: f64,
    pattern_duration: f64,
    convention: SincConvention,
) -> Result<PulseSequence> {
    if !(q > 1.0) {
        return Err(AfcError::config(format!("S_1/q needs q > 1, got {q}")));
    }
    let hw = PI / (q * period_time);
    let mut seq = make_s_sequence(
        convention.argument_for(hw),
        period_time,
        k_max,
        pulse_duration,
        pattern_duration,
        convention,
    )?;
    seq.label = format!("S1/{q}");
    Ok(seq)
}

/// Two equal pulses at `0` and `T`.
pub fn make_pp_sequence(period_time: f64, pulse_duration: f64, pattern_duration: f64) -> Result<PulseSequence> {
    if !(period_time > 0.0) || !period_time.is_finite() {
        return Err(AfcError::contract(format!("pulse-pair separation must be positive, got {period_time}")));
    }
    let one = Complex64::new(1.0, 0.0);
    let seq = PulseSequence {
        pulses: vec![
            Pulse { center: 0.0, amplitude: one, duration: pulse_duration },
            Pulse { center: period_time, amplitude: one, duration: pulse_duration },
        ],
        shape: PulseShape::Rectangular,
        spacing: period_time,
        pattern_duration,
        band_half_width: None,
        label: "PP".into(),
    };
    seq.validate()?;
    Ok(seq)
}

/// Field and power spectrum of a sequence on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpectrum {
    pub grid: FrequencyGrid,
    pub field: Vec<Complex64>,
    pub power: Vec<f64>,
}

/// Exact spectrum of `seq` at every grid point. The grid must cover at
/// least one period `[−π/T, π/T)`.
pub fn sequence_spectrum(seq: &PulseSequence, grid: &FrequencyGrid) -> Result<SequenceSpectrum> {
    seq.validate()?;
    let half = PI / seq.spacing;
    let tol = 1e-9 * half + grid.spacing();
    if grid.delta_min() > -half + 1e-9 * half || grid.delta_max() < half - tol {
        return Err(AfcError::contract(format!(
            "spectrum grid [{:e}, {:e}] does not cover [−π/T, π/T] = ±{half:e} rad/s",
            grid.delta_min(),
            grid.delta_max()
        )));
    }
    let field: Vec<Complex64> = grid.points().map(|w| seq.field_spectrum(w)).collect();
    let power = field.iter().map(|c| c.norm_sqr()).collect();
    Ok(SequenceSpectrum { grid: grid.clone(), field, power })
}

/// Samples `|AF(θ/T)|²` at `bins` equispaced phases `θ ∈ [−π, π)`.
fn array_power(seq: &PulseSequence, bins: usize) -> Vec<(f64, f64)> {
    (0..bins)
        .map(|j| {
            let theta = -PI + 2.0 * PI * j as f64 / bins as f64;
            (theta, seq.array_factor(theta / seq.spacing).norm_sqr())
        })
        .collect()
}

fn band_half_width(seq: &PulseSequence) -> Result<f64> {
    seq.band_half_width
        .ok_or_else(|| AfcError::contract(format!("sequence '{}' has no design band", seq.label)))
}

/// Fraction of the array-factor energy over one period that falls inside
/// the design band. The sub-pulse envelope is left out. With `bins` larger
/// than twice the number of pulses the equal-weight sum is exact.
pub fn band_energy_fraction(seq: &PulseSequence, bins: usize) -> Result<f64> {
    let edge = band_half_width(seq)? * seq.spacing;
    let samples = array_power(seq, bins);
    let total: f64 = samples.iter().map(|s| s.1).sum();
    let inside: f64 = samples
        .iter()
        .map(|&(th, p)| {
            let d = th.abs() - edge;
            if d.abs() < 1e-12 {
                0.5 * p
            } else if d < 0.0 {
                p
            } else {
                0.0
            }
        })
        .sum();
    Ok(inside / total)
}

/// Half-width (rad/s) of the central band of `|AF|`, read as the
/// half-amplitude crossing relative to the mean level over the inner half
/// of the band, on `bins` samples per period.
pub fn fitted_band_half_width(seq: &PulseSequence, bins: usize) -> Result<f64> {
    let edge = band_half_width(seq)? * seq.spacing;
    let step = 2.0 * PI / bins as f64;
    let amp = |th: f64| seq.array_factor(th / seq.spacing).norm();
    let inner: Vec<f64> = (0..bins)
        .map(|j| -PI + step * j as f64)
        .filter(|th| th.abs() <= 0.5 * edge)
        .map(amp)
        .collect();
    let level = inner.iter().sum::<f64>() / inner.len() as f64;
    let half = 0.5 * level;
    let crossing = |dir: f64| -> Option<f64> {
        let mut prev = (0.0, amp(0.0));
        for j in 1..=bins / 2 {
            let th = dir * step * j as f64;
            let a = amp(th);
            if a < half {
                let frac = (prev.1 - half) / (prev.1 - a);
                return Some((prev.0 + frac * (th - prev.0)).abs());
            }
            prev = (th, a);
        }
        None
    };
    match (crossing(1.0), crossing(-1.0)) {
        (Some(r), Some(l)) => Ok(0.5 * (r + l) / seq.spacing),
        _ => Err(AfcError::Numeric(format!("no half-level crossing found for '{}'", seq.label))),
    }
}

/// One pulse per record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub center_time_s: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub duration_s: f64,
}

/// Writes the pulses as CSV (`center_time_s, amplitude, phase_rad,
/// duration_s`).
pub fn write_sequence_csv<W: Write>(seq: &PulseSequence, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &seq.pulses {
        w.serialize(PulseRecord {
            center_time_s: p.center,
            amplitude: p.amplitude.norm(),
            phase_rad: p.amplitude.arg(),
            duration_s: p.duration,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads pulses written by [`write_sequence_csv`].
pub fn read_sequence_csv<R: Read>(input: R, spacing: f64, pattern_duration: f64) -> Result<PulseSequence> {
    let mut r = csv::Reader::from_reader(input);
    let pulses = r
        .deserialize::<PulseRecord>()
        .map(|rec| {
            let rec = rec?;
            Ok(Pulse {
                center: rec.center_time_s,
                amplitude: Complex64::from_polar(rec.amplitude, rec.phase_rad),
                duration: rec.duration_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let seq = PulseSequence {
        pulses,
        shape: PulseShape::Rectangular,
        spacing,
        pattern_duration,
        band_half_width: None,
        label: "imported".into(),
    };
    seq.validate()?;
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T: f64 = 1.5e-6;
    const TAU: f64 = 300e-9;
    const TP: f64 = 100e-6;

    #[test]
    fn printed_convention_weights() {
        let s = make_s_sequence(PI / (2.0 * T), T, 30, TAU, TP, SincConvention::Printed).unwrap();
        let p = |k: f64| {
            s.pulses.iter().find(|p| (p.center / T - k).abs() < 1e-9).unwrap().amplitude
        };
        assert!((p(0.0) - 1.0).norm() < 1e-15);
        assert!((p(1.0).re - 0.900_316).abs() < 1e-6);
        assert!(p(4.0).norm() < 1e-15);
        // sinc(5π/4) < 0 is carried as phase π.
        assert!((p(5.0).arg().abs() - PI).abs() < 1e-12);
        assert!((s.band_half_width.unwrap() - PI / (4.0 * T)).abs() < 1e-6);
    }

    #[test]
    fn sixty_one_pulses_fit_the_pattern() {
        let s = make_s_fraction_sequence(2.0, T, 30, TAU, TP, SincConvention::Printed).unwrap();
        assert_eq!(s.len(), 61);
        assert!((s.occupied_time() - 91.5e-6).abs() < 1e-12);
        assert!((s.span() - (60.0 * T + TAU)).abs() < 1e-12);
        assert!(s.span() < TP);
        let too_long = make_s_fraction_sequence(2.0, T, 40, TAU, TP, SincConvention::Printed);
        assert!(matches!(too_long, Err(AfcError::Configuration(_))));
    }

    #[test]
    fn width_out_of_range_rejected() {
        assert!(make_s_sequence(PI / T, T, 10, TAU, TP, SincConvention::HalfWidth).is_err());
        assert!(make_s_sequence(0.0, T, 10, TAU, TP, SincConvention::Printed).is_err());
        assert!(make_s_sequence(1.9 * PI / T, T, 10, TAU, TP, SincConvention::Printed).is_ok());
    }

    #[test]
    fn pulse_pair() {
        let pp = make_pp_sequence(T, TAU, TP).unwrap();
        assert_eq!(pp.len(), 2);
        assert_eq!(pp.pulses[1].center, T);
        assert!(make_pp_sequence(0.0, TAU, TP).is_err());
        // |AF|² = 2 + 2cos(ωT): period 2π/T, zero at ω = π/T.
        assert!((pp.array_factor(0.0).norm_sqr() - 4.0).abs() < 1e-12);
        assert!(pp.array_factor(PI / T).norm() < 1e-12);
        assert!((pp.array_factor(2.0 * PI / T).norm_sqr() - 4.0).abs() < 1e-12);
        for w in [0.1, 0.7, 2.3] {
            let w = w / T;
            let expect = (TAU * sinc(0.5 * w * TAU)).powi(2) * 2.0 * (1.0 + (w * T).cos());
            assert!((pp.field_spectrum(w).norm_sqr() - expect).abs() < 1e-12 * expect.max(1e-30) + 1e-30);
        }
    }

    #[test]
    fn single_pulse_spectrum_is_sinc() {
        let seq = PulseSequence {
            pulses: vec![Pulse { center: 0.0, amplitude: Complex64::new(1.0, 0.0), duration: TAU }],
            shape: PulseShape::Rectangular,
            spacing: T,
            pattern_duration: TP,
            band_half_width: None,
            label: "single".into(),
        };
        let grid = FrequencyGrid::periodic(2.0 * PI / T, 4, 256).unwrap();
        let s = sequence_spectrum(&seq, &grid).unwrap();
        for (w, f) in grid.points().zip(&s.field) {
            assert!((f.re - TAU * sinc(0.5 * w * TAU)).abs() < 1e-18);
            assert!(f.im.abs() < 1e-18);
        }
    }

    #[test]
    fn spectrum_grid_must_cover_a_period() {
        let pp = make_pp_sequence(T, TAU, TP).unwrap();
        let narrow = FrequencyGrid::new(-1.0, 1.0, 11).unwrap();
        assert!(sequence_spectrum(&pp, &narrow).is_err());
    }

    #[test]
    fn band_energy_and_width() {
        for q in [2.0, 3.0, 5.0] {
            for conv in [SincConvention::Printed, SincConvention::HalfWidth] {
                let s = make_s_fraction_sequence(q, T, 30, TAU, TP, conv).unwrap();
                assert!(band_energy_fraction(&s, 1024).unwrap() >= 0.9);
                let w = fitted_band_half_width(&s, 1024).unwrap();
                let bin = 2.0 * PI / T / 1024.0;
                assert!((w - PI / (q * T)).abs() <= bin, "q={q}: {w} vs {}", PI / (q * T));
            }
        }
    }

    #[test]
    fn band_energy_grows_lobe_by_lobe() {
        // Adding a partial sinc lobe can leak a little energy out of band
        // (q = 3: k_max 3 → 4 loses 1e-3), so growth is checked when the
        // truncation sits on a sinc zero, k_max = m q.
        for q in [2usize, 3, 5] {
            let mut prev = 0.0;
            for m in 1..=30 / q {
                let s = make_s_fraction_sequence(q as f64, T, m * q, TAU, TP, SincConvention::Printed).unwrap();
                let f = band_energy_fraction(&s, 1024).unwrap();
                assert!(f >= prev, "q={q} k_max={}: {f} < {prev}", m * q);
                prev = f;
            }
        }
    }

    #[test]
    fn symmetric_modulus() {
        let s = make_s_fraction_sequence(3.0, T, 30, TAU, TP, SincConvention::Printed).unwrap();
        for w in [0.05, 0.4, 1.1, 2.9] {
            let w = w / T;
            assert!((s.field_spectrum(w).norm() - s.field_spectrum(-w).norm()).abs() < 1e-18);
        }
    }

    #[test]
    fn csv_round_trip() {
        let s = make_s_fraction_sequence(5.0, T, 30, TAU, TP, SincConvention::Printed).unwrap();
        let mut buf = Vec::new();
        write_sequence_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("center_time_s,amplitude,phase_rad,duration_s"));
        let back = read_sequence_csv(buf.as_slice(), T, TP).unwrap();
        assert_eq!(back.len(), s.len());
        for (a, b) in back.pulses.iter().zip(&s.pulses) {
            assert!((a.amplitude - b.amplitude).norm() < 1e-12);
            assert_eq!(a.center, b.center);
        }
    }
}
