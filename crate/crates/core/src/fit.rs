//! Least-squares comparison of a measured absorption spectrum with the
//! pumping model.
//!
//! The model is `α(Δ) = α_M g(p u(Δ))`, with `u` the pumping rate at unit
//! power and `g` the normalized steady-state absorption. For a given power
//! scale `p` the ceiling `α_M` enters linearly and is solved in closed form;
//! `p` itself is found by a log scan (plus `p = 0`) and golden-section
//! refinement. Uncertainties come from the Gauss–Newton covariance.

use serde::Serialize;

use crate::error::{AfcError, Result};
use crate::hz_to_angular;
use crate::optimize::golden_section_maximize;
use crate::pulses::PulseSequence;
use crate::pumping::{relative_absorption, sequence_pumping_rate, AbsorptionRecord, PumpConfig};
use crate::spectral::{interpolate, FrequencyGrid};

/// Peak `R T₁` range covered by the power scan.
const SCAN_PEAK_RATE_T1: (f64, f64) = (1e-5, 1e5);
const SCAN_POINTS: usize = 201;
/// Largest model grid the fit will build.
const MAX_MODEL_POINTS: usize = 4_000_000;

/// The model side of a fit.
#[derive(Debug, Clone)]
pub struct FitModel {
    pub sequence: PulseSequence,
    /// Lifetimes, branching and `γ`; the power scale is ignored.
    pub pump: PumpConfig,
    /// Fixed `α_M` (1/m); `None` fits it.
    pub alpha_max: Option<f64>,
    /// Detuning window where the model applies (rad/s).
    pub window: (f64, f64),
}

/// Fitted parameters and residuals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub model_label: String,
    pub power_scale: f64,
    pub power_scale_sigma: f64,
    /// Peak `R T₁` over the fitted points at the fitted power.
    pub peak_rate_t1: f64,
    pub alpha_max: f64,
    pub alpha_max_sigma: Option<f64>,
    /// `‖α_meas − α_model‖₂` (1/m).
    pub residual_norm: f64,
    pub residual_rms: f64,
    pub points_used: usize,
}

struct Problem<'a> {
    /// `u T₁` at each measured point.
    x: Vec<f64>,
    y: Vec<f64>,
    pump: &'a PumpConfig,
    fixed_alpha: Option<f64>,
}

impl Problem<'_> {
    fn shape(&self, p: f64) -> Vec<f64> {
        let eps = self.pump.epsilon();
        let n = self.pump.normalization.total();
        self.x.iter().map(|&x| n * relative_absorption(p * x, self.pump.r, eps)).collect()
    }

    /// Best `α_M` for a given power and the residual sum of squares.
    fn solve(&self, p: f64) -> (f64, f64) {
        let g = self.shape(p);
        let a = match self.fixed_alpha {
            Some(a) => a,
            None => {
                let num: f64 = g.iter().zip(&self.y).map(|(g, y)| g * y).sum();
                let den: f64 = g.iter().map(|g| g * g).sum();
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            }
        };
        let rss = g.iter().zip(&self.y).map(|(g, y)| (y - a * g).powi(2)).sum();
        (a, rss)
    }
}

/// Fits `measured` with `model`. Only points inside `model.window` are used.
pub fn compare_to_measurement(measured: &[AbsorptionRecord], model: &FitModel) -> Result<FitReport> {
    let (lo, hi) = model.window;
    if !(hi > lo) {
        return Err(AfcError::contract(format!("fit window [{lo}, {hi}] is empty")));
    }
    let used: Vec<(f64, f64)> = measured
        .iter()
        .map(|r| (hz_to_angular(r.detuning_hz), r.alpha_per_m))
        .filter(|(d, _)| *d >= lo && *d <= hi)
        .collect();
    let needed = if model.alpha_max.is_some() { 2 } else { 3 };
    if used.len() < needed {
        return Err(AfcError::config(format!(
            "measured spectrum and model window do not overlap ({} usable points, need {needed})",
            used.len()
        )));
    }
    if let Some(a) = model.alpha_max {
        if !(a > 0.0) {
            return Err(AfcError::contract(format!("fixed α_M must be positive (got {a})")));
        }
    }
    let pump = model.pump.with_power(1.0);
    pump.validate()?;

    // Unit-power rate on a uniform grid fine enough for linear interpolation.
    let dmin = used.iter().map(|u| u.0).fold(f64::INFINITY, f64::min);
    let dmax = used.iter().map(|u| u.0).fold(f64::NEG_INFINITY, f64::max);
    let h = 0.25 * pump.gamma;
    let n = (((dmax - dmin) / h).ceil() as usize + 1).max(2);
    if n > MAX_MODEL_POINTS {
        return Err(AfcError::config(format!(
            "measured span needs {n} model points at γ/4 spacing (limit {MAX_MODEL_POINTS})"
        )));
    }
    let grid = FrequencyGrid::new(dmin, dmin + h * (n - 1) as f64, n)?;
    let unit = sequence_pumping_rate(&model.sequence, &pump, &grid)?;
    let x: Vec<f64> = used.iter().map(|(d, _)| interpolate(&grid, &unit.values, *d) * pump.t1).collect();
    let peak_x = x.iter().copied().fold(0.0, f64::max);
    if !(peak_x > 0.0) {
        return Err(AfcError::config(format!("sequence '{}' does not pump inside the fit window", model.sequence.label)));
    }
    let prob = Problem { x, y: used.iter().map(|u| u.1).collect(), pump: &pump, fixed_alpha: model.alpha_max };

    // p = 0 plus a log scan over the peak R T₁ range.
    let (s_lo, s_hi) = (SCAN_PEAK_RATE_T1.0 / peak_x, SCAN_PEAK_RATE_T1.1 / peak_x);
    let step = (s_hi / s_lo).ln() / (SCAN_POINTS - 1) as f64;
    let scan: Vec<f64> = (0..SCAN_POINTS).map(|i| s_lo * (step * i as f64).exp()).collect();
    let mut best_p = 0.0;
    let mut best_rss = prob.solve(0.0).1;
    let mut best_i = None;
    for (i, &p) in scan.iter().enumerate() {
        let rss = prob.solve(p).1;
        if rss < best_rss {
            best_rss = rss;
            best_p = p;
            best_i = Some(i);
        }
    }
    if let Some(i) = best_i {
        let a = if i == 0 { s_lo.ln() - step } else { scan[i - 1].ln() };
        let b = scan[(i + 1).min(SCAN_POINTS - 1)].ln().max(a + step);
        let m = golden_section_maximize(|u| -prob.solve(u.exp()).1, a, b, 1e-10, 400)?;
        if -m.value <= best_rss {
            best_p = m.x.exp();
        }
    }
    let (alpha, rss) = prob.solve(best_p);
    let npts = prob.y.len();

    // Gauss–Newton covariance from a central (forward at p = 0) difference.
    let dp = if best_p > 0.0 { 1e-5 * best_p } else { 1e-5 / peak_x };
    let (g_lo, g_hi, span) = if best_p > 0.0 {
        (prob.shape(best_p - dp), prob.shape(best_p + dp), 2.0 * dp)
    } else {
        (prob.shape(0.0), prob.shape(dp), dp)
    };
    let dmodel_dp: Vec<f64> = g_lo.iter().zip(&g_hi).map(|(a0, a1)| alpha * (a1 - a0) / span).collect();
    let g = prob.shape(best_p);
    let k = if model.alpha_max.is_some() { 1 } else { 2 };
    let dof = (npts.saturating_sub(k)).max(1) as f64;
    let s2 = rss / dof;
    let jpp: f64 = dmodel_dp.iter().map(|d| d * d).sum();
    let (sig_p, sig_a) = if k == 1 {
        (if jpp > 0.0 { (s2 / jpp).sqrt() } else { f64::INFINITY }, None)
    } else {
        let jpa: f64 = dmodel_dp.iter().zip(&g).map(|(d, g)| d * g).sum();
        let jaa: f64 = g.iter().map(|g| g * g).sum();
        let det = jpp * jaa - jpa * jpa;
        if det > 0.0 {
            ((s2 * jaa / det).sqrt(), Some((s2 * jpp / det).sqrt()))
        } else {
            (f64::INFINITY, Some(if jaa > 0.0 { (s2 / jaa).sqrt() } else { f64::INFINITY }))
        }
    };

    Ok(FitReport {
        model_label: model.sequence.label.clone(),
        power_scale: best_p,
        power_scale_sigma: sig_p,
        peak_rate_t1: best_p * peak_x,
        alpha_max: alpha,
        alpha_max_sigma: sig_a,
        residual_norm: rss.sqrt(),
        residual_rms: (rss / npts as f64).sqrt(),
        points_used: npts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angular_to_hz;
    use crate::pulses::{make_pp_sequence, make_s_fraction_sequence, SincConvention};
    use crate::pumping::{power_scale_for_peak_rate, predict_comb, PopulationNormalization};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;

    const T: f64 = 1.5e-6;

    fn pump() -> PumpConfig {
        PumpConfig {
            t1: 10e-3,
            tz: 10.0,
            r: 0.5,
            tp: 100e-6,
            gamma: 0.047 / T,
            power_scale: 1.0,
            normalization: PopulationNormalization::TwoGroundSublevels,
        }
    }

    fn grid() -> FrequencyGrid {
        FrequencyGrid::periodic(2.0 * PI / T, 1, 512).unwrap()
    }

    fn records(grid: &FrequencyGrid, values: &[f64]) -> Vec<AbsorptionRecord> {
        grid.points()
            .zip(values)
            .map(|(d, a)| AbsorptionRecord { detuning_hz: angular_to_hz(d), alpha_per_m: *a })
            .collect()
    }

    fn model(seq: PulseSequence, alpha: Option<f64>) -> FitModel {
        FitModel { sequence: seq, pump: pump(), alpha_max: alpha, window: (-PI / T, PI / T) }
    }

    #[test]
    fn synthetic_round_trip_within_three_sigma() {
        let seq = make_pp_sequence(T, 100e-9, 100e-6).unwrap();
        let g = grid();
        let p_true = power_scale_for_peak_rate(&seq, &pump(), &g, 0.01).unwrap();
        let clean = predict_comb(&seq, &pump().with_power(p_true), 3.0, &g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01 * 3.0).unwrap();
        let noisy: Vec<f64> = clean.values().iter().map(|a| a + noise.sample(&mut rng)).collect();
        let rep = compare_to_measurement(&records(&g, &noisy), &model(seq, None)).unwrap();
        assert!(
            (rep.power_scale - p_true).abs() < 3.0 * rep.power_scale_sigma,
            "{} ± {} vs {p_true}",
            rep.power_scale,
            rep.power_scale_sigma
        );
        assert!(rep.power_scale_sigma < 0.1 * p_true, "{} {}", rep.power_scale_sigma, p_true);
        assert!((rep.alpha_max - 3.0).abs() < 3.0 * rep.alpha_max_sigma.unwrap());
        assert!((rep.residual_rms - 0.03).abs() < 0.005);
    }

    #[test]
    fn flat_spectrum_fits_zero_power() {
        let g = grid();
        let seq = make_pp_sequence(T, 100e-9, 100e-6).unwrap();
        let rep = compare_to_measurement(&records(&g, &vec![2.5; g.len()]), &model(seq, Some(2.5))).unwrap();
        assert_eq!(rep.power_scale, 0.0);
        assert!(rep.residual_norm < 1e-12);
    }

    #[test]
    fn pulse_pair_model_explains_a_cosine_comb_better() {
        let g = grid();
        let c = (-pump().gamma * T).exp();
        // α_M g(x) with x ∝ 1 + e^{−γT} cos ΔT: a PP-engraved comb.
        let eps = pump().epsilon();
        let values: Vec<f64> =
            g.points().map(|d| 3.0 * 2.0 * relative_absorption(0.5 * (1.0 + c * (d * T).cos()), 0.5, eps)).collect();
        let meas = records(&g, &values);
        let pp = make_pp_sequence(T, 100e-9, 100e-6).unwrap();
        let s = make_s_fraction_sequence(2.0, T, 30, 20e-9, 100e-6, SincConvention::Printed).unwrap();
        let rp = compare_to_measurement(&meas, &model(pp, None)).unwrap();
        let rs = compare_to_measurement(&meas, &model(s, None)).unwrap();
        assert!(rp.residual_norm < rs.residual_norm, "{} vs {}", rp.residual_norm, rs.residual_norm);
        assert!(rp.residual_rms < 1e-3 * 3.0);
    }

    #[test]
    fn disjoint_support_is_an_error() {
        let seq = make_pp_sequence(T, 100e-9, 100e-6).unwrap();
        let meas = vec![
            AbsorptionRecord { detuning_hz: 5e7, alpha_per_m: 1.0 },
            AbsorptionRecord { detuning_hz: 5.1e7, alpha_per_m: 1.0 },
            AbsorptionRecord { detuning_hz: 5.2e7, alpha_per_m: 1.0 },
        ];
        assert!(matches!(compare_to_measurement(&meas, &model(seq, None)), Err(AfcError::Configuration(_))));
    }
}
