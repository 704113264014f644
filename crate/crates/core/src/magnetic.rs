//! Zeeman and superhyperfine structure of a four-level system under a
//! static magnetic field.
//!
//! Pumping one ground sublevel at `Δ` also burns side holes at `±Δ_e` and
//! refills the other ground sublevel, which shows up as anti-holes at
//! `±Δ_g` and `±(Δ_g − Δ_e)`. A comb prepared this way inherits the same
//! side combs and anti-combs. Here the effect is modelled as a signed
//! superposition of shifted copies of the pumping rate acting on level 1.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::profile_efficiency;
use crate::error::{AfcError, Result};
use crate::pulses::PulseSequence;
use crate::pumping::{sequence_pumping_rate, steady_state_absorption, PumpConfig};
use crate::spectral::{interpolate, AbsorptionProfile, FrequencyGrid, SampledSpectrum};

/// Ground-state Zeeman slope of Tm³⁺:YAG along [001] (Hz/G).
pub const TM_YAG_DELTA_G_HZ_PER_G: f64 = 28.0e3;
/// Excited-state Zeeman slope of Tm³⁺:YAG along [001] (Hz/G).
pub const TM_YAG_DELTA_E_HZ_PER_G: f64 = 6.0e3;
/// Superhyperfine (Al) slope (Hz/G).
pub const TM_YAG_DELTA_S_HZ_PER_G: f64 = 1.05e3;

/// Field-dependent level splittings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStructure {
    /// Applied field (G).
    pub field_gauss: f64,
    /// Ground splitting slope `δ_g` (Hz/G).
    pub delta_g_per_gauss: f64,
    /// Excited splitting slope `δ_e` (Hz/G).
    pub delta_e_per_gauss: f64,
    /// Superhyperfine slope `δ_S` (Hz/G).
    pub delta_s_per_gauss: f64,
    /// Field below which the shelving lifetime is negligible (G).
    pub lifetime_threshold_gauss: f64,
}

impl LevelStructure {
    /// Thulium in YAG with the given field and lifetime threshold.
    pub fn tm_yag(field_gauss: f64, lifetime_threshold_gauss: f64) -> Self {
        LevelStructure {
            field_gauss,
            delta_g_per_gauss: TM_YAG_DELTA_G_HZ_PER_G,
            delta_e_per_gauss: TM_YAG_DELTA_E_HZ_PER_G,
            delta_s_per_gauss: TM_YAG_DELTA_S_HZ_PER_G,
            lifetime_threshold_gauss,
        }
    }

    pub fn at_field(mut self, field_gauss: f64) -> Self {
        self.field_gauss = field_gauss;
        self
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [
            ("field", self.field_gauss),
            ("delta_g slope", self.delta_g_per_gauss),
            ("delta_e slope", self.delta_e_per_gauss),
            ("delta_S slope", self.delta_s_per_gauss),
            ("lifetime threshold", self.lifetime_threshold_gauss),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                v.push(format!("{name} must be ≥ 0 and finite (got {x})"));
            }
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

    /// Ground splitting `Δ_g` (rad/s).
    pub fn delta_g(&self) -> f64 {
        2.0 * PI * self.delta_g_per_gauss * self.field_gauss
    }

    /// Excited splitting `Δ_e` (rad/s).
    pub fn delta_e(&self) -> f64 {
        2.0 * PI * self.delta_e_per_gauss * self.field_gauss
    }

    /// Superhyperfine satellite offset `δ_S B` (rad/s).
    pub fn superhyperfine_shift(&self) -> f64 {
        2.0 * PI * self.delta_s_per_gauss * self.field_gauss
    }
}

/// Whether a component removes (hole) or adds (anti-hole) absorption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Hole,
    AntiHole,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Hole => 1.0,
            Polarity::AntiHole => -1.0,
        }
    }
}

/// One shifted replica of the pump spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideComponent {
    /// Frequency shift (rad/s).
    pub shift: f64,
    pub polarity: Polarity,
    pub weight: f64,
}

/// Relative strengths of the side structures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SideWeights {
    /// Each side hole at `±Δ_e`.
    pub side_hole: f64,
    /// Each anti-hole at `±Δ_g` and `±(Δ_g − Δ_e)`.
    pub anti_hole: f64,
    /// Each superhyperfine satellite at `±δ_S B` around every component;
    /// zero leaves them out.
    pub superhyperfine: f64,
}

impl Default for SideWeights {
    fn default() -> Self {
        SideWeights { side_hole: 1.0, anti_hole: 0.5, superhyperfine: 0.0 }
    }
}

impl SideWeights {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, x) in [("side hole", self.side_hole), ("anti-hole", self.anti_hole), ("superhyperfine", self.superhyperfine)] {
            if !(x >= 0.0) || !x.is_finite() {
                v.push(format!("{name} weight must be ≥ 0 and finite (got {x})"));
            }
        }
        v
    }
}

/// The set of shifted, signed replicas making up the effective pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideStructureSpec {
    pub components: Vec<SideComponent>,
}

impl SideStructureSpec {
    /// Only the central hole.
    pub fn central_only() -> Self {
        SideStructureSpec { components: vec![SideComponent { shift: 0.0, polarity: Polarity::Hole, weight: 1.0 }] }
    }

    pub fn max_abs_shift(&self) -> f64 {
        self.components.iter().map(|c| c.shift.abs()).fold(0.0, f64::max)
    }
}

/// Central hole, side holes at `±Δ_e`, anti-holes at `±Δ_g` and
/// `±(Δ_g − Δ_e)`, plus optional superhyperfine satellites.
pub fn side_structure(levels: &LevelStructure, weights: &SideWeights) -> SideStructureSpec {
    let de = levels.delta_e();
    let dg = levels.delta_g();
    let mut base = vec![
        SideComponent { shift: 0.0, polarity: Polarity::Hole, weight: 1.0 },
        SideComponent { shift: de, polarity: Polarity::Hole, weight: weights.side_hole },
        SideComponent { shift: -de, polarity: Polarity::Hole, weight: weights.side_hole },
        SideComponent { shift: dg, polarity: Polarity::AntiHole, weight: weights.anti_hole },
        SideComponent { shift: -dg, polarity: Polarity::AntiHole, weight: weights.anti_hole },
        SideComponent { shift: dg - de, polarity: Polarity::AntiHole, weight: weights.anti_hole },
        SideComponent { shift: -(dg - de), polarity: Polarity::AntiHole, weight: weights.anti_hole },
    ];
    if weights.superhyperfine > 0.0 {
        let s = levels.superhyperfine_shift();
        let satellites: Vec<SideComponent> = base
            .iter()
            .flat_map(|c| {
                [1.0, -1.0].map(|dir| SideComponent {
                    shift: c.shift + dir * s,
                    polarity: c.polarity,
                    weight: c.weight * weights.superhyperfine,
                })
            })
            .collect();
        base.extend(satellites);
    }
    SideStructureSpec { components: base }
}

/// Signed effective pump and the components that fell partly off the
/// base grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectivePump {
    pub spectrum: SampledSpectrum,
    pub warnings: Vec<String>,
}

/// `Σ sign · weight · base(Δ − shift)` on `target`. The base spectrum is
/// linearly interpolated; replicas reaching outside its grid are treated as
/// zero there and reported.
pub fn effective_pump_spectrum(base: &SampledSpectrum, spec: &SideStructureSpec, target: &FrequencyGrid) -> EffectivePump {
    let bg = &base.grid;
    let (lo, hi) = (bg.delta_min(), bg.delta_max());
    let mut values = vec![0.0; target.len()];
    let mut warnings = Vec::new();
    for c in &spec.components {
        let mut clipped = 0usize;
        for (i, v) in values.iter_mut().enumerate() {
            let x = target.point(i) - c.shift;
            if x < lo - 1e-9 * bg.spacing() || x > hi + 1e-9 * bg.spacing() {
                clipped += 1;
                continue;
            }
            *v += c.polarity.sign() * c.weight * interpolate(bg, &base.values, x.clamp(lo, hi));
        }
        if clipped > 0 {
            warnings.push(format!(
                "component at shift {:.4e} rad/s: {clipped} of {} samples outside the base grid were clipped",
                c.shift,
                target.len()
            ));
        }
    }
    EffectivePump { spectrum: SampledSpectrum { grid: target.clone(), values }, warnings }
}

/// Signed effective pumping rate of `seq` on `grid`, with every replica
/// evaluated exactly rather than interpolated.
pub fn effective_pump_rate(seq: &PulseSequence, config: &PumpConfig, spec: &SideStructureSpec, grid: &FrequencyGrid) -> Result<SampledSpectrum> {
    let mut values = vec![0.0; grid.len()];
    for c in &spec.components {
        if c.weight == 0.0 {
            continue;
        }
        let start = grid.delta_min() - c.shift;
        let shifted = FrequencyGrid::new(start, start + (grid.len() - 1) as f64 * grid.spacing(), grid.len())?;
        let rate = sequence_pumping_rate(seq, config, &shifted)?;
        for (v, r) in values.iter_mut().zip(&rate.values) {
            *v += c.polarity.sign() * c.weight * r;
        }
    }
    SampledSpectrum::new(grid.clone(), values)
}

/// Matching fields and the best joint compromise.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchingFields {
    /// `B_p = p / (T δ_e)` for `p = 1..=p_max` (G).
    pub side_comb: Vec<f64>,
    /// Field minimising the joint mismatch of `Δ_e T` to an integer and
    /// `Δ_g T` to a half-integer (G).
    pub joint: f64,
    /// `Δ_e T` at the joint field.
    pub joint_delta_e_t: f64,
    /// `Δ_g T` at the joint field.
    pub joint_delta_g_t: f64,
}

/// Joint mismatch `dist(Δ_e T, ℤ≥1)² + dist(Δ_g T, ℤ + ½)²` (cycles).
pub fn joint_mismatch(levels: &LevelStructure, period_time: f64) -> f64 {
    let e = levels.delta_e_per_gauss * levels.field_gauss * period_time;
    let g = levels.delta_g_per_gauss * levels.field_gauss * period_time;
    let de = e - e.round().max(1.0);
    let dg = g - 0.5 - (g - 0.5).round();
    de * de + dg * dg
}

/// Fields where the side combs fall on comb teeth, and the field in
/// `search` (G) that best matches side combs and anti-combs at once.
///
/// The joint search keeps `Δ_g` inside `max_delta_g` (rad/s): beyond that
/// the anti-combs no longer overlap the prepared band and the condition
/// is moot.
pub fn matching_fields(
    levels: &LevelStructure,
    period_time: f64,
    p_max: usize,
    search: (f64, f64),
    max_delta_g: f64,
) -> Result<MatchingFields> {
    if !(levels.delta_e_per_gauss > 0.0) {
        return Err(AfcError::contract("matching fields need a positive excited-state slope"));
    }
    if !(period_time > 0.0) {
        return Err(AfcError::contract("comb period must be positive"));
    }
    let side_comb = (1..=p_max).map(|p| p as f64 / (period_time * levels.delta_e_per_gauss)).collect();
    let (lo, hi) = search;
    if !(hi > lo && lo >= 0.0) {
        return Err(AfcError::contract(format!("search range [{lo}, {hi}] G is empty")));
    }
    let hi = if levels.delta_g_per_gauss > 0.0 {
        hi.min(max_delta_g / (2.0 * PI * levels.delta_g_per_gauss))
    } else {
        hi
    };
    let steps = 20_000usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=steps {
        let b = lo + (hi - lo) * i as f64 / steps as f64;
        let m = joint_mismatch(&levels.at_field(b), period_time);
        if m < best.0 {
            best = (m, b);
        }
    }
    let joint = best.1;
    Ok(MatchingFields {
        side_comb,
        joint,
        joint_delta_e_t: levels.delta_e_per_gauss * joint * period_time,
        joint_delta_g_t: levels.delta_g_per_gauss * joint * period_time,
    })
}

/// Convolution of a periodic comb with the superhyperfine doublet:
/// `(α(Δ) + w[α(Δ − s) + α(Δ + s)]) / (1 + 2w)` with `s = δ_S B`.
pub fn superhyperfine_broaden(profile: &AbsorptionProfile, levels: &LevelStructure, satellite_weight: f64) -> Result<AbsorptionProfile> {
    if !(satellite_weight >= 0.0) {
        return Err(AfcError::contract(format!("satellite weight must be ≥ 0 (got {satellite_weight})")));
    }
    let s = levels.superhyperfine_shift();
    if s == 0.0 || satellite_weight == 0.0 {
        return Ok(profile.clone());
    }
    let grid = profile.grid();
    if !grid.is_periodic() {
        return Err(AfcError::contract("superhyperfine broadening needs a periodic profile"));
    }
    let vals = profile.values();
    let wrap = |x: f64| interpolate(grid, vals, x);
    let w = satellite_weight;
    let out: Vec<f64> = grid
        .points()
        .enumerate()
        .map(|(i, x)| (vals[i] + w * (wrap(x - s) + wrap(x + s))) / (1.0 + 2.0 * w))
        .collect();
    AbsorptionProfile::clamped(grid.clone(), out, profile.alpha_max())
}

/// How the shelving lifetime switches on with field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeOnset {
    /// `η = 0` strictly below this field (G).
    pub threshold_gauss: f64,
    /// Width of the smooth ramp above the threshold (G); zero for a step.
    pub ramp_gauss: f64,
}

impl LifetimeOnset {
    /// Fraction of the pumped population that survives to the probe.
    pub fn factor(&self, field_gauss: f64) -> f64 {
        if field_gauss < self.threshold_gauss {
            0.0
        } else if self.ramp_gauss <= 0.0 {
            1.0
        } else {
            let u = ((field_gauss - self.threshold_gauss) / self.ramp_gauss).min(1.0);
            u * u * (3.0 - 2.0 * u)
        }
    }
}

/// Parameters of a field sweep besides the sequence and pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSweepModel {
    /// Slopes; the field value is ignored.
    pub levels: LevelStructure,
    pub weights: SideWeights,
    /// Doublet weight for the comb broadening.
    pub superhyperfine_weight: f64,
    pub onset: LifetimeOnset,
    /// `α_M L`.
    pub alpha_max_l: f64,
}

/// One point of an efficiency-versus-field curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldPoint {
    pub field_gauss: f64,
    pub eta: f64,
    pub mean_transmission: f64,
    pub alpha0_l: f64,
    pub alpha1_l: f64,
}

/// Efficiency versus field.
///
/// For each field: side structure, signed effective pump clipped at zero,
/// steady-state comb, superhyperfine broadening, forward efficiency. The
/// pumped fraction below the lifetime threshold is zero; between threshold
/// and full lifetime the pumping rate is scaled by the onset factor.
/// `grid` must be periodic with the comb period.
pub fn efficiency_vs_field(
    seq: &PulseSequence,
    pump: &PumpConfig,
    model: &FieldSweepModel,
    fields: &[f64],
    grid: &FrequencyGrid,
) -> Result<Vec<FieldPoint>> {
    if fields.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AfcError::contract("field grid must be strictly ascending"));
    }
    if !grid.is_periodic() {
        return Err(AfcError::contract("efficiency needs a periodic (central-period) grid"));
    }
    let mut v = model.levels.violations();
    v.extend(model.weights.violations());
    v.extend(pump.violations());
    if !(model.alpha_max_l > 0.0) {
        v.push(format!("alpha_max_l must be positive (got {})", model.alpha_max_l));
    }
    if !v.is_empty() {
        return Err(AfcError::Validation(v));
    }
    fields
        .par_iter()
        .map(|&b| {
            let levels = model.levels.at_field(b);
            let onset = model.onset.factor(b);
            let profile = if onset == 0.0 {
                AbsorptionProfile::uniform(grid.clone(), model.alpha_max_l)?
            } else {
                let spec = side_structure(&levels, &model.weights);
                let mut rate = effective_pump_rate(seq, pump, &spec, grid)?;
                for r in rate.values.iter_mut() {
                    *r = (*r * onset).max(0.0);
                }
                let comb = steady_state_absorption(&rate, pump, model.alpha_max_l)?;
                superhyperfine_broaden(&comb, &levels, model.superhyperfine_weight)?
            };
            let rep = profile_efficiency(&profile, 1.0)?;
            Ok(FieldPoint {
                field_gauss: b,
                // A flat profile has no echo; drop the quadrature residue.
                eta: if onset == 0.0 { 0.0 } else { rep.eta },
                mean_transmission: profile.mean_transmission(1.0),
                alpha0_l: rep.alpha0_l,
                alpha1_l: rep.alpha1_l,
            })
        })
        .collect()
}
