//! Declarative experiments: a TOML description in, CSV tables and a JSON
//! manifest out.
//!
//! Key names carry their units (`period_us`, `gamma_khz`, `field_step_gauss`).
//! Every precondition is checked before any computation and all problems
//! are reported together. Tables are computed in memory and only then
//! written, each through a temporary file and a rename, so a failed run
//! leaves no partial output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::efficiency::{
    build_comb_profile, lorentzian_comb_optimal_width, profile_efficiency, square_comb_optimal_efficiency,
    square_comb_optimal_width, CombShape, CombSpec,
};
use crate::error::{AfcError, Result};
use crate::fit::{compare_to_measurement, FitModel, FitReport};
use crate::magnetic::{efficiency_vs_field, FieldSweepModel, LevelStructure, LifetimeOnset, SideWeights};
use crate::propagation::{echo_amplitudes_ode, propagate, transfer_function, ProbePulse};
use crate::pulses::{
    make_pp_sequence, make_s_fraction_sequence, make_s_sequence, read_sequence_csv, sequence_spectrum, PulseSequence,
    PulseShape, SincConvention,
};
use crate::pumping::{
    efficiency_vs_power_curve, power_scale_for_peak_rate, predict_comb, AbsorptionRecord, PopulationNormalization,
    PumpConfig,
};
use crate::spectral::{fourier_coefficients, FrequencyGrid};
use crate::{angular_to_hz, hz_to_angular};

/// Echo orders extracted in the `custom` experiment.
const CUSTOM_ECHO_ORDERS: usize = 3;

/// The available experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Fig1Shapes,
    Fig1bCurve,
    Fig2Spectrum,
    Fig6PowerCurves,
    Fig5FieldSweep,
    Custom,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Fig1Shapes,
        ExperimentId::Fig1bCurve,
        ExperimentId::Fig2Spectrum,
        ExperimentId::Fig6PowerCurves,
        ExperimentId::Fig5FieldSweep,
        ExperimentId::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Fig1Shapes => "fig1_shapes",
            ExperimentId::Fig1bCurve => "fig1b_curve",
            ExperimentId::Fig2Spectrum => "fig2_spectrum",
            ExperimentId::Fig6PowerCurves => "fig6_power_curves",
            ExperimentId::Fig5FieldSweep => "fig5_field_sweep",
            ExperimentId::Custom => "custom",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::Fig1Shapes => "optimal square and Lorentzian comb profiles at one optical depth",
            ExperimentId::Fig1bCurve => "optimal square and Lorentzian efficiency versus optical depth",
            ExperimentId::Fig2Spectrum => "field spectrum |E(ω)| of each preparation sequence",
            ExperimentId::Fig6PowerCurves => "efficiency and mean transmission versus pump power per sequence",
            ExperimentId::Fig5FieldSweep => "efficiency versus magnetic field with Zeeman side combs",
            ExperimentId::Custom => "pumped comb, closed-form/ODE/propagated echoes, optional synthetic measurement",
        }
    }
}

/// `(name, description)` for every experiment.
pub fn list_experiments() -> Vec<(&'static str, &'static str)> {
    ExperimentId::ALL.iter().map(|e| (e.name(), e.description())).collect()
}

/// How a preparation sequence is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// Sinc-weighted train with band half-width `π/(qT)`.
    SFraction,
    /// Sinc-weighted train with an explicit width.
    S,
    /// Two equal pulses `T` apart.
    PulsePair,
    /// Pulses read from a CSV file.
    File,
}

/// One preparation sequence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub kind: Option<SequenceKind>,
    pub label: Option<String>,
    pub q: Option<f64>,
    pub gamma_width_khz: Option<f64>,
    pub k_max: Option<usize>,
    pub pulse_duration_ns: Option<f64>,
    pub pulse_shape: Option<PulseShape>,
    pub pattern_duration_us: Option<f64>,
    pub sinc_convention: Option<SincConvention>,
    pub file: Option<PathBuf>,
}

/// Three-level pump parameters; `T_p` comes from each sequence and `γ`
/// from the top level.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpSection {
    pub t1_ms: Option<f64>,
    pub tz_s: Option<f64>,
    pub branching_ratio: Option<f64>,
    pub normalization: Option<PopulationNormalization>,
}

/// Field grid and level structure for the field sweep.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub field_min_gauss: Option<f64>,
    pub field_max_gauss: Option<f64>,
    pub field_step_gauss: Option<f64>,
    pub delta_g_khz_per_gauss: Option<f64>,
    pub delta_e_khz_per_gauss: Option<f64>,
    pub delta_s_khz_per_gauss: Option<f64>,
    pub lifetime_threshold_gauss: Option<f64>,
    pub onset_ramp_gauss: Option<f64>,
    pub side_hole_weight: Option<f64>,
    pub anti_hole_weight: Option<f64>,
    pub superhyperfine_satellite_weight: Option<f64>,
    pub superhyperfine_broadening_weight: Option<f64>,
}

/// Extras for the `custom` experiment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub probe_fwhm_ns: Option<f64>,
    /// Standard deviation of the synthetic measurement noise, as a
    /// fraction of `α_M`. Absent: no synthetic measurement.
    pub synthetic_noise_fraction: Option<f64>,
}

/// A parsed experiment description. Every field is optional at parse time
/// so that validation can report all missing keys at once.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentId>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub period_us: Option<f64>,
    pub gamma_khz: Option<f64>,
    pub alpha_max_l: Option<f64>,
    pub alpha_max_l_values: Option<Vec<f64>>,
    pub length_m: Option<f64>,
    pub points_per_period: Option<usize>,
    pub periods: Option<usize>,
    pub depth_min: Option<f64>,
    pub depth_max: Option<f64>,
    pub depth_points: Option<usize>,
    pub span_mhz: Option<f64>,
    pub spectrum_points: Option<usize>,
    pub peak_rate_t1: Option<f64>,
    pub peak_rate_t1_min: Option<f64>,
    pub peak_rate_t1_max: Option<f64>,
    pub power_points: Option<usize>,
    pub sequences: Option<Vec<SequenceConfig>>,
    pub pump: Option<PumpSection>,
    pub field: Option<FieldSection>,
    pub custom: Option<CustomSection>,
    /// Directory relative paths are resolved against; set by
    /// [`ExperimentConfig::from_file`].
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads a config; relative paths inside are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = Some(path.parent().map(Path::to_path_buf).unwrap_or_default());
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Collects every violated precondition.
#[derive(Default)]
struct Issues(Vec<String>);

impl Issues {
    fn require<T: Copy>(&mut self, key: &str, v: Option<T>) -> Option<T> {
        if v.is_none() {
            self.0.push(format!("missing required key `{key}`"));
        }
        v
    }

    fn positive(&mut self, key: &str, v: Option<f64>) -> Option<f64> {
        match self.require(key, v) {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(x) => {
                self.0.push(format!("`{key}` must be positive and finite (got {x})"));
                None
            }
            None => None,
        }
    }

    fn opt_nonneg(&mut self, key: &str, v: Option<f64>, default: f64) -> f64 {
        let x = v.unwrap_or(default);
        if !(x >= 0.0 && x.is_finite()) {
            self.0.push(format!("`{key}` must be ≥ 0 and finite (got {x})"));
        }
        x
    }

    fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }
}

/// Everything needed to run, after validation.
#[derive(Debug, Clone)]
struct Plan {
    id: ExperimentId,
    output_dir: PathBuf,
    seed: u64,
    period_time: Option<f64>,
    gamma: Option<f64>,
    alpha_max_l: Option<f64>,
    alpha_max_l_values: Vec<f64>,
    length: f64,
    points_per_period: Option<usize>,
    periods: usize,
    depths: Option<(f64, f64, usize)>,
    span: Option<f64>,
    spectrum_points: usize,
    peak_rate_t1: Option<f64>,
    power_range: Option<(f64, f64, usize)>,
    sequences: Vec<PulseSequence>,
    sinc: BTreeMap<String, SincConvention>,
    pump: Option<PumpConfig>,
    field: Option<(Vec<f64>, FieldSweepModel)>,
    probe_fwhm: Option<f64>,
    noise: Option<f64>,
}

impl Plan {
    fn central_grid(&self) -> Result<FrequencyGrid> {
        let t = self.period_time.expect("validated");
        FrequencyGrid::periodic(2.0 * PI / t, 1, self.points_per_period.expect("validated"))
    }

    fn pump_for(&self, seq: &PulseSequence) -> PumpConfig {
        let mut p = self.pump.expect("validated");
        p.tp = seq.pattern_duration;
        p
    }
}

fn needs(id: ExperimentId) -> (bool, bool, bool) {
    // (period, sequences, pump)
    match id {
        ExperimentId::Fig1Shapes => (true, false, false),
        ExperimentId::Fig1bCurve => (false, false, false),
        ExperimentId::Fig2Spectrum => (true, true, false),
        ExperimentId::Fig6PowerCurves | ExperimentId::Fig5FieldSweep | ExperimentId::Custom => (true, true, true),
    }
}

/// Smallest even number of samples per period with spacing `≤ γ/4`, and
/// at least 256.
fn default_points_per_period(period_time: f64, gamma: f64) -> usize {
    let p = 2.0 * PI / period_time;
    let n = (4.0 * p / gamma).ceil() as usize;
    (n + n % 2).max(256)
}

/// Checks the keys of one sequence and builds it. With `t = None` (an
/// invalid period) the keys are still checked but nothing is built.
fn build_sequence(
    cfg: &ExperimentConfig,
    sc: &SequenceConfig,
    idx: usize,
    t: Option<f64>,
    issues: &mut Issues,
) -> Option<PulseSequence> {
    let key = |k: &str| format!("sequences[{idx}].{k}");
    let kind = issues.require(&key("kind"), sc.kind)?;
    let tp = issues.positive(&key("pattern_duration_us"), sc.pattern_duration_us).map(|x| x * 1e-6);
    let dur = if kind == SequenceKind::File {
        Some(0.0)
    } else {
        issues.positive(&key("pulse_duration_ns"), sc.pulse_duration_ns).map(|x| x * 1e-9)
    };
    let conv = sc.sinc_convention.unwrap_or_default();
    let k_max = || sc.k_max;
    let built = match kind {
        SequenceKind::SFraction => {
            let q = issues.positive(&key("q"), sc.q);
            let k = issues.require(&key("k_max"), k_max());
            match (q, k, tp, dur, t) {
                (Some(q), Some(k), Some(tp), Some(d), Some(t)) => Some(make_s_fraction_sequence(q, t, k, d, tp, conv)),
                _ => None,
            }
        }
        SequenceKind::S => {
            let g = issues.positive(&key("gamma_width_khz"), sc.gamma_width_khz).map(|x| hz_to_angular(x * 1e3));
            let k = issues.require(&key("k_max"), k_max());
            match (g, k, tp, dur, t) {
                (Some(g), Some(k), Some(tp), Some(d), Some(t)) => Some(make_s_sequence(g, t, k, d, tp, conv)),
                _ => None,
            }
        }
        SequenceKind::PulsePair => match (tp, dur, t) {
            (Some(tp), Some(d), Some(t)) => Some(make_pp_sequence(t, d, tp)),
            _ => None,
        },
        SequenceKind::File => {
            let path = match &sc.file {
                Some(p) => cfg.resolve(p),
                None => {
                    issues.push(format!("missing required key `{}`", key("file")));
                    return None;
                }
            };
            let (tp, t) = (tp?, t?);
            Some(fs::File::open(&path).map_err(AfcError::from).and_then(|f| read_sequence_csv(f, t, tp)))
        }
    };
    match built? {
        Ok(mut seq) => {
            if let Some(shape) = sc.pulse_shape {
                seq.shape = shape;
            }
            if let Some(l) = &sc.label {
                seq.label = l.clone();
            }
            Some(seq)
        }
        Err(e) => {
            issues.push(format!("sequences[{idx}]: {e}"));
            None
        }
    }
}

/// Checks `cfg` and resolves it into a runnable plan. On failure the error
/// lists every problem found.
fn validate(cfg: &ExperimentConfig) -> Result<Plan> {
    let mut is = Issues::default();
    let id = is.require("experiment", cfg.experiment);
    let output_dir = match &cfg.output_dir {
        Some(d) => Some(cfg.resolve(d)),
        None => {
            is.push("missing required key `output_dir`");
            None
        }
    };
    let Some(id) = id else {
        return Err(AfcError::Validation(is.0));
    };
    let (need_t, need_seq, need_pump) = needs(id);

    let period_time = if need_t { is.positive("period_us", cfg.period_us).map(|x| x * 1e-6) } else { None };
    let gamma_needed = need_pump || matches!(id, ExperimentId::Custom);
    let gamma = if gamma_needed { is.positive("gamma_khz", cfg.gamma_khz).map(|x| hz_to_angular(x * 1e3)) } else { None };
    let length = cfg.length_m.unwrap_or(1.0);
    if !(length > 0.0 && length.is_finite()) {
        is.push(format!("`length_m` must be positive (got {length})"));
    }

    let alpha_max_l = match id {
        ExperimentId::Fig1Shapes | ExperimentId::Fig5FieldSweep | ExperimentId::Custom => {
            is.positive("alpha_max_l", cfg.alpha_max_l)
        }
        _ => cfg.alpha_max_l,
    };
    let mut alpha_max_l_values = Vec::new();
    if id == ExperimentId::Fig6PowerCurves {
        alpha_max_l_values = match (&cfg.alpha_max_l_values, cfg.alpha_max_l) {
            (Some(v), _) => v.clone(),
            (None, Some(a)) => vec![a],
            (None, None) => {
                is.push("missing required key `alpha_max_l_values` (or `alpha_max_l`)");
                vec![]
            }
        };
        if alpha_max_l_values.is_empty() && cfg.alpha_max_l_values.is_some() {
            is.push("`alpha_max_l_values` is empty");
        }
        for a in &alpha_max_l_values {
            if !(*a > 0.0 && a.is_finite()) {
                is.push(format!("`alpha_max_l_values` entries must be positive (got {a})"));
            }
        }
    }

    let mut points_per_period = None;
    let periods = cfg.periods.unwrap_or(1);
    if periods == 0 {
        is.push("`periods` must be ≥ 1");
    }
    if let Some(t) = period_time {
        let ppp = match (cfg.points_per_period, gamma) {
            (Some(n), _) => n,
            (None, Some(g)) => default_points_per_period(t, g),
            (None, None) => 1024,
        };
        if ppp < 8 {
            is.push(format!("`points_per_period` must be ≥ 8 (got {ppp})"));
        }
        if let Some(g) = gamma {
            let h = 2.0 * PI / t / ppp as f64;
            if h > 0.5 * g {
                is.push(format!(
                    "`points_per_period` = {ppp} gives a spacing of {:.3} kHz, coarser than γ/2 = {:.3} kHz",
                    angular_to_hz(h) * 1e-3,
                    angular_to_hz(0.5 * g) * 1e-3
                ));
            }
        }
        points_per_period = Some(ppp);
    }

    let depths = if id == ExperimentId::Fig1bCurve {
        let lo = is.positive("depth_min", cfg.depth_min);
        let hi = is.positive("depth_max", cfg.depth_max);
        let n = is.require("depth_points", cfg.depth_points);
        match (lo, hi, n) {
            (Some(lo), Some(hi), Some(n)) if hi > lo && n >= 2 => Some((lo, hi, n)),
            (Some(_), Some(_), Some(_)) => {
                is.push("need depth_max > depth_min and depth_points ≥ 2");
                None
            }
            _ => None,
        }
    } else {
        None
    };

    let span = if id == ExperimentId::Fig2Spectrum {
        is.positive("span_mhz", cfg.span_mhz).map(|x| hz_to_angular(x * 1e6))
    } else {
        None
    };
    let spectrum_points = cfg.spectrum_points.unwrap_or(4001);
    if id == ExperimentId::Fig2Spectrum && spectrum_points < 2 {
        is.push("`spectrum_points` must be ≥ 2");
    }

    let peak_rate_t1 = match id {
        ExperimentId::Fig5FieldSweep | ExperimentId::Custom => is.positive("peak_rate_t1", cfg.peak_rate_t1),
        _ => None,
    };
    let power_range = if id == ExperimentId::Fig6PowerCurves {
        let lo = is.positive("peak_rate_t1_min", cfg.peak_rate_t1_min);
        let hi = is.positive("peak_rate_t1_max", cfg.peak_rate_t1_max);
        let n = is.require("power_points", cfg.power_points);
        match (lo, hi, n) {
            (Some(lo), Some(hi), Some(n)) if hi > lo && n >= 3 => Some((lo, hi, n)),
            (Some(_), Some(_), Some(_)) => {
                is.push("need peak_rate_t1_max > peak_rate_t1_min and power_points ≥ 3");
                None
            }
            _ => None,
        }
    } else {
        None
    };

    let mut sequences = Vec::new();
    let mut sinc = BTreeMap::new();
    if need_seq {
        match (&cfg.sequences, period_time) {
            (None, _) => is.push("missing required table array `sequences`"),
            (Some(v), _) if v.is_empty() => is.push("`sequences` is empty"),
            (Some(v), t) => {
                for (i, sc) in v.iter().enumerate() {
                    if let Some(s) = build_sequence(cfg, sc, i, t, &mut is) {
                        if matches!(sc.kind, Some(SequenceKind::S | SequenceKind::SFraction)) {
                            sinc.insert(s.label.clone(), sc.sinc_convention.unwrap_or_default());
                        }
                        sequences.push(s);
                    }
                }
                let mut labels: Vec<&str> = sequences.iter().map(|s| s.label.as_str()).collect();
                labels.sort_unstable();
                if labels.windows(2).any(|w| w[0] == w[1]) {
                    is.push("sequence labels must be unique");
                }
            }
        }
    }

    let mut pump = None;
    if need_pump {
        match &cfg.pump {
            None => is.push("missing required table `pump`"),
            Some(ps) => {
                let t1 = is.positive("pump.t1_ms", ps.t1_ms).map(|x| x * 1e-3);
                let tz = is.positive("pump.tz_s", ps.tz_s);
                let r = is.require("pump.branching_ratio", ps.branching_ratio);
                if let (Some(t1), Some(tz), Some(r), Some(g)) = (t1, tz, r, gamma) {
                    let pc = PumpConfig {
                        t1,
                        tz,
                        r,
                        tp: 1.0,
                        gamma: g,
                        power_scale: 0.0,
                        normalization: ps.normalization.unwrap_or_default(),
                    };
                    let v = pc.violations();
                    if v.is_empty() {
                        pump = Some(pc);
                    } else {
                        is.0.extend(v.into_iter().map(|m| format!("pump: {m}")));
                    }
                }
            }
        }
    }

    let mut field = None;
    if id == ExperimentId::Fig5FieldSweep {
        match &cfg.field {
            None => is.push("missing required table `field`"),
            Some(fs) => {
                let lo = is.require("field.field_min_gauss", fs.field_min_gauss);
                let hi = is.require("field.field_max_gauss", fs.field_max_gauss);
                let step = is.positive("field.field_step_gauss", fs.field_step_gauss);
                let thr = is.require("field.lifetime_threshold_gauss", fs.lifetime_threshold_gauss);
                let levels = LevelStructure {
                    field_gauss: 0.0,
                    delta_g_per_gauss: 1e3 * fs.delta_g_khz_per_gauss.unwrap_or(crate::magnetic::TM_YAG_DELTA_G_HZ_PER_G * 1e-3),
                    delta_e_per_gauss: 1e3 * fs.delta_e_khz_per_gauss.unwrap_or(crate::magnetic::TM_YAG_DELTA_E_HZ_PER_G * 1e-3),
                    delta_s_per_gauss: 1e3 * fs.delta_s_khz_per_gauss.unwrap_or(crate::magnetic::TM_YAG_DELTA_S_HZ_PER_G * 1e-3),
                    lifetime_threshold_gauss: thr.unwrap_or(0.0),
                };
                is.0.extend(levels.violations().into_iter().map(|m| format!("field: {m}")));
                let weights = SideWeights {
                    side_hole: is.opt_nonneg("field.side_hole_weight", fs.side_hole_weight, 1.0),
                    anti_hole: is.opt_nonneg("field.anti_hole_weight", fs.anti_hole_weight, 0.5),
                    superhyperfine: is.opt_nonneg("field.superhyperfine_satellite_weight", fs.superhyperfine_satellite_weight, 0.0),
                };
                let shf = is.opt_nonneg("field.superhyperfine_broadening_weight", fs.superhyperfine_broadening_weight, 0.0);
                let ramp = is.opt_nonneg("field.onset_ramp_gauss", fs.onset_ramp_gauss, 0.0);
                if let (Some(lo), Some(hi), Some(step), Some(thr)) = (lo, hi, step, thr) {
                    if !(lo >= 0.0 && hi >= lo) {
                        is.push(format!("field range [{lo}, {hi}] G must satisfy 0 ≤ min ≤ max"));
                    } else {
                        let n = ((hi - lo) / step + 1e-9).floor() as usize;
                        let fields: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).collect();
                        field = Some((
                            fields,
                            FieldSweepModel {
                                levels,
                                weights,
                                superhyperfine_weight: shf,
                                onset: LifetimeOnset { threshold_gauss: thr, ramp_gauss: ramp },
                                alpha_max_l: alpha_max_l.unwrap_or(1.0),
                            },
                        ));
                    }
                }
            }
        }
    }

    let (mut probe_fwhm, mut noise) = (None, None);
    if id == ExperimentId::Custom {
        let cs = cfg.custom.clone().unwrap_or_default();
        probe_fwhm = Some(match cs.probe_fwhm_ns {
            Some(x) => x * 1e-9,
            None => period_time.map(|t| 0.1 * t).unwrap_or(1.0),
        });
        if let (Some(f), Some(t)) = (probe_fwhm, period_time) {
            if !(f > 0.0 && 2.0 * f <= t) {
                is.push(format!("`custom.probe_fwhm_ns` must be positive and at most T/2 (got {} ns)", f * 1e9));
            }
        }
        if let Some(n) = cs.synthetic_noise_fraction {
            if !(n >= 0.0 && n.is_finite()) {
                is.push(format!("`custom.synthetic_noise_fraction` must be ≥ 0 (got {n})"));
            }
            noise = Some(n);
        }
    }

    if !is.0.is_empty() {
        return Err(AfcError::Validation(is.0));
    }
    Ok(Plan {
        id,
        output_dir: output_dir.expect("checked"),
        seed: cfg.seed.unwrap_or(0),
        period_time,
        gamma,
        alpha_max_l,
        alpha_max_l_values,
        length,
        points_per_period,
        periods,
        depths,
        span,
        spectrum_points,
        peak_rate_t1,
        power_range,
        sequences,
        sinc,
        pump,
        field,
        probe_fwhm,
        noise,
    })
}

/// Validates without running.
pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    validate(cfg).map(|_| ())
}

/// One generated table.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputTable {
    pub file_name: String,
    pub rows: usize,
    pub contents: String,
}

/// Result of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub output_dir: PathBuf,
    pub tables: Vec<OutputTable>,
    pub manifest: serde_json::Value,
}

struct Table {
    name: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Self {
        Table { name, header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn render(self) -> Result<OutputTable> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| AfcError::Io(e.into_error()))?;
        Ok(OutputTable {
            file_name: format!("{}.csv", self.name),
            rows: self.rows.len(),
            contents: String::from_utf8(bytes).expect("csv output is UTF-8"),
        })
    }
}

/// Fixed, round-trippable number formatting for CSV bodies.
fn num(x: f64) -> String {
    format!("{x:.10e}")
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn run_fig1_shapes(plan: &Plan) -> Result<Vec<Table>> {
    let t = plan.period_time.expect("validated");
    let aml = plan.alpha_max_l.expect("validated");
    let grid = FrequencyGrid::periodic(2.0 * PI / t, plan.periods, plan.points_per_period.expect("validated"))?;
    let sq_width = square_comb_optimal_width(aml, t)?;
    let lor = lorentzian_comb_optimal_width(aml, t)?;
    let spec = |shape, width| CombSpec { shape, alpha_max: aml, length: 1.0, period_time: t, width };
    let square = build_comb_profile(&spec(CombShape::Square, sq_width), &grid)?;
    let lorentz = build_comb_profile(&spec(CombShape::Lorentzian, lor.half_width), &grid)?;

    let mut shapes = Table::new("shapes", &["detuning_hz", "square_alpha_l", "lorentzian_alpha_l"]);
    for (i, d) in grid.points().enumerate() {
        shapes.push(vec![num(angular_to_hz(d)), num(square.values()[i]), num(lorentz.values()[i])]);
    }
    let mut summary = Table::new("summary", &["shape", "half_width_t", "eta", "alpha0_l", "alpha1_l", "eta_sampled"]);
    let sq = square_comb_optimal_efficiency(aml)?;
    let sq_sampled = profile_efficiency(&square, 1.0)?;
    summary.push(vec!["square".into(), num(sq_width * t), num(sq.eta), num(sq.alpha0_l), num(sq.alpha1_l), num(sq_sampled.eta)]);
    let lor_sampled = profile_efficiency(&lorentz, 1.0)?;
    summary.push(vec![
        "lorentzian".into(),
        num(lor.half_width * t),
        num(lor.report.eta),
        num(lor.report.alpha0_l),
        num(lor.report.alpha1_l),
        num(lor_sampled.eta),
    ]);
    Ok(vec![shapes, summary])
}

fn run_fig1b(plan: &Plan) -> Result<Vec<Table>> {
    let (lo, hi, n) = plan.depths.expect("validated");
    let rows: Vec<Vec<String>> = log_grid(lo, hi, n)
        .par_iter()
        .map(|&d| {
            let sq = square_comb_optimal_efficiency(d)?;
            let lor = lorentzian_comb_optimal_width(d, 1.0)?;
            Ok(vec![
                num(d),
                num(sq.eta),
                num(lor.report.eta),
                num(square_comb_optimal_width(d, 1.0)?),
                num(lor.half_width),
            ])
        })
        .collect::<Result<_>>()?;
    let mut t = Table::new(
        "efficiency_vs_depth",
        &["alpha_max_l", "eta_square_opt", "eta_lorentzian_opt", "gamma_t_square_opt", "gamma_t_lorentzian_opt"],
    );
    t.rows = rows;
    Ok(vec![t])
}

fn run_fig2(plan: &Plan) -> Result<Vec<Table>> {
    let span = plan.span.expect("validated");
    let grid = FrequencyGrid::new(-span, span, plan.spectrum_points)?;
    let mut header = vec!["detuning_hz".to_string()];
    let mut columns = Vec::new();
    for seq in &plan.sequences {
        let s = sequence_spectrum(seq, &grid)?;
        let mags: Vec<f64> = s.field.iter().map(|z| z.norm()).collect();
        let peak = mags.iter().copied().fold(0.0, f64::max);
        header.push(format!("abs_field_{}", seq.label));
        columns.push(mags.into_iter().map(|m| if peak > 0.0 { m / peak } else { 0.0 }).collect::<Vec<_>>());
    }
    let mut t = Table { name: "field_spectrum", header, rows: Vec::new() };
    for (i, d) in grid.points().enumerate() {
        let mut row = vec![num(angular_to_hz(d))];
        row.extend(columns.iter().map(|c| num(c[i])));
        t.push(row);
    }
    Ok(vec![t])
}

fn run_fig6(plan: &Plan) -> Result<Vec<Table>> {
    let grid = plan.central_grid()?;
    let (lo, hi, n) = plan.power_range.expect("validated");
    let peaks = log_grid(lo, hi, n);
    let mut curves = Table::new(
        "power_curves",
        &["sequence", "alpha_max_l", "peak_rate_t1", "power_scale", "mean_transmission", "eta", "alpha0_l", "alpha1_l"],
    );
    let mut best = Table::new("best_power", &["sequence", "alpha_max_l", "peak_rate_t1", "eta", "mean_transmission"]);
    for seq in &plan.sequences {
        let pump = plan.pump_for(seq);
        let unit = power_scale_for_peak_rate(seq, &pump, &grid, 1.0)?;
        let powers: Vec<f64> = peaks.iter().map(|p| p * unit).collect();
        for &aml in &plan.alpha_max_l_values {
            let pts = efficiency_vs_power_curve(seq, &pump, aml, &powers, &grid)?;
            let mut top = 0;
            for (i, (p, pk)) in pts.iter().zip(&peaks).enumerate() {
                if p.eta > pts[top].eta {
                    top = i;
                }
                curves.push(vec![
                    seq.label.clone(),
                    num(aml),
                    num(*pk),
                    num(p.power_scale),
                    num(p.mean_transmission),
                    num(p.eta),
                    num(p.alpha0_l),
                    num(p.alpha1_l),
                ]);
            }
            best.push(vec![seq.label.clone(), num(aml), num(peaks[top]), num(pts[top].eta), num(pts[top].mean_transmission)]);
        }
    }
    Ok(vec![curves, best])
}

fn run_fig5(plan: &Plan) -> Result<Vec<Table>> {
    let grid = plan.central_grid()?;
    let seq = &plan.sequences[0];
    let pump = plan.pump_for(seq);
    let scale = power_scale_for_peak_rate(seq, &pump, &grid, plan.peak_rate_t1.expect("validated"))?;
    let (fields, model) = plan.field.clone().expect("validated");
    let pts = efficiency_vs_field(seq, &pump.with_power(scale), &model, &fields, &grid)?;
    let mut t = Table::new("field_sweep", &["B_gauss", "eta", "mean_transmission", "alpha0_L", "alpha1_L"]);
    for p in pts {
        t.push(vec![num(p.field_gauss), num(p.eta), num(p.mean_transmission), num(p.alpha0_l), num(p.alpha1_l)]);
    }
    Ok(vec![t])
}

fn run_custom(plan: &Plan) -> Result<Vec<Table>> {
    let t = plan.period_time.expect("validated");
    let gamma = plan.gamma.expect("validated");
    let grid = plan.central_grid()?;
    let seq = &plan.sequences[0];
    let pump = plan.pump_for(seq);
    let scale = power_scale_for_peak_rate(seq, &pump, &grid, plan.peak_rate_t1.expect("validated"))?;
    let alpha_max = plan.alpha_max_l.expect("validated") / plan.length;
    let profile = predict_comb(seq, &pump.with_power(scale), alpha_max, &grid)?;

    let mut absorption = Table::new("absorption", &["detuning_hz", "alpha_per_m"]);
    for (d, a) in grid.points().zip(profile.values()) {
        absorption.push(vec![num(angular_to_hz(d)), num(*a)]);
    }

    let coeffs = fourier_coefficients(&profile, 16)?;
    let broadened = coeffs.homogeneously_broadened(gamma);
    let closed = profile_efficiency(&profile, plan.length)?;
    let ode = echo_amplitudes_ode(&broadened, plan.length, CUSTOM_ECHO_ORDERS)?;
    let pulse = ProbePulse::for_comb(t, plan.probe_fwhm.expect("validated"))?;
    let tf = transfer_function(&profile, gamma, plan.length, &pulse.frequency_grid())?;
    let train = propagate(&pulse, &tf, CUSTOM_ECHO_ORDERS)?;

    let mut echoes = Table::new("echoes", &["order", "energy_ode", "energy_propagated"]);
    for p in 0..=CUSTOM_ECHO_ORDERS {
        echoes.push(vec![p.to_string(), num(ode[p].norm_sqr()), num(train.energies[p])]);
    }
    let mut summary = Table::new("summary", &["quantity", "value"]);
    for (k, v) in [
        ("power_scale", scale),
        ("mean_transmission", profile.mean_transmission(plan.length)),
        ("alpha0_l", closed.alpha0_l),
        ("alpha1_l", closed.alpha1_l),
        ("eta_closed_form", closed.eta),
        ("eta_ode_broadened", ode[1].norm_sqr()),
        ("eta_propagated", train.efficiency()),
    ] {
        summary.push(vec![k.into(), num(v)]);
    }
    let mut out = vec![absorption, echoes, summary];

    if let Some(sigma) = plan.noise {
        let mut rng = rand::rngs::StdRng::seed_from_u64(plan.seed);
        let normal = Normal::new(0.0, sigma * alpha_max).map_err(|e| AfcError::contract(e.to_string()))?;
        let mut measured = Table::new("measured_synthetic", &["detuning_hz", "alpha_per_m"]);
        for (d, a) in grid.points().zip(profile.values()) {
            measured.push(vec![num(angular_to_hz(d)), num(a + normal.sample(&mut rng))]);
        }
        out.push(measured);
    }
    Ok(out)
}

fn conventions(plan: &Plan) -> serde_json::Value {
    serde_json::json!({
        "detuning_files": "Hz (internal angular frequency)",
        "fourier_analysis": "alpha_n = (1/P) int alpha(D) exp(+i n D T) dD",
        "lorentzian_kernel": "unit area",
        "sinc_convention": plan.sinc,
        "population_normalization": plan.pump.map(|p| p.normalization),
        "efficiency": "eta = |alpha_-1 L|^2 exp(-alpha_0 L)",
        "square_comb_optimum": "Gamma T = atan(2 pi / (alpha_M L)), efficiency evaluated at that width",
        "pulse_pair_contrast": "exp(-gamma T)",
        "length_m": plan.length,
    })
}

/// Runs an experiment in memory; nothing is written.
pub fn compute_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let plan = validate(cfg)?;
    let tables = match plan.id {
        ExperimentId::Fig1Shapes => run_fig1_shapes(&plan)?,
        ExperimentId::Fig1bCurve => run_fig1b(&plan)?,
        ExperimentId::Fig2Spectrum => run_fig2(&plan)?,
        ExperimentId::Fig6PowerCurves => run_fig6(&plan)?,
        ExperimentId::Fig5FieldSweep => run_fig5(&plan)?,
        ExperimentId::Custom => run_custom(&plan)?,
    };
    let tables = tables.into_iter().map(Table::render).collect::<Result<Vec<_>>>()?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let manifest = serde_json::json!({
        "experiment": plan.id.name(),
        "crate": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix_s": created,
        "seed": plan.seed,
        "conventions": conventions(&plan),
        "parameters": cfg,
        "outputs": tables.iter().map(|t| serde_json::json!({"file": t.file_name, "rows": t.rows})).collect::<Vec<_>>(),
    });
    Ok(RunOutput { output_dir: plan.output_dir, tables, manifest })
}

/// Writes `contents` to `path` through a temporary sibling and a rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Runs an experiment and writes its tables plus `manifest.json`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = compute_experiment(cfg)?;
    fs::create_dir_all(&out.output_dir)?;
    for t in &out.tables {
        write_atomic(&out.output_dir.join(&t.file_name), t.contents.as_bytes())?;
    }
    let manifest = serde_json::to_string_pretty(&out.manifest)?;
    write_atomic(&out.output_dir.join("manifest.json"), manifest.as_bytes())?;
    Ok(out)
}

/// Fits a measured absorption spectrum with the first sequence of `cfg`.
/// Uses `span_mhz` as the model window and `alpha_max_l` (if given) as a
/// fixed ceiling.
pub fn fit_measurement(measured: &[AbsorptionRecord], cfg: &ExperimentConfig) -> Result<FitReport> {
    let mut is = Issues::default();
    let t = is.positive("period_us", cfg.period_us).map(|x| x * 1e-6);
    let g = is.positive("gamma_khz", cfg.gamma_khz).map(|x| hz_to_angular(x * 1e3));
    let span = is.positive("span_mhz", cfg.span_mhz).map(|x| hz_to_angular(x * 1e6));
    let mut seq = None;
    match (&cfg.sequences, t) {
        (Some(v), t) if !v.is_empty() => seq = build_sequence(cfg, &v[0], 0, t, &mut is),
        _ => is.push("missing required table array `sequences`"),
    }
    let mut pump = None;
    match &cfg.pump {
        None => is.push("missing required table `pump`"),
        Some(ps) => {
            let t1 = is.positive("pump.t1_ms", ps.t1_ms).map(|x| x * 1e-3);
            let tz = is.positive("pump.tz_s", ps.tz_s);
            let r = is.require("pump.branching_ratio", ps.branching_ratio);
            if let (Some(t1), Some(tz), Some(r), Some(g), Some(s)) = (t1, tz, r, g, &seq) {
                let pc = PumpConfig {
                    t1,
                    tz,
                    r,
                    tp: s.pattern_duration,
                    gamma: g,
                    power_scale: 0.0,
                    normalization: ps.normalization.unwrap_or_default(),
                };
                let v = pc.violations();
                if v.is_empty() {
                    pump = Some(pc);
                } else {
                    is.0.extend(v.into_iter().map(|m| format!("pump: {m}")));
                }
            }
        }
    }
    if !is.0.is_empty() {
        return Err(AfcError::Validation(is.0));
    }
    let length = cfg.length_m.unwrap_or(1.0);
    let model = FitModel {
        sequence: seq.expect("validated"),
        pump: pump.expect("validated"),
        alpha_max: cfg.alpha_max_l.map(|a| a / length),
        window: (-span.expect("validated"), span.expect("validated")),
    };
    compare_to_measurement(measured, &model)
}

/// Renders a fit report as `key,value` CSV.
pub fn fit_report_csv(report: &FitReport) -> String {
    let mut s = String::from("quantity,value\n");
    let _ = writeln!(s, "model,{}", report.model_label);
    for (k, v) in [
        ("power_scale", report.power_scale),
        ("power_scale_sigma", report.power_scale_sigma),
        ("peak_rate_t1", report.peak_rate_t1),
        ("alpha_max_per_m", report.alpha_max),
        ("residual_norm", report.residual_norm),
        ("residual_rms", report.residual_rms),
        ("points_used", report.points_used as f64),
    ] {
        let _ = writeln!(s, "{k},{}", num(v));
    }
    if let Some(sig) = report.alpha_max_sigma {
        let _ = writeln!(s, "alpha_max_sigma,{}", num(sig));
    }
    s
}
