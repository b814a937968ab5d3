//! Scenario runners: simulate, analyse and compare against targets.
//!
//! A scenario is a JSON file naming one of five workflows plus a list of
//! targets. Runners return the achieved quantities; [`compare`] turns them
//! into the target vs achieved table printed by `reproduce`.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlator::{self, CorrelationConfig, CorrelationError, CorrelationHistogram};
use crate::emitsim::{
    analytic_g2_from_rates, saturation_curve, saturation_law, simulate_scene, DetectorModel,
    SceneConfig, SimError, ThreeLevelParams,
};
use crate::fitting::{
    fit_g2_with, fit_saturation, FitError, G2Fit, G2FitOptions, PowerPoint, PowerSweep,
    SaturationPoint,
};
use crate::scanstab::{
    self, drift_retention_oracle, fit_axial, fit_spot, find_emitters, DriftSeries, GaussianSpot,
    ScanError, ScanMap,
};
use crate::spectra::{
    match_cwdm, snr_report, CwdmChannel, RateSource, SpectrumError, VoigtLine,
};
use crate::tomography::{
    fidelity, mle_reconstruct, polarization_report, synthesize_counts, DensityMatrix,
    TomographyError,
};

pub const SCENARIO_IDS: [&str; 5] = [
    "paper-fig4",
    "paper-fig5",
    "paper-fig2",
    "paper-fig6",
    "paper-fig3",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown scenario `{0}`; known: paper-fig4, paper-fig5, paper-fig2, paper-fig6, paper-fig3")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

/// Checked-in scenario file for `id`.
pub fn builtin_scenario(id: &str) -> Result<Scenario, PipelineError> {
    let text = match id {
        "paper-fig4" => include_str!("../scenarios/paper-fig4.json"),
        "paper-fig5" => include_str!("../scenarios/paper-fig5.json"),
        "paper-fig2" => include_str!("../scenarios/paper-fig2.json"),
        "paper-fig6" => include_str!("../scenarios/paper-fig6.json"),
        "paper-fig3" => include_str!("../scenarios/paper-fig3.json"),
        other => return Err(PipelineError::UnknownScenario(other.to_string())),
    };
    serde_json::from_str(text).map_err(|e| PipelineError::Invalid(format!("{id}: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub seed: u64,
    #[serde(flatten)]
    pub workflow: Workflow,
    pub targets: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "workflow", rename_all = "snake_case")]
pub enum Workflow {
    Purity(PuritySpec),
    Tradeoff(TradeoffSpec),
    Spectrum(SpectrumSpec),
    Tomography(TomographySpec),
    Stability(StabilitySpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `|achieved - target| <= tolerance`
    Within,
    AtLeast,
    AtMost,
    /// Shown for comparison, never graded.
    Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub quantity: String,
    /// Fixed target value. Without it the target is the model prediction
    /// the runner reports under the same name.
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub tolerance: f64,
    pub mode: TargetMode,
    #[serde(default)]
    pub note: Option<String>,
}

/// What a runner measured (`achieved`) and what the model predicts
/// (`model`), keyed by quantity name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub achieved: BTreeMap<String, f64>,
    pub model: BTreeMap<String, f64>,
    pub details: serde_json::Value,
    /// Named CSV tables for `--emit-plot-data`.
    #[serde(skip)]
    pub plot_data: Vec<(String, String)>,
}

impl Outcome {
    fn set(&mut self, key: &str, v: f64) {
        self.achieved.insert(key.to_string(), v);
    }

    fn model(&mut self, key: &str, v: f64) {
        self.model.insert(key.to_string(), v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub quantity: String,
    pub target: Option<f64>,
    pub achieved: Option<f64>,
    pub tolerance: f64,
    pub mode: TargetMode,
    /// `None` for report-only rows.
    pub pass: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} (seed {})", self.scenario, self.seed)?;
        writeln!(
            f,
            "{:<28} {:>14} {:>14} {:>12} {:>9}  status",
            "quantity", "target", "achieved", "tolerance", "mode"
        )?;
        let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
        for r in &self.rows {
            let status = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "INFO",
            };
            let mode = match r.mode {
                TargetMode::Within => "within",
                TargetMode::AtLeast => ">=",
                TargetMode::AtMost => "<=",
                TargetMode::Report => "report",
            };
            write!(
                f,
                "{:<28} {:>14} {:>14} {:>12} {:>9}  {}",
                r.quantity,
                num(r.target),
                num(r.achieved),
                format!("{:.4}", r.tolerance),
                mode,
                status
            )?;
            if let Some(n) = &r.note {
                write!(f, "  ({n})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Grades every target. A missing achieved value fails a graded row.
pub fn compare(s: &Scenario, seed: u64, out: &Outcome) -> Comparison {
    let rows = s
        .targets
        .iter()
        .map(|t| {
            let target = t.value.or_else(|| out.model.get(&t.quantity).copied());
            let achieved = out.achieved.get(&t.quantity).copied().filter(|v| !v.is_nan());
            let pass = match (t.mode, target, achieved) {
                (TargetMode::Report, ..) => None,
                (_, Some(tv), Some(a)) => Some(match t.mode {
                    TargetMode::Within => (a - tv).abs() <= t.tolerance,
                    TargetMode::AtLeast => a >= tv - t.tolerance,
                    TargetMode::AtMost => a <= tv + t.tolerance,
                    TargetMode::Report => unreachable!(),
                }),
                _ => Some(false),
            };
            ComparisonRow {
                quantity: t.quantity.clone(),
                target,
                achieved,
                tolerance: t.tolerance,
                mode: t.mode,
                pass,
                note: t.note.clone(),
            }
        })
        .collect();
    Comparison {
        scenario: s.id.clone(),
        seed,
        rows,
    }
}

/// Runs a scenario with its own seed, or `seed` when given.
pub fn run_scenario(s: &Scenario, seed: Option<u64>) -> Result<(Outcome, Comparison), PipelineError> {
    let seed = seed.unwrap_or(s.seed);
    let out = match &s.workflow {
        Workflow::Purity(p) => run_purity(p, seed)?,
        Workflow::Tradeoff(p) => run_tradeoff(p, seed)?,
        Workflow::Spectrum(p) => run_spectrum(p, seed)?,
        Workflow::Tomography(p) => run_tomography(p, seed)?,
        Workflow::Stability(p) => run_stability(p, seed)?,
    };
    let cmp = compare(s, seed, &out);
    Ok((out, cmp))
}

/// SplitMix64 step: decorrelated child seeds from one scenario seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------- acquisition

/// Histogram of one scene, simulated in chunks that keep memory bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub histogram: CorrelationHistogram,
    pub tags: u64,
    pub chunks: usize,
    /// Measured click rate per channel, dead-time losses included.
    pub singles_hz: [f64; 2],
}

/// Simulates `scene` and correlates channel 0 with channel 1. Scenes whose
/// expected tag count exceeds `max_chunk_tags` are split into equal-length
/// chunks; chunk 0 keeps the scene seed, the others use derived seeds.
pub fn acquire(
    scene: &SceneConfig,
    bin_ps: u64,
    window_ns: f64,
    max_chunk_tags: u64,
) -> Result<Acquisition, PipelineError> {
    scene.validate()?;
    let rates = scene.predicted_rates();
    let expected = (rates.signal_total() + rates.noise_total()) * scene.duration_s;
    let chunks = ((expected / max_chunk_tags.max(1) as f64).ceil() as usize).max(1);
    let cfg = CorrelationConfig::from_physical(scene.resolution_ps, bin_ps, window_ns, 0, 1)?;
    let mut parts = Vec::with_capacity(chunks);
    let mut tags = 0u64;
    let mut counts = [0u64; 2];
    let mut duration = 0.0;
    for i in 0..chunks {
        let chunk = SceneConfig {
            duration_s: scene.duration_s / chunks as f64,
            rng_seed: if i == 0 {
                scene.rng_seed
            } else {
                derive_seed(scene.rng_seed, i as u64)
            },
            ..scene.clone()
        };
        let stream = simulate_scene(&chunk)?;
        tags += stream.len() as u64;
        let c = stream.channel_counts();
        for (total, n) in counts.iter_mut().zip(&c) {
            *total += n;
        }
        duration += chunk.duration_s;
        parts.push(correlator::correlate(&stream, &cfg)?);
    }
    let histogram = if parts.len() == 1 {
        parts.pop().unwrap()
    } else {
        correlator::merge_histograms(&parts)?
    };
    Ok(Acquisition {
        histogram,
        tags,
        chunks,
        singles_hz: [counts[0] as f64 / duration, counts[1] as f64 / duration],
    })
}

fn default_max_chunk() -> u64 {
    20_000_000
}

fn default_bin() -> u64 {
    correlator::DEFAULT_BIN_PS
}

fn default_window() -> f64 {
    correlator::DEFAULT_WINDOW_NS
}

fn irf_of(a: &DetectorModel, b: &DetectorModel) -> f64 {
    a.jitter_sigma_ps.hypot(b.jitter_sigma_ps)
}

fn g2_options(scene_a: &DetectorModel, scene_b: &DetectorModel, irf: bool) -> G2FitOptions {
    G2FitOptions {
        irf_sigma_ps: irf.then(|| irf_of(scene_a, scene_b)).filter(|s| *s > 0.0),
        ..Default::default()
    }
}

/// Mean of a histogram's g2 for `|tau| > min_abs_tau_ps`, or NaN.
fn plateau_mean(h: &CorrelationHistogram, min_abs_tau_ps: f64) -> f64 {
    correlator::plateau(h, min_abs_tau_ps).map_or(f64::NAN, |p| p.0)
}

// --------------------------------------------------------------------- purity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuritySpec {
    pub scene: SceneConfig,
    /// Simulate until about this many tags; overrides `scene.duration_s`.
    #[serde(default)]
    pub tags: Option<u64>,
    #[serde(default = "default_bin")]
    pub bin_ps: u64,
    #[serde(default = "default_window")]
    pub window_ns: f64,
    /// Fit with the detectors' jitter as a known IRF.
    #[serde(default = "yes")]
    pub irf_from_detectors: bool,
    #[serde(default = "default_max_chunk")]
    pub max_chunk_tags: u64,
}

fn yes() -> bool {
    true
}

impl PuritySpec {
    /// The scene with seed and tag-count duration applied.
    pub fn resolved_scene(&self, seed: u64) -> SceneConfig {
        let mut scene = self.scene.clone();
        scene.rng_seed = seed;
        if let Some(n) = self.tags {
            let r = scene.predicted_rates();
            scene.duration_s = n as f64 / (r.signal_total() + r.noise_total());
        }
        scene
    }
}

/// Fit of one simulated HBT run together with the analytic expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityRun {
    pub tags: u64,
    pub chunks: usize,
    pub singles_hz: [f64; 2],
    pub fit: G2Fit,
    pub predicted_g2_zero: f64,
    pub predicted_tau1_ps: f64,
    pub predicted_tau2_ps: f64,
    pub plateau: f64,
}

pub fn purity_run(
    scene: &SceneConfig,
    bin_ps: u64,
    window_ns: f64,
    irf: bool,
    max_chunk_tags: u64,
) -> Result<(PurityRun, CorrelationHistogram), PipelineError> {
    let acq = acquire(scene, bin_ps, window_ns, max_chunk_tags)?;
    let fit = fit_g2_with(
        &acq.histogram,
        &g2_options(&scene.detector_a, &scene.detector_b, irf),
    )?;
    let analytic = analytic_g2_from_rates(&scene.emitter)?;
    let rates = scene.predicted_rates();
    let tau2_ps = analytic.tau2_s * 1e12;
    let run = PurityRun {
        tags: acq.tags,
        chunks: acq.chunks,
        singles_hz: acq.singles_hz,
        predicted_g2_zero: rates.degrade(analytic.g2_zero()),
        predicted_tau1_ps: analytic.tau1_s * 1e12,
        predicted_tau2_ps: tau2_ps,
        plateau: plateau_mean(&acq.histogram, 10.0 * tau2_ps),
        fit,
    };
    Ok((run, acq.histogram))
}

fn run_purity(p: &PuritySpec, seed: u64) -> Result<Outcome, PipelineError> {
    let scene = p.resolved_scene(seed);
    let (run, h) = purity_run(&scene, p.bin_ps, p.window_ns, p.irf_from_detectors, p.max_chunk_tags)?;
    let mut out = Outcome::default();
    out.set("g2_zero", run.fit.g2_zero);
    out.set("g2_zero_err", run.fit.g2_zero_err);
    out.set("tau1_ps", run.fit.tau1_ps());
    out.set("tau2_ps", run.fit.tau2_ps());
    out.set("beta2", run.fit.beta2());
    out.set("plateau", run.plateau);
    out.set("tags", run.tags as f64);
    out.set("signal_kcps", scene.predicted_rates().signal_total() / 1e3);
    out.model("g2_zero", run.predicted_g2_zero);
    out.model("tau1_ps", run.predicted_tau1_ps);
    out.model("tau2_ps", run.predicted_tau2_ps);
    out.model("plateau", 1.0);
    let mut csv = String::from("tau_ps,g2,g2_err,fit\n");
    let model = crate::fitting::G2Model::binned(h.bin_width_ps())
        .with_irf(g2_options(&scene.detector_a, &scene.detector_b, p.irf_from_detectors)
            .irf_sigma_ps
            .unwrap_or(0.0));
    let rho2 = h.signal_fraction.map_or(1.0, |r| r * r);
    for (k, t) in h.tau_ps().iter().enumerate() {
        let m = 1.0 + rho2 * (model.value(*t, &run.fit.fit.values) - 1.0);
        csv.push_str(&format!("{t},{},{},{m}\n", h.g2[k], h.g2_err[k]));
    }
    out.plot_data.push(("g2".into(), csv));
    out.details = serde_json::to_value(&run).unwrap_or_default();
    Ok(out)
}

// ------------------------------------------------------------------- tradeoff

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffSpec {
    /// Rates at zero pump; `k_pump` is replaced by `pump_coefficient * P`.
    pub emitter: ThreeLevelParams,
    /// `k_pump` per mW.
    pub pump_coefficient: f64,
    pub collection_efficiency: f64,
    /// Background photons per second and mW at the beam splitter.
    pub background_per_mw: f64,
    #[serde(default)]
    pub detector: DetectorModel,
    /// Powers below saturation for the g2(0)(P) trend, with the tag budget
    /// of each.
    pub powers_mw: Vec<f64>,
    pub tags: Vec<u64>,
    /// Background-free control sweep.
    pub free_powers_mw: Vec<f64>,
    pub free_tags: u64,
    /// Noisy analytic saturation curve for the `I_sat`, `P_sat` check.
    pub synthetic_powers_mw: Vec<f64>,
    pub synthetic_rel_noise: f64,
    #[serde(default = "default_bin")]
    pub bin_ps: u64,
    #[serde(default = "default_window")]
    pub window_ns: f64,
    #[serde(default = "default_max_chunk")]
    pub max_chunk_tags: u64,
}

impl TradeoffSpec {
    pub fn scene(&self, power_mw: f64, background: bool, tags: u64, seed: u64) -> SceneConfig {
        let mut scene = SceneConfig {
            emitter: ThreeLevelParams {
                k_pump: self.pump_coefficient * power_mw,
                ..self.emitter
            },
            background_rate: if background {
                self.background_per_mw * power_mw
            } else {
                0.0
            },
            collection_efficiency: self.collection_efficiency,
            duration_s: 1.0,
            splitter_ratio: 0.5,
            rng_seed: seed,
            resolution_ps: 1,
            sampler: Default::default(),
            detector_a: self.detector,
            detector_b: self.detector,
        };
        let r = scene.predicted_rates();
        scene.duration_s = tags as f64 / (r.signal_total() + r.noise_total());
        scene
    }

    /// Ground-truth saturation law in detected counts per second.
    pub fn truth(&self) -> Result<crate::emitsim::SaturationLaw, PipelineError> {
        Ok(saturation_law(
            &self.emitter,
            self.pump_coefficient,
            self.collection_efficiency * self.detector.efficiency,
        )?)
    }

    /// Analytic saturation curve with relative Gaussian noise.
    pub fn synthetic_sweep(&self, seed: u64) -> Result<Vec<SaturationPoint>, PipelineError> {
        let curve = saturation_curve(
            &self.emitter,
            &self.synthetic_powers_mw,
            self.pump_coefficient,
            self.collection_efficiency * self.detector.efficiency,
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, self.synthetic_rel_noise)
            .map_err(|e| PipelineError::Invalid(e.to_string()))?;
        Ok(curve
            .into_iter()
            .map(|(p, r)| SaturationPoint {
                power_mw: p,
                rate: r * (1.0 + noise.sample(&mut rng)),
                sigma: Some(r * self.synthetic_rel_noise),
            })
            .collect())
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.powers_mw.len() != self.tags.len() {
            return Err(PipelineError::Invalid(format!(
                "{} powers but {} tag budgets",
                self.powers_mw.len(),
                self.tags.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepEntry {
    power_mw: f64,
    background: bool,
    tags: u64,
    g2_zero: f64,
    g2_zero_err: f64,
    predicted_g2_zero: f64,
    tau1_ps: f64,
    singles_hz: [f64; 2],
    plateau: f64,
}

fn run_tradeoff(p: &TradeoffSpec, seed: u64) -> Result<Outcome, PipelineError> {
    p.validate()?;
    let opts = g2_options(&p.detector, &p.detector, true);
    let mut out = Outcome::default();
    let mut entries = Vec::new();
    let mut index = 0u64;
    let mut run = |power: f64, bg: bool, tags: u64| -> Result<SweepEntry, PipelineError> {
        index += 1;
        let scene = p.scene(power, bg, tags, derive_seed(seed, index));
        let acq = acquire(&scene, p.bin_ps, p.window_ns, p.max_chunk_tags)?;
        let f = fit_g2_with(&acq.histogram, &opts)?;
        let analytic = analytic_g2_from_rates(&scene.emitter)?;
        Ok(SweepEntry {
            power_mw: power,
            background: bg,
            tags: acq.tags,
            g2_zero: f.g2_zero,
            g2_zero_err: f.g2_zero_err,
            predicted_g2_zero: scene.predicted_rates().degrade(analytic.g2_zero()),
            tau1_ps: f.tau1_ps(),
            singles_hz: acq.singles_hz,
            plateau: plateau_mean(&acq.histogram, 10.0 * analytic.tau2_s * 1e12),
        })
    };
    for (&power, &tags) in p.powers_mw.iter().zip(&p.tags) {
        entries.push(run(power, true, tags)?);
    }
    for &power in &p.free_powers_mw {
        entries.push(run(power, false, p.free_tags)?);
    }

    let points = |bg: bool| -> Vec<PowerPoint> {
        entries
            .iter()
            .filter(|e| e.background == bg)
            .map(|e| PowerPoint {
                power_mw: e.power_mw,
                g2_zero: e.g2_zero,
                g2_zero_err: e.g2_zero_err,
                tau1_ps: e.tau1_ps,
            })
            .collect()
    };
    let with_bg = PowerSweep::from_points(points(true))?;
    out.set("monotone_increasing", f64::from(u8::from(with_bg.monotone_increasing)));
    out.set("r_squared", with_bg.r_squared);
    out.set("slope_per_mw", with_bg.slope);
    let model_pts: Vec<PowerPoint> = entries
        .iter()
        .filter(|e| e.background)
        .map(|e| PowerPoint {
            power_mw: e.power_mw,
            g2_zero: e.predicted_g2_zero,
            g2_zero_err: e.g2_zero_err,
            tau1_ps: e.tau1_ps,
        })
        .collect();
    if let Ok(m) = PowerSweep::from_points(model_pts) {
        out.model("slope_per_mw", m.slope);
    }

    let free = PowerSweep::from_points(points(false))?;
    let z = if free.slope_err > 0.0 {
        free.slope.abs() / free.slope_err
    } else if free.slope == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    out.set("free_slope_per_mw", free.slope);
    out.set("free_slope_z", z);

    let truth = p.truth()?;
    out.model("i_sat", truth.i_sat);
    out.model("p_sat_mw", truth.p_sat);

    let synth = fit_saturation(&p.synthetic_sweep(derive_seed(seed, 1000))?, false)?;
    out.set("i_sat_rel_err", (synth.i_sat / truth.i_sat - 1.0).abs());
    out.set("p_sat_rel_err", (synth.p_sat_mw / truth.p_sat - 1.0).abs());

    // Saturation from the simulated background-free singles, corrected for
    // dead time and dark counts.
    let tau_d = p.detector.dead_time_ps * 1e-12;
    let sim_pts: Vec<SaturationPoint> = entries
        .iter()
        .filter(|e| !e.background)
        .map(|e| {
            let rate: f64 = e
                .singles_hz
                .iter()
                .map(|&r| r / (1.0 - r * tau_d) - p.detector.dark_rate)
                .sum();
            SaturationPoint {
                power_mw: e.power_mw,
                rate,
                sigma: None,
            }
        })
        .collect();
    if let Ok(f) = fit_saturation(&sim_pts, false) {
        out.set("sim_i_sat_rel_err", (f.i_sat / truth.i_sat - 1.0).abs());
        out.set("sim_p_sat_rel_err", (f.p_sat_mw / truth.p_sat - 1.0).abs());
    }

    let plateau_dev = entries
        .iter()
        .map(|e| (e.plateau - 1.0).abs())
        .fold(0.0, f64::max);
    out.set("max_plateau_deviation", plateau_dev);

    let mut csv = String::from("power_mw,background,tags,g2_zero,g2_zero_err,predicted_g2_zero,singles_a_hz,singles_b_hz\n");
    for e in &entries {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.power_mw,
            u8::from(e.background),
            e.tags,
            e.g2_zero,
            e.g2_zero_err,
            e.predicted_g2_zero,
            e.singles_hz[0],
            e.singles_hz[1]
        ));
    }
    out.plot_data.push(("g2_vs_power".into(), csv));
    out.details = serde_json::json!({
        "sweep": entries,
        "trend": with_bg,
        "background_free_trend": free,
        "truth": truth,
        "synthetic_fit": {"i_sat": synth.i_sat, "p_sat_mw": synth.p_sat_mw},
    });
    Ok(out)
}

// ------------------------------------------------------------------- spectrum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub center_nm: f64,
    pub gaussian_fwhm_nm: f64,
    pub voigt_fwhm_nm: f64,
    /// Peak counts above the baseline per grid point.
    pub amplitude: f64,
    pub baseline: f64,
    pub grid_start_nm: f64,
    pub grid_stop_nm: f64,
    pub step_nm: f64,
    pub integration_s: f64,
    pub runs: usize,
    pub center_tolerance_nm: f64,
    pub fwhm_tolerance_nm: f64,
    /// Rates for the filter SNR comparison, in counts per second.
    pub signal_full_hz: f64,
    pub signal_in_band_hz: f64,
    pub background_full_hz: f64,
    pub background_in_band_hz: f64,
}

impl SpectrumSpec {
    pub fn line(&self) -> Result<VoigtLine, PipelineError> {
        VoigtLine::from_widths(
            self.center_nm,
            self.gaussian_fwhm_nm,
            self.voigt_fwhm_nm,
            self.amplitude,
            self.baseline,
        )
        .ok_or_else(|| {
            PipelineError::Invalid(format!(
                "Gaussian width {} exceeds total width {}",
                self.gaussian_fwhm_nm, self.voigt_fwhm_nm
            ))
        })
    }

    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.grid_stop_nm - self.grid_start_nm) / self.step_nm).round() as usize + 1;
        (0..n).map(|i| self.grid_start_nm + i as f64 * self.step_nm).collect()
    }
}

fn run_spectrum(p: &SpectrumSpec, seed: u64) -> Result<Outcome, PipelineError> {
    if p.runs == 0 {
        return Err(PipelineError::Invalid("runs must be >= 1".into()));
    }
    let line = p.line()?;
    let grid = p.grid();
    let mut centers = Vec::with_capacity(p.runs);
    let mut widths = Vec::with_capacity(p.runs);
    let mut good = 0usize;
    let mut first = None;
    for i in 0..p.runs {
        let s = line.synthesize(&grid, p.integration_s, Some(derive_seed(seed, i as u64)));
        let f = crate::spectra::fit_voigt(&s);
        if let Ok(f) = &f {
            centers.push(f.center_nm);
            widths.push(f.voigt_fwhm_nm);
            if (f.center_nm - p.center_nm).abs() <= p.center_tolerance_nm
                && (f.voigt_fwhm_nm - p.voigt_fwhm_nm).abs() <= p.fwhm_tolerance_nm
            {
                good += 1;
            }
        }
        if i == 0 {
            first = Some((s, f?));
        }
    }
    let (spectrum, fit) = first.expect("runs >= 1");
    let sel = match_cwdm(&fit);
    let mut out = Outcome::default();
    out.set("center_nm", fit.center_nm);
    out.set("fwhm_nm", fit.voigt_fwhm_nm);
    out.set("fwhm_err_nm", fit.voigt_fwhm_err_nm);
    out.set("median_center_nm", median(&mut centers));
    out.set("median_fwhm_nm", median(&mut widths));
    out.set("recovery_fraction", good as f64 / p.runs as f64);
    out.set("cwdm_channel_nm", sel.channel.center_nm);
    out.set("cwdm_pass", f64::from(u8::from(sel.pass)));
    out.set("in_band_fraction", sel.in_band_fraction);
    out.model("center_nm", p.center_nm);
    out.model("fwhm_nm", p.voigt_fwhm_nm);

    let filter = CwdmChannel::new(sel.channel.center_nm);
    let snr = snr_report(
        &RateSource::Rate {
            full_hz: p.signal_full_hz,
            in_band_hz: Some(p.signal_in_band_hz),
        },
        &RateSource::Rate {
            full_hz: p.background_full_hz,
            in_band_hz: Some(p.background_in_band_hz),
        },
        filter,
    );
    out.set("snr_full", snr.snr_full.value());
    if let Some(v) = snr.snr_in_band {
        out.set("snr_in_band", v.value());
    }
    if let Some(v) = snr.signal_reduction {
        out.set("signal_reduction", v);
    }
    if let Some(v) = snr.background_reduction {
        out.set("background_reduction", v);
    }

    let mut csv = String::from("wavelength_nm,counts,fit\n");
    let fitted = fit.line();
    for (l, c) in spectrum.wavelength_nm.iter().zip(&spectrum.counts) {
        csv.push_str(&format!("{l},{c},{}\n", fitted.eval(*l)));
    }
    out.plot_data.push(("spectrum".into(), csv));
    out.details = serde_json::json!({"fit": fit, "cwdm": sel, "snr": snr});
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ----------------------------------------------------------------- tomography

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographySpec {
    /// Larger eigenvalue of the true state; the smaller is `1 - lambda_plus`.
    pub lambda_plus: f64,
    /// Direction of the polarized part on the Poincare sphere.
    pub direction: [f64; 3],
    pub events: f64,
    #[serde(default = "one")]
    pub seconds: f64,
}

fn one() -> f64 {
    1.0
}

impl TomographySpec {
    pub fn state(&self) -> Result<DensityMatrix, PipelineError> {
        let n = self.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0) || !(0.5..=1.0).contains(&self.lambda_plus) {
            return Err(PipelineError::Invalid(
                "need a nonzero direction and lambda_plus in [0.5, 1]".into(),
            ));
        }
        let r = 2.0 * self.lambda_plus - 1.0;
        Ok(DensityMatrix::from_stokes(self.direction.map(|x| r * x / n)))
    }
}

fn run_tomography(p: &TomographySpec, seed: u64) -> Result<Outcome, PipelineError> {
    let truth = p.state()?;
    let counts = synthesize_counts(&truth, p.events, p.seconds, Some(seed));
    let mle = mle_reconstruct(&counts)?;
    let rep = polarization_report(&mle.rho);
    let (lp, lm) = mle.rho.eigenvalues();
    let mut out = Outcome::default();
    out.set("fidelity", fidelity(&mle.rho, &truth));
    out.set("dop", rep.degree_of_polarization);
    out.set("lambda_plus", lp);
    out.set("lambda_minus", lm);
    out.set("physical", f64::from(u8::from(mle.rho.is_physical())));
    let (tp, tm) = truth.eigenvalues();
    out.model("dop", tp - tm);
    out.model("lambda_plus", tp);
    out.model("lambda_minus", tm);
    out.details = serde_json::json!({
        "counts": counts,
        "rho": mle.rho,
        "truth": truth,
        "report": rep,
        "iterations": mle.iterations,
    });
    Ok(out)
}

// ------------------------------------------------------------------ stability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySpec {
    pub spot_fwhm_um: f64,
    pub drift_um_per_h: f64,
    pub duration_s: f64,
    pub sample_s: f64,
    /// Peak counts per sample; the drift trace is noiseless when absent.
    #[serde(default)]
    pub peak_counts: Option<f64>,
    pub retention_fraction: f64,
    pub rayleigh_um: f64,
    /// Half-range and step of the exact axial profile.
    pub axial_half_range_um: f64,
    pub axial_step_um: f64,
    /// Emitters on a synthetic confocal map.
    pub scan_spots: Vec<[f64; 2]>,
    pub scan_pixels: usize,
    pub scan_step_um: f64,
    pub scan_amplitude: f64,
    pub scan_offset: f64,
    pub threshold_sigma: f64,
}

fn run_stability(p: &StabilitySpec, seed: u64) -> Result<Outcome, PipelineError> {
    let mut out = Outcome::default();
    let noise_seed = p.peak_counts.map(|_| derive_seed(seed, 1));
    let drift = DriftSeries::linear_drift(
        p.spot_fwhm_um,
        p.drift_um_per_h,
        p.duration_s,
        p.sample_s,
        p.peak_counts.unwrap_or(1.0),
        noise_seed,
    );
    let ret = scanstab::retention_time(&drift, p.retention_fraction)?;
    out.set("retention_min", ret.time_s.map_or(f64::NAN, |t| t / 60.0));
    out.model(
        "retention_min",
        drift_retention_oracle(p.spot_fwhm_um, p.drift_um_per_h, p.retention_fraction) / 60.0,
    );

    let n = (p.axial_half_range_um / p.axial_step_um).round() as i64;
    let profile: Vec<(f64, f64)> = (-n..=n)
        .map(|i| {
            let z = i as f64 * p.axial_step_um;
            (z, 1.0 / (1.0 + (z / p.rayleigh_um).powi(2)))
        })
        .collect();
    let ax = fit_axial(&profile)?;
    out.set("rayleigh_um", ax.rayleigh_um);
    out.set("fit_range_80_um", ax.fit_range_80_um);
    if let Some(r) = ax.retention_range_80_um {
        out.set("data_range_80_um", r);
    }
    out.model("rayleigh_um", p.rayleigh_um);
    out.model("fit_range_80_um", p.rayleigh_um);

    let spots: Vec<GaussianSpot> = p
        .scan_spots
        .iter()
        .map(|s| GaussianSpot::round(s[0], s[1], p.spot_fwhm_um, p.scan_amplitude))
        .collect();
    let map = ScanMap::synthetic(
        p.scan_pixels,
        p.scan_step_um,
        &spots,
        p.scan_offset,
        Some(derive_seed(seed, 2)),
    );
    let peaks = find_emitters(&map, p.threshold_sigma, None)?;
    out.set("emitters_found", peaks.candidates.len() as f64);
    out.model("emitters_found", spots.len() as f64);
    if let Some(c) = peaks.candidates.first() {
        let spot = fit_spot(&map, (c.x_um, c.y_um))?;
        out.set("spot_fwhm_um", spot.spot_size_um);
        out.model("spot_fwhm_um", p.spot_fwhm_um);
        out.details = serde_json::json!({"spot": spot, "peaks": peaks, "axial": ax, "retention": ret});
    }

    let mut csv = String::from("t_s,counts\n");
    for (t, c) in drift.time_s.iter().zip(&drift.intensity) {
        csv.push_str(&format!("{t},{c}\n"));
    }
    out.plot_data.push(("drift".into(), csv));
    let mut csv = String::from("z_um,counts\n");
    for (z, c) in &profile {
        csv.push_str(&format!("{z},{c}\n"));
    }
    out.plot_data.push(("axial".into(), csv));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_scenarios_parse() {
        for id in SCENARIO_IDS {
            let s = builtin_scenario(id).unwrap();
            assert_eq!(s.id, id);
            assert!(!s.targets.is_empty());
        }
        assert!(matches!(
            builtin_scenario("paper-fig9"),
            Err(PipelineError::UnknownScenario(_))
        ));
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        let mut d = s.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), s.len());
        assert_ne!(derive_seed(7, 1), derive_seed(8, 1));
    }

    #[test]
    fn compare_modes() {
        let s = Scenario {
            id: "t".into(),
            description: String::new(),
            seed: 0,
            workflow: Workflow::Tomography(TomographySpec {
                lambda_plus: 0.65,
                direction: [1.0, 0.0, 0.0],
                events: 1e3,
                seconds: 1.0,
            }),
            targets: vec![
                Target { quantity: "a".into(), value: Some(1.0), tolerance: 0.1, mode: TargetMode::Within, note: None },
                Target { quantity: "b".into(), value: None, tolerance: 0.0, mode: TargetMode::AtLeast, note: None },
                Target { quantity: "c".into(), value: Some(5.0), tolerance: 0.0, mode: TargetMode::Report, note: None },
                Target { quantity: "missing".into(), value: Some(0.0), tolerance: 1.0, mode: TargetMode::AtMost, note: None },
            ],
        };
        let mut out = Outcome::default();
        out.set("a", 1.05);
        out.set("b", 3.0);
        out.model("b", 2.0);
        out.set("c", 1.0);
        let c = compare(&s, 0, &out);
        let pass: Vec<_> = c.rows.iter().map(|r| r.pass).collect();
        assert_eq!(pass, vec![Some(true), Some(true), None, Some(false)]);
        assert!(!c.all_pass());
        assert!(c.to_string().contains("FAIL"));
    }

    #[test]
    fn chunked_acquisition_matches_rates() {
        let scene = SceneConfig {
            emitter: ThreeLevelParams { k_pump: 5e7, k_rad: 4e9, k_isc: 4e8, k_meta: 4e7 },
            background_rate: 1e4,
            collection_efficiency: 0.01,
            duration_s: 0.5,
            splitter_ratio: 0.5,
            rng_seed: 3,
            resolution_ps: 1,
            sampler: Default::default(),
            detector_a: DetectorModel::default(),
            detector_b: DetectorModel::default(),
        };
        let one = acquire(&scene, 40, 500.0, u64::MAX).unwrap();
        let many = acquire(&scene, 40, 500.0, one.tags / 4).unwrap();
        assert_eq!(one.chunks, 1);
        assert!(many.chunks >= 4);
        let pred = scene.predicted_rates();
        for ch in 0..2 {
            let expect = pred.signal[ch] + pred.noise[ch];
            for a in [&one, &many] {
                assert!((a.singles_hz[ch] / expect - 1.0).abs() < 0.05, "{:?}", a.singles_hz);
            }
        }
        assert!((many.tags as f64 / one.tags as f64 - 1.0).abs() < 0.02);
    }
}
