//! Synthetic two-detector click streams from a three-level emitter.
//!
//! The emitter cycles ground -> excited -> (ground with a photon | metastable
//! -> ground). Every emission returns the emitter to the ground state, so
//! emission times form a renewal process and each detected photon can be
//! drawn directly: the number of emissions until one is detected is
//! geometric, the number of shelving excursions among them is negative
//! binomial, and the time spent in each state is a gamma-distributed sum of
//! exponential holding times. This is exact and costs O(1) per detected
//! photon however small the collection efficiency. A direct competing-clock
//! stepper ([`Sampler::Direct`]) is kept for cross-checking.
//!
//! Background and dark clicks are independent Poisson processes per channel.
//! Clicks are then blurred by Gaussian jitter, re-sorted, passed through a
//! non-paralyzable dead time and quantized to ticks.

pub mod analytic;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Geometric, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetag::{TimeTagError, TimeTagStream};

pub use analytic::{
    analytic_g2_from_rates, saturation_curve, saturation_law, steady_state, AnalyticG2,
    SaturationLaw,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("the emitter has no steady-state emission (zero pump or permanent shelving)")]
    NoEmission,
    #[error(transparent)]
    Stream(#[from] TimeTagError),
}

/// Transition rates in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreeLevelParams {
    /// ground -> excited, proportional to pump power
    pub k_pump: f64,
    /// excited -> ground, radiative
    pub k_rad: f64,
    /// excited -> metastable
    pub k_isc: f64,
    /// metastable -> ground
    pub k_meta: f64,
}

impl ThreeLevelParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = [self.k_pump, self.k_rad, self.k_isc, self.k_meta];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(SimError::InvalidConfig(format!(
                "rates must be finite and non-negative: {self:?}"
            )));
        }
        if self.k_rad <= 0.0 {
            return Err(SimError::InvalidConfig("k_rad must be positive".into()));
        }
        Ok(())
    }

    /// Photons emitted per second in steady state.
    pub fn emission_rate(&self) -> f64 {
        self.k_rad * steady_state(self)[1]
    }
}

/// Single-photon detector with Gaussian timing jitter and a
/// non-paralyzable dead time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// dark counts per second
    pub dark_rate: f64,
    pub jitter_sigma_ps: f64,
    pub dead_time_ps: f64,
}

impl Default for DetectorModel {
    /// SNSPD-class defaults: 90 % efficiency, 70 Hz dark rate, 15 ps jitter,
    /// 20 ns dead time.
    fn default() -> Self {
        Self {
            efficiency: 0.9,
            dark_rate: 70.0,
            jitter_sigma_ps: 15.0,
            dead_time_ps: 20_000.0,
        }
    }
}

impl DetectorModel {
    /// Ideal detector: no dark counts, jitter or dead time.
    pub fn ideal(efficiency: f64) -> Self {
        Self {
            efficiency,
            dark_rate: 0.0,
            jitter_sigma_ps: 0.0,
            dead_time_ps: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(SimError::InvalidConfig(format!(
                "detector efficiency {} outside [0, 1]",
                self.efficiency
            )));
        }
        for (name, v) in [
            ("dark_rate", self.dark_rate),
            ("jitter_sigma_ps", self.jitter_sigma_ps),
            ("dead_time_ps", self.dead_time_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Exact aggregated draw from one detected photon to the next.
    #[default]
    Aggregated,
    /// Step every state transition with competing exponential clocks.
    Direct,
}

fn default_splitter() -> f64 {
    0.5
}

fn default_resolution() -> u64 {
    1
}

/// Everything needed to generate one HBT acquisition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub emitter: ThreeLevelParams,
    /// Uncorrelated background photons per second reaching the beam
    /// splitter (GaN fluorescence after filtering).
    pub background_rate: f64,
    /// Fraction of emitted photons reaching the beam splitter.
    pub collection_efficiency: f64,
    pub duration_s: f64,
    /// Fraction routed to detector A.
    #[serde(default = "default_splitter")]
    pub splitter_ratio: f64,
    #[serde(default)]
    pub rng_seed: u64,
    /// Tick length of the output stream.
    #[serde(default = "default_resolution")]
    pub resolution_ps: u64,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub detector_a: DetectorModel,
    #[serde(default)]
    pub detector_b: DetectorModel,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.emitter.validate()?;
        self.detector_a.validate()?;
        self.detector_b.validate()?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(SimError::InvalidConfig("duration_s must be positive".into()));
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(SimError::InvalidConfig("splitter_ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.collection_efficiency) {
            return Err(SimError::InvalidConfig(
                "collection_efficiency must lie in [0, 1]".into(),
            ));
        }
        if !(self.background_rate.is_finite() && self.background_rate >= 0.0) {
            return Err(SimError::InvalidConfig("background_rate must be >= 0".into()));
        }
        if self.resolution_ps == 0 {
            return Err(SimError::InvalidConfig("resolution_ps must be >= 1".into()));
        }
        Ok(())
    }

    /// Expected click rates before dead-time losses.
    pub fn predicted_rates(&self) -> PredictedRates {
        let emission = if self.emitter.k_pump > 0.0 {
            self.emitter.emission_rate()
        } else {
            0.0
        };
        let at_splitter = emission * self.collection_efficiency;
        let split = [self.splitter_ratio, 1.0 - self.splitter_ratio];
        let dets = [&self.detector_a, &self.detector_b];
        let mut signal = [0.0; 2];
        let mut noise = [0.0; 2];
        for c in 0..2 {
            signal[c] = at_splitter * split[c] * dets[c].efficiency;
            noise[c] = self.background_rate * split[c] * dets[c].efficiency + dets[c].dark_rate;
        }
        PredictedRates { signal, noise }
    }
}

/// Per-channel expected signal and noise click rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedRates {
    pub signal: [f64; 2],
    pub noise: [f64; 2],
}

impl PredictedRates {
    pub fn signal_total(&self) -> f64 {
        self.signal[0] + self.signal[1]
    }

    pub fn noise_total(&self) -> f64 {
        self.noise[0] + self.noise[1]
    }

    /// Signal fraction `S / (S + B)` of one channel.
    pub fn signal_fraction(&self, channel: usize) -> f64 {
        let total = self.signal[channel] + self.noise[channel];
        if total > 0.0 {
            self.signal[channel] / total
        } else {
            0.0
        }
    }

    /// Factor by which uncorrelated clicks scale `g2 - 1` in the
    /// cross-correlation: `rho_a * rho_b`.
    pub fn contrast(&self) -> f64 {
        self.signal_fraction(0) * self.signal_fraction(1)
    }

    /// Measured `g2(tau)` for a source curve `g2_src`, given the background.
    pub fn degrade(&self, g2_src: f64) -> f64 {
        1.0 + self.contrast() * (g2_src - 1.0)
    }
}

/// Simulates a two-channel HBT acquisition. Channel 0 is detector A.
pub fn simulate_stream(
    cfg: &SceneConfig,
    det_a: &DetectorModel,
    det_b: &DetectorModel,
) -> Result<TimeTagStream, SimError> {
    let cfg = SceneConfig {
        detector_a: *det_a,
        detector_b: *det_b,
        ..cfg.clone()
    };
    simulate_scene(&cfg)
}

/// Simulates a scene with the detectors stored in its config.
pub fn simulate_scene(cfg: &SceneConfig) -> Result<TimeTagStream, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let dets = [cfg.detector_a, cfg.detector_b];

    let mut clicks = emitter_clicks(cfg, &mut rng)?;
    for (c, det) in dets.iter().enumerate() {
        let split = if c == 0 {
            cfg.splitter_ratio
        } else {
            1.0 - cfg.splitter_ratio
        };
        let rate = cfg.background_rate * split * det.efficiency + det.dark_rate;
        let noise = poisson_process(rate, cfg.duration_s, &mut rng);
        clicks[c] = merge_sorted(&clicks[c], &noise);
    }

    let mut ticks: [Vec<u64>; 2] = [Vec::new(), Vec::new()];
    for (c, det) in dets.iter().enumerate() {
        let times = &mut clicks[c];
        if det.jitter_sigma_ps > 0.0 {
            let normal = Normal::new(0.0, det.jitter_sigma_ps * 1e-12)
                .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
            for t in times.iter_mut() {
                *t += normal.sample(&mut rng);
            }
            times.sort_unstable_by(f64::total_cmp);
        }
        let dead = det.dead_time_ps * 1e-12;
        let scale = 1e12 / cfg.resolution_ps as f64;
        let mut out = Vec::with_capacity(times.len());
        let mut last_kept = f64::NEG_INFINITY;
        for &t in times.iter() {
            if t < 0.0 || t >= cfg.duration_s {
                continue;
            }
            if t - last_kept < dead {
                continue;
            }
            last_kept = t;
            out.push((t * scale).floor() as u64);
        }
        ticks[c] = out;
        times.clear();
        times.shrink_to_fit();
    }

    let [a, b] = ticks;
    let mut timestamps = Vec::with_capacity(a.len() + b.len());
    let mut channels = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            timestamps.push(a[i]);
            channels.push(0);
            i += 1;
        } else {
            timestamps.push(b[j]);
            channels.push(1);
            j += 1;
        }
    }
    Ok(TimeTagStream::new(cfg.resolution_ps, 2, timestamps, channels)?)
}

/// Detected emitter photons per channel, in seconds, before jitter.
fn emitter_clicks(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<[Vec<f64>; 2], SimError> {
    let p = cfg.emitter;
    let p_a = cfg.collection_efficiency * cfg.splitter_ratio * cfg.detector_a.efficiency;
    let p_b = cfg.collection_efficiency * (1.0 - cfg.splitter_ratio) * cfg.detector_b.efficiency;
    let p_det = p_a + p_b;
    let mut out = [Vec::new(), Vec::new()];
    if p.k_pump == 0.0 || p_det == 0.0 {
        return Ok(out);
    }
    let expected = p.emission_rate() * p_det * cfg.duration_s;
    if expected.is_finite() {
        let cap = (expected * 0.55 + 64.0).min(1e9) as usize;
        out[0].reserve(cap);
        out[1].reserve(cap);
    }
    let warmup = warmup_time(&p);
    let share_a = p_a / p_det;
    match cfg.sampler {
        Sampler::Aggregated => aggregated(&p, p_det, share_a, warmup, cfg.duration_s, rng, &mut out)?,
        Sampler::Direct => direct(&p, p_det, share_a, warmup, cfg.duration_s, rng, &mut out)?,
    }
    Ok(out)
}

/// Burn-in so that the emitter starts in its stationary state.
fn warmup_time(p: &ThreeLevelParams) -> f64 {
    let slowest = match analytic_g2_from_rates(p) {
        Ok(a) if a.tau2_s.is_finite() => a.tau1_s.max(a.tau2_s),
        Ok(a) => a.tau1_s,
        Err(_) => 0.0,
    };
    (50.0 * slowest).min(1.0)
}

fn aggregated(
    p: &ThreeLevelParams,
    p_det: f64,
    share_a: f64,
    warmup: f64,
    duration: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [Vec<f64>; 2],
) -> Result<(), SimError> {
    let bad = |e: String| SimError::InvalidConfig(e);
    let emissions = Geometric::new(p_det).map_err(|e| bad(e.to_string()))?;
    let leave_excited = p.k_rad + p.k_isc;
    let emit_prob = p.k_rad / leave_excited;
    let shelving_odds = (1.0 - emit_prob) / emit_prob;
    let mut t = -warmup;
    loop {
        let k = 1 + emissions.sample(rng);
        let shelvings = if p.k_isc > 0.0 {
            // negative binomial as a gamma-Poisson mixture
            let lambda = Gamma::new(k as f64, shelving_odds)
                .map_err(|e| bad(e.to_string()))?
                .sample(rng);
            if lambda > 0.0 {
                Poisson::new(lambda).map_err(|e| bad(e.to_string()))?.sample(rng) as u64
            } else {
                0
            }
        } else {
            0
        };
        let visits = (k + shelvings) as f64;
        let mut dt = gamma_sum(visits, p.k_pump, rng)? + gamma_sum(visits, leave_excited, rng)?;
        if shelvings > 0 {
            if p.k_meta == 0.0 {
                return Ok(());
            }
            dt += gamma_sum(shelvings as f64, p.k_meta, rng)?;
        }
        t += dt;
        if t >= duration {
            return Ok(());
        }
        let channel = usize::from(rng.random::<f64>() >= share_a);
        if t >= 0.0 {
            out[channel].push(t);
        }
    }
}

/// Sum of `n` exponential holding times with the given rate.
fn gamma_sum(n: f64, rate: f64, rng: &mut ChaCha8Rng) -> Result<f64, SimError> {
    Gamma::new(n, 1.0 / rate)
        .map(|g| g.sample(rng))
        .map_err(|e| SimError::InvalidConfig(e.to_string()))
}

fn direct(
    p: &ThreeLevelParams,
    p_det: f64,
    share_a: f64,
    warmup: f64,
    duration: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [Vec<f64>; 2],
) -> Result<(), SimError> {
    let bad = |e: rand_distr::ExpError| SimError::InvalidConfig(e.to_string());
    let pump = Exp::new(p.k_pump).map_err(bad)?;
    let leave_excited = Exp::new(p.k_rad + p.k_isc).map_err(bad)?;
    let relax = if p.k_meta > 0.0 {
        Some(Exp::new(p.k_meta).map_err(bad)?)
    } else {
        None
    };
    let emit_prob = p.k_rad / (p.k_rad + p.k_isc);
    let mut t = -warmup;
    loop {
        t += pump.sample(rng) + leave_excited.sample(rng);
        if t >= duration {
            return Ok(());
        }
        if rng.random::<f64>() < emit_prob {
            let u = rng.random::<f64>();
            if u < p_det && t >= 0.0 {
                out[usize::from(u >= p_det * share_a)].push(t);
            }
        } else {
            match &relax {
                Some(r) => t += r.sample(rng),
                None => return Ok(()),
            }
        }
    }
}

fn poisson_process(rate: f64, duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if rate <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut out = Vec::with_capacity((rate * duration * 1.01 + 16.0).min(1e9) as usize);
    let mut t = gap.sample(rng);
    while t < duration {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emitter() -> ThreeLevelParams {
        ThreeLevelParams {
            k_pump: 5e8,
            k_rad: 2e9,
            k_isc: 1e8,
            k_meta: 2e7,
        }
    }

    fn scene(seed: u64) -> SceneConfig {
        SceneConfig {
            emitter: emitter(),
            background_rate: 0.0,
            collection_efficiency: 1e-3,
            duration_s: 2.0,
            splitter_ratio: 0.5,
            rng_seed: seed,
            resolution_ps: 1,
            sampler: Sampler::Aggregated,
            detector_a: DetectorModel::ideal(0.9),
            detector_b: DetectorModel::ideal(0.9),
        }
    }

    #[test]
    fn no_pump_no_noise_gives_empty_stream() {
        let mut cfg = scene(1);
        cfg.emitter.k_pump = 0.0;
        let s = simulate_scene(&cfg).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.channel_count(), 2);
    }

    #[test]
    fn same_seed_same_stream() {
        let mut cfg = scene(9);
        cfg.detector_a = DetectorModel::default();
        cfg.background_rate = 1e4;
        let a = simulate_scene(&cfg).unwrap();
        let b = simulate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.rng_seed = 10;
        assert_ne!(simulate_scene(&cfg).unwrap(), a);
    }

    #[test]
    fn detected_rate_matches_steady_state() {
        for sampler in [Sampler::Aggregated, Sampler::Direct] {
            let mut cfg = scene(3);
            cfg.sampler = sampler;
            let s = simulate_scene(&cfg).unwrap();
            let expected = cfg.predicted_rates().signal_total() * cfg.duration_s;
            let got = s.len() as f64;
            assert!(
                (got - expected).abs() < 5.0 * expected.sqrt(),
                "{sampler:?}: {got} vs {expected}"
            );
        }
    }

    #[test]
    fn dead_time_only_removes_clicks() {
        let mut cfg = scene(4);
        cfg.background_rate = 2e5;
        let free = simulate_scene(&cfg).unwrap();
        cfg.detector_a.dead_time_ps = 50_000.0;
        cfg.detector_b.dead_time_ps = 50_000.0;
        let dead = simulate_scene(&cfg).unwrap();
        assert!(dead.len() < free.len());
        // every surviving click exists in the dead-time-free stream
        let all: std::collections::HashSet<(u64, u16)> =
            free.records().map(|r| (r.timestamp, r.channel)).collect();
        assert!(dead.records().all(|r| all.contains(&(r.timestamp, r.channel))));
        for ch in 0..2u16 {
            let ts = dead.channel_timestamps(ch);
            assert!(ts.windows(2).all(|w| w[1] - w[0] >= 50_000));
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = scene(1);
        cfg.splitter_ratio = 1.0;
        assert!(simulate_scene(&cfg).is_err());
        let mut cfg = scene(1);
        cfg.duration_s = 0.0;
        assert!(simulate_scene(&cfg).is_err());
        let mut cfg = scene(1);
        cfg.detector_b.efficiency = 1.2;
        assert!(simulate_scene(&cfg).is_err());
        let mut cfg = scene(1);
        cfg.emitter.k_rad = 0.0;
        assert!(simulate_scene(&cfg).is_err());
    }

    #[test]
    fn scene_json_defaults() {
        let json = r#"{
            "emitter": {"k_pump": 1e9, "k_rad": 3e9, "k_isc": 1e8, "k_meta": 1e7},
            "background_rate": 500.0,
            "collection_efficiency": 1e-5,
            "duration_s": 1.0
        }"#;
        let cfg: SceneConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.splitter_ratio, 0.5);
        assert_eq!(cfg.detector_a, DetectorModel::default());
        assert_eq!(cfg.sampler, Sampler::Aggregated);
        cfg.validate().unwrap();
    }
}
