//! Photoluminescence spectra: Voigt line fits, CWDM channel matching and
//! signal-to-noise bookkeeping for emitter selection.

pub mod voigt;

use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{fit, Dataset, FitError, FitResult, Model};
use voigt::{gaussian_fwhm, lorentzian_fwhm, voigt_fwhm, voigt_fwhm_gradient, voigt_peak_normalized};

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("invalid spectrum: {0}")]
    Invalid(String),
    #[error("no emission peak stands out of the baseline")]
    NoPeak,
    #[error("Voigt fit diverged: {0}")]
    FitDiverged(String),
    #[error("spectrum CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumKind {
    Emitter,
    Background,
    InstrumentNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub wavelength_nm: Vec<f64>,
    pub counts: Vec<f64>,
    pub integration_time_s: f64,
    #[serde(default)]
    pub kind: Option<SpectrumKind>,
}

impl Spectrum {
    pub fn new(
        wavelength_nm: Vec<f64>,
        counts: Vec<f64>,
        integration_time_s: f64,
    ) -> Result<Self, SpectrumError> {
        if wavelength_nm.len() != counts.len() {
            return Err(SpectrumError::Invalid("wavelength and count lengths differ".into()));
        }
        if wavelength_nm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectrumError::Invalid("wavelengths must be strictly increasing".into()));
        }
        if counts.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SpectrumError::Invalid("counts must be finite and >= 0".into()));
        }
        if !(integration_time_s > 0.0 && integration_time_s.is_finite()) {
            return Err(SpectrumError::Invalid("integration time must be positive".into()));
        }
        Ok(Self {
            wavelength_nm,
            counts,
            integration_time_s,
            kind: None,
        })
    }

    pub fn with_kind(mut self, kind: SpectrumKind) -> Self {
        self.kind = Some(kind);
        self
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Total count rate, or the rate inside `[lo, hi]` nm.
    pub fn rate(&self, band: Option<(f64, f64)>) -> f64 {
        let total: f64 = self
            .wavelength_nm
            .iter()
            .zip(&self.counts)
            .filter(|(w, _)| band.is_none_or(|(lo, hi)| **w >= lo && **w <= hi))
            .map(|(_, c)| c)
            .sum();
        total / self.integration_time_s
    }

    /// Reads `wavelength_nm,counts` rows.
    pub fn read_csv<R: Read>(reader: R, integration_time_s: f64) -> Result<Self, SpectrumError> {
        let mut wl = Vec::new();
        let mut counts = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("wavelength")) {
                continue;
            }
            let err = |message: String| SpectrumError::Csv {
                line: i + 1,
                message,
            };
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(err("expected 2 columns".into()));
            };
            wl.push(a.parse::<f64>().map_err(|e| err(format!("wavelength_nm: {e}")))?);
            counts.push(b.parse::<f64>().map_err(|e| err(format!("counts: {e}")))?);
        }
        Self::new(wl, counts, integration_time_s)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "wavelength_nm,counts")?;
        for (l, c) in self.wavelength_nm.iter().zip(&self.counts) {
            writeln!(w, "{l},{c}")?;
        }
        w.flush()
    }
}

/// Line shape of one emitter: peak-normalized Voigt on a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoigtLine {
    pub center_nm: f64,
    pub sigma_nm: f64,
    pub gamma_nm: f64,
    /// Peak height above the baseline, in counts.
    pub amplitude: f64,
    pub baseline: f64,
    #[serde(default)]
    pub baseline_slope: f64,
}

impl VoigtLine {
    /// Line with the given Gaussian and total (Olivero–Longbothum) widths.
    pub fn from_widths(
        center_nm: f64,
        gaussian_fwhm_nm: f64,
        voigt_fwhm_nm: f64,
        amplitude: f64,
        baseline: f64,
    ) -> Option<Self> {
        let f_l = voigt::lorentzian_fwhm_for(voigt_fwhm_nm, gaussian_fwhm_nm)?;
        Some(Self {
            center_nm,
            sigma_nm: gaussian_fwhm_nm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt()),
            gamma_nm: 0.5 * f_l,
            amplitude,
            baseline,
            baseline_slope: 0.0,
        })
    }

    pub fn eval(&self, wavelength_nm: f64) -> f64 {
        let x = wavelength_nm - self.center_nm;
        self.baseline
            + self.baseline_slope * x
            + self.amplitude * voigt_peak_normalized(x, self.sigma_nm, self.gamma_nm)
    }

    pub fn voigt_fwhm(&self) -> f64 {
        voigt_fwhm(gaussian_fwhm(self.sigma_nm), lorentzian_fwhm(self.gamma_nm))
    }

    /// Expected counts on `grid`, optionally with Poisson noise from `seed`.
    pub fn synthesize(&self, grid: &[f64], integration_time_s: f64, seed: Option<u64>) -> Spectrum {
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let counts = grid
            .iter()
            .map(|&l| {
                let mu = self.eval(l).max(0.0);
                match rng.as_mut() {
                    Some(r) if mu > 0.0 => Poisson::new(mu).map_or(0.0, |p| p.sample(r)),
                    _ => mu,
                }
            })
            .collect();
        Spectrum {
            wavelength_nm: grid.to_vec(),
            counts,
            integration_time_s,
            kind: Some(SpectrumKind::Emitter),
        }
    }
}

/// Parameters `[center, sigma, gamma, amplitude, baseline(, slope)]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct VoigtModel {
    pub linear_baseline: bool,
}

impl Model for VoigtModel {
    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["center_nm", "sigma_nm", "gamma_nm", "amplitude", "baseline"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.linear_baseline {
            names.push("baseline_slope".into());
        }
        names
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        VoigtLine {
            center_nm: p[0],
            sigma_nm: p[1],
            gamma_nm: p[2],
            amplitude: p[3],
            baseline: p[4],
            baseline_slope: if self.linear_baseline { p[5] } else { 0.0 },
        }
        .eval(x)
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].max(0.0);
        p[2] = p[2].max(0.0);
        if p[1] == 0.0 && p[2] == 0.0 {
            p[1] = 1e-9;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VoigtFitOptions {
    pub linear_baseline: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoigtFitResult {
    pub center_nm: f64,
    pub center_err_nm: f64,
    pub gaussian_fwhm_nm: f64,
    pub lorentzian_fwhm_nm: f64,
    pub amplitude: f64,
    pub baseline: f64,
    pub baseline_slope: Option<f64>,
    pub voigt_fwhm_nm: f64,
    pub voigt_fwhm_err_nm: f64,
    pub fit: FitResult,
}

impl VoigtFitResult {
    pub fn line(&self) -> VoigtLine {
        VoigtLine {
            center_nm: self.center_nm,
            sigma_nm: self.fit.values[1],
            gamma_nm: self.fit.values[2],
            amplitude: self.amplitude,
            baseline: self.baseline,
            baseline_slope: self.baseline_slope.unwrap_or(0.0),
        }
    }
}

pub fn fit_voigt(s: &Spectrum) -> Result<VoigtFitResult, SpectrumError> {
    fit_voigt_with(s, &VoigtFitOptions::default())
}

/// Fits baseline plus a Voigt line, weighting points by `1/sqrt(max(counts, 1))`.
pub fn fit_voigt_with(s: &Spectrum, opts: &VoigtFitOptions) -> Result<VoigtFitResult, SpectrumError> {
    let n = s.len();
    if n < 10 {
        return Err(SpectrumError::Invalid(format!("{n} points are too few for a line fit")));
    }
    let init = initial_guess(s)?;
    let model = VoigtModel {
        linear_baseline: opts.linear_baseline,
    };
    let mut p0 = init.to_vec();
    if opts.linear_baseline {
        p0.push(0.0);
    }
    let data = Dataset::new(
        s.wavelength_nm.clone(),
        s.counts.clone(),
        s.counts.iter().map(|c| c.max(1.0).sqrt()).collect(),
    )
    .map_err(|e| SpectrumError::Invalid(e.to_string()))?;
    let r = fit(&model, &data, Some(&p0)).map_err(|e| match e {
        FitError::SingularCurvature => SpectrumError::FitDiverged("singular curvature".into()),
        e => SpectrumError::FitDiverged(e.to_string()),
    })?;
    let (lo, hi) = (s.wavelength_nm[0], s.wavelength_nm[n - 1]);
    let v = &r.values;
    if !r.converged || !(v[0] >= lo && v[0] <= hi) || !(v[3] > 0.0) || v.iter().any(|x| !x.is_finite()) {
        return Err(SpectrumError::FitDiverged(format!(
            "converged={} center={:.3} amplitude={:.3}",
            r.converged, v[0], v[3]
        )));
    }
    let f_g = gaussian_fwhm(v[1]);
    let f_l = lorentzian_fwhm(v[2]);
    let (dg, dl) = voigt_fwhm_gradient(f_g, f_l);
    let k_g = gaussian_fwhm(1.0);
    let mut grad = vec![0.0; v.len()];
    grad[1] = dg * k_g;
    grad[2] = dl * 2.0;
    Ok(VoigtFitResult {
        center_nm: v[0],
        center_err_nm: r.standard_errors[0],
        gaussian_fwhm_nm: f_g,
        lorentzian_fwhm_nm: f_l,
        amplitude: v[3],
        baseline: v[4],
        baseline_slope: opts.linear_baseline.then(|| v[5]),
        voigt_fwhm_nm: voigt_fwhm(f_g, f_l),
        voigt_fwhm_err_nm: r.propagate(&grad),
        fit: r,
    })
}

/// Baseline from the outer tenth on each side, peak from a 5-point running
/// mean, width from the half-maximum crossings.
fn initial_guess(s: &Spectrum) -> Result<[f64; 5], SpectrumError> {
    let n = s.len();
    let edge = (n / 10).max(1);
    let mut outer: Vec<f64> = s.counts[..edge].iter().chain(&s.counts[n - edge..]).cloned().collect();
    outer.sort_by(f64::total_cmp);
    let baseline = outer[outer.len() / 2];
    let smooth: Vec<f64> = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(2);
            let hi = (k + 2).min(n - 1);
            s.counts[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let (peak, &top) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let amplitude = top - baseline;
    if !(amplitude > 3.0 * baseline.max(1.0).sqrt() / 5f64.sqrt()) {
        return Err(SpectrumError::NoPeak);
    }
    let half = baseline + 0.5 * amplitude;
    let cross = |dir: isize| -> Option<f64> {
        let mut k = peak as isize;
        while k + dir >= 0 && ((k + dir) as usize) < n {
            let (a, b) = (k as usize, (k + dir) as usize);
            if smooth[b] < half {
                let f = (smooth[a] - half) / (smooth[a] - smooth[b]);
                return Some(s.wavelength_nm[a] + f * (s.wavelength_nm[b] - s.wavelength_nm[a]));
            }
            k += dir;
        }
        None
    };
    let (Some(left), Some(right)) = (cross(-1), cross(1)) else {
        return Err(SpectrumError::NoPeak);
    };
    let fwhm = right - left;
    let span = s.wavelength_nm[n - 1] - s.wavelength_nm[0];
    if span < 3.0 * fwhm {
        return Err(SpectrumError::Invalid(format!(
            "spectrum spans {span:.2} nm, less than 3x the apparent line width {fwhm:.2} nm"
        )));
    }
    Ok([
        0.5 * (left + right),
        0.6 * fwhm / gaussian_fwhm(1.0),
        0.2 * fwhm,
        amplitude,
        baseline,
    ])
}

pub const CWDM_CENTERS_NM: [f64; 5] = [1271.0, 1291.0, 1311.0, 1331.0, 1351.0];
pub const CWDM_WIDTH_NM: f64 = 13.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CwdmChannel {
    pub center_nm: f64,
    pub width_nm: f64,
}

impl CwdmChannel {
    pub fn new(center_nm: f64) -> Option<Self> {
        CWDM_CENTERS_NM.contains(&center_nm).then_some(Self {
            center_nm,
            width_nm: CWDM_WIDTH_NM,
        })
    }

    pub fn passband(&self) -> (f64, f64) {
        (self.center_nm - 0.5 * self.width_nm, self.center_nm + 0.5 * self.width_nm)
    }

    /// Nearest grid channel; equidistant centers go to the lower channel.
    pub fn nearest(wavelength_nm: f64) -> Self {
        let mut best = CWDM_CENTERS_NM[0];
        for &c in &CWDM_CENTERS_NM[1..] {
            if (c - wavelength_nm).abs() < (best - wavelength_nm).abs() {
                best = c;
            }
        }
        Self {
            center_nm: best,
            width_nm: CWDM_WIDTH_NM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwdmSelection {
    pub channel: CwdmChannel,
    /// Fitted center minus channel center.
    pub offset_nm: f64,
    pub center_in_band: bool,
    pub width_ok: bool,
    pub pass: bool,
    /// Share of the fitted line inside the ideal rectangular passband.
    pub in_band_fraction: f64,
}

/// Matches a fitted line against the CWDM grid: the center must sit inside
/// the nearest channel's passband and the line must be narrower than it.
pub fn match_cwdm(fit: &VoigtFitResult) -> CwdmSelection {
    let line = fit.line();
    select_channel(line.center_nm, fit.voigt_fwhm_nm, line.sigma_nm, line.gamma_nm)
}

pub fn select_channel(center_nm: f64, fwhm_nm: f64, sigma_nm: f64, gamma_nm: f64) -> CwdmSelection {
    let channel = CwdmChannel::nearest(center_nm);
    let offset_nm = center_nm - channel.center_nm;
    let center_in_band = offset_nm.abs() <= 0.5 * channel.width_nm;
    let width_ok = fwhm_nm <= channel.width_nm;
    let (lo, hi) = channel.passband();
    CwdmSelection {
        channel,
        offset_nm,
        center_in_band,
        width_ok,
        pass: center_in_band && width_ok,
        in_band_fraction: voigt::fraction_in(lo, hi, center_nm, sigma_nm, gamma_nm),
    }
}

/// Where a rate comes from for [`snr_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Measured rates in counts/s; `in_band_hz` is the rate behind the filter.
    Rate { full_hz: f64, in_band_hz: Option<f64> },
    Spectrum(Spectrum),
}

impl RateSource {
    fn full(&self) -> f64 {
        match self {
            RateSource::Rate { full_hz, .. } => *full_hz,
            RateSource::Spectrum(s) => s.rate(None),
        }
    }

    fn in_band(&self, filter: &CwdmChannel) -> Option<f64> {
        match self {
            RateSource::Rate { in_band_hz, .. } => *in_band_hz,
            RateSource::Spectrum(s) => Some(s.rate(Some(filter.passband()))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Snr {
    Finite(f64),
    /// Zero background.
    Infinite,
}

impl Snr {
    pub fn of(signal: f64, background: f64) -> Self {
        if background > 0.0 {
            Snr::Finite(signal / background)
        } else {
            Snr::Infinite
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Snr::Finite(v) => *v,
            Snr::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub signal_full_hz: f64,
    pub background_full_hz: f64,
    pub snr_full: Snr,
    pub filter: Option<CwdmChannel>,
    pub signal_in_band_hz: Option<f64>,
    pub background_in_band_hz: Option<f64>,
    pub snr_in_band: Option<Snr>,
    /// Full-band rate divided by in-band rate.
    pub signal_reduction: Option<f64>,
    pub background_reduction: Option<f64>,
}

pub fn snr_report(signal: &RateSource, background: &RateSource, filter: Option<CwdmChannel>) -> SnrReport {
    let (s_full, b_full) = (signal.full(), background.full());
    let (s_in, b_in) = match &filter {
        Some(f) => (signal.in_band(f), background.in_band(f)),
        None => (None, None),
    };
    let ratio = |full: f64, inb: Option<f64>| inb.filter(|v| *v > 0.0).map(|v| full / v);
    SnrReport {
        signal_full_hz: s_full,
        background_full_hz: b_full,
        snr_full: Snr::of(s_full, b_full),
        filter,
        signal_in_band_hz: s_in,
        background_in_band_hz: b_in,
        snr_in_band: match (s_in, b_in) {
            (Some(s), Some(b)) => Some(Snr::of(s, b)),
            _ => None,
        },
        signal_reduction: ratio(s_full, s_in),
        background_reduction: ratio(b_full, b_in),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        (0..=600).map(|i| 1240.0 + 0.2 * i as f64).collect()
    }

    #[test]
    fn noiseless_voigt_recovered() {
        let truth = VoigtLine::from_widths(1292.0, 6.0, 9.8, 1000.0, 50.0).unwrap();
        let s = truth.synthesize(&grid(), 1.0, None);
        let f = fit_voigt(&s).unwrap();
        assert!((f.center_nm - 1292.0).abs() < 1e-6);
        assert!((f.voigt_fwhm_nm - 9.8).abs() < 1e-5, "{}", f.voigt_fwhm_nm);
        assert!((f.gaussian_fwhm_nm - 6.0).abs() < 1e-4);
    }

    #[test]
    fn pure_gaussian_line() {
        let truth = VoigtLine {
            center_nm: 1300.0,
            sigma_nm: 3.0,
            gamma_nm: 0.0,
            amplitude: 500.0,
            baseline: 10.0,
            baseline_slope: 0.0,
        };
        let f = fit_voigt(&truth.synthesize(&grid(), 1.0, None)).unwrap();
        assert!(f.lorentzian_fwhm_nm < 1e-3);
        assert!((f.voigt_fwhm_nm - f.gaussian_fwhm_nm).abs() < 1e-3);
    }

    #[test]
    fn refit_of_own_line_within_one_percent() {
        let truth = VoigtLine::from_widths(1292.0, 6.0, 9.8, 1500.0, 300.0).unwrap();
        let first = fit_voigt(&truth.synthesize(&grid(), 10.0, Some(3))).unwrap();
        let again = fit_voigt(&first.line().synthesize(&grid(), 10.0, None)).unwrap();
        assert!((again.center_nm / first.center_nm - 1.0).abs() < 0.01);
        assert!((again.voigt_fwhm_nm / first.voigt_fwhm_nm - 1.0).abs() < 0.01);
        assert!((again.amplitude / first.amplitude - 1.0).abs() < 0.01);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn channel_choice_ignores_amplitude_scale(factor in 0.05f64..50.0, seed in 0u64..1000) {
            let truth = VoigtLine::from_widths(1292.0, 6.0, 9.8, 1500.0, 300.0).unwrap();
            let s = truth.synthesize(&grid(), 10.0, Some(seed));
            let mut scaled = s.clone();
            scaled.counts.iter_mut().for_each(|c| *c *= factor);
            let (a, b) = (match_cwdm(&fit_voigt(&s).unwrap()), match_cwdm(&fit_voigt(&scaled).unwrap()));
            proptest::prop_assert_eq!(a.channel, b.channel);
            proptest::prop_assert_eq!(a.pass, b.pass);
            proptest::prop_assert!((a.offset_nm - b.offset_nm).abs() < 1e-5);
            proptest::prop_assert!((a.in_band_fraction - b.in_band_fraction).abs() < 1e-6);
        }

        #[test]
        // centers inside the 1291 passband; outside it widening can add light
        fn in_band_fraction_shrinks_as_line_widens(
            center in 1284.5f64..1297.5,
            sigma in 0.1f64..10.0,
            gamma in 0.0f64..10.0,
            grow in 1.0f64..3.0,
        ) {
            let narrow = select_channel(center, 0.0, sigma, gamma);
            let wide = select_channel(center, 0.0, sigma * grow, gamma * grow);
            proptest::prop_assert!((0.0..=1.0).contains(&narrow.in_band_fraction));
            proptest::prop_assert!((0.0..=1.0).contains(&wide.in_band_fraction));
            proptest::prop_assert!(wide.in_band_fraction <= narrow.in_band_fraction + 1e-12);
        }
    }

    #[test]
    fn flat_spectrum_has_no_peak() {
        let s = Spectrum::new(grid(), vec![100.0; 601], 1.0).unwrap();
        assert!(matches!(fit_voigt(&s), Err(SpectrumError::NoPeak)));
    }

    #[test]
    fn cwdm_examples() {
        let pass = select_channel(1292.0, 9.8, 2.5, 3.0);
        assert_eq!(pass.channel.center_nm, 1291.0);
        assert!((pass.offset_nm - 1.0).abs() < 1e-12);
        assert!(pass.pass);
        let tie = select_channel(1281.0, 9.8, 2.5, 3.0);
        assert_eq!(tie.channel.center_nm, 1271.0);
        assert!(!tie.center_in_band && !tie.pass);
        let wide = select_channel(1291.0, 50.0, 10.0, 15.0);
        assert!(!wide.width_ok && !wide.pass);
    }

    #[test]
    fn snr_examples() {
        let sig = RateSource::Rate {
            full_hz: 24_750.0 * 1.2,
            in_band_hz: Some(24_750.0),
        };
        let bg = RateSource::Rate {
            full_hz: 20_000.0,
            in_band_hz: Some(1_500.0),
        };
        let r = snr_report(&sig, &bg, CwdmChannel::new(1291.0));
        assert!((r.snr_in_band.unwrap().value() - 16.5).abs() < 1e-12);
        assert!((r.signal_reduction.unwrap() - 1.2).abs() < 1e-12);
        assert!((r.background_reduction.unwrap() - 20_000.0 / 1_500.0).abs() < 1e-9);
        assert!((r.snr_full.value() - 1.485).abs() < 1e-12);
        let none = RateSource::Rate {
            full_hz: 0.0,
            in_band_hz: None,
        };
        assert_eq!(snr_report(&sig, &none, None).snr_full, Snr::Infinite);
    }

    #[test]
    fn csv_round_trip() {
        let s = Spectrum::new(vec![1290.0, 1290.5, 1291.0], vec![1.0, 5.0, 2.0], 2.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Spectrum::read_csv(&buf[..], 2.0).unwrap();
        assert_eq!(back, s);
        assert!(Spectrum::new(vec![2.0, 1.0], vec![0.0, 0.0], 1.0).is_err());
    }
}
