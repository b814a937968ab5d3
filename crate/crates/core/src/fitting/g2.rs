use serde::{Deserialize, Serialize};

use super::{minimize, FitConfig, FitError, FitResult, Model};
use crate::correlator::CorrelationHistogram;

/// `g2(tau) = 1 - beta1 exp(-|tau|/tau1) + beta2 exp(-|tau|/tau2)` with
/// parameters `[beta1, beta2, tau1_ps, tau2_ps]`. Fits keep
/// `0 <= beta2`, `0 <= beta1 <= 1 + beta2` and `tau2 >= tau1`.
///
/// With a nonzero `bin_width_ps` the model is averaged over a bin of that
/// width centered on `tau`, which is what a histogram bin measures. A nonzero
/// `irf_sigma_ps` convolves the curve with a Gaussian instrument response of
/// that standard deviation on the delay axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct G2Model {
    pub bin_width_ps: f64,
    #[serde(default)]
    pub irf_sigma_ps: f64,
}

pub const G2_PARAMS: [&str; 4] = ["beta1", "beta2", "tau1_ps", "tau2_ps"];

impl G2Model {
    pub fn point() -> Self {
        Self::default()
    }

    pub fn binned(bin_width_ps: f64) -> Self {
        Self {
            bin_width_ps,
            irf_sigma_ps: 0.0,
        }
    }

    pub fn with_irf(mut self, sigma_ps: f64) -> Self {
        self.irf_sigma_ps = sigma_ps;
        self
    }

    pub fn value(&self, tau_ps: f64, p: &[f64]) -> f64 {
        let (w, s) = (self.bin_width_ps, self.irf_sigma_ps);
        1.0 - p[0] * exp_mean(tau_ps, w, p[2], s) + p[1] * exp_mean(tau_ps, w, p[3], s)
    }
}

/// Mean over `[c - w/2, c + w/2]` of `exp(-|t| / tau)` convolved with a
/// Gaussian of standard deviation `sigma`; point value when `w == 0`.
fn exp_mean(c: f64, w: f64, tau: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        let a = sigma / tau;
        // beyond this distance the convolution is exp(a^2/2) exp(-|t|/tau)
        let tail = sigma * a + 9.0 * sigma;
        let near = if c.abs() >= 0.5 * w { c.abs() - 0.5 * w } else { -1.0 };
        if near > tail {
            if w <= 0.0 {
                return (0.5 * a * a - near / tau).exp();
            }
            return -tau * (0.5 * a * a - near / tau).exp() * (-w / tau).exp_m1() / w;
        }
        if w <= 0.0 {
            return exp_conv(c, tau, sigma);
        }
        let pieces = (w / sigma).ceil().clamp(1.0, 64.0) as usize;
        let h = w / pieces as f64;
        let mut sum = 0.0;
        for i in 0..pieces {
            let mid = c - 0.5 * w + (i as f64 + 0.5) * h;
            for (x, wt) in GAUSS_LEGENDRE_8 {
                sum += wt * (exp_conv(mid - 0.5 * h * x, tau, sigma) + exp_conv(mid + 0.5 * h * x, tau, sigma));
            }
        }
        return 0.5 * sum / pieces as f64;
    }
    if w <= 0.0 {
        return (-c.abs() / tau).exp();
    }
    let (a, b) = (c - 0.5 * w, c + 0.5 * w);
    let integral = if a >= 0.0 || b <= 0.0 {
        let near = a.abs().min(b.abs());
        -tau * (-near / tau).exp() * (-w / tau).exp_m1()
    } else {
        -tau * ((a / tau).exp_m1() + (-b / tau).exp_m1())
    };
    integral / w
}

/// Positive nodes and weights of 8-point Gauss–Legendre on [-1, 1].
const GAUSS_LEGENDRE_8: [(f64, f64); 4] = [
    (0.183_434_642_495_649_8, 0.362_683_783_378_362),
    (0.525_532_409_916_329, 0.313_706_645_877_887_3),
    (0.796_666_477_413_626_7, 0.222_381_034_453_374_5),
    (0.960_289_856_497_536_3, 0.101_228_536_290_376_3),
];

/// `exp(-|t| / tau)` convolved with a unit-area Gaussian of width `sigma`:
/// `exp(a^2/2) / 2 * [exp(-t/tau) erfc(u) + exp(t/tau) erfc(v)]` with
/// `a = sigma/tau`, `u = (a - t/sigma)/sqrt2`, `v = (a + t/sigma)/sqrt2`,
/// evaluated through the scaled complementary error function.
fn exp_conv(t: f64, tau: f64, sigma: f64) -> f64 {
    let t = t.abs();
    let a = sigma / tau;
    let u = (a - t / sigma) * std::f64::consts::FRAC_1_SQRT_2;
    let v = (a + t / sigma) * std::f64::consts::FRAC_1_SQRT_2;
    let g = (-0.5 * (t / sigma).powi(2)).exp();
    let first = if u >= 0.0 {
        erfcx(u) * g
    } else {
        (0.5 * a * a - t / tau).exp() * libm::erfc(u)
    };
    0.5 * (first + erfcx(v) * g)
}

/// `exp(x^2) erfc(x)` for `x >= 0`.
fn erfcx(x: f64) -> f64 {
    if x < 25.0 {
        (x * x).exp() * libm::erfc(x)
    } else {
        let r = 1.0 / (x * x);
        (1.0 - 0.5 * r + 0.75 * r * r - 1.875 * r * r * r) / (x * std::f64::consts::PI.sqrt())
    }
}

impl Model for G2Model {
    fn param_names(&self) -> Vec<String> {
        G2_PARAMS.iter().map(|s| s.to_string()).collect()
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        self.value(x, p)
    }

    fn project(&self, p: &mut [f64]) {
        project_g2(p);
    }
}

fn project_g2(p: &mut [f64]) {
    p[1] = p[1].max(0.0);
    p[0] = p[0].clamp(0.0, 1.0 + p[1]);
    p[2] = p[2].max(1e-3);
    p[3] = p[3].max(p[2]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// Poisson deviance on raw counts when the histogram carries them,
    /// Gaussian otherwise.
    #[default]
    Auto,
    /// Signed Poisson deviance residuals on the raw coincidence counts;
    /// falls back to Gaussian when the normalization is unknown.
    Deviance,
    /// `(g2 - model) / g2_err`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct G2FitOptions {
    pub residuals: ResidualKind,
    /// Known Gaussian instrument response on the delay axis (the quadrature
    /// sum of both detectors' jitter). `None` fits the bare model.
    pub irf_sigma_ps: Option<f64>,
    pub engine: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Fit {
    pub fit: FitResult,
    /// Fit intercept `1 - beta1 + beta2`.
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    /// Value of the bin containing zero delay.
    pub raw_zero_bin: f64,
    pub raw_zero_bin_err: f64,
    pub residuals: ResidualKind,
    /// False when the data could not resolve a bunching term; `beta2` is then
    /// fixed at zero and `tau2_ps` at its initial guess, both with zero error.
    pub bunching_resolved: bool,
    pub initial: Vec<f64>,
}

impl G2Fit {
    pub fn beta1(&self) -> f64 {
        self.fit.values[0]
    }

    pub fn beta2(&self) -> f64 {
        self.fit.values[1]
    }

    pub fn tau1_ps(&self) -> f64 {
        self.fit.values[2]
    }

    pub fn tau1_err_ps(&self) -> f64 {
        self.fit.standard_errors[2]
    }

    pub fn tau2_ps(&self) -> f64 {
        self.fit.values[3]
    }
}

/// Fits the antibunching model to a correlation histogram over its full
/// window.
pub fn fit_g2(h: &CorrelationHistogram) -> Result<G2Fit, FitError> {
    fit_g2_with(h, &G2FitOptions::default())
}

pub fn fit_g2_with(h: &CorrelationHistogram, opts: &G2FitOptions) -> Result<G2Fit, FitError> {
    let n = h.len();
    if n < 8 {
        return Err(FitError::InsufficientData { points: n, params: 4 });
    }
    let tau = h.tau_ps();
    let width = h.bin_width_ps();
    let rho2 = h.signal_fraction.map_or(1.0, |r| r * r);
    let has_counts = h.normalization.is_finite() && h.normalization > 0.0;
    let kind = match opts.residuals {
        ResidualKind::Auto if has_counts => ResidualKind::Deviance,
        ResidualKind::Auto => ResidualKind::Gaussian,
        ResidualKind::Deviance if !has_counts => ResidualKind::Gaussian,
        k => k,
    };

    let init = initial_guess(h, &tau, rho2, has_counts)?;
    if h.half_window_ps() < 10.0 * init[3] {
        return Err(FitError::InsufficientSpan(format!(
            "window +-{:.0} ps is shorter than 10 x the initial tau2 guess {:.0} ps",
            h.half_window_ps(),
            init[3]
        )));
    }

    let model = G2Model::binned(width).with_irf(opts.irf_sigma_ps.unwrap_or(0.0));
    let norm = h.normalization;
    let counts: Vec<f64> = h.raw_counts.iter().map(|&c| c as f64).collect();
    let residual = |p: &[f64], r: &mut [f64]| match kind {
        ResidualKind::Deviance => {
            for k in 0..r.len() {
                let g = model.value(tau[k], p);
                let mu = (norm * (1.0 + rho2 * (g - 1.0))).max(1e-12 * norm);
                r[k] = deviance_residual(counts[k], mu);
            }
        }
        _ => {
            for k in 0..r.len() {
                r[k] = (h.g2[k] - model.value(tau[k], p)) / h.g2_err[k].max(f64::MIN_POSITIVE);
            }
        }
    };
    let names: Vec<String> = model.param_names();

    // The engine works on [g2(0), beta2, tau1, tau2], where the constraints
    // are a plain box; beta1 = 1 - g2(0) + beta2.
    let internal = |q: &[f64], r: &mut [f64]| residual(&[1.0 - q[0] + q[1], q[1], q[2], q[3]], r);
    let project_internal = |q: &mut [f64]| {
        q[1] = q[1].max(0.0);
        q[0] = q[0].clamp(0.0, 1.0 + q[1]);
        q[2] = q[2].max(1e-3);
        q[3] = q[3].max(q[2]);
    };
    let q0 = [1.0 - init[0] + init[1], init[1], init[2], init[3]];
    let internal_names = vec!["g2_zero".to_string(), names[1].clone(), names[2].clone(), names[3].clone()];
    let full = match minimize(internal, n, &q0, internal_names, project_internal, &opts.engine) {
        Ok(f) => Some(f),
        Err(FitError::SingularCurvature) => None,
        Err(e) => return Err(e),
    };
    // A bunching amplitude on its zero bound leaves tau2 unidentified: the
    // full fit is then singular or crawls. Try the two-level model as well.
    let (q, resolved) = match full {
        Some(f) if f.converged => (f, true),
        full => {
            let tau2 = init[3];
            let reduced = |v: &[f64], r: &mut [f64]| residual(&[1.0 - v[0], 0.0, v[1], tau2], r);
            let sub = minimize(
                reduced,
                n,
                &[q0[0].clamp(0.0, 1.0), init[2]],
                vec!["g2_zero".into(), names[2].clone()],
                |v: &mut [f64]| {
                    v[0] = v[0].clamp(0.0, 1.0);
                    v[1] = v[1].max(1e-3);
                },
                &opts.engine,
            );
            match (full, sub) {
                (Some(f), Ok(sub)) if f.chi2 < sub.chi2 => (f, true),
                (Some(f), Err(_)) => (f, true),
                (_, Ok(sub)) => {
                    let mut cov = vec![0.0; 16];
                    cov[0] = sub.cov(0, 0);
                    cov[2] = sub.cov(0, 1);
                    cov[8] = sub.cov(1, 0);
                    cov[10] = sub.cov(1, 1);
                    let two_level = FitResult {
                        names: vec![],
                        values: vec![sub.values[0], 0.0, sub.values[1], tau2],
                        standard_errors: vec![],
                        covariance: cov,
                        chi2: sub.chi2,
                        dof: sub.dof,
                        chi2_reduced: sub.chi2_reduced,
                        converged: sub.converged,
                        iterations: sub.iterations,
                    };
                    (two_level, false)
                }
                (None, Err(e)) => return Err(e),
            }
        }
    };

    // back to [beta1, beta2, tau1, tau2]: beta1 = 1 - q0 + q1
    let a = [[-1.0, 1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let mut covariance = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            let mut v = 0.0;
            for k in 0..4 {
                for l in 0..4 {
                    v += a[i][k] * q.covariance[k * 4 + l] * a[j][l];
                }
            }
            covariance[i * 4 + j] = v;
        }
    }
    let fit = FitResult {
        names,
        values: vec![1.0 - q.values[0] + q.values[1], q.values[1], q.values[2], q.values[3]],
        standard_errors: (0..4).map(|i| covariance[i * 5].max(0.0).sqrt()).collect(),
        covariance,
        chi2: q.chi2,
        dof: q.dof,
        chi2_reduced: q.chi2_reduced,
        converged: q.converged,
        iterations: q.iterations,
    };

    let g2_zero = 1.0 - fit.values[0] + fit.values[1];
    let g2_zero_err = fit.propagate(&[-1.0, 1.0, 0.0, 0.0]);
    let z = h.zero_bin();
    Ok(G2Fit {
        g2_zero,
        g2_zero_err,
        raw_zero_bin: h.g2[z],
        raw_zero_bin_err: h.g2_err[z],
        residuals: kind,
        bunching_resolved: resolved,
        initial: init,
        fit,
    })
}

/// Signed square root of the Poisson deviance of count `c` under mean `mu`.
fn deviance_residual(c: f64, mu: f64) -> f64 {
    let d = if c > 0.0 {
        2.0 * (mu - c + c * (c / mu).ln())
    } else {
        2.0 * mu
    };
    let d = d.max(0.0).sqrt();
    if c >= mu {
        d
    } else {
        -d
    }
}

/// Moving average of g2 over `2 half + 1` bins (shrinking at the edges) and
/// its Poisson error.
fn smooth_profile(
    h: &CorrelationHistogram,
    half: usize,
    rho2: f64,
    has_counts: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = h.len();
    let mut smooth = vec![0.0; n];
    let mut smooth_err = vec![0.0; n];
    for k in 0..n {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(n - 1);
        let m = (hi - lo + 1) as f64;
        smooth[k] = h.g2[lo..=hi].iter().sum::<f64>() / m;
        smooth_err[k] = if has_counts {
            let c: u64 = h.raw_counts[lo..=hi].iter().sum();
            (c as f64).sqrt().max(1.0) / (h.normalization * m * rho2)
        } else {
            h.g2_err[lo..=hi].iter().map(|e| e * e).sum::<f64>().sqrt() / m
        };
    }
    (smooth, smooth_err)
}

/// Starting point from a smoothed profile: dip depth and half-depth width for
/// the antibunching term, shoulder height and 1/e decay for the bunching term.
fn initial_guess(
    h: &CorrelationHistogram,
    tau: &[f64],
    rho2: f64,
    has_counts: bool,
) -> Result<Vec<f64>, FitError> {
    let n = tau.len();
    let w = h.bin_width_ps();
    let outer = 0.75 * h.half_window_ps();
    let plateau_idx: Vec<usize> = (0..n).filter(|&k| tau[k].abs() >= outer).collect();
    let plateau_idx = if plateau_idx.is_empty() { (0..n).collect() } else { plateau_idx };
    let plateau = plateau_idx.iter().map(|&k| h.g2[k]).sum::<f64>() / plateau_idx.len() as f64;

    // smoothing window: about 20 expected counts per window on the plateau
    let half = if has_counts {
        let mean_counts = plateau_idx.iter().map(|&k| h.raw_counts[k] as f64).sum::<f64>()
            / plateau_idx.len() as f64;
        let m = (20.0 / mean_counts.max(1e-9)).ceil() as usize;
        (m / 2).min(n / 40)
    } else {
        0
    };
    let (smooth, smooth_err) = smooth_profile(h, half, rho2, has_counts);

    let mut dip = 0;
    for k in 1..n {
        let better = smooth[k] < smooth[dip]
            || (smooth[k] == smooth[dip] && tau[k].abs() < tau[dip].abs());
        if better {
            dip = k;
        }
    }
    let depth = plateau - smooth[dip];
    let significance = depth / smooth_err[dip];
    if !(significance >= 3.0) {
        return Err(FitError::NoDipDetected {
            significance: if significance.is_finite() { significance } else { 0.0 },
        });
    }

    let half_level = smooth[dip] + 0.5 * depth;
    let walk = |dir: isize| -> Option<f64> {
        let mut k = dip as isize;
        while k >= 0 && (k as usize) < n {
            if smooth[k as usize] >= half_level {
                return Some((tau[k as usize] - tau[dip]).abs());
            }
            k += dir;
        }
        None
    };
    let half_width = match (walk(-1), walk(1)) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 10.0 * w,
    };
    let tau1 = (half_width / std::f64::consts::LN_2).max(0.5 * w);

    // the shoulder is looked for on a profile smoothed over ~2 tau1, and
    // must stand 5 sigma clear of the plateau to count
    let coarse_half = half.max((tau1 / w).round() as usize).min(n / 40);
    let (coarse, coarse_err) = smooth_profile(h, coarse_half, rho2, has_counts);
    let mut shoulder: Option<usize> = None;
    for k in 0..n {
        let d = (tau[k] - tau[dip]).abs();
        if d >= 3.0 * tau1
            && tau[k].abs() <= 0.5 * h.half_window_ps()
            && shoulder.is_none_or(|s| coarse[k] > coarse[s])
        {
            shoulder = Some(k);
        }
    }
    let (beta2, tau2) = match shoulder {
        Some(s) if coarse[s] - plateau > 5.0 * coarse_err[s] => {
            let height = coarse[s] - plateau;
            let dir: isize = if tau[s] >= tau[dip] { 1 } else { -1 };
            let mut k = s as isize;
            let mut reach = None;
            while k >= 0 && (k as usize) < n {
                if coarse[k as usize] - plateau <= height / std::f64::consts::E {
                    reach = Some((tau[k as usize] - tau[dip]).abs());
                    break;
                }
                k += dir;
            }
            let tau2 = reach.unwrap_or(f64::INFINITY).max(3.0 * tau1);
            (height, tau2)
        }
        _ => (0.01, 10.0 * tau1),
    };
    let beta1 = (1.0 + beta2 - smooth[dip]).clamp(0.05, 1.0 + beta2);
    Ok(vec![beta1, beta2, tau1, tau2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(p: &[f64], norm: f64, bin_ps: u64, half_bins: i64) -> CorrelationHistogram {
        let model = G2Model::binned(bin_ps as f64);
        let tau_ticks: Vec<i64> = (-half_bins..=half_bins).collect();
        let mut raw = Vec::new();
        let mut g2 = Vec::new();
        let mut err = Vec::new();
        for &t in &tau_ticks {
            let c = (norm * model.value((t * bin_ps as i64) as f64, p)).round() as u64;
            raw.push(c);
            g2.push(c as f64 / norm);
            err.push((c as f64).sqrt().max(1.0) / norm);
        }
        CorrelationHistogram {
            resolution_ps: bin_ps,
            bin_width_ticks: 1,
            tau_ticks,
            raw_counts: raw,
            g2,
            g2_err: err,
            normalization: norm,
            rates: None,
            duration_s: 1.0,
            signal_fraction: None,
        }
    }

    #[test]
    fn bin_mean_matches_quadrature() {
        for (c, w, tau) in [(0.0, 40.0, 230.0), (20.0, 40.0, 230.0), (-500.0, 40.0, 50.0), (5.0, 40.0, 10.0)] {
            let m = 20_000;
            let q: f64 = (0..m)
                .map(|i| {
                    let t = c - 0.5 * w + (i as f64 + 0.5) * w / m as f64;
                    (-t.abs() / tau).exp()
                })
                .sum::<f64>()
                / m as f64;
            assert!((exp_mean(c, w, tau, 0.0) - q).abs() < 1e-8, "{c} {w} {tau}");
        }
    }

    #[test]
    fn irf_convolution_matches_brute_force() {
        // direct sum over the Gaussian kernel and the bin
        let brute = |c: f64, w: f64, tau: f64, sigma: f64| {
            let (nt, ns) = (400, 4000);
            let mut acc = 0.0;
            for i in 0..nt {
                let t = if w > 0.0 { c - 0.5 * w + (i as f64 + 0.5) * w / nt as f64 } else { c };
                let mut inner = 0.0;
                let ds = 16.0 * sigma / ns as f64;
                for j in 0..ns {
                    let s = -8.0 * sigma + (j as f64 + 0.5) * ds;
                    let kern = (-0.5 * (s / sigma).powi(2)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                    inner += (-(t - s).abs() / tau).exp() * kern * ds;
                }
                acc += inner;
            }
            acc / nt as f64
        };
        for (c, w, tau, sigma) in [
            (0.0, 40.0, 230.0, 21.0),
            (40.0, 40.0, 230.0, 21.0),
            (-120.0, 40.0, 100.0, 21.0),
            (300.0, 40.0, 230.0, 21.0),
            (0.0, 0.0, 230.0, 21.0),
            (0.0, 40.0, 5.0, 21.0),
            (10.0, 40.0, 230.0, 2.0),
        ] {
            let got = exp_mean(c, w, tau, sigma);
            let want = brute(c, w, tau, sigma);
            assert!((got - want).abs() < 2e-5, "{c} {w} {tau} {sigma}: {got} vs {want}");
        }
    }

    #[test]
    fn noiseless_histogram_recovers_parameters() {
        let truth = [0.95, 0.3, 230.0, 8000.0];
        let h = synthetic(&truth, 1e9, 40, 2500);
        let f = fit_g2(&h).unwrap();
        assert!(f.fit.converged);
        assert!(f.bunching_resolved);
        for (v, t) in f.fit.values.iter().zip(truth) {
            assert!((v / t - 1.0).abs() < 1e-4, "{:?}", f.fit.values);
        }
        assert!((f.g2_zero - 0.35).abs() < 1e-4);
    }

    #[test]
    fn refit_of_own_curve_reproduces_result() {
        let first = fit_g2(&synthetic(&[0.8, 0.25, 310.0, 12_000.0], 1e9, 40, 4000)).unwrap();
        let again = fit_g2(&synthetic(&first.fit.values, 1e9, 40, 4000)).unwrap();
        for i in 0..4 {
            let (a, b) = (first.fit.values[i], again.fit.values[i]);
            assert!((a / b - 1.0).abs() < 1e-4, "{i}: {a} vs {b}");
        }
    }

    /// Partial derivatives of the point model, for this check only.
    fn analytic_gradient(tau: f64, p: &[f64]) -> [f64; 4] {
        let (e1, e2) = ((-tau.abs() / p[2]).exp(), (-tau.abs() / p[3]).exp());
        [
            -e1,
            e2,
            -p[0] * tau.abs() / (p[2] * p[2]) * e1,
            p[1] * tau.abs() / (p[3] * p[3]) * e2,
        ]
    }

    proptest::proptest! {
        #[test]
        fn finite_difference_jacobian_matches_analytic(
            beta1 in 0.05f64..1.0,
            beta2 in 0.0f64..1.0,
            tau1 in 50.0f64..2000.0,
            ratio in 1.5f64..200.0,
        ) {
            let p = [beta1, beta2, tau1, tau1 * ratio];
            let model = G2Model::point();
            let tau: Vec<f64> = (-60..=60).map(|k| k as f64 * 0.05 * p[3]).collect();
            let r0: Vec<f64> = tau.iter().map(|&t| -model.value(t, &p)).collect();
            let mut residual = |q: &[f64], r: &mut [f64]| {
                for (ri, &t) in r.iter_mut().zip(&tau) {
                    *ri = -model.value(t, q);
                }
            };
            let scale: Vec<f64> = p.iter().map(|v| v.abs().max(1e-3)).collect();
            let jac = crate::fitting::jacobian(&mut residual, &mut |_: &mut [f64]| {}, &p, &r0, &scale, 1e-6);
            for j in 0..4 {
                let exact: Vec<f64> = tau.iter().map(|&t| analytic_gradient(t, &p)[j]).collect();
                let size = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for (k, e) in exact.iter().enumerate() {
                    let d = (jac[(k, j)] - e).abs();
                    proptest::prop_assert!(d <= 1e-4 * size.max(e.abs()), "param {j} tau {}: {} vs {e}", tau[k], jac[(k, j)]);
                }
            }
        }
    }

    #[test]
    fn flat_histogram_has_no_dip() {
        let h = synthetic(&[0.0, 0.0, 230.0, 1000.0], 1000.0, 40, 500);
        assert!(matches!(fit_g2(&h), Err(FitError::NoDipDetected { .. })));
    }

    #[test]
    fn missing_bunching_falls_back_to_two_level() {
        let truth = [1.0, 0.0, 300.0, 3000.0];
        let h = synthetic(&truth, 1e8, 40, 2000);
        let f = fit_g2(&h).unwrap();
        assert!((f.beta1() - 1.0).abs() < 1e-3);
        assert!((f.tau1_ps() / 300.0 - 1.0).abs() < 1e-3);
        assert!(f.g2_zero.abs() < 2e-3);
    }

    #[test]
    fn short_window_is_rejected() {
        let h = synthetic(&[0.9, 0.5, 230.0, 20_000.0], 1e8, 40, 500);
        assert!(matches!(fit_g2(&h), Err(FitError::InsufficientSpan(_))));
    }

    #[test]
    fn deviance_residual_signs() {
        assert!(deviance_residual(10.0, 5.0) > 0.0);
        assert!(deviance_residual(2.0, 5.0) < 0.0);
        assert_eq!(deviance_residual(5.0, 5.0), 0.0);
        assert!((deviance_residual(0.0, 2.0) + 2.0).abs() < 1e-12);
    }
}
