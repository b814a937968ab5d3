use serde::{Deserialize, Serialize};

use super::{fit, fit_g2_with, Dataset, FitError, FitResult, G2FitOptions, Linear, Model};
use crate::correlator::CorrelationHistogram;

/// `I(P) = I_sat P / (P_sat + P)`, optionally plus `a P + d` for a linear
/// background and a constant dark offset. Parameters
/// `[i_sat, p_sat(, a, d)]`, powers in mW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SaturationModel {
    pub background: bool,
}

impl Model for SaturationModel {
    fn param_names(&self) -> Vec<String> {
        let mut names = vec!["i_sat".to_string(), "p_sat_mw".to_string()];
        if self.background {
            names.push("background_per_mw".into());
            names.push("offset".into());
        }
        names
    }

    fn eval(&self, power: f64, p: &[f64]) -> f64 {
        let signal = p[0] * power / (p[1] + power);
        if self.background {
            signal + p[2] * power + p[3]
        } else {
            signal
        }
    }

    fn project(&self, p: &mut [f64]) {
        p[0] = p[0].max(f64::MIN_POSITIVE);
        p[1] = p[1].max(1e-12);
    }

    fn initial_guess(&self, data: &Dataset) -> Option<Vec<f64>> {
        // 1/I = 1/I_sat + (P_sat/I_sat)(1/P)
        let pts: Vec<(f64, f64)> = data
            .x
            .iter()
            .zip(&data.y)
            .filter(|(p, i)| **p > 0.0 && **i > 0.0)
            .map(|(p, i)| (1.0 / p, 1.0 / i))
            .collect();
        let n = pts.len() as f64;
        let (mut i_sat, mut p_sat) = (0.0, 0.0);
        if n >= 2.0 {
            let mx = pts.iter().map(|q| q.0).sum::<f64>() / n;
            let my = pts.iter().map(|q| q.1).sum::<f64>() / n;
            let sxx: f64 = pts.iter().map(|q| (q.0 - mx).powi(2)).sum();
            let sxy: f64 = pts.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
            if sxx > 0.0 {
                let slope = sxy / sxx;
                let intercept = my - slope * mx;
                if intercept > 0.0 && slope > 0.0 {
                    i_sat = 1.0 / intercept;
                    p_sat = slope / intercept;
                }
            }
        }
        if !(i_sat > 0.0 && p_sat > 0.0) {
            i_sat = 2.0 * data.y.iter().cloned().fold(0.0, f64::max);
            let mut powers = data.x.clone();
            powers.sort_by(f64::total_cmp);
            p_sat = powers[powers.len() / 2];
        }
        let mut init = vec![i_sat, p_sat];
        if self.background {
            init.extend([0.0, 0.0]);
        }
        Some(init)
    }
}

/// One point of a power sweep. Without `sigma` the points are weighted
/// equally.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub power_mw: f64,
    pub rate: f64,
    #[serde(default)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationFit {
    pub fit: FitResult,
    pub i_sat: f64,
    pub i_sat_err: f64,
    pub p_sat_mw: f64,
    pub p_sat_err_mw: f64,
    pub background: bool,
}

impl SaturationFit {
    pub fn model(&self) -> SaturationModel {
        SaturationModel {
            background: self.background,
        }
    }

    /// Fitted total rate at `power_mw`.
    pub fn rate(&self, power_mw: f64) -> f64 {
        self.model().eval(power_mw, &self.fit.values)
    }
}

/// Fits the saturation law to a power sweep. The fitted `P_sat` must lie
/// inside the measured power range.
pub fn fit_saturation(points: &[SaturationPoint], background: bool) -> Result<SaturationFit, FitError> {
    let model = SaturationModel { background };
    let needed = 4.max(model.param_names().len() + 1);
    if points.len() < needed {
        return Err(FitError::InsufficientData {
            points: points.len(),
            params: model.param_names().len(),
        });
    }
    if points.iter().any(|p| !(p.power_mw > 0.0 && p.rate.is_finite())) {
        return Err(FitError::InsufficientSpan("powers must be positive and rates finite".into()));
    }
    let data = Dataset::new(
        points.iter().map(|p| p.power_mw).collect(),
        points.iter().map(|p| p.rate).collect(),
        points.iter().map(|p| p.sigma.unwrap_or(1.0)).collect(),
    )?;
    let init = if background {
        // start the composite fit from the plain saturation fit
        let plain = SaturationModel { background: false };
        let base = plain.initial_guess(&data).ok_or(FitError::MissingInit)?;
        match fit(&plain, &data, Some(&base)) {
            Ok(r) => vec![r.values[0], r.values[1], 0.0, 0.0],
            Err(_) => model.initial_guess(&data).ok_or(FitError::MissingInit)?,
        }
    } else {
        model.initial_guess(&data).ok_or(FitError::MissingInit)?
    };
    let r = fit(&model, &data, Some(&init))?;
    let (lo, hi) = data
        .x
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(*p), hi.max(*p)));
    let p_sat = r.values[1];
    if !(p_sat >= lo && p_sat <= hi) {
        return Err(FitError::InsufficientSpan(format!(
            "fitted P_sat = {p_sat:.4} mW lies outside the measured range [{lo}, {hi}] mW"
        )));
    }
    Ok(SaturationFit {
        i_sat: r.values[0],
        i_sat_err: r.standard_errors[0],
        p_sat_mw: p_sat,
        p_sat_err_mw: r.standard_errors[1],
        background,
        fit: r,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub power_mw: f64,
    pub g2_zero: f64,
    pub g2_zero_err: f64,
    pub tau1_ps: f64,
}

/// Per-power g2(0) and a weighted straight line through them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSweep {
    pub points: Vec<PowerPoint>,
    pub intercept: f64,
    pub intercept_err: f64,
    /// Change of g2(0) per mW.
    pub slope: f64,
    pub slope_err: f64,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    /// Each g2(0) strictly exceeds the one at the next lower power.
    pub monotone_increasing: bool,
}

impl PowerSweep {
    pub fn from_points(mut points: Vec<PowerPoint>) -> Result<Self, FitError> {
        if points.len() < 3 {
            return Err(FitError::InsufficientSpan(format!(
                "a power trend needs at least 3 powers, got {}",
                points.len()
            )));
        }
        points.sort_by(|a, b| a.power_mw.total_cmp(&b.power_mw));
        let data = Dataset::new(
            points.iter().map(|p| p.power_mw).collect(),
            points.iter().map(|p| p.g2_zero).collect(),
            points.iter().map(|p| p.g2_zero_err).collect(),
        )?;
        let line = fit(&Linear, &data, None)?;
        let w: Vec<f64> = data.sigma.iter().map(|s| 1.0 / (s * s)).collect();
        let wsum: f64 = w.iter().sum();
        let ybar = w.iter().zip(&data.y).map(|(w, y)| w * y).sum::<f64>() / wsum;
        let ss_tot: f64 = w.iter().zip(&data.y).map(|(w, y)| w * (y - ybar).powi(2)).sum();
        let r_squared = if ss_tot > 0.0 { 1.0 - line.chi2 / ss_tot } else { 0.0 };
        let monotone_increasing = points.windows(2).all(|p| p[1].g2_zero > p[0].g2_zero);
        Ok(Self {
            intercept: line.values[0],
            intercept_err: line.standard_errors[0],
            slope: line.values[1],
            slope_err: line.standard_errors[1],
            r_squared,
            monotone_increasing,
            points,
        })
    }
}

/// Fits every histogram of a power sweep and the linear g2(0) trend.
pub fn g2_vs_power(
    sweep: &[(f64, CorrelationHistogram)],
    opts: &G2FitOptions,
) -> Result<PowerSweep, FitError> {
    if sweep.len() < 3 {
        return Err(FitError::InsufficientSpan(format!(
            "a power trend needs at least 3 powers, got {}",
            sweep.len()
        )));
    }
    let mut points = Vec::with_capacity(sweep.len());
    for (power, h) in sweep {
        let f = fit_g2_with(h, opts)?;
        points.push(PowerPoint {
            power_mw: *power,
            g2_zero: f.g2_zero,
            g2_zero_err: f.g2_zero_err,
            tau1_ps: f.tau1_ps(),
        });
    }
    PowerSweep::from_points(points)
}
