//! Photoluminescence scan maps, axial collection profiles and drift
//! (stability) series.

use std::io::{self, BufRead, BufReader, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{fit, minimize, Dataset, FitConfig, FitResult, Model};

const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949;
/// Robust standard deviation per unit median absolute deviation.
const MAD_SCALE: f64 = 1.4826;

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("scan map is empty or smaller than 5x5")]
    EmptyMap,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("fit diverged: {0}")]
    FitDiverged(String),
    #[error("profile maximum lies at the scan boundary")]
    PeakAtBoundary,
    #[error("series has {0} samples, need at least 10")]
    TooShort(usize),
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads rows of `ncols` numbers, skipping a header line that does not parse.
fn read_numeric<R: Read>(reader: R, ncols: usize) -> Result<Vec<Vec<f64>>, ScanError> {
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: Result<Vec<f64>, _> = line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == ncols => rows.push(v),
            Ok(v) => {
                return Err(ScanError::Csv {
                    line: i + 1,
                    message: format!("expected {ncols} columns, found {}", v.len()),
                })
            }
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(ScanError::Csv {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(rows)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Rectangular scan on a uniform grid. `intensity[iy * nx + ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMap {
    pub x_um: Vec<f64>,
    pub y_um: Vec<f64>,
    pub intensity: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpot {
    pub x_um: f64,
    pub y_um: f64,
    pub fwhm_x_um: f64,
    pub fwhm_y_um: f64,
    pub amplitude: f64,
}

impl GaussianSpot {
    pub fn round(x_um: f64, y_um: f64, fwhm_um: f64, amplitude: f64) -> Self {
        Self {
            x_um,
            y_um,
            fwhm_x_um: fwhm_um,
            fwhm_y_um: fwhm_um,
            amplitude,
        }
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let u = (x - self.x_um) / self.fwhm_x_um;
        let v = (y - self.y_um) / self.fwhm_y_um;
        self.amplitude * (-4.0 * std::f64::consts::LN_2 * (u * u + v * v)).exp()
    }
}

impl ScanMap {
    pub fn new(x_um: Vec<f64>, y_um: Vec<f64>, intensity: Vec<f64>) -> Result<Self, ScanError> {
        if x_um.len() < 5 || y_um.len() < 5 {
            return Err(ScanError::EmptyMap);
        }
        if intensity.len() != x_um.len() * y_um.len() {
            return Err(ScanError::Invalid("intensity does not fill the grid".into()));
        }
        for axis in [&x_um, &y_um] {
            let step = axis[1] - axis[0];
            if !(step > 0.0) || axis.windows(2).any(|w| ((w[1] - w[0]) / step - 1.0).abs() > 1e-6) {
                return Err(ScanError::Invalid("grid steps must be uniform and increasing".into()));
            }
        }
        if intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ScanError::Invalid("intensity must be finite and >= 0".into()));
        }
        Ok(Self { x_um, y_um, intensity })
    }

    /// Square grid of `n x n` pixels at `step_um`, starting at the origin,
    /// with Gaussian spots on a constant offset. Poisson noise when `seed`
    /// is set.
    pub fn synthetic(n: usize, step_um: f64, spots: &[GaussianSpot], offset: f64, seed: Option<u64>) -> Self {
        let axis: Vec<f64> = (0..n).map(|i| i as f64 * step_um).collect();
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let mut intensity = Vec::with_capacity(n * n);
        for &y in &axis {
            for &x in &axis {
                let mu = offset + spots.iter().map(|s| s.eval(x, y)).sum::<f64>();
                intensity.push(match rng.as_mut() {
                    Some(r) if mu > 0.0 => Poisson::new(mu).map_or(0.0, |p| p.sample(r)),
                    _ => mu,
                });
            }
        }
        Self {
            x_um: axis.clone(),
            y_um: axis,
            intensity,
        }
    }

    pub fn nx(&self) -> usize {
        self.x_um.len()
    }

    pub fn ny(&self) -> usize {
        self.y_um.len()
    }

    pub fn step_um(&self) -> f64 {
        self.x_um[1] - self.x_um[0]
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.intensity[iy * self.nx() + ix]
    }

    /// Reads `x_um,y_um,counts` rows in any order; the points must fill a
    /// uniform rectangular grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ScanError> {
        let rows = read_numeric(reader, 3)?;
        let axis = |k: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (xs, ys) = (axis(0), axis(1));
        if rows.len() != xs.len() * ys.len() {
            return Err(ScanError::Invalid(format!(
                "{} points do not fill a {}x{} grid",
                rows.len(),
                xs.len(),
                ys.len()
            )));
        }
        let mut intensity = vec![f64::NAN; rows.len()];
        for r in &rows {
            let ix = xs.partition_point(|v| *v < r[0]);
            let iy = ys.partition_point(|v| *v < r[1]);
            let slot = &mut intensity[iy * xs.len() + ix];
            if !slot.is_nan() {
                return Err(ScanError::Invalid(format!("duplicate point ({}, {})", r[0], r[1])));
            }
            *slot = r[2];
        }
        Self::new(xs, ys, intensity)
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> io::Result<()> {
        let mut w = io::BufWriter::new(writer);
        writeln!(w, "x_um,y_um,counts")?;
        for (iy, y) in self.y_um.iter().enumerate() {
            for (ix, x) in self.x_um.iter().enumerate() {
                writeln!(w, "{x},{y},{}", self.at(ix, iy))?;
            }
        }
        w.flush()
    }

    /// Median and `1.4826 * MAD` of all pixels.
    pub fn robust_level(&self) -> (f64, f64) {
        let mut v = self.intensity.clone();
        let med = median(&mut v);
        let mut dev: Vec<f64> = self.intensity.iter().map(|x| (x - med).abs()).collect();
        (med, MAD_SCALE * median(&mut dev))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub x_um: f64,
    pub y_um: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSearch {
    pub threshold: f64,
    /// Candidates closer than this were merged into the brighter one.
    pub suppression_um: f64,
    pub candidates: Vec<Candidate>,
}

/// Local maxima of the 3x3 box-smoothed map above
/// `median + threshold_sigma * robust_sigma` of the raw map, with
/// non-maximum suppression inside `suppression_um` (default: the spot size
/// fitted at the brightest maximum). Flat-topped maxima report the centroid
/// of the plateau; `peak` is the smoothed value.
pub fn find_emitters(
    map: &ScanMap,
    threshold_sigma: f64,
    suppression_um: Option<f64>,
) -> Result<PeakSearch, ScanError> {
    let (nx, ny) = (map.nx(), map.ny());
    if nx < 5 || ny < 5 {
        return Err(ScanError::EmptyMap);
    }
    let (med, sigma) = map.robust_level();
    let threshold = med + threshold_sigma * sigma;
    let smooth = box_smooth(map);
    let at = |x: usize, y: usize| smooth[y * nx + x];
    let mut visited = vec![false; nx * ny];
    let mut maxima = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let v = at(ix, iy);
            if visited[iy * nx + ix] || !(v > threshold) {
                continue;
            }
            // flood the plateau of equal values, then test its rim
            let mut plateau = vec![(ix, iy)];
            visited[iy * nx + ix] = true;
            let mut k = 0;
            let mut is_max = true;
            while k < plateau.len() {
                let (px, py) = plateau[k];
                k += 1;
                for (qx, qy) in neighbors(px, py, nx, ny) {
                    let w = at(qx, qy);
                    if w > v {
                        is_max = false;
                    } else if w == v && !visited[qy * nx + qx] {
                        visited[qy * nx + qx] = true;
                        plateau.push((qx, qy));
                    }
                }
            }
            if is_max {
                let n = plateau.len() as f64;
                maxima.push(Candidate {
                    x_um: plateau.iter().map(|p| map.x_um[p.0]).sum::<f64>() / n,
                    y_um: plateau.iter().map(|p| map.y_um[p.1]).sum::<f64>() / n,
                    peak: v,
                });
            }
        }
    }
    maxima.sort_by(|a, b| b.peak.total_cmp(&a.peak).then(a.y_um.total_cmp(&b.y_um)).then(a.x_um.total_cmp(&b.x_um)));
    let suppression_um = match (suppression_um, maxima.first()) {
        (Some(d), _) => d,
        (None, Some(top)) => fit_spot(map, (top.x_um, top.y_um))
            .map(|s| s.spot_size_um)
            .unwrap_or(3.0 * map.step_um()),
        (None, None) => 0.0,
    };
    let mut candidates: Vec<Candidate> = Vec::new();
    for m in maxima {
        let near = candidates
            .iter()
            .any(|c| (c.x_um - m.x_um).hypot(c.y_um - m.y_um) < suppression_um);
        if !near {
            candidates.push(m);
        }
    }
    Ok(PeakSearch {
        threshold,
        suppression_um,
        candidates,
    })
}

fn box_smooth(map: &ScanMap) -> Vec<f64> {
    let (nx, ny) = (map.nx(), map.ny());
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let (mut sum, mut n) = (map.at(ix, iy), 1.0);
            for (qx, qy) in neighbors(ix, iy, nx, ny) {
                sum += map.at(qx, qy);
                n += 1.0;
            }
            out.push(sum / n);
        }
    }
    out
}

fn neighbors(x: usize, y: usize, nx: usize, ny: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx != 0 || dy != 0)
        .filter_map(move |(dx, dy)| {
            let (qx, qy) = (x as i64 + dx, y as i64 + dy);
            (qx >= 0 && qy >= 0 && (qx as usize) < nx && (qy as usize) < ny).then_some((qx as usize, qy as usize))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotFit {
    pub x_um: f64,
    pub y_um: f64,
    pub fwhm_x_um: f64,
    pub fwhm_y_um: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Geometric mean of the two FWHM.
    pub spot_size_um: f64,
    pub spot_size_err_um: f64,
    pub fit: FitResult,
}

/// Axis-aligned elliptical Gaussian on a constant offset, fitted over the
/// pixels within two half-maximum diameters of `guess`.
pub fn fit_spot(map: &ScanMap, guess: (f64, f64)) -> Result<SpotFit, ScanError> {
    let (nx, ny) = (map.nx(), map.ny());
    let step = map.step_um();
    let ix = ((guess.0 - map.x_um[0]) / step).round();
    let iy = ((guess.1 - map.y_um[0]) / step).round();
    if !(ix >= 1.0 && iy >= 1.0 && ix <= (nx - 2) as f64 && iy <= (ny - 2) as f64) {
        return Err(ScanError::Invalid("spot guess is not inside the map interior".into()));
    }
    let (ix, iy) = (ix as usize, iy as usize);
    let (offset, _) = map.robust_level();
    let amplitude = map.at(ix, iy) - offset;
    if !(amplitude > 0.0) {
        return Err(ScanError::FitDiverged("no spot above the map median".into()));
    }
    // half-maximum area of the connected region around the guess
    let half = offset + 0.5 * amplitude;
    let mut seen = vec![false; nx * ny];
    let mut stack = vec![(ix, iy)];
    seen[iy * nx + ix] = true;
    let mut area_px = 0usize;
    while let Some((px, py)) = stack.pop() {
        area_px += 1;
        for (qx, qy) in neighbors(px, py, nx, ny) {
            if !seen[qy * nx + qx] && map.at(qx, qy) >= half {
                seen[qy * nx + qx] = true;
                stack.push((qx, qy));
            }
        }
    }
    let fwhm0 = (2.0 * (area_px as f64 / std::f64::consts::PI).sqrt() * step).max(step);
    let reach = 2.0 * fwhm0;
    let mut pts = Vec::new();
    for (jy, y) in map.y_um.iter().enumerate() {
        for (jx, x) in map.x_um.iter().enumerate() {
            if (x - map.x_um[ix]).abs() <= reach && (y - map.y_um[iy]).abs() <= reach {
                pts.push((*x, *y, map.at(jx, jy)));
            }
        }
    }
    if pts.len() < 12 {
        return Err(ScanError::FitDiverged("too few pixels around the spot".into()));
    }
    let init = [map.x_um[ix], map.y_um[iy], fwhm0, fwhm0, amplitude, offset];
    let names = ["x_um", "y_um", "fwhm_x_um", "fwhm_y_um", "amplitude", "offset"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let residual = |p: &[f64], r: &mut [f64]| {
        let spot = GaussianSpot {
            x_um: p[0],
            y_um: p[1],
            fwhm_x_um: p[2],
            fwhm_y_um: p[3],
            amplitude: p[4],
        };
        for (ri, (x, y, v)) in r.iter_mut().zip(&pts) {
            *ri = v - p[5] - spot.eval(*x, *y);
        }
    };
    let project = |p: &mut [f64]| {
        p[2] = p[2].max(1e-3 * step);
        p[3] = p[3].max(1e-3 * step);
    };
    let r = minimize(residual, pts.len(), &init, names, project, &FitConfig::default())
        .map_err(|e| ScanError::FitDiverged(e.to_string()))?;
    let v = &r.values;
    let inside = v[0] >= map.x_um[0] && v[0] <= map.x_um[nx - 1] && v[1] >= map.y_um[0] && v[1] <= map.y_um[ny - 1];
    if !r.converged || !inside || !(v[4] > 0.0) || v.iter().any(|x| !x.is_finite()) {
        return Err(ScanError::FitDiverged(format!(
            "converged={} center=({:.3}, {:.3}) amplitude={:.3}",
            r.converged, v[0], v[1], v[4]
        )));
    }
    let size = (v[2] * v[3]).sqrt();
    let grad = [0.0, 0.0, 0.5 * size / v[2], 0.5 * size / v[3], 0.0, 0.0];
    Ok(SpotFit {
        x_um: v[0],
        y_um: v[1],
        fwhm_x_um: v[2],
        fwhm_y_um: v[3],
        amplitude: v[4],
        offset: v[5],
        spot_size_um: size,
        spot_size_err_um: r.propagate(&grad),
        fit: r,
    })
}

/// `I(z) = I0 / (1 + ((z - z0) / z_R)^2)`, parameters `[z0, z_r, i0]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AxialModel;

impl Model for AxialModel {
    fn param_names(&self) -> Vec<String> {
        vec!["z0_um".into(), "rayleigh_um".into(), "i0".into()]
    }

    fn eval(&self, z: f64, p: &[f64]) -> f64 {
        p[2] / (1.0 + ((z - p[0]) / p[1]).powi(2))
    }

    fn project(&self, p: &mut [f64]) {
        p[1] = p[1].abs().max(1e-9);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxialFit {
    pub z0_um: f64,
    pub rayleigh_um: f64,
    pub rayleigh_err_um: f64,
    pub i0: f64,
    /// Width where the interpolated data stay above 80% of their maximum;
    /// `None` when the data do not fall below that level on both sides.
    pub retention_range_80_um: Option<f64>,
    /// Same width implied by the fit, equal to `z_R`.
    pub fit_range_80_um: f64,
    /// Data and fit widths differ by more than 10%.
    pub range_mismatch: bool,
    pub fit: FitResult,
}

pub fn fit_axial(profile: &[(f64, f64)]) -> Result<AxialFit, ScanError> {
    if profile.len() < 7 {
        return Err(ScanError::Invalid(format!("{} axial points, need at least 7", profile.len())));
    }
    let mut pts = profile.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[1].0 == w[0].0) || pts.iter().any(|p| !(p.0.is_finite() && p.1.is_finite())) {
        return Err(ScanError::Invalid("axial positions must be distinct and finite".into()));
    }
    let (imax, &(zmax, vmax)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    if imax == 0 || imax == pts.len() - 1 {
        return Err(ScanError::PeakAtBoundary);
    }
    if !(vmax > 0.0) {
        return Err(ScanError::FitDiverged("profile has no positive signal".into()));
    }
    let crossing = |dir: isize| -> Option<f64> {
        let level = 0.8 * vmax;
        let mut k = imax as isize;
        while k + dir >= 0 && ((k + dir) as usize) < pts.len() {
            let (a, b) = (pts[k as usize], pts[(k + dir) as usize]);
            if b.1 < level {
                return Some(a.0 + (a.1 - level) / (a.1 - b.1) * (b.0 - a.0));
            }
            k += dir;
        }
        None
    };
    let retention_range_80_um = match (crossing(-1), crossing(1)) {
        (Some(lo), Some(hi)) => Some(hi - lo),
        _ => None,
    };
    let half = 0.5 * vmax;
    let above: Vec<f64> = pts.iter().filter(|p| p.1 >= half).map(|p| p.0).collect();
    let width0 = (above[above.len() - 1] - above[0]).max(pts[imax + 1].0 - pts[imax - 1].0);
    let data = Dataset::unweighted(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect())
        .map_err(|e| ScanError::Invalid(e.to_string()))?;
    let r = fit(&AxialModel, &data, Some(&[zmax, 0.5 * width0, vmax]))
        .map_err(|e| ScanError::FitDiverged(e.to_string()))?;
    if !r.converged || !(r.values[2] > 0.0) {
        return Err(ScanError::FitDiverged(format!("converged={} i0={}", r.converged, r.values[2])));
    }
    let z_r = r.values[1];
    let range_mismatch = retention_range_80_um.is_none_or(|d| ((d - z_r) / z_r).abs() > 0.1);
    Ok(AxialFit {
        z0_um: r.values[0],
        rayleigh_um: z_r,
        rayleigh_err_um: r.standard_errors[1],
        i0: r.values[2],
        retention_range_80_um,
        fit_range_80_um: z_r,
        range_mismatch,
        fit: r,
    })
}

pub fn read_axial_csv<R: Read>(reader: R) -> Result<Vec<(f64, f64)>, ScanError> {
    Ok(read_numeric(reader, 2)?.into_iter().map(|r| (r[0], r[1])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub time_s: Vec<f64>,
    pub intensity: Vec<f64>,
}

impl DriftSeries {
    pub fn new(time_s: Vec<f64>, intensity: Vec<f64>) -> Result<Self, ScanError> {
        if time_s.len() != intensity.len() {
            return Err(ScanError::Invalid("time and intensity lengths differ".into()));
        }
        if time_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ScanError::Invalid("time must be strictly increasing".into()));
        }
        Ok(Self { time_s, intensity })
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ScanError> {
        let rows = read_numeric(reader, 2)?;
        Self::new(rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect())
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> io::Result<()> {
        let mut w = io::BufWriter::new(writer);
        writeln!(w, "t_s,counts")?;
        for (t, c) in self.time_s.iter().zip(&self.intensity) {
            writeln!(w, "{t},{c}")?;
        }
        w.flush()
    }

    /// Signal of a spot of Gaussian profile (`spot_fwhm_um`) while the
    /// emitter drifts away from its center at a constant speed. Poisson noise
    /// on `peak_counts` per sample when `seed` is set.
    pub fn linear_drift(
        spot_fwhm_um: f64,
        drift_um_per_h: f64,
        duration_s: f64,
        sample_s: f64,
        peak_counts: f64,
        seed: Option<u64>,
    ) -> Self {
        let spot = GaussianSpot::round(0.0, 0.0, spot_fwhm_um, peak_counts);
        let n = (duration_s / sample_s).floor() as usize + 1;
        let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
        let time_s: Vec<f64> = (0..n).map(|i| i as f64 * sample_s).collect();
        let intensity = time_s
            .iter()
            .map(|t| {
                let mu = spot.eval(drift_um_per_h * t / 3600.0, 0.0);
                match rng.as_mut() {
                    Some(r) if mu > 0.0 => Poisson::new(mu).map_or(0.0, |p| p.sample(r)),
                    _ => mu,
                }
            })
            .collect();
        Self { time_s, intensity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retention {
    pub fraction: f64,
    /// First time the smoothed, normalized signal drops below `fraction`;
    /// `None` when it never does.
    pub time_s: Option<f64>,
    pub never_crossed: bool,
}

/// Centered moving median, truncated at the ends.
pub fn moving_median(v: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..v.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(v.len());
            median(&mut v[lo..hi].to_vec())
        })
        .collect()
}

/// Smooths with a 5-sample moving median, normalizes to the first smoothed
/// value and interpolates the first downward crossing of `fraction`.
pub fn retention_time(d: &DriftSeries, fraction: f64) -> Result<Retention, ScanError> {
    if d.time_s.len() < 10 {
        return Err(ScanError::TooShort(d.time_s.len()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ScanError::Invalid(format!("fraction {fraction} must lie in (0, 1)")));
    }
    let s = moving_median(&d.intensity, 5);
    if !(s[0] > 0.0) {
        return Err(ScanError::Invalid("initial smoothed signal must be positive".into()));
    }
    let level = fraction * s[0];
    let time_s = (1..s.len()).find(|&i| s[i] < level).map(|i| {
        let (t0, t1) = (d.time_s[i - 1], d.time_s[i]);
        let (a, b) = (s[i - 1], s[i]);
        t0 + (a - level) / (a - b) * (t1 - t0)
    });
    Ok(Retention {
        fraction,
        time_s,
        never_crossed: time_s.is_none(),
    })
}

/// Time for a linear drift to carry the emitter to the point where a
/// Gaussian spot of `spot_fwhm_um` passes `fraction` of its peak.
pub fn drift_retention_oracle(spot_fwhm_um: f64, drift_um_per_h: f64, fraction: f64) -> f64 {
    let offset = spot_fwhm_um * ((1.0 / fraction).ln() / (4.0 * std::f64::consts::LN_2)).sqrt();
    offset / drift_um_per_h * 3600.0
}

/// Gaussian FWHM from the 1/e² intensity diameter.
pub fn fwhm_from_e2_diameter(d_um: f64) -> f64 {
    d_um * FWHM_PER_SIGMA / 4.0
}
