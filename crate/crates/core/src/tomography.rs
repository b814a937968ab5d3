//! Single-qubit polarization tomography from the six projections
//! H/V, D/A, R/L.
//!
//! Basis convention: `|H> = (1, 0)`, `|D> = (1, 1)/√2`, `|R> = (1, i)/√2`, so
//! the Stokes axes map to Pauli matrices as `s1 -> σz`, `s2 -> σx`,
//! `s3 -> σy`.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fitting::{minimize_point, FitConfig, FitError};

#[derive(Debug, Error)]
pub enum TomographyError {
    #[error("{0} projection pair has no counts")]
    EmptyBasisPair(&'static str),
    #[error("invalid projection data: {0}")]
    Invalid(String),
    #[error("likelihood maximization did not converge: {0}")]
    NoConvergence(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    H,
    V,
    D,
    A,
    R,
    L,
}

impl Setting {
    pub const ALL: [Setting; 6] = [Setting::H, Setting::V, Setting::D, Setting::A, Setting::R, Setting::L];

    /// Stokes axis index (0..3) and the sign of the projector along it.
    fn axis(self) -> (usize, f64) {
        match self {
            Setting::H => (0, 1.0),
            Setting::V => (0, -1.0),
            Setting::D => (1, 1.0),
            Setting::A => (1, -1.0),
            Setting::R => (2, 1.0),
            Setting::L => (2, -1.0),
        }
    }
}

const PAIR_NAMES: [&str; 3] = ["H/V", "D/A", "R/L"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub counts: f64,
    pub seconds: f64,
}

/// Counts and acquisition time of each wave-plate setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCounts {
    #[serde(rename = "H")]
    pub h: Projection,
    #[serde(rename = "V")]
    pub v: Projection,
    #[serde(rename = "D")]
    pub d: Projection,
    #[serde(rename = "A")]
    pub a: Projection,
    #[serde(rename = "R")]
    pub r: Projection,
    #[serde(rename = "L")]
    pub l: Projection,
}

impl ProjectionCounts {
    /// Equal acquisition time for every setting; counts in `H V D A R L` order.
    pub fn uniform(counts: [f64; 6], seconds: f64) -> Self {
        let p = |c| Projection { counts: c, seconds };
        Self {
            h: p(counts[0]),
            v: p(counts[1]),
            d: p(counts[2]),
            a: p(counts[3]),
            r: p(counts[4]),
            l: p(counts[5]),
        }
    }

    pub fn get(&self, s: Setting) -> Projection {
        match s {
            Setting::H => self.h,
            Setting::V => self.v,
            Setting::D => self.d,
            Setting::A => self.a,
            Setting::R => self.r,
            Setting::L => self.l,
        }
    }

    pub fn as_array(&self) -> [Projection; 6] {
        Setting::ALL.map(|s| self.get(s))
    }

    pub fn total_counts(&self) -> f64 {
        self.as_array().iter().map(|p| p.counts).sum()
    }

    pub fn validate(&self) -> Result<(), TomographyError> {
        let all = self.as_array();
        for (s, p) in Setting::ALL.iter().zip(&all) {
            if !(p.counts.is_finite() && p.counts >= 0.0) {
                return Err(TomographyError::Invalid(format!("{s:?} counts must be finite and >= 0")));
            }
            if !(p.seconds.is_finite() && p.seconds > 0.0) {
                return Err(TomographyError::Invalid(format!("{s:?} acquisition time must be > 0")));
            }
        }
        for (k, name) in PAIR_NAMES.iter().enumerate() {
            if all[2 * k].counts + all[2 * k + 1].counts <= 0.0 {
                return Err(TomographyError::EmptyBasisPair(name));
            }
        }
        Ok(())
    }
}

/// 2x2 density matrix. Serialized as separate real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatrixParts", try_from = "MatrixParts")]
pub struct DensityMatrix {
    pub m: [[Complex64; 2]; 2],
}

#[derive(Serialize, Deserialize)]
struct MatrixParts {
    real: [[f64; 2]; 2],
    imag: [[f64; 2]; 2],
}

impl From<DensityMatrix> for MatrixParts {
    fn from(d: DensityMatrix) -> Self {
        Self {
            real: d.m.map(|row| row.map(|z| z.re)),
            imag: d.m.map(|row| row.map(|z| z.im)),
        }
    }
}

impl TryFrom<MatrixParts> for DensityMatrix {
    type Error = String;

    fn try_from(p: MatrixParts) -> Result<Self, String> {
        let m = [0, 1].map(|i| [0, 1].map(|j| Complex64::new(p.real[i][j], p.imag[i][j])));
        let d = DensityMatrix { m };
        if !d.is_hermitian(1e-9) {
            return Err("density matrix must be Hermitian".into());
        }
        Ok(d)
    }
}

impl DensityMatrix {
    /// `ρ = (1 + s1 σz + s2 σx + s3 σy) / 2`.
    pub fn from_stokes(s: [f64; 3]) -> Self {
        let off = Complex64::new(0.5 * s[1], -0.5 * s[2]);
        Self {
            m: [
                [Complex64::new(0.5 * (1.0 + s[0]), 0.0), off],
                [off.conj(), Complex64::new(0.5 * (1.0 - s[0]), 0.0)],
            ],
        }
    }

    pub fn maximally_mixed() -> Self {
        Self::from_stokes([0.0; 3])
    }

    /// Bloch vector of the normalized matrix.
    pub fn stokes(&self) -> [f64; 3] {
        let t = self.trace();
        [
            (self.m[0][0].re - self.m[1][1].re) / t,
            2.0 * self.m[0][1].re / t,
            -2.0 * self.m[0][1].im / t,
        ]
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0].re + self.m[1][1].re
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.m[0][0].im.abs() <= tol
            && self.m[1][1].im.abs() <= tol
            && (self.m[0][1] - self.m[1][0].conj()).norm() <= tol
    }

    /// Eigenvalues `(λ+, λ-)`, unclamped.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let a = self.m[0][0].re;
        let d = self.m[1][1].re;
        let half_gap = (0.25 * (a - d).powi(2) + self.m[0][1].norm_sqr()).sqrt();
        let mid = 0.5 * (a + d);
        (mid + half_gap, mid - half_gap)
    }

    /// Hermitian, unit trace within 1e-12 and eigenvalues >= -1e-10.
    pub fn is_physical(&self) -> bool {
        self.is_hermitian(1e-12) && (self.trace() - 1.0).abs() <= 1e-12 && self.eigenvalues().1 >= -1e-10
    }

    /// Probability of passing projection `s`.
    pub fn probability(&self, s: Setting) -> f64 {
        let (axis, sign) = s.axis();
        0.5 * (1.0 + sign * self.stokes()[axis])
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Uhlmann fidelity `(tr sqrt(sqrt(ρ) σ sqrt(ρ)))^2`; for qubits this is
/// `(1 + a·b + sqrt((1 - |a|^2)(1 - |b|^2))) / 2` in Bloch vectors.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let (a, b) = (rho.stokes(), sigma.stokes());
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let mixed = ((1.0 - norm3(a).powi(2)).max(0.0) * (1.0 - norm3(b).powi(2)).max(0.0)).sqrt();
    (0.5 * (1.0 + dot + mixed)).clamp(0.0, 1.0)
}

/// `½ ||ρ - σ||_1`, half the Bloch-vector distance.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> f64 {
    let (a, b) = (rho.stokes(), sigma.stokes());
    0.5 * norm3([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearInversion {
    pub rho: DensityMatrix,
    pub stokes: [f64; 3],
    /// Binomial standard error of each Stokes component.
    pub stokes_err: [f64; 3],
    pub physical: bool,
}

impl LinearInversion {
    /// Propagated standard error of `||Δρ||_1 = |Δs|`.
    pub fn trace_norm_err(&self) -> f64 {
        norm3(self.stokes_err)
    }
}

/// Stokes parameters from rates (counts per second) of each basis pair.
pub fn linear_inversion(c: &ProjectionCounts) -> Result<LinearInversion, TomographyError> {
    c.validate()?;
    let all = c.as_array();
    let mut stokes = [0.0; 3];
    let mut stokes_err = [0.0; 3];
    for k in 0..3 {
        let (p, q) = (all[2 * k], all[2 * k + 1]);
        let (rp, rq) = (p.counts / p.seconds, q.counts / q.seconds);
        let s = (rp - rq) / (rp + rq);
        stokes[k] = s;
        stokes_err[k] = ((1.0 - s * s).max(0.0) / (p.counts + q.counts)).sqrt();
    }
    let rho = DensityMatrix::from_stokes(stokes);
    Ok(LinearInversion {
        rho,
        stokes,
        stokes_err,
        physical: norm3(stokes) <= 1.0 + 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub rho: DensityMatrix,
    /// Fitted rate of the unprojected beam, counts/s.
    pub intensity: f64,
    /// Poisson deviance at the optimum.
    pub deviance: f64,
    pub iterations: usize,
}

/// `T = [[t0, 0], [t2 + i t3, t1]]`, `M = T†T`.
fn cholesky_product(t: &[f64]) -> [[Complex64; 2]; 2] {
    let c = Complex64::new(t[2], t[3]);
    [
        [Complex64::new(t[0] * t[0] + c.norm_sqr(), 0.0), c.conj() * t[1]],
        [c * t[1], Complex64::new(t[1] * t[1], 0.0)],
    ]
}

/// Maximum-likelihood state under Poisson statistics: `ρ = T†T / tr(T†T)`
/// with `T` lower triangular, whose scale carries the beam intensity.
pub fn mle_reconstruct(c: &ProjectionCounts) -> Result<MleResult, TomographyError> {
    let lin = linear_inversion(c)?;
    let all = c.as_array();
    let pair_rate: f64 = (0..3)
        .map(|k| (all[2 * k].counts + all[2 * k + 1].counts) / (all[2 * k].seconds + all[2 * k + 1].seconds))
        .sum::<f64>()
        * 2.0
        / 3.0;
    // start from the inversion pulled just inside the Bloch ball
    let s = lin.stokes;
    let len = norm3(s);
    let shrink = if len > 0.999 { 0.999 / len } else { 1.0 };
    let start = DensityMatrix::from_stokes(s.map(|v| v * shrink));
    let m11 = start.m[1][1].re * pair_rate;
    let t1 = m11.sqrt();
    let cpl = start.m[1][0] * pair_rate / t1;
    let t0 = (start.m[0][0].re * pair_rate - cpl.norm_sqr()).max(0.0).sqrt();
    let init = [t0, t1, cpl.re, cpl.im];

    let residual = |t: &[f64], r: &mut [f64]| {
        let m = cholesky_product(t);
        let rho = DensityMatrix { m };
        let total = rho.trace();
        for (k, s) in Setting::ALL.iter().enumerate() {
            let mu = all[k].seconds * total * rho.probability(*s);
            r[k] = poisson_deviance_residual(all[k].counts, mu);
        }
    };
    let cfg = FitConfig {
        max_iterations: 500,
        ..FitConfig::default()
    };
    let best = minimize_point(residual, 6, &init, |_| {}, &cfg).map_err(|e| match e {
        FitError::NonFinite => TomographyError::NoConvergence("likelihood became non-finite".into()),
        e => TomographyError::NoConvergence(e.to_string()),
    })?;
    let m = cholesky_product(&best.values);
    let intensity = m[0][0].re + m[1][1].re;
    if !(intensity > 0.0 && intensity.is_finite()) {
        return Err(TomographyError::NoConvergence("fitted intensity collapsed".into()));
    }
    let mut rho = DensityMatrix {
        m: m.map(|row| row.map(|z| z / intensity)),
    };
    // exact Hermiticity and unit trace after rounding
    let off = 0.5 * (rho.m[0][1] + rho.m[1][0].conj());
    rho.m[0][1] = off;
    rho.m[1][0] = off.conj();
    let d = rho.m[0][0].re;
    rho.m[0][0] = Complex64::new(d, 0.0);
    rho.m[1][1] = Complex64::new(1.0 - d, 0.0);
    Ok(MleResult {
        rho,
        intensity,
        deviance: best.chi2,
        iterations: best.iterations,
    })
}

/// Signed square root of the Poisson deviance contribution.
fn poisson_deviance_residual(n: f64, mu: f64) -> f64 {
    let mu = mu.max(1e-300);
    let d = if n > 0.0 { n * (n / mu).ln() - (n - mu) } else { mu };
    (n - mu).signum() * (2.0 * d.max(0.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationReport {
    /// `(λ+, λ-)`, clamped into `[0, 1]` and renormalized to sum to 1.
    pub eigenvalues: (f64, f64),
    pub degree_of_polarization: f64,
    /// Unit Bloch vector of the dominant eigenstate; `None` when fully mixed.
    pub dominant_stokes: Option<[f64; 3]>,
    /// Fraction of photons outside the dominant polarization, `λ-`.
    pub filter_loss: f64,
}

pub fn polarization_report(rho: &DensityMatrix) -> PolarizationReport {
    let (hi, lo) = rho.eigenvalues();
    let (hi, lo) = (hi.clamp(0.0, 1.0), lo.clamp(0.0, 1.0));
    let sum = hi + lo;
    let (hi, lo) = if sum > 0.0 { (hi / sum, lo / sum) } else { (0.5, 0.5) };
    let s = rho.stokes();
    let len = norm3(s);
    PolarizationReport {
        eigenvalues: (hi, lo),
        degree_of_polarization: hi - lo,
        dominant_stokes: (len > 1e-12).then(|| s.map(|v| v / len)),
        filter_loss: lo,
    }
}

/// Counts for `total_events` split evenly across the three basis pairs,
/// each setting measured for `seconds`. Poisson-sampled when `seed` is set,
/// otherwise the expectations.
pub fn synthesize_counts(rho: &DensityMatrix, total_events: f64, seconds: f64, seed: Option<u64>) -> ProjectionCounts {
    let mut rng = seed.map(ChaCha8Rng::seed_from_u64);
    let counts = Setting::ALL.map(|s| {
        let mu = total_events / 3.0 * rho.probability(s);
        match rng.as_mut() {
            Some(r) if mu > 0.0 => Poisson::new(mu).map_or(0.0, |p| p.sample(r)),
            _ => mu,
        }
    });
    ProjectionCounts::uniform(counts, seconds)
}
