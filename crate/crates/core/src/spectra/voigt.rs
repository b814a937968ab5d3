//! Voigt line shape through the Faddeeva function `w(z)`, evaluated with
//! Humlíček's four-region rational approximation (relative error below
//! 1e-4 for `Im z >= 0`).

use num_complex::Complex64;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// `w(z) = exp(-z^2) erfc(-i z)` for `Im z >= 0`.
pub fn faddeeva(z: Complex64) -> Complex64 {
    let (x, y) = (z.re, z.im);
    let t = Complex64::new(y, -x);
    let s = x.abs() + y;
    if s >= 15.0 {
        t * 0.564_189_6 / (t * t + 0.5)
    } else if s >= 5.5 {
        let u = t * t;
        t * (u * 0.564_189_6 + 1.410_474) / (u * (u + 3.0) + 0.75)
    } else if y >= 0.195 * x.abs() - 0.176 {
        (((((t * 0.564_223_6 + 3.778_987) * t + 11.964_82) * t + 20.209_33) * t) + 16.4955)
            / (((((t + 6.699_398) * t + 21.692_74) * t + 39.271_21) * t + 38.823_63) * t
                + 16.4955)
    } else {
        let u = t * t;
        let num = t
            * (36183.31
                - u * (3321.9905
                    - u * (1540.787 - u * (219.0313 - u * (35.766_83 - u * (1.320_522 - u * 0.56419))))));
        let den = 32066.6
            - u * (24322.84
                - u * (9022.228
                    - u * (2186.181 - u * (364.2191 - u * (61.570_37 - u * (1.841_439 - u))))));
        u.exp() - num / den
    }
}

/// Area-normalized Voigt profile: Gaussian of standard deviation `sigma`
/// convolved with a Lorentzian of half width `gamma`.
pub fn voigt(x: f64, sigma: f64, gamma: f64) -> f64 {
    if sigma <= 1e-12 * gamma {
        return gamma / (std::f64::consts::PI * (x * x + gamma * gamma));
    }
    let z = Complex64::new(x, gamma) / (sigma * SQRT_2);
    faddeeva(z).re / (sigma * SQRT_2PI)
}

/// Voigt profile scaled to 1 at `x = 0`.
pub fn voigt_peak_normalized(x: f64, sigma: f64, gamma: f64) -> f64 {
    if sigma <= 1e-12 * gamma {
        return 1.0 / (1.0 + (x / gamma).powi(2));
    }
    voigt(x, sigma, gamma) / voigt(0.0, sigma, gamma)
}

pub fn gaussian_fwhm(sigma: f64) -> f64 {
    2.0 * sigma * (2.0 * std::f64::consts::LN_2).sqrt()
}

pub fn lorentzian_fwhm(gamma: f64) -> f64 {
    2.0 * gamma
}

/// Olivero–Longbothum combination of the component widths.
pub fn voigt_fwhm(f_g: f64, f_l: f64) -> f64 {
    0.5346 * f_l + (0.2166 * f_l * f_l + f_g * f_g).sqrt()
}

/// Partial derivatives of [`voigt_fwhm`] with respect to `(f_g, f_l)`.
pub fn voigt_fwhm_gradient(f_g: f64, f_l: f64) -> (f64, f64) {
    let root = (0.2166 * f_l * f_l + f_g * f_g).sqrt();
    if root == 0.0 {
        return (1.0, 1.0);
    }
    (f_g / root, 0.5346 + 0.2166 * f_l / root)
}

/// Lorentzian width that combines with `f_g` to the Voigt width `f_v`.
pub fn lorentzian_fwhm_for(f_v: f64, f_g: f64) -> Option<f64> {
    if !(f_v >= f_g && f_g >= 0.0) {
        return None;
    }
    // f_v - 0.5346 f_l = sqrt(0.2166 f_l^2 + f_g^2) squared gives a quadratic
    let a = 0.5346f64.powi(2) - 0.2166;
    let b = -2.0 * 0.5346 * f_v;
    let c = f_v * f_v - f_g * f_g;
    let disc = b * b - 4.0 * a * c;
    let root = (-b - disc.max(0.0).sqrt()) / (2.0 * a);
    Some(root.max(0.0))
}

/// Fraction of the area-normalized profile centered at `center` that falls in
/// `[lo, hi]`.
pub fn fraction_in(lo: f64, hi: f64, center: f64, sigma: f64, gamma: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if sigma <= 1e-12 * gamma {
        let f = ((hi - center) / gamma).atan() - ((lo - center) / gamma).atan();
        return (f / std::f64::consts::PI).clamp(0.0, 1.0);
    }
    if gamma <= 0.0 {
        let s = sigma * SQRT_2;
        let f = 0.5 * (libm::erf((hi - center) / s) - libm::erf((lo - center) / s));
        return f.clamp(0.0, 1.0);
    }
    let scale = sigma.min(gamma).max(1e-9);
    let panels = ((hi - lo) / (0.25 * scale)).ceil().clamp(64.0, 200_000.0) as usize;
    let h = (hi - lo) / panels as f64;
    let mut sum = 0.0;
    for i in 0..panels {
        let mid = lo + (i as f64 + 0.5) * h - center;
        for (x, w) in GL5 {
            sum += w * (voigt(mid - 0.5 * h * x, sigma, gamma) + voigt(mid + 0.5 * h * x, sigma, gamma));
        }
    }
    (0.5 * h * sum).clamp(0.0, 1.0)
}

const GL5: [(f64, f64); 3] = [
    (0.0, 0.284_444_444_444_444_4),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

#[cfg(test)]
mod tests {
    use super::*;

    /// Voigt by direct quadrature of the convolution integral.
    fn voigt_quadrature(x: f64, sigma: f64, gamma: f64) -> f64 {
        let n = 200_000;
        let span = 12.0 * sigma;
        let h = 2.0 * span / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            let s = -span + (i as f64 + 0.5) * h;
            let g = (-0.5 * (s / sigma).powi(2)).exp() / (sigma * SQRT_2PI);
            let l = gamma / (std::f64::consts::PI * ((x - s).powi(2) + gamma * gamma));
            sum += g * l * h;
        }
        sum
    }

    #[test]
    fn matches_convolution_quadrature() {
        for &(sigma, gamma) in &[(1.0, 0.1), (1.0, 1.0), (2.5, 3.0), (0.5, 5.0), (1.0, 0.01)] {
            for &x in &[0.0, 0.3, 1.0, 2.5, 4.0, 7.0] {
                let want = voigt_quadrature(x, sigma, gamma);
                let got = voigt(x, sigma, gamma);
                assert!(
                    ((got - want) / want).abs() < 1e-4,
                    "x={x} sigma={sigma} gamma={gamma}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn gaussian_and_lorentzian_limits() {
        let g = voigt(0.7, 1.3, 0.0);
        let exact = (-0.5 * (0.7f64 / 1.3).powi(2)).exp() / (1.3 * SQRT_2PI);
        assert!(((g - exact) / exact).abs() < 1e-4);
        let l = voigt(0.7, 0.0, 0.4);
        let exact = 0.4 / (std::f64::consts::PI * (0.49 + 0.16));
        assert!((l - exact).abs() < 1e-15);
    }

    #[test]
    fn fwhm_limits() {
        assert_eq!(voigt_fwhm(3.0, 0.0), 3.0);
        assert!((voigt_fwhm(0.0, 3.0) / 3.0 - 1.0).abs() < 2e-4);
        let f_l = lorentzian_fwhm_for(9.8, 6.0).unwrap();
        assert!((voigt_fwhm(6.0, f_l) - 9.8).abs() < 1e-12);
    }

    #[test]
    fn band_fraction_limits() {
        assert!((fraction_in(-1e4, 1e4, 0.0, 1.0, 0.5) - 1.0).abs() < 1e-3);
        let gauss = fraction_in(-1.0, 1.0, 0.0, 1.0, 0.0);
        assert!((gauss - 0.682_689_492_137_086).abs() < 1e-9);
        let lor = fraction_in(-1.0, 1.0, 0.0, 0.0, 1.0);
        assert!((lor - 0.5).abs() < 1e-12);
        // mixed profile against a brute force sum
        let (lo, hi, c, s, g) = (1284.5, 1297.5, 1292.0, 2.5, 3.0);
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let brute: f64 = (0..n).map(|i| voigt(lo + (i as f64 + 0.5) * h - c, s, g) * h).sum();
        assert!((fraction_in(lo, hi, c, s, g) - brute).abs() < 1e-8);
    }
}
