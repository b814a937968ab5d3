//! Closed-form solution of the ground / excited / metastable rate equations.
//!
//! With `p = (p_g, p_e, p_m)` and rates `k_pump` (g->e), `k_rad` (e->g),
//! `k_isc` (e->m), `k_meta` (m->g), `dp/dt = M p` has eigenvalues `0` and the
//! roots of `x^2 + B x + C`, where
//! `B = k_pump + k_rad + k_isc + k_meta` and
//! `C = k_pump k_isc + k_pump k_meta + k_rad k_meta + k_isc k_meta`.
//! Starting from the ground state (an emission just happened), the
//! normalized excited population is `g2(tau) = p_e(tau) / p_e(inf)`.

use serde::{Deserialize, Serialize};

use super::{SimError, ThreeLevelParams};

/// Eigen-decomposed `g2(tau) = 1 - beta1 exp(-tau/tau1) + beta2 exp(-tau/tau2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticG2 {
    pub beta1: f64,
    pub beta2: f64,
    /// Antibunching time in seconds (fast mode).
    pub tau1_s: f64,
    /// Bunching time in seconds (slow mode).
    pub tau2_s: f64,
    /// Set when the two nonzero eigenvalues coincide; `g2` then uses the
    /// confluent form `1 - (1 - slope * tau) exp(-tau / tau1)`.
    pub degenerate: bool,
    confluent_slope: f64,
    /// Steady-state populations `(p_g, p_e, p_m)`.
    pub steady_state: [f64; 3],
}

impl AnalyticG2 {
    /// Evaluates the normalized correlation at delay `tau_s` (seconds, |tau| used).
    pub fn g2(&self, tau_s: f64) -> f64 {
        let t = tau_s.abs();
        if self.degenerate {
            return 1.0 - (1.0 - self.confluent_slope * t) * (-t / self.tau1_s).exp();
        }
        1.0 - self.beta1 * (-t / self.tau1_s).exp() + self.beta2 * (-t / self.tau2_s).exp()
    }

    /// `g2(0) = 1 - beta1 + beta2`.
    pub fn g2_zero(&self) -> f64 {
        self.g2(0.0)
    }
}

/// Steady-state populations `(p_g, p_e, p_m)` of the rate matrix.
pub fn steady_state(p: &ThreeLevelParams) -> [f64; 3] {
    let ThreeLevelParams {
        k_pump: kp,
        k_rad: kr,
        k_isc: ki,
        k_meta: km,
    } = *p;
    if ki == 0.0 {
        let d = kp + kr;
        return [kr / d, kp / d, 0.0];
    }
    let d = kp * km + (kr + ki) * km + kp * ki;
    if d == 0.0 {
        // pumped into a metastable state that never relaxes
        return [0.0, 0.0, 1.0];
    }
    [(kr + ki) * km / d, kp * km / d, kp * ki / d]
}

/// Solves the rate equations for the antibunching/bunching decomposition.
pub fn analytic_g2_from_rates(p: &ThreeLevelParams) -> Result<AnalyticG2, SimError> {
    p.validate()?;
    let ThreeLevelParams {
        k_pump: kp,
        k_rad: kr,
        k_isc: ki,
        k_meta: km,
    } = *p;
    let ss = steady_state(p);
    let pe = ss[1];
    if !(pe > 0.0) {
        return Err(SimError::NoEmission);
    }

    if ki == 0.0 {
        // two-level reduction: the metastable mode carries no amplitude
        return Ok(AnalyticG2 {
            beta1: 1.0,
            beta2: 0.0,
            tau1_s: 1.0 / (kp + kr),
            tau2_s: if km > 0.0 { 1.0 / km } else { f64::INFINITY },
            degenerate: false,
            confluent_slope: 0.0,
            steady_state: ss,
        });
    }

    let b = kp + kr + ki + km;
    let c = kp * ki + kp * km + kr * km + ki * km;
    let disc = b * b - 4.0 * c;
    // initial slope of p_e / p_e(inf): pumping out of a full ground state
    let slope0 = kp / pe;

    if disc <= 1e-12 * b * b {
        let lambda = -b / 2.0;
        return Ok(AnalyticG2 {
            beta1: 1.0,
            beta2: 0.0,
            tau1_s: -1.0 / lambda,
            tau2_s: -1.0 / lambda,
            degenerate: true,
            confluent_slope: slope0 + lambda,
            steady_state: ss,
        });
    }

    let root = disc.sqrt();
    let fast = -(b + root) / 2.0;
    // product of the roots is C; avoids cancellation in the slow root
    let slow = c / fast;
    // p_e(tau)/p_e(inf) = 1 + c1 e^{fast tau} + c2 e^{slow tau}
    // with c1 + c2 = -1 and c1 fast + c2 slow = slope0
    let c1 = (slope0 + slow) / (fast - slow);
    let beta1 = -c1;
    Ok(AnalyticG2 {
        beta1,
        beta2: beta1 - 1.0,
        tau1_s: -1.0 / fast,
        tau2_s: -1.0 / slow,
        degenerate: false,
        confluent_slope: 0.0,
        steady_state: ss,
    })
}

/// `I(P) = i_sat P / (p_sat + P)` in detected counts per second and mW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationLaw {
    pub i_sat: f64,
    pub p_sat: f64,
}

impl SaturationLaw {
    pub fn rate(&self, power_mw: f64) -> f64 {
        self.i_sat * power_mw / (self.p_sat + power_mw)
    }
}

/// Exact saturation parameters implied by the rates when only `k_pump`
/// scales with power (`k_pump = pump_coefficient * P`).
pub fn saturation_law(
    p_base: &ThreeLevelParams,
    pump_coefficient: f64,
    detection_efficiency: f64,
) -> Result<SaturationLaw, SimError> {
    p_base.validate()?;
    check_pump(pump_coefficient, detection_efficiency)?;
    let ThreeLevelParams {
        k_rad: kr,
        k_isc: ki,
        k_meta: km,
        ..
    } = *p_base;
    if ki > 0.0 && km == 0.0 {
        return Err(SimError::NoEmission);
    }
    let shelf = if ki == 0.0 { 1.0 } else { km / (km + ki) };
    Ok(SaturationLaw {
        i_sat: detection_efficiency * kr * shelf,
        p_sat: (kr + ki) * shelf / pump_coefficient,
    })
}

fn check_pump(pump_coefficient: f64, detection_efficiency: f64) -> Result<(), SimError> {
    if !(pump_coefficient > 0.0 && pump_coefficient.is_finite()) {
        return Err(SimError::InvalidConfig(format!(
            "pump coefficient must be positive, got {pump_coefficient}"
        )));
    }
    if !(0.0..=1.0).contains(&detection_efficiency) {
        return Err(SimError::InvalidConfig(format!(
            "detection efficiency must lie in [0, 1], got {detection_efficiency}"
        )));
    }
    Ok(())
}

/// Steady-state detected single-photon rate at each pump power (mW).
pub fn saturation_curve(
    p_base: &ThreeLevelParams,
    powers: &[f64],
    pump_coefficient: f64,
    detection_efficiency: f64,
) -> Result<Vec<(f64, f64)>, SimError> {
    p_base.validate()?;
    check_pump(pump_coefficient, detection_efficiency)?;
    powers
        .iter()
        .map(|&power| {
            if !(power > 0.0 && power.is_finite()) {
                return Err(SimError::InvalidConfig(format!(
                    "pump powers must be positive, got {power}"
                )));
            }
            let p = ThreeLevelParams {
                k_pump: pump_coefficient * power,
                ..*p_base
            };
            Ok((power, detection_efficiency * p.k_rad * steady_state(&p)[1]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kp: f64, kr: f64, ki: f64, km: f64) -> ThreeLevelParams {
        ThreeLevelParams {
            k_pump: kp,
            k_rad: kr,
            k_isc: ki,
            k_meta: km,
        }
    }

    /// Forward-Euler-free reference: integrate dp/dt = M p with RK4.
    fn integrate_pe(p: &ThreeLevelParams, tau: f64, steps: usize) -> f64 {
        let ThreeLevelParams {
            k_pump: kp,
            k_rad: kr,
            k_isc: ki,
            k_meta: km,
        } = *p;
        let f = |s: [f64; 3]| {
            [
                -kp * s[0] + kr * s[1] + km * s[2],
                kp * s[0] - (kr + ki) * s[1],
                ki * s[1] - km * s[2],
            ]
        };
        let h = tau / steps as f64;
        let mut s = [1.0, 0.0, 0.0];
        for _ in 0..steps {
            let add = |a: [f64; 3], b: [f64; 3], w: f64| [a[0] + w * b[0], a[1] + w * b[1], a[2] + w * b[2]];
            let k1 = f(s);
            let k2 = f(add(s, k1, h / 2.0));
            let k3 = f(add(s, k2, h / 2.0));
            let k4 = f(add(s, k3, h));
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        s[1]
    }

    #[test]
    fn matches_numerical_integration() {
        let p = params(8e8, 3.3e9, 2e8, 5e7);
        let a = analytic_g2_from_rates(&p).unwrap();
        let pe = a.steady_state[1];
        for tau in [50e-12, 230e-12, 1e-9, 5e-9, 40e-9] {
            let reference = integrate_pe(&p, tau, 20_000) / pe;
            assert!((a.g2(tau) - reference).abs() < 1e-9, "tau={tau}");
        }
    }

    #[test]
    fn boundary_values() {
        for p in [
            params(8e8, 3.3e9, 2e8, 5e7),
            params(1e7, 1e9, 1e9, 1e6),
            params(5e9, 1e8, 3e7, 2e9),
        ] {
            let a = analytic_g2_from_rates(&p).unwrap();
            assert_eq!(a.g2_zero(), 0.0);
            assert!((a.g2(1.0) - 1.0).abs() < 1e-12);
            assert!(a.beta2 >= 0.0);
            assert!(a.tau1_s <= a.tau2_s);
        }
    }

    #[test]
    fn two_level_limit() {
        let p = params(1e9, 3e9, 0.0, 1e6);
        let a = analytic_g2_from_rates(&p).unwrap();
        assert_eq!(a.beta2, 0.0);
        assert_eq!(a.beta1, 1.0);
        assert!((a.tau1_s - 1.0 / 4e9).abs() < 1e-24);
        let t = 0.3e-9;
        assert!((a.g2(t) - (1.0 - (-t / a.tau1_s).exp())).abs() < 1e-15);
    }

    #[test]
    fn degenerate_rates_use_confluent_form() {
        // choose k_meta so that B^2 = 4C
        let (kp, kr, ki) = (1e9, 1e9, 1e9);
        // B = 3e9 + km, C = 1e18 + 3e9 km; B^2 - 4C = (km - 3e9)^2 + ... solve numerically
        let f = |km: f64| {
            let b: f64 = kp + kr + ki + km;
            b * b - 4.0 * (kp * ki + kp * km + kr * km + ki * km)
        };
        // f(km) = km^2 - 6e9 km + 5e18 ... roots at 1e9 and 5e9
        assert!(f(1e9).abs() < 1e6);
        let p = params(kp, kr, ki, 1e9);
        let a = analytic_g2_from_rates(&p).unwrap();
        assert!(a.degenerate);
        assert!(a.g2_zero().abs() < 1e-15);
        let pe = a.steady_state[1];
        for tau in [0.2e-9, 1e-9, 4e-9] {
            let reference = integrate_pe(&p, tau, 20_000) / pe;
            assert!((a.g2(tau) - reference).abs() < 1e-6, "tau={tau}");
        }
    }

    #[test]
    fn no_emission_is_an_error() {
        assert!(matches!(
            analytic_g2_from_rates(&params(0.0, 1e9, 1e8, 1e6)),
            Err(SimError::NoEmission)
        ));
        assert!(matches!(
            analytic_g2_from_rates(&params(1e9, 1e9, 1e8, 0.0)),
            Err(SimError::NoEmission)
        ));
        assert!(analytic_g2_from_rates(&params(1e9, 0.0, 1e8, 1e6)).is_err());
    }

    #[test]
    fn saturation_law_agrees_with_steady_state() {
        let p = params(0.0, 3e9, 3e8, 1e7);
        let law = saturation_law(&p, 7e8, 1e-4).unwrap();
        let powers = [0.1, 0.5, 1.0, 5.0, 20.0, 1e4];
        let curve = saturation_curve(&p, &powers, 7e8, 1e-4).unwrap();
        for (pw, rate) in curve {
            assert!((law.rate(pw) - rate).abs() < 1e-9 * rate);
        }
        assert!((law.rate(law.p_sat) - law.i_sat / 2.0).abs() < 1e-9 * law.i_sat);
        assert!(saturation_curve(&p, &[0.0], 7e8, 1e-4).is_err());
    }
}
