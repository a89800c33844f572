//! Elliptic-beam model of a weakly turbulent free-space link.
//!
//! A Gaussian beam reaches the receiver deformed into a randomly oriented
//! ellipse with semi-axes `W_j^2 = W0^2 exp(Theta_j)` and a centroid displaced
//! by `(x0, y0)` from the aperture centre. The aperture transmissivity of
//! that ellipse is evaluated in closed form with the scale and shape
//! functions `R(zeta)`, `lambda(zeta)` of the model.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::special::{bessel_i0e, bessel_i1e, lambert_w0_exp, one_minus_scaled_i0};

/// Below this value of `a |1/W1 - 1/W2|` the beam is treated as circular and
/// the eccentricity correction to `eta0` is dropped.
const CIRCULAR_LIMIT: f64 = 1e-6;

/// Optical and atmospheric parameters of the link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceParams {
    /// Wavelength (m).
    pub wavelength: f64,
    /// Initial beam-spot radius `W0` (m).
    pub beam_waist: f64,
    /// Receiver aperture radius `a` (m).
    pub aperture_radius: f64,
    /// Refractive-index structure constant `Cn^2` (m^-2/3).
    pub cn2: f64,
    /// Propagation distance `L` (m).
    pub distance: f64,
    /// Deterministic extinction loss (dB).
    pub attenuation_db: f64,
}

impl TurbulenceParams {
    /// Optics of the reference free-space experiment: 809 nm, 20 mm waist,
    /// 40 mm aperture, `Cn^2 = 1.5e-14`, 1.25 dB extinction.
    pub fn reference(distance: f64) -> Self {
        Self {
            wavelength: 809e-9,
            beam_waist: 20e-3,
            aperture_radius: 40e-3,
            cn2: 1.5e-14,
            distance,
            attenuation_db: 1.25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wavelength", self.wavelength),
            ("beam_waist", self.beam_waist),
            ("aperture_radius", self.aperture_radius),
            ("cn2", self.cn2),
            ("distance", self.distance),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.attenuation_db >= 0.0) || !self.attenuation_db.is_finite() {
            return Err(domain(format!(
                "attenuation_db must be non-negative, got {}",
                self.attenuation_db
            )));
        }
        Ok(())
    }

    pub fn wave_number(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Rytov variance `1.23 Cn^2 k^{7/6} L^{11/6}`.
    pub fn rytov_variance(&self) -> f64 {
        1.23 * self.cn2 * self.wave_number().powf(7.0 / 6.0) * self.distance.powf(11.0 / 6.0)
    }

    /// Fresnel parameter `k W0^2 / (2L)`.
    pub fn fresnel_parameter(&self) -> f64 {
        self.wave_number() * self.beam_waist * self.beam_waist / (2.0 * self.distance)
    }

    /// Deterministic transmissivity `10^(-dB/10)`.
    pub fn extinction(&self) -> f64 {
        10f64.powf(-self.attenuation_db / 10.0)
    }
}

/// Mean and covariance of `(x0, y0, Theta1, Theta2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TurbulenceStatistics {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
}

/// Weak-turbulence moments of the beam parameters.
pub fn turbulence_statistics(p: &TurbulenceParams) -> Result<TurbulenceStatistics> {
    p.validate()?;
    let sr2 = p.rytov_variance();
    let omega = p.fresnel_parameter();
    let w0sq = p.beam_waist * p.beam_waist;

    let s = sr2 * omega.powf(5.0 / 6.0);
    let q = 1.0 + 2.96 * s;
    // beam-wander variance, Omega^{-7/6} scaling
    let wander = 0.33 * w0sq * sr2 * omega.powf(-7.0 / 6.0);
    let var_theta = (1.2 * s / (q * q)).ln_1p();
    let cov_theta = (-0.8 * s / (q * q)).ln_1p();
    let mean_theta = (q * q / (omega * omega * (q * q + 1.2 * s).sqrt())).ln();

    let mean = Vector4::new(0.0, 0.0, mean_theta, mean_theta);
    #[rustfmt::skip]
    let covariance = Matrix4::new(
        wander, 0.0,    0.0,       0.0,
        0.0,    wander, 0.0,       0.0,
        0.0,    0.0,    var_theta, cov_theta,
        0.0,    0.0,    cov_theta, var_theta,
    );
    Ok(TurbulenceStatistics { mean, covariance })
}

/// One realization of the deformed beam at the receiver plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamSample {
    pub x0: f64,
    pub y0: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Angle between the `W1` semi-axis and the centroid direction, in [0, pi/2).
    pub phi: f64,
}

impl BeamSample {
    pub fn centred_circular() -> Self {
        Self {
            x0: 0.0,
            y0: 0.0,
            theta1: 0.0,
            theta2: 0.0,
            phi: 0.0,
        }
    }

    pub fn semi_axes(&self, w0: f64) -> (f64, f64) {
        (
            w0 * (0.5 * self.theta1).exp(),
            w0 * (0.5 * self.theta2).exp(),
        )
    }

    pub fn offset(&self) -> f64 {
        self.x0.hypot(self.y0)
    }
}

/// `ln[2 (1 - e^{-x/2}) / (1 - e^{-x} I0(x))]` and `lambda` at `x = a^2 zeta^2`.
///
/// The scale function is `R = L^{-1/lambda}`, so `(r/R)^lambda = L r^lambda`;
/// callers use that form and never build `R` itself.
fn shape(x: f64) -> (f64, f64) {
    let d = one_minus_scaled_i0(x);
    let two_a = -2.0 * (-0.5 * x).exp_m1();
    let log_term = ((two_a - d) / d).ln_1p();
    let lambda = 2.0 * x * bessel_i1e(x) / d / log_term;
    (log_term, lambda)
}

/// `exp{-[(r / R(zeta))]^{lambda(zeta)}}` with `x = a^2 zeta^2`.
fn scale_exp(r: f64, x: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let (log_term, lambda) = shape(x);
    (-log_term * r.powf(lambda)).exp()
}

/// Transmissivity of a centred elliptic beam through a circular aperture.
pub fn centred_transmissivity(w1: f64, w2: f64, a: f64) -> f64 {
    let a2 = a * a;
    let (i1, i2) = (1.0 / (w1 * w1), 1.0 / (w2 * w2));
    let u = a2 * (i1 - i2).abs();
    let s = a2 * (i1 + i2);
    let mut eta0 = 1.0 - bessel_i0e(u) * (u - s).exp();

    let zeta = (1.0 / w1 - 1.0 / w2).abs();
    if zeta * a >= CIRCULAR_LIMIT {
        let x = a2 * zeta * zeta;
        let pre = -2.0 * (-0.5 * x).exp_m1();
        let ratio = (w1 + w2) / (w1 - w2).abs();
        eta0 -= pre * scale_exp(ratio, x);
    }
    eta0.clamp(0.0, 1.0)
}

/// Aperture transmissivity `eta_a` of one beam realization (excludes the
/// deterministic extinction).
pub fn elliptic_beam_transmissivity(s: &BeamSample, p: &TurbulenceParams) -> f64 {
    let a = p.aperture_radius;
    let (w1, w2) = s.semi_axes(p.beam_waist);
    let eta0 = centred_transmissivity(w1, w2, a);
    let r0 = s.offset();
    if r0 == 0.0 {
        return eta0;
    }

    let a2 = a * a;
    let (c2, s2) = (s.phi.cos().powi(2), s.phi.sin().powi(2));
    let log_arg = (4.0 * a2 / (w1 * w2)).ln()
        + a2 / (w1 * w1) * (1.0 + 2.0 * c2)
        + a2 / (w2 * w2) * (1.0 + 2.0 * s2);
    // a^2 (2 / W_eff)^2 = 4a^2 / W_eff^2 is the Lambert W value itself
    let x = lambert_w0_exp(log_arg);
    (eta0 * scale_exp(r0 / a, x)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig3(distance: f64) -> TurbulenceParams {
        TurbulenceParams::reference(distance)
    }

    #[test]
    fn scalar_turbulence_parameters() {
        // k = 2 pi / 809e-9; sigma_R^2 and Omega recomputed independently
        let p = fig3(1000.0);
        let k = 2.0 * PI / 809e-9;
        let sr2 = 1.23 * 1.5e-14 * (7.0 / 6.0 * k.ln()).exp() * (11.0 / 6.0 * 1000f64.ln()).exp();
        assert_relative_eq!(p.rytov_variance(), sr2, max_relative = 1e-13);
        assert_relative_eq!(
            p.rytov_variance(),
            0.637_675_319_394_356,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            p.fresnel_parameter(),
            1.553_321_460_365_782,
            max_relative = 1e-12
        );
        assert_relative_eq!(p.extinction(), 0.749_894_209_332_456, max_relative = 1e-12);
    }

    #[test]
    fn statistics_structure() {
        let st = turbulence_statistics(&fig3(2000.0)).unwrap();
        assert_eq!(st.mean[0], 0.0);
        assert_eq!(st.mean[1], 0.0);
        assert_eq!(st.mean[2], st.mean[3]);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(st.covariance[(i, j)], 0.0);
                assert_eq!(st.covariance[(j, i)], 0.0);
            }
        }
        assert!(st.covariance.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn vanishing_turbulence_limit() {
        let mut p = fig3(1500.0);
        p.cn2 = 1e-40;
        let st = turbulence_statistics(&p).unwrap();
        assert!(st.covariance[(0, 0)] < 1e-20);
        assert!(st.covariance[(2, 3)].abs() < 1e-15);
        let omega = p.fresnel_parameter();
        assert_relative_eq!(
            st.mean[2],
            (1.0 / (omega * omega)).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_nonpositive_parameters() {
        let mut p = fig3(1000.0);
        p.cn2 = 0.0;
        assert!(turbulence_statistics(&p).is_err());
        let mut p = fig3(1000.0);
        p.beam_waist = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn centred_circular_beam_matches_closed_form() {
        let p = fig3(1000.0);
        let s = BeamSample::centred_circular();
        let eta = elliptic_beam_transmissivity(&s, &p);
        let expect = 1.0 - (-2.0 * (p.aperture_radius / p.beam_waist).powi(2)).exp();
        assert_relative_eq!(eta, expect, max_relative = 1e-14);
    }

    #[test]
    fn circular_limit_is_continuous() {
        let a = 0.04;
        let w = 0.05;
        let exact = centred_transmissivity(w, w, a);
        for eps in [1e-3, 1e-5, 1e-7, 1e-9] {
            let near = centred_transmissivity(w, w * (1.0 + eps), a);
            assert!(
                (near - exact).abs() < 10.0 * eps,
                "eps={eps}: {near} vs {exact}"
            );
            assert!(near.is_finite());
        }
    }

    #[test]
    fn zero_offset_returns_eta0() {
        let p = fig3(3000.0);
        let s = BeamSample {
            x0: 0.0,
            y0: 0.0,
            theta1: 2.9,
            theta2: 3.4,
            phi: 0.7,
        };
        let (w1, w2) = s.semi_axes(p.beam_waist);
        assert_eq!(
            elliptic_beam_transmissivity(&s, &p),
            centred_transmissivity(w1, w2, p.aperture_radius)
        );
    }

    #[test]
    fn huge_aperture_captures_everything() {
        let mut p = fig3(1000.0);
        p.aperture_radius = 5.0;
        let s = BeamSample {
            x0: 0.01,
            y0: -0.02,
            theta1: 1.0,
            theta2: 1.5,
            phi: 0.3,
        };
        assert_relative_eq!(elliptic_beam_transmissivity(&s, &p), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decreasing_in_offset() {
        let p = fig3(3500.0);
        let mut last = f64::INFINITY;
        for k in 0..60 {
            let r = k as f64 * 0.005;
            let s = BeamSample {
                x0: r,
                y0: 0.0,
                theta1: 3.8,
                theta2: 4.1,
                phi: 1.1,
            };
            let eta = elliptic_beam_transmissivity(&s, &p);
            assert!((0.0..=1.0).contains(&eta));
            assert!(eta <= last + 1e-15, "r={r}");
            last = eta;
        }
    }
}
