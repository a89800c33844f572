use std::f64::consts::{PI, TAU};

use fsqkd::channel::{
    centred_transmissivity, effective_params, elliptic_beam_transmissivity, moments,
    sample_ensemble, BeamSample, ChannelEnsemble, ExcessNoise, TurbulenceParams,
};
use proptest::prelude::*;

/// Fraction of an elliptic Gaussian beam inside a circular aperture of
/// radius `a`, by a polar midpoint rule. The beam centre sits at `(r0, 0)`
/// and its `w1` axis makes angle `phi` with the x axis.
fn aperture_integral(w1: f64, w2: f64, phi: f64, r0: f64, a: f64) -> f64 {
    let (nr, nt) = (600, 600);
    let (dr, dt) = (a / nr as f64, TAU / nt as f64);
    let (c, s) = (phi.cos(), phi.sin());
    let mut sum = 0.0;
    for i in 0..nr {
        let r = (i as f64 + 0.5) * dr;
        for j in 0..nt {
            let th = (j as f64 + 0.5) * dt;
            let (x, y) = (r * th.cos() - r0, r * th.sin());
            let (u, v) = (c * x + s * y, -s * x + c * y);
            sum += r * (-2.0 * u * u / (w1 * w1) - 2.0 * v * v / (w2 * w2)).exp();
        }
    }
    sum * dr * dt * 2.0 / (PI * w1 * w2)
}

fn beam(theta1: f64, theta2: f64, phi: f64, r0: f64) -> BeamSample {
    BeamSample {
        x0: r0,
        y0: 0.0,
        theta1,
        theta2,
        phi,
    }
}

#[test]
fn centred_circular_beam_is_exact() {
    let a: f64 = 0.04;
    for w in [0.01f64, 0.02, 0.04, 0.08, 0.2] {
        let exact = 1.0 - (-2.0 * a * a / (w * w)).exp();
        assert!((centred_transmissivity(w, w, a) - exact).abs() < 1e-14);
        assert!((aperture_integral(w, w, 0.0, 0.0, a) - exact).abs() < 1e-5);
    }
}

#[test]
fn centred_elliptic_beam_matches_integration() {
    // The closed form is itself an approximation whose error grows with
    // ellipticity: ~1e-4 at aspect ratio 1.5, a few 1e-3 at 3.
    let a = 0.04;
    for (w1, w2, tol) in [
        (0.036, 0.027, 3e-4),
        (0.03, 0.02, 3e-4),
        (0.05, 0.03, 3e-4),
        (0.08, 0.05, 3e-4),
        (0.1, 0.03, 1e-2),
        (0.06, 0.02, 1e-2),
    ] {
        let got = centred_transmissivity(w1, w2, a);
        let oracle = aperture_integral(w1, w2, 0.0, 0.0, a);
        assert!(
            (got - oracle).abs() < tol,
            "W=({w1},{w2}): {got} vs {oracle}"
        );
    }
}

#[test]
fn wandering_beam_within_model_accuracy() {
    // The wandering-beam formula is an approximation; its documented
    // accuracy is at the percent level.
    let p = TurbulenceParams::reference(2000.0);
    for (t1, t2, phi, r0) in [
        (1.5, 1.0, 0.3, 0.01),
        (1.5, 1.0, 1.2, 0.03),
        (2.0, 2.0, 0.0, 0.02),
        (1.0, 0.5, 0.7, 0.05),
        (2.5, 2.2, 0.1, 0.04),
    ] {
        let s = beam(t1, t2, phi, r0);
        let (w1, w2) = s.semi_axes(p.beam_waist);
        let got = elliptic_beam_transmissivity(&s, &p);
        let oracle = aperture_integral(w1, w2, phi, r0, p.aperture_radius);
        assert!((got - oracle).abs() < 0.02, "{s:?}: {got} vs {oracle}");
    }
}

proptest! {
    #[test]
    fn transmissivity_is_a_probability_and_falls_with_offset(
        t1 in -1.0f64..3.0, t2 in -1.0f64..3.0, phi in 0.0f64..1.57, r0 in 0.0f64..0.1,
    ) {
        let p = TurbulenceParams::reference(3000.0);
        let near = elliptic_beam_transmissivity(&beam(t1, t2, phi, r0), &p);
        let far = elliptic_beam_transmissivity(&beam(t1, t2, phi, r0 + 0.01), &p);
        prop_assert!((0.0..=1.0).contains(&near));
        prop_assert!(far <= near + 1e-12);
    }
}

#[test]
fn caption_moments_reproduced() {
    let expected = [
        (1500.0, 0.54, 0.73, 0.003, 0.68),
        (2000.0, 0.32, 0.56, 0.005, 0.46),
        (3000.0, 0.12, 0.34, 0.003, 0.20),
        (3500.0, 0.08, 0.27, 0.002, 0.13),
    ];
    for (l, mean, sqrt, var, max) in expected {
        let e = sample_ensemble(
            &TurbulenceParams::reference(l),
            10_000,
            1,
            ExcessNoise::default(),
        )
        .unwrap();
        let m = moments(&e, 0.0, 1.0).unwrap();
        let close = |got: f64, want: f64| (got - want).abs() <= 0.15 * want;
        assert!(close(m.mean_eta, mean), "L={l}: <eta> {}", m.mean_eta);
        assert!(
            close(m.mean_sqrt, sqrt),
            "L={l}: <sqrt eta> {}",
            m.mean_sqrt
        );
        assert!(
            close(m.var_sqrt, var) || (m.var_sqrt - var).abs() <= 0.001,
            "L={l}: Var {}",
            m.var_sqrt
        );
        assert!(close(m.eta_max, max), "L={l}: eta_max {}", m.eta_max);
    }
}

#[test]
fn persisted_ensemble_gives_identical_moments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.txt");
    let e = sample_ensemble(
        &TurbulenceParams::reference(3000.0),
        5_000,
        9,
        ExcessNoise::Affine {
            intercept: 0.01,
            slope: 0.02,
        },
    )
    .unwrap();
    e.save(&path).unwrap();
    let back = ChannelEnsemble::load(&path).unwrap();
    assert_eq!(back.seed(), Some(9));
    assert_eq!(back.noise(), e.noise());
    let (a, b) = (
        moments(&e, 0.0, 1.0).unwrap(),
        moments(&back, 0.0, 1.0).unwrap(),
    );
    for (x, y) in [
        (a.mean_eta, b.mean_eta),
        (a.mean_sqrt, b.mean_sqrt),
        (a.var_sqrt, b.var_sqrt),
        (a.xi_weighted, b.xi_weighted),
        (a.eta_max, b.eta_max),
    ] {
        assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
    }
}

proptest! {
    #[test]
    fn constant_channel_is_reproduced_exactly(eta in 0.001f64..1.0, xi in 0.0f64..0.5, n in 1usize..200, v in 1.0f64..60.0) {
        let e = ChannelEnsemble::constant(eta, n, ExcessNoise::Constant { xi }).unwrap();
        let f = effective_params(&moments(&e, 0.0, 1.0).unwrap(), v).unwrap();
        prop_assert_eq!(f.eta_f, eta);
        prop_assert_eq!(f.xi_f, xi);
    }

    #[test]
    fn fading_only_adds_noise(seed in 0u64..50, v in 1.5f64..20.0) {
        // xi_f >= weighted xi, equality only without fading
        let e = sample_ensemble(&TurbulenceParams::reference(2500.0), 500, seed, ExcessNoise::default()).unwrap();
        let m = moments(&e, 0.0, 1.0).unwrap();
        let f = effective_params(&m, v).unwrap();
        prop_assert!(f.xi_f >= 0.01 * m.mean_eta / f.eta_f - 1e-15);
        prop_assert!(f.eta_f <= m.mean_eta);
    }
}
