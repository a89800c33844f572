use fsqkd::estimation::{
    effective_channel_estimate, linear_model, mle_linear, sample_linear_stats, shot_noise_estimate,
    simulate_quadratures, simulate_quadratures_with, simulate_shot_noise, z_quantile, Estimate,
    LinearStats, QuadratureBatch,
};
use fsqkd::gaussian::DetectorModel;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn detector() -> DetectorModel {
    DetectorModel::new(0.6, 0.25).unwrap()
}

/// Slope and residual variance from an SVD least-squares solve of the
/// one-column design `B = t A`.
fn least_squares(batch: &QuadratureBatch) -> (f64, f64) {
    let k = batch.len();
    let a = DMatrix::from_column_slice(k, 1, &batch.a);
    let b = DVector::from_column_slice(&batch.b);
    let t = a.clone().svd(true, true).solve(&b, 1e-14).unwrap()[0];
    let resid = &b - &a * t;
    (t, resid.norm_squared() / k as f64)
}

#[test]
fn mle_matches_least_squares_oracle() {
    let det = detector();
    for i in 0..100u64 {
        let k = 50 + 37 * i as usize;
        let eta = 0.05 + 0.009 * i as f64;
        let batch = simulate_quadratures(
            eta,
            0.02 + 0.001 * i as f64,
            0.5 + 0.2 * i as f64,
            &det,
            k,
            i,
        )
        .unwrap();
        let (t, s2) = mle_linear(&batch, 1e-10).unwrap();
        let (t_ls, s2_ls) = least_squares(&batch);
        assert!(
            (t.value - t_ls).abs() <= 1e-12 * t_ls.abs().max(1.0),
            "batch {i}: {} vs {t_ls}",
            t.value
        );
        assert!(
            (s2.value - s2_ls).abs() <= 1e-12 * s2_ls,
            "batch {i}: {} vs {s2_ls}",
            s2.value
        );
    }
}

/// `z` with `P(|Z| > z) = eps` by bisection on the normal CDF.
fn bisect_quantile(eps: f64) -> f64 {
    let n = Normal::standard();
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if 2.0 * n.sf(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn z_quantile_matches_bisection() {
    for eps in [0.5, 0.05, 1e-3, 1e-6, 1e-10, 1e-15] {
        let z = z_quantile(eps).unwrap();
        assert!((z - bisect_quantile(eps)).abs() < 1e-9, "eps={eps}: {z}");
    }
    assert!((z_quantile(0.05).unwrap() - 1.959_963_984_540_054).abs() < 1e-9);
}

#[test]
fn estimates_round_trip_the_linear_model() {
    let det = detector();
    let (t, s2) = linear_model(0.4, 0.05, &det);
    let stats = LinearStats {
        k: 1e6,
        sum_a2: 3e6,
        t_hat: t,
        sigma2_hat: s2,
    };
    let (te, se) = stats.estimates(1.0);
    let s0 = Estimate::exact(1.0 + det.nu_b);
    let ec = effective_channel_estimate(te, se, s0, Estimate::exact(det.eta_b)).unwrap();
    assert!((ec.eta_f.value - 0.4).abs() < 1e-14);
    assert!((ec.xi_f.value - 0.05).abs() < 1e-12);
}

struct Coverage {
    t: usize,
    sigma2: usize,
    eta_f: usize,
    xi_f: usize,
}

#[test]
fn intervals_cover_truth_at_nominal_rate() {
    let det = detector();
    let (eta, xi, v_a, k) = (0.3, 0.05, 3.0, 10_000usize);
    let (t_true, s2_true) = linear_model(eta, xi, &det);
    let trials = 10_000u64;
    let hits: Vec<[bool; 4]> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(i);
            let batch = simulate_quadratures_with(eta, xi, v_a, &det, k, &mut rng).unwrap();
            let shot = simulate_shot_noise(&det, k, &mut rng);
            let (t, s2) = mle_linear(&batch, 0.05).unwrap();
            let s0 = shot_noise_estimate(&shot, 0.05).unwrap();
            let ec = effective_channel_estimate(t, s2, s0, Estimate::exact(det.eta_b)).unwrap();
            [
                t.covers(t_true),
                s2.covers(s2_true),
                ec.eta_f.covers(eta),
                ec.xi_f.covers(xi),
            ]
        })
        .collect();
    let mut c = Coverage {
        t: 0,
        sigma2: 0,
        eta_f: 0,
        xi_f: 0,
    };
    for h in &hits {
        c.t += h[0] as usize;
        c.sigma2 += h[1] as usize;
        c.eta_f += h[2] as usize;
        c.xi_f += h[3] as usize;
    }
    let need = (0.93 * trials as f64) as usize;
    for (name, n) in [
        ("t", c.t),
        ("sigma2", c.sigma2),
        ("eta_f", c.eta_f),
        ("xi_f", c.xi_f),
    ] {
        assert!(n >= need, "{name}: {n}/{trials}");
    }
}

#[test]
fn sufficient_statistics_match_materialized_data() {
    // Means and spreads of the drawn statistics against full simulations.
    let det = detector();
    let (eta, xi, v_a, k) = (0.5, 0.04, 2.0, 2_000usize);
    let runs = 4_000u64;
    let drawn: Vec<(f64, f64)> = (0..runs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000_000 + i);
            let s = sample_linear_stats(eta, xi, v_a, &det, k as f64, &mut rng).unwrap();
            (s.t_hat, s.sigma2_hat)
        })
        .collect();
    let full: Vec<(f64, f64)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let b = simulate_quadratures(eta, xi, v_a, &det, k, i).unwrap();
            let s = LinearStats::from_batch(&b).unwrap();
            (s.t_hat, s.sigma2_hat)
        })
        .collect();
    let moments = |xs: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| {
        let n = xs.len() as f64;
        let m = xs.iter().map(f).sum::<f64>() / n;
        let v = xs.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    };
    for f in [|x: &(f64, f64)| x.0, |x: &(f64, f64)| x.1] {
        let (m1, v1) = moments(&drawn, f);
        let (m2, v2) = moments(&full, f);
        let se_mean = ((v1 + v2) / runs as f64).sqrt();
        assert!((m1 - m2).abs() < 4.0 * se_mean, "means {m1} vs {m2}");
        // variance ratio within 4 standard errors of 1 (se ~ sqrt(4 / runs))
        assert!(
            (v1 / v2 - 1.0).abs() < 4.0 * (4.0 / runs as f64).sqrt(),
            "variances {v1} vs {v2}"
        );
    }
}
