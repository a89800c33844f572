use fsqkd::channel::{ChannelEnsemble, ExcessNoise};
use fsqkd::gaussian::DetectorModel;
use fsqkd::keyrate::{
    budget_split, delta_aep, finite_key_length, holevo_bound, individual_information,
    mutual_information, Attack, ProtocolParams, Regime,
};
use fsqkd::strategies::{Evaluator, Strategy};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn detector() -> DetectorModel {
    DetectorModel::new(0.6, 0.25).unwrap()
}

fn protocol(v_a: f64) -> ProtocolParams {
    ProtocolParams {
        v_a,
        detector: detector(),
        beta: 0.98,
        d: 5,
        n_total: 1e10,
        reveal_fraction: 0.5,
        shot_noise_samples: None,
        eta_b_halfwidth: 0.0,
    }
}

#[test]
fn information_ordering_on_random_grid() {
    let det = detector();
    let sb = budget_split(1e-9, 1e-10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = Vec::new();
    for _ in 0..1000 {
        let eta = rng.random_range(0.05..0.9);
        let xi = rng.random_range(0.0..0.2);
        let v = rng.random_range(1.2..50.0);
        let chi = holevo_bound(eta, xi, v, &det).unwrap();
        let ibe = individual_information(eta, xi, v, &det).unwrap();
        if !(ibe >= 0.0 && ibe <= chi + 1e-12) {
            violations.push(format!("I_BE={ibe} chi={chi} at ({eta},{xi},{v})"));
        }
        let e = ChannelEnsemble::constant(eta, 1, ExcessNoise::Constant { xi }).unwrap();
        let ev = Evaluator::new(&e, protocol(v - 1.0), sb).unwrap();
        for attack in [Attack::Collective, Attack::Individual] {
            let fin = ev
                .evaluate(Strategy::Baseline, attack, Regime::Finite)
                .unwrap();
            let asy = ev
                .evaluate(Strategy::Baseline, attack, Regime::Asymptotic)
                .unwrap();
            if !(asy.rate >= fin.rate && asy.raw_rate.max(0.0) >= fin.raw_rate) {
                violations.push(format!(
                    "{attack:?}: asymptotic {} < finite {} at ({eta},{xi},{v})",
                    asy.rate, fin.rate
                ));
            }
        }
    }
    assert!(
        violations.is_empty(),
        "{} violations, first: {:?}",
        violations.len(),
        violations.first()
    );
}

#[test]
fn budget_components_add_up() {
    for (eps, eps_pe) in [(1e-9, 1e-10), (1e-3, 5e-4), (0.1, 1e-6)] {
        let sb = budget_split(eps, eps_pe).unwrap();
        let total = 2.0 * sb.eps_sm + sb.eps_bar + sb.eps_pe + sb.eps_cor;
        assert!((total - eps).abs() <= 1e-15 * eps);
        let half = sb.scaled(0.5);
        assert!((half.eps_sm - 0.5 * sb.eps_sm).abs() <= 1e-30 + 1e-15 * sb.eps_sm);
    }
    assert!(budget_split(1e-10, 1e-9).is_err());
}

#[test]
fn penalty_per_signal_shrinks_with_block_size() {
    let sb = budget_split(1e-9, 1e-10).unwrap();
    let mut last = f64::INFINITY;
    for exp in 4..=14 {
        let n = 10f64.powi(exp);
        let per_signal = delta_aep(n, 5, sb.eps_sm, sb.eps) / n.sqrt();
        assert!(per_signal < last, "N'={n}");
        last = per_signal;
    }
}

#[test]
fn key_length_without_information_is_pure_penalty() {
    let sb = budget_split(1e-9, 1e-10).unwrap();
    let n = 1e8;
    let l = finite_key_length(1.0, 5, &sb, 0.3, 0.3, n, 2.0 * n);
    let want =
        -(n.sqrt()) * delta_aep(n, 5, sb.eps_sm, sb.eps) - 2.0 * (1.0 / (2.0 * sb.eps_bar)).log2();
    assert!((l.raw - want).abs() <= 1e-12 * want.abs());
    assert!(!l.secure && l.rate == 0.0);
}

proptest! {
    #[test]
    fn key_length_grows_with_block_and_epsilon(gap in 0.01f64..0.5, exp in 6.0f64..11.0) {
        let n = 10f64.powf(exp);
        let tight = budget_split(1e-12, 1e-13).unwrap();
        let loose = budget_split(1e-6, 1e-7).unwrap();
        let a = finite_key_length(1.0, 5, &tight, gap, 0.0, n, n);
        let b = finite_key_length(1.0, 5, &loose, gap, 0.0, n, n);
        let c = finite_key_length(1.0, 5, &tight, gap, 0.0, 2.0 * n, 2.0 * n);
        prop_assert!(b.raw > a.raw);
        prop_assert!(c.raw / (2.0 * n) > a.raw / n);
    }

    #[test]
    fn information_terms_are_monotone_in_modulation(eta in 0.05f64..0.9, xi in 0.0f64..0.2, v in 1.2f64..40.0) {
        let det = detector();
        let (i1, i2) = (mutual_information(eta, xi, v, &det).unwrap(), mutual_information(eta, xi, v * 1.1, &det).unwrap());
        prop_assert!(i2 >= i1);
        let (c1, c2) = (holevo_bound(eta, xi, v, &det).unwrap(), holevo_bound(eta, xi, v * 1.1, &det).unwrap());
        prop_assert!(c2 >= c1 - 1e-12);
    }

    #[test]
    fn more_noise_never_helps(eta in 0.05f64..0.9, xi in 0.0f64..0.15, v in 1.5f64..40.0) {
        let sb = budget_split(1e-9, 1e-10).unwrap();
        let rate = |x: f64| {
            let e = ChannelEnsemble::constant(eta, 1, ExcessNoise::Constant { xi: x }).unwrap();
            Evaluator::new(&e, protocol(v - 1.0), sb).unwrap()
                .evaluate(Strategy::Baseline, Attack::Collective, Regime::Asymptotic).unwrap().raw_rate
        };
        prop_assert!(rate(xi + 0.05) <= rate(xi) + 1e-12);
    }
}
