//! End-to-end properties of the public API: estimator guarantees on random
//! inputs, serialization round trips, the `f32` path, and error surfaces.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sq_meanest::estimators::{l2_error_bound, symmetric_query_ceiling, symmetric_tolerance};
use sq_meanest::hard_instances::{basis_witness_lp, build_perturbed, build_reference};
use sq_meanest::{
    estimate_mean_l2, estimate_mean_linf, estimate_mean_symmetric, Distribution, Error, ExplicitDistribution, Norm,
    NormSpec, OracleSession, Perturbation, QueryFn, SymmetricNorm,
};

fn explicit_strategy(max_dim: usize) -> impl Strategy<Value = ExplicitDistribution<f64>> {
    (1..=max_dim, 1usize..8).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, d), n),
            prop::collection::vec(0.01f64..1.0, n),
        )
            .prop_map(|(support, raw)| {
                let s: f64 = raw.iter().sum();
                ExplicitDistribution::new(support, raw.into_iter().map(|w| w / s).collect()).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linf_estimator_error_at_most_tau(dist in explicit_strategy(24), tau in 0.001f64..0.3, sign in prop::sample::select(vec![-1i8, 1])) {
        let mu = dist.mean();
        let d = dist.dim();
        let dist: Distribution<f64> = dist.into();
        let mut s = OracleSession::stat(&dist, tau, Perturbation::AdversarialSign { sign }).unwrap();
        let est = estimate_mean_linf(&mut s, d).unwrap();
        prop_assert_eq!(s.query_count(), d);
        for (e, m) in est.iter().zip(&mu) {
            prop_assert!((e - m).abs() <= tau);
        }
    }

    #[test]
    fn l2_estimator_within_deterministic_bound(dist in explicit_strategy(24), tau in 0.001f64..0.1, seed in 0u64..1000) {
        // Points in [-1,1]^d lie in the ℓ₂ ball of radius √d; rescale.
        let d = dist.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let support: Vec<Vec<f64>> = dist.support().iter().map(|x| x.iter().map(|v| v * scale).collect()).collect();
        let dist = ExplicitDistribution::new(support, dist.weights().to_vec()).unwrap();
        let mu = dist.mean();
        let dist: Distribution<f64> = dist.into();
        let mut s = OracleSession::stat(&dist, tau, Perturbation::AdversarialSign { sign: 1 }).unwrap();
        let est = estimate_mean_l2(&mut s, d, seed).unwrap();
        let err = est.iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(err <= l2_error_bound(d, tau) * (1.0 + 1e-9), "{} > {}", err, l2_error_bound::<f64>(d, tau));
    }

    #[test]
    fn distribution_json_round_trip(dist in explicit_strategy(10)) {
        let back = ExplicitDistribution::<f64>::from_json(&dist.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.support(), dist.support());
        prop_assert_eq!(back.weights(), dist.weights());
    }

    #[test]
    fn answers_stay_in_window_for_every_query(dist in explicit_strategy(8), tau in 1e-4f64..0.5, seed in 0u64..100) {
        let d = dist.dim();
        let dist: Distribution<f64> = dist.into();
        let mut s = OracleSession::stat(&dist, tau, Perturbation::HonestRandom { seed }).unwrap();
        for i in 0..d {
            let v = s.stat_query(&QueryFn::coordinate(d, i)).unwrap();
            prop_assert!((-1.0..=1.0).contains(&v));
        }
        prop_assert!(s.contract_violations().is_empty());
    }
}

#[test]
fn symmetric_estimator_on_type2_family_under_l1() {
    // The ℓ₁ norm is symmetric with T₂ = √d on the basis witness.
    let d = 8;
    let w = basis_witness_lp(d, 1.0).unwrap();
    let norm = SymmetricNorm::new(Norm::lp(1.0, d).unwrap()).unwrap();
    let eps = 0.2;
    let t2 = (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..5u64 {
        let z: Vec<i8> = (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let explicit = build_perturbed(&w, &z, 0.5 * w.max_eps0()).unwrap();
        let mu = explicit.mean();
        let dist: Distribution<f64> = explicit.into();
        let mut s = OracleSession::stat(&dist, symmetric_tolerance(d, eps, t2), Perturbation::HonestRandom { seed: trial }).unwrap();
        let report = estimate_mean_symmetric(&mut s, &norm, eps, t2, trial).unwrap();
        let err = norm.eval(&report.estimate.iter().zip(&mu).map(|(a, b)| a - b).collect::<Vec<_>>()).unwrap();
        assert!(err <= eps, "trial {trial}: {err}");
        assert!(report.queries_used <= symmetric_query_ceiling(d, eps));
        assert!(report.within_guarantee);
    }
    assert!(build_reference(&w).unwrap().mean().iter().all(|m| m.abs() < 1e-15));
}

#[test]
fn f32_linf_path() {
    let support = vec![vec![0.5f32, -0.25], vec![-0.5, 0.75]];
    let dist: Distribution<f32> = ExplicitDistribution::uniform(support).unwrap().into();
    let mut s = OracleSession::stat(&dist, 0.01f32, Perturbation::AdversarialSign { sign: -1 }).unwrap();
    let est = estimate_mean_linf(&mut s, 2).unwrap();
    assert!((est[0] - (0.0 - 0.01)).abs() < 1e-6);
    assert!((est[1] - (0.25 - 0.01)).abs() < 1e-6);
}

#[test]
fn error_surfaces() {
    assert!(matches!(Norm::<f64>::lp(0.5, 3), Err(Error::InvalidNorm(_))));
    assert!(matches!("lp:".parse::<NormSpec>(), Err(Error::NormSpec(_))));
    assert!(matches!(
        ExplicitDistribution::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5]),
        Err(Error::DimensionMismatch { .. })
    ));
    let outside = ExplicitDistribution::new(vec![vec![2.0, 0.0]], vec![1.0]).unwrap();
    assert!(matches!(outside.with_ball_norm(Norm::lp(2.0, 2).unwrap()), Err(Error::OutsideBall { .. })));
    let dist: Distribution<f64> = ExplicitDistribution::uniform(vec![vec![0.0]]).unwrap().into();
    assert!(OracleSession::stat(&dist, 0.0, Perturbation::Exact).is_err());
    let mut s = OracleSession::stat(&dist, 0.1, Perturbation::Exact).unwrap().with_budget(1);
    s.stat_query(&QueryFn::coordinate(1, 0)).unwrap();
    assert!(matches!(s.stat_query(&QueryFn::coordinate(1, 0)), Err(Error::BudgetExhausted { budget: 1 })));
    let w = basis_witness_lp::<f64>(3, 1.0).unwrap();
    assert!(matches!(build_perturbed(&w, &[1, 1, 1], 10.0), Err(Error::Eps0TooLarge { .. })));
}

#[test]
fn schatten_tolerance_guarantees_eps_under_sign_adversary() {
    use sq_meanest::estimators::{estimate_mean_schatten, schatten_tolerance};
    use sq_meanest::hard_instances::schatten_perturbed;
    use sq_meanest::SchattenInstanceParams;
    let (eps, eps0) = (0.05f64, 0.05f64);
    for (d, p) in [(4usize, 2.0), (6, 4.0), (8, 4.0), (8, 8.0)] {
        let norm = Norm::schatten(p, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(d as u64);
        let signs = |rng: &mut ChaCha8Rng| (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect::<Vec<i8>>();
        let eps0 = eps0.min(0.1 * (d as f64).powf(-1.0 / p));
        let params = SchattenInstanceParams::perturbed(d, p, eps0, signs(&mut rng), signs(&mut rng));
        let dist = schatten_perturbed(&params).unwrap();
        for sign in [-1i8, 1] {
            let mut s = OracleSession::stat(&dist, schatten_tolerance(d, p, eps), Perturbation::AdversarialSign { sign }).unwrap();
            let est = estimate_mean_schatten(&mut s, d, p, 3).unwrap();
            let diff: Vec<f64> = est.as_slice().iter().zip(params.analytic_mean().as_slice()).map(|(a, b)| a - b).collect();
            let err = norm.eval(&diff).unwrap();
            // At p = 2 the bound is attained, so allow rounding only.
            assert!(err <= eps * (1.0 + 1e-12), "d={d} p={p} sign={sign}: {err}");
        }
    }
}
