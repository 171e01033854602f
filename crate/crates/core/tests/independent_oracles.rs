//! Cross-checks against independent implementations: nalgebra's SVD for the
//! Schatten norms and singular values, sorting for top-k, and brute force
//! for the level profile.

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};

use sq_meanest::linalg::{random_orthogonal, singular_values};
use sq_meanest::norms::{ell_x, m_x};
use sq_meanest::{Matrix, Norm};

fn gaussian_matrix(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn nalgebra_singular_values(n: usize, data: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, data);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

#[test]
fn jacobi_singular_values_match_nalgebra() {
    for (n, seed) in (1..=12).flat_map(|n| (0..5).map(move |s| (n, s))) {
        let data = gaussian_matrix(n, 31 * n as u64 + seed);
        let ours = singular_values(&Matrix::from_row_major(n, n, data.clone()).unwrap()).unwrap();
        let theirs = nalgebra_singular_values(n, &data);
        for (a, b) in ours.iter().zip(&theirs) {
            assert_relative_eq!(*a, *b, epsilon = 1e-10, max_relative = 1e-10);
        }
    }
}

#[test]
fn rank_deficient_singular_values_match_nalgebra() {
    // Rank-2 product of 6×2 and 2×6 factors.
    let left = gaussian_matrix(6, 1);
    let right = gaussian_matrix(6, 2);
    let data: Vec<f64> =
        (0..36).map(|k| (0..2).map(|r| left[(k / 6) * 6 + r] * right[r * 6 + k % 6]).sum()).collect();
    let ours = singular_values(&Matrix::from_row_major(6, 6, data.clone()).unwrap()).unwrap();
    let theirs = nalgebra_singular_values(6, &data);
    for (a, b) in ours.iter().zip(&theirs) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    assert!(ours[2] < 1e-10);
}

#[test]
fn schatten_norm_matches_nalgebra_svd() {
    for p in [1.0, 1.5, 2.0, 3.0, 4.0, 7.5] {
        for n in [2usize, 5, 8] {
            let data = gaussian_matrix(n, (p * 10.0) as u64 + n as u64);
            let norm = Norm::schatten(p, n).unwrap();
            let expected = nalgebra_singular_values(n, &data).iter().map(|s| s.powf(p)).sum::<f64>().powf(1.0 / p);
            assert_relative_eq!(norm.eval(&data).unwrap(), expected, max_relative = 1e-11);
        }
    }
}

#[test]
fn random_orthogonal_is_orthogonal_per_nalgebra() {
    for d in [1usize, 3, 16, 40] {
        let q: Matrix<f64> = random_orthogonal(d, d as u64);
        let m = DMatrix::from_row_slice(d, d, q.as_slice());
        let err = (m.transpose() * &m - DMatrix::<f64>::identity(d, d)).abs().max();
        assert!(err < 1e-12, "d = {d}: {err}");
    }
}

/// `ℓ_X(t)`: largest `k` with `‖t·1_{[k]}‖_X ≤ 1` (boundary ties within
/// 1e-12 accepted), found by linear scan over every `k`.
fn ell_brute(norm: &Norm<f64>, t: f64) -> usize {
    let d = norm.dim();
    (0..=d)
        .filter(|&k| {
            let v: Vec<f64> = (0..d).map(|i| if i < k { t } else { 0.0 }).collect();
            norm.eval(&v).unwrap() <= 1.0 + 1e-12
        })
        .max()
        .unwrap()
}

#[test]
fn level_profile_matches_linear_scan() {
    let d = 200;
    let norms = [
        Norm::lp(1.0, d).unwrap(),
        Norm::lp(1.7, d).unwrap(),
        Norm::lp(2.0, d).unwrap(),
        Norm::lp(4.0, d).unwrap(),
        Norm::linf(d).unwrap(),
        Norm::top_k(5, d).unwrap(),
        Norm::top_k(60, d).unwrap(),
    ];
    for norm in &norms {
        for t in [1.0, 0.7, 0.5, 0.3, 0.1, 0.05, 0.013, 0.004] {
            assert_eq!(ell_x(norm, t).unwrap(), ell_brute(norm, t), "{} at t = {t}", norm.name());
            assert_relative_eq!(m_x(norm, t).unwrap(), t * (ell_brute(norm, t) as f64).sqrt(), max_relative = 1e-12);
        }
    }
}

#[test]
fn lp_level_profile_matches_floor_formula() {
    for d in [1usize, 7, 64] {
        for p in [1.0, 1.5, 2.0, 3.0] {
            let norm = Norm::lp(p, d).unwrap();
            for k in 1..=40 {
                let t = k as f64 / 40.0;
                let expected = d.min(t.powf(-p).floor() as usize);
                let got = ell_x(&norm, t).unwrap();
                // The floor can land one below an exact boundary tie.
                assert!(got == expected || (got == expected + 1 && (t.powf(-p) - t.powf(-p).round()).abs() < 1e-9));
            }
        }
    }
}

proptest! {
    #[test]
    fn top_k_matches_sorted_sum(v in prop::collection::vec(-10.0f64..10.0, 1..40), k in 1usize..40) {
        let k = k.min(v.len());
        let norm = Norm::top_k(k, v.len()).unwrap();
        let mut abs: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        abs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let expected: f64 = abs[..k].iter().sum();
        prop_assert!((norm.eval(&v).unwrap() - expected).abs() <= 1e-12 * (1.0 + expected));
    }

    #[test]
    fn lp_matches_closed_form(v in prop::collection::vec(-5.0f64..5.0, 1..30), p in 1.0f64..8.0) {
        let norm = Norm::lp(p, v.len()).unwrap();
        let expected = v.iter().map(|x| x.abs().powf(p)).sum::<f64>().powf(1.0 / p);
        prop_assert!((norm.eval(&v).unwrap() - expected).abs() <= 1e-10 * (1.0 + expected));
    }
}
