//! Property checks for the level-set geometry of symmetric norms and the
//! discrimination norm of small distribution families.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::{m_x, ring_l2_radius, Norm, SymmetricNorm};
use crate::oracle::ExplicitDistribution;
use crate::scalar::{count, l2, linf, lit, log2_floor1, tol, Scalar};

/// Largest support handled by [`discrimination_norm_exact`].
pub const MAX_DISCRIMINATION_SUPPORT: usize = 22;

/// Largest family handled by [`discrimination_norm_exact`].
pub const MAX_DISCRIMINATION_FAMILY: usize = 20;

/// Bucket `B_j(x) = {i : t·2^{−j−1} < |xᵢ| ≤ t·2^{−j}}` and its flat
/// majorant `x^{(j)}` (the first `|B_j|` coordinates set to `t·2^{−j}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LevelBucket<T> {
    pub j: u32,
    pub indices: Vec<usize>,
    pub flat: Vec<T>,
}

/// Splits `x` into level buckets `j = 0, …, ⌈2·log₂ d⌉`. Coordinates in no
/// bucket have magnitude at most `t·2^{−⌈2 log₂ d⌉−1} ≤ t/d²`.
pub fn level_decompose<T: Scalar>(x: &[T], t: T) -> Result<Vec<LevelBucket<T>>> {
    if !(t > T::zero()) {
        return Err(Error::InvalidArgument(format!("level t = {t} must be positive")));
    }
    if linf(x) > t {
        return Err(Error::Precondition(format!("‖x‖∞ = {} exceeds t = {t}", linf(x))));
    }
    let d = x.len();
    let top = (lit::<T>(2.0) * count::<T>(d.max(1)).log2())
        .ceil()
        .to_u32()
        .unwrap_or(0);
    Ok((0..=top)
        .map(|j| {
            let hi = t * lit::<T>(2.0).powi(-(j as i32));
            let lo = hi / lit(2.0);
            let indices: Vec<usize> = (0..d).filter(|&i| x[i].abs() > lo && x[i].abs() <= hi).collect();
            let mut flat = vec![T::zero(); d];
            flat[..indices.len()].iter_mut().for_each(|v| *v = hi);
            LevelBucket { j, indices, flat }
        })
        .collect())
}

/// One evaluation of `‖x‖_X ≤ T₂·3·log₂ d` for `‖x‖∞ ≤ t`, `‖x‖₂ ≤ m_X(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InterpolationCheck<T> {
    pub norm: String,
    pub t: T,
    pub t2_bound: T,
    pub x: Vec<T>,
    pub lhs: T,
    pub rhs: T,
    pub passed: bool,
}

/// `T₂·3·log₂ d`, with `log₂ d` clamped below at 1.
pub fn interpolation_bound<T: Scalar>(d: usize, t2_bound: T) -> T {
    t2_bound * lit(3.0) * log2_floor1(count::<T>(d))
}

pub fn check_interpolation<T: Scalar>(norm: &SymmetricNorm<T>, t: T, t2_bound: T, x: &[T]) -> Result<InterpolationCheck<T>> {
    let m = m_x(norm, t)?;
    let slack = T::one() + tol::<T>(1e-12);
    if linf(x) > t * slack {
        return Err(Error::Precondition(format!("‖x‖∞ = {} exceeds t = {t}", linf(x))));
    }
    if l2(x) > m * slack {
        return Err(Error::Precondition(format!("‖x‖₂ = {} exceeds m_X(t) = {m}", l2(x))));
    }
    let lhs = norm.eval(x)?;
    let rhs = interpolation_bound(norm.dim(), t2_bound);
    Ok(InterpolationCheck {
        norm: norm.name(),
        t,
        t2_bound,
        x: x.to_vec(),
        lhs,
        rhs,
        passed: lhs <= rhs,
    })
}

/// Draws a point with `‖x‖∞ ≤ t` and `‖x‖₂ ≤ radius`: a Gaussian clamped to
/// the box, rescaled to `ℓ₂` norm `u·radius` with `u` uniform in `(0, 1]`,
/// then clamped again (which only shrinks both norms).
pub fn sample_conforming<T: Scalar>(d: usize, t: T, radius: T, rng: &mut ChaCha8Rng) -> Vec<T> {
    let g: Vec<T> = (0..d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            lit::<T>(v).max(-t).min(t)
        })
        .collect();
    let n = l2(&g);
    if n == T::zero() || radius == T::zero() {
        return vec![T::zero(); d];
    }
    let u = T::one() - lit::<T>(rng.random::<f64>());
    let s = u * radius / n;
    g.into_iter().map(|v| (v * s).max(-t).min(t)).collect()
}

/// Aggregate of many [`check_interpolation`] calls on conforming probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InterpolationSuiteReport<T> {
    pub norm: String,
    pub trials: usize,
    pub t2_bound: T,
    pub rhs: T,
    pub failures: usize,
    /// Largest observed `‖x‖_X / rhs`.
    pub max_ratio: T,
    pub passed: bool,
}

/// Runs [`check_interpolation`] on `trials` conforming probes with levels
/// `t = 2^{−U}`, `U` uniform on `[0, log₂ d]`.
pub fn interpolation_suite<T: Scalar>(
    norm: &SymmetricNorm<T>,
    t2_bound: T,
    trials: usize,
    seed: u64,
) -> Result<InterpolationSuiteReport<T>> {
    let d = norm.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = count::<T>(d).log2().max(T::zero());
    let rhs = interpolation_bound(d, t2_bound);
    let mut failures = 0;
    let mut max_ratio = T::zero();
    for _ in 0..trials {
        let u: T = lit(rng.random::<f64>());
        let t = lit::<T>(2.0).powf(-u * span);
        let m = m_x(norm, t)?;
        let x = sample_conforming(d, t, m, &mut rng);
        let c = check_interpolation(norm, t, t2_bound, &x)?;
        failures += usize::from(!c.passed);
        max_ratio = max_ratio.max(c.lhs / c.rhs);
    }
    Ok(InterpolationSuiteReport {
        norm: norm.name(),
        trials,
        t2_bound,
        rhs,
        failures,
        max_ratio,
        passed: failures == 0,
    })
}

/// Inclusion `R_j ⊂ r_j·B₂ ∩ 2^{−j}·B∞ ⊂ (3·T₂·log₂ d)·B_X`, probed by sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RingInclusionReport<T> {
    pub norm: String,
    pub j: u32,
    pub samples: usize,
    pub t: T,
    /// `m_X(2^{−j})`.
    pub m: T,
    /// `r_j = 2^{−j}·√ℓ_X(2^{−j−1})`, the provable `ℓ₂` radius of the ring.
    pub radius: T,
    pub max_l2: T,
    pub max_linf: T,
    /// `max ‖x‖₂ / m_X(2^{−j})`; exceeds 1 for norms such as `ℓ₄`.
    pub max_l2_over_m: T,
    /// Ring samples with `‖x‖₂ > m_X(2^{−j})`.
    pub exceed_m: usize,
    pub first_inclusion: bool,
    /// Largest `‖x‖_X / (3·T₂·log₂ d)` over points of `m_X(2^{−j})·B₂ ∩ 2^{−j}·B∞`.
    pub max_body_ratio: T,
    pub second_inclusion: bool,
    pub passed: bool,
}

/// Samples `samples` points of the level-`j` ring of `B_X` and as many points
/// of `m_X(2^{−j})·B₂ ∩ 2^{−j}·B∞`, checking both inclusions.
///
/// Ring points: magnitudes uniform in `(t/2, t]` with random signs on a
/// random support whose size is the largest that keeps `‖x‖_X ≤ 1` (half of
/// the time) or uniform below it, so the boundary of the ball is exercised.
pub fn check_ring_inclusion<T: Scalar>(
    norm: &SymmetricNorm<T>,
    j: u32,
    t2_bound: T,
    samples: usize,
    seed: u64,
) -> Result<RingInclusionReport<T>> {
    let d = norm.dim();
    let t = lit::<T>(2.0).powi(-(j as i32));
    let m = m_x(norm, t)?;
    let radius = ring_l2_radius(norm, t)?;
    let bound = interpolation_bound(d, t2_bound);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = T::one() + tol::<T>(1e-9);
    let mut report = RingInclusionReport {
        norm: norm.name(),
        j,
        samples,
        t,
        m,
        radius,
        max_l2: T::zero(),
        max_linf: T::zero(),
        max_l2_over_m: T::zero(),
        exceed_m: 0,
        first_inclusion: true,
        max_body_ratio: T::zero(),
        second_inclusion: true,
        passed: false,
    };
    let mut positions: Vec<usize> = (0..d).collect();
    for _ in 0..samples {
        let x = sample_ring_point(norm, t, &mut positions, &mut rng)?;
        let (n2, ninf) = (l2(&x), linf(&x));
        report.max_l2 = report.max_l2.max(n2);
        report.max_linf = report.max_linf.max(ninf);
        if m > T::zero() {
            report.max_l2_over_m = report.max_l2_over_m.max(n2 / m);
        }
        report.exceed_m += usize::from(n2 > m * slack);
        if n2 > radius * slack || ninf > t * slack {
            report.first_inclusion = false;
        }
        if norm.eval(&x)? > bound {
            report.second_inclusion = false;
        }
        let body = sample_conforming(d, t, m, &mut rng);
        let ratio = norm.eval(&body)? / bound;
        report.max_body_ratio = report.max_body_ratio.max(ratio);
        if ratio > T::one() {
            report.second_inclusion = false;
        }
    }
    report.passed = report.first_inclusion && report.second_inclusion;
    Ok(report)
}

fn sample_ring_point<T: Scalar>(
    norm: &Norm<T>,
    t: T,
    positions: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>> {
    let d = norm.dim();
    positions.shuffle(rng);
    let half = t / lit(2.0);
    // Magnitudes in (t/2, t]: 1 − U lies in (0, 1].
    let mags: Vec<T> = (0..d)
        .map(|_| {
            let u = T::one() - lit::<T>(rng.random::<f64>());
            let s = if rng.random::<bool>() { T::one() } else { -T::one() };
            s * (half + half * u)
        })
        .collect();
    let build = |k: usize| {
        let mut x = vec![T::zero(); d];
        for (&p, &v) in positions[..k].iter().zip(&mags) {
            x[p] = v;
        }
        x
    };
    let fits = |k: usize| -> Result<bool> { Ok(norm.eval(&build(k))? <= T::one()) };
    // The norm of the prefix is nondecreasing in k; binary search the largest fit.
    let (mut lo, mut hi) = (0usize, d);
    if fits(hi)? {
        lo = hi;
    } else {
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if fits(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let k = if lo > 1 && rng.random::<bool>() {
        rng.random_range(1..=lo)
    } else {
        lo
    };
    Ok(build(k))
}

fn check_family<T: Scalar>(d: &ExplicitDistribution<T>, family: &[ExplicitDistribution<T>]) -> Result<()> {
    let n = d.support().len();
    if n > MAX_DISCRIMINATION_SUPPORT {
        return Err(Error::EnumerationTooLarge {
            max: MAX_DISCRIMINATION_SUPPORT,
            got: n,
        });
    }
    if family.is_empty() {
        return Err(Error::InvalidArgument("empty family".into()));
    }
    if family.len() > MAX_DISCRIMINATION_FAMILY {
        return Err(Error::EnumerationTooLarge {
            max: MAX_DISCRIMINATION_FAMILY,
            got: family.len(),
        });
    }
    if d.weights().iter().any(|&w| w <= T::zero()) {
        return Err(Error::InvalidDistribution("reference must have full support".into()));
    }
    if family.iter().any(|f| f.support() != d.support()) {
        return Err(Error::InvalidDistribution("family members must share the reference support".into()));
    }
    Ok(())
}

/// Likelihood-ratio deviations `Δ_k(ω) = (p_k(ω) − p_D(ω)) / p_D(ω)`.
pub fn likelihood_deviations<T: Scalar>(d: &ExplicitDistribution<T>, family: &[ExplicitDistribution<T>]) -> Result<Vec<Vec<T>>> {
    check_family(d, family)?;
    Ok(family
        .iter()
        .map(|f| f.weights().iter().zip(d.weights()).map(|(&p, &q)| (p - q) / q).collect())
        .collect())
}

/// `(E_D[v²])^{1/2}`.
fn weighted_l2<T: Scalar>(p: &[T], v: &[T]) -> T {
    p.iter().zip(v).map(|(&w, &x)| w * x * x).sum::<T>().sqrt()
}

/// Discrimination norm
/// `κ₂(D, 𝒟) = max_{E_D[h²] = 1} E_{D'∼𝒟} |E_D h − E_{D'} h|`
/// for a finite family drawn uniformly. Since
/// `E_{D'} h − E_D h = E_D[Δ h]`, the objective is
/// `max_s max_h E_D[(1/K)·Σ s_k Δ_k·h]` over sign patterns `s`, and the
/// inner maximum is the `L₂(D)` norm of the signed average. All `2^{K−1}`
/// patterns with `s₁ = +1` are enumerated in Gray-code order.
pub fn discrimination_norm_exact<T: Scalar>(d: &ExplicitDistribution<T>, family: &[ExplicitDistribution<T>]) -> Result<T> {
    let deltas = likelihood_deviations(d, family)?;
    let k = deltas.len();
    let kt = count::<T>(k);
    let p = d.weights();
    let mut signs = vec![T::one(); k];
    let mut v: Vec<T> = (0..p.len()).map(|w| deltas.iter().map(|dk| dk[w]).sum::<T>() / kt).collect();
    let mut best = weighted_l2(p, &v);
    let two = lit::<T>(2.0);
    for step in 1..(1usize << (k - 1)) {
        let i = step.trailing_zeros() as usize + 1;
        signs[i] = -signs[i];
        for (x, &dv) in v.iter_mut().zip(&deltas[i]) {
            *x = *x + two * signs[i] * dv / kt;
        }
        best = best.max(weighted_l2(p, &v));
    }
    Ok(best)
}

/// `E_{D'∼𝒟} |E_D h − E_{D'} h|` for an `h` given on the support.
pub fn discrimination_objective<T: Scalar>(d: &ExplicitDistribution<T>, deltas: &[Vec<T>], h: &[T]) -> T {
    let p = d.weights();
    deltas
        .iter()
        .map(|dk| p.iter().zip(dk).zip(h).map(|((&w, &x), &y)| w * x * y).sum::<T>().abs())
        .sum::<T>()
        / count(deltas.len())
}

/// Lower bound on [`discrimination_norm_exact`]: the best objective over
/// `samples_h` Gaussian test functions normalized to `E_D[h²] = 1`. A longer
/// run with the same seed extends the same draw sequence, so the result is
/// nondecreasing in `samples_h`.
pub fn discrimination_norm_mc<T: Scalar>(
    d: &ExplicitDistribution<T>,
    family: &[ExplicitDistribution<T>],
    samples_h: usize,
    seed: u64,
) -> Result<T> {
    let deltas = likelihood_deviations(d, family)?;
    let p = d.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = T::zero();
    for _ in 0..samples_h {
        let h: Vec<T> = p
            .iter()
            .map(|_| lit::<T>(StandardNormal.sample(&mut rng)))
            .collect();
        let n = weighted_l2(p, &h);
        if n == T::zero() {
            continue;
        }
        let h: Vec<T> = h.into_iter().map(|v| v / n).collect();
        best = best.max(discrimination_objective(d, &deltas, &h));
    }
    Ok(best)
}

/// Summary of a discrimination-norm computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscriminationReport<T> {
    pub support: usize,
    pub family: usize,
    pub exact: T,
    pub monte_carlo: T,
    pub samples_h: usize,
    pub passed: bool,
}

pub fn discrimination_report<T: Scalar>(
    d: &ExplicitDistribution<T>,
    family: &[ExplicitDistribution<T>],
    samples_h: usize,
    seed: u64,
) -> Result<DiscriminationReport<T>> {
    let exact = discrimination_norm_exact(d, family)?;
    let monte_carlo = discrimination_norm_mc(d, family, samples_h, seed)?;
    Ok(DiscriminationReport {
        support: d.support().len(),
        family: family.len(),
        exact,
        monte_carlo,
        samples_h,
        passed: monte_carlo <= exact * (T::one() + tol(1e-12)),
    })
}
