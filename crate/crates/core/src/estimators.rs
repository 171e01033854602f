//! Mean estimators over a STAT oracle: coordinate-wise `ℓ∞`, random-rotation
//! `ℓ₂`, the level-ring algorithm for symmetric norms, and the Schatten-p
//! estimator obtained by viewing matrices as vectors in `ℓ₂^{d²}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{random_orthogonal, Matrix};
use crate::norms::{ring_l2_radius, Norm, SymmetricNorm};
use crate::oracle::{OracleSession, QueryFn};
use crate::scalar::{count, l2, linf, lit, log2_floor1, to_f64, tol, Scalar};

/// Constant `C₀` in the `ℓ₂` query scale `β = C₀·√(log₂ d / d)`.
pub const L2_CLIP_CONSTANT: f64 = 4.0;

/// Level index `j`; ring `j` holds magnitudes in `(2^{−j−1}, 2^{−j}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RingIndex(pub u32);

impl RingIndex {
    pub fn upper<T: Scalar>(self) -> T {
        lit::<T>(2.0).powi(-(self.0 as i32))
    }

    pub fn lower<T: Scalar>(self) -> T {
        self.upper::<T>() / lit(2.0)
    }

    pub fn contains<T: Scalar>(self, v: T) -> bool {
        let a = v.abs();
        a > self.lower() && a <= self.upper()
    }
}

/// `R_j(w)`: keeps `wᵢ` when `|wᵢ| ∈ (2^{−j−1}, 2^{−j}]`, zero elsewhere.
pub fn ring_restrict<T: Scalar>(w: &[T], j: RingIndex) -> Vec<T> {
    w.iter()
        .map(|&v| if j.contains(v) { v } else { T::zero() })
        .collect()
}

/// Highest ring index `J = ⌈2·log₂(d/ε)⌉`.
pub fn max_ring<T: Scalar>(d: usize, eps: T) -> u32 {
    (lit::<T>(2.0) * (count::<T>(d) / eps).log2())
        .ceil()
        .max(T::zero())
        .to_u32()
        .unwrap_or(0)
}

/// Coordinate-wise map applied to support points before a query.
#[derive(Debug, Clone, Copy)]
enum CoordMap<T> {
    Scale(T),
    /// `R_j` followed by scaling.
    Ring { j: RingIndex, scale: T },
}

impl<T: Scalar> CoordMap<T> {
    #[inline]
    fn apply(self, v: T) -> T {
        match self {
            CoordMap::Scale(s) => v * s,
            CoordMap::Ring { j, scale } => {
                if j.contains(v) {
                    v * scale
                } else {
                    T::zero()
                }
            }
        }
    }
}

fn check_dim<T: Scalar>(session: &OracleSession<'_, T>, d: usize) -> Result<()> {
    if session.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: session.dim(),
            got: d,
        });
    }
    Ok(())
}

/// Answers `hᵢ(x) = xᵢ` for every coordinate. Under `STAT(τ)` the result is
/// within `τ` of the mean in `ℓ∞`. Uses exactly `d` queries.
pub fn estimate_mean_linf<T: Scalar>(session: &mut OracleSession<'_, T>, d: usize) -> Result<Vec<T>> {
    check_dim(session, d)?;
    session.stat_tolerance()?;
    session.ensure_budget(d)?;
    linf_queries(session, d, CoordMap::Scale(T::one()))
}

fn linf_queries<T: Scalar>(session: &mut OracleSession<'_, T>, d: usize, map: CoordMap<T>) -> Result<Vec<T>> {
    (0..d)
        .map(|i| {
            let q = match map {
                CoordMap::Scale(s) if s == T::one() => QueryFn::coordinate(d, i),
                CoordMap::Scale(s) => {
                    let mut c = vec![T::zero(); d];
                    c[i] = s;
                    QueryFn::linear(c)
                }
                CoordMap::Ring { .. } => QueryFn::new(move |x: &[T]| map.apply(x[i])),
            };
            session.stat_query(&q)
        })
        .collect()
}

/// Query scale `β = min(1, C₀·√(max(1, log₂ d)/d))`. Rotated coordinates of
/// a vector in the unit `ℓ₂` ball exceed `β` only with tiny probability.
pub fn l2_query_scale<T: Scalar>(d: usize) -> T {
    let dt = count::<T>(d);
    (lit::<T>(L2_CLIP_CONSTANT) * (log2_floor1(dt) / dt).sqrt()).min(T::one())
}

/// Worst-case `ℓ₂` error of [`estimate_mean_l2`] under `STAT(τ)` when no
/// query clips: `β·τ·√d`.
pub fn l2_error_bound<T: Scalar>(d: usize, tau: T) -> T {
    l2_query_scale::<T>(d) * tau * count::<T>(d).sqrt()
}

/// Random-rotation `ℓ₂` estimator: draws a seeded orthogonal `Q`, asks
/// `hᵢ(x) = clip((Qx)ᵢ/β, [−1, 1])` and returns `β·Qᵀ·v`. Uses exactly `d`
/// queries.
pub fn estimate_mean_l2<T: Scalar>(session: &mut OracleSession<'_, T>, d: usize, seed: u64) -> Result<Vec<T>> {
    check_dim(session, d)?;
    session.stat_tolerance()?;
    session.ensure_budget(d)?;
    l2_queries(session, d, seed, CoordMap::Scale(T::one()))
}

fn l2_queries<T: Scalar>(session: &mut OracleSession<'_, T>, d: usize, seed: u64, map: CoordMap<T>) -> Result<Vec<T>> {
    let beta = l2_query_scale::<T>(d);
    let q = random_orthogonal::<T>(d, seed);
    let one = T::one();
    let mut responses = Vec::with_capacity(d);
    for i in 0..d {
        let row = q.row(i);
        let query = match map {
            CoordMap::Scale(s) => QueryFn::clipped_linear(row.iter().map(|&c| c * s / beta).collect(), -one, one),
            CoordMap::Ring { .. } => QueryFn::new(move |x: &[T]| {
                let dotp = row
                    .iter()
                    .zip(x)
                    .fold(T::zero(), |acc, (&c, &v)| acc + c * map.apply(v));
                (dotp / beta).max(-one).min(one)
            }),
        };
        responses.push(session.stat_query(&query)?);
    }
    Ok(q.transpose_mul_vec(&responses).into_iter().map(|v| v * beta).collect())
}

/// Projects `w_2` onto the box `B∞(w_inf, r_inf)` (coordinate-wise clamp),
/// the `ℓ₂`-closest point of the box.
pub fn project_onto_box<T: Scalar>(w_inf: &[T], w_2: &[T], r_inf: T) -> Vec<T> {
    w_inf
        .iter()
        .zip(w_2)
        .map(|(&c, &v)| v.max(c - r_inf).min(c + r_inf))
        .collect()
}

/// Finds a point in `B∞(w_inf, r_inf) ∩ B₂(w_2, r_2)`: the box projection of
/// `w_2`. Since that projection is the box point nearest to `w_2`, the balls
/// are disjoint exactly when it lies farther than `r_2` from `w_2`.
pub fn reconcile<T: Scalar>(w_inf: &[T], w_2: &[T], r_inf: T, r_2: T) -> Result<Vec<T>> {
    if w_inf.len() != w_2.len() {
        return Err(Error::DimensionMismatch {
            expected: w_inf.len(),
            got: w_2.len(),
        });
    }
    if r_inf < T::zero() || r_2 < T::zero() {
        return Err(Error::InvalidArgument("radii must be nonnegative".into()));
    }
    let w = project_onto_box(w_inf, w_2, r_inf);
    let gap: Vec<T> = w.iter().zip(w_2).map(|(&a, &b)| a - b).collect();
    let distance = l2(&gap);
    if distance > r_2 * (T::one() + tol(1e-12)) + tol::<T>(1e-15) {
        return Err(Error::Disjoint {
            distance: to_f64(distance),
            radius: to_f64(r_2),
        });
    }
    Ok(w)
}

/// Per-ring intermediates of the symmetric estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RingEstimate<T> {
    pub j: RingIndex,
    /// `ℓ₂` radius `r_j` the ring was scaled by.
    pub radius: T,
    /// The mass probe reported (near) zero mass and the ring was skipped.
    pub skipped: bool,
    pub queries: usize,
    pub w_inf: Vec<T>,
    pub w_2: Vec<T>,
    pub w_reconciled: Vec<T>,
    /// The `ℓ∞` and `ℓ₂` confidence balls did not intersect, so some oracle
    /// answer broke its guarantee; `w_reconciled` is then the box projection.
    pub balls_disjoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EstimateReport<T> {
    pub estimate: Vec<T>,
    pub per_ring: Vec<RingEstimate<T>>,
    pub queries_used: usize,
    pub gamma: T,
    /// STAT tolerance the session ran at.
    pub tolerance: T,
    /// Whether `tolerance ≤ ε·γ`, the regime where the error guarantee applies.
    pub within_guarantee: bool,
    pub errors_realized: BTreeMap<String, T>,
}

impl<T: Scalar> EstimateReport<T> {
    /// Records `‖estimate − true_mean‖` under `norm`, keyed by the norm name.
    pub fn record_error(&mut self, norm: &Norm<T>, true_mean: &[T]) -> Result<T> {
        let diff: Vec<T> = self.estimate.iter().zip(true_mean).map(|(&a, &b)| a - b).collect();
        let err = norm.eval(&diff)?;
        self.errors_realized.insert(norm.name(), err);
        Ok(err)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `γ = 1 / (36·T₂·log₂ d·log₂(d/ε))`.
pub fn symmetric_gamma<T: Scalar>(d: usize, eps: T, t2_bound: T) -> T {
    let dt = count::<T>(d);
    T::one() / (lit::<T>(36.0) * t2_bound * log2_floor1(dt) * log2_floor1(dt / eps))
}

/// STAT tolerance `α = ε·γ` at which the symmetric estimator's guarantee
/// holds.
pub fn symmetric_tolerance<T: Scalar>(d: usize, eps: T, t2_bound: T) -> T {
    eps * symmetric_gamma(d, eps, t2_bound)
}

/// Worst-case query count of [`estimate_mean_symmetric`]: one mass probe
/// plus `2d` estimation queries for each of the `J + 1` rings.
pub fn symmetric_query_ceiling<T: Scalar>(d: usize, eps: T) -> usize {
    (max_ring(d, eps) as usize + 1) * (2 * d + 1)
}

fn derive_seed(seed: u64, j: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(u64::from(j).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Level-ring mean estimator for a symmetric norm `X` (normalized so
/// `‖e₁‖_X = 1`), with distribution supported on `B_X`.
///
/// For each ring `j ≤ J = ⌈2·log₂(d/ε)⌉` the ring distribution `R_j(x)` is
/// estimated twice: in `ℓ∞` after scaling by `2^j`, and in `ℓ₂` after scaling
/// by `1/r_j` with `r_j = 2^{−j}·√ℓ_X(2^{−j−1})` (see [`ring_l2_radius`]), which
/// puts every ring vector in the unit `ℓ₂` ball. The two estimates are reconciled into a point
/// consistent with both error balls, and the ring estimates are summed.
/// Ring queries compose `R_j` into the query function, so the distribution
/// itself is never transformed.
///
/// Each ring first spends one query on the indicator of `R_j(x) ≠ 0`; a
/// ring whose reported mass is not positive is skipped with estimate zero.
/// Skipping a nonempty ring costs at most `‖μ_j‖_X ≤ 2τ`, while an exact
/// oracle never skips a ring that carries mass.
pub fn estimate_mean_symmetric<T: Scalar>(
    session: &mut OracleSession<'_, T>,
    norm: &SymmetricNorm<T>,
    eps: T,
    t2_bound: T,
    seed: u64,
) -> Result<EstimateReport<T>> {
    let d = norm.dim();
    check_dim(session, d)?;
    let tau = session.stat_tolerance()?;
    if !(eps > T::zero() && eps < T::one()) {
        return Err(Error::InvalidArgument(format!("eps = {eps} must lie in (0, 1)")));
    }
    if !(t2_bound > T::zero() && t2_bound.is_finite()) {
        return Err(Error::InvalidArgument(format!("T2 bound {t2_bound} must be positive")));
    }
    session.ensure_budget(symmetric_query_ceiling(d, eps))?;

    let gamma = symmetric_gamma(d, eps, t2_bound);
    let start = session.query_count();
    let r2_unit = l2_error_bound::<T>(d, tau);
    let mut estimate = vec![T::zero(); d];
    let mut per_ring = Vec::new();

    for j in 0..=max_ring(d, eps) {
        let ring = RingIndex(j);
        let t = ring.upper::<T>();
        let radius = ring_l2_radius(norm, t)?;
        let before = session.query_count();
        let zeros = || vec![T::zero(); d];
        let mut rec = RingEstimate {
            j: ring,
            radius,
            skipped: true,
            queries: 0,
            w_inf: zeros(),
            w_2: zeros(),
            w_reconciled: zeros(),
            balls_disjoint: false,
        };
        if radius > T::zero() {
            let probe = QueryFn::new(move |x: &[T]| {
                if x.iter().any(|&v| ring.contains(v)) {
                    T::one()
                } else {
                    T::zero()
                }
            });
            let mass = session.stat_query(&probe)?;
            if mass > T::zero() {
                rec.skipped = false;
                                rec.w_inf = linf_queries(session, d, CoordMap::Ring { j: ring, scale: t.recip() })?
                    .into_iter()
                    .map(|v| v * t)
                    .collect();
                rec.w_2 = l2_queries(session, d, derive_seed(seed, j), CoordMap::Ring { j: ring, scale: radius.recip() })?
                    .into_iter()
                    .map(|v| v * radius)
                    .collect();
                let (r_inf, r_2) = (tau * t, radius * r2_unit);
                rec.w_reconciled = match reconcile(&rec.w_inf, &rec.w_2, r_inf, r_2) {
                    Ok(w) => w,
                    Err(Error::Disjoint { .. }) => {
                        rec.balls_disjoint = true;
                        project_onto_box(&rec.w_inf, &rec.w_2, r_inf)
                    }
                    Err(e) => return Err(e),
                };
            }
        }
        rec.queries = session.query_count() - before;
        for (e, &w) in estimate.iter_mut().zip(&rec.w_reconciled) {
            *e = *e + w;
        }
        per_ring.push(rec);
    }

    Ok(EstimateReport {
        estimate,
        per_ring,
        queries_used: session.query_count() - start,
        gamma,
        tolerance: tau,
        within_guarantee: tau <= eps * gamma,
        errors_realized: BTreeMap::new(),
    })
}

/// `d^{1/2 − 1/p}`: the largest Frobenius norm of a matrix in the unit
/// Schatten-p ball (`p ≥ 2`).
pub fn schatten_scale<T: Scalar>(d: usize, p: T) -> T {
    count::<T>(d).powf(lit::<T>(0.5) - p.recip())
}

/// STAT tolerance `ε / (d^{1/2 − 1/p}·β·d)` for the Schatten estimator, with
/// `β` the query scale in dimension `d²`: the deterministic Frobenius error
/// bound of the rotation estimator is then `ε`, and `‖·‖_{S_p} ≤ ‖·‖_F` for
/// `p ≥ 2`.
pub fn schatten_tolerance<T: Scalar>(d: usize, p: T, eps: T) -> T {
    eps / (schatten_scale(d, p) * l2_error_bound::<T>(d * d, T::one()))
}

/// Schatten-p estimator for `p ≥ 2`: scales matrices by `d^{−(1/2 − 1/p)}`
/// into the unit Frobenius ball, runs [`estimate_mean_l2`] in dimension
/// `d²`, and scales back. Returns a `d × d` matrix.
pub fn estimate_mean_schatten<T: Scalar>(
    session: &mut OracleSession<'_, T>,
    d: usize,
    p: T,
    seed: u64,
) -> Result<Matrix<T>> {
    if p.is_nan() || p < lit(2.0) {
        return Err(Error::InvalidArgument(format!("Schatten exponent {p} < 2 is not supported")));
    }
    let n = d * d;
    check_dim(session, n)?;
    session.stat_tolerance()?;
    session.ensure_budget(n)?;
    let s = schatten_scale::<T>(d, p);
    let v = l2_queries(session, n, seed, CoordMap::Scale(s.recip()))?;
    Matrix::from_row_major(d, d, v.into_iter().map(|x| x * s).collect())
}

/// `‖a − b‖_∞`, a convenience for reports and tests.
pub fn linf_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    linf(&diff)
}
