//! Norm descriptors on `ℝ^d`: `ℓ_p`, symmetric gauges, and Schatten-p on
//! flattened square matrices.
//!
//! Every norm is normalized at construction so that `‖e₁‖ = 1`. Symmetric
//! norms additionally expose the level profile `ℓ_X(t)` (how many coordinates
//! equal to `t` fit in the unit ball) and `m_X(t) = t·√ℓ_X(t)`.

use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{count, lit, to_f64, tol, Scalar};

pub use crate::linalg::singular_values;

type GaugeFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// A user or built-in gauge function on `ℝ^d`.
#[derive(Clone)]
pub struct Gauge<T> {
    name: String,
    eval: GaugeFn<T>,
    known_symmetric: bool,
}

impl<T> fmt::Debug for Gauge<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gauge")
            .field("name", &self.name)
            .field("known_symmetric", &self.known_symmetric)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum NormKind<T> {
    /// `ℓ_p`, with `p = +∞` allowed.
    Lp { p: T },
    SymmetricGauge(Gauge<T>),
    /// Schatten-p on `side × side` matrices stored row-major.
    SchattenP { p: T, side: usize },
}

#[derive(Debug, Clone)]
pub struct Norm<T> {
    kind: NormKind<T>,
    dim: usize,
    e1_scale: T,
}

impl<T: Scalar> Norm<T> {
    pub fn lp(p: T, dim: usize) -> Result<Self> {
        check_exponent(p)?;
        check_dim(dim)?;
        Ok(Self {
            kind: NormKind::Lp { p },
            dim,
            e1_scale: T::one(),
        })
    }

    pub fn linf(dim: usize) -> Result<Self> {
        Self::lp(T::infinity(), dim)
    }

    /// Sum of the `k` largest absolute coordinates.
    pub fn top_k(k: usize, dim: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidNorm("top-k needs k >= 1".into()));
        }
        let eval: GaugeFn<T> = Arc::new(move |x: &[T]| top_k_sum(x, k));
        Self::from_gauge(
            Gauge {
                name: format!("topk:{k}"),
                eval,
                known_symmetric: true,
            },
            dim,
        )
    }

    /// Wraps an arbitrary gauge. It is rescaled so that `‖e₁‖ = 1`, and it
    /// is not trusted by the estimators until it passes
    /// [`validate_symmetric`].
    pub fn gauge<F>(name: impl Into<String>, dim: usize, eval: F) -> Result<Self>
    where
        F: Fn(&[T]) -> T + Send + Sync + 'static,
    {
        Self::from_gauge(
            Gauge {
                name: format!("gauge:{}", name.into()),
                eval: Arc::new(eval),
                known_symmetric: false,
            },
            dim,
        )
    }

    pub fn schatten(p: T, side: usize) -> Result<Self> {
        check_exponent(p)?;
        check_dim(side)?;
        Ok(Self {
            kind: NormKind::SchattenP { p, side },
            dim: side * side,
            e1_scale: T::one(),
        })
    }

    fn from_gauge(gauge: Gauge<T>, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let mut e1 = vec![T::zero(); dim];
        e1[0] = T::one();
        let raw = (gauge.eval)(&e1);
        if !raw.is_finite() || raw <= T::zero() {
            return Err(Error::InvalidNorm(format!(
                "{} evaluates to {raw} on e1",
                gauge.name
            )));
        }
        Ok(Self {
            kind: NormKind::SymmetricGauge(gauge),
            dim,
            e1_scale: T::one() / raw,
        })
    }

    pub fn kind(&self) -> &NormKind<T> {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn e1_scale(&self) -> T {
        self.e1_scale
    }

    pub fn name(&self) -> String {
        match &self.kind {
            NormKind::Lp { p } if p.is_infinite() => "linf".into(),
            NormKind::Lp { p } => format!("lp:{p}"),
            NormKind::SymmetricGauge(g) => g.name.clone(),
            NormKind::SchattenP { p, side } if p.is_infinite() => format!("schatten:inf:{side}"),
            NormKind::SchattenP { p, side } => format!("schatten:{p}:{side}"),
        }
    }

    /// True for the kinds whose value is invariant under coordinate
    /// permutations and sign flips (ℓ_p and gauges).
    pub fn is_symmetric_kind(&self) -> bool {
        !matches!(self.kind, NormKind::SchattenP { .. })
    }

    /// `‖v‖_X`.
    pub fn eval(&self, v: &[T]) -> Result<T> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        self.eval_unchecked(v)
    }

    pub(crate) fn eval_unchecked(&self, v: &[T]) -> Result<T> {
        let raw = match &self.kind {
            NormKind::Lp { p } => lp_norm(v, *p),
            NormKind::SymmetricGauge(g) => (g.eval)(v),
            NormKind::SchattenP { p, side } => {
                let m = Matrix::from_row_major(*side, *side, v.to_vec())?;
                lp_norm(&singular_values(&m)?, *p)
            }
        };
        Ok(raw * self.e1_scale)
    }
}

fn check_exponent<T: Scalar>(p: T) -> Result<()> {
    if p.is_nan() || p < T::one() {
        return Err(Error::InvalidNorm(format!("exponent {p} must be >= 1")));
    }
    Ok(())
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidNorm("dimension must be positive".into()));
    }
    Ok(())
}

pub(crate) fn lp_norm<T: Scalar>(v: &[T], p: T) -> T {
    let max = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if p.is_infinite() || max == T::zero() {
        return max;
    }
    if p == T::one() {
        return v.iter().map(|x| x.abs()).sum();
    }
    if p == lit(2.0) {
        return v.iter().map(|&x| x * x).sum::<T>().sqrt();
    }
    let s: T = v.iter().map(|x| (x.abs() / max).powf(p)).sum();
    max * s.powf(p.recip())
}

fn top_k_sum<T: Scalar>(x: &[T], k: usize) -> T {
    let mut abs: Vec<T> = x.iter().map(|v| v.abs()).collect();
    if k < abs.len() {
        abs.select_nth_unstable_by(k, |a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        abs.truncate(k);
    }
    abs.into_iter().sum()
}

/// Parsed form of the norm mini-language: `lp:<p>`, `linf`,
/// `schatten:<p>:<d>`, `topk:<k>`, `gauge:<name>`.
#[derive(Debug, Clone, PartialEq)]
pub enum NormSpec {
    Lp(f64),
    Linf,
    Schatten { p: f64, side: usize },
    TopK(usize),
    Gauge(String),
}

/// Gauges resolvable by name through `gauge:<name>`.
pub const BUILTIN_GAUGES: &[&str] = &["l1-plus-linf", "l2-plus-linf", "broken-asym"];

fn parse_exponent(s: &str) -> Option<f64> {
    match s {
        "inf" | "infinity" => Some(f64::INFINITY),
        _ => s.parse().ok(),
    }
}

impl FromStr for NormSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::NormSpec(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let spec = match parts.as_slice() {
            ["linf"] => NormSpec::Linf,
            ["lp", p] => {
                let p = parse_exponent(p).ok_or_else(bad)?;
                if p.is_infinite() {
                    NormSpec::Linf
                } else {
                    NormSpec::Lp(p)
                }
            }
            ["schatten", p, d] => NormSpec::Schatten {
                p: parse_exponent(p).ok_or_else(bad)?,
                side: d.parse().map_err(|_| bad())?,
            },
            ["topk", k] => NormSpec::TopK(k.parse().map_err(|_| bad())?),
            ["gauge", name] if BUILTIN_GAUGES.contains(name) => NormSpec::Gauge(name.to_string()),
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

impl fmt::Display for NormSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormSpec::Lp(p) => write!(f, "lp:{p}"),
            NormSpec::Linf => write!(f, "linf"),
            NormSpec::Schatten { p, side } if p.is_infinite() => write!(f, "schatten:inf:{side}"),
            NormSpec::Schatten { p, side } => write!(f, "schatten:{p}:{side}"),
            NormSpec::TopK(k) => write!(f, "topk:{k}"),
            NormSpec::Gauge(name) => write!(f, "gauge:{name}"),
        }
    }
}

impl NormSpec {
    /// Vector dimension fixed by the descriptor itself (Schatten only).
    pub fn natural_dim(&self) -> Option<usize> {
        match self {
            NormSpec::Schatten { side, .. } => Some(side * side),
            _ => None,
        }
    }

    pub fn build<T: Scalar>(&self, dim: usize) -> Result<Norm<T>> {
        match self {
            NormSpec::Lp(p) => Norm::lp(lit(*p), dim),
            NormSpec::Linf => Norm::linf(dim),
            NormSpec::Schatten { p, side } => {
                if dim != side * side {
                    return Err(Error::DimensionMismatch {
                        expected: side * side,
                        got: dim,
                    });
                }
                Norm::schatten(lit(*p), *side)
            }
            NormSpec::TopK(k) => Norm::top_k(*k, dim),
            NormSpec::Gauge(name) => builtin_gauge(name, dim),
        }
    }
}

fn builtin_gauge<T: Scalar>(name: &str, dim: usize) -> Result<Norm<T>> {
    let (eval, known_symmetric): (GaugeFn<T>, bool) = match name {
        "l1-plus-linf" => (
            Arc::new(|x: &[T]| lp_norm(x, T::one()) + lp_norm(x, T::infinity())),
            true,
        ),
        "l2-plus-linf" => (
            Arc::new(|x: &[T]| lp_norm(x, lit(2.0)) + lp_norm(x, T::infinity())),
            true,
        ),
        // Not a symmetric norm: used to exercise the validation path.
        "broken-asym" => (Arc::new(|x: &[T]| x[0] + lp_norm(x, lit(2.0))), false),
        _ => return Err(Error::NormSpec(format!("gauge:{name}"))),
    };
    Norm::from_gauge(
        Gauge {
            name: format!("gauge:{name}"),
            eval,
            known_symmetric,
        },
        dim,
    )
}

/// `(t, ℓ_X(t), m_X(t))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LevelProfile<T> {
    pub t: T,
    pub ell: usize,
    pub m: T,
}

/// Largest `k` such that the vector with `k` leading coordinates equal to `t`
/// lies in the unit ball. Binary search is valid because, for a symmetric
/// norm, the norm of the `k`-flat vector is nondecreasing in `k`.
pub fn ell_x<T: Scalar>(norm: &Norm<T>, t: T) -> Result<usize> {
    if !norm.is_symmetric_kind() {
        return Err(Error::NotSymmetric(norm.name()));
    }
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::LevelOutOfRange(to_f64(t)));
    }
    let limit = T::one() + tol::<T>(1e-12);
    let fits = |k: usize| -> Result<bool> {
        let mut v = vec![T::zero(); norm.dim];
        v[..k].iter_mut().for_each(|x| *x = t);
        Ok(norm.eval_unchecked(&v)? <= limit)
    };
    let (mut lo, mut hi) = (0usize, norm.dim);
    if fits(hi)? {
        return Ok(hi);
    }
    // Invariant: fits(lo) && !fits(hi).
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `m_X(t) = t·√ℓ_X(t)`.
pub fn m_x<T: Scalar>(norm: &Norm<T>, t: T) -> Result<T> {
    Ok(t * count::<T>(ell_x(norm, t)?).sqrt())
}

/// `ℓ₂` radius of the level ring at scale `t`: every `x ∈ B_X` whose nonzero
/// magnitudes lie in `(t/2, t]` has `‖x‖₂ ≤ t·√ℓ_X(t/2)`. Such an `x` has at
/// most `ℓ_X(t/2)` nonzeros, since a symmetric norm is monotone in absolute
/// values and `x` dominates the flat vector of value `t/2` on its support.
/// In general this exceeds `m_X(t)`; for `ℓ_p` with `p > 2` by a factor
/// growing like `2^{p/2}`.
pub fn ring_l2_radius<T: Scalar>(norm: &Norm<T>, t: T) -> Result<T> {
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::LevelOutOfRange(to_f64(t)));
    }
    Ok(t * count::<T>(ell_x(norm, t / lit(2.0))?).sqrt())
}

pub fn level_profile<T: Scalar>(norm: &Norm<T>, t: T) -> Result<LevelProfile<T>> {
    let ell = ell_x(norm, t)?;
    Ok(LevelProfile {
        t,
        ell,
        m: t * count::<T>(ell).sqrt(),
    })
}

/// Maximum relative violations observed by [`validate_symmetric`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValidationReport<T> {
    pub trials: usize,
    pub permutation: T,
    pub sign: T,
    pub homogeneity: T,
    pub triangle: T,
    pub threshold: T,
    pub passed: bool,
}

impl<T: Scalar> ValidationReport<T> {
    /// Names of the invariants whose violation exceeded the threshold.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("permutation", self.permutation),
            ("sign", self.sign),
            ("homogeneity", self.homogeneity),
            ("triangle", self.triangle),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v <= self.threshold))
        .map(|(n, _)| n)
        .collect()
    }
}

/// Probes permutation and sign invariance, absolute homogeneity and the
/// triangle inequality on `trials` random vectors.
pub fn validate_symmetric<T: Scalar>(norm: &Norm<T>, trials: usize, seed: u64) -> ValidationReport<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = norm.dim;
    let tiny = T::min_positive_value().sqrt();
    let rel = |a: T, b: T| -> T {
        let v = (a - b).abs() / b.abs().max(tiny);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    };
    let f = |x: &[T]| norm.eval_unchecked(x).unwrap_or_else(|_| T::nan());

    let zero = f(&vec![T::zero(); d]).abs();
    let mut report = ValidationReport {
        trials,
        permutation: T::zero(),
        sign: T::zero(),
        homogeneity: if zero.is_nan() { T::infinity() } else { zero },
        triangle: T::zero(),
        threshold: tol(1e-8),
        passed: false,
    };
    let mut perm: Vec<usize> = (0..d).collect();
    for _ in 0..trials {
        let x = random_probe::<T>(d, &mut rng);
        let y = random_probe::<T>(d, &mut rng);
        let fx = f(&x);

        perm.shuffle(&mut rng);
        let px: Vec<T> = perm.iter().map(|&i| x[i]).collect();
        report.permutation = report.permutation.max(rel(f(&px), fx));

        let sx: Vec<T> = x
            .iter()
            .map(|&v| if rng.random::<bool>() { -v } else { v })
            .collect();
        report.sign = report.sign.max(rel(f(&sx), fx));

        let mut alpha: T = lit(rng.random_range(-3.0..3.0));
        if alpha == T::zero() {
            alpha = T::one();
        }
        let ax: Vec<T> = x.iter().map(|&v| alpha * v).collect();
        report.homogeneity = report.homogeneity.max(rel(f(&ax), alpha.abs() * fx));

        let sum: Vec<T> = x.iter().zip(&y).map(|(&a, &b)| a + b).collect();
        let (fs, fy) = (f(&sum), f(&y));
        let excess = (fs - fx - fy).max(T::zero()) / (fx + fy).max(tiny);
        report.triangle = report.triangle.max(if excess.is_nan() { T::infinity() } else { excess });
    }
    report.passed = report.failures().is_empty();
    report
}

fn random_probe<T: Scalar>(d: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let scale: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
    let sparse = rng.random::<bool>();
    (0..d)
        .map(|_| {
            if sparse && rng.random::<f64>() < 0.5 {
                T::zero()
            } else {
                let g: f64 = StandardNormal.sample(rng);
                lit(g * scale)
            }
        })
        .collect()
}

/// A norm certified (or explicitly assumed) to be symmetric. The symmetric
/// estimator only accepts this type.
#[derive(Debug, Clone)]
pub struct SymmetricNorm<T>(Norm<T>);

impl<T: Scalar> SymmetricNorm<T> {
    /// Accepts `ℓ_p` and built-in symmetric gauges without probing.
    pub fn new(norm: Norm<T>) -> Result<Self> {
        match &norm.kind {
            NormKind::Lp { .. } => Ok(Self(norm)),
            NormKind::SymmetricGauge(g) if g.known_symmetric => Ok(Self(norm)),
            NormKind::SymmetricGauge(_) => Err(Error::NotValidated(norm.name())),
            NormKind::SchattenP { .. } => Err(Error::NotSymmetric(norm.name())),
        }
    }

    pub fn certify(norm: Norm<T>, report: &ValidationReport<T>) -> Result<Self> {
        if !norm.is_symmetric_kind() {
            return Err(Error::NotSymmetric(norm.name()));
        }
        if !report.passed {
            return Err(Error::NotValidated(norm.name()));
        }
        Ok(Self(norm))
    }

    /// Runs [`validate_symmetric`] and certifies on success.
    pub fn validate(norm: Norm<T>, trials: usize, seed: u64) -> Result<Self> {
        let report = validate_symmetric(&norm, trials, seed);
        Self::certify(norm, &report)
    }

    /// Explicit override: trusts the caller that the gauge is symmetric.
    pub fn assume_symmetric(norm: Norm<T>) -> Result<Self> {
        if !norm.is_symmetric_kind() {
            return Err(Error::NotSymmetric(norm.name()));
        }
        Ok(Self(norm))
    }

    pub fn into_inner(self) -> Norm<T> {
        self.0
    }
}

impl<T> Deref for SymmetricNorm<T> {
    type Target = Norm<T>;

    fn deref(&self) -> &Norm<T> {
        &self.0
    }
}
