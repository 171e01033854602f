//! Distributions and the STAT / VSTAT oracle simulator.
//!
//! A session answers each query with a value within the oracle's tolerance of
//! the true expectation. How the error inside that window is chosen is set by
//! the [`Perturbation`] mode. Every answer is logged so the contract can be
//! audited afterwards.

use std::fmt;
use std::io::Write;
use std::sync::{Arc, OnceLock};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norms::Norm;
use crate::scalar::{count, dot, l2, lit, to_f64, tol, Scalar};

/// Finite-support distribution `Σᵢ wᵢ δ_{xᵢ}`.
#[derive(Debug, Clone)]
pub struct ExplicitDistribution<T> {
    dim: usize,
    support: Vec<Vec<T>>,
    weights: Vec<T>,
    ball_norm: Option<Norm<T>>,
}

impl<T: Scalar> ExplicitDistribution<T> {
    pub fn new(support: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidDistribution(m));
        if support.is_empty() {
            return bad("empty support".into());
        }
        if support.len() != weights.len() {
            return bad(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            ));
        }
        let dim = support[0].len();
        if dim == 0 {
            return bad("zero-dimensional support".into());
        }
        for x in &support {
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            if let Some(index) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
            return bad("weights must be finite and nonnegative".into());
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > tol(1e-12) {
            return bad(format!("weights sum to {total}, not 1"));
        }
        Ok(Self {
            dim,
            support,
            weights,
            ball_norm: None,
        })
    }

    /// Uniform weights over the given points.
    pub fn uniform(support: Vec<Vec<T>>) -> Result<Self> {
        let w = T::one() / count(support.len().max(1));
        let weights = vec![w; support.len()];
        // Rounding in n·(1/n) is far below the weight tolerance.
        Self::new(support, weights)
    }

    /// Declares the norm whose unit ball supports the distribution, checking
    /// every support point.
    pub fn with_ball_norm(mut self, norm: Norm<T>) -> Result<Self> {
        if norm.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: norm.dim(),
            });
        }
        let limit = T::one() + tol(1e-9);
        for (index, x) in self.support.iter().enumerate() {
            let n = norm.eval(x)?;
            if n > limit {
                return Err(Error::OutsideBall {
                    index,
                    norm: to_f64(n),
                });
            }
        }
        self.ball_norm = Some(norm);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> &[Vec<T>] {
        &self.support
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn ball_norm(&self) -> Option<&Norm<T>> {
        self.ball_norm.as_ref()
    }

    /// `Σᵢ wᵢ xᵢ`, accumulated in support order. Query expectations use the
    /// same order, so coordinate queries reproduce these values exactly.
    pub fn mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for (x, &w) in self.support.iter().zip(&self.weights) {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m = *m + w * v;
            }
        }
        mean
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: DistributionFile<T> = serde_json::from_str(s)?;
        let dist = Self::new(file.support, file.weights)?;
        if dist.dim != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                got: dist.dim,
            });
        }
        Ok(dist)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DistributionFile {
            dim: self.dim,
            support: self.support.clone(),
            weights: self.weights.clone(),
        })?)
    }

    fn sampler(&self) -> Result<WeightedIndex<f64>> {
        WeightedIndex::new(self.weights.iter().map(|&w| to_f64(w)))
            .map_err(|e| Error::InvalidDistribution(e.to_string()))
    }
}

/// On-disk distribution format: `{"dim": d, "support": [[...]], "weights": [...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DistributionFile<T> {
    pub dim: usize,
    pub support: Vec<Vec<T>>,
    pub weights: Vec<T>,
}

type DrawFn<T> = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<T> + Send + Sync>;
type EnumerateFn<T> = Arc<dyn Fn() -> Result<ExplicitDistribution<T>> + Send + Sync>;

/// Distribution available through a seeded draw function, optionally with
/// its exact mean, a bound on the `ℓ₂` norm of every draw, and a full
/// enumeration of the support.
#[derive(Clone)]
pub struct SamplerDistribution<T> {
    dim: usize,
    draw: DrawFn<T>,
    exact_mean: Option<Vec<T>>,
    l2_radius: Option<T>,
    enumerate: Option<EnumerateFn<T>>,
    enumerated: Arc<OnceLock<Result<ExplicitDistribution<T>>>>,
    ball_norm: Option<Norm<T>>,
}

impl<T> fmt::Debug for SamplerDistribution<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SamplerDistribution")
            .field("dim", &self.dim)
            .field("has_exact_mean", &self.exact_mean.is_some())
            .field("has_enumeration", &self.enumerate.is_some())
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> SamplerDistribution<T> {
    pub fn new<F>(dim: usize, draw: F) -> Self
    where
        F: Fn(&mut ChaCha8Rng) -> Vec<T> + Send + Sync + 'static,
    {
        Self {
            dim,
            draw: Arc::new(draw),
            exact_mean: None,
            l2_radius: None,
            enumerate: None,
            enumerated: Arc::new(OnceLock::new()),
            ball_norm: None,
        }
    }

    pub fn with_exact_mean(mut self, mean: Vec<T>) -> Self {
        self.exact_mean = Some(mean);
        self
    }

    /// Declares `‖x‖₂ ≤ radius` for every draw. Together with an exact mean
    /// this lets clipped linear queries be answered exactly when the clip
    /// provably never binds.
    pub fn with_l2_radius(mut self, radius: T) -> Self {
        self.l2_radius = Some(radius);
        self
    }

    pub fn with_enumeration<F>(mut self, f: F) -> Self
    where
        F: Fn() -> Result<ExplicitDistribution<T>> + Send + Sync + 'static,
    {
        self.enumerate = Some(Arc::new(f));
        self
    }

    pub fn with_ball_norm(mut self, norm: Norm<T>) -> Self {
        self.ball_norm = Some(norm);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        (self.draw)(rng)
    }

    pub fn exact_mean(&self) -> Option<&[T]> {
        self.exact_mean.as_deref()
    }

    pub fn l2_radius(&self) -> Option<T> {
        self.l2_radius
    }

    pub fn ball_norm(&self) -> Option<&Norm<T>> {
        self.ball_norm.as_ref()
    }

    /// Full support enumeration, computed once and cached.
    pub fn enumeration(&self) -> Option<Result<&ExplicitDistribution<T>>> {
        let f = self.enumerate.as_ref()?;
        Some(self.enumerated.get_or_init(|| f()).as_ref().map_err(Clone::clone))
    }
}

#[derive(Debug, Clone)]
pub enum Distribution<T> {
    Explicit(ExplicitDistribution<T>),
    Sampler(SamplerDistribution<T>),
}

impl<T: Scalar> Distribution<T> {
    pub fn dim(&self) -> usize {
        match self {
            Distribution::Explicit(d) => d.dim(),
            Distribution::Sampler(s) => s.dim(),
        }
    }

    pub fn ball_norm(&self) -> Option<&Norm<T>> {
        match self {
            Distribution::Explicit(d) => d.ball_norm(),
            Distribution::Sampler(s) => s.ball_norm(),
        }
    }

    pub fn as_explicit(&self) -> Option<&ExplicitDistribution<T>> {
        match self {
            Distribution::Explicit(d) => Some(d),
            Distribution::Sampler(_) => None,
        }
    }
}

impl<T> From<ExplicitDistribution<T>> for Distribution<T> {
    fn from(d: ExplicitDistribution<T>) -> Self {
        Distribution::Explicit(d)
    }
}

impl<T> From<SamplerDistribution<T>> for Distribution<T> {
    fn from(d: SamplerDistribution<T>) -> Self {
        Distribution::Sampler(d)
    }
}

/// `E_{x∼D}[x]`, exactly.
pub fn exact_mean<T: Scalar>(dist: &Distribution<T>) -> Result<Vec<T>> {
    match dist {
        Distribution::Explicit(d) => Ok(d.mean()),
        Distribution::Sampler(s) => match (s.exact_mean(), s.enumeration()) {
            (Some(m), _) => Ok(m.to_vec()),
            (None, Some(e)) => Ok(e?.mean()),
            (None, None) => Err(Error::NoExactMean),
        },
    }
}

/// `x ↦ clamp(⟨coeffs, x⟩, lo, hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedLinear<T> {
    pub coeffs: Vec<T>,
    pub lo: T,
    pub hi: T,
}

type EvalFn<'a, T> = Box<dyn Fn(&[T]) -> T + 'a>;

/// A query function `h: ℝ^d → ℝ`. Queries built with
/// [`QueryFn::clipped_linear`] also carry their linear form, which lets
/// sampler-backed distributions answer them from the exact mean.
pub struct QueryFn<'a, T> {
    eval: EvalFn<'a, T>,
    linear: Option<ClippedLinear<T>>,
}

impl<'a, T: Scalar> QueryFn<'a, T> {
    pub fn new<F: Fn(&[T]) -> T + 'a>(f: F) -> Self {
        Self {
            eval: Box::new(f),
            linear: None,
        }
    }

    pub fn clipped_linear(coeffs: Vec<T>, lo: T, hi: T) -> Self {
        let c = coeffs.clone();
        Self {
            eval: Box::new(move |x: &[T]| dot(&c, x).max(lo).min(hi)),
            linear: Some(ClippedLinear { coeffs, lo, hi }),
        }
    }

    /// Unclipped linear query `x ↦ ⟨coeffs, x⟩`; out-of-range values are
    /// reported by the session rather than clipped.
    pub fn linear(coeffs: Vec<T>) -> Self {
        Self::clipped_linear(coeffs, T::neg_infinity(), T::infinity())
    }

    /// Coordinate query `x ↦ x_i`.
    pub fn coordinate(dim: usize, i: usize) -> Self {
        let mut coeffs = vec![T::zero(); dim];
        coeffs[i] = T::one();
        let mut q = Self::linear(coeffs);
        q.eval = Box::new(move |x: &[T]| x[i]);
        q
    }

    pub fn eval(&self, x: &[T]) -> T {
        (self.eval)(x)
    }

    pub fn linear_form(&self) -> Option<&ClippedLinear<T>> {
        self.linear.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub enum OracleKind<T> {
    /// `|v − p| ≤ τ` for queries into `[−1, 1]`.
    Stat { tau: T },
    /// `|v − p| ≤ max{1/t, √(p(1−p)/t)}` for queries into `[0, 1]`.
    Vstat { t: T },
}

impl<T: Scalar> OracleKind<T> {
    pub fn range(&self) -> (T, T) {
        match self {
            OracleKind::Stat { .. } => (-T::one(), T::one()),
            OracleKind::Vstat { .. } => (T::zero(), T::one()),
        }
    }

    /// Tolerance of an answer whose true expectation is `p`.
    pub fn tolerance_at(&self, p: T) -> T {
        match *self {
            OracleKind::Stat { tau } => tau,
            OracleKind::Vstat { t } => {
                let q = p.max(T::zero()).min(T::one());
                t.recip().max((q * (T::one() - q) / t).sqrt())
            }
        }
    }

    /// Tolerance floor over all `p` (used to size Monte Carlo estimates).
    pub fn min_tolerance(&self) -> T {
        match *self {
            OracleKind::Stat { tau } => tau,
            OracleKind::Vstat { t } => t.recip(),
        }
    }
}

type AdversaryFn<T> = Arc<dyn Fn(usize, T) -> T + Send + Sync>;

/// How an oracle picks its answer inside the tolerance window.
#[derive(Clone)]
pub enum Perturbation<T> {
    /// Returns `p` itself.
    Exact,
    /// `p + δ` with `δ` uniform in `[−τ, τ]`.
    HonestRandom { seed: u64 },
    /// Empirical mean of `samples` draws, clamped into `[p − τ, p + τ]`.
    Empirical { samples: usize, seed: u64 },
    /// `p + sign·τ`.
    AdversarialSign { sign: i8 },
    /// `p + f(query_index, p)·τ`, with `f` clamped to `[−1, 1]`.
    AdversarialCallback(AdversaryFn<T>),
}

impl<T> fmt::Debug for Perturbation<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perturbation::Exact => write!(f, "Exact"),
            Perturbation::HonestRandom { seed } => write!(f, "HonestRandom({seed})"),
            Perturbation::Empirical { samples, seed } => write!(f, "Empirical({samples}, {seed})"),
            Perturbation::AdversarialSign { sign } => write!(f, "AdversarialSign({sign})"),
            Perturbation::AdversarialCallback(_) => write!(f, "AdversarialCallback"),
        }
    }
}

impl<T: Scalar> Perturbation<T> {
    pub fn adversarial() -> Self {
        Perturbation::AdversarialSign { sign: 1 }
    }

    pub fn adversarial_callback<F: Fn(usize, T) -> T + Send + Sync + 'static>(f: F) -> Self {
        Perturbation::AdversarialCallback(Arc::new(f))
    }

    fn seed(&self) -> u64 {
        match self {
            Perturbation::HonestRandom { seed } | Perturbation::Empirical { seed, .. } => *seed,
            _ => 0,
        }
    }
}

/// One logged oracle answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct QueryRecord<T> {
    pub id: usize,
    /// True expectation when it was computed exactly.
    pub p_exact: Option<T>,
    pub value: T,
    pub tau: T,
}

impl<T: Scalar> QueryRecord<T> {
    pub fn violates_contract(&self) -> bool {
        self.p_exact.is_some_and(|p| !((self.value - p).abs() <= self.tau))
    }
}

/// Failure probability allowed for Monte Carlo expectations.
const MC_FAILURE_PROB: f64 = 1e-6;

/// STAT / VSTAT access to a distribution, with a query budget and log.
pub struct OracleSession<'a, T> {
    dist: &'a Distribution<T>,
    kind: OracleKind<T>,
    perturbation: Perturbation<T>,
    budget: Option<usize>,
    log: Vec<QueryRecord<T>>,
    rng: ChaCha8Rng,
    mc_rng: ChaCha8Rng,
}

impl<'a, T: Scalar> OracleSession<'a, T> {
    pub fn new(dist: &'a Distribution<T>, kind: OracleKind<T>, perturbation: Perturbation<T>) -> Result<Self> {
        match kind {
            OracleKind::Stat { tau } if !(tau > T::zero() && tau.is_finite()) => {
                return Err(Error::InvalidOracle(format!("STAT tolerance {tau}")));
            }
            OracleKind::Vstat { t } if !(t > T::zero() && t.is_finite()) => {
                return Err(Error::InvalidOracle(format!("VSTAT sample size {t}")));
            }
            _ => {}
        }
        match &perturbation {
            Perturbation::AdversarialSign { sign } if sign.abs() != 1 => {
                return Err(Error::InvalidOracle(format!("adversarial sign {sign}")));
            }
            Perturbation::Empirical { samples: 0, .. } => {
                return Err(Error::InvalidOracle("empirical mode needs samples".into()));
            }
            _ => {}
        }
        let seed = perturbation.seed();
        Ok(Self {
            dist,
            kind,
            perturbation,
            budget: None,
            log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            mc_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        })
    }

    pub fn stat(dist: &'a Distribution<T>, tau: T, perturbation: Perturbation<T>) -> Result<Self> {
        Self::new(dist, OracleKind::Stat { tau }, perturbation)
    }

    pub fn vstat(dist: &'a Distribution<T>, t: T, perturbation: Perturbation<T>) -> Result<Self> {
        Self::new(dist, OracleKind::Vstat { t }, perturbation)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn distribution(&self) -> &'a Distribution<T> {
        self.dist
    }

    pub fn kind(&self) -> OracleKind<T> {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dist.dim()
    }

    /// STAT tolerance, or an error for VSTAT sessions.
    pub fn stat_tolerance(&self) -> Result<T> {
        match self.kind {
            OracleKind::Stat { tau } => Ok(tau),
            OracleKind::Vstat { .. } => Err(Error::WrongOracle { expected: "STAT" }),
        }
    }

    pub fn query_count(&self) -> usize {
        self.log.len()
    }

    pub fn remaining_budget(&self) -> Option<usize> {
        self.budget.map(|b| b - self.log.len())
    }

    /// Errors unless at least `needed` more queries fit in the budget.
    pub fn ensure_budget(&self, needed: usize) -> Result<()> {
        match self.remaining_budget() {
            Some(available) if available < needed => Err(Error::BudgetInsufficient { needed, available }),
            _ => Ok(()),
        }
    }

    pub fn log(&self) -> &[QueryRecord<T>] {
        &self.log
    }

    /// Logged answers that break `|v − p| ≤ τ` (only checkable when `p` was
    /// computed exactly).
    pub fn contract_violations(&self) -> Vec<QueryRecord<T>> {
        self.log.iter().filter(|r| r.violates_contract()).copied().collect()
    }

    /// CSV rows `query_id,p_exact,v,tau`; `p_exact` is `null` when it was
    /// only estimated.
    pub fn write_log_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "query_id,p_exact,v,tau")?;
        for r in &self.log {
            let p = r.p_exact.map_or_else(|| "null".to_string(), |p| format!("{p:e}"));
            writeln!(w, "{},{},{:e},{:e}", r.id, p, r.value, r.tau)?;
        }
        Ok(())
    }

    pub fn stat_query(&mut self, h: &QueryFn<'_, T>) -> Result<T> {
        if !matches!(self.kind, OracleKind::Stat { .. }) {
            return Err(Error::WrongOracle { expected: "STAT" });
        }
        self.answer(h)
    }

    pub fn vstat_query(&mut self, h: &QueryFn<'_, T>) -> Result<T> {
        if !matches!(self.kind, OracleKind::Vstat { .. }) {
            return Err(Error::WrongOracle { expected: "VSTAT" });
        }
        self.answer(h)
    }

    fn answer(&mut self, h: &QueryFn<'_, T>) -> Result<T> {
        if let Some(budget) = self.budget {
            if self.log.len() >= budget {
                return Err(Error::BudgetExhausted { budget });
            }
        }
        let (p, exact) = self.expectation(h)?;
        let tau = self.kind.tolerance_at(p);
        let id = self.log.len();
        let raw = match &self.perturbation {
            Perturbation::Exact => p,
            Perturbation::HonestRandom { .. } => p + tau * lit(self.rng.random_range(-1.0..=1.0)),
            Perturbation::Empirical { samples, .. } => {
                let emp = self.empirical_mean(h, *samples)?;
                emp.max(p - tau).min(p + tau)
            }
            Perturbation::AdversarialSign { sign } => p + tau * lit(f64::from(*sign)),
            Perturbation::AdversarialCallback(f) => {
                let frac = f(id, p);
                let frac = if frac.is_nan() { T::zero() } else { frac.max(-T::one()).min(T::one()) };
                p + tau * frac
            }
        };
        // Capping to the query range only moves the answer towards p, which
        // lies in the range, so the tolerance window is preserved.
        let (lo, hi) = self.kind.range();
        let value = within_window(p, raw.max(lo).min(hi), tau);
        self.log.push(QueryRecord {
            id,
            p_exact: exact.then_some(p),
            value,
            tau,
        });
        Ok(value)
    }

    /// `(E[h], computed_exactly)`.
    fn expectation(&mut self, h: &QueryFn<'_, T>) -> Result<(T, bool)> {
        let range = self.kind.range();
        match self.dist {
            Distribution::Explicit(d) => Ok((explicit_expectation(d, h, range)?, true)),
            Distribution::Sampler(s) => {
                if let (Some(lin), Some(mean), Some(radius)) = (h.linear_form(), s.exact_mean(), s.l2_radius()) {
                    // |⟨c, x⟩| ≤ reach for every draw. A relative slack of
                    // 1e-12 absorbs rounding in `reach` itself; a clip that
                    // binds by that little moves the expectation by less
                    // than any tolerance in use.
                    let reach = l2(&lin.coeffs) * radius / (T::one() + tol::<T>(1e-12));
                    if -reach >= lin.lo.max(range.0) && reach <= lin.hi.min(range.1) {
                        return Ok((dot(&lin.coeffs, mean), true));
                    }
                }
                if let Some(e) = s.enumeration() {
                    return Ok((explicit_expectation(e?, h, range)?, true));
                }
                let width = range.1 - range.0;
                let accuracy = self.kind.min_tolerance() / lit(10.0);
                // Hoeffding: P(|mean − p| ≥ a) ≤ 2 exp(−2 n a² / width²).
                let n = (width * width * lit::<T>((2.0 / MC_FAILURE_PROB).ln()) / (lit::<T>(2.0) * accuracy * accuracy))
                    .ceil()
                    .to_usize()
                    .unwrap_or(usize::MAX);
                let mut acc = T::zero();
                for _ in 0..n {
                    let x = s.draw(&mut self.mc_rng);
                    acc = acc + checked_eval(h, &x, range)?;
                }
                Ok((acc / count(n), false))
            }
        }
    }

    fn empirical_mean(&mut self, h: &QueryFn<'_, T>, samples: usize) -> Result<T> {
        let range = self.kind.range();
        let mut acc = T::zero();
        match self.dist {
            Distribution::Explicit(d) => {
                let idx = d.sampler()?;
                for _ in 0..samples {
                    let i = idx.sample(&mut self.rng);
                    acc = acc + checked_eval(h, &d.support[i], range)?;
                }
            }
            Distribution::Sampler(s) => {
                for _ in 0..samples {
                    let x = s.draw(&mut self.rng);
                    acc = acc + checked_eval(h, &x, range)?;
                }
            }
        }
        Ok(acc / count(samples))
    }
}

fn checked_eval<T: Scalar>(h: &QueryFn<'_, T>, x: &[T], (lo, hi): (T, T)) -> Result<T> {
    let v = h.eval(x);
    if v >= lo && v <= hi {
        Ok(v)
    } else {
        Err(Error::QueryOutOfRange {
            value: to_f64(v),
            lo: to_f64(lo),
            hi: to_f64(hi),
        })
    }
}

fn explicit_expectation<T: Scalar>(d: &ExplicitDistribution<T>, h: &QueryFn<'_, T>, range: (T, T)) -> Result<T> {
    d.support
        .iter()
        .zip(&d.weights)
        .try_fold(T::zero(), |acc, (x, &w)| Ok(acc + w * checked_eval(h, x, range)?))
}

/// Pulls `v` toward `p` until `|v − p| ≤ τ` holds in floating point, so
/// rounding in `p ± τ` can never produce a contract violation.
fn within_window<T: Scalar>(p: T, v: T, tau: T) -> T {
    let mut v = v;
    while !((v - p).abs() <= tau) {
        let step = T::epsilon() * v.abs().max(p.abs()).max(T::min_positive_value());
        v = if v > p { v - step } else { v + step };
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(d: usize, i: usize, s: f64) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = s;
        v
    }

    fn pm_e1() -> Distribution<f64> {
        ExplicitDistribution::uniform(vec![e(2, 0, 1.0), e(2, 0, -1.0)]).unwrap().into()
    }

    #[test]
    fn constant_query_answers_are_capped_to_range() {
        let dist = quarter();
        let one = QueryFn::new(|_: &[f64]| 1.0);
        for mode in [
            Perturbation::HonestRandom { seed: 3 },
            Perturbation::AdversarialSign { sign: 1 },
            Perturbation::AdversarialSign { sign: -1 },
        ] {
            let mut s = OracleSession::stat(&dist, 0.2, mode).unwrap();
            for _ in 0..20 {
                let v = s.stat_query(&one).unwrap();
                assert!((0.8..=1.0).contains(&v), "{v}");
            }
        }
    }

    fn quarter() -> Distribution<f64> {
        ExplicitDistribution::new(vec![e(2, 0, 1.0), e(2, 1, 1.0)], vec![0.25, 0.75]).unwrap().into()
    }

    #[test]
    fn exact_mean_examples() {
        assert_eq!(exact_mean(&pm_e1()).unwrap(), vec![0.0, 0.0]);
        assert_eq!(exact_mean(&quarter()).unwrap(), vec![0.25, 0.75]);
        let s: Distribution<f64> = SamplerDistribution::new(2, |_| vec![0.0, 0.0]).into();
        assert_eq!(exact_mean(&s), Err(Error::NoExactMean));
    }

    #[test]
    fn distribution_validation() {
        assert!(ExplicitDistribution::<f64>::new(vec![], vec![]).is_err());
        assert!(ExplicitDistribution::new(vec![vec![1.0]], vec![0.9]).is_err());
        assert!(ExplicitDistribution::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(ExplicitDistribution::new(vec![vec![1.0], vec![0.0]], vec![1.5, -0.5]).is_err());
        let d = ExplicitDistribution::new(vec![vec![0.6, 0.8]], vec![1.0]).unwrap();
        assert!(d.clone().with_ball_norm(Norm::lp(2.0, 2).unwrap()).is_ok());
        assert!(matches!(
            d.with_ball_norm(Norm::lp(1.0, 2).unwrap()),
            Err(Error::OutsideBall { index: 0, .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let d = quarter();
        let json = d.as_explicit().unwrap().to_json().unwrap();
        let back = ExplicitDistribution::<f64>::from_json(&json).unwrap();
        assert_eq!(back.support(), d.as_explicit().unwrap().support());
        assert!(ExplicitDistribution::<f64>::from_json(r#"{"dim":3,"support":[[1,0]],"weights":[1]}"#).is_err());
    }

    #[test]
    fn stat_examples() {
        let pm = pm_e1();
        let one = QueryFn::new(|_: &[f64]| 1.0);
        for pert in [
            Perturbation::HonestRandom { seed: 1 },
            Perturbation::Empirical { samples: 10, seed: 1 },
            Perturbation::adversarial(),
            Perturbation::Exact,
        ] {
            let mut s = OracleSession::stat(&pm, 0.1, pert).unwrap();
            let v = s.stat_query(&one).unwrap();
            assert!((0.9..=1.1).contains(&v));
        }

        let x1 = QueryFn::coordinate(2, 0);
        let mut s = OracleSession::stat(&pm, 0.1, Perturbation::adversarial()).unwrap();
        assert_eq!(s.stat_query(&x1).unwrap(), 0.1);

        let q = quarter();
        let mut s = OracleSession::stat(&q, 0.05, Perturbation::HonestRandom { seed: 9 }).unwrap();
        for _ in 0..100 {
            let v = s.stat_query(&x1).unwrap();
            assert!((0.20..=0.30).contains(&v));
        }
        assert!(s.contract_violations().is_empty());
    }

    #[test]
    fn vstat_examples() {
        let q = quarter();
        let zero = QueryFn::new(|_: &[f64]| 0.0);
        let half = QueryFn::new(|x: &[f64]| if x[0] > 0.5 { 1.0 } else { 0.0 });
        let one = QueryFn::new(|_: &[f64]| 1.0);
        let mut s = OracleSession::vstat(&q, 100.0, Perturbation::adversarial()).unwrap();
        assert!((s.vstat_query(&zero).unwrap() - 0.01).abs() < 1e-15);

        let even: Distribution<f64> = ExplicitDistribution::uniform(vec![e(2, 0, 1.0), e(2, 1, 1.0)]).unwrap().into();
        let mut s = OracleSession::vstat(&even, 100.0, Perturbation::adversarial()).unwrap();
        let v = s.vstat_query(&half).unwrap();
        assert!((v - 0.55).abs() < 1e-12 && v <= 0.55);

        let mut s = OracleSession::vstat(&q, 25.0, Perturbation::AdversarialSign { sign: -1 }).unwrap();
        let v = s.vstat_query(&one).unwrap();
        assert!((v - 0.96).abs() < 1e-12 && v >= 0.96);
        assert!(s.stat_query(&one).is_err());
    }

    #[test]
    fn range_enforced() {
        let q = quarter();
        let big = QueryFn::new(|x: &[f64]| 2.0 * x[0]);
        let mut s = OracleSession::stat(&q, 0.1, Perturbation::Exact).unwrap();
        assert!(matches!(s.stat_query(&big), Err(Error::QueryOutOfRange { .. })));
        let neg = QueryFn::new(|_: &[f64]| -0.5);
        let mut s = OracleSession::vstat(&q, 10.0, Perturbation::Exact).unwrap();
        assert!(matches!(s.vstat_query(&neg), Err(Error::QueryOutOfRange { .. })));
    }

    #[test]
    fn budget_accounting() {
        let q = quarter();
        let h = QueryFn::coordinate(2, 1);
        let mut s = OracleSession::stat(&q, 0.1, Perturbation::Exact).unwrap().with_budget(3);
        assert_eq!(s.query_count(), 0);
        for _ in 0..3 {
            s.stat_query(&h).unwrap();
        }
        assert_eq!(s.query_count(), 3);
        assert_eq!(s.stat_query(&h), Err(Error::BudgetExhausted { budget: 3 }));
        assert_eq!(s.query_count(), 3);
        assert!(s.ensure_budget(1).is_err());
    }

    #[test]
    fn callback_adversary_sees_index_and_p() {
        let q = quarter();
        let h = QueryFn::coordinate(2, 0);
        let mut s = OracleSession::stat(
            &q,
            0.1,
            Perturbation::adversarial_callback(|i, p: f64| if i % 2 == 0 { -1.0 } else { p * 100.0 }),
        )
        .unwrap();
        assert!((s.stat_query(&h).unwrap() - 0.15).abs() < 1e-12);
        assert!((s.stat_query(&h).unwrap() - 0.35).abs() < 1e-12);
        assert!(s.contract_violations().is_empty());
    }

    #[test]
    fn sampler_linear_exact_path_and_mc_fallback() {
        let dist: Distribution<f64> = SamplerDistribution::new(2, |rng: &mut ChaCha8Rng| {
            if rng.random::<bool>() { vec![1.0, 0.0] } else { vec![0.0, 1.0] }
        })
        .with_exact_mean(vec![0.5, 0.5])
        .with_l2_radius(1.0)
        .into();
        let lin = QueryFn::clipped_linear(vec![0.5, -0.25], -1.0, 1.0);
        let mut s = OracleSession::stat(&dist, 0.2, Perturbation::Exact).unwrap();
        assert_eq!(s.stat_query(&lin).unwrap(), 0.125);
        assert_eq!(s.log()[0].p_exact, Some(0.125));

        let nonlin = QueryFn::new(|x: &[f64]| x[0] * x[0]);
        let v = s.stat_query(&nonlin).unwrap();
        assert!((v - 0.5).abs() < 0.02);
        assert_eq!(s.log()[1].p_exact, None);
    }

    #[test]
    fn determinism_and_csv() {
        let q = quarter();
        let h = QueryFn::coordinate(2, 0);
        let run = || {
            let mut s = OracleSession::stat(&q, 0.05, Perturbation::Empirical { samples: 50, seed: 4 }).unwrap();
            let vals: Vec<f64> = (0..20).map(|_| s.stat_query(&h).unwrap()).collect();
            let mut buf = Vec::new();
            s.write_log_csv(&mut buf).unwrap();
            (vals, String::from_utf8(buf).unwrap())
        };
        let (a, csv) = run();
        assert_eq!(a, run().0);
        assert!(csv.starts_with("query_id,p_exact,v,tau\n0,2.5e-1,"));
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn window_snapping() {
        let p = 0.3f64;
        let v = within_window(p, p + 0.1, 0.1);
        assert!((v - p).abs() <= 0.1);
        assert_eq!(within_window(0.0, 0.05, 0.1), 0.05);
    }

    #[test]
    fn invalid_sessions() {
        let q = quarter();
        assert!(OracleSession::stat(&q, 0.0, Perturbation::Exact).is_err());
        assert!(OracleSession::vstat(&q, -1.0, Perturbation::Exact).is_err());
        assert!(OracleSession::stat(&q, 0.1, Perturbation::AdversarialSign { sign: 2 }).is_err());
        assert!(OracleSession::stat(&q, 0.1, Perturbation::Empirical { samples: 0, seed: 0 }).is_err());
    }
}
