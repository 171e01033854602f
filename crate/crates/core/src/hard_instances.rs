//! Lower-bound distribution families: the type-2 witness family and the
//! Schatten signed-permutation family, each with closed-form means.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::norms::{Norm, NormSpec};
use crate::oracle::{Distribution, ExplicitDistribution, SamplerDistribution};
use crate::scalar::{count, lit, to_f64, tol, Scalar};

/// Largest `n` for which [`T2Mode::Exact`] enumerates sign vectors.
pub const MAX_EXACT_SIGNS: usize = 20;

/// Largest side length for which the Schatten families expose a full
/// enumeration of their `d!·2^d` support.
pub const MAX_SCHATTEN_ENUMERATION: usize = 6;

/// Default smallness constant `γ₀` in `ε₀ ≤ γ₀·d^{−1/p}`.
pub const DEFAULT_GAMMA0: f64 = 0.1;

/// Default number of sign draws when a witness is too large to enumerate.
pub const DEFAULT_T2_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum T2Mode {
    /// Enumerates all `2^{n−1}` sign vectors with `ε₁ = +1` (the norm is even).
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

/// Monte Carlo estimate of `t₂(x)` with its standard error (delta method).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct T2Estimate<T> {
    pub value: T,
    pub std_error: T,
}

fn sum_sq_norms<T: Scalar>(norm: &Norm<T>, xs: &[Vec<T>]) -> Result<T> {
    xs.iter().try_fold(T::zero(), |acc, x| Ok(acc + norm.eval(x)?.powi(2)))
}

fn check_vectors<T: Scalar>(norm: &Norm<T>, xs: &[Vec<T>]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidWitness("no vectors".into()));
    }
    for x in xs {
        if x.len() != norm.dim() {
            return Err(Error::DimensionMismatch {
                expected: norm.dim(),
                got: x.len(),
            });
        }
    }
    Ok(())
}

/// `E_ε‖Σ εᵢxᵢ‖²_X` by Gray-code enumeration over signs with `ε₁ = +1`.
fn rademacher_second_moment_exact<T: Scalar>(norm: &Norm<T>, xs: &[Vec<T>]) -> Result<T> {
    let n = xs.len();
    if n > MAX_EXACT_SIGNS {
        return Err(Error::EnumerationTooLarge {
            max: MAX_EXACT_SIGNS,
            got: n,
        });
    }
    let d = norm.dim();
    let mut signs = vec![T::one(); n];
    let mut sum = vec![T::zero(); d];
    for x in xs {
        for (s, &v) in sum.iter_mut().zip(x) {
            *s = *s + v;
        }
    }
    let patterns = 1usize << (n - 1);
    let mut acc = norm.eval(&sum)?.powi(2);
    let two = lit::<T>(2.0);
    for k in 1..patterns {
        // Gray code step k flips sign index (trailing zeros of k) + 1.
        let i = k.trailing_zeros() as usize + 1;
        let f = -signs[i];
        signs[i] = f;
        for (s, &v) in sum.iter_mut().zip(&xs[i]) {
            *s = *s + two * f * v;
        }
        acc = acc + norm.eval(&sum)?.powi(2);
    }
    Ok(acc / count(patterns))
}

/// Type-2 ratio `t₂(x) = (E_ε‖Σεᵢxᵢ‖²_X)^{1/2} / (Σ‖xᵢ‖²_X)^{1/2}`.
pub fn t2_hat<T: Scalar>(norm: &Norm<T>, xs: &[Vec<T>], mode: T2Mode) -> Result<T> {
    match mode {
        T2Mode::Exact => {
            check_vectors(norm, xs)?;
            let lhs = rademacher_second_moment_exact(norm, xs)?;
            Ok((lhs / sum_sq_norms(norm, xs)?).sqrt())
        }
        T2Mode::MonteCarlo { samples, seed } => Ok(t2_hat_mc(norm, xs, samples, seed)?.value),
    }
}

/// Monte Carlo `t₂(x)` over `samples` uniformly random sign vectors.
pub fn t2_hat_mc<T: Scalar>(norm: &Norm<T>, xs: &[Vec<T>], samples: usize, seed: u64) -> Result<T2Estimate<T>> {
    check_vectors(norm, xs)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("Monte Carlo t2 needs at least 2 samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = norm.dim();
    let mut draws = Vec::with_capacity(samples);
    let mut sum = vec![T::zero(); d];
    for _ in 0..samples {
        sum.iter_mut().for_each(|s| *s = T::zero());
        for x in xs {
            let plus: bool = rng.random();
            for (s, &v) in sum.iter_mut().zip(x) {
                *s = if plus { *s + v } else { *s - v };
            }
        }
        draws.push(norm.eval(&sum)?.powi(2));
    }
    let n = count::<T>(samples);
    let mean = draws.iter().copied().sum::<T>() / n;
    let var = draws.iter().map(|&v| (v - mean).powi(2)).sum::<T>() / (n - T::one());
    let rhs = sum_sq_norms(norm, xs)?.sqrt();
    let value = mean.sqrt() / rhs;
    let std_error = (var / n).sqrt() / (lit::<T>(2.0) * mean.sqrt()) / rhs;
    Ok(T2Estimate { value, std_error })
}

/// Vectors `x₁…x_n` with `1 ≤ ‖xᵢ‖_X ≤ 2` and their measured type-2 ratio.
#[derive(Debug, Clone)]
pub struct Type2Witness<T> {
    vectors: Vec<Vec<T>>,
    norm: Norm<T>,
    norms: Vec<T>,
    t2_hat: T,
    l1x: T,
    l2x: T,
}

/// On-disk witness: `{"norm": "...", "vectors": [[...], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct WitnessFile<T> {
    pub norm: String,
    pub vectors: Vec<Vec<T>>,
}

impl<T: Scalar> Type2Witness<T> {
    /// Validates the vectors and measures `t₂(x)`.
    pub fn new(norm: Norm<T>, vectors: Vec<Vec<T>>, mode: T2Mode) -> Result<Self> {
        check_vectors(&norm, &vectors)?;
        let hi = lit::<T>(2.0) + tol(1e-9);
        let lo = T::one() - tol(1e-12);
        let norms = vectors.iter().map(|x| norm.eval(x)).collect::<Result<Vec<T>>>()?;
        if let Some(i) = norms.iter().position(|&n| n < lo || n > hi) {
            return Err(Error::InvalidWitness(format!(
                "vector {i} has norm {} outside [1, 2]",
                norms[i]
            )));
        }
        let t2_hat = t2_hat(&norm, &vectors, mode)?;
        let l1x = norms.iter().copied().sum();
        let l2x = norms.iter().map(|&n| n * n).sum::<T>().sqrt();
        Ok(Self {
            vectors,
            norm,
            norms,
            t2_hat,
            l1x,
            l2x,
        })
    }

    /// Exact mode when `n ≤ 20`, otherwise Monte Carlo with default settings.
    pub fn with_default_mode(norm: Norm<T>, vectors: Vec<Vec<T>>) -> Result<Self> {
        let mode = default_mode(vectors.len());
        Self::new(norm, vectors, mode)
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn norm(&self) -> &Norm<T> {
        &self.norm
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.norm.dim()
    }

    /// `‖xᵢ‖_X` for each vector.
    pub fn vector_norms(&self) -> &[T] {
        &self.norms
    }

    pub fn t2_hat(&self) -> T {
        self.t2_hat
    }

    /// `‖x‖_{L₁(X)} = Σ‖xᵢ‖_X`.
    pub fn l1x(&self) -> T {
        self.l1x
    }

    /// `‖x‖_{L₂(X)} = (Σ‖xᵢ‖²_X)^{1/2}`.
    pub fn l2x(&self) -> T {
        self.l2x
    }

    /// Largest admissible `ε₀ = t₂(x)·‖x‖_{L₂(X)} / ‖x‖_{L₁(X)}`.
    pub fn max_eps0(&self) -> T {
        self.t2_hat * self.l2x / self.l1x
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: WitnessFile<T> = serde_json::from_str(s)?;
        Self::from_file(file)
    }

    pub fn from_file(file: WitnessFile<T>) -> Result<Self> {
        let spec: NormSpec = file.norm.parse()?;
        let dim = file
            .vectors
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidWitness("no vectors".into()))?;
        Self::with_default_mode(spec.build(dim)?, file.vectors)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WitnessFile {
            norm: self.norm.name(),
            vectors: self.vectors.clone(),
        })?)
    }
}

fn default_mode(n: usize) -> T2Mode {
    if n <= MAX_EXACT_SIGNS {
        T2Mode::Exact
    } else {
        T2Mode::MonteCarlo {
            samples: DEFAULT_T2_SAMPLES,
            seed: 0,
        }
    }
}

/// Support `[x̂₁, −x̂₁, x̂₂, −x̂₂, …]` with `x̂ᵢ = xᵢ/‖xᵢ‖_X`.
fn signed_unit_support<T: Scalar>(w: &Type2Witness<T>) -> Vec<Vec<T>> {
    w.vectors
        .iter()
        .zip(&w.norms)
        .flat_map(|(x, &n)| {
            let unit: Vec<T> = x.iter().map(|&v| v / n).collect();
            let neg: Vec<T> = unit.iter().map(|&v| -v).collect();
            [unit, neg]
        })
        .collect()
}

/// Reference distribution: `Pr[±x̂ᵢ] = ‖xᵢ‖_X / (2·‖x‖_{L₁(X)})`. Its mean
/// is zero.
pub fn build_reference<T: Scalar>(w: &Type2Witness<T>) -> Result<ExplicitDistribution<T>> {
    let two_l1 = lit::<T>(2.0) * w.l1x;
    let weights = w.norms.iter().flat_map(|&n| [n / two_l1, n / two_l1]).collect();
    ExplicitDistribution::new(signed_unit_support(w), weights)?.with_ball_norm(w.norm.clone())
}

fn check_signs<T: Scalar>(w: &Type2Witness<T>, z: &[i8]) -> Result<()> {
    if z.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: z.len(),
        });
    }
    if z.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::InvalidArgument("sign vector entries must be ±1".into()));
    }
    Ok(())
}

/// Perturbed distribution `D_z`:
/// `Pr[±x̂ᵢ] = (‖xᵢ‖_X/‖x‖_{L₁(X)})·(1/2 ± zᵢ·ε₀·‖x‖_{L₁(X)} / (2·t₂(x)·‖x‖_{L₂(X)}))`.
pub fn build_perturbed<T: Scalar>(w: &Type2Witness<T>, z: &[i8], eps0: T) -> Result<ExplicitDistribution<T>> {
    check_signs(w, z)?;
    let max = w.max_eps0();
    if !(eps0 >= T::zero()) || eps0 > max * (T::one() + tol(1e-12)) {
        return Err(Error::Eps0TooLarge {
            eps0: to_f64(eps0),
            max: to_f64(max),
        });
    }
    let half = lit::<T>(0.5);
    let shift = eps0 * w.l1x / (lit::<T>(2.0) * w.t2_hat * w.l2x);
    let weights = w
        .norms
        .iter()
        .zip(z)
        .flat_map(|(&n, &s)| {
            let base = n / w.l1x;
            let b = if s > 0 { shift } else { -shift };
            [base * (half + b), base * (half - b)]
        })
        .map(|p| p.max(T::zero()))
        .collect();
    ExplicitDistribution::new(signed_unit_support(w), weights)?.with_ball_norm(w.norm.clone())
}

/// Closed form `μ_z = ε₀ / (t₂(x)·‖x‖_{L₂(X)}) · Σ zᵢxᵢ`.
pub fn analytic_mean_perturbed<T: Scalar>(w: &Type2Witness<T>, z: &[i8], eps0: T) -> Result<Vec<T>> {
    check_signs(w, z)?;
    let c = eps0 / (w.t2_hat * w.l2x);
    let mut mu = vec![T::zero(); w.dim()];
    for (x, &s) in w.vectors.iter().zip(z) {
        let cs = if s > 0 { c } else { -c };
        for (m, &v) in mu.iter_mut().zip(x) {
            *m = *m + cs * v;
        }
    }
    Ok(mu)
}

/// Standard basis `e₁…e_d` under `ℓ_p`, `1 ≤ p < 2`.
pub fn basis_witness_lp<T: Scalar>(d: usize, p: T) -> Result<Type2Witness<T>> {
    if !(p >= T::one() && p < lit(2.0)) {
        return Err(Error::InvalidArgument(format!("basis witness needs p in [1, 2), got {p}")));
    }
    let vectors = (0..d)
        .map(|i| {
            let mut e = vec![T::zero(); d];
            e[i] = T::one();
            e
        })
        .collect();
    Type2Witness::with_default_mode(Norm::lp(p, d)?, vectors)
}

/// Random search for a witness with large `t₂`: draws `trials` Gaussian
/// families of `n` vectors, rescales each vector to norm 1 and keeps the
/// family with the largest measured ratio.
pub fn random_search_witness<T: Scalar>(norm: &Norm<T>, n: usize, trials: usize, seed: u64) -> Result<Type2Witness<T>> {
    if n == 0 || trials == 0 {
        return Err(Error::InvalidArgument("random search needs n >= 1 and trials >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = default_mode(n);
    let mut best: Option<Type2Witness<T>> = None;
    for _ in 0..trials {
        let mut vectors = Vec::with_capacity(n);
        while vectors.len() < n {
            let g: Vec<T> = (0..norm.dim())
                .map(|_| lit::<T>(StandardNormal.sample(&mut rng)))
                .collect();
            let nv = norm.eval(&g)?;
            if nv > T::zero() {
                vectors.push(g.into_iter().map(|v| v / nv).collect());
            }
        }
        let cand = Type2Witness::new(norm.clone(), vectors, mode)?;
        if best.as_ref().is_none_or(|b| cand.t2_hat > b.t2_hat) {
            best = Some(cand);
        }
    }
    Ok(best.expect("trials >= 1"))
}

/// Parameters of the Schatten family on `d × d` matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SchattenInstanceParams<T> {
    pub d: usize,
    pub p: T,
    pub eps0: T,
    #[serde(default = "default_gamma0")]
    pub gamma0: T,
    #[serde(default)]
    pub a: Option<Vec<i8>>,
    #[serde(default)]
    pub b: Option<Vec<i8>>,
}

fn default_gamma0<T: Scalar>() -> T {
    lit(DEFAULT_GAMMA0)
}

impl<T: Scalar> SchattenInstanceParams<T> {
    pub fn reference(d: usize, p: T) -> Self {
        Self {
            d,
            p,
            eps0: T::zero(),
            gamma0: default_gamma0(),
            a: None,
            b: None,
        }
    }

    pub fn perturbed(d: usize, p: T, eps0: T, a: Vec<i8>, b: Vec<i8>) -> Self {
        Self {
            d,
            p,
            eps0,
            gamma0: default_gamma0(),
            a: Some(a),
            b: Some(b),
        }
    }

    /// `d^{1/p}` (1 for `p = ∞`).
    pub fn d_root(&self) -> T {
        count::<T>(self.d).powf(self.p.recip())
    }

    /// Largest admissible `ε₀ = γ₀·d^{−1/p}`.
    pub fn max_eps0(&self) -> T {
        self.gamma0 / self.d_root()
    }

    /// Probability `(1 + ε₀·d^{1/p})/2` that `zᵢ = a_i·b_{π(i)}`.
    pub fn bias(&self) -> T {
        (T::one() + self.eps0 * self.d_root()) / lit(2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be positive".into()));
        }
        if !(self.p >= T::one()) {
            return Err(Error::InvalidNorm(format!("Schatten exponent {} < 1", self.p)));
        }
        if !(self.gamma0 > T::zero() && self.gamma0 <= T::one()) {
            return Err(Error::InvalidArgument(format!("gamma0 = {} must lie in (0, 1]", self.gamma0)));
        }
        if !(self.eps0 >= T::zero()) || self.eps0 > self.max_eps0() * (T::one() + tol(1e-12)) {
            return Err(Error::Eps0TooLarge {
                eps0: to_f64(self.eps0),
                max: to_f64(self.max_eps0()),
            });
        }
        for v in [&self.a, &self.b].into_iter().flatten() {
            if v.len() != self.d {
                return Err(Error::DimensionMismatch {
                    expected: self.d,
                    got: v.len(),
                });
            }
            if v.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::InvalidArgument("a, b must be sign vectors".into()));
            }
        }
        if self.a.is_some() != self.b.is_some() {
            return Err(Error::InvalidArgument("a and b must be given together".into()));
        }
        Ok(())
    }

    /// Closed-form mean `(ε₀/d)·abᵀ`, or zero for the reference family.
    pub fn analytic_mean(&self) -> Matrix<T> {
        match (&self.a, &self.b) {
            (Some(a), Some(b)) => {
                let c = self.eps0 / count(self.d);
                let a: Vec<T> = a.iter().map(|&s| c * lit(f64::from(s))).collect();
                let b: Vec<T> = b.iter().map(|&s| lit(f64::from(s))).collect();
                Matrix::outer(&a, &b)
            }
            _ => Matrix::zeros(self.d, self.d),
        }
    }

    /// Frobenius norm of every sample: `d^{1/2 − 1/p}`.
    pub fn sample_frobenius(&self) -> T {
        count::<T>(self.d).sqrt() / self.d_root()
    }
}

/// `y(π, z)`: entry `(i, π(i))` equals `zᵢ / d^{1/p}`, row-major.
fn signed_permutation<T: Scalar>(perm: &[usize], z: &[i8], scale: T) -> Vec<T> {
    let d = perm.len();
    let mut y = vec![T::zero(); d * d];
    for (i, (&pi, &zi)) in perm.iter().zip(z).enumerate() {
        y[i * d + pi] = if zi > 0 { scale } else { -scale };
    }
    y
}

/// Lexicographic successor; returns `false` after the last permutation.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

fn schatten_distribution<T: Scalar>(params: SchattenInstanceParams<T>) -> Result<Distribution<T>> {
    params.validate()?;
    let d = params.d;
    let scale = params.d_root().recip();
    let bias = params.bias();
    let signs = params.a.clone().zip(params.b.clone());
    let draw_signs = signs.clone();
    let draw = move |rng: &mut ChaCha8Rng| {
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(rng);
        let z: Vec<i8> = match &draw_signs {
            None => (0..d).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
            Some((a, b)) => (0..d)
                .map(|i| {
                    let favored = a[i] * b[perm[i]];
                    if rng.random::<f64>() < to_f64(bias) {
                        favored
                    } else {
                        -favored
                    }
                })
                .collect(),
        };
        signed_permutation(&perm, &z, scale)
    };
    let mean = params.analytic_mean().into_vec();
    let mut sampler = SamplerDistribution::new(d * d, draw)
        .with_exact_mean(mean)
        .with_l2_radius(params.sample_frobenius())
        .with_ball_norm(Norm::schatten(params.p, d)?);
    if d <= MAX_SCHATTEN_ENUMERATION {
        sampler = sampler.with_enumeration(move || enumerate_schatten(d, scale, bias, signs.as_ref()));
    }
    Ok(sampler.into())
}

fn enumerate_schatten<T: Scalar>(
    d: usize,
    scale: T,
    bias: T,
    signs: Option<&(Vec<i8>, Vec<i8>)>,
) -> Result<ExplicitDistribution<T>> {
    let mut fact = 1usize;
    for k in 2..=d {
        fact *= k;
    }
    let perm_weight = T::one() / count(fact);
    let mut support = Vec::with_capacity(fact << d);
    let mut weights = Vec::with_capacity(fact << d);
    let mut perm: Vec<usize> = (0..d).collect();
    loop {
        for mask in 0..(1usize << d) {
            let z: Vec<i8> = (0..d).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect();
            let w = match signs {
                None => perm_weight / count(1usize << d),
                Some((a, b)) => z.iter().enumerate().fold(perm_weight, |acc, (i, &zi)| {
                    acc * if zi == a[i] * b[perm[i]] { bias } else { T::one() - bias }
                }),
            };
            if w > T::zero() {
                support.push(signed_permutation(&perm, &z, scale));
                weights.push(w);
            }
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    ExplicitDistribution::new(support, weights)
}

/// Reference family: `π` uniform on `S_d`, `z` uniform on `{±1}^d`; mean 0.
pub fn schatten_reference<T: Scalar>(params: &SchattenInstanceParams<T>) -> Result<Distribution<T>> {
    if params.a.is_some() || params.b.is_some() {
        return Err(Error::InvalidArgument("reference family takes no a, b".into()));
    }
    schatten_distribution(params.clone())
}

/// Perturbed family `D_{a,b}`: `π` uniform, then independently
/// `Pr[zᵢ = a_i·b_{π(i)}] = (1 + ε₀·d^{1/p})/2`; mean `(ε₀/d)·abᵀ`.
pub fn schatten_perturbed<T: Scalar>(params: &SchattenInstanceParams<T>) -> Result<Distribution<T>> {
    if params.a.is_none() || params.b.is_none() {
        return Err(Error::InvalidArgument("perturbed family needs a and b".into()));
    }
    schatten_distribution(params.clone())
}

/// Every sign vector of length `n` in binary order (bit `i` set means
/// `zᵢ = −1`).
pub fn all_sign_vectors(n: usize) -> Result<Vec<Vec<i8>>> {
    if n > MAX_EXACT_SIGNS {
        return Err(Error::EnumerationTooLarge {
            max: MAX_EXACT_SIGNS,
            got: n,
        });
    }
    Ok((0..1usize << n)
        .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { -1 } else { 1 }).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::singular_values;
    use crate::oracle::exact_mean;

    fn basis(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect()
    }

    #[test]
    fn reference_single_vector() {
        let w = Type2Witness::new(Norm::<f64>::lp(2.0, 3).unwrap(), basis(3)[..1].to_vec(), T2Mode::Exact).unwrap();
        let d = build_reference(&w).unwrap();
        assert_eq!(d.support(), &[vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]]);
        assert_eq!(d.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn perturbed_single_vector_by_hand() {
        let w = Type2Witness::new(Norm::<f64>::lp(2.0, 1).unwrap(), vec![vec![1.0]], T2Mode::Exact).unwrap();
        assert_eq!((w.t2_hat(), w.l1x(), w.l2x()), (1.0, 1.0, 1.0));
        let d = build_perturbed(&w, &[1], 0.2).unwrap();
        assert!((d.weights()[0] - 0.6).abs() < 1e-15);
        assert!((d.weights()[1] - 0.4).abs() < 1e-15);
        assert!(matches!(build_perturbed(&w, &[1], 1.5), Err(Error::Eps0TooLarge { .. })));
        assert_eq!(analytic_mean_perturbed(&w, &[-1], 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn t2_examples() {
        let l1 = Norm::<f64>::lp(1.0, 6).unwrap();
        assert!((t2_hat(&l1, &basis(6), T2Mode::Exact).unwrap() - 6f64.sqrt()).abs() < 1e-12);
        let l2 = Norm::<f64>::lp(2.0, 3).unwrap();
        let xs = vec![vec![0.3, -1.0, 2.0], vec![1.5, 0.1, 0.0], vec![-0.2, 0.7, 0.4]];
        assert!((t2_hat(&l2, &xs, T2Mode::Exact).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            t2_hat(&Norm::<f64>::lp(1.0, 21).unwrap(), &basis(21), T2Mode::Exact),
            Err(Error::EnumerationTooLarge { .. })
        ));
        assert!(t2_hat(&l2, &[], T2Mode::Exact).is_err());
    }

    #[test]
    fn t2_mc_agrees_with_exact() {
        let norm = Norm::<f64>::lp(1.3, 5).unwrap();
        for seed in 0..10 {
            let w = random_search_witness(&norm, 10, 1, seed).unwrap();
            let exact = t2_hat(&norm, w.vectors(), T2Mode::Exact).unwrap();
            let mc = t2_hat_mc(&norm, w.vectors(), 4000, seed + 100).unwrap();
            assert!((mc.value - exact).abs() <= 3.0 * mc.std_error, "{exact} vs {mc:?}");
        }
    }

    #[test]
    fn basis_witness_examples() {
        let w = basis_witness_lp::<f64>(8, 1.0).unwrap();
        assert!((w.t2_hat() - 8f64.sqrt()).abs() < 1e-12);
        // For ℓ_p the basis sum always has norm n^{1/p}, so t₂ = n^{1/p − 1/2}.
        let w = basis_witness_lp::<f64>(4, 1.5).unwrap();
        assert!((w.t2_hat() - 4f64.powf(1.0 / 1.5 - 0.5)).abs() < 1e-12);
        let w = basis_witness_lp::<f64>(4, 1.999).unwrap();
        assert!((w.t2_hat() - 1.0).abs() < 1e-3);
        assert!(basis_witness_lp::<f64>(4, 2.0).is_err());
    }

    #[test]
    fn perturbed_mean_is_closed_form_and_antisymmetric() {
        let w = basis_witness_lp::<f64>(5, 1.0).unwrap();
        let eps0 = 0.5 * w.max_eps0();
        let z = [1, -1, -1, 1, 1];
        let nz: Vec<i8> = z.iter().map(|s| -s).collect();
        let mu = build_perturbed(&w, &z, eps0).unwrap().mean();
        let closed = analytic_mean_perturbed(&w, &z, eps0).unwrap();
        let neg = analytic_mean_perturbed(&w, &nz, eps0).unwrap();
        for i in 0..5 {
            assert!((mu[i] - closed[i]).abs() < 1e-15);
            assert_eq!(neg[i], -closed[i]);
        }
        let r = build_reference(&w).unwrap().mean();
        assert!(r.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn second_moment_identity() {
        let w = basis_witness_lp::<f64>(6, 1.2).unwrap();
        let eps0 = 0.3 * w.max_eps0();
        let zs = all_sign_vectors(6).unwrap();
        let mean_sq: f64 = zs
            .iter()
            .map(|z| w.norm().eval(&analytic_mean_perturbed(&w, z, eps0).unwrap()).unwrap().powi(2))
            .sum::<f64>()
            / zs.len() as f64;
        assert!((mean_sq / (eps0 * eps0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn witness_json_roundtrip_and_validation() {
        let w = Type2Witness::<f64>::from_json(r#"{"norm":"lp:1","vectors":[[1,0],[0,2]]}"#).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w.l1x(), 3.0);
        let back = Type2Witness::<f64>::from_json(&w.to_json().unwrap()).unwrap();
        assert_eq!(back.t2_hat(), w.t2_hat());
        assert!(matches!(
            Type2Witness::<f64>::from_json(r#"{"norm":"lp:1","vectors":[[3,0]]}"#),
            Err(Error::InvalidWitness(_))
        ));
        assert!(Type2Witness::<f64>::from_json(r#"{"norm":"lp:1","vectors":[]}"#).is_err());
    }

    #[test]
    fn schatten_samples_are_scaled_signed_permutations() {
        let params = SchattenInstanceParams::<f64>::reference(5, 4.0);
        let dist = schatten_reference(&params).unwrap();
        let Distribution::Sampler(s) = &dist else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = 5f64.powf(-0.25);
        for _ in 0..50 {
            let y = s.draw(&mut rng);
            let m = Matrix::from_row_major(5, 5, y.clone()).unwrap();
            for sv in singular_values(&m).unwrap() {
                assert!((sv - target).abs() < 1e-12);
            }
            for i in 0..5 {
                assert_eq!((0..5).filter(|&j| m.get(i, j) != 0.0).count(), 1);
                assert_eq!((0..5).filter(|&j| m.get(j, i) != 0.0).count(), 1);
            }
            let norm = Norm::<f64>::schatten(4.0, 5).unwrap();
            assert!((norm.eval(&y).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn schatten_enumeration_matches_closed_form() {
        let a = vec![1, -1, 1];
        let b = vec![-1, -1, 1];
        let params = SchattenInstanceParams::<f64>::perturbed(3, 4.0, 0.05, a, b);
        let dist = schatten_perturbed(&params).unwrap();
        let Distribution::Sampler(s) = &dist else { panic!() };
        let enumerated = s.enumeration().unwrap().unwrap().mean();
        let closed = params.analytic_mean();
        for (x, y) in enumerated.iter().zip(closed.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert_eq!(exact_mean(&dist).unwrap(), closed.as_slice());
        assert_eq!(closed.rank(1e-10).unwrap(), 1);
        let sp = Norm::<f64>::schatten(4.0, 3).unwrap().eval(closed.as_slice()).unwrap();
        assert!((sp - 0.05).abs() < 1e-12);
    }

    #[test]
    fn schatten_params_validation() {
        let too_big = SchattenInstanceParams::<f64>::perturbed(16, 2.0, 0.05, vec![1; 16], vec![1; 16]);
        assert!(matches!(schatten_perturbed(&too_big), Err(Error::Eps0TooLarge { .. })));
        let bad_len = SchattenInstanceParams::<f64>::perturbed(4, 2.0, 0.01, vec![1; 3], vec![1; 4]);
        assert!(schatten_perturbed(&bad_len).is_err());
        assert!(schatten_perturbed(&SchattenInstanceParams::<f64>::reference(4, 2.0)).is_err());
        let inf = SchattenInstanceParams::<f64>::perturbed(4, f64::INFINITY, 0.1, vec![1; 4], vec![1; 4]);
        assert_eq!(inf.d_root(), 1.0);
        assert!((inf.bias() - 0.55).abs() < 1e-15);
    }

    #[test]
    fn next_permutation_counts() {
        let mut p = vec![0, 1, 2, 3];
        let mut n = 1;
        while next_permutation(&mut p) {
            n += 1;
        }
        assert_eq!(n, 24);
    }
}
