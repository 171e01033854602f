//! Parsing of the oracle and instance descriptors accepted on the command line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::Deserialize;
use serde_json::Value;

use sq_meanest::hard_instances::{basis_witness_lp, build_perturbed, build_reference, schatten_perturbed, schatten_reference, WitnessFile};
use sq_meanest::{Distribution, ExplicitDistribution, Norm, NormSpec, Perturbation, SchattenInstanceParams, Type2Witness};

/// Configuration mistakes: reported with exit status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleKindSpec {
    /// `None` selects the tolerance prescribed for the estimator.
    Stat(Option<f64>),
    Vstat(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeSpec {
    Exact,
    Honest,
    Adversarial(i8),
    Empirical(usize),
}

/// `stat:<tau|auto>:<mode>` or `vstat:<t>:<mode>`, where `<mode>` is one of
/// `exact`, `honest`, `adversarial[:+1|:-1]`, `empirical:<n>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSpec {
    pub kind: OracleKindSpec,
    pub mode: ModeSpec,
}

impl FromStr for OracleSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> anyhow::Result<Self> {
        let bad = || config_err(format!("cannot parse oracle spec `{s}`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        if parts.len() < 3 {
            return Err(bad());
        }
        let positive = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite() && *x > 0.0);
        let kind = match (parts[0], parts[1]) {
            ("stat", "auto") => OracleKindSpec::Stat(None),
            ("stat", v) => OracleKindSpec::Stat(Some(positive(v).ok_or_else(bad)?)),
            ("vstat", v) => OracleKindSpec::Vstat(positive(v).ok_or_else(bad)?),
            _ => return Err(bad()),
        };
        let mode = match &parts[2..] {
            ["exact"] => ModeSpec::Exact,
            ["honest"] => ModeSpec::Honest,
            ["adversarial"] | ["adversarial", "+1" | "1"] => ModeSpec::Adversarial(1),
            ["adversarial", "-1"] => ModeSpec::Adversarial(-1),
            ["empirical", n] => ModeSpec::Empirical(n.parse().ok().filter(|&n: &usize| n > 0).ok_or_else(bad)?),
            _ => return Err(bad()),
        };
        Ok(Self { kind, mode })
    }
}

impl OracleSpec {
    pub fn perturbation(&self, seed: u64) -> Perturbation<f64> {
        match self.mode {
            ModeSpec::Exact => Perturbation::Exact,
            ModeSpec::Honest => Perturbation::HonestRandom { seed },
            ModeSpec::Adversarial(sign) => Perturbation::AdversarialSign { sign },
            ModeSpec::Empirical(samples) => Perturbation::Empirical { samples, seed },
        }
    }
}

/// A concrete distribution together with what is known about it.
pub struct Instance {
    pub dist: Distribution<f64>,
    pub description: String,
    /// Norm implied by the instance (hard families carry their own norm).
    pub norm: Option<Norm<f64>>,
}

impl Instance {
    pub fn dim(&self) -> usize {
        self.dist.dim()
    }
}

/// Hard family descriptor: the signs are drawn per repetition.
pub enum Family {
    Type2 { witness: Type2Witness<f64>, eps0: f64 },
    Schatten { d: usize, p: f64, eps0: f64, gamma0: f64 },
}

impl Family {
    pub fn eps0(&self) -> f64 {
        match self {
            Family::Type2 { eps0, .. } | Family::Schatten { eps0, .. } => *eps0,
        }
    }

    pub fn norm(&self) -> anyhow::Result<Norm<f64>> {
        Ok(match self {
            Family::Type2 { witness, .. } => witness.norm().clone(),
            Family::Schatten { d, p, .. } => Norm::schatten(*p, *d)?,
        })
    }

    /// Member of the family for random signs drawn from `rng`, with its mean.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> anyhow::Result<(Distribution<f64>, Vec<f64>)> {
        let mut signs = |n: usize| -> Vec<i8> { (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect() };
        Ok(match self {
            Family::Type2 { witness, eps0 } => {
                let z = signs(witness.len());
                let dist = build_perturbed(witness, &z, *eps0)?;
                let mean = dist.mean();
                (dist.into(), mean)
            }
            Family::Schatten { d, p, eps0, gamma0 } => {
                let mut params = SchattenInstanceParams::perturbed(*d, *p, *eps0, signs(*d), signs(*d));
                params.gamma0 = *gamma0;
                let mean = params.analytic_mean().into_vec();
                (schatten_perturbed(&params)?, mean)
            }
        })
    }
}

#[derive(Deserialize)]
struct Type2Descriptor {
    witness: Value,
    #[serde(default)]
    z: Option<Vec<i8>>,
    eps0: f64,
}

#[derive(Deserialize)]
struct RandomDescriptor {
    dim: usize,
    points: usize,
}

fn parse_json<'a, D: Deserialize<'a>>(what: &str, s: &'a str) -> anyhow::Result<D> {
    serde_json::from_str(s).map_err(|e| config_err(format!("invalid {what} descriptor: {e}")))
}

fn read_file(path: &str) -> anyhow::Result<String> {
    std::fs::read_to_string(Path::new(path)).map_err(|e| config_err(format!("cannot read `{path}`: {e}")))
}

/// Witness given inline as `{"norm","vectors"}`, as a path to such a file,
/// or as `basis:<p>:<n>` for the standard basis of `ℓ_p^n`.
fn parse_witness(v: &Value) -> anyhow::Result<Type2Witness<f64>> {
    match v {
        Value::String(s) if s.starts_with("basis:") => {
            let parts: Vec<&str> = s.split(':').collect();
            let (p, n) = match parts.as_slice() {
                [_, p, n] => (p.parse::<f64>(), n.parse::<usize>()),
                _ => return Err(config_err(format!("cannot parse witness `{s}`"))),
            };
            match (p, n) {
                (Ok(p), Ok(n)) => Ok(basis_witness_lp(n, p)?),
                _ => Err(config_err(format!("cannot parse witness `{s}`"))),
            }
        }
        Value::String(path) => Ok(Type2Witness::from_json(&read_file(path)?)?),
        other => {
            let file: WitnessFile<f64> = serde_json::from_value(other.clone())
                .map_err(|e| config_err(format!("invalid witness: {e}")))?;
            Ok(Type2Witness::from_file(file)?)
        }
    }
}

fn parse_type2(json: &str) -> anyhow::Result<(Type2Descriptor, Type2Witness<f64>)> {
    let desc: Type2Descriptor = parse_json("type2", json)?;
    let witness = parse_witness(&desc.witness)?;
    if !(0.0..=witness.max_eps0() * (1.0 + 1e-12)).contains(&desc.eps0) {
        return Err(config_err(format!("eps0 = {} outside [0, {}]", desc.eps0, witness.max_eps0())));
    }
    Ok((desc, witness))
}

fn parse_schatten(json: &str) -> anyhow::Result<SchattenInstanceParams<f64>> {
    let params: SchattenInstanceParams<f64> = parse_json("schatten", json)?;
    params.validate()?;
    Ok(params)
}

/// Reads a hard-family descriptor (`type2:{..}` or `schatten:{..}`).
pub fn parse_family(spec: &str) -> anyhow::Result<Family> {
    if let Some(json) = spec.strip_prefix("type2:") {
        let (desc, witness) = parse_type2(json)?;
        Ok(Family::Type2 { witness, eps0: desc.eps0 })
    } else if let Some(json) = spec.strip_prefix("schatten:") {
        let params = parse_schatten(json)?;
        Ok(Family::Schatten {
            d: params.d,
            p: params.p,
            eps0: params.eps0,
            gamma0: params.gamma0,
        })
    } else {
        Err(config_err(format!("`{spec}` is not a hard-family descriptor (expected type2:{{..}} or schatten:{{..}})")))
    }
}

/// Reads an instance: a distribution file path, `type2:{..}`, `schatten:{..}`,
/// or `random:{"dim","points"}` (points on the unit ball of `norm`, drawn
/// from `seed`).
pub fn parse_instance(spec: &str, norm: Option<&NormSpec>, seed: u64) -> anyhow::Result<Instance> {
    if let Some(json) = spec.strip_prefix("type2:") {
        let (desc, witness) = parse_type2(json)?;
        let (explicit, description) = match &desc.z {
            Some(z) => (build_perturbed(&witness, z, desc.eps0)?, format!("type2 perturbed n={}", witness.len())),
            None => (build_reference(&witness)?, format!("type2 reference n={}", witness.len())),
        };
        return Ok(Instance {
            dist: explicit.into(),
            description,
            norm: Some(witness.norm().clone()),
        });
    }
    if let Some(json) = spec.strip_prefix("schatten:") {
        let params = parse_schatten(json)?;
        let (dist, description) = if params.a.is_some() && params.b.is_some() {
            (schatten_perturbed(&params)?, format!("schatten perturbed d={}", params.d))
        } else {
            (schatten_reference(&params)?, format!("schatten reference d={}", params.d))
        };
        return Ok(Instance {
            dist,
            description,
            norm: Some(Norm::schatten(params.p, params.d)?),
        });
    }
    if let Some(json) = spec.strip_prefix("random:") {
        let desc: RandomDescriptor = parse_json("random", json)?;
        if desc.points == 0 {
            return Err(config_err("random instance needs at least one point"));
        }
        let norm_spec = norm.ok_or_else(|| config_err("random instances require --norm"))?;
        let dim = norm_spec.natural_dim().unwrap_or(desc.dim);
        let norm: Norm<f64> = norm_spec.build(dim)?;
        let explicit = random_ball_distribution(&norm, desc.points, seed)?;
        return Ok(Instance {
            dist: explicit.into(),
            description: format!("random d={dim} points={}", desc.points),
            norm: None,
        });
    }
    let explicit = ExplicitDistribution::<f64>::from_json(&read_file(spec)?)?;
    Ok(Instance {
        dist: explicit.into(),
        description: format!("file {spec}"),
        norm: None,
    })
}

/// Explicit distribution on the unit ball of `norm`: Gaussian directions with
/// coordinates spread over several dyadic scales, rescaled to a uniform norm
/// in `(0, 1]`, with random weights.
pub fn random_ball_distribution(norm: &Norm<f64>, points: usize, seed: u64) -> anyhow::Result<ExplicitDistribution<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = norm.dim();
    let mut support = Vec::with_capacity(points);
    for _ in 0..points {
        let v: Vec<f64> = (0..d)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * 2f64.powf(-8.0 * rng.random::<f64>())
            })
            .collect();
        let n = norm.eval(&v)?;
        let target = 1.0 - rng.random::<f64>();
        support.push(if n > 0.0 { v.into_iter().map(|x| x * target / n).collect() } else { v });
    }
    let raw: Vec<f64> = (0..points).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / total).collect();
    Ok(ExplicitDistribution::new(support, weights)?.with_ball_norm(norm.clone())?)
}

/// Default `T₂` upper bound for norms with a standard one: `1` for `ℓ₂`,
/// `√(p−1)` for `ℓ_p` with `p > 2`, `d^{1/p−1/2}` for `ℓ_p` with `p < 2`
/// (the Banach–Mazur distance to `ℓ₂`), and `√(6·log₂ d)` for `ℓ∞` and top-k.
pub fn default_t2_bound(spec: &NormSpec, d: usize) -> Option<f64> {
    let log_d = (d as f64).log2().max(1.0);
    match spec {
        NormSpec::Lp(p) if *p >= 2.0 => Some((p - 1.0).sqrt()),
        NormSpec::Lp(p) => Some((d as f64).powf(1.0 / p - 0.5)),
        NormSpec::Linf | NormSpec::TopK(_) => Some((6.0 * log_d).sqrt()),
        _ => None,
    }
}
