//! The `estimate`, `hardness`, `verify` and `bench` subcommands.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use sq_meanest::analysis::{check_ring_inclusion, discrimination_report, interpolation_suite};
use sq_meanest::estimators::{schatten_tolerance, symmetric_tolerance};
use sq_meanest::hard_instances::{all_sign_vectors, basis_witness_lp, build_perturbed, build_reference};
use sq_meanest::norms::validate_symmetric;
use sq_meanest::{
    estimate_mean_l2, estimate_mean_linf, estimate_mean_schatten, estimate_mean_symmetric, exact_mean, Distribution,
    Error, Norm, NormKind, NormSpec, OracleSession, SymmetricNorm,
};

use crate::output::{Cell, Format, Table};
use crate::specs::{
    config_err, default_t2_bound, parse_family, parse_instance, random_ball_distribution, Family, OracleKindSpec,
    OracleSpec,
};

/// Flags shared by the experiment subcommands.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Norm: lp:<p>, linf, schatten:<p>:<d>, topk:<k>, gauge:<name>.
    #[arg(long)]
    pub norm: Option<String>,
    /// Oracle: stat:<tau|auto>:<mode> or vstat:<t>:<mode>; mode is exact,
    /// honest, adversarial[:+1|:-1] or empirical:<n>.
    #[arg(long, default_value = "stat:auto:honest")]
    pub oracle: String,
    /// Target accuracy in (0, 1).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Upper bound on the type-2 constant of the norm.
    #[arg(long = "t2-bound")]
    pub t2_bound: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Output file; stdout when omitted or `-`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorChoice {
    /// linf for ℓ∞, l2 for ℓ₂, schatten for Schatten norms, symmetric otherwise.
    Auto,
    Linf,
    L2,
    Symmetric,
    Schatten,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Distribution file, type2:{..}, schatten:{..} or random:{"dim","points"}.
    #[arg(long)]
    pub instance: String,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Auto)]
    pub estimator: EstimatorChoice,
    /// Trust a gauge norm as symmetric without running the validation probes.
    #[arg(long)]
    pub assume_symmetric: bool,
}

#[derive(Debug, Args)]
pub struct HardnessArgs {
    #[command(flatten)]
    pub common: Common,
    /// Hard family: type2:{"witness","eps0"} or schatten:{"d","p","eps0"}.
    #[arg(long)]
    pub instance: String,
    /// Comma-separated STAT tolerances to sweep (default eps0·2^{-k}, k = 0..8).
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Norm to verify; without it a default suite (ℓ₂, ℓ₄, ℓ∞, top-4) runs.
    #[arg(long)]
    pub norm: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long = "t2-bound")]
    pub t2_bound: Option<f64>,
    /// Probes per check.
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Support size of the random benchmark distribution.
    #[arg(long, default_value_t = 8)]
    pub points: usize,
    #[arg(long, value_enum, default_value_t = EstimatorChoice::Auto)]
    pub estimator: EstimatorChoice,
}

/// Outcome of a subcommand: the table was written; `failed` carries the
/// invariant that broke, if any.
pub struct Outcome {
    pub failed: Option<String>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    splitmix(seed ^ splitmix(rep as u64))
}

fn check_eps(eps: f64) -> anyhow::Result<f64> {
    if eps > 0.0 && eps < 1.0 {
        Ok(eps)
    } else {
        Err(config_err(format!("--eps must lie in (0, 1), got {eps}")))
    }
}

fn check_reps(reps: usize) -> anyhow::Result<()> {
    if reps == 0 {
        return Err(config_err("--reps must be at least 1"));
    }
    Ok(())
}

fn parse_norm_spec(s: &str) -> anyhow::Result<NormSpec> {
    s.parse().map_err(|e: Error| config_err(e.to_string()))
}

fn norm_spec_of(norm: &Norm<f64>) -> Option<NormSpec> {
    norm.name().parse().ok()
}

/// Estimator resolved against a concrete norm.
enum Plan {
    Linf,
    L2,
    Symmetric { norm: SymmetricNorm<f64>, t2: f64 },
    Schatten { side: usize, p: f64 },
}

impl Plan {
    fn name(&self) -> &'static str {
        match self {
            Plan::Linf => "linf",
            Plan::L2 => "l2",
            Plan::Symmetric { .. } => "symmetric",
            Plan::Schatten { .. } => "schatten",
        }
    }

    fn resolve(
        choice: EstimatorChoice,
        norm: &Norm<f64>,
        t2_bound: Option<f64>,
        assume_symmetric: bool,
        seed: u64,
    ) -> anyhow::Result<Self> {
        let choice = match (choice, norm.kind()) {
            (EstimatorChoice::Auto, NormKind::SchattenP { .. }) => EstimatorChoice::Schatten,
            (EstimatorChoice::Auto, _) if norm.name() == "linf" => EstimatorChoice::Linf,
            (EstimatorChoice::Auto, _) if norm.name() == "lp:2" => EstimatorChoice::L2,
            (EstimatorChoice::Auto, _) => EstimatorChoice::Symmetric,
            (c, _) => c,
        };
        Ok(match choice {
            EstimatorChoice::Linf => Plan::Linf,
            EstimatorChoice::L2 => Plan::L2,
            EstimatorChoice::Schatten => match norm.kind() {
                NormKind::SchattenP { p, side } => Plan::Schatten { side: *side, p: *p },
                _ => return Err(config_err(format!("the Schatten estimator needs a Schatten norm, got {}", norm.name()))),
            },
            EstimatorChoice::Symmetric | EstimatorChoice::Auto => {
                let sym = match SymmetricNorm::new(norm.clone()) {
                    Ok(s) => s,
                    Err(Error::NotValidated(_)) if assume_symmetric => SymmetricNorm::assume_symmetric(norm.clone())?,
                    Err(Error::NotValidated(name)) => {
                        let report = validate_symmetric(norm, 500, seed);
                        SymmetricNorm::certify(norm.clone(), &report).map_err(|_| {
                            config_err(format!(
                                "{name} failed symmetric-norm validation ({}); pass --assume-symmetric to override",
                                report.failures().join(", ")
                            ))
                        })?
                    }
                    Err(e) => return Err(config_err(e.to_string())),
                };
                let t2 = match t2_bound.or_else(|| norm_spec_of(norm).and_then(|s| default_t2_bound(&s, norm.dim()))) {
                    Some(t2) if t2 >= 1.0 => t2,
                    Some(t2) => return Err(config_err(format!("--t2-bound must be at least 1, got {t2}"))),
                    None => return Err(config_err(format!("{} has no default type-2 bound; pass --t2-bound", norm.name()))),
                };
                Plan::Symmetric { norm: sym, t2 }
            }
        })
    }

    fn auto_tolerance(&self, d: usize, eps: f64) -> f64 {
        match self {
            Plan::Linf | Plan::L2 => eps,
            Plan::Symmetric { t2, .. } => symmetric_tolerance(d, eps, *t2),
            Plan::Schatten { side, p } => schatten_tolerance(*side, *p, eps),
        }
    }
}

/// Result of one estimator run.
struct Run {
    estimate: Vec<f64>,
    queries: usize,
    rings: Option<RingSummary>,
}

struct RingSummary {
    used: usize,
    skipped: usize,
    per_ring: String,
    disjoint: usize,
}

fn run_plan(plan: &Plan, session: &mut OracleSession<'_, f64>, d: usize, eps: f64, seed: u64) -> anyhow::Result<Run> {
    let (estimate, rings) = match plan {
        Plan::Linf => (estimate_mean_linf(session, d)?, None),
        Plan::L2 => (estimate_mean_l2(session, d, seed)?, None),
        Plan::Schatten { side, p } => (estimate_mean_schatten(session, *side, *p, seed)?.into_vec(), None),
        Plan::Symmetric { norm, t2 } => {
            let report = estimate_mean_symmetric(session, norm, eps, *t2, seed)?;
            let rings = RingSummary {
                used: report.per_ring.iter().filter(|r| !r.skipped).count(),
                skipped: report.per_ring.iter().filter(|r| r.skipped).count(),
                per_ring: report.per_ring.iter().map(|r| r.queries.to_string()).collect::<Vec<_>>().join(";"),
                disjoint: report.per_ring.iter().filter(|r| r.balls_disjoint).count(),
            };
            (report.estimate, Some(rings))
        }
    };
    Ok(Run {
        estimate,
        queries: session.query_count(),
        rings,
    })
}

fn open_session<'a>(
    dist: &'a Distribution<f64>,
    oracle: &OracleSpec,
    tolerance: Option<f64>,
    seed: u64,
) -> anyhow::Result<OracleSession<'a, f64>> {
    let perturbation = oracle.perturbation(seed);
    Ok(match oracle.kind {
        OracleKindSpec::Stat(_) => OracleSession::stat(dist, tolerance.expect("resolved tolerance"), perturbation)?,
        OracleKindSpec::Vstat(t) => OracleSession::vstat(dist, t, perturbation)?,
    })
}

fn error_in(norm: &Norm<f64>, estimate: &[f64], mean: Option<&[f64]>) -> anyhow::Result<Option<f64>> {
    mean.map(|m| {
        let diff: Vec<f64> = estimate.iter().zip(m).map(|(a, b)| a - b).collect();
        Ok(norm.eval(&diff)?)
    })
    .transpose()
}

pub fn estimate(args: &EstimateArgs) -> anyhow::Result<Outcome> {
    let c = &args.common;
    let eps = check_eps(c.eps.unwrap_or(0.1))?;
    check_reps(c.reps)?;
    let oracle: OracleSpec = c.oracle.parse()?;
    let norm_spec = c.norm.as_deref().map(parse_norm_spec).transpose()?;
    let instance = parse_instance(&args.instance, norm_spec.as_ref(), c.seed)?;
    let d = instance.dim();
    let norm = match (&norm_spec, &instance.norm) {
        (Some(spec), _) => spec.build(d).map_err(|e| config_err(e.to_string()))?,
        (None, Some(n)) => n.clone(),
        (None, None) => return Err(config_err("--norm is required for this instance")),
    };
    let plan = Plan::resolve(args.estimator, &norm, c.t2_bound, args.assume_symmetric, c.seed)?;
    let tolerance = match oracle.kind {
        OracleKindSpec::Stat(tau) => Some(tau.unwrap_or_else(|| plan.auto_tolerance(d, eps))),
        OracleKindSpec::Vstat(_) => None,
    };
    let mean = match exact_mean(&instance.dist) {
        Ok(m) => Some(m),
        Err(Error::NoExactMean) => None,
        Err(e) => return Err(e.into()),
    };

    let start = Instant::now();
    let mut rows: Vec<(usize, anyhow::Result<Vec<Cell>>)> = (0..c.reps)
        .into_par_iter()
        .map(|rep| {
            let row = (|| {
                let seed = rep_seed(c.seed, rep);
                let mut session = open_session(&instance.dist, &oracle, tolerance, seed)?;
                let run = run_plan(&plan, &mut session, d, eps, splitmix(seed))?;
                let err = error_in(&norm, &run.estimate, mean.as_deref())?;
                let rings = run.rings.as_ref();
                Ok(vec![
                    rep.into(),
                    seed.into(),
                    run.queries.into(),
                    err.into(),
                    err.map(|e| e <= eps).into(),
                    rings.map(|r| r.used).into(),
                    rings.map(|r| r.skipped).into(),
                    rings.map(|r| r.per_ring.clone()).into(),
                    rings.map(|r| r.disjoint).into(),
                    session.contract_violations().len().into(),
                ])
            })();
            (rep, row)
        })
        .collect();
    rows.sort_by_key(|(rep, _)| *rep);

    let mut table = Table::new(
        "estimate",
        vec![
            "rep",
            "seed",
            "queries",
            "error",
            "within_eps",
            "rings_used",
            "rings_skipped",
            "ring_queries",
            "balls_disjoint",
            "contract_violations",
        ],
    );
    table.meta("norm", norm.name());
    table.meta("instance", &instance.description);
    table.meta("oracle", &c.oracle);
    table.meta("estimator", plan.name());
    table.meta("eps", eps);
    table.meta("tolerance", tolerance.map_or("vstat".to_string(), |t| t.to_string()));
    if let Plan::Symmetric { t2, .. } = &plan {
        table.meta("t2_bound", t2);
    }
    table.meta("seed", c.seed);
    table.meta("reps", c.reps);
    table.meta("elapsed_ms", start.elapsed().as_millis());
    for (rep, row) in rows {
        table.push(row.with_context(|| format!("repetition {rep}"))?);
    }
    table.emit(c.out.as_deref(), c.format)?;
    Ok(Outcome { failed: None })
}

/// `(error, queries)` of one hardness repetition.
type JobResult = anyhow::Result<(f64, usize)>;

pub fn hardness(args: &HardnessArgs) -> anyhow::Result<Outcome> {
    let c = &args.common;
    check_reps(c.reps)?;
    let oracle: OracleSpec = c.oracle.parse()?;
    if !matches!(oracle.kind, OracleKindSpec::Stat(_)) {
        return Err(config_err("hardness sweeps STAT tolerances; use a stat:* oracle"));
    }
    let family = parse_family(&args.instance)?;
    let eps0 = family.eps0();
    let degenerate = eps0 == 0.0;
    let eps = check_eps(c.eps.unwrap_or(if degenerate { 0.1 } else { eps0 }))?;
    let taus = match &args.taus {
        Some(t) if t.is_empty() || t.iter().any(|&x| !(x > 0.0 && x.is_finite())) => {
            return Err(config_err("--taus must be positive numbers"))
        }
        Some(t) => t.clone(),
        None => (0..=8).map(|k| eps * 0.5f64.powi(k)).collect(),
    };
    let norm = family.norm()?;
    let d = norm.dim();
    let plan = match &family {
        Family::Type2 { witness, .. } => {
            let t2 = c.t2_bound.unwrap_or_else(|| witness.t2_hat().max(1.0));
            Plan::resolve(EstimatorChoice::Symmetric, &norm, Some(t2), false, c.seed)?
        }
        Family::Schatten { .. } => Plan::resolve(EstimatorChoice::Schatten, &norm, None, false, c.seed)?,
    };
    if degenerate {
        eprintln!("warning: eps0 = 0 gives a degenerate family (all members equal the reference); success is undefined");
    }

    // Common random numbers: repetition `rep` uses the same family member at
    // every tolerance, so the curve reflects the tolerance alone.
    let jobs: Vec<(usize, usize)> = (0..taus.len()).flat_map(|i| (0..c.reps).map(move |r| (i, r))).collect();
    let mut results: Vec<((usize, usize), JobResult)> = jobs
        .into_par_iter()
        .map(|(i, rep)| {
            let res = (|| {
                let seed = rep_seed(c.seed, rep);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (dist, mean) = family.draw(&mut rng)?;
                let mut session = open_session(&dist, &oracle, Some(taus[i]), splitmix(seed ^ i as u64))?;
                let run = run_plan(&plan, &mut session, d, eps, splitmix(seed))?;
                let err = error_in(&norm, &run.estimate, Some(&mean))?.expect("mean supplied");
                Ok((err, run.queries))
            })();
            ((i, rep), res)
        })
        .collect();
    results.sort_by_key(|(k, _)| *k);

    let mut table = Table::new(
        "hardness",
        vec!["tau", "reps", "successes", "success_rate", "mean_error", "max_error", "mean_queries", "degenerate"],
    );
    table.meta("norm", norm.name());
    table.meta("instance", &args.instance);
    table.meta("oracle_mode", &c.oracle);
    table.meta("estimator", plan.name());
    table.meta("eps0", eps0);
    table.meta("eps", eps);
    table.meta("success", "error <= eps/2");
    table.meta("seed", c.seed);
    let mut iter = results.into_iter();
    for &tau in &taus {
        let mut errors = Vec::with_capacity(c.reps);
        let mut queries = 0usize;
        for ((_, rep), res) in iter.by_ref().take(c.reps) {
            let (err, q) = res.with_context(|| format!("tau {tau}, repetition {rep}"))?;
            errors.push(err);
            queries += q;
        }
        let successes = errors.iter().filter(|&&e| e <= eps / 2.0).count();
        let n = errors.len() as f64;
        table.push(vec![
            tau.into(),
            c.reps.into(),
            (!degenerate).then_some(successes).into(),
            (!degenerate).then_some(successes as f64 / n).into(),
            (errors.iter().sum::<f64>() / n).into(),
            errors.iter().copied().fold(0.0, f64::max).into(),
            (queries as f64 / n).into(),
            degenerate.into(),
        ]);
    }
    table.emit(c.out.as_deref(), c.format)?;
    Ok(Outcome { failed: None })
}

pub fn verify(args: &VerifyArgs) -> anyhow::Result<Outcome> {
    if args.trials == 0 {
        return Err(config_err("--trials must be at least 1"));
    }
    if args.dim < 2 {
        return Err(config_err("--dim must be at least 2"));
    }
    let d = args.dim;
    let log_d = (d as f64).log2();
    let suite: Vec<(NormSpec, Option<f64>)> = match &args.norm {
        Some(s) => {
            let spec = parse_norm_spec(s)?;
            let t2 = args.t2_bound.or_else(|| default_t2_bound(&spec, d));
            vec![(spec, t2)]
        }
        None => vec![
            (NormSpec::Lp(2.0), Some(1.0)),
            (NormSpec::Lp(4.0), Some(3f64.sqrt())),
            (NormSpec::Linf, Some((6.0 * log_d).sqrt())),
            (NormSpec::TopK(4), Some((6.0 * log_d).sqrt())),
        ],
    };

    let mut table = Table::new("verify", vec!["check", "norm", "passed", "statistic", "detail"]);
    table.meta("dim", d);
    table.meta("trials", args.trials);
    table.meta("seed", args.seed);
    let mut failed: Vec<String> = Vec::new();
    let mut record = |table: &mut Table, check: &str, norm: &str, passed: bool, stat: f64, detail: String| {
        if !passed {
            failed.push(format!("{check} ({norm}): {detail}"));
        }
        table.push(vec![check.into(), norm.into(), passed.into(), stat.into(), detail.into()]);
    };

    for (spec, t2) in &suite {
        let norm: Norm<f64> = spec.build(d).map_err(|e| config_err(e.to_string()))?;
        let name = norm.name();
        let report = validate_symmetric(&norm, args.trials, args.seed);
        let worst = [report.permutation, report.sign, report.homogeneity, report.triangle]
            .into_iter()
            .fold(0.0, f64::max);
        let detail = if report.passed {
            "permutation, sign, homogeneity, triangle".to_string()
        } else {
            format!("violated: {}", report.failures().join(", "))
        };
        record(&mut table, "symmetric-norm", &name, report.passed, worst, detail);
        if !report.passed {
            continue;
        }
        let Some(t2) = *t2 else {
            return Err(config_err(format!("{name} has no default type-2 bound; pass --t2-bound")));
        };
        let sym = SymmetricNorm::certify(norm, &report)?;
        let interp = interpolation_suite(&sym, t2, args.trials, args.seed)?;
        record(
            &mut table,
            "interpolation",
            &name,
            interp.passed,
            interp.max_ratio,
            format!("{} failures / {} probes, max ||x||/rhs", interp.failures, interp.trials),
        );
        for j in 0..=3u32 {
            let ring = check_ring_inclusion(&sym, j, t2, args.trials, args.seed.wrapping_add(u64::from(j)))?;
            record(
                &mut table,
                "ring-inclusion",
                &name,
                ring.passed,
                ring.max_body_ratio,
                format!(
                    "j={j}: first inclusion {}, second inclusion {}, max l2/m {:.4}",
                    ring.first_inclusion, ring.second_inclusion, ring.max_l2_over_m
                ),
            );
        }
    }

    // Discrimination norm on the smallest non-trivial type-2 family.
    let w = basis_witness_lp::<f64>(3, 1.0)?;
    let eps0 = 0.5 * w.max_eps0();
    let family = all_sign_vectors(3)?
        .iter()
        .map(|z| build_perturbed(&w, z, eps0))
        .collect::<sq_meanest::Result<Vec<_>>>()?;
    let disc = discrimination_report(&build_reference(&w)?, &family, args.trials, args.seed)?;
    record(
        &mut table,
        "discrimination",
        "lp:1",
        disc.passed,
        disc.exact,
        format!("exact {:.6}, monte carlo {:.6} over {} directions", disc.exact, disc.monte_carlo, disc.samples_h),
    );

    table.emit(args.out.as_deref(), args.format)?;
    Ok(Outcome {
        failed: (!failed.is_empty()).then(|| failed.join("; ")),
    })
}

pub fn bench(args: &BenchArgs) -> anyhow::Result<Outcome> {
    let c = &args.common;
    let eps = check_eps(c.eps.unwrap_or(0.1))?;
    check_reps(c.reps)?;
    if args.points == 0 || args.dim == 0 {
        return Err(config_err("--dim and --points must be at least 1"));
    }
    let oracle: OracleSpec = c.oracle.parse()?;
    let spec = parse_norm_spec(c.norm.as_deref().unwrap_or("lp:2"))?;
    let d = spec.natural_dim().unwrap_or(args.dim);
    let norm: Norm<f64> = spec.build(d).map_err(|e| config_err(e.to_string()))?;
    let plan = Plan::resolve(args.estimator, &norm, c.t2_bound, false, c.seed)?;
    let tolerance = match oracle.kind {
        OracleKindSpec::Stat(tau) => Some(tau.unwrap_or_else(|| plan.auto_tolerance(d, eps))),
        OracleKindSpec::Vstat(_) => None,
    };

    let mut table = Table::new("bench", vec!["rep", "estimator", "dim", "queries", "error", "wall_ms"]);
    table.meta("norm", norm.name());
    table.meta("oracle", &c.oracle);
    table.meta("eps", eps);
    table.meta("points", args.points);
    table.meta("seed", c.seed);
    // Repetitions run sequentially so that wall times are not distorted by
    // contention.
    for rep in 0..c.reps {
        let seed = rep_seed(c.seed, rep);
        let explicit = random_ball_distribution(&norm, args.points, seed)?;
        let mean = explicit.mean();
        let dist: Distribution<f64> = explicit.into();
        let mut session = open_session(&dist, &oracle, tolerance, seed)?;
        let start = Instant::now();
        let run = run_plan(&plan, &mut session, d, eps, splitmix(seed))?;
        let wall = start.elapsed().as_secs_f64() * 1e3;
        let err = error_in(&norm, &run.estimate, Some(&mean))?;
        table.push(vec![rep.into(), plan.name().into(), d.into(), run.queries.into(), err.into(), wall.into()]);
    }
    table.emit(c.out.as_deref(), c.format)?;
    Ok(Outcome { failed: None })
}
