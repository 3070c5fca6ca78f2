//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use log::info;
use rayon::prelude::*;
use rem_core::dataset::{titanic_synthetic, RecordSet};
use rem_core::evaluate::{workload_error, ErrorReport, ErrorRow, Norm};
use rem_core::lnn::LnnConfig;
use rem_core::mechanisms::{
    residual_scales, run_residualplanner_style, run_scalable_mwem, MwemConfig, NoiseScales,
    Postprocessor, ResidualPlannerConfig,
};
use rem_core::oracle::{run_suite, Fault};
use rem_core::privacy::solve_rho;
use rem_core::reconstruct::{replay_archive, MeasurementArchive, Reconstruction};
use rem_core::workload::{Clique, Domain, MarginalTable, OperatorCache};
use serde::{Deserialize, Serialize};

use crate::output::{marginal_records, print_json, write_json};
use crate::workload_spec::WorkloadSpec;
use crate::{
    FaultArg, MechanismKind, OracleArgs, PrepArgs, ReplayArgs, RunConfig, SynthArgs,
    EXIT_INFEASIBLE, EXIT_USAGE,
};

/// Seed of the bundled dataset used when no `--data` is given.
const BUNDLED_SEED: u64 = 0;
const BUNDLED_NAME: &str = "titanic-synthetic";
/// Environment variable capping the trial worker pool.
const WORKERS_ENV: &str = "REM_WORKERS";

/// Bad flags, paths or specs; reported with the usage exit status.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Prints the error chain and maps it to an exit status.
pub fn report_failure(err: &anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return ExitCode::from(EXIT_USAGE);
        }
        match cause.downcast_ref::<rem_core::Error>() {
            Some(rem_core::Error::InfeasibleBudget { breakdown, .. }) => {
                eprintln!("per-residual zCDP cost:");
                for (clique, cost) in breakdown {
                    eprintln!("  {{{clique}}}\t{cost:e}");
                }
                return ExitCode::from(EXIT_INFEASIBLE);
            }
            Some(rem_core::Error::DenseGuard { .. }) => return ExitCode::from(EXIT_USAGE),
            _ => {}
        }
    }
    ExitCode::FAILURE
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn load_domain(path: Option<&Path>) -> Result<Option<Domain>> {
    path.map(|p| Domain::load_json(p).with_context(|| format!("loading domain {}", p.display())))
        .transpose()
}

/// Dataset and its report name.
fn load_dataset(data: Option<&Path>, domain: Option<&Domain>) -> Result<(RecordSet, String)> {
    match data {
        Some(path) => {
            let rs = RecordSet::load_csv(path, domain)
                .with_context(|| format!("loading dataset {}", path.display()))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            Ok((rs, name))
        }
        None => {
            let rs = titanic_synthetic(BUNDLED_SEED)?;
            if domain.is_some_and(|d| d != rs.domain()) {
                return Err(usage(
                    "--domain without --data must match the bundled domain",
                ));
            }
            Ok((rs, BUNDLED_NAME.into()))
        }
    }
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            usage(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    Ok(builder.build()?)
}

#[derive(Debug, Deserialize)]
struct ScaleEntry {
    clique: Vec<String>,
    sigma2: f64,
}

fn load_scales(path: &Path, domain: &Domain) -> Result<BTreeMap<Clique, f64>> {
    let text = std::fs::read_to_string(path)?;
    let entries: Vec<ScaleEntry> = serde_json::from_str(&text)
        .map_err(|e| usage(format!("bad noise scale file {}: {e}", path.display())))?;
    entries
        .into_iter()
        .map(|e| {
            let c = domain
                .clique_from_names(&e.clique)
                .map_err(|err| usage(err.to_string()))?;
            Ok((c, e.sigma2))
        })
        .collect()
}

struct Validated {
    workload: WorkloadSpec,
    postprocessors: Vec<Postprocessor>,
}

/// Checks every flag before any data is read.
fn validate(cfg: &RunConfig) -> Result<Validated> {
    if cfg.epsilon.is_empty() || cfg.epsilon.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(usage("every epsilon must be positive and finite"));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(usage("delta must lie in (0, 1)"));
    }
    if cfg.trials == 0 {
        return Err(usage("trials must be at least 1"));
    }
    if cfg.rounds == 0 {
        return Err(usage("rounds must be at least 1"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(usage("alpha must lie in (0, 1)"));
    }
    if cfg.lnn_max_rounds == Some(0) {
        return Err(usage("lnn-max-rounds must be at least 1"));
    }
    if cfg
        .lnn_time_limit
        .is_some_and(|t| !(t > 0.0 && t.is_finite()))
    {
        return Err(usage("lnn-time-limit must be positive"));
    }
    if cfg.noise_scales.is_some() && cfg.mechanism != MechanismKind::Residualplanner {
        return Err(usage(
            "noise scales apply to the residualplanner mechanism only",
        ));
    }
    for (path, what) in [
        (&cfg.data, "dataset"),
        (&cfg.domain, "domain file"),
        (&cfg.noise_scales, "noise scale file"),
    ] {
        if let Some(p) = path {
            require_file(p, what)?;
        }
    }
    let workload = WorkloadSpec::parse(&cfg.workload).map_err(|e| usage(format!("{e:#}")))?;
    let mut postprocessors = Vec::new();
    for name in &cfg.postprocessors {
        let p: Postprocessor = name
            .parse()
            .map_err(|e: rem_core::Error| usage(e.to_string()))?;
        if postprocessors.contains(&p) {
            return Err(usage(format!("postprocessor `{p}` listed twice")));
        }
        postprocessors.push(p);
    }
    if postprocessors.is_empty() {
        return Err(usage("at least one postprocessor required"));
    }
    Ok(Validated {
        workload,
        postprocessors,
    })
}

/// Per-trial provenance written next to the archive.
#[derive(Debug, Serialize)]
struct TrialManifest {
    mechanism: MechanismKind,
    dataset: String,
    epsilon: f64,
    delta: f64,
    trial: usize,
    seed: u64,
    workload: Vec<Vec<String>>,
    lnn: LnnConfig,
    details: serde_json::Value,
}

struct TrialContext<'a> {
    cfg: &'a RunConfig,
    data: &'a RecordSet,
    dataset: &'a str,
    cache: &'a OperatorCache<f64>,
    workload: &'a [Clique],
    truth: &'a BTreeMap<Clique, MarginalTable<f64>>,
    postprocessors: &'a [Postprocessor],
    scales: &'a NoiseScales,
    lnn: &'a LnnConfig,
}

fn eps_label(eps: f64) -> String {
    format!("eps-{eps}")
}

fn run_trial(ctx: &TrialContext<'_>, epsilon: f64, trial: usize) -> Result<Vec<ErrorRow>> {
    let cfg = ctx.cfg;
    let domain = ctx.cache.domain();
    let seed = cfg.seed.wrapping_add(trial as u64);
    let dir = cfg
        .out
        .join(eps_label(epsilon))
        .join(format!("trial-{trial}"));
    std::fs::create_dir_all(&dir)?;

    let start = Instant::now();
    let (archive, reconstruction, details) = match cfg.mechanism {
        MechanismKind::Smwem => {
            let mut mc =
                MwemConfig::new(ctx.workload.to_vec(), cfg.rounds, epsilon, cfg.delta, seed);
            mc.alpha = cfg.alpha;
            let run = run_scalable_mwem(ctx.data, ctx.cache, &mc)?;
            (
                run.archive,
                run.reconstruction,
                serde_json::to_value(&run.manifest)?,
            )
        }
        MechanismKind::Residualplanner => {
            let rc = ResidualPlannerConfig {
                workload: ctx.workload.to_vec(),
                rho: solve_rho(epsilon, cfg.delta)?,
                scales: ctx.scales.clone(),
                seed,
                noiseless: false,
            };
            let run = run_residualplanner_style(ctx.data, ctx.cache, &rc)?;
            (
                run.archive,
                run.reconstruction,
                serde_json::to_value(&run.manifest)?,
            )
        }
    };
    let mechanism_secs = start.elapsed().as_secs_f64();
    archive.save_json(dir.join("archive.json"))?;
    write_json(
        &dir.join("manifest.json"),
        &TrialManifest {
            mechanism: cfg.mechanism,
            dataset: ctx.dataset.to_string(),
            epsilon,
            delta: cfg.delta,
            trial,
            seed,
            workload: ctx
                .workload
                .iter()
                .map(|g| domain.clique_names(g))
                .collect(),
            lnn: ctx.lnn.clone(),
            details,
        },
    )?;

    let mut rows = Vec::with_capacity(ctx.postprocessors.len());
    for &post in ctx.postprocessors {
        let start = Instant::now();
        let processed = post.apply(ctx.cache, ctx.workload, &reconstruction, ctx.lnn)?;
        let secs = mechanism_secs + start.elapsed().as_secs_f64();
        write_json(
            &dir.join(format!("marginals-{}.json", post.name())),
            &marginal_records(domain, &processed.marginals),
        )?;
        if let Some(report) = &processed.report {
            write_json(&dir.join(format!("solve-{}.json", post.name())), report)?;
        }
        rows.push(ErrorRow {
            mechanism: format!("{:?}", cfg.mechanism).to_lowercase(),
            postprocessor: post.name().to_string(),
            dataset: ctx.dataset.to_string(),
            epsilon,
            seed,
            l1_error: workload_error(ctx.truth, &processed.marginals, Norm::L1)?,
            l2_error: workload_error(ctx.truth, &processed.marginals, Norm::L2)?,
            seconds: if cfg.timings { secs } else { 0.0 },
            converged: processed.converged(),
        });
    }
    info!("epsilon {epsilon} trial {trial} done");
    Ok(rows)
}

pub fn run(cfg: RunConfig) -> Result<ExitCode> {
    let checked = validate(&cfg)?;

    let domain = load_domain(cfg.domain.as_deref())?;
    let (data, dataset) = load_dataset(cfg.data.as_deref(), domain.as_ref())?;
    let domain = data.domain().clone();
    let workload = checked
        .workload
        .resolve(&domain)
        .map_err(|e| usage(format!("{e:#}")))?;
    let scales = match &cfg.noise_scales {
        Some(p) => NoiseScales::PerClique(load_scales(p, &domain)?),
        None => NoiseScales::UniformSplit,
    };
    if cfg.mechanism == MechanismKind::Residualplanner {
        for &eps in &cfg.epsilon {
            match residual_scales(&domain, &workload, solve_rho(eps, cfg.delta)?, &scales) {
                Err(rem_core::Error::Config(msg)) => return Err(usage(msg)),
                other => other?,
            };
        }
    }
    let mut lnn = match cfg.mechanism {
        MechanismKind::Smwem => LnnConfig::mwem(),
        MechanismKind::Residualplanner => LnnConfig::residualplanner(),
    };
    if let Some(r) = cfg.lnn_max_rounds {
        lnn.max_rounds = r;
    }
    if let Some(t) = cfg.lnn_time_limit {
        lnn.time_limit = Some(Duration::from_secs_f64(t));
    }

    // Nothing is written until every input has been checked.
    std::fs::create_dir_all(&cfg.out).map_err(|e| {
        usage(format!(
            "cannot create output directory {}: {e}",
            cfg.out.display()
        ))
    })?;
    write_json(&cfg.out.join("run_config.json"), &cfg)?;

    let cache = OperatorCache::new(&domain);
    let truth: BTreeMap<Clique, MarginalTable<f64>> = workload
        .par_iter()
        .map(|g| Ok((g.clone(), data.exact_marginal(g)?)))
        .collect::<Result<_>>()?;
    let ctx = TrialContext {
        cfg: &cfg,
        data: &data,
        dataset: &dataset,
        cache: &cache,
        workload: &workload,
        truth: &truth,
        postprocessors: &checked.postprocessors,
        scales: &scales,
        lnn: &lnn,
    };
    let grid: Vec<(f64, usize)> = cfg
        .epsilon
        .iter()
        .flat_map(|&e| (0..cfg.trials).map(move |t| (e, t)))
        .collect();
    let per_trial: Vec<Vec<ErrorRow>> = worker_pool()?.install(|| {
        grid.par_iter()
            .map(|&(eps, trial)| {
                run_trial(&ctx, eps, trial).with_context(|| format!("epsilon {eps}, trial {trial}"))
            })
            .collect::<Result<_>>()
    })?;

    let mut report = ErrorReport::default();
    for row in per_trial.into_iter().flatten() {
        report.push(row)?;
    }
    report.save_csv(cfg.out.join("report.csv"))?;
    report.save_summary_json(cfg.out.join("summary.json"))?;
    for s in report.summary() {
        println!(
            "{} {} eps={} l1={:.4} l2={:.4} converged={}/{}",
            s.mechanism,
            s.postprocessor,
            s.epsilon,
            s.l1_error.mean,
            s.l2_error.mean,
            s.converged,
            s.trials
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn replay(args: ReplayArgs) -> Result<ExitCode> {
    require_file(&args.archive, "archive")?;
    let spec = WorkloadSpec::parse(&args.workload).map_err(|e| usage(format!("{e:#}")))?;
    let domain = match load_domain(args.domain.as_deref())? {
        Some(d) => d,
        None => titanic_synthetic(BUNDLED_SEED)?.domain().clone(),
    };
    let workload = spec.resolve(&domain).map_err(|e| usage(format!("{e:#}")))?;
    let archive = MeasurementArchive::load_json(&args.archive)
        .with_context(|| format!("loading archive {}", args.archive.display()))?;
    let cache = OperatorCache::new(&domain);
    let rec: Reconstruction<f64> = replay_archive(&cache, &workload, &archive)?;
    if rec.is_partial() {
        log::warn!(
            "archive does not determine every workload marginal; missing residuals read as zero"
        );
    }
    let records = marginal_records(&domain, &rec.marginals);
    match &args.out {
        Some(p) => write_json(p, &records)?,
        None => print_json(&records)?,
    }
    Ok(ExitCode::SUCCESS)
}

pub fn oracle(args: OracleArgs) -> Result<ExitCode> {
    if args.domain_sizes.is_empty() || args.domain_sizes.contains(&0) {
        return Err(usage("domain sizes must be positive"));
    }
    if args.instances == 0 {
        return Err(usage("instances must be at least 1"));
    }
    let domain = Domain::from_sizes(&args.domain_sizes)?;
    let fault = args.inject_fault.map(|FaultArg::SignFlip| Fault::SignFlip);
    let report = run_suite(&domain, args.instances, args.seed, fault)?;
    for c in &report.checks {
        println!(
            "{}\tinstances={}\tmax_deviation={:e}",
            c.name, c.instances, c.max_deviation
        );
    }
    let ok = report.passed(args.tolerance);
    println!(
        "{} max deviation {:e} (tolerance {:e})",
        if ok { "PASS" } else { "FAIL" },
        report.max_deviation(),
        args.tolerance
    );
    Ok(if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

pub fn prep(args: PrepArgs) -> Result<ExitCode> {
    require_file(&args.data, "dataset")?;
    if let Some(p) = &args.domain {
        require_file(p, "domain file")?;
    }
    let fixed = load_domain(args.domain.as_deref())?;
    let rs = RecordSet::load_csv(&args.data, fixed.as_ref())?;
    let d = rs.domain();
    d.save_json(&args.domain_out)?;
    println!("records\t{}", rs.len());
    for a in d.attributes() {
        println!("{}\t{}", a.name, a.size);
    }
    println!("data vector size\t{:e}", d.data_vector_size());
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let rs = titanic_synthetic(args.seed)?;
    rs.write_csv(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(p) = &args.domain_out {
        rs.domain().save_json(p)?;
    }
    println!("wrote {} records to {}", rs.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
