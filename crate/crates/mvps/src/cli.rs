//! Command-line surface: configuration-driven experiments with
//! machine-readable outputs.
//!
//! Every subcommand reads one JSON config (see [`crate::config`]), runs the
//! corresponding library operation, and writes a `report.json` plus CSV
//! data files into the output directory. Exit codes: `0` when every check
//! passed, `1` when a check failed (reports are still written), `2` on
//! invalid input (bad config, negative kernel entries outside
//! `check-kernel`, enumeration cap breaches).
//!
//! Output location: `--out`, else `output.dir` from the config, else the
//! `MVPS_OUT` environment variable, else `mvps-out`. Runs are deterministic
//! given config and seed; the only varying report field is the top-level
//! `timestamp`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::diagnostics::{
    empirical_vs_predictive, general_martingale_check, martingale_increment_check, stat,
    tv_predictive_trace, DiagnosticsError,
};
use crate::exactlaw::{
    check_cid, check_cid_structure, check_exchangeable, joint_law, project_atoms_law, JointLaw,
    LawError,
};
use crate::kernel::general::{mc_atom_consistency, mc_kernel_check, TestSet};
use crate::kernel::{
    atoms_of_kernel, check_balanced, check_proper, check_scaled_stationarity,
    check_self_averaging, decompose_blocks, detect_negative, CheckReport, KernelError, Partition,
};
use crate::measure::MeasureError;
use crate::prior::{
    predictive_after, sample_hierarchical, sample_null_mixture, sample_posterior,
    truncation_level, PriorError, ResidualPolicy, DEFAULT_TRUNCATION_EPSILON,
};
use crate::seed::derive_seed;
use crate::urn::{general_simulate, simulate, UrnError};
use crate::EXACT_TOL;

/// Environment variable naming the default output directory.
pub const OUT_ENV_VAR: &str = "MVPS_OUT";

/// Exit code when every check passed.
pub const EXIT_OK: i32 = 0;
/// Exit code when a check ran to completion and failed.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for invalid input.
pub const EXIT_INVALID: i32 = 2;

/// Reinforced-urn experiments: exact law checks, structural kernel
/// analysis, and stick-breaking samplers, driven by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "mvps", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Path to the experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Tolerance override for exact checks.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Replicate count override.
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// History depth override for law checks.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
}

/// The available experiments.
#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Simulate draws from the predictive sequence.
    Simulate,
    /// Check permutation invariance of the exact joint law.
    CheckExchangeable,
    /// Check the one-step martingale identity of the predictive.
    CheckCid,
    /// Check non-negativity, balancedness, stationarity, self-averaging,
    /// and properness of the reinforcement kernel.
    CheckKernel,
    /// Decompose the kernel into exchangeable blocks.
    Decompose,
    /// Check the block structure characterizing the martingale property.
    StructureCid,
    /// Compare the law of block labels against the closed-form reference.
    ProjectAtoms,
    /// Sample the directing random measure from the prior.
    SamplePrior,
    /// Sample the directing random measure given observed data.
    SamplePosterior,
    /// Sample the hierarchical block representation.
    SampleHierarchical,
    /// Sample the mixture representation with a null part.
    SampleNull,
    /// Convergence diagnostics on a simulated trajectory.
    Diagnose,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::CheckExchangeable => "check-exchangeable",
            Command::CheckCid => "check-cid",
            Command::CheckKernel => "check-kernel",
            Command::Decompose => "decompose",
            Command::StructureCid => "structure-cid",
            Command::ProjectAtoms => "project-atoms",
            Command::SamplePrior => "sample-prior",
            Command::SamplePosterior => "sample-posterior",
            Command::SampleHierarchical => "sample-hierarchical",
            Command::SampleNull => "sample-null",
            Command::Diagnose => "diagnose",
        }
    }
}

/// Errors that abort a run with exit code 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("a config file is required; pass --config <path>")]
    MissingConfig,
    #[error("{0}")]
    Unsupported(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Urn(#[from] UrnError),
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Top-level JSON report written by every subcommand. The `timestamp`
/// field is the only part of any output that varies between identical
/// runs.
#[derive(Debug, Serialize)]
struct RunReport {
    version: &'static str,
    timestamp: u64,
    command: &'static str,
    seed: u64,
    spec_hash: String,
    passed: bool,
    reports: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<Vec<Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    null_block: Option<usize>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    summary: BTreeMap<String, f64>,
    outputs: Vec<String>,
}

/// Everything a subcommand produces besides the exit code.
#[derive(Debug, Default)]
struct Outcome {
    reports: Vec<CheckReport>,
    blocks: Option<Vec<Vec<String>>>,
    null_block: Option<usize>,
    summary: BTreeMap<String, f64>,
    /// CSV files written, as names relative to the output directory.
    outputs: Vec<String>,
    /// Overrides the all-reports-passed rule when set.
    passed: Option<bool>,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.passed
            .unwrap_or_else(|| self.reports.iter().all(|r| r.passed))
    }
}

struct Ctx {
    config: ExperimentConfig,
    out_dir: PathBuf,
    write_json: bool,
    write_csv: bool,
    seed: u64,
    tol: f64,
    depth: usize,
}

impl Ctx {
    fn n(&self, default: usize) -> usize {
        self.config.task.n.unwrap_or(default)
    }

    fn replicates(&self, default: usize) -> usize {
        self.config.task.replicates.unwrap_or(default)
    }

    fn samples(&self) -> usize {
        self.config.task.samples.unwrap_or(stat::MC_KERNEL_SAMPLES)
    }

    fn truncation(&self, theta: f64) -> Result<(usize, f64), CliError> {
        let epsilon = self
            .config
            .task
            .truncation_epsilon
            .unwrap_or(DEFAULT_TRUNCATION_EPSILON);
        Ok(truncation_level(theta, epsilon)?)
    }

    fn test_sets(&self) -> Vec<TestSet> {
        self.config
            .task
            .test_points
            .clone()
            .unwrap_or_else(|| vec![-1.0, 0.0, 1.0])
            .into_iter()
            .map(TestSet::below)
            .collect()
    }

    fn write_rows(
        &self,
        outcome: &mut Outcome,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        if !self.write_csv {
            return Ok(());
        }
        let path = self.out_dir.join(name);
        let mut writer = csv::Writer::from_path(&path)?;
        writer.write_record(header)?;
        for row in rows {
            writer.write_record(&row)?;
        }
        writer.flush()?;
        outcome.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes the flattened `(check, key, value)` table of all reports.
    fn write_details(&self, outcome: &mut Outcome) -> Result<(), CliError> {
        let rows: Vec<Vec<String>> = outcome
            .reports
            .iter()
            .flat_map(|report| {
                let check = report.check.clone();
                report
                    .details
                    .iter()
                    .map(move |(key, value)| {
                        vec![check.clone(), key.clone(), format!("{value}")]
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        self.write_rows(outcome, "details.csv", &["check", "key", "value"], rows)
    }

    fn write_law(&self, outcome: &mut Outcome, name: &str, law: &JointLaw) -> Result<(), CliError> {
        let depth = law.depth();
        let headers: Vec<String> = (1..=depth)
            .map(|i| format!("x{i}"))
            .chain(["probability".to_string()])
            .collect();
        let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
        let rows = law.rows_as_labels().into_iter().map(|(labels, p)| {
            labels
                .into_iter()
                .chain([format!("{p}")])
                .collect::<Vec<_>>()
        });
        self.write_rows(outcome, name, &header_refs, rows)
    }
}

/// Runs a parsed invocation; maps errors to the invalid-input exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(passed) => {
            if passed {
                EXIT_OK
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(error) => {
            eprintln!("error: {error}");
            EXIT_INVALID
        }
    }
}

fn run_inner(cli: &Cli) -> Result<bool, CliError> {
    let config_path = cli.config.as_ref().ok_or(CliError::MissingConfig)?;
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = cli.seed {
        config.task.seed = Some(seed);
    }
    if let Some(tol) = cli.tol {
        config.task.tol = Some(tol);
    }
    if let Some(replicates) = cli.replicates {
        config.task.replicates = Some(replicates);
    }
    if let Some(depth) = cli.depth {
        config.task.depth = Some(depth);
    }
    config.validate()?;

    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("mvps-out"));
    fs::create_dir_all(&out_dir)?;
    let formats = config
        .output
        .formats
        .clone()
        .unwrap_or_else(|| vec!["json".to_string(), "csv".to_string()]);

    let ctx = Ctx {
        seed: config.task.seed.unwrap_or(0),
        tol: config.task.tol.unwrap_or(EXACT_TOL),
        depth: config.task.depth.unwrap_or(4),
        write_json: formats.iter().any(|f| f == "json"),
        write_csv: formats.iter().any(|f| f == "csv"),
        out_dir,
        config,
    };

    let mut outcome = match cli.command {
        Command::Simulate => cmd_simulate(&ctx)?,
        Command::CheckExchangeable => cmd_check_exchangeable(&ctx)?,
        Command::CheckCid => cmd_check_cid(&ctx)?,
        Command::CheckKernel => cmd_check_kernel(&ctx)?,
        Command::Decompose => cmd_decompose(&ctx)?,
        Command::StructureCid => cmd_structure_cid(&ctx)?,
        Command::ProjectAtoms => cmd_project_atoms(&ctx)?,
        Command::SamplePrior => cmd_sample_prior(&ctx)?,
        Command::SamplePosterior => cmd_sample_posterior(&ctx)?,
        Command::SampleHierarchical => cmd_sample_hierarchical(&ctx)?,
        Command::SampleNull => cmd_sample_null(&ctx)?,
        Command::Diagnose => cmd_diagnose(&ctx)?,
    };

    let passed = outcome.passed();
    if ctx.write_json {
        let report = RunReport {
            version: "1",
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            command: cli.command.name(),
            seed: ctx.seed,
            spec_hash: spec_hash(&ctx)?,
            passed,
            reports: std::mem::take(&mut outcome.reports),
            blocks: outcome.blocks.take(),
            null_block: outcome.null_block.take(),
            summary: std::mem::take(&mut outcome.summary),
            outputs: std::mem::take(&mut outcome.outputs),
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(ctx.out_dir.join("report.json"), text)?;
    }
    Ok(passed)
}

fn spec_hash(ctx: &Ctx) -> Result<String, CliError> {
    let hash = if ctx.config.is_general() {
        ctx.config.general_spec()?.content_hash()
    } else if ctx.config.raw_matrix().is_some() && ctx.config.finite_kernel().is_err() {
        // A matrix that does not form a kernel (negative entries) still
        // deserves a stable identity in check-kernel reports.
        crate::seed::fnv1a64(format!("{:?}", ctx.config.model).as_bytes())
    } else {
        ctx.config.finite_spec()?.content_hash()
    };
    Ok(format!("{hash:016x}"))
}

fn require_finite(ctx: &Ctx, command: &str) -> Result<(), CliError> {
    if ctx.config.is_general() {
        return Err(CliError::Unsupported(format!(
            "{command} requires a finite model; this config defines a sampler-defined kernel"
        )));
    }
    Ok(())
}

fn require_partition(ctx: &Ctx, command: &str) -> Result<Partition, CliError> {
    ctx.config.partition()?.ok_or_else(|| {
        CliError::Invalid(format!("{command} requires model.partition in the config"))
    })
}

fn cmd_simulate(ctx: &Ctx) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    let n = ctx.n(100);
    if ctx.config.is_general() {
        let spec = ctx.config.general_spec()?;
        let trajectory = general_simulate(&spec, n, ctx.seed)?;
        let rows = trajectory
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| vec![format!("{}", i + 1), format!("{p}")]);
        ctx.write_rows(&mut outcome, "trajectory.csv", &["step", "point"], rows)?;
        outcome.summary.insert("n".to_string(), n as f64);
    } else {
        let spec = ctx.config.finite_spec()?;
        let trajectory = simulate(&spec, n, ctx.seed)?;
        let rows = trajectory.draws.iter().enumerate().map(|(i, &x)| {
            vec![
                format!("{}", i + 1),
                spec.space().label(x).to_string(),
            ]
        });
        ctx.write_rows(&mut outcome, "trajectory.csv", &["step", "label"], rows)?;
        outcome.summary.insert("n".to_string(), n as f64);
        let k = spec.space().len();
        let mut counts = vec![0usize; k];
        for &x in &trajectory.draws {
            counts[x] += 1;
        }
        for x in 0..k {
            outcome.summary.insert(
                format!("empirical.{}", spec.space().label(x)),
                counts[x] as f64 / n.max(1) as f64,
            );
        }
    }
    outcome.passed = Some(true);
    Ok(outcome)
}

fn cmd_check_exchangeable(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "check-exchangeable")?;
    let spec = ctx.config.finite_spec()?;
    let mut outcome = Outcome::default();
    let report = check_exchangeable(&spec, ctx.depth, ctx.tol)?;
    let law = joint_law(&spec, ctx.depth)?;
    ctx.write_law(&mut outcome, "law.csv", &law)?;
    outcome.reports.push(report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_check_cid(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "check-cid")?;
    let spec = ctx.config.finite_spec()?;
    let mut outcome = Outcome::default();
    let report = check_cid(&spec, ctx.depth, ctx.tol)?;
    let law = joint_law(&spec, ctx.depth)?;
    ctx.write_law(&mut outcome, "law.csv", &law)?;
    outcome.reports.push(report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_check_kernel(ctx: &Ctx) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    if ctx.config.is_general() {
        let kernel = ctx.config.general_kernel()?;
        let sets = ctx.test_sets();
        outcome
            .reports
            .push(mc_kernel_check(&kernel, &sets, ctx.samples(), ctx.seed)?);
        if kernel.has_atom_map() {
            outcome
                .reports
                .push(mc_atom_consistency(&kernel, ctx.samples(), ctx.seed)?);
        }
        ctx.write_details(&mut outcome)?;
        return Ok(outcome);
    }

    let space = ctx.config.space()?;
    let nu = ctx.config.nu()?;
    if let Some(matrix) = ctx.config.raw_matrix() {
        let negativity = detect_negative(&space, matrix);
        if !negativity.passed {
            outcome.reports.push(negativity);
            ctx.write_details(&mut outcome)?;
            return Ok(outcome);
        }
        outcome.reports.push(negativity);
    }
    let kernel = ctx.config.finite_kernel()?;
    outcome.reports.push(check_balanced(&kernel, &nu)?);
    outcome.reports.push(check_scaled_stationarity(&kernel, &nu)?);
    outcome.reports.push(check_self_averaging(&kernel, &nu)?);
    outcome
        .reports
        .push(check_proper(&kernel, &nu, &atoms_of_kernel(&kernel))?);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_decompose(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "decompose")?;
    let kernel = ctx.config.finite_kernel()?;
    let nu = ctx.config.nu()?;
    let decomposition = decompose_blocks(&kernel, &nu)?;
    let mut outcome = Outcome::default();
    if let Some(partition) = &decomposition.partition {
        outcome.blocks = Some(partition.blocks_as_labels());
        outcome.null_block = decomposition.null_block;
        let rows = partition.blocks().iter().enumerate().flat_map(|(j, block)| {
            let space = partition.space().clone();
            block
                .iter()
                .map(move |&x| vec![format!("B{}", j + 1), space.label(x).to_string()])
                .collect::<Vec<_>>()
        });
        ctx.write_rows(&mut outcome, "blocks.csv", &["block", "label"], rows)?;
    }
    outcome.reports.push(decomposition.report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_structure_cid(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "structure-cid")?;
    let kernel = ctx.config.finite_kernel()?;
    let nu = ctx.config.nu()?;
    let report = check_cid_structure(&kernel, &nu)?;
    let mut outcome = Outcome::default();
    let blocks = match decompose_blocks(&kernel, &nu)?.partition {
        Some(partition) => partition,
        None => atoms_of_kernel(&kernel),
    };
    outcome.blocks = Some(blocks.blocks_as_labels());
    outcome.reports.push(report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_project_atoms(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "project-atoms")?;
    let partition = require_partition(ctx, "project-atoms")?;
    let spec = ctx.config.finite_spec()?;
    let n = ctx.n(3);
    let (projected, report) = project_atoms_law(&spec, &partition, n)?;
    let mut outcome = Outcome::default();
    ctx.write_law(&mut outcome, "projected_law.csv", &projected)?;
    outcome.blocks = Some(partition.blocks_as_labels());
    outcome.reports.push(report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

/// Shared body of the prior and posterior sampling commands: draws
/// replicated realized measures, writes them, and checks the Monte Carlo
/// mean against the exact mean oracle.
fn sample_measures(
    ctx: &Ctx,
    data: &[usize],
    check_name: &str,
) -> Result<Outcome, CliError> {
    let spec = ctx.config.finite_spec()?;
    let nu = ctx.config.nu()?;
    let kernel = ctx.config.finite_kernel()?;
    let theta = ctx.config.model.theta;
    let posterior_theta = theta + data.len() as f64;
    let (j_max, expected_residual) = ctx.truncation(posterior_theta)?;
    let replicates = ctx.replicates(1000);
    let oracle = predictive_after(&spec, data)?;
    let k = nu.space().len();

    let mut outcome = Outcome::default();
    let mut sums = vec![0.0f64; k];
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(replicates * k);
    for r in 0..replicates {
        let draw = sample_posterior(
            theta,
            &nu,
            &kernel,
            data,
            j_max,
            derive_seed(ctx.seed, r as u64, 0),
            ResidualPolicy::ReassignToBase,
        )?;
        for x in 0..k {
            sums[x] += draw.measure.weight(x);
            rows.push(vec![
                format!("{r}"),
                nu.space().label(x).to_string(),
                format!("{}", draw.measure.weight(x)),
            ]);
        }
    }
    ctx.write_rows(
        &mut outcome,
        "draws.csv",
        &["replicate", "label", "weight"],
        rows,
    )?;

    let mut report = CheckReport::new(check_name, stat::PRIOR_MEAN_SE_THRESHOLD);
    report.detail("replicates", replicates as f64);
    report.detail("truncation_level", j_max as f64);
    report.detail("expected_residual", expected_residual);
    // Conservative bound sd <= 1/2 for a [0, 1]-valued cell mass.
    let se = 0.5 / (replicates as f64).sqrt();
    for x in 0..k {
        let mean = sums[x] / replicates as f64;
        let target = oracle.prob(x);
        let label = nu.space().label(x);
        report.detail(&format!("mean.{label}"), mean);
        report.detail(&format!("target.{label}"), target);
        report.observe(
            (mean - target).abs() / se,
            "Monte Carlo mean strays from the exact mean",
            vec![label.to_string()],
        );
        outcome.summary.insert(format!("mean.{label}"), mean);
    }
    outcome.reports.push(report.finalize());
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}

fn cmd_sample_prior(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "sample-prior")?;
    sample_measures(ctx, &[], "prior_mean")
}

fn cmd_sample_posterior(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "sample-posterior")?;
    let data = ctx.config.data_indices()?;
    sample_measures(ctx, &data, "posterior_mean")
}

fn cmd_sample_hierarchical(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "sample-hierarchical")?;
    let partition = require_partition(ctx, "sample-hierarchical")?;
    let nu = ctx.config.nu()?;
    let theta = ctx.config.model.theta;
    let (j_max, _) = ctx.truncation(theta)?;
    let n = ctx.n(2);
    let replicates = ctx.replicates(1000);
    let k = nu.space().len();

    let mut outcome = Outcome::default();
    let mut counts = vec![0usize; k];
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(replicates * n);
    for r in 0..replicates {
        let draw = sample_hierarchical(
            theta,
            &nu,
            &partition,
            n,
            j_max,
            derive_seed(ctx.seed, r as u64, 0),
        )?;
        for i in 0..n {
            counts[draw.samples[i]] += 1;
            rows.push(vec![
                format!("{r}"),
                format!("{}", i + 1),
                format!("B{}", draw.block_labels[i] + 1),
                nu.space().label(draw.samples[i]).to_string(),
            ]);
        }
    }
    ctx.write_rows(
        &mut outcome,
        "samples.csv",
        &["replicate", "i", "block", "label"],
        rows,
    )?;
    marginal_report(ctx, &mut outcome, &nu, &counts, replicates, n, "hierarchical_marginal")?;
    Ok(outcome)
}

fn cmd_sample_null(ctx: &Ctx) -> Result<Outcome, CliError> {
    require_finite(ctx, "sample-null")?;
    let partition = require_partition(ctx, "sample-null")?;
    let z = ctx.config.z_indices()?;
    let nu = ctx.config.nu()?;
    let theta = ctx.config.model.theta;
    let n = ctx.n(2);
    let replicates = ctx.replicates(1000);
    let k = nu.space().len();

    let mut outcome = Outcome::default();
    let mut counts = vec![0usize; k];
    let mut in_z_count = 0usize;
    let mut rows: Vec<Vec<String>> = Vec::with_capacity(replicates * n);
    for r in 0..replicates {
        let draw = sample_null_mixture(
            theta,
            &nu,
            &partition,
            &z,
            n,
            derive_seed(ctx.seed, r as u64, 0),
        )?;
        for i in 0..n {
            counts[draw.samples[i]] += 1;
            if !draw.in_support[i] {
                in_z_count += 1;
            }
            rows.push(vec![
                format!("{r}"),
                format!("{}", i + 1),
                format!("B{}", draw.block_labels[i] + 1),
                format!("{}", draw.in_support[i]),
                nu.space().label(draw.samples[i]).to_string(),
            ]);
        }
    }
    ctx.write_rows(
        &mut outcome,
        "samples.csv",
        &["replicate", "i", "block", "in_support", "label"],
        rows,
    )?;
    let z_mass = nu.prob_of(&z);
    outcome.summary.insert(
        "null_frequency".to_string(),
        in_z_count as f64 / (replicates * n) as f64,
    );
    outcome.summary.insert("null_mass".to_string(), z_mass);
    marginal_report(ctx, &mut outcome, &nu, &counts, replicates, n, "null_mixture_marginal")?;
    Ok(outcome)
}

/// Compares per-state sample frequencies against the base measure, the
/// exact marginal law of every draw in these representations. Standard
/// errors use the replicate count only, since draws within a replicate are
/// dependent.
fn marginal_report(
    ctx: &Ctx,
    outcome: &mut Outcome,
    nu: &crate::measure::ProbabilityVector,
    counts: &[usize],
    replicates: usize,
    n: usize,
    check_name: &str,
) -> Result<(), CliError> {
    let mut report = CheckReport::new(check_name, stat::SE_THRESHOLD);
    report.detail("replicates", replicates as f64);
    report.detail("samples_per_replicate", n as f64);
    let se = 0.5 / (replicates as f64).sqrt();
    for (x, &count) in counts.iter().enumerate() {
        let freq = count as f64 / (replicates * n) as f64;
        let target = nu.prob(x);
        let label = nu.space().label(x);
        report.detail(&format!("freq.{label}"), freq);
        report.detail(&format!("target.{label}"), target);
        report.observe(
            (freq - target).abs() / se,
            "sample frequency strays from the base measure",
            vec![label.to_string()],
        );
        outcome.summary.insert(format!("freq.{label}"), freq);
    }
    outcome.reports.push(report.finalize());
    ctx.write_details(outcome)?;
    Ok(())
}

fn cmd_diagnose(ctx: &Ctx) -> Result<Outcome, CliError> {
    let mut outcome = Outcome::default();
    if ctx.config.is_general() {
        let spec = ctx.config.general_spec()?;
        let sets = ctx.test_sets();
        let steps = ctx.n(6).max(2);
        let replicates = ctx.replicates(2000);
        let report = general_martingale_check(&spec, &sets, steps, replicates, ctx.seed)?;
        outcome.reports.push(report);
        ctx.write_details(&mut outcome)?;
        return Ok(outcome);
    }

    let spec = ctx.config.finite_spec()?;
    let n = ctx.n(1000);
    let checkpoints = ctx.config.task.checkpoints.clone().unwrap_or_else(|| {
        let mut points = vec![n / 100, n / 10, n];
        points.retain(|&p| p >= 1);
        points.dedup();
        points
    });
    let trajectory = simulate(&spec, n, ctx.seed)?;
    let tv_series = tv_predictive_trace(&spec, &trajectory, &checkpoints)?;
    let emp_series = empirical_vs_predictive(&spec, &trajectory, &checkpoints)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for series in [&tv_series, &emp_series] {
        for name in series.names() {
            for (step, value) in series.rows(name).unwrap() {
                rows.push(vec![name.to_string(), format!("{step}"), format!("{value}")]);
            }
        }
    }
    ctx.write_rows(&mut outcome, "traces.csv", &["series", "step", "value"], rows)?;
    let report = martingale_increment_check(&spec, ctx.depth, ctx.tol)?;
    outcome.reports.push(report);
    ctx.write_details(&mut outcome)?;
    Ok(outcome)
}
