//! Command-line front end. Exit codes: 0 success, 1 runtime failure (or a
//! failed validation), 2 usage or configuration error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::Error;
use crate::metrics::MetricKind;
use crate::par;
use crate::presets::Preset;
use crate::reach::{containment, Containment};
use crate::records::{self, Summary, Timing};
use crate::scenario::{estimate, estimate_safe_env_fraction, validate_guarantee, ScenarioConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "simspec", version, about = "Simulation metrics between a system and its abstraction")]
pub struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a metric by scenario sampling.
    Estimate(Common),
    /// Check an estimate on a fresh batch.
    Validate(ValidateArgs),
    /// Grid viability kernels and containment report (2-D problems).
    Kernel(MarginArgs),
    /// Fraction of environments admitting a feasible controller per margin.
    Envset(EnvsetArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// running-example, quadrotor-conservative, quadrotor-optimistic, bicycle-demo.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub metric: Option<MetricKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample count override.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Feasible sampling at the running max.
    #[arg(long)]
    pub adaptive: bool,
    /// Keep trajectories of every sample.
    #[arg(long)]
    pub persist_all: bool,
    /// Output directory (else config, else $SIMSPEC_OUTPUT_DIR, else ./simspec-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Estimate to check.
    #[arg(long, conflicts_with = "summary")]
    pub d_hat: Option<f64>,
    /// Read d̂ from a summary.json.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Fresh batch size.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seed for the fresh batch; defaults to the estimation seed plus one.
    #[arg(long)]
    pub fresh_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct MarginArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated margins.
    #[arg(long, value_delimiter = ',')]
    pub margins: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EnvsetArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub margins: Option<Vec<f64>>,
    /// Environments sampled per margin.
    #[arg(long)]
    pub samples: Option<usize>,
}

enum Failure {
    Usage(String),
    Runtime(String),
    /// Completed, but the checked property did not hold.
    Check,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` and runs the command, writing human output to `out`.
pub fn run_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let threads = cli.threads;
    let mut text = String::new();
    let result = par::with_threads(threads, || dispatch(&cli.command, threads, &mut text));
    let _ = out.write_all(text.as_bytes());
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Check) => EXIT_RUNTIME,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
    }
}

pub fn main_entry() -> i32 {
    run_with(std::env::args_os(), &mut std::io::stdout())
}

fn dispatch(cmd: &Command, threads: Option<usize>, out: &mut String) -> Outcome {
    match cmd {
        Command::Estimate(c) => cmd_estimate(c, threads, out),
        Command::Validate(v) => cmd_validate(v, out),
        Command::Kernel(k) => cmd_kernel(k, out),
        Command::Envset(e) => cmd_envset(e, out),
    }
}

struct Resolved {
    config: RunConfig,
    problem: Preset,
}

fn resolve(c: &Common) -> std::result::Result<Resolved, Failure> {
    let mut config = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.preset {
        if config.problem.is_some() {
            return Err(Failure::Usage("--preset conflicts with the config's [problem] block".into()));
        }
        config.preset = Some(p.clone());
    }
    if config.preset.is_none() && config.problem.is_none() {
        return Err(Failure::Usage("give --preset NAME or --config FILE".into()));
    }
    let s = &mut config.scenario;
    s.metric = c.metric.or(s.metric);
    s.seed = c.seed.or(s.seed);
    s.n = c.n.or(s.n);
    s.epsilon = c.epsilon.or(s.epsilon);
    s.beta = c.beta.or(s.beta);
    if c.adaptive {
        s.adaptive = Some(true);
    }
    if c.persist_all {
        s.persist_trajectories = Some(true);
    }
    if let Some(o) = &c.out {
        config.output_dir = Some(o.clone());
    }
    let problem = config.resolve_problem()?;
    Ok(Resolved { config, problem })
}

fn scenario(r: &Resolved) -> std::result::Result<ScenarioConfig, Failure> {
    Ok(r.config.scenario_config(&r.problem.norm)?)
}

fn cmd_estimate(c: &Common, threads: Option<usize>, out: &mut String) -> Outcome {
    let r = resolve(c)?;
    let sc = scenario(&r)?;
    let started = Instant::now();
    let est = estimate(&sc, &r.problem.problem(sc.metric))?;
    let elapsed = started.elapsed().as_secs_f64();
    let hash = records::config_hash(&r.config.identity(&sc));
    let summary = Summary::new(&est, hash, r.problem.describe())?;
    let dir = r.config.output_dir();
    let written = records::write_run(&dir, &est, &summary)?;
    records::write_json(
        &dir.join(records::TIMING_FILE),
        &Timing {
            elapsed_seconds: elapsed,
            threads,
            parallel: par::parallel_enabled(),
        },
    )?;
    let _ = writeln!(
        out,
        "metric {} d_hat {} N {} epsilon {} beta {} falsifying {} null {}",
        summary.metric, summary.d_hat, summary.n, summary.epsilon, summary.beta, summary.falsifying, summary.null_count
    );
    let _ = writeln!(out, "summary {}", written.summary.display());
    Ok(())
}

fn cmd_validate(v: &ValidateArgs, out: &mut String) -> Outcome {
    let r = resolve(&v.common)?;
    let sc = scenario(&r)?;
    let d_hat = match (v.d_hat, &v.summary) {
        (Some(d), _) => d,
        (None, Some(p)) => Summary::read(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?.d_hat,
        (None, None) => return Err(Failure::Usage("give --d-hat or --summary".into())),
    };
    let batch = v.batch.or(r.config.validation.batch).unwrap_or(1000);
    if batch == 0 {
        return Err(Failure::Usage("batch must be >= 1".into()));
    }
    let fresh = v
        .fresh_seed
        .or(r.config.validation.seed)
        .unwrap_or_else(|| sc.seed.wrapping_add(1));
    if fresh == sc.seed {
        return Err(Failure::Usage("fresh seed must differ from the estimation seed".into()));
    }
    let val = validate_guarantee(d_hat, batch, fresh, &sc, &r.problem.problem(sc.metric))?;
    let threshold = 2.0 * sc.epsilon;
    let pass = val.fraction <= threshold;
    let dir = r.config.output_dir();
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    records::write_json(
        &dir.join("validation.json"),
        &json!({
            "d_hat": val.d_hat,
            "batch": val.batch,
            "violations": val.violations,
            "fraction": val.fraction,
            "epsilon": sc.epsilon,
            "threshold": threshold,
            "seed": val.seed,
            "pass": pass,
        }),
    )?;
    let _ = writeln!(
        out,
        "d_hat {} violations {}/{} fraction {} epsilon {} threshold {} {}",
        val.d_hat,
        val.violations,
        val.batch,
        val.fraction,
        sc.epsilon,
        threshold,
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(Failure::Check)
    }
}

fn margin_label(d: f64) -> String {
    format!("{d}").replace('-', "m")
}

fn cmd_kernel(k: &MarginArgs, out: &mut String) -> Outcome {
    let r = resolve(&k.common)?;
    let setup = r
        .problem
        .kernel
        .clone()
        .ok_or_else(|| Failure::Usage(format!("problem {:?} has no 2-D kernel setup", r.problem.name)))?;
    if r.problem.system.state_dim() != 2 {
        return Err(Failure::Usage("kernel command needs a 2-D model".into()));
    }
    let margins = k
        .margins
        .clone()
        .or_else(|| r.config.kernel.margins.clone())
        .unwrap_or_else(|| vec![0.0]);
    if margins.is_empty() || margins.iter().any(|d| !(*d >= 0.0)) {
        return Err(Failure::Usage("margins must be a non-empty list of non-negative numbers".into()));
    }
    let dir = r.config.output_dir();
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    let norm = &r.problem.norm;
    let system_kernel = setup.compute(r.problem.system.as_ref(), 0.0, norm)?;
    system_kernel
        .initial_values()
        .write_csv(std::fs::File::create(dir.join("kernel_system_d0.csv")).map_err(Error::from)?)?;
    let mut report = Vec::new();
    for &d in &margins {
        let m = setup.compute(r.problem.abstraction.as_ref(), d, norm)?;
        m.initial_values().write_csv(
            std::fs::File::create(dir.join(format!("kernel_abstraction_d{}.csv", margin_label(d)))).map_err(Error::from)?,
        )?;
        let c: Containment = containment(&m, &system_kernel)?;
        let _ = writeln!(
            out,
            "kernel(M,{d}) ⊆ kernel(S,0): {} ({} of {} nodes outside)",
            c.holds(),
            c.violating_nodes,
            c.inner_nodes
        );
        report.push(json!({ "margin": d, "holds": c.holds(), "containment": c }));
    }
    records::write_json(
        &dir.join("kernel_report.json"),
        &json!({
            "problem": r.problem.name,
            "system": system_kernel.summary(),
            "margins": report,
        }),
    )?;
    Ok(())
}

fn cmd_envset(e: &EnvsetArgs, out: &mut String) -> Outcome {
    let mut common = e.common.clone();
    // Membership is a feasibility question; any feasible metric will do.
    common.metric = Some(common.metric.unwrap_or(MetricKind::Spec));
    let r = resolve(&common)?;
    let sc = scenario(&r)?;
    let margins = e
        .margins
        .clone()
        .or_else(|| r.config.envset.margins.clone())
        .ok_or_else(|| Failure::Usage("no margins given".into()))?;
    if margins.is_empty() {
        return Err(Failure::Usage("margin list is empty".into()));
    }
    let samples = e.samples.or(r.config.envset.samples).unwrap_or(1000);
    let seed = r.config.envset.seed.unwrap_or(sc.seed);
    let problem = r.problem.problem(MetricKind::Spec);
    let mut rows = Vec::new();
    for &d in &margins {
        if !(d >= 0.0) {
            return Err(Failure::Usage(format!("margin {d} must be non-negative")));
        }
        let f = estimate_safe_env_fraction(d, samples, seed, &sc, &problem)?;
        let _ = writeln!(out, "d {d} fraction {f}");
        rows.push((d, f));
    }
    let dir = r.config.output_dir();
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    records::write_pairs_csv(&dir.join("envset.csv"), ["d", "fraction"], &rows)?;
    Ok(())
}
