//! Command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::constitutive::Model;
use crate::evolution::{check_invariants, run_with, safety_load_check, RunOptions, RunOutcome, Scenario};
use crate::probe::{
    self, mu_sweep, probe_history, target_exponents, EnergySummary, ProbeReport, ProbeScope, TargetBoundary,
};
use crate::report::{
    create_dir, emit_meta, emit_report, emit_sweep_summary, mu_dir_name, unix_now, Meta, NumberFormat, ProbeSummary,
    ReportError, RunReport, SolverSummary, SweepSummary,
};
use crate::scenario::{parse_scenario, validate, ScenarioConfig, ScenarioError};

/// `run` keeps the full history (for the invariant checks) only below this size.
pub const HISTORY_BYTES_LIMIT: usize = 2 << 30;

#[derive(Debug, Parser)]
#[command(name = "plastreg", version, about = "Penalized small-strain plasticity with hardening: Rothe solver and regularity probes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file (or `benchmark:<name>`) without running it.
    Validate { file: PathBuf },
    /// Run one penalty parameter and write report.json and energy.csv.
    Run {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fixed-width number output; timestamps only in meta.json.
        #[arg(long)]
        reproducible: bool,
        /// Penalty parameter (default: the smallest listed value).
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Run and evaluate every configured probe.
    Probe {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reproducible: bool,
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Run every listed penalty parameter, one subdirectory each.
    Sweep {
        file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        reproducible: bool,
        /// Energy diagnostics only (no histories kept, no seminorm tables).
        #[arg(long)]
        skip_probes: bool,
    },
    /// Print the theoretical exponent targets as JSON.
    Targets {
        #[arg(long)]
        d: usize,
        /// `k` (kinematic) or `i` (isotropic).
        #[arg(long)]
        model: String,
        /// neumann, dirichlet, mixed, all-dirichlet or all-neumann-bottom.
        #[arg(long)]
        boundary: String,
        /// Integrability exponent for the β/λ pair.
        #[arg(long)]
        p: Option<f64>,
    },
    /// List the built-in benchmarks.
    Benchmarks,
}

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Solver(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Solver(_) => 3,
            Self::Io(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Validation(m) | Self::Solver(m) | Self::Io(m) => m,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => Self::Io(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        Self::Io(e.to_string())
    }
}

fn solver<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Solver(e.to_string())
}

fn load(file: &Path) -> Result<ScenarioConfig, CliError> {
    let config = parse_scenario(file)?;
    let violations = validate(&config);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| format!("  [{}] {}", v.check, v.message)).collect();
        return Err(CliError::Validation(format!(
            "{} is not runnable:\n{}",
            file.display(),
            lines.join("\n")
        )));
    }
    Ok(config)
}

fn pick_mu(config: &ScenarioConfig, mu: Option<f64>) -> Result<f64, CliError> {
    match mu {
        Some(m) if m > 0.0 && m.is_finite() => Ok(m),
        Some(m) => Err(CliError::Validation(format!("--mu must be positive, got {m}"))),
        None => Ok(config.mus().into_iter().fold(f64::INFINITY, f64::min)),
    }
}

fn history_bytes(config: &ScenarioConfig) -> usize {
    let cells = config.n.pow(config.d as u32) * (2usize).pow(config.d as u32 - 1);
    let qp = cells << config.d;
    let m = config.d * (config.d + 1) / 2;
    let nodes = (config.n + 1) * (2 * config.n + 1).pow(config.d as u32 - 1);
    (config.steps + 1) * 8 * (qp * 2 * m + nodes * config.d)
}

/// Assembles the report of one completed run.
pub fn build_report(
    config: &ScenarioConfig,
    scenario: &Scenario,
    outcome: &RunOutcome,
    probe: Option<&ProbeReport>,
) -> Result<RunReport, CliError> {
    let (invariants, invariants_skipped) = match outcome.history.as_ref() {
        Some(h) => (Some(check_invariants(h, scenario).map_err(solver)?), None),
        None => (None, Some("history not recorded (exceeds the in-memory budget)".to_string())),
    };
    let targets = target_exponents(
        config.d,
        config.model,
        TargetBoundary::of(config.boundary_mode, config.cutoff.side),
    )
    .map_err(solver)?;
    Ok(RunReport {
        config: config.clone(),
        mu: scenario.params.mu,
        dt: scenario.dt(),
        validation: validate(config),
        safety_load: safety_load_check(scenario).map_err(solver)?,
        solver: SolverSummary::of(&outcome.stats),
        energy: EnergySummary::from(&outcome.energy),
        invariants,
        invariants_skipped,
        targets,
        probe: probe.map(ProbeSummary::of),
    })
}

fn write_run(
    config: &ScenarioConfig,
    scenario: &Scenario,
    outcome: &RunOutcome,
    probe: Option<&ProbeReport>,
    out: &Path,
    nf: NumberFormat,
) -> Result<(), CliError> {
    let report = build_report(config, scenario, outcome, probe)?;
    let tables = probe.map(|p| p.tables.as_slice()).unwrap_or(&[]);
    emit_report(&report, &outcome.energy, tables, out, nf)?;
    Ok(())
}

fn single_run(file: &Path, out: &Path, reproducible: bool, mu: Option<f64>, with_probes: bool) -> Result<String, CliError> {
    let config = load(file)?;
    let mu = pick_mu(&config, mu)?;
    let scenario = config.scenario_with_mu(mu)?;
    create_dir(out)?;
    let record_history = with_probes || history_bytes(&config) <= HISTORY_BYTES_LIMIT;
    let outcome = run_with(&scenario, RunOptions { record_history }).map_err(solver)?;
    let probe = match (with_probes, outcome.history.as_ref()) {
        (true, Some(h)) => Some(probe_history(h, &scenario, &config.probe_config()).map_err(solver)?),
        _ => None,
    };
    write_run(&config, &scenario, &outcome, probe.as_ref(), out, NumberFormat { reproducible })?;
    Ok(format!(
        "{}: {} steps, {} Newton iterations, final L2 overshoot {:e}",
        config.name,
        config.steps,
        outcome.total_newton_iterations(),
        outcome.energy.final_overshoot_l2
    ))
}

fn sweep(file: &Path, out: &Path, reproducible: bool, skip_probes: bool) -> Result<String, CliError> {
    let config = load(file)?;
    let scenario = config.scenario()?;
    create_dir(out)?;
    let nf = NumberFormat { reproducible };
    let probe_cfg = config.probe_config();
    let mus = config.mus();
    let mut run_dirs = Vec::new();
    let mut write_error: Option<CliError> = None;
    let uniformity = mu_sweep(
        &scenario,
        &mus,
        (!skip_probes).then_some(&probe_cfg),
        ProbeScope::All,
        |mu, scn, outcome, probe| {
            let idx = mus.iter().position(|m| *m == mu).unwrap_or(run_dirs.len());
            let name = mu_dir_name(idx, mu);
            if let Err(e) = write_run(&config, scn, outcome, probe, &out.join(&name), nf) {
                write_error.get_or_insert(e);
            }
            run_dirs.push(name);
        },
    )
    .map_err(solver)?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let failures = uniformity.failures;
    let summary = SweepSummary {
        config,
        run_dirs,
        uniformity,
    };
    emit_sweep_summary(&summary, out)?;
    if failures > 0 {
        return Err(CliError::Solver(format!(
            "{failures} of {} runs failed; partial summary written to {}",
            mus.len(),
            out.join("sweep_summary.json").display()
        )));
    }
    let s = &summary.uniformity.spreads;
    Ok(format!(
        "{} runs; spread of sup |sigma_dot|: {:?}, of sup |xi_dot|: {:?}; overshoot slope {:?}",
        mus.len(),
        s.get("sup_sigma_rate_l2").copied().flatten(),
        s.get("sup_xi_rate_l2").copied().flatten(),
        summary.uniformity.overshoot_slope_l2.as_ref().map(|f| f.slope)
    ))
}

fn targets(d: usize, model: &str, boundary: &str, p: Option<f64>) -> Result<String, CliError> {
    let model = match model {
        "k" | "kinematic" => Model::Kinematic,
        "i" | "isotropic" => Model::Isotropic,
        other => return Err(CliError::Validation(format!("unknown model `{other}` (expected k or i)"))),
    };
    let boundary: TargetBoundary = boundary.parse().map_err(CliError::Validation)?;
    let t = target_exponents(d, model, boundary).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut value = serde_json::to_value(&t).expect("targets serialize");
    if let Some(p) = p {
        let b = probe::beta(p, d).map_err(|e| CliError::Validation(e.to_string()))?;
        value["beta_at_p"] = serde_json::to_value(b).expect("serializes");
    }
    Ok(serde_json::to_string_pretty(&value).expect("serializes"))
}

/// Executes a parsed command; returns the text for stdout.
pub fn execute(command: &Command) -> Result<String, CliError> {
    match command {
        Command::Validate { file } => {
            let config = parse_scenario(file)?;
            let violations = validate(&config);
            if violations.is_empty() {
                Ok(format!("{}: ok", config.name))
            } else {
                let lines: Vec<String> = violations.iter().map(|v| format!("[{}] {}", v.check, v.message)).collect();
                Err(CliError::Validation(lines.join("\n")))
            }
        }
        Command::Run {
            file,
            out,
            reproducible,
            mu,
        } => single_run(file, out, *reproducible, *mu, false),
        Command::Probe {
            file,
            out,
            reproducible,
            mu,
        } => single_run(file, out, *reproducible, *mu, true),
        Command::Sweep {
            file,
            out,
            reproducible,
            skip_probes,
        } => sweep(file, out, *reproducible, *skip_probes),
        Command::Targets { d, model, boundary, p } => targets(*d, model, boundary, *p),
        Command::Benchmarks => Ok(crate::scenario::benchmark_names().join("\n")),
    }
}

fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Run { out, .. } | Command::Probe { out, .. } | Command::Sweep { out, .. } => Some(out.as_path()),
        _ => None,
    }
}

fn reproducible(command: &Command) -> bool {
    matches!(
        command,
        Command::Run { reproducible: true, .. } | Command::Probe { reproducible: true, .. } | Command::Sweep { reproducible: true, .. }
    )
}

/// Parses `args`, runs the command and writes `meta.json` next to the
/// outputs. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let started = unix_now();
    let clock = std::time::Instant::now();
    let result = execute(&cli.command);
    let meta_result = match (out_dir(&cli.command), &result) {
        (Some(dir), Ok(_)) | (Some(dir), Err(CliError::Solver(_))) if dir.exists() => emit_meta(
            &Meta {
                command: args.iter().map(|a| a.to_string_lossy().into_owned()).collect::<Vec<_>>().join(" "),
                version: env!("CARGO_PKG_VERSION"),
                started_unix: started,
                finished_unix: unix_now(),
                wall_seconds: clock.elapsed().as_secs_f64(),
                threads: rayon::current_num_threads(),
                reproducible: reproducible(&cli.command),
            },
            dir,
        )
        .map(|_| ()),
        _ => Ok(()),
    };
    match (result, meta_result) {
        (Ok(text), Ok(())) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        (Ok(_), Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(4)
        }
        (Err(e), _) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
