//! Run reports: the JSON summary, energy and seminorm CSV tables, and a
//! separate metadata file for everything that varies between identical runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::evolution::{EnergyReport, InvariantReport, SafetyLoadReport, StepStats};
use crate::probe::{
    EnergySummary, ExponentReport, ExponentTargets, InterpolationReport, ProbeReport, QuotientSpread, SeminormTable,
    StripReport, UniformityReport,
};
use crate::scenario::{ScenarioConfig, Violation};

#[derive(Debug, Error)]
#[error("cannot write {}: {source}", path.display())]
pub struct ReportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn write(path: &Path, contents: &str) -> Result<PathBuf, ReportError> {
    fs::write(path, contents).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path.to_path_buf())
}

pub fn create_dir(path: &Path) -> Result<(), ReportError> {
    fs::create_dir_all(path).map_err(|source| ReportError {
        path: path.to_path_buf(),
        source,
    })
}

/// Number formatting for CSV output: 17 significant digits in reproducible
/// mode, shortest round-trip representation otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NumberFormat {
    pub reproducible: bool,
}

impl NumberFormat {
    pub fn fmt(&self, v: f64) -> String {
        if self.reproducible {
            format!("{v:.16e}")
        } else {
            format!("{v}")
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SolverSummary {
    pub steps: usize,
    pub total_newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub max_plastic_points: usize,
    pub max_relative_residual: f64,
}

impl SolverSummary {
    pub fn of(stats: &[StepStats]) -> Self {
        Self {
            steps: stats.len(),
            total_newton_iterations: stats.iter().map(|s| s.newton_iterations).sum(),
            max_newton_iterations: stats.iter().map(|s| s.newton_iterations).max().unwrap_or(0),
            max_plastic_points: stats.iter().map(|s| s.plastic_points).max().unwrap_or(0),
            max_relative_residual: stats.iter().map(|s| s.relative_residual).fold(0.0, f64::max),
        }
    }
}

/// The probe results without the seminorm tables (those go to CSV files).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub delta: f64,
    pub space_window: [f64; 2],
    pub time_window: [f64; 2],
    pub table_files: Vec<String>,
    pub exponents: Vec<ExponentReport>,
    pub tangential_quotients: Vec<QuotientSpread>,
    pub interpolation: Option<InterpolationReport>,
    pub interpolation_error: Option<String>,
    pub strips: Vec<StripReport>,
}

impl ProbeSummary {
    pub fn of(report: &ProbeReport) -> Self {
        Self {
            delta: report.delta,
            space_window: report.space_window,
            time_window: report.time_window,
            table_files: report.tables.iter().map(table_file_name).collect(),
            exponents: report.exponents.clone(),
            tangential_quotients: report.tangential_quotients.clone(),
            interpolation: report.interpolation.clone(),
            interpolation_error: report.interpolation_error.clone(),
            strips: report.strips.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    /// Echo of the configuration with every default resolved.
    pub config: ScenarioConfig,
    pub mu: f64,
    pub dt: f64,
    pub validation: Vec<Violation>,
    pub safety_load: SafetyLoadReport,
    pub solver: SolverSummary,
    pub energy: EnergySummary,
    pub invariants: Option<InvariantReport>,
    /// Why the invariants were not checked.
    pub invariants_skipped: Option<String>,
    pub targets: ExponentTargets,
    pub probe: Option<ProbeSummary>,
}

pub fn table_file_name(t: &SeminormTable) -> String {
    format!("table_{}_{}_{}.csv", t.axis, t.field.name(), t.mode)
}

pub fn table_csv(t: &SeminormTable, nf: NumberFormat) -> String {
    let mut s = String::from("axis,field,mode,h,value\n");
    for r in &t.rows {
        let _ = writeln!(s, "{},{},{},{},{}", t.axis, t.field.name(), t.mode, nf.fmt(r.h), nf.fmt(r.value));
    }
    s
}

pub fn energy_csv(e: &EnergyReport, nf: NumberFormat) -> String {
    let mut s = String::from(
        "step,t,penalty_energy,dissipation,sigma_rate_l2,xi_rate_l2,u_rate_h1,overshoot_linf,overshoot_l2\n",
    );
    for r in &e.rows {
        let vals = [
            r.t,
            r.penalty_energy,
            r.dissipation,
            r.sigma_rate_l2,
            r.xi_rate_l2,
            r.u_rate_h1,
            r.overshoot_linf,
            r.overshoot_l2,
        ];
        let _ = write!(s, "{}", r.step);
        for v in vals {
            let _ = write!(s, ",{}", nf.fmt(v));
        }
        s.push('\n');
    }
    s
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `report.json`, `energy.csv` and one CSV per seminorm table.
pub fn emit_report(
    report: &RunReport,
    energy: &EnergyReport,
    tables: &[SeminormTable],
    out_dir: &Path,
    nf: NumberFormat,
) -> Result<Vec<PathBuf>, ReportError> {
    create_dir(out_dir)?;
    let mut files = vec![
        write(&out_dir.join("report.json"), &json(report))?,
        write(&out_dir.join("energy.csv"), &energy_csv(energy, nf))?,
    ];
    for t in tables {
        files.push(write(&out_dir.join(table_file_name(t)), &table_csv(t, nf))?);
    }
    Ok(files)
}

/// Per-`μ` overview of a sweep plus the uniformity measures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSummary {
    pub config: ScenarioConfig,
    pub run_dirs: Vec<String>,
    pub uniformity: UniformityReport,
}

pub fn emit_sweep_summary(summary: &SweepSummary, out_dir: &Path) -> Result<PathBuf, ReportError> {
    create_dir(out_dir)?;
    write(&out_dir.join("sweep_summary.json"), &json(summary))
}

/// Directory name for one run of a sweep.
pub fn mu_dir_name(index: usize, mu: f64) -> String {
    format!("mu_{index:02}_{mu:e}")
}

/// Timestamps and environment of a run, kept out of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Meta {
    pub command: String,
    pub version: &'static str,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub wall_seconds: f64,
    pub threads: usize,
    pub reproducible: bool,
}

pub fn emit_meta(meta: &Meta, out_dir: &Path) -> Result<PathBuf, ReportError> {
    create_dir(out_dir)?;
    write(&out_dir.join("meta.json"), &json(meta))
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
