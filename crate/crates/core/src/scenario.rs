//! Scenario files: parsing with resolved defaults, validation, the
//! closed-form data generators and the built-in benchmark library.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{HardeningLaw, MaterialParams, Model};
use crate::discretization::{
    assemble_residual, make_cutoff, sym_gradient, Assembler, BoundaryMode, CutoffSide, Geometry, Grid, LoadData,
};
use crate::evolution::{safety_load_check_on, Scenario};
use crate::probe::{default_probes, CutoffSpec, ProbeConfig, ProbeSpec};
use crate::tensor::{SymTensor2, Tensor4Sym};

pub const DEFAULT_DELTA: f64 = 0.05;
pub const DEFAULT_C1: f64 = 0.1;
pub const DEFAULT_EPS0: f64 = 0.1;
pub const DEFAULT_H0: f64 = 0.25;
/// Relative tolerance of the weak equilibrium check on the reference stress.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;
/// Tolerance of `E(u₀(0)) = A σ₀(0)` relative to the data scale.
pub const COMPATIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field `{field}`: {message}")]
    Schema { field: &'static str, message: String },
    #[error("unknown data generator `{0}` (known: {known})", known = GENERATORS.join(", "))]
    UnknownGenerator(String),
    #[error("unknown benchmark `{0}` (known: {known})", known = benchmark_names().join(", "))]
    UnknownBenchmark(String),
}

fn schema(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        field,
        message: message.into(),
    }
}

/// A single penalty parameter or a sweep list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuSpec {
    Single(f64),
    List(Vec<f64>),
}

impl MuSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Single(m) => vec![*m],
            Self::List(v) => v.clone(),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// A linear map on symmetric tensors (`elastic`, tensor `hardening`) or a
/// scalar hardening modulus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OperatorSpec {
    /// `scale · Id`
    Identity {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Isotropic compliance `P_dev / (2G) + P_vol / (d K)`.
    Isotropic { shear_modulus: f64, bulk_modulus: f64 },
    /// `dev · P_dev + vol · P_vol`
    Coefficients { dev: f64, vol: f64 },
    /// Full Mandel matrix.
    Mandel { matrix: Vec<Vec<f64>> },
    /// Isotropic hardening modulus `H`.
    Scalar { modulus: f64 },
}

impl OperatorSpec {
    fn tensor(&self, d: usize, field: &'static str) -> Result<Tensor4Sym, ScenarioError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(schema(field, format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Self::Identity { scale } => Ok(Tensor4Sym::scaled_identity(d, positive("scale", *scale)?)),
            Self::Isotropic {
                shear_modulus,
                bulk_modulus,
            } => Ok(Tensor4Sym::isotropic_compliance(
                d,
                positive("shear_modulus", *shear_modulus)?,
                positive("bulk_modulus", *bulk_modulus)?,
            )),
            Self::Coefficients { dev, vol } => {
                Ok(Tensor4Sym::isotropic(d, positive("dev", *dev)?, positive("vol", *vol)?))
            }
            Self::Mandel { matrix } => {
                Tensor4Sym::from_mandel_matrix(d, matrix).map_err(|e| schema(field, e.to_string()))
            }
            Self::Scalar { .. } => Err(schema(field, "a scalar modulus is not a tensor")),
        }
    }
}

/// Known generator ids.
pub const GENERATORS: &[&str] = &["zero", "polynomial", "affine"];

/// Row-major `d × d` matrix; an empty list stands for zero.
pub type Matrix = Vec<Vec<f64>>;

/// One power of `t` in the reference stress: `S + Σ_j x_j T_j`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressTerm {
    #[serde(default)]
    pub constant: Matrix,
    #[serde(default)]
    pub gradient: Vec<Matrix>,
}

/// `u₀ = Σ_p t^p (G_p x + ½ xᵀQ_{p,i}x e_i)`,
/// `σ₀ = Σ_p t^p (S_p + Σ_j x_j T_{p,j})` and the body force `f = -div σ₀`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialParams {
    #[serde(default)]
    pub displacement: Vec<Matrix>,
    /// `Q_{p,i}`, one symmetric matrix per displacement component.
    #[serde(default)]
    pub displacement_quadratic: Vec<Vec<Matrix>>,
    #[serde(default)]
    pub stress: Vec<StressTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "lowercase")]
pub enum DataSpec {
    Zero,
    #[serde(alias = "affine")]
    Polynomial(PolynomialParams),
}

type Mat3 = [[f64; 3]; 3];

fn to_mat3(m: &Matrix, d: usize, symmetric: bool, field: &'static str) -> Result<Mat3, ScenarioError> {
    let mut out = [[0.0; 3]; 3];
    if m.is_empty() {
        return Ok(out);
    }
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        return Err(schema(field, format!("matrices must be {d}×{d}")));
    }
    for i in 0..d {
        for j in 0..d {
            if !m[i][j].is_finite() {
                return Err(schema(field, "matrix entries must be finite"));
            }
            out[i][j] = m[i][j];
        }
    }
    if symmetric {
        for i in 0..d {
            for j in 0..i {
                if out[i][j] != out[j][i] {
                    return Err(schema(field, "stress matrices must be symmetric"));
                }
            }
        }
    }
    Ok(out)
}

/// Closed-form polynomial data: displacement up to quadratic and stress
/// affine in space.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialData {
    d: usize,
    g: Vec<Mat3>,
    /// `q[p][i]`
    q: Vec<Vec<Mat3>>,
    s: Vec<Mat3>,
    /// `t[p][j]`
    t: Vec<Vec<Mat3>>,
}

impl PolynomialData {
    pub fn new(d: usize, params: &PolynomialParams) -> Result<Self, ScenarioError> {
        let g = params
            .displacement
            .iter()
            .map(|m| to_mat3(m, d, false, "data.displacement"))
            .collect::<Result<_, _>>()?;
        let mut q = Vec::new();
        for term in &params.displacement_quadratic {
            if !term.is_empty() && term.len() != d {
                return Err(schema("data.displacement_quadratic", format!("need {d} matrices per power")));
            }
            let mut qp = vec![[[0.0; 3]; 3]; d];
            for (i, m) in term.iter().enumerate() {
                qp[i] = to_mat3(m, d, true, "data.displacement_quadratic")?;
            }
            q.push(qp);
        }
        let mut s = Vec::new();
        let mut t = Vec::new();
        for term in &params.stress {
            s.push(to_mat3(&term.constant, d, true, "data.stress")?);
            if term.gradient.len() > d {
                return Err(schema("data.stress", format!("at most {d} gradient matrices")));
            }
            let mut tp = vec![[[0.0; 3]; 3]; d];
            for (j, m) in term.gradient.iter().enumerate() {
                tp[j] = to_mat3(m, d, true, "data.stress")?;
            }
            t.push(tp);
        }
        Ok(Self { d, g, q, s, t })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            d,
            g: Vec::new(),
            q: Vec::new(),
            s: Vec::new(),
            t: Vec::new(),
        }
    }
}

impl LoadData for PolynomialData {
    fn displacement(&self, t: f64, x: &[f64; 3]) -> [f64; 3] {
        let mut u = [0.0; 3];
        for (p, g) in self.g.iter().enumerate() {
            let tp = t.powi(p as i32);
            for i in 0..self.d {
                for j in 0..self.d {
                    u[i] += tp * g[i][j] * x[j];
                }
            }
        }
        for (p, qp) in self.q.iter().enumerate() {
            let tp = t.powi(p as i32);
            for (i, qm) in qp.iter().enumerate() {
                let mut v = 0.0;
                for j in 0..self.d {
                    for k in 0..self.d {
                        v += x[j] * qm[j][k] * x[k];
                    }
                }
                u[i] += 0.5 * tp * v;
            }
        }
        u
    }

    fn reference_stress(&self, t: f64, x: &[f64; 3]) -> SymTensor2 {
        let mut m = [[0.0; 3]; 3];
        for (p, (s, tj)) in self.s.iter().zip(&self.t).enumerate() {
            let tp = t.powi(p as i32);
            for i in 0..self.d {
                for k in 0..self.d {
                    let mut v = s[i][k];
                    for (j, tm) in tj.iter().enumerate() {
                        v += x[j] * tm[i][k];
                    }
                    m[i][k] += tp * v;
                }
            }
        }
        SymTensor2::sym_of(self.d, &m)
    }

    fn body_force(&self, t: f64, _x: &[f64; 3]) -> [f64; 3] {
        let mut f = [0.0; 3];
        for (p, tj) in self.t.iter().enumerate() {
            let tp = t.powi(p as i32);
            for i in 0..self.d {
                for (j, tm) in tj.iter().enumerate() {
                    f[i] -= tp * tm[i][j];
                }
            }
        }
        f
    }
}

impl DataSpec {
    pub fn build(&self, d: usize) -> Result<PolynomialData, ScenarioError> {
        match self {
            Self::Zero => Ok(PolynomialData::zero(d)),
            Self::Polynomial(p) => PolynomialData::new(d, p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub space: [f64; 2],
    pub time: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCutoff {
    eps0: Option<f64>,
    h0: Option<f64>,
    side: Option<CutoffSide>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWindow {
    space: Option<[f64; 2]>,
    time: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    model: Model,
    d: usize,
    n: usize,
    #[serde(rename = "T")]
    t_final: f64,
    #[serde(rename = "N")]
    steps: usize,
    mu: MuSpec,
    kappa: f64,
    c1: Option<f64>,
    elastic: OperatorSpec,
    hardening: OperatorSpec,
    boundary_mode: BoundaryMode,
    data: serde_json::Value,
    cutoff: Option<RawCutoff>,
    probes: Option<Vec<ProbeSpec>>,
    fit_window: Option<RawWindow>,
    delta: Option<f64>,
    allow_coarse_dt: Option<bool>,
}

/// A scenario file with every default filled in. Serializing it gives a
/// file that parses back to the same configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: Model,
    pub d: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    pub mu: MuSpec,
    pub kappa: f64,
    pub c1: f64,
    pub elastic: OperatorSpec,
    pub hardening: OperatorSpec,
    pub boundary_mode: BoundaryMode,
    pub data: DataSpec,
    pub cutoff: CutoffSpec,
    pub probes: Vec<ProbeSpec>,
    pub fit_window: FitWindow,
    pub delta: f64,
    /// Allows sweeps with `Δt > μ_min / 2`.
    pub allow_coarse_dt: bool,
}

impl RawScenario {
    fn resolve(self) -> Result<ScenarioConfig, ScenarioError> {
        let d = self.d;
        if d != 2 && d != 3 {
            return Err(schema("d", format!("must be 2 or 3, got {d}")));
        }
        if self.n < 2 {
            return Err(schema("n", format!("must be at least 2, got {}", self.n)));
        }
        if self.steps == 0 {
            return Err(schema("N", "must be positive"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(schema("T", format!("must be positive, got {}", self.t_final)));
        }
        let generator = self
            .data
            .get("generator")
            .and_then(|g| g.as_str())
            .ok_or_else(|| schema("data", "missing string field `generator`"))?;
        if !GENERATORS.contains(&generator) {
            return Err(ScenarioError::UnknownGenerator(generator.to_string()));
        }
        let data: DataSpec = serde_json::from_value(self.data).map_err(|e| schema("data", e.to_string()))?;
        let side = match self.boundary_mode {
            BoundaryMode::Mixed => CutoffSide::Neumann,
            _ => CutoffSide::Full,
        };
        let cutoff = self.cutoff.map_or(
            CutoffSpec {
                eps0: DEFAULT_EPS0,
                h0: DEFAULT_H0,
                side,
            },
            |c| CutoffSpec {
                eps0: c.eps0.unwrap_or(DEFAULT_EPS0),
                h0: c.h0.unwrap_or(DEFAULT_H0),
                side: c.side.unwrap_or(side),
            },
        );
        let h = 1.0 / self.n as f64;
        let dt = self.t_final / self.steps as f64;
        let window = self.fit_window.unwrap_or(RawWindow { space: None, time: None });
        let config = ScenarioConfig {
            name: self.name.unwrap_or_else(|| "unnamed".into()),
            model: self.model,
            d,
            n: self.n,
            t_final: self.t_final,
            steps: self.steps,
            mu: self.mu,
            kappa: self.kappa,
            c1: self.c1.unwrap_or(DEFAULT_C1),
            elastic: self.elastic,
            hardening: self.hardening,
            boundary_mode: self.boundary_mode,
            data,
            cutoff,
            probes: self.probes.unwrap_or_else(|| default_probes(d)),
            fit_window: FitWindow {
                space: window.space.unwrap_or([2.0 * h, 0.25]),
                time: window.time.unwrap_or([2.0 * dt, 0.25 * self.t_final]),
            },
            delta: self.delta.unwrap_or(DEFAULT_DELTA),
            allow_coarse_dt: self.allow_coarse_dt.unwrap_or(false),
        };
        config.check()?;
        Ok(config)
    }
}

impl ScenarioConfig {
    fn check(&self) -> Result<(), ScenarioError> {
        let mus = self.mu.values();
        if mus.is_empty() {
            return Err(schema("mu", "list must not be empty"));
        }
        if let Some(m) = mus.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(schema("mu", format!("values must be positive, got {m}")));
        }
        if mus.windows(2).any(|w| w[1] >= w[0]) {
            return Err(schema("mu", "sweep values must be strictly descending"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(schema("kappa", format!("must be positive (kappa >= c1 > 0), got {}", self.kappa)));
        }
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            return Err(schema("c1", format!("must be positive, got {}", self.c1)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0 / 3.0) {
            return Err(schema("delta", format!("must lie in (0, 1/3), got {}", self.delta)));
        }
        // An empty window (lower > upper) is allowed; the fits report it.
        for (field, w) in [("fit_window.space", self.fit_window.space), ("fit_window.time", self.fit_window.time)] {
            if !(w[0] > 0.0 && w[1] > 0.0 && w.iter().all(|v| v.is_finite())) {
                return Err(schema(field, format!("bounds must be positive, got {w:?}")));
            }
        }
        match (self.model, &self.hardening) {
            (Model::Isotropic, OperatorSpec::Scalar { .. }) => {}
            (Model::Isotropic, _) => return Err(schema("hardening", "isotropic model needs {\"type\": \"scalar\"}")),
            (Model::Kinematic, OperatorSpec::Scalar { .. }) => {
                return Err(schema("hardening", "kinematic model needs a tensor hardening operator"))
            }
            _ => {}
        }
        for p in &self.probes {
            if p.axis.coordinate(self.d).is_none() && p.axis != crate::probe::Axis::Time {
                return Err(schema("probes", format!("axis {} does not exist for d = {}", p.axis, self.d)));
            }
        }
        Ok(())
    }

    pub fn mus(&self) -> Vec<f64> {
        self.mu.values()
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn material(&self, mu: f64) -> Result<MaterialParams, ScenarioError> {
        let compliance = self.elastic.tensor(self.d, "elastic")?;
        let hardening = match &self.hardening {
            OperatorSpec::Scalar { modulus } => HardeningLaw::Isotropic(*modulus),
            other => HardeningLaw::Kinematic(other.tensor(self.d, "hardening")?),
        };
        MaterialParams::new(compliance, hardening, self.kappa, mu, self.c1).map_err(|e| schema("elastic", e.to_string()))
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            cutoff: self.cutoff,
            probes: self.probes.clone(),
            space_window: Some(self.fit_window.space),
            time_window: Some(self.fit_window.time),
            delta: self.delta,
        }
    }

    /// Evolution problem for the first listed `μ`.
    pub fn scenario(&self) -> Result<Scenario, ScenarioError> {
        self.scenario_with_mu(self.mus()[0])
    }

    pub fn scenario_with_mu(&self, mu: f64) -> Result<Scenario, ScenarioError> {
        let geometry = Geometry::new(self.d, self.boundary_mode).map_err(|e| schema("d", e.to_string()))?;
        Ok(Scenario {
            geometry,
            n: self.n,
            t_final: self.t_final,
            steps: self.steps,
            params: self.material(mu)?,
            data: Arc::new(self.data.build(self.d)?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = serde_json::from_str(text)?;
    let config = raw.resolve()?;
    // Fail early on operators that cannot be built.
    config.material(config.mus()[0])?;
    config.data.build(config.d)?;
    Ok(config)
}

/// Parses a scenario file, or a built-in benchmark given as `benchmark:<name>`.
pub fn parse_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, ScenarioError> {
    let path = path.as_ref();
    if let Some(name) = path.to_str().and_then(|p| p.strip_prefix("benchmark:")) {
        return benchmark(name);
    }
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text)
}

/// A failed runnability check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub check: &'static str,
    pub message: String,
}

fn violation(check: &'static str, message: impl Into<String>) -> Violation {
    Violation {
        check,
        message: message.into(),
    }
}

/// `max |E(u₀(0)) - A σ₀(0)|` over quadrature points and the data scale.
pub fn compatibility_gap(scenario: &Scenario, grid: &Grid) -> (f64, f64) {
    let data = scenario.data.as_ref();
    let u0 = grid.interpolate(|x| data.displacement(0.0, x));
    let strain = sym_gradient(&u0, grid).expect("sized by grid");
    let a = scenario.params.compliance();
    let mut gap = 0.0f64;
    let mut scale = 0.0f64;
    for (qp, e) in strain.iter().enumerate() {
        let ae = a.apply(&data.reference_stress(0.0, &grid.qp_point(qp)));
        gap = gap.max((*e - ae).max_abs());
        scale = scale.max(e.max_abs()).max(ae.max_abs());
    }
    (gap, scale)
}

/// Relative weak equilibrium residual of `σ₀(t)` against `f(t)` and the
/// Neumann traction.
pub fn equilibrium_residual(scenario: &Scenario, grid: &Grid, assembler: &Assembler, t: f64) -> f64 {
    let data = scenario.data.as_ref();
    let sigma = grid.sample_qp(|x| data.reference_stress(t, x));
    let r = assemble_residual(assembler, grid, &sigma, data, t).expect("sized by grid");
    let fint = assembler.internal_force(grid, &sigma).expect("sized by grid");
    let fext = crate::discretization::external_force(grid, data, t);
    let scale = fint.iter().chain(&fext).fold(0.0f64, |m, v| m.max(v.abs()));
    let rmax = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        rmax
    } else {
        rmax / scale
    }
}

/// Runnability checks: ellipticity, the safety load, compatibility of the
/// initial data, weak equilibrium of the reference stress, the cutoff and
/// the time-step rule for sweeps. An empty list means runnable.
pub fn validate(config: &ScenarioConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let scenario = match config.scenario() {
        Ok(s) => s,
        Err(e) => return vec![violation("configuration", e.to_string())],
    };
    for m in scenario.params.check_invariants() {
        out.push(violation("ellipticity", m));
    }
    let grid = match scenario.grid() {
        Ok(g) => g,
        Err(e) => {
            out.push(violation("configuration", e.to_string()));
            return out;
        }
    };
    let safety = safety_load_check_on(&scenario, &grid);
    if !safety.pass {
        out.push(violation(
            "safety-load",
            format!(
                "safety load condition fails: max |dev sigma0(x, 0)| = {} is not below kappa = {}",
                safety.max_initial_deviator, config.kappa
            ),
        ));
    }
    let (gap, scale) = compatibility_gap(&scenario, &grid);
    if gap > COMPATIBILITY_TOL * scale.max(1.0) {
        out.push(violation(
            "compatibility",
            format!("compatibility condition E(u0(0)) = A sigma0(0) violated by {gap:e}; the initial plastic strain would not vanish"),
        ));
    }
    let assembler = Assembler::new(&grid);
    let worst = [0.0, 0.5 * config.t_final, config.t_final]
        .iter()
        .map(|&t| (t, equilibrium_residual(&scenario, &grid, &assembler, t)))
        .fold((0.0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    if worst.1 > EQUILIBRIUM_TOL {
        out.push(violation(
            "equilibrium",
            format!(
                "reference stress is not in weak equilibrium with the body force: relative residual {:e} at t = {}",
                worst.1, worst.0
            ),
        ));
    }
    if let Err(e) = make_cutoff(&grid, config.cutoff.eps0, config.cutoff.h0, config.cutoff.side) {
        out.push(violation("cutoff", e.to_string()));
    }
    let mus = config.mus();
    let mu_min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    if mus.len() > 1 && !config.allow_coarse_dt && config.dt() > 0.5 * mu_min * (1.0 + 1e-12) {
        out.push(violation(
            "time-step",
            format!(
                "sweep needs dt <= mu_min / 2 = {} (dt = {}); increase N or set allow_coarse_dt",
                0.5 * mu_min,
                config.dt()
            ),
        ));
    }
    out
}

/// Built-in benchmark scenario files.
pub const BENCHMARKS: &[(&str, &str)] = &[
    ("elastic-only", include_str!("../benchmarks/elastic-only.json")),
    ("homogeneous-plastic", include_str!("../benchmarks/homogeneous-plastic.json")),
    ("mixed-boundary-kinematic", include_str!("../benchmarks/mixed-boundary-kinematic.json")),
    ("mixed-boundary-isotropic", include_str!("../benchmarks/mixed-boundary-isotropic.json")),
    ("dirichlet-isotropic", include_str!("../benchmarks/dirichlet-isotropic.json")),
];

pub fn benchmark_names() -> Vec<&'static str> {
    BENCHMARKS.iter().map(|b| b.0).collect()
}

pub fn benchmark(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let text = BENCHMARKS
        .iter()
        .find(|b| b.0 == name)
        .ok_or_else(|| ScenarioError::UnknownBenchmark(name.to_string()))?
        .1;
    parse_scenario_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": "kinematic", "d": 2, "n": 4, "T": 1.0, "N": 10, "mu": 0.01, "kappa": 1.0,
        "elastic": {"type": "identity"}, "hardening": {"type": "identity"},
        "boundary_mode": "mixed", "data": {"generator": "zero"}
    }"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(c.delta, 0.05);
        assert_eq!(c.dt(), 0.1);
        assert_eq!(c.cutoff.side, CutoffSide::Neumann);
        assert_eq!(c.fit_window.space, [0.5, 0.25]);
        assert_eq!(c.probes, default_probes(2));
        assert!(validate(&c).is_empty());
    }

    #[test]
    fn round_trip() {
        for (name, _) in BENCHMARKS {
            let c = benchmark(name).unwrap();
            assert_eq!(parse_scenario_str(&c.to_json()).unwrap(), c, "{name}");
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        let e = parse_scenario_str(&MINIMAL.replace("\"kappa\": 1.0", "\"kappa\": 0.0")).unwrap_err();
        assert!(e.to_string().contains("kappa"), "{e}");
        let e = parse_scenario_str(&MINIMAL.replace("\"n\": 4,", "")).unwrap_err();
        assert!(e.to_string().contains("`n`"), "{e}");
        let e = parse_scenario_str(&MINIMAL.replace("\"zero\"", "\"spline\"")).unwrap_err();
        assert!(matches!(e, ScenarioError::UnknownGenerator(_)));
        let e = parse_scenario_str(&MINIMAL.replace("\"mu\": 0.01", "\"mu\": [0.01, 0.1]")).unwrap_err();
        assert!(e.to_string().contains("mu"));
    }

    #[test]
    fn mu_list_enables_sweep() {
        let c = parse_scenario_str(&MINIMAL.replace("\"mu\": 0.01", "\"mu\": [0.1, 0.01]")).unwrap();
        assert_eq!(c.mus(), vec![0.1, 0.01]);
        // dt = 0.1 > 0.005
        assert_eq!(validate(&c).iter().map(|v| v.check).collect::<Vec<_>>(), vec!["time-step"]);
    }

    #[test]
    fn body_force_is_minus_divergence() {
        let p = PolynomialParams {
            displacement: vec![],
            displacement_quadratic: vec![],
            stress: vec![
                StressTerm::default(),
                StressTerm {
                    constant: vec![],
                    gradient: vec![vec![vec![1.0, 2.0], vec![2.0, 0.0]], vec![vec![0.0, 0.5], vec![0.5, 3.0]]],
                },
            ],
        };
        let a = PolynomialData::new(2, &p).unwrap();
        let f = a.body_force(2.0, &[0.3, 0.4, 0.0]);
        assert_eq!(f[0], -2.0 * (1.0 + 0.5));
        assert_eq!(f[1], -2.0 * (2.0 + 3.0));
    }

    #[test]
    fn quadratic_displacement_term() {
        let p = PolynomialParams {
            displacement: vec![vec![], vec![vec![1.0, 0.0], vec![0.0, 0.0]]],
            displacement_quadratic: vec![vec![], vec![vec![], vec![vec![2.0, 1.0], vec![1.0, 0.0]]]],
            stress: vec![],
        };
        let a = PolynomialData::new(2, &p).unwrap();
        let u = a.displacement(2.0, &[0.3, 0.4, 0.0]);
        assert!((u[0] - 2.0 * 0.3).abs() < 1e-15);
        // ½ t xᵀQx = x₁² + x₁x₂ at t = 1, doubled at t = 2.
        assert!((u[1] - 2.0 * (0.09 + 0.12)).abs() < 1e-15);
        let bad = PolynomialParams {
            displacement_quadratic: vec![vec![vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![]]],
            ..PolynomialParams::default()
        };
        assert!(PolynomialData::new(2, &bad).is_err());
    }
}
