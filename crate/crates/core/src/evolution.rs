//! Rothe (implicit Euler) time stepping of the penalized problem with a
//! global Newton solve per step, the recorded space-time history and the
//! discrete energy diagnostics.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::constitutive::{
    local_update_with_tangent, ConstitutiveError, ConstitutiveState, HardeningLaw,
    HardeningVariable, MaterialParams, Model,
};
use crate::discretization::{
    external_force, free_part, sym_gradient, Assembler, DiscretizationError, Geometry, Grid,
    LinearSolver, LoadData, NodeTag, TangentField,
};
use crate::tensor::{components, SymTensor2, Tensor4Sym};

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_RTOL: f64 = 1e-10;
/// Absolute residual floor for (nearly) stress-free states.
pub const NEWTON_ATOL: f64 = 1e-13;
const LINE_SEARCH_HALVINGS: usize = 12;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("step {step}: global Newton did not converge after {iterations} iterations (relative residual {residual:e}); use a smaller time step or a larger mu")]
    NewtonNonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("step {step}: {source}")]
    Constitutive {
        step: usize,
        #[source]
        source: ConstitutiveError,
    },
    #[error("step {step}: {source}")]
    Discretization {
        step: usize,
        #[source]
        source: DiscretizationError,
    },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// A fully resolved loading problem.
#[derive(Clone)]
pub struct Scenario {
    pub geometry: Geometry,
    pub n: usize,
    pub t_final: f64,
    pub steps: usize,
    pub params: MaterialParams,
    pub data: Arc<dyn LoadData>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("geometry", &self.geometry)
            .field("n", &self.n)
            .field("t_final", &self.t_final)
            .field("steps", &self.steps)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl Scenario {
    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t_final * step as f64 / self.steps as f64
    }

    pub fn model(&self) -> Model {
        self.params.model()
    }

    pub fn grid(&self) -> Result<Grid, DiscretizationError> {
        Grid::new(self.geometry, self.n)
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self, ConstitutiveError> {
        Ok(Self {
            params: self.params.with_mu(mu)?,
            ..self.clone()
        })
    }

    fn check(&self) -> Result<(), EvolutionError> {
        if self.steps == 0 {
            return Err(EvolutionError::InvalidScenario("step count must be positive".into()));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(EvolutionError::InvalidScenario(format!(
                "final time must be positive, got {}",
                self.t_final
            )));
        }
        if self.params.dim() != self.geometry.dim {
            return Err(EvolutionError::InvalidScenario(format!(
                "material dimension {} does not match geometry dimension {}",
                self.params.dim(),
                self.geometry.dim
            )));
        }
        Ok(())
    }
}

fn tensor_from(d: usize, c: &[f64]) -> SymTensor2 {
    let mut t = SymTensor2::zero(d);
    t.as_mut_slice().copy_from_slice(c);
    t
}

/// Solution at one time level.
#[derive(Clone, Debug)]
pub struct SolverState {
    pub step: usize,
    pub t: f64,
    pub u: Vec<f64>,
    /// `E(u)` at every quadrature point.
    pub strain: Vec<SymTensor2>,
    pub states: Vec<ConstitutiveState>,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct StepStats {
    pub newton_iterations: usize,
    pub plastic_points: usize,
    pub relative_residual: f64,
}

struct Evaluation {
    strain: Vec<SymTensor2>,
    states: Vec<ConstitutiveState>,
    tangents: Vec<Tensor4Sym>,
    plastic_points: usize,
    residual: Vec<f64>,
    norm: f64,
    scale: f64,
}

/// Per-step nonlinear solver for a fixed scenario.
pub struct Solver<'a> {
    scenario: &'a Scenario,
    grid: Grid,
    assembler: Assembler,
    elastic: Option<LinearSolver>,
    dt: f64,
}

impl<'a> Solver<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self, EvolutionError> {
        scenario.check()?;
        let grid = scenario
            .grid()
            .map_err(|source| EvolutionError::Discretization { step: 0, source })?;
        let assembler = Assembler::new(&grid);
        Ok(Self {
            scenario,
            assembler,
            grid,
            elastic: None,
            dt: scenario.dt(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    /// `u(0) = u₀(0)` at the nodes, `σ(0) = σ₀(0)` and `ξ(0) = 0` at the
    /// quadrature points, `e_p(0) = E(u(0)) - A σ(0)`.
    pub fn initial_state(&self) -> Result<SolverState, EvolutionError> {
        let data = &self.scenario.data;
        let params = &self.scenario.params;
        let d = self.grid.dim();
        let u = self.grid.interpolate(|x| data.displacement(0.0, x));
        let strain = sym_gradient(&u, &self.grid)
            .map_err(|source| EvolutionError::Discretization { step: 0, source })?;
        let states = (0..self.grid.n_qp())
            .map(|qp| {
                let sigma = data.reference_stress(0.0, &self.grid.qp_point(qp));
                let mut s = ConstitutiveState::new(sigma, params.model());
                s.ep = strain[qp] - params.compliance().apply(&sigma);
                debug_assert_eq!(s.ep.dim(), d);
                s
            })
            .collect();
        Ok(SolverState {
            step: 0,
            t: 0.0,
            u,
            strain,
            states,
        })
    }

    fn evaluate(
        &self,
        prev: &SolverState,
        u: &[f64],
        fext: &[f64],
        step: usize,
    ) -> Result<Evaluation, EvolutionError> {
        let params = &self.scenario.params;
        let strain = sym_gradient(u, &self.grid)
            .map_err(|source| EvolutionError::Discretization { step, source })?;
        let results: Vec<_> = (0..self.grid.n_qp())
            .into_par_iter()
            .map(|qp| {
                local_update_with_tangent(
                    &prev.states[qp],
                    &(strain[qp] - prev.strain[qp]),
                    self.dt,
                    params,
                )
            })
            .collect();
        let mut states = Vec::with_capacity(results.len());
        let mut tangents = Vec::with_capacity(results.len());
        let mut plastic_points = 0;
        for r in results {
            let (upd, tan) = r.map_err(|source| EvolutionError::Constitutive { step, source })?;
            plastic_points += usize::from(upd.plastic);
            states.push(upd.state);
            tangents.push(tan);
        }
        let sigma: Vec<SymTensor2> = states.iter().map(|s| s.sigma).collect();
        let fint = self
            .assembler
            .internal_force(&self.grid, &sigma)
            .map_err(|source| EvolutionError::Discretization { step, source })?;
        let full: Vec<f64> = fint.iter().zip(fext).map(|(a, b)| a - b).collect();
        let residual = free_part(&self.grid, &full);
        let norm = l2(&residual);
        let scale = l2(&fint).max(l2(fext));
        Ok(Evaluation {
            strain,
            states,
            tangents,
            plastic_points,
            residual,
            norm,
            scale,
        })
    }

    fn converged(e: &Evaluation) -> bool {
        e.norm <= NEWTON_RTOL * e.scale || e.norm <= NEWTON_ATOL
    }

    fn elastic_solver(&mut self, step: usize) -> Result<&LinearSolver, EvolutionError> {
        if self.elastic.is_none() {
            let k = self
                .assembler
                .tangent(&self.grid, TangentField::Uniform(self.scenario.params.stiffness()))
                .and_then(LinearSolver::new)
                .map_err(|source| EvolutionError::Discretization { step, source })?;
            self.elastic = Some(k);
        }
        Ok(self.elastic.as_ref().expect("elastic solver"))
    }

    /// Advances `prev` by one time step.
    pub fn step(&mut self, prev: &SolverState) -> Result<(SolverState, StepStats), EvolutionError> {
        let step = prev.step + 1;
        let t = self.scenario.time(step);
        let data = self.scenario.data.clone();
        let d = self.grid.dim();
        let mut u = prev.u.clone();
        for node in 0..self.grid.n_nodes() {
            if self.grid.tag(node) == NodeTag::Dirichlet {
                let v = data.displacement(t, &self.grid.node_coords(node));
                u[node * d..node * d + d].copy_from_slice(&v[..d]);
            }
        }
        let fext = external_force(&self.grid, data.as_ref(), t);
        let mut eval = self.evaluate(prev, &u, &fext, step)?;
        let mut iterations = 0;
        while !Self::converged(&eval) {
            if iterations == NEWTON_MAX_ITER {
                return Err(EvolutionError::NewtonNonConvergence {
                    step,
                    iterations,
                    residual: eval.norm / eval.scale.max(f64::MIN_POSITIVE),
                });
            }
            iterations += 1;
            let rhs: Vec<f64> = eval.residual.iter().map(|r| -r).collect();
            let delta = if eval.plastic_points == 0 {
                self.elastic_solver(step)?.solve(&rhs)
            } else {
                self.assembler
                    .tangent(&self.grid, TangentField::PerPoint(&eval.tangents))
                    .and_then(LinearSolver::new)
                    .and_then(|s| s.solve(&rhs))
            }
            .map_err(|source| EvolutionError::Discretization { step, source })?;

            let mut alpha = 1.0;
            let mut best: Option<(Vec<f64>, Evaluation)> = None;
            for _ in 0..=LINE_SEARCH_HALVINGS {
                let trial = self.shifted(&u, &delta, alpha);
                let e = self.evaluate(prev, &trial, &fext, step)?;
                let accept = e.norm <= (1.0 - 1e-4 * alpha) * eval.norm || Self::converged(&e);
                let better = best.as_ref().is_none_or(|(_, b)| e.norm < b.norm);
                if accept {
                    best = Some((trial, e));
                    break;
                }
                if better {
                    best = Some((trial, e));
                }
                alpha *= 0.5;
            }
            let (nu, ne) = best.expect("line search candidate");
            u = nu;
            eval = ne;
        }
        let stats = StepStats {
            newton_iterations: iterations,
            plastic_points: eval.plastic_points,
            relative_residual: eval.norm / eval.scale.max(f64::MIN_POSITIVE),
        };
        Ok((
            SolverState {
                step,
                t,
                u,
                strain: eval.strain,
                states: eval.states,
            },
            stats,
        ))
    }

    fn shifted(&self, u: &[f64], delta: &[f64], alpha: f64) -> Vec<f64> {
        let mut out = u.to_vec();
        for (dof, v) in out.iter_mut().enumerate() {
            let fi = self.grid.free_index(dof);
            if fi != crate::discretization::NOT_FREE {
                *v += alpha * delta[fi];
            }
        }
        out
    }

    /// Free-dof residual of an arbitrary stress field at time `t`.
    pub fn residual(&self, sigma: &[SymTensor2], t: f64) -> Result<Vec<f64>, DiscretizationError> {
        crate::discretization::assemble_residual(
            &self.assembler,
            &self.grid,
            sigma,
            self.scenario.data.as_ref(),
            t,
        )
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Quadrature-point fields that the probes and diagnostics can read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, serde::Deserialize)]
pub enum FieldKind {
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "xi")]
    Xi,
    #[serde(rename = "sigma_dot")]
    SigmaRate,
    #[serde(rename = "xi_dot")]
    XiRate,
    /// `∇u̇`, all `d²` components.
    #[serde(rename = "grad_u_dot")]
    GradURate,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::Sigma,
        FieldKind::Xi,
        FieldKind::SigmaRate,
        FieldKind::XiRate,
        FieldKind::GradURate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigma => "sigma",
            Self::Xi => "xi",
            Self::SigmaRate => "sigma_dot",
            Self::XiRate => "xi_dot",
            Self::GradURate => "grad_u_dot",
        }
    }

    pub fn is_rate(self) -> bool {
        matches!(self, Self::SigmaRate | Self::XiRate | Self::GradURate)
    }
}

/// The space-time record of a run: nodal displacements and quadrature-point
/// stress and hardening variable at every time level, stored as flat
/// component arrays (`qp·width + k`). Plastic strains are not stored; they
/// follow from `e_p = E(u) - A σ`.
#[derive(Clone, Debug)]
pub struct FieldHistory {
    pub grid: Grid,
    pub model: Model,
    pub dt: f64,
    pub times: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub stats: Vec<StepStats>,
}

impl FieldHistory {
    fn new(grid: Grid, model: Model, dt: f64) -> Self {
        Self {
            grid,
            model,
            dt,
            times: Vec::new(),
            u: Vec::new(),
            sigma: Vec::new(),
            xi: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn push(&mut self, s: &SolverState) {
        self.times.push(s.t);
        self.u.push(s.u.clone());
        self.sigma.push(s.states.iter().flat_map(|q| q.sigma.as_slice().to_vec()).collect());
        self.xi.push(s.states.iter().flat_map(|q| q.xi.components().to_vec()).collect());
    }

    /// Number of time steps (one less than the number of stored levels).
    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn width(&self, kind: FieldKind) -> usize {
        let m = components(self.dim());
        match kind {
            FieldKind::Sigma | FieldKind::SigmaRate => m,
            FieldKind::Xi | FieldKind::XiRate => match self.model {
                Model::Kinematic => m,
                Model::Isotropic => 1,
            },
            FieldKind::GradURate => self.dim() * self.dim(),
        }
    }

    /// Time levels at which `kind` is defined: all levels for states, levels
    /// `1..=N` for backward-difference rates.
    pub fn levels(&self, kind: FieldKind) -> std::ops::RangeInclusive<usize> {
        if kind.is_rate() {
            1..=self.steps()
        } else {
            0..=self.steps()
        }
    }

    /// Flat quadrature-point values of `kind` at time level `k`.
    pub fn field(&self, kind: FieldKind, k: usize) -> Vec<f64> {
        let rate = |s: &[Vec<f64>]| -> Vec<f64> {
            s[k].iter().zip(&s[k - 1]).map(|(a, b)| (a - b) / self.dt).collect()
        };
        match kind {
            FieldKind::Sigma => self.sigma[k].clone(),
            FieldKind::Xi => self.xi[k].clone(),
            FieldKind::SigmaRate => rate(&self.sigma),
            FieldKind::XiRate => rate(&self.xi),
            FieldKind::GradURate => {
                let v: Vec<f64> = self.u[k].iter().zip(&self.u[k - 1]).map(|(a, b)| (a - b) / self.dt).collect();
                let d = self.dim();
                let nq = self.grid.qp_per_cell();
                let mut out = Vec::with_capacity(self.grid.n_qp() * d * d);
                for qp in 0..self.grid.n_qp() {
                    let g = self.grid.gradient_at(&v, qp / nq, qp % nq);
                    for row in g.iter().take(d) {
                        out.extend_from_slice(&row[..d]);
                    }
                }
                out
            }
        }
    }

    pub fn sigma_at(&self, k: usize, qp: usize) -> SymTensor2 {
        let m = components(self.dim());
        tensor_from(self.dim(), &self.sigma[k][qp * m..(qp + 1) * m])
    }

    pub fn xi_at(&self, k: usize, qp: usize) -> HardeningVariable {
        match self.model {
            Model::Kinematic => {
                let m = components(self.dim());
                HardeningVariable::Tensor(tensor_from(self.dim(), &self.xi[k][qp * m..(qp + 1) * m]))
            }
            Model::Isotropic => HardeningVariable::Scalar(self.xi[k][qp]),
        }
    }

    pub fn state_at(&self, k: usize, qp: usize, params: &MaterialParams) -> ConstitutiveState {
        ConstitutiveState {
            sigma: self.sigma_at(k, qp),
            xi: self.xi_at(k, qp),
            ep: self.plastic_strain(k, params)[qp],
        }
    }

    /// `e_p = E(u) - A σ` at every quadrature point of level `k`.
    pub fn plastic_strain(&self, k: usize, params: &MaterialParams) -> Vec<SymTensor2> {
        let strain = sym_gradient(&self.u[k], &self.grid).expect("history field sizes");
        strain
            .iter()
            .enumerate()
            .map(|(qp, e)| *e - params.compliance().apply(&self.sigma_at(k, qp)))
            .collect()
    }
}

/// One row of the energy diagnostics.
#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq)]
pub struct EnergyRow {
    pub step: usize,
    pub t: f64,
    /// `∫ μ⁻¹ ((|β| - κ)₊)²`
    pub penalty_energy: f64,
    /// `Σ Δt (‖σ̇‖₂² + ‖ξ̇‖₂²)` up to this step.
    pub dissipation: f64,
    pub sigma_rate_l2: f64,
    pub xi_rate_l2: f64,
    /// `‖u̇‖_{1,2}`
    pub u_rate_h1: f64,
    pub overshoot_linf: f64,
    pub overshoot_l2: f64,
}

#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub sup_sigma_rate_l2: f64,
    pub sup_xi_rate_l2: f64,
    pub sup_u_rate_h1: f64,
    pub max_overshoot_linf: f64,
    pub final_overshoot_l2: f64,
    pub final_penalty_energy: f64,
    /// `E_pen(T) + C₁ Σ Δt (‖σ̇‖₂² + ‖ξ̇‖₂²)`
    pub energy_bound: f64,
}

/// Accumulates [`EnergyRow`]s level by level.
pub struct EnergyTracker<'g> {
    grid: &'g Grid,
    params: MaterialParams,
    dt: f64,
    report: EnergyReport,
}

impl<'g> EnergyTracker<'g> {
    pub fn new(grid: &'g Grid, params: &MaterialParams, dt: f64) -> Self {
        Self {
            grid,
            params: params.clone(),
            dt,
            report: EnergyReport::default(),
        }
    }

    fn overshoot(&self, sigma: &[f64], xi: &[f64]) -> (f64, f64, f64) {
        let d = self.grid.dim();
        let m = components(d);
        let w = self.grid.qp_weight();
        let (mut pen, mut l2sq, mut linf) = (0.0, 0.0, 0.0f64);
        for qp in 0..self.grid.n_qp() {
            let s = tensor_from(d, &sigma[qp * m..(qp + 1) * m]).dev();
            let f = match self.params.model() {
                Model::Kinematic => {
                    (s - tensor_from(d, &xi[qp * m..(qp + 1) * m]).dev()).norm() - self.params.kappa
                }
                Model::Isotropic => s.norm() - self.params.kappa - xi[qp],
            }
            .max(0.0);
            pen += w * f * f / self.params.mu;
            l2sq += w * f * f;
            linf = linf.max(f);
        }
        (pen, l2sq.sqrt(), linf)
    }

    /// Records level `step`; `prev` holds `(σ, ξ, u)` of the previous level.
    pub fn push(&mut self, step: usize, t: f64, cur: (&[f64], &[f64], &[f64]), prev: Option<(&[f64], &[f64], &[f64])>) {
        let (pen, ol2, olinf) = self.overshoot(cur.0, cur.1);
        let w = self.grid.qp_weight();
        let mut row = EnergyRow {
            step,
            t,
            penalty_energy: pen,
            overshoot_l2: ol2,
            overshoot_linf: olinf,
            dissipation: self.report.rows.last().map_or(0.0, |r| r.dissipation),
            ..EnergyRow::default()
        };
        if let Some(p) = prev {
            let rate_sq = |a: &[f64], b: &[f64]| -> f64 {
                let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                w * s / (self.dt * self.dt)
            };
            let s2 = rate_sq(cur.0, p.0);
            let x2 = rate_sq(cur.1, p.1);
            row.sigma_rate_l2 = s2.sqrt();
            row.xi_rate_l2 = x2.sqrt();
            row.dissipation += self.dt * (s2 + x2);
            let v: Vec<f64> = cur.2.iter().zip(p.2).map(|(a, b)| (a - b) / self.dt).collect();
            row.u_rate_h1 = h1_norm(self.grid, &v);
        }
        let r = &mut self.report;
        r.sup_sigma_rate_l2 = r.sup_sigma_rate_l2.max(row.sigma_rate_l2);
        r.sup_xi_rate_l2 = r.sup_xi_rate_l2.max(row.xi_rate_l2);
        r.sup_u_rate_h1 = r.sup_u_rate_h1.max(row.u_rate_h1);
        r.max_overshoot_linf = r.max_overshoot_linf.max(row.overshoot_linf);
        r.final_overshoot_l2 = row.overshoot_l2;
        r.final_penalty_energy = row.penalty_energy;
        r.energy_bound = row.penalty_energy + self.params.c1 * row.dissipation;
        r.rows.push(row);
    }

    pub fn finish(self) -> EnergyReport {
        self.report
    }
}

/// `(∫ |v|² + |∇v|²)^{1/2}` by quadrature.
pub fn h1_norm(grid: &Grid, v: &[f64]) -> f64 {
    let d = grid.dim();
    let nq = grid.qp_per_cell();
    let w = grid.qp_weight();
    let mut s = 0.0;
    for cell in 0..grid.n_cells() {
        for q in 0..nq {
            let val = grid.value_at(v, cell, q);
            let g = grid.gradient_at(v, cell, q);
            s += w * (0..d).map(|i| val[i] * val[i] + (0..d).map(|k| g[i][k] * g[i][k]).sum::<f64>()).sum::<f64>();
        }
    }
    s.sqrt()
}

/// Recomputes the energy diagnostics from a stored history.
pub fn energy_diagnostics(history: &FieldHistory, scenario: &Scenario) -> EnergyReport {
    let mut tracker = EnergyTracker::new(&history.grid, &scenario.params, history.dt);
    for k in 0..history.times.len() {
        let cur = (&history.sigma[k][..], &history.xi[k][..], &history.u[k][..]);
        let prev = (k > 0).then(|| (&history.sigma[k - 1][..], &history.xi[k - 1][..], &history.u[k - 1][..]));
        tracker.push(k, history.times[k], cur, prev);
    }
    tracker.finish()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep every time level (memory grows linearly with the step count).
    pub record_history: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub history: Option<FieldHistory>,
    pub energy: EnergyReport,
    pub final_state: SolverState,
    pub stats: Vec<StepStats>,
}

impl RunOutcome {
    pub fn total_newton_iterations(&self) -> usize {
        self.stats.iter().map(|s| s.newton_iterations).sum()
    }
}

fn flat(states: &[ConstitutiveState]) -> (Vec<f64>, Vec<f64>) {
    (
        states.iter().flat_map(|q| q.sigma.as_slice().to_vec()).collect(),
        states.iter().flat_map(|q| q.xi.components().to_vec()).collect(),
    )
}

/// Runs all steps, computing the energy diagnostics on the fly.
pub fn run_with(scenario: &Scenario, options: RunOptions) -> Result<RunOutcome, EvolutionError> {
    let mut solver = Solver::new(scenario)?;
    let grid = solver.grid().clone();
    let mut tracker = EnergyTracker::new(&grid, &scenario.params, scenario.dt());
    let mut history = options
        .record_history
        .then(|| FieldHistory::new(grid.clone(), scenario.model(), scenario.dt()));
    let mut state = solver.initial_state()?;
    let (mut s_prev, mut x_prev) = flat(&state.states);
    tracker.push(0, 0.0, (&s_prev, &x_prev, &state.u), None);
    if let Some(h) = history.as_mut() {
        h.push(&state);
    }
    let mut stats = Vec::with_capacity(scenario.steps);
    for _ in 0..scenario.steps {
        let (next, st) = solver.step(&state)?;
        let (s, x) = flat(&next.states);
        tracker.push(next.step, next.t, (&s, &x, &next.u), Some((&s_prev, &x_prev, &state.u)));
        if let Some(h) = history.as_mut() {
            h.push(&next);
            h.stats.push(st);
        }
        stats.push(st);
        state = next;
        s_prev = s;
        x_prev = x;
    }
    Ok(RunOutcome {
        history,
        energy: tracker.finish(),
        final_state: state,
        stats,
    })
}

/// Runs all steps and returns the full history.
pub fn run(scenario: &Scenario) -> Result<FieldHistory, EvolutionError> {
    run_with(scenario, RunOptions { record_history: true })
        .map(|o| o.history.expect("history recorded"))
}

/// Strict initial feasibility of the reference stress and the feasibility
/// gap of the translated admissible pair.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SafetyLoadReport {
    pub pass: bool,
    /// `κ - max_x |dev σ₀(x, 0)|`
    pub margin: f64,
    pub max_initial_deviator: f64,
    /// `sup_t max_x` of `|dev σ₀(t) - dev ξ₀(t)|` (kinematic) or
    /// `||dev σ₀(t)| - ξ₀(t)|` (isotropic).
    pub translated_sup: f64,
    pub translated_margin: f64,
}

/// Safety-load check sampled at the quadrature points of `grid` and the
/// time levels of the scenario.
pub fn safety_load_check_on(scenario: &Scenario, grid: &Grid) -> SafetyLoadReport {
    let data = &scenario.data;
    let kappa = scenario.params.kappa;
    let points: Vec<[f64; 3]> = (0..grid.n_qp()).map(|qp| grid.qp_point(qp)).collect();
    let initial: Vec<SymTensor2> = points.iter().map(|x| data.reference_stress(0.0, x).dev()).collect();
    let max0 = initial.iter().map(SymTensor2::norm).fold(0.0, f64::max);
    let translated = (0..=scenario.steps)
        .into_par_iter()
        .map(|k| {
            let t = scenario.time(k);
            points
                .iter()
                .zip(&initial)
                .map(|(x, s0)| {
                    let st = data.reference_stress(t, x).dev();
                    match scenario.model() {
                        // ξ₀(t) = σ₀(t) - σ₀(0)
                        Model::Kinematic => (st - (st - *s0)).norm(),
                        // ξ₀(t) = |dev σ₀(t)| - |dev σ₀(0)|
                        Model::Isotropic => (st.norm() - (st.norm() - s0.norm())).abs(),
                    }
                })
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    SafetyLoadReport {
        pass: max0 < kappa,
        margin: kappa - max0,
        max_initial_deviator: max0,
        translated_sup: translated,
        translated_margin: kappa - translated,
    }
}

pub fn safety_load_check(scenario: &Scenario) -> Result<SafetyLoadReport, DiscretizationError> {
    Ok(safety_load_check_on(scenario, &scenario.grid()?))
}

/// Largest violation of the structural identities along a history.
#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq)]
pub struct InvariantReport {
    /// `max |tr e_p|`
    pub plastic_trace: f64,
    /// `max |𝐇 ξ - e_p|` (kinematic; zero otherwise)
    pub kinematic_identity: f64,
    /// `max (ξ_{n-1} - ξ_n)₊` (isotropic; zero otherwise)
    pub isotropic_decrease: f64,
    /// `max_n |R_n|_∞ / scale_n`
    pub galerkin_residual: f64,
}

pub fn check_invariants(history: &FieldHistory, scenario: &Scenario) -> Result<InvariantReport, EvolutionError> {
    let solver = Solver::new(scenario)?;
    let params = &scenario.params;
    let mut rep = InvariantReport::default();
    for k in 0..history.times.len() {
        let ep = history.plastic_strain(k, params);
        let ep0 = history.plastic_strain(0, params);
        for (qp, e) in ep.iter().enumerate() {
            rep.plastic_trace = rep.plastic_trace.max(e.trace().abs());
            if let HardeningLaw::Kinematic(h) = params.hardening() {
                if let HardeningVariable::Tensor(xi) = history.xi_at(k, qp) {
                    let gap = (h.apply(&xi) - (*e - ep0[qp])).max_abs();
                    rep.kinematic_identity = rep.kinematic_identity.max(gap);
                }
            }
        }
        if k > 0 && history.model == Model::Isotropic {
            for (a, b) in history.xi[k].iter().zip(&history.xi[k - 1]) {
                rep.isotropic_decrease = rep.isotropic_decrease.max(b - a);
            }
        }
        if k > 0 {
            let sigma: Vec<SymTensor2> = (0..history.grid.n_qp()).map(|qp| history.sigma_at(k, qp)).collect();
            let r = solver
                .residual(&sigma, history.times[k])
                .map_err(|source| EvolutionError::Discretization { step: k, source })?;
            let fint = solver
                .assembler()
                .internal_force(&history.grid, &sigma)
                .map_err(|source| EvolutionError::Discretization { step: k, source })?;
            let fext = external_force(&history.grid, scenario.data.as_ref(), history.times[k]);
            let scale = fint.iter().chain(&fext).fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
            let rmax = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            rep.galerkin_residual = rep.galerkin_residual.max(rmax / scale);
        }
    }
    Ok(rep)
}
