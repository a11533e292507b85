//! Pointwise backward-Euler update of the penalized flow rules.
//!
//! Writing `q = Δt·P` for the plastic strain increment, both hardening models
//! reduce to a strictly convex minimization in `q` (plus the scalar
//! `γ = H·Δξ` for isotropic hardening):
//!
//! ```text
//! kinematic:  Φ(q)    = qᵀMq/(2c) + ½(|β_tr - Mq| - κ)₊²
//! isotropic:  Φ(q, γ) = (qᵀMq + γ²/H)/(2c) + ½(|s_tr - Mq| - κ - ξ⁻ - γ/H)₊²
//! ```
//!
//! with `c = Δt/μ`, `M = P_dev(A⁻¹ + 𝐇⁻¹)P_dev` (kinematic) or `P_dev A⁻¹ P_dev`
//! (isotropic). The stationarity conditions are exactly the implicit system.
//! When every tensor involved is isotropic the minimizer is collinear with the
//! trial deviator and has a closed form; otherwise a damped Newton iteration
//! on `Φ` is used.

use nalgebra::{SMatrix, SVector};
use thiserror::Error;

use crate::tensor::{components, SymTensor2, Tensor4Sym, TensorError};

pub const LOCAL_MAX_ITER: usize = 100;
pub const LOCAL_TOL: f64 = 1e-12;
/// Distance from the yield surface below which the elastic tangent is used.
pub const KINK_TOL: f64 = 1e-10;

const NV: usize = 7;
type Vec7 = SVector<f64, NV>;
type Mat7 = SMatrix<f64, NV, NV>;

#[derive(Debug, Error, Clone)]
pub enum ConstitutiveError {
    #[error("local solver did not converge after {iterations} iterations (residual {residual:e}); reduce Δt/μ")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        trial: Box<ConstitutiveState>,
    },
    #[error("invalid material parameter: {0}")]
    InvalidParameter(String),
    #[error("state does not match the hardening model")]
    ModelMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Kinematic,
    Isotropic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HardeningLaw {
    /// `𝐇 ξ̇ = ė_p` with a symmetric positive-definite `𝐇`.
    Kinematic(Tensor4Sym),
    /// `H ξ̇ = |ė_p|` with a scalar `H > 0`.
    Isotropic(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaterialParams {
    compliance: Tensor4Sym,
    stiffness: Tensor4Sym,
    hardening: HardeningLaw,
    hardening_inv: Option<Tensor4Sym>,
    pub kappa: f64,
    pub mu: f64,
    pub c1: f64,
}

impl MaterialParams {
    pub fn new(
        compliance: Tensor4Sym,
        hardening: HardeningLaw,
        kappa: f64,
        mu: f64,
        c1: f64,
    ) -> Result<Self, ConstitutiveError> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "mu must be positive, got {mu}"
            )));
        }
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(ConstitutiveError::InvalidParameter(format!(
                "c1 must be positive, got {c1}"
            )));
        }
        let stiffness = compliance.inverse()?;
        let hardening_inv = match &hardening {
            HardeningLaw::Kinematic(h) => {
                if h.dim() != compliance.dim() {
                    return Err(TensorError::DimensionMismatch {
                        left: compliance.dim(),
                        right: h.dim(),
                    }
                    .into());
                }
                Some(h.inverse()?)
            }
            HardeningLaw::Isotropic(h) => {
                if !(*h > 0.0 && h.is_finite()) {
                    return Err(ConstitutiveError::InvalidParameter(format!(
                        "isotropic hardening modulus must be positive, got {h}"
                    )));
                }
                None
            }
        };
        Ok(Self {
            compliance,
            stiffness,
            hardening,
            hardening_inv,
            kappa,
            mu,
            c1,
        })
    }

    pub fn kinematic(
        compliance: Tensor4Sym,
        hardening: Tensor4Sym,
        kappa: f64,
        mu: f64,
        c1: f64,
    ) -> Result<Self, ConstitutiveError> {
        Self::new(compliance, HardeningLaw::Kinematic(hardening), kappa, mu, c1)
    }

    pub fn isotropic(
        compliance: Tensor4Sym,
        modulus: f64,
        kappa: f64,
        mu: f64,
        c1: f64,
    ) -> Result<Self, ConstitutiveError> {
        Self::new(compliance, HardeningLaw::Isotropic(modulus), kappa, mu, c1)
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self, ConstitutiveError> {
        Self::new(
            self.compliance.clone(),
            self.hardening.clone(),
            self.kappa,
            mu,
            self.c1,
        )
    }

    pub fn dim(&self) -> usize {
        self.compliance.dim()
    }

    pub fn model(&self) -> Model {
        match self.hardening {
            HardeningLaw::Kinematic(_) => Model::Kinematic,
            HardeningLaw::Isotropic(_) => Model::Isotropic,
        }
    }

    /// Elastic compliance `A` (`e_el = A σ`).
    pub fn compliance(&self) -> &Tensor4Sym {
        &self.compliance
    }

    /// `A⁻¹`.
    pub fn stiffness(&self) -> &Tensor4Sym {
        &self.stiffness
    }

    pub fn hardening(&self) -> &HardeningLaw {
        &self.hardening
    }

    /// Violations of the ellipticity and positivity requirements for the
    /// declared `c1`, as human-readable messages.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self.compliance.check_ellipticity(self.c1) {
            Ok(r) if !r.pass => out.push(format!(
                "ellipticity (A): eigenvalues [{:e}, {:e}] outside [c1, 1/c1] with c1 = {}",
                r.lambda_min, r.lambda_max, self.c1
            )),
            Err(e) => out.push(format!("ellipticity (A): {e}")),
            _ => {}
        }
        match &self.hardening {
            HardeningLaw::Kinematic(h) => match h.check_ellipticity(self.c1) {
                Ok(r) if !r.pass => out.push(format!(
                    "ellipticity (H): eigenvalues [{:e}, {:e}] outside [c1, 1/c1] with c1 = {}",
                    r.lambda_min, r.lambda_max, self.c1
                )),
                Err(e) => out.push(format!("ellipticity (H): {e}")),
                _ => {}
            },
            HardeningLaw::Isotropic(h) => {
                if *h < self.c1 {
                    out.push(format!("hardening modulus H = {h} below c1 = {}", self.c1));
                }
            }
        }
        if self.kappa < self.c1 {
            out.push(format!("kappa = {} below c1 = {}", self.kappa, self.c1));
        }
        out
    }
}

/// Tensor back-stress for kinematic hardening, scalar yield-surface
/// expansion for isotropic hardening.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HardeningVariable {
    Tensor(SymTensor2),
    Scalar(f64),
}

impl HardeningVariable {
    pub fn zero(model: Model, d: usize) -> Self {
        match model {
            Model::Kinematic => Self::Tensor(SymTensor2::zero(d)),
            Model::Isotropic => Self::Scalar(0.0),
        }
    }

    /// Component view (Mandel components, or the single scalar).
    pub fn components(&self) -> &[f64] {
        match self {
            Self::Tensor(t) => t.as_slice(),
            Self::Scalar(s) => std::slice::from_ref(s),
        }
    }

    pub fn tensor(&self) -> Option<&SymTensor2> {
        match self {
            Self::Tensor(t) => Some(t),
            Self::Scalar(_) => None,
        }
    }

    pub fn scalar(&self) -> Option<f64> {
        match self {
            Self::Scalar(s) => Some(*s),
            Self::Tensor(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstitutiveState {
    pub sigma: SymTensor2,
    pub xi: HardeningVariable,
    pub ep: SymTensor2,
}

impl ConstitutiveState {
    pub fn new(sigma: SymTensor2, model: Model) -> Self {
        let d = sigma.dim();
        Self {
            sigma,
            xi: HardeningVariable::zero(model, d),
            ep: SymTensor2::zero(d),
        }
    }

    /// Signed distance to the yield surface: `|σ_D - ξ_D| - κ` or
    /// `|σ_D| - κ - ξ`.
    pub fn yield_function(&self, kappa: f64) -> f64 {
        self.driving_force().norm() - kappa - self.xi.scalar().unwrap_or(0.0)
    }

    /// `β = σ_D - ξ_D` (kinematic) or `σ_D` (isotropic).
    pub fn driving_force(&self) -> SymTensor2 {
        match &self.xi {
            HardeningVariable::Tensor(xi) => self.sigma.dev() - xi.dev(),
            HardeningVariable::Scalar(_) => self.sigma.dev(),
        }
    }
}

/// Result of a local update.
#[derive(Clone, Copy, Debug)]
pub struct LocalUpdate {
    pub state: ConstitutiveState,
    /// Plastic strain increment `Δt·P`.
    pub plastic_increment: SymTensor2,
    pub plastic: bool,
    pub iterations: usize,
}

fn dev_projector(d: usize) -> Mat7 {
    let m = components(d);
    let mut p = Mat7::identity();
    for i in 0..d {
        for j in 0..d {
            p[(i, j)] -= 1.0 / d as f64;
        }
    }
    for i in m..NV {
        p[(i, i)] = 0.0;
    }
    p
}

fn vol_direction(d: usize) -> Vec7 {
    let mut e = Vec7::zeros();
    for i in 0..d {
        e[i] = 1.0 / (d as f64).sqrt();
    }
    e
}

fn to_mat(t: &Tensor4Sym) -> Mat7 {
    let m = components(t.dim());
    let mut out = Mat7::zeros();
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = t.entry(i, j);
        }
    }
    out
}

fn to_vec(t: &SymTensor2) -> Vec7 {
    let mut v = Vec7::zeros();
    v.as_mut_slice()[..t.len()].copy_from_slice(t.as_slice());
    v
}

fn from_vec(d: usize, v: &Vec7) -> SymTensor2 {
    let m = components(d);
    SymTensor2::from_mandel(d, &v.as_slice()[..m]).expect("valid dimension")
}

/// Convex local problem in `z = (q, γ)`; `γ` only for isotropic hardening.
struct LocalProblem {
    d: usize,
    m: usize,
    isotropic: bool,
    c: f64,
    kappa: f64,
    /// Trial driving force: `β_tr` or `s_tr`.
    beta_tr: Vec7,
    coupling: Mat7,
    e_vol: Vec7,
    /// Isotropic only.
    h_mod: f64,
    xi_prev: f64,
}

struct Eval {
    phi: f64,
    grad: Vec7,
    /// Residual of the implicit system: `q - c·f₊ n` and `γ - c·f₊`.
    residual: f64,
}

impl LocalProblem {
    fn nvars(&self) -> usize {
        self.m + usize::from(self.isotropic)
    }

    fn q_of(&self, z: &Vec7) -> Vec7 {
        let mut q = *z;
        for i in self.m..NV {
            q[i] = 0.0;
        }
        q
    }

    /// Returns (β, |β|, f) at `z`.
    fn state(&self, z: &Vec7) -> (Vec7, f64, f64) {
        let q = self.q_of(z);
        let beta = self.beta_tr - self.coupling * q;
        let nb = beta.norm();
        let f = if self.isotropic {
            nb - self.kappa - self.xi_prev - z[self.m] / self.h_mod
        } else {
            nb - self.kappa
        };
        (beta, nb, f)
    }

    fn eval(&self, z: &Vec7) -> Eval {
        let q = self.q_of(z);
        let (beta, nb, f) = self.state(z);
        let fp = f.max(0.0);
        let n = if nb > 0.0 { beta / nb } else { Vec7::zeros() };
        let mq = self.coupling * q;
        let qv = q.dot(&self.e_vol);
        let mut phi = 0.5 * q.dot(&mq) / self.c + 0.5 * fp * fp + 0.5 * qv * qv;
        let mut grad = mq / self.c - self.coupling * (n * fp) + self.e_vol * qv;
        let mut res2 = (q - n * (self.c * fp)).norm_squared();
        if self.isotropic {
            let g = z[self.m];
            phi += 0.5 * g * g / (self.c * self.h_mod);
            grad[self.m] = g / (self.c * self.h_mod) - fp / self.h_mod;
            res2 += (g - self.c * fp).powi(2);
        }
        Eval {
            phi,
            grad,
            residual: res2.sqrt(),
        }
    }

    /// Second derivative of `f₊ n` with respect to β at the current point.
    fn flow_jacobian(&self, beta: &Vec7, nb: f64, f: f64) -> Mat7 {
        let mut dmat = Mat7::zeros();
        if f <= 0.0 || nb == 0.0 {
            return dmat;
        }
        let n = beta / nb;
        let proj = {
            let mut p = Mat7::identity();
            for i in self.m..NV {
                p[(i, i)] = 0.0;
            }
            p - n * n.transpose()
        };
        dmat += n * n.transpose();
        dmat += proj * (f / nb);
        dmat
    }

    fn hessian(&self, z: &Vec7) -> Mat7 {
        let (beta, nb, f) = self.state(z);
        let dflow = self.flow_jacobian(&beta, nb, f);
        let mut h = self.coupling / self.c
            + self.coupling * dflow * self.coupling
            + self.e_vol * self.e_vol.transpose();
        if self.isotropic {
            let k = self.m;
            if f > 0.0 {
                let n = beta / nb;
                let cross = self.coupling * n / self.h_mod;
                for i in 0..self.m {
                    h[(i, k)] = cross[i];
                    h[(k, i)] = cross[i];
                }
                h[(k, k)] = 1.0 / (self.c * self.h_mod) + 1.0 / (self.h_mod * self.h_mod);
            } else {
                h[(k, k)] = 1.0 / (self.c * self.h_mod);
            }
        }
        for i in self.nvars()..NV {
            h[(i, i)] = 1.0;
        }
        h
    }

    /// `∂(∇Φ)/∂β_tr`, used for the consistent tangent.
    fn mixed_derivative(&self, z: &Vec7) -> Mat7 {
        let (beta, nb, f) = self.state(z);
        let dflow = self.flow_jacobian(&beta, nb, f);
        let mut out = -(self.coupling * dflow);
        if self.isotropic {
            let k = self.m;
            for j in 0..NV {
                out[(k, j)] = 0.0;
            }
            if f > 0.0 {
                let n = beta / nb;
                for j in 0..self.m {
                    out[(k, j)] = -n[j] / self.h_mod;
                }
            }
        }
        out
    }

    fn tol(&self, z: &Vec7) -> f64 {
        LOCAL_TOL * z.norm().max(1.0)
    }

    fn newton(&self, z0: Vec7) -> Result<(Vec7, usize), (usize, f64)> {
        let mut z = z0;
        let mut ev = self.eval(&z);
        for it in 0..LOCAL_MAX_ITER {
            if ev.residual <= self.tol(&z) {
                return Ok((z, it));
            }
            let h = self.hessian(&z);
            let step = match h.cholesky() {
                Some(ch) => ch.solve(&(-ev.grad)),
                None => match h.lu().solve(&(-ev.grad)) {
                    Some(s) => s,
                    None => return Err((it, ev.residual)),
                },
            };
            let slope = ev.grad.dot(&step);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial = z + step * t;
                let et = self.eval(&trial);
                if et.phi <= ev.phi + 1e-4 * t * slope || et.residual < ev.residual {
                    z = trial;
                    ev = et;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // Stagnation at round-off level: accept if the step itself is negligible.
                if step.norm() <= 1e-14 * z.norm().max(1.0) {
                    return Ok((z, it + 1));
                }
                return Err((it + 1, ev.residual));
            }
            if step.norm() * t <= 1e-16 * z.norm().max(1e-300) && ev.residual <= 1e3 * self.tol(&z) {
                return Ok((z, it + 1));
            }
        }
        if ev.residual <= self.tol(&z) {
            Ok((z, LOCAL_MAX_ITER))
        } else {
            Err((LOCAL_MAX_ITER, ev.residual))
        }
    }
}

struct Prepared {
    problem: LocalProblem,
    trial: ConstitutiveState,
    sigma_tr: SymTensor2,
    fast: Option<f64>,
}

fn prepare(
    prev: &ConstitutiveState,
    dstrain: &SymTensor2,
    dt: f64,
    params: &MaterialParams,
    allow_fast: bool,
) -> Result<Prepared, ConstitutiveError> {
    let d = params.dim();
    if prev.sigma.dim() != d || dstrain.dim() != d {
        return Err(TensorError::DimensionMismatch {
            left: d,
            right: dstrain.dim(),
        }
        .into());
    }
    if !(dt > 0.0) {
        return Err(ConstitutiveError::InvalidParameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let sigma_tr = prev.sigma + params.stiffness.apply(dstrain);
    let trial = ConstitutiveState {
        sigma: sigma_tr,
        xi: prev.xi,
        ep: prev.ep,
    };
    // The coupling matrix is only needed by the general Newton path.
    let coupling_of = |extra: Option<&Tensor4Sym>| {
        let pdev = dev_projector(d);
        let mut a = to_mat(&params.stiffness);
        if let Some(h) = extra {
            a += to_mat(h);
        }
        pdev * a * pdev
    };
    let (isotropic, coupling, beta_tr, h_mod, xi_prev, fast) = match (&params.hardening, &prev.xi) {
        (HardeningLaw::Kinematic(_), HardeningVariable::Tensor(xi)) => {
            let hinv = params.hardening_inv.as_ref().expect("kinematic inverse");
            let fast = match (params.stiffness.isotropic_moduli(), hinv.isotropic_moduli()) {
                (Some(a), Some(h)) if allow_fast => Some(a.dev_coef + h.dev_coef),
                _ => None,
            };
            let coupling = if fast.is_some() { Mat7::zeros() } else { coupling_of(Some(hinv)) };
            (false, coupling, to_vec(&(sigma_tr.dev() - xi.dev())), 1.0, 0.0, fast)
        }
        (HardeningLaw::Isotropic(h), HardeningVariable::Scalar(xi)) => {
            let fast = params.stiffness.isotropic_moduli().filter(|_| allow_fast).map(|a| a.dev_coef);
            let coupling = if fast.is_some() { Mat7::zeros() } else { coupling_of(None) };
            (true, coupling, to_vec(&sigma_tr.dev()), *h, *xi, fast)
        }
        _ => return Err(ConstitutiveError::ModelMismatch),
    };
    Ok(Prepared {
        problem: LocalProblem {
            d,
            m: components(d),
            isotropic,
            c: dt / params.mu,
            kappa: params.kappa,
            beta_tr,
            coupling,
            e_vol: vol_direction(d),
            h_mod,
            xi_prev,
        },
        trial,
        sigma_tr,
        fast,
    })
}

fn solve_prepared(
    prep: &Prepared,
    prev: &ConstitutiveState,
    params: &MaterialParams,
) -> Result<(LocalUpdate, Vec7), ConstitutiveError> {
    let p = &prep.problem;
    let d = p.d;
    let nb_tr = p.beta_tr.norm();
    let f_tr = nb_tr - p.kappa - p.xi_prev;
    if f_tr <= 0.0 {
        let upd = LocalUpdate {
            state: prep.trial,
            plastic_increment: SymTensor2::zero(d),
            plastic: false,
            iterations: 0,
        };
        return Ok((upd, Vec7::zeros()));
    }
    let n_tr = p.beta_tr / nb_tr;
    let (z, iterations) = match prep.fast {
        Some(k) => {
            let denom = if p.isotropic {
                1.0 + p.c * k + p.c / p.h_mod
            } else {
                1.0 + p.c * k
            };
            let gamma = p.c * f_tr / denom;
            let mut z = n_tr * gamma;
            if p.isotropic {
                z[p.m] = gamma;
            }
            (z, 0)
        }
        None => {
            let k = n_tr.dot(&(p.coupling * n_tr));
            let denom = if p.isotropic {
                1.0 + p.c * k + p.c / p.h_mod
            } else {
                1.0 + p.c * k
            };
            let gamma = p.c * f_tr / denom;
            let mut z0 = n_tr * gamma;
            if p.isotropic {
                z0[p.m] = gamma;
            }
            p.newton(z0).map_err(|(iterations, residual)| {
                ConstitutiveError::NonConvergence {
                    iterations,
                    residual,
                    trial: Box::new(prep.trial),
                }
            })?
        }
    };
    let q = from_vec(d, &p.q_of(&z));
    let sigma = prep.sigma_tr - params.stiffness.apply(&q);
    let xi = match (&params.hardening, &prev.xi) {
        (HardeningLaw::Kinematic(_), HardeningVariable::Tensor(xi)) => {
            let hinv = params.hardening_inv.as_ref().expect("kinematic inverse");
            HardeningVariable::Tensor(*xi + hinv.apply(&q))
        }
        (HardeningLaw::Isotropic(h), HardeningVariable::Scalar(xi)) => {
            HardeningVariable::Scalar(xi + z[p.m] / h)
        }
        _ => return Err(ConstitutiveError::ModelMismatch),
    };
    let upd = LocalUpdate {
        state: ConstitutiveState {
            sigma,
            xi,
            ep: prev.ep + q,
        },
        plastic_increment: q,
        plastic: true,
        iterations,
    };
    Ok((upd, z))
}

/// Backward-Euler update of one quadrature point over a step of length `dt`
/// driven by the total strain increment `dstrain`.
pub fn local_update(
    prev: &ConstitutiveState,
    dstrain: &SymTensor2,
    dt: f64,
    params: &MaterialParams,
) -> Result<LocalUpdate, ConstitutiveError> {
    let prep = prepare(prev, dstrain, dt, params, true)?;
    solve_prepared(&prep, prev, params).map(|(u, _)| u)
}

/// Local update together with the consistent tangent `dσ⁺/dΔε`.
pub fn local_update_with_tangent(
    prev: &ConstitutiveState,
    dstrain: &SymTensor2,
    dt: f64,
    params: &MaterialParams,
) -> Result<(LocalUpdate, Tensor4Sym), ConstitutiveError> {
    update_with_tangent(prev, dstrain, dt, params, true)
}

fn update_with_tangent(
    prev: &ConstitutiveState,
    dstrain: &SymTensor2,
    dt: f64,
    params: &MaterialParams,
    allow_fast: bool,
) -> Result<(LocalUpdate, Tensor4Sym), ConstitutiveError> {
    let prep = prepare(prev, dstrain, dt, params, allow_fast)?;
    let (upd, z) = solve_prepared(&prep, prev, params)?;
    let p = &prep.problem;
    let f_new = upd.state.yield_function(params.kappa);
    if !upd.plastic || f_new.abs() <= KINK_TOL {
        return Ok((upd, params.stiffness.clone()));
    }
    if let (Some(k), Some(a)) = (prep.fast, params.stiffness.isotropic_moduli()) {
        return Ok((upd, fast_tangent(p, k, a.dev_coef, &params.stiffness)));
    }
    let hess = p.hessian(&z);
    let mixed = p.mixed_derivative(&z);
    let pdev = dev_projector(p.d);
    let ainv = to_mat(&params.stiffness);
    // dβ_tr/dΔε = P_dev A⁻¹
    let rhs = -(mixed * pdev * ainv);
    let dz = match hess.cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => hess.lu().solve(&rhs).ok_or(TensorError::Singular)?,
    };
    let mut dq = dz;
    for i in p.m..NV {
        for j in 0..NV {
            dq[(i, j)] = 0.0;
        }
    }
    let tangent = ainv - ainv * dq;
    let m = p.m;
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| (0..m).map(|j| 0.5 * (tangent[(i, j)] + tangent[(j, i)])).collect())
        .collect();
    Ok((upd, Tensor4Sym::from_mandel_matrix(p.d, &rows)?))
}

/// Closed-form tangent for isotropic stiffness (and isotropic kinematic
/// hardening): the return direction is the trial direction, so only the
/// plastic multiplier and the direction itself vary with the strain.
fn fast_tangent(p: &LocalProblem, k: f64, two_g: f64, stiffness: &Tensor4Sym) -> Tensor4Sym {
    let nb_tr = p.beta_tr.norm();
    let f_tr = nb_tr - p.kappa - p.xi_prev;
    let denom = if p.isotropic {
        1.0 + p.c * k + p.c / p.h_mod
    } else {
        1.0 + p.c * k
    };
    let along = p.c / denom;
    let across = p.c * f_tr / (denom * nb_tr);
    let n = p.beta_tr / nb_tr;
    let d = p.d;
    let w = two_g * two_g;
    Tensor4Sym::from_fn(d, |i, j| {
        let pdev = f64::from(u8::from(i == j)) - if i < d && j < d { 1.0 / d as f64 } else { 0.0 };
        let nn = n[i] * n[j];
        stiffness.entry(i, j) - w * (along * nn + across * (pdev - nn))
    })
}

/// Derivative of the updated stress with respect to the strain increment.
pub fn consistent_tangent(
    prev: &ConstitutiveState,
    dstrain: &SymTensor2,
    dt: f64,
    params: &MaterialParams,
) -> Result<Tensor4Sym, ConstitutiveError> {
    local_update_with_tangent(prev, dstrain, dt, params).map(|(_, t)| t)
}

/// Distance from the rate-independent optimality conditions.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct KktDiagnostics {
    pub feasibility: f64,
    pub complementarity: f64,
    pub alignment: f64,
}

pub fn kkt_residual(
    state: &ConstitutiveState,
    rate_ep: &SymTensor2,
    params: &MaterialParams,
) -> KktDiagnostics {
    let beta = state.driving_force();
    let f = state.yield_function(params.kappa);
    let rate = rate_ep.norm();
    let nb = beta.norm();
    let alignment = if rate == 0.0 {
        0.0
    } else if nb == 0.0 {
        rate
    } else {
        (*rate_ep - beta.scale(rate / nb)).norm()
    };
    KktDiagnostics {
        feasibility: f.max(0.0),
        complementarity: rate * f.abs(),
        alignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn kin_params(mu: f64) -> MaterialParams {
        MaterialParams::kinematic(Tensor4Sym::identity(2), Tensor4Sym::identity(2), 1.0, mu, 0.5)
            .unwrap()
    }

    #[test]
    fn elastic_step() {
        let p = kin_params(1.0);
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Kinematic);
        let de = SymTensor2::diag(&[0.1, -0.1]);
        let u = local_update(&s0, &de, 1.0, &p).unwrap();
        assert!(!u.plastic);
        assert_eq!(u.state.sigma, de);
        assert_eq!(u.state.xi, HardeningVariable::Tensor(SymTensor2::zero(2)));
        assert_eq!(u.state.ep, SymTensor2::zero(2));
    }

    #[test]
    fn plastic_kinematic_step() {
        let p = kin_params(1.0);
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Kinematic);
        let de = SymTensor2::diag(&[2.0, -2.0]);
        let u = local_update(&s0, &de, 1.0, &p).unwrap();
        let gamma = (2.0 * 2f64.sqrt() - 1.0) / 3.0;
        assert_relative_eq!(gamma, 0.609475708, epsilon = 1e-9);
        let n = de.scale(1.0 / de.norm());
        assert!((u.state.sigma - (de - n.scale(gamma))).max_abs() < 1e-14);
        let xi = *u.state.xi.tensor().unwrap();
        assert!((xi - n.scale(gamma)).max_abs() < 1e-14);
    }

    #[test]
    fn plastic_isotropic_step() {
        let p = MaterialParams::isotropic(Tensor4Sym::identity(2), 1.0, 1.0, 1.0, 0.5).unwrap();
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Isotropic);
        let de = SymTensor2::diag(&[2.0, -2.0]);
        let u = local_update(&s0, &de, 1.0, &p).unwrap();
        let gamma = (2.0 * 2f64.sqrt() - 1.0) / 3.0;
        assert_relative_eq!(u.state.xi.scalar().unwrap(), gamma, epsilon = 1e-14);
        let n = de.scale(1.0 / de.norm());
        assert!((u.state.sigma - (de - n.scale(gamma))).max_abs() < 1e-14);
    }

    #[test]
    fn general_path_matches_fast_path() {
        // Same physics, but the dense representation disables the closed form.
        let dense = |t: &Tensor4Sym| Tensor4Sym::from_mandel_matrix(2, &t.rows()).unwrap();
        let a = Tensor4Sym::isotropic_compliance(2, 1.3, 2.0);
        let h = Tensor4Sym::scaled_identity(2, 0.8);
        let fast = MaterialParams::kinematic(a.clone(), h.clone(), 0.7, 0.05, 0.1).unwrap();
        let slow = MaterialParams::kinematic(dense(&a), dense(&h), 0.7, 0.05, 0.1).unwrap();
        let s0 = ConstitutiveState::new(SymTensor2::from_mandel(2, &[0.1, 0.2, -0.3]).unwrap(), Model::Kinematic);
        let de = SymTensor2::from_mandel(2, &[0.6, -0.2, 0.5]).unwrap();
        let uf = local_update(&s0, &de, 0.1, &fast).unwrap();
        let us = local_update(&s0, &de, 0.1, &slow).unwrap();
        assert!((uf.state.sigma - us.state.sigma).max_abs() < 1e-12);

        let fast = MaterialParams::isotropic(a.clone(), 0.9, 0.7, 0.05, 0.1).unwrap();
        let slow = MaterialParams::isotropic(dense(&a), 0.9, 0.7, 0.05, 0.1).unwrap();
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Isotropic);
        let uf = local_update(&s0, &de, 0.1, &fast).unwrap();
        let us = local_update(&s0, &de, 0.1, &slow).unwrap();
        assert!((uf.state.sigma - us.state.sigma).max_abs() < 1e-12);
        assert_relative_eq!(uf.state.xi.scalar().unwrap(), us.state.xi.scalar().unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn tangent_is_stiffness_in_elastic_regime() {
        let p = MaterialParams::kinematic(
            Tensor4Sym::isotropic_compliance(2, 1.0, 2.0),
            Tensor4Sym::identity(2),
            1.0,
            0.1,
            0.1,
        )
        .unwrap();
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Kinematic);
        let t = consistent_tangent(&s0, &SymTensor2::diag(&[0.01, 0.0]), 0.1, &p).unwrap();
        assert_eq!(&t, p.stiffness());
    }

    #[test]
    fn kkt_examples() {
        let p = kin_params(1.0);
        let s = ConstitutiveState::new(SymTensor2::diag(&[0.1, -0.1]), Model::Kinematic);
        assert_eq!(kkt_residual(&s, &SymTensor2::zero(2), &p), KktDiagnostics::default());
        let on_surface = SymTensor2::diag(&[1.0, -1.0]).scale(1.0 / 2f64.sqrt());
        let s = ConstitutiveState::new(on_surface, Model::Kinematic);
        let k = kkt_residual(&s, &on_surface.scale(0.3), &p);
        assert!(k.feasibility < 1e-15 && k.complementarity < 1e-15 && k.alignment < 1e-15);
    }

    #[test]
    fn rejects_model_mismatch() {
        let p = kin_params(1.0);
        let s0 = ConstitutiveState::new(SymTensor2::zero(2), Model::Isotropic);
        assert!(matches!(
            local_update(&s0, &SymTensor2::zero(2), 1.0, &p),
            Err(ConstitutiveError::ModelMismatch)
        ));
    }

    #[test]
    fn closed_form_tangent_matches_general_path() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut plastic = 0;
        for d in [2, 3] {
            let comp = Tensor4Sym::isotropic_compliance(d, 0.8, 1.5);
            let params = [
                MaterialParams::kinematic(comp.clone(), Tensor4Sym::scaled_identity(d, 2.0), 0.5, 0.3, 0.1).unwrap(),
                MaterialParams::isotropic(comp.clone(), 0.7, 0.5, 0.3, 0.1).unwrap(),
            ];
            for p in &params {
                let model = if matches!(p.hardening, HardeningLaw::Kinematic(_)) {
                    Model::Kinematic
                } else {
                    Model::Isotropic
                };
                for _ in 0..50 {
                    let nc = components(d);
                    let rv = |rng: &mut rand_chacha::ChaCha8Rng| {
                        let v: Vec<f64> = (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        SymTensor2::from_mandel(d, &v).unwrap()
                    };
                    let prev = ConstitutiveState::new(rv(&mut rng).scale(0.3), model);
                    let de = rv(&mut rng);
                    let (u1, t1) = update_with_tangent(&prev, &de, 0.2, p, true).unwrap();
                    let (u2, t2) = update_with_tangent(&prev, &de, 0.2, p, false).unwrap();
                    assert!((u1.state.sigma - u2.state.sigma).norm() < 1e-9);
                    plastic += usize::from(u1.plastic);
                    for i in 0..nc {
                        for j in 0..nc {
                            assert_relative_eq!(t1.entry(i, j), t2.entry(i, j), epsilon = 1e-8);
                        }
                    }
                }
            }
        }
        assert!(plastic > 100, "only {plastic} plastic samples");
    }
}
