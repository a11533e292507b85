//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the library's local solver or time stepper: the local
//! oracle is a damped Newton iteration with a finite-difference Jacobian on
//! the raw implicit system, and the ODE oracle is an adaptive Dormand-Prince
//! integrator.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plastreg::constitutive::{HardeningLaw, HardeningVariable, MaterialParams};
use plastreg::discretization::{
    external_force, free_part, sym_gradient, Assembler, Grid, LinearSolver, NodeTag, TangentField,
};
use plastreg::evolution::Scenario;
use plastreg::tensor::{components, SymTensor2, Tensor4Sym};
use rand::Rng;

pub fn mandel_dev(d: usize, v: &[f64]) -> Vec<f64> {
    let mean = v[..d].iter().sum::<f64>() / d as f64;
    v.iter().enumerate().map(|(i, x)| if i < d { x - mean } else { *x }).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn apply(t: &Tensor4Sym, v: &[f64]) -> Vec<f64> {
    let m = v.len();
    (0..m).map(|i| (0..m).map(|j| t.entry(i, j) * v[j]).sum()).collect()
}

/// Pointwise penalty problem in raw form.
pub struct PointProblem {
    pub d: usize,
    pub compliance: Tensor4Sym,
    pub hardening: HardeningLaw,
    pub kappa: f64,
    pub mu: f64,
    pub dt: f64,
    pub sigma_prev: Vec<f64>,
    pub xi_prev: Vec<f64>,
    pub dstrain: Vec<f64>,
}

impl PointProblem {
    fn m(&self) -> usize {
        components(self.d)
    }

    /// Flow direction times `μ⁻¹(f)₊` at `(σ, ξ)`, plus the scalar rate.
    fn flow(&self, sigma: &[f64], xi: &[f64]) -> (Vec<f64>, f64) {
        let sd = mandel_dev(self.d, sigma);
        let (beta, f) = match &self.hardening {
            HardeningLaw::Kinematic(_) => {
                let xd = mandel_dev(self.d, xi);
                let beta: Vec<f64> = sd.iter().zip(&xd).map(|(a, b)| a - b).collect();
                let f = norm(&beta) - self.kappa;
                (beta, f)
            }
            HardeningLaw::Isotropic(_) => {
                let f = norm(&sd) - self.kappa - xi[0];
                (sd, f)
            }
        };
        let rate = f.max(0.0) / self.mu;
        let nb = norm(&beta);
        if rate == 0.0 || nb == 0.0 {
            return (vec![0.0; self.m()], 0.0);
        }
        (beta.iter().map(|b| rate * b / nb).collect(), rate)
    }

    /// Backward-Euler residual in `x = (σ, ξ)`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m();
        let (sigma, xi) = x.split_at(m);
        let (p, rate) = self.flow(sigma, xi);
        let ds: Vec<f64> = sigma.iter().zip(&self.sigma_prev).map(|(a, b)| a - b).collect();
        let dxi: Vec<f64> = xi.iter().zip(&self.xi_prev).map(|(a, b)| a - b).collect();
        let a_ds = apply(&self.compliance, &ds);
        let mut r: Vec<f64> = (0..m).map(|i| a_ds[i] + self.dt * p[i] - self.dstrain[i]).collect();
        match &self.hardening {
            HardeningLaw::Kinematic(h) => {
                let h_dxi = apply(h, &dxi);
                r.extend((0..m).map(|i| h_dxi[i] - self.dt * p[i]));
            }
            HardeningLaw::Isotropic(h) => r.push(h * dxi[0] - self.dt * rate),
        }
        r
    }

    fn elastic_guess(&self) -> Vec<f64> {
        let m = self.m();
        let a = DMatrix::from_fn(m, m, |i, j| self.compliance.entry(i, j));
        let de = DVector::from_column_slice(&self.dstrain);
        let ds = a.lu().solve(&de).expect("invertible compliance");
        let mut x: Vec<f64> = (0..m).map(|i| self.sigma_prev[i] + ds[i]).collect();
        x.extend_from_slice(&self.xi_prev);
        x
    }

    /// Damped Newton with a central-difference Jacobian; returns `(σ, ξ)`.
    pub fn solve(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let mut x = self.elastic_guess();
        let n = x.len();
        let scale = 1.0 + norm(&self.dstrain) + norm(&self.sigma_prev);
        let mut r = self.residual(&x);
        for _ in 0..500 {
            let rn = norm(&r);
            if rn <= 1e-14 * scale {
                break;
            }
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-7 * x[j].abs().max(1.0);
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let (rp, rm) = (self.residual(&xp), self.residual(&xm));
                for i in 0..n {
                    jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
                }
            }
            let step = jac.lu().solve(&(-DVector::from_vec(r.clone())))?;
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                let rt = self.residual(&trial);
                if norm(&rt) < rn {
                    x = trial;
                    r = rt;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if norm(&r) > 1e-11 * scale {
            return None;
        }
        let m = self.m();
        Some((x[..m].to_vec(), x[m..].to_vec()))
    }

    pub fn material(&self) -> MaterialParams {
        MaterialParams::new(self.compliance.clone(), self.hardening.clone(), self.kappa, self.mu, 1e-3)
            .expect("valid random material")
    }

    pub fn prev_state(&self) -> plastreg::constitutive::ConstitutiveState {
        let sigma = SymTensor2::from_mandel(self.d, &self.sigma_prev).expect("sized");
        let xi = match self.hardening {
            HardeningLaw::Kinematic(_) => {
                HardeningVariable::Tensor(SymTensor2::from_mandel(self.d, &self.xi_prev).expect("sized"))
            }
            HardeningLaw::Isotropic(_) => HardeningVariable::Scalar(self.xi_prev[0]),
        };
        plastreg::constitutive::ConstitutiveState {
            sigma,
            xi,
            ep: SymTensor2::zero(self.d),
        }
    }
}

/// Random symmetric positive definite Mandel operator, isotropic half the time.
pub fn random_spd(rng: &mut impl Rng, d: usize) -> Tensor4Sym {
    if rng.gen_bool(0.5) {
        return Tensor4Sym::isotropic(d, rng.gen_range(0.3..3.0), rng.gen_range(0.3..3.0));
    }
    let m = components(d);
    let b = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-0.6..0.6));
    let a = &b * b.transpose() + DMatrix::identity(m, m) * 0.4;
    let rows: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| a[(i, j)]).collect()).collect();
    Tensor4Sym::from_mandel_matrix(d, &rows).expect("square")
}

pub fn random_problem(rng: &mut impl rand::RngCore, d: usize, kinematic: bool) -> PointProblem {
    let m = components(d);
    let rand_vec = |rng: &mut dyn rand::RngCore, s: f64| -> Vec<f64> { (0..m).map(|_| rng.gen_range(-s..s)).collect() };
    let sigma_prev = rand_vec(rng, 1.0);
    let dstrain_scale = 10f64.powf(rng.gen_range(-2.0..0.3));
    let dstrain = rand_vec(rng, dstrain_scale);
    let xi_kin = rand_vec(rng, 0.4);
    let compliance = random_spd(rng, d);
    let (hardening, xi_prev) = if kinematic {
        (HardeningLaw::Kinematic(random_spd(rng, d)), xi_kin)
    } else {
        (HardeningLaw::Isotropic(rng.gen_range(0.2..5.0)), vec![rng.gen_range(0.0..0.5)])
    };
    PointProblem {
        d,
        compliance,
        hardening,
        kappa: rng.gen_range(0.5..1.5),
        mu: 10f64.powf(rng.gen_range(-4.0..0.0)),
        dt: 10f64.powf(rng.gen_range(-3.0..-1.0)),
        sigma_prev,
        xi_prev,
        dstrain,
    }
}

/// Adaptive Dormand-Prince 5(4) integration of `y' = f(t, y)` on `[t0, t1]`.
pub fn dopri5(
    f: impl Fn(f64, &[f64]) -> Vec<f64>,
    t0: f64,
    t1: f64,
    y0: &[f64],
    rtol: f64,
    atol: f64,
) -> Vec<f64> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = (t1 - t0) * 1e-4;
    while t < t1 {
        h = h.min(t1 - t);
        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        for s in 0..7 {
            let ys: Vec<f64> = (0..n)
                .map(|i| y[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                .collect();
            k.push(f(t + C[s] * h, &ys));
        }
        let y5: Vec<f64> = (0..n).map(|i| y[i] + h * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
        let err = (0..n)
            .map(|i| {
                let e = h * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
                let sc = atol + rtol * y[i].abs().max(y5[i].abs());
                (e / sc).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        let err = err.sqrt();
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

/// One-shot linear elastic displacement at time `t` from the initial state:
/// `K (u - u(0)) = f(t) - F_int(σ₀(0))` with the Dirichlet increment lifted.
pub fn elastic_displacement(scenario: &Scenario, grid: &Grid, t: f64) -> Vec<f64> {
    let d = grid.dim();
    let data = scenario.data.as_ref();
    let params = &scenario.params;
    let assembler = Assembler::new(grid);
    let u0 = grid.interpolate(|x| data.displacement(0.0, x));
    let mut lift = vec![0.0; u0.len()];
    for node in 0..grid.n_nodes() {
        if grid.tag(node) == NodeTag::Dirichlet {
            let v = data.displacement(t, &grid.node_coords(node));
            for c in 0..d {
                lift[node * d + c] = v[c] - u0[node * d + c];
            }
        }
    }
    let sigma0 = grid.sample_qp(|x| data.reference_stress(0.0, x));
    let lift_strain = sym_gradient(&lift, grid).expect("sized");
    let lift_stress: Vec<SymTensor2> = lift_strain.iter().map(|e| params.stiffness().apply(e)).collect();
    let f_sigma0 = assembler.internal_force(grid, &sigma0).expect("sized");
    let f_lift = assembler.internal_force(grid, &lift_stress).expect("sized");
    let fext = external_force(grid, data, t);
    let full: Vec<f64> = (0..fext.len()).map(|i| fext[i] - f_sigma0[i] - f_lift[i]).collect();
    let rhs = free_part(grid, &full);
    let k = assembler
        .tangent(grid, TangentField::Uniform(params.stiffness()))
        .expect("sized");
    let w = LinearSolver::new(k).expect("elastic stiffness").solve(&rhs).expect("solve");
    let mut u: Vec<f64> = u0.iter().zip(&lift).map(|(a, b)| a + b).collect();
    for (dof, v) in u.iter_mut().enumerate() {
        let fi = grid.free_index(dof);
        if fi != plastreg::discretization::NOT_FREE {
            *v += w[fi];
        }
    }
    u
}

/// Synthetic seminorm rows `S(h) = c h^{2s}` with a mild multiplicative wobble.
pub fn power_law_rows(s: f64, c: f64, hs: &[f64], wobble: f64) -> Vec<(f64, f64)> {
    hs.iter()
        .enumerate()
        .map(|(i, &h)| {
            let w = 1.0 + wobble * if i % 2 == 0 { 1.0 } else { -1.0 };
            (h, c * h.powf(2.0 * s) * w)
        })
        .collect()
}
