//! Acceptance suite. Runs every criterion at its stated tolerance, prints
//! one PASS/FAIL line each and exits non-zero if any fails.
//!
//! The heavy runs are shared: the kinematic sweep feeds the uniformity,
//! time, tangential and interpolation checks, and its smallest-`μ` history
//! is reused by the invariant suite.

mod support;

use std::time::Instant;

use plastreg::constitutive::{local_update, local_update_with_tangent, HardeningVariable, Model};
use plastreg::discretization::{make_cutoff, sym_gradient};
use plastreg::evolution::{check_invariants, run_with, FieldHistory, FieldKind, RunOptions, Scenario};
use plastreg::probe::{
    fit_exponent, interpolation_check, mu_sweep, probe_history, shift_ladder, Aggregation, Axis, ExponentFit,
    ProbeReport, ProbeScope, ProbeSpec, SeminormRow, SeminormTable, WeightInfo,
};
use plastreg::scenario::{benchmark, ScenarioConfig};
use plastreg::tensor::{components, penalty, penalty_potential, SymTensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Line {
    id: u8,
    name: &'static str,
    pass: bool,
    detail: String,
    seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

fn config(name: &str) -> ScenarioConfig {
    benchmark(name).unwrap_or_else(|e| panic!("benchmark {name}: {e}"))
}

fn smallest_mu(c: &ScenarioConfig) -> f64 {
    c.mus().into_iter().fold(f64::INFINITY, f64::min)
}

fn history_run(scn: &Scenario) -> FieldHistory {
    run_with(scn, RunOptions { record_history: true })
        .expect("run completes")
        .history
        .expect("history recorded")
}

fn s_hat(report: &ProbeReport, axis: Axis, field: FieldKind, mode: Aggregation) -> Option<(f64, f64)> {
    match report.exponent(ProbeSpec::new(axis, field, mode))?.fit.as_ref()? {
        ExponentFit::Fitted { s_hat, r2, .. } => Some((*s_hat, *r2)),
        ExponentFit::IdenticallyRegular => None,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

// ---------------------------------------------------------------------------

fn local_oracle() -> Line {
    let ((worst, count, failures), seconds) = timed(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
        let mut worst = 0.0f64;
        let mut count = 0;
        let mut failures = 0;
        for d in [2, 3] {
            for kinematic in [true, false] {
                for _ in 0..1000 {
                    let p = support::random_problem(&mut rng, d, kinematic);
                    let Some((sigma, xi)) = p.solve() else {
                        failures += 1;
                        continue;
                    };
                    let upd = match local_update(&p.prev_state(), &SymTensor2::from_mandel(d, &p.dstrain).unwrap(), p.dt, &p.material()) {
                        Ok(u) => u,
                        Err(_) => {
                            failures += 1;
                            continue;
                        }
                    };
                    let ds: f64 = upd
                        .state
                        .sigma
                        .as_slice()
                        .iter()
                        .zip(&sigma)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let dx: f64 = upd
                        .state
                        .xi
                        .components()
                        .iter()
                        .zip(&xi)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    let scale = 1.0f64.max(sigma.iter().map(|v| v * v).sum::<f64>().sqrt());
                    worst = worst.max(ds.max(dx) / scale);
                    count += 1;
                }
            }
        }
        (worst, count, failures)
    });
    Line {
        id: 1,
        name: "local update vs brute-force oracle",
        pass: failures == 0 && worst <= 1e-9 && seconds < 10.0,
        detail: format!("{count} problems, {failures} unsolved, max rel err {worst:.2e} (tol 1e-9)"),
        seconds,
    }
}

fn homogeneous_error(steps: usize) -> (f64, f64) {
    let mut c = config("homogeneous-plastic");
    c.steps = steps;
    let scn = c.scenario_with_mu(1e-2).expect("scenario");
    let hist = history_run(&scn);
    let last = hist.times.len() - 1;
    let d = hist.dim();
    let m = components(d);
    let params = &scn.params;
    let a_inv = params.stiffness();
    let hinv = match params.hardening() {
        plastreg::constitutive::HardeningLaw::Kinematic(h) => h.inverse().expect("invertible"),
        _ => unreachable!("kinematic benchmark"),
    };
    let data = scn.data.clone();
    let x0 = [0.3, 0.6, 0.0];
    let kappa = params.kappa;
    let mu = 1e-2;
    // y = (σ, ξ) in Mandel form; ε̇ from the homogeneous displacement.
    let rhs = |t: f64, y: &[f64]| -> Vec<f64> {
        let fd = 1e-6;
        let strain_at = |tt: f64| {
            let u: Vec<f64> = (0..d)
                .flat_map(|i| {
                    let mut e = [0.0; 3];
                    e[i] = 1.0;
                    let up = data.displacement(tt, &[x0[0] + e[0], x0[1] + e[1], x0[2] + e[2]]);
                    let u0 = data.displacement(tt, &x0);
                    (0..d).map(move |k| up[k] - u0[k]).collect::<Vec<_>>()
                })
                .collect();
            // u[i*d + k] = ∂u_k/∂x_i for an affine field
            let mut b = [[0.0; 3]; 3];
            for i in 0..d {
                for k in 0..d {
                    b[k][i] = u[i * d + k];
                }
            }
            SymTensor2::sym_of(d, &b)
        };
        let rate = (strain_at(t + fd) - strain_at(t - fd)).scale(0.5 / fd);
        let sigma = SymTensor2::from_mandel(d, &y[..m]).unwrap();
        let xi = SymTensor2::from_mandel(d, &y[m..]).unwrap();
        let p = penalty(&(sigma.dev() - xi.dev()), kappa, mu);
        let ds = a_inv.apply(&(rate - p));
        let dxi = hinv.apply(&p);
        ds.as_slice().iter().chain(dxi.as_slice()).copied().collect()
    };
    let y0 = vec![0.0; 2 * m];
    let y = support::dopri5(rhs, 0.0, scn.t_final, &y0, 1e-12, 1e-14);
    let sigma = hist.sigma_at(last, 0);
    let xi = match hist.xi_at(last, 0) {
        HardeningVariable::Tensor(x) => x,
        HardeningVariable::Scalar(_) => unreachable!(),
    };
    let es = sigma
        .as_slice()
        .iter()
        .zip(&y[..m])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let ex = xi
        .as_slice()
        .iter()
        .zip(&y[m..])
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    (es, ex)
}

fn homogeneous_ode() -> Line {
    let (((s1, x1), (s2, x2)), seconds) = timed(|| (homogeneous_error(256), homogeneous_error(512)));
    let e1 = s1.max(x1);
    let e2 = s2.max(x2);
    let ratio = e1 / e2;
    Line {
        id: 2,
        name: "homogeneous plastic vs ODE oracle",
        pass: s1 <= 1e-4 && x1 <= 1e-4 && (1.7..=2.3).contains(&ratio) && seconds < 30.0,
        detail: format!(
            "N=256: |dσ| {s1:.2e}, |dξ| {x1:.2e} (tol 1e-4); N=512: {e2:.2e}; halving ratio {ratio:.3} (want 1.7..2.3)"
        ),
        seconds,
    }
}

fn elastic_consistency() -> Line {
    let ((err, xi_max, pen_max), seconds) = timed(|| {
        let c = config("elastic-only");
        let scn = c.scenario_with_mu(smallest_mu(&c)).expect("scenario");
        let out = run_with(&scn, RunOptions { record_history: true }).expect("run");
        let hist = out.history.expect("history");
        let grid = &hist.grid;
        let mut err = 0.0f64;
        for (k, &t) in hist.times.iter().enumerate() {
            let u = support::elastic_displacement(&scn, grid, t);
            let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let e = u.iter().zip(&hist.u[k]).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            err = err.max(e / scale);
        }
        let xi_max = hist.xi.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let pen_max = out.energy.rows.iter().fold(0.0f64, |m, r| m.max(r.penalty_energy.abs()));
        (err, xi_max, pen_max)
    });
    Line {
        id: 3,
        name: "elastic-only equals one-shot elastic solve",
        pass: err <= 1e-9 && xi_max == 0.0 && pen_max == 0.0 && seconds < 10.0,
        detail: format!("max rel |u - u_el| {err:.2e} (tol 1e-9), max |ξ| {xi_max:e}, max penalty energy {pen_max:e}"),
        seconds,
    }
}

struct Sweep {
    uniformity: plastreg::probe::UniformityReport,
    report: ProbeReport,
    scenario: Scenario,
    history: FieldHistory,
    seconds: f64,
}

fn kinematic_sweep() -> Sweep {
    let c = config("mixed-boundary-kinematic");
    let scn = c.scenario().expect("scenario");
    let cfg = c.probe_config();
    let mut kept = None;
    let (uniformity, seconds) = timed(|| {
        mu_sweep(&scn, &c.mus(), Some(&cfg), ProbeScope::SmallestMu, |_, s, out, rep| {
            if let (Some(r), Some(h)) = (rep, out.history.as_ref()) {
                kept = Some((r.clone(), s.clone(), h.clone()));
            }
        })
        .expect("sweep")
    });
    let (report, scenario, history) = kept.expect("smallest-μ run probed");
    Sweep {
        uniformity,
        report,
        scenario,
        history,
        seconds,
    }
}

fn overshoot_rate(sw: &Sweep) -> Line {
    let u = &sw.uniformity;
    let slope = u.overshoot_slope_l2.as_ref().map(|s| s.slope);
    let pts: Vec<String> = u
        .entries
        .iter()
        .map(|e| format!("{:e}:{}", e.mu, fmt_opt(e.energy.map(|en| en.final_overshoot_l2))))
        .collect();
    Line {
        id: 4,
        name: "feasibility overshoot decay in mu",
        pass: u.failures == 0 && u.dt_rule_satisfied && slope.is_some_and(|s| s >= 0.45) && sw.seconds < 600.0,
        detail: format!(
            "L2 overshoot at T [{}], log-log slope {} (want >= 0.45), dt {:.1e}",
            pts.join(", "),
            fmt_opt(slope),
            u.dt
        ),
        seconds: sw.seconds,
    }
}

fn uniformity(sw: &Sweep) -> Line {
    let get = |k: &str| sw.uniformity.spreads.get(k).copied().flatten();
    let (s, x) = (get("sup_sigma_rate_l2"), get("sup_xi_rate_l2"));
    Line {
        id: 5,
        name: "rate norms uniform in mu",
        pass: s.is_some_and(|v| v <= 1.5) && x.is_some_and(|v| v <= 1.5),
        detail: format!("spread sup|σ̇| {}, sup|ξ̇| {} (limit 1.5)", fmt_opt(s), fmt_opt(x)),
        seconds: 0.0,
    }
}

fn time_exponent(sw: &Sweep) -> Line {
    let fit = s_hat(&sw.report, Axis::Time, FieldKind::SigmaRate, Aggregation::Integral);
    Line {
        id: 6,
        name: "time exponent of sigma rate",
        pass: fit.is_some_and(|(s, r2)| s >= 0.40 && r2 >= 0.9),
        detail: format!(
            "s = {}, r2 = {} (want s >= 0.40, r2 >= 0.9), window {:?}",
            fmt_opt(fit.map(|f| f.0)),
            fmt_opt(fit.map(|f| f.1)),
            sw.report.time_window
        ),
        seconds: 0.0,
    }
}

fn tangential(sw: &Sweep) -> Line {
    let probe = ProbeSpec::new(Axis::Tangential(0), FieldKind::Sigma, Aggregation::Sup);
    let spread = sw
        .report
        .tangential_quotients
        .iter()
        .find(|q| q.probe == probe)
        .and_then(|q| q.spread);
    let fit = s_hat(&sw.report, Axis::Tangential(0), FieldKind::Sigma, Aggregation::Sup);
    Line {
        id: 7,
        name: "tangential W12 signature of sigma",
        pass: spread.is_some_and(|s| s <= 2.0) && fit.is_some_and(|(s, _)| s >= 0.9),
        detail: format!(
            "quotient spread {} (limit 2), s = {} (want >= 0.9)",
            fmt_opt(spread),
            fmt_opt(fit.map(|f| f.0))
        ),
        seconds: 0.0,
    }
}

fn normal_exponents() -> Line {
    let mut parts = Vec::new();
    let mut pass = true;
    let mut total = 0.0;
    for (name, sigma_min, rate_min) in [
        ("mixed-boundary-kinematic", 0.50, Some(0.12)),
        ("mixed-boundary-isotropic", plastreg::probe::alpha(2) - 0.10, None),
    ] {
        let (rep, seconds) = timed(|| {
            let mut c = config(name);
            c.n = 48;
            c.fit_window.space = [2.0 / 48.0, 0.25];
            let scn = c.scenario_with_mu(smallest_mu(&c)).expect("scenario");
            let hist = history_run(&scn);
            probe_history(&hist, &scn, &c.probe_config()).expect("probe")
        });
        total += seconds;
        let s = s_hat(&rep, Axis::Normal, FieldKind::Sigma, Aggregation::Sup).map(|f| f.0);
        let r = s_hat(&rep, Axis::Normal, FieldKind::SigmaRate, Aggregation::Integral).map(|f| f.0);
        pass &= s.is_some_and(|v| v >= sigma_min) && seconds < 900.0;
        let mut part = format!("{name}: σ {} (>= {sigma_min:.4})", fmt_opt(s));
        if let Some(rm) = rate_min {
            pass &= r.is_some_and(|v| v >= rm);
            part += &format!(", σ̇ {} (>= {rm})", fmt_opt(r));
        }
        part += &format!(", {seconds:.0} s");
        parts.push(part);
    }
    Line {
        id: 8,
        name: "normal exponents at n = 48",
        pass,
        detail: parts.join("; "),
        seconds: total,
    }
}

/// Finite-difference check of the consistent tangent at plastic points.
fn tangent_fd_error(hist: &FieldHistory, scn: &Scenario) -> (f64, usize) {
    let grid = &hist.grid;
    let d = grid.dim();
    let m = components(d);
    let params = &scn.params;
    let mut worst = 0.0f64;
    let mut checked = 0;
    let levels = hist.times.len();
    for k in (1..levels - 1).step_by((levels / 8).max(1)) {
        let e0 = sym_gradient(&hist.u[k], grid).expect("sized");
        let e1 = sym_gradient(&hist.u[k + 1], grid).expect("sized");
        for qp in (0..grid.n_qp()).step_by((grid.n_qp() / 16).max(1)) {
            let prev = hist.state_at(k, qp, params);
            let de = e1[qp] - e0[qp];
            let (upd, tan) = local_update_with_tangent(&prev, &de, hist.dt, params).expect("local update");
            // Skip points on the kink, where the tangent is one-sided.
            if !upd.plastic || upd.state.yield_function(params.kappa).abs() < 1e-6 {
                continue;
            }
            let h = 1e-7;
            for j in 0..m {
                let mut dp = de;
                let mut dm = de;
                dp.as_mut_slice()[j] += h;
                dm.as_mut_slice()[j] -= h;
                let sp = local_update(&prev, &dp, hist.dt, params).expect("plus").state.sigma;
                let sm = local_update(&prev, &dm, hist.dt, params).expect("minus").state.sigma;
                for i in 0..m {
                    let fd = (sp.as_slice()[i] - sm.as_slice()[i]) / (2.0 * h);
                    let scale = tan.entry(i, i).abs().max(1.0);
                    worst = worst.max((fd - tan.entry(i, j)).abs() / scale);
                }
            }
            checked += 1;
        }
    }
    (worst, checked)
}

fn penalty_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for d in [2, 3] {
        let m = components(d);
        for _ in 0..200 {
            let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let beta = SymTensor2::from_mandel(d, &v).unwrap();
            let (kappa, mu) = (rng.gen_range(0.2..1.5), rng.gen_range(0.01..1.0));
            let p = penalty(&beta, kappa, mu);
            for j in 0..m {
                let h = 1e-6;
                let mut bp = beta;
                let mut bm = beta;
                bp.as_mut_slice()[j] += h;
                bm.as_mut_slice()[j] -= h;
                let fd = (penalty_potential(&bp, kappa, mu) - penalty_potential(&bm, kappa, mu)) / (2.0 * h);
                worst = worst.max((fd - p.as_slice()[j]).abs() / p.norm().max(1.0));
            }
        }
    }
    worst
}

struct Histories {
    runs: Vec<(String, Scenario, ScenarioConfig, FieldHistory)>,
}

fn invariants(sw: &Sweep) -> (Line, Histories) {
    let ((lines, runs), seconds) = timed(|| {
        let mut runs = Vec::new();
        let c = config("mixed-boundary-kinematic");
        runs.push((c.name.clone(), sw.scenario.clone(), c, sw.history.clone()));
        for name in ["mixed-boundary-isotropic", "dirichlet-isotropic", "homogeneous-plastic", "elastic-only"] {
            let c = config(name);
            let scn = c.scenario_with_mu(smallest_mu(&c)).expect("scenario");
            let hist = history_run(&scn);
            runs.push((name.to_string(), scn, c, hist));
        }
        let mut lines = Vec::new();
        for (name, scn, _, hist) in &runs {
            let inv = check_invariants(hist, scn).expect("invariants");
            let (tan, checked) = tangent_fd_error(hist, scn);
            let plastic = hist.model == Model::Kinematic || hist.xi.iter().flatten().any(|v| *v != 0.0);
            let ok = inv.plastic_trace <= 1e-10
                && inv.kinematic_identity <= 1e-10
                && inv.isotropic_decrease <= 0.0
                && inv.galerkin_residual <= 1e-8
                && tan <= 1e-5;
            lines.push((
                ok,
                format!(
                    "{name}: tr e_p {:.1e}, Hξ-e_p {:.1e}, ξ decrease {:.1e}, galerkin {:.1e}, tangent FD {tan:.1e} at {checked} pts{}",
                    inv.plastic_trace,
                    inv.kinematic_identity,
                    inv.isotropic_decrease,
                    inv.galerkin_residual,
                    if plastic { "" } else { " (elastic)" }
                ),
            ));
        }
        (lines, runs)
    });
    let pen = penalty_gradient_error();
    let pass = lines.iter().all(|(ok, _)| *ok) && pen <= 1e-6 && seconds < 300.0;
    let mut detail: Vec<String> = lines.into_iter().map(|(_, s)| s).collect();
    detail.push(format!("penalty gradient FD {pen:.1e}"));
    (
        Line {
            id: 9,
            name: "structural invariants on every benchmark",
            pass,
            detail: detail.join("; "),
            seconds,
        },
        Histories { runs },
    )
}

fn fit_self_test() -> Line {
    let (worst, seconds) = timed(|| {
        let n = 32;
        let ladder = shift_ladder(n);
        let mut worst = 0.0f64;
        for s in [0.2, 0.5, 0.6, 1.0] {
            let hs: Vec<f64> = ladder.iter().map(|&k| k as f64 / n as f64).collect();
            let rows = support::power_law_rows(s, 3.7, &hs, 0.02);
            let table = SeminormTable {
                axis: Axis::Normal,
                field: FieldKind::Sigma,
                mode: Aggregation::Sup,
                weight: WeightInfo {
                    eps0: 0.1,
                    h0: 0.25,
                    side: None,
                },
                rows: ladder
                    .iter()
                    .zip(rows)
                    .map(|(&shift, (h, value))| SeminormRow { shift, h, value })
                    .collect(),
            };
            match fit_exponent(&table, [2.0 / n as f64, 0.25]) {
                Ok(ExponentFit::Fitted { s_hat, .. }) => worst = worst.max((s_hat - s).abs()),
                _ => worst = f64::INFINITY,
            }
        }
        worst
    });
    Line {
        id: 10,
        name: "exponent fit recovers synthetic power laws",
        pass: worst <= 0.02,
        detail: format!("max |s_hat - s| {worst:.4} over s in {{0.2, 0.5, 0.6, 1.0}} (tol 0.02)"),
        seconds,
    }
}

fn interpolation(sw: &Sweep, hs: &Histories) -> Line {
    let (parts, seconds) = timed(|| {
        let mut parts: Vec<(bool, String)> = Vec::new();
        let kin = sw.report.interpolation.as_ref().and_then(|i| i.spread);
        parts.push((kin.is_some_and(|s| s <= 10.0), format!("mixed-boundary-kinematic {}", fmt_opt(kin))));
        for (name, _, c, hist) in &hs.runs {
            if name == "mixed-boundary-kinematic" || name == "elastic-only" {
                continue;
            }
            let cutoff = make_cutoff(&hist.grid, c.cutoff.eps0, c.cutoff.h0, c.cutoff.side).expect("cutoff");
            match interpolation_check(hist, &cutoff, c.delta, c.fit_window.space) {
                Ok(r) => parts.push((r.spread.is_some_and(|s| s <= 10.0), format!("{name} {}", fmt_opt(r.spread)))),
                // A single cell across has no normal shift to take.
                Err(e) if hist.grid.cell_counts()[hist.dim() - 1] < 4 => {
                    parts.push((true, format!("{name} not applicable ({e})")))
                }
                Err(e) => parts.push((false, format!("{name} error: {e}"))),
            }
        }
        parts
    });
    Line {
        id: 11,
        name: "interpolation ratio spread",
        pass: parts.iter().all(|(ok, _)| *ok),
        detail: format!(
            "spread max/min R(h) at δ = 0.05 (limit 10): {}",
            parts.into_iter().map(|(_, s)| s).collect::<Vec<_>>().join(", ")
        ),
        seconds,
    }
}

fn print(line: &Line) {
    println!(
        "[{}] {:02} {} ({:.1} s): {}",
        if line.pass { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.seconds,
        line.detail
    );
}

fn main() {
    // `cargo test -- --list` and filters from the libtest harness are not
    // meaningful here; the suite always runs in full.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut lines = Vec::new();
    let emit = |l: Line, lines: &mut Vec<Line>| {
        print(&l);
        lines.push(l);
    };
    emit(local_oracle(), &mut lines);
    emit(homogeneous_ode(), &mut lines);
    emit(elastic_consistency(), &mut lines);
    // Set ACCEPTANCE_QUICK to skip the criteria that need the large runs.
    if std::env::var_os("ACCEPTANCE_QUICK").is_some() {
        emit(fit_self_test(), &mut lines);
        finish(lines);
        return;
    }
    let sw = kinematic_sweep();
    emit(overshoot_rate(&sw), &mut lines);
    emit(uniformity(&sw), &mut lines);
    emit(time_exponent(&sw), &mut lines);
    emit(tangential(&sw), &mut lines);
    emit(normal_exponents(), &mut lines);
    let (inv, hs) = invariants(&sw);
    emit(inv, &mut lines);
    emit(fit_self_test(), &mut lines);
    emit(interpolation(&sw, &hs), &mut lines);
    finish(lines);
}

fn finish(mut lines: Vec<Line>) {
    lines.sort_by_key(|l| l.id);
    let failed: Vec<u8> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!("acceptance: {}/{} passed", lines.len() - failed.len(), lines.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
