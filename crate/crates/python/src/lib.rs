//! Python bindings. The CLI commands are exposed one to one and return the
//! same text (JSON for `targets`); the local constitutive update is exposed
//! for quick experiments from a notebook.

use std::path::PathBuf;

use plastreg::cli::{execute, CliError, Command};
use plastreg::constitutive::{local_update, ConstitutiveState, HardeningLaw, HardeningVariable, MaterialParams, Model};
use plastreg::tensor::{self, SymTensor2, Tensor4Sym};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: CliError) -> PyErr {
    let msg = e.message().to_string();
    match e {
        CliError::Validation(_) => PyValueError::new_err(msg),
        CliError::Solver(_) => PyRuntimeError::new_err(msg),
        CliError::Io(_) => PyOSError::new_err(msg),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_command(py: Python<'_>, command: Command) -> PyResult<String> {
    py.detach(|| execute(&command)).map_err(to_py)
}

/// Checks a scenario file (or `benchmark:<name>`); raises ValueError with
/// every violated check.
#[pyfunction]
fn validate(py: Python<'_>, file: PathBuf) -> PyResult<String> {
    run_command(py, Command::Validate { file })
}

#[pyfunction]
#[pyo3(signature = (file, out, reproducible=false, mu=None))]
fn run(py: Python<'_>, file: PathBuf, out: PathBuf, reproducible: bool, mu: Option<f64>) -> PyResult<String> {
    run_command(
        py,
        Command::Run {
            file,
            out,
            reproducible,
            mu,
        },
    )
}

#[pyfunction]
#[pyo3(signature = (file, out, reproducible=false, mu=None))]
fn probe(py: Python<'_>, file: PathBuf, out: PathBuf, reproducible: bool, mu: Option<f64>) -> PyResult<String> {
    run_command(
        py,
        Command::Probe {
            file,
            out,
            reproducible,
            mu,
        },
    )
}

#[pyfunction]
#[pyo3(signature = (file, out, reproducible=false, skip_probes=false))]
fn sweep(py: Python<'_>, file: PathBuf, out: PathBuf, reproducible: bool, skip_probes: bool) -> PyResult<String> {
    run_command(
        py,
        Command::Sweep {
            file,
            out,
            reproducible,
            skip_probes,
        },
    )
}

/// Theoretical exponents as a JSON string.
#[pyfunction]
#[pyo3(signature = (d, model, boundary, p=None))]
fn targets(py: Python<'_>, d: usize, model: String, boundary: String, p: Option<f64>) -> PyResult<String> {
    run_command(py, Command::Targets { d, model, boundary, p })
}

#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    plastreg::scenario::benchmark_names()
}

/// Penalty `μ⁻¹(|β| - κ)₊ β/|β|` of a Mandel vector.
#[pyfunction]
fn penalty(d: usize, beta: Vec<f64>, kappa: f64, mu: f64) -> PyResult<Vec<f64>> {
    let b = SymTensor2::from_mandel(d, &beta).map_err(value_err)?;
    Ok(tensor::penalty(&b, kappa, mu).as_slice().to_vec())
}

/// One backward-Euler step from the stress-free state of an isotropic
/// material with shear modulus `g`, bulk modulus `k` and hardening modulus
/// `h` (scaled identity for the kinematic model). Returns
/// `(sigma, xi, plastic)` with tensors in Mandel form.
#[pyfunction]
#[pyo3(signature = (d, model, dstrain, dt, kappa, mu, g=1.0, k=2.0, h=1.0))]
#[allow(clippy::too_many_arguments)]
fn step(
    d: usize,
    model: &str,
    dstrain: Vec<f64>,
    dt: f64,
    kappa: f64,
    mu: f64,
    g: f64,
    k: f64,
    h: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
    let (model, hardening) = match model {
        "k" | "kinematic" => (Model::Kinematic, HardeningLaw::Kinematic(Tensor4Sym::scaled_identity(d, h))),
        "i" | "isotropic" => (Model::Isotropic, HardeningLaw::Isotropic(h)),
        other => return Err(PyValueError::new_err(format!("unknown model `{other}`"))),
    };
    let params =
        MaterialParams::new(Tensor4Sym::isotropic_compliance(d, g, k), hardening, kappa, mu, 1.0).map_err(value_err)?;
    let de = SymTensor2::from_mandel(d, &dstrain).map_err(value_err)?;
    let prev = ConstitutiveState::new(SymTensor2::zero(d), model);
    let upd = local_update(&prev, &de, dt, &params).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let xi = match upd.state.xi {
        HardeningVariable::Tensor(x) => x.as_slice().to_vec(),
        HardeningVariable::Scalar(x) => vec![x],
    };
    Ok((upd.state.sigma.as_slice().to_vec(), xi, upd.plastic))
}

#[pymodule]
fn plastreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(probe, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(targets, m)?)?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    m.add_function(wrap_pyfunction!(penalty, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    Ok(())
}
