//! Python bindings for `ice-core`.
//!
//! Images cross the boundary as lists of rows. Parameter and config errors
//! raise `ValueError`; numerical failures raise `RuntimeError`.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ice_core::config::Config;
use ice_core::experiments::{self, ExperimentSpec, REGISTRY};
use ice_core::metrology;
use ice_core::photon_model::{self, sample_dwell, PairChannel, SourceMode, SourceParams};
use ice_core::polarimetry::{self, BellModel, BirefringencePoint, CoincidenceQuad};
use ice_core::rng::{stream, Domain};
use ice_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        _ if e.is_computation() => PyRuntimeError::new_err(e.to_string()),
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("image rows differ in length"));
    }
    Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn source(mu_spdc: f64, mu_stray: f64, eta: f64, tau_c_ns: f64, t_dwell_s: f64, classical: bool) -> SourceParams {
    let mode = if classical { SourceMode::ClassicalSplit } else { SourceMode::Entangled };
    SourceParams { tau_c: tau_c_ns * 1e-9, t_dwell: t_dwell_s, ..SourceParams::entangled(mu_spdc, mu_stray, eta) }
        .with_mode(mode)
}

/// Mean `(n_s, n_i, n_c)` of one dwell through an object of transmittance `t`.
#[pyfunction]
#[pyo3(signature = (mu_spdc, eta, t=1.0, mu_stray=0.0, tau_c_ns=8.0, t_dwell_s=1.0, classical=false))]
fn expected_counts(
    mu_spdc: f64,
    eta: f64,
    t: f64,
    mu_stray: f64,
    tau_c_ns: f64,
    t_dwell_s: f64,
    classical: bool,
) -> PyResult<(f64, f64, f64)> {
    let src = source(mu_spdc, mu_stray, eta, tau_c_ns, t_dwell_s, classical);
    let e = photon_model::expected_counts(&src, t).map_err(py_err)?;
    Ok((e.s, e.i, e.c))
}

/// `n` independent dwells as `(n_s, n_i, n_c)` tuples, reproducible from `seed`.
#[pyfunction]
#[pyo3(signature = (n, seed, mu_spdc, eta, t=1.0, mu_stray=0.0, tau_c_ns=8.0, t_dwell_s=1.0, classical=false))]
#[allow(clippy::too_many_arguments)]
fn sample_counts(
    n: usize,
    seed: u64,
    mu_spdc: f64,
    eta: f64,
    t: f64,
    mu_stray: f64,
    tau_c_ns: f64,
    t_dwell_s: f64,
    classical: bool,
) -> PyResult<Vec<(u64, u64, u64)>> {
    let src = source(mu_spdc, mu_stray, eta, tau_c_ns, t_dwell_s, classical);
    src.validate().map_err(py_err)?;
    let channel = PairChannel::transmittance(t, t);
    channel.validate().map_err(py_err)?;
    let mut rng = stream(seed, Domain::Synthetic, 0, 0);
    Ok((0..n)
        .map(|_| {
            let c = sample_dwell(&src, channel, 0.0, &mut rng);
            (c.n_s, c.n_i, c.n_c)
        })
        .collect())
}

/// Global SSIM of two equally sized images.
#[pyfunction]
fn ssim(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrology::ssim(&to_array(a)?, &to_array(b)?).map_err(py_err)
}

/// Coincidence quad at analyser angles 0, 45, 90, 135 degrees.
#[pyfunction]
fn forward_birefringence(t: f64, theta_deg: f64, delta_rad: f64) -> PyResult<[f64; 4]> {
    let point = BirefringencePoint { t, theta: theta_deg, delta: delta_rad };
    Ok(polarimetry::forward_birefringence(point).map_err(py_err)?.to_array())
}

/// `(t, theta_deg, delta_rad)` recovered from a coincidence quad.
#[pyfunction]
fn invert_birefringence(quad: [f64; 4]) -> PyResult<(f64, f64, f64)> {
    let inv = polarimetry::invert_birefringence(CoincidenceQuad::from_array(quad)).map_err(py_err)?;
    Ok((inv.point.t, inv.point.theta, inv.point.delta))
}

/// CHSH value of the visibility model with counts `n0` and floor `n1`.
#[pyfunction]
fn chsh_closed_form(n0: f64, n1: f64) -> PyResult<f64> {
    Ok(BellModel::new(n0, n1).map_err(py_err)?.chsh_closed_form())
}

/// Optical power in watts of `rate` photons per second at `wavelength_m`.
#[pyfunction]
fn photon_flux_power(rate: f64, wavelength_m: f64) -> PyResult<f64> {
    photon_model::photon_flux_power(rate, wavelength_m).map_err(py_err)
}

/// Runs a named experiment and returns its run directory.
#[pyfunction]
#[pyo3(signature = (name, output_dir, seed=0, config=None))]
fn run_experiment(name: &str, output_dir: PathBuf, seed: u64, config: Option<PathBuf>) -> PyResult<String> {
    let cfg = match config {
        Some(path) => Config::load(&path).map_err(py_err)?,
        None => Config::default(),
    };
    let mut spec = ExperimentSpec::from_config(name, &cfg, seed).map_err(py_err)?;
    let dir = experiments::run(&mut spec, &output_dir).map_err(py_err)?;
    Ok(dir.display().to_string())
}

#[pymodule]
fn ice_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EXPERIMENTS", REGISTRY.to_vec())?;
    m.add_function(wrap_pyfunction!(expected_counts, m)?)?;
    m.add_function(wrap_pyfunction!(sample_counts, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(forward_birefringence, m)?)?;
    m.add_function(wrap_pyfunction!(invert_birefringence, m)?)?;
    m.add_function(wrap_pyfunction!(chsh_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(photon_flux_power, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
