//! Python bindings. Matrices cross the boundary as lists of rows.

use kdgp_core::basis::{build_basis, KernelHyperparams, SpectralForm};
use kdgp_core::field::{advance_scaled, FieldGrid, GridSpec};
use kdgp_core::geometry::Domain;
use kdgp_core::gp::{kgp_init, kgp_update, posterior_predict, PosteriorState, SensorReading};
use kdgp_core::harness::config::parse_key_value;
use kdgp_core::harness::output::summarize;
use kdgp_core::harness::{run_experiment as run, write_outputs, ExperimentConfig, ExperimentKind};
use kdgp_core::kdgp::{
    kdgp_predict, kdgp_update, run_dual_extrema, AssembledMeasurement, SharedMessage,
};
use kdgp_core::network::{Channel, NetworkGraph};
use kdgp_core::BasisSet;
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn py_err(e: kdgp_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_form(name: &str) -> PyResult<SpectralForm> {
    match name {
        "three_halves" => Ok(SpectralForm::ThreeHalves),
        "standard_2d" => Ok(SpectralForm::Standard2d),
        other => Err(PyValueError::new_err(format!(
            "unknown spectral form {other:?}"
        ))),
    }
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Reduced-rank basis on the centred box `[-half_width, half_width]^2`.
#[pyclass(name = "Basis", frozen)]
struct PyBasis {
    inner: BasisSet,
}

#[pymethods]
impl PyBasis {
    #[new]
    #[pyo3(signature = (count, half_width, sigma_s, l, sigma_n, l_k=3600.0, spectral_form="three_halves"))]
    fn new(
        count: usize,
        half_width: f64,
        sigma_s: f64,
        l: f64,
        sigma_n: f64,
        l_k: f64,
        spectral_form: &str,
    ) -> PyResult<Self> {
        let hp = KernelHyperparams::new(sigma_s, l, sigma_n, l_k).map_err(py_err)?;
        let inner =
            build_basis(count, half_width, &hp, parse_form(spectral_form)?).map_err(py_err)?;
        Ok(PyBasis { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn phi(&self, x: f64, y: f64) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .phi_vector(&[x, y])
            .map_err(py_err)?
            .iter()
            .copied()
            .collect())
    }

    fn approx_kernel(&self, a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
        self.inner
            .approx_kernel(&[a.0, a.1], &[b.0, b.1])
            .map_err(py_err)
    }

    fn exact_kernel(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        self.inner.exact_kernel(&[a.0, a.1], &[b.0, b.1])
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn spectral_densities(&self) -> Vec<f64> {
        self.inner.spectral_densities().to_vec()
    }

    fn index_pairs(&self) -> Vec<(u32, u32)> {
        self.inner.index_pairs().to_vec()
    }
}

/// Gaussian belief over basis weights, starting from the prior.
#[pyclass(name = "Posterior")]
struct PyPosterior {
    basis: BasisSet,
    state: PosteriorState,
}

#[pymethods]
impl PyPosterior {
    #[new]
    fn new(basis: &PyBasis) -> Self {
        PyPosterior {
            basis: basis.inner.clone(),
            state: kgp_init(&basis.inner),
        }
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.state.m.iter().copied().collect()
    }

    #[getter]
    fn covariance(&self) -> Vec<Vec<f64>> {
        to_rows(&self.state.p)
    }

    /// Absorbs one reading.
    fn update(&mut self, x: f64, y: f64, value: f64) -> PyResult<()> {
        let hp = *self.basis.hyperparams();
        self.state = kgp_update(&self.state, &[x, y], value, &hp, &self.basis).map_err(py_err)?;
        Ok(())
    }

    /// Absorbs simultaneous readings through one joint update.
    fn update_many(&mut self, points: Vec<(f64, f64)>, values: Vec<f64>) -> PyResult<()> {
        if points.len() != values.len() {
            return Err(PyValueError::new_err("points and values differ in length"));
        }
        let readings: Vec<SensorReading> = points
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(id, (p, v))| SensorReading {
                sensor_id: id,
                step: self.state.step + 1,
                position: [p.0, p.1],
                value: *v,
            })
            .collect();
        let meas = AssembledMeasurement::from_readings(&readings, &self.basis).map_err(py_err)?;
        let hp = *self.basis.hyperparams();
        self.state = kdgp_update(&self.state, &meas, &hp).map_err(py_err)?;
        Ok(())
    }

    /// Temporal prediction over `delta_k` time units.
    fn predict_step(&mut self, delta_k: f64) -> PyResult<()> {
        let hp = *self.basis.hyperparams();
        self.state = kdgp_predict(&self.state, delta_k, &hp).map_err(py_err)?;
        Ok(())
    }

    /// `(mean, variance)` at each query point.
    fn predict(&self, points: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
        let q: Vec<[f64; 2]> = points.iter().map(|p| [p.0, p.1]).collect();
        Ok(posterior_predict(&self.state, &q, &self.basis)
            .map_err(py_err)?
            .into_iter()
            .map(|p| (p.mean, p.variance))
            .collect())
    }
}

/// Dual-extrema consensus on a synchronous graph. Returns the final
/// matrices and the loop iterations each sensor ran.
#[pyfunction]
#[pyo3(signature = (sensors, edges, matrices, t_max, theta_th=1e-9))]
fn dual_extrema_consensus(
    sensors: usize,
    edges: Vec<(usize, usize)>,
    matrices: Vec<Vec<Vec<f64>>>,
    t_max: usize,
    theta_th: f64,
) -> PyResult<(Vec<Rows>, Vec<usize>)> {
    let graph = NetworkGraph::from_edges(sensors, &edges).map_err(py_err)?;
    let initial = matrices
        .iter()
        .enumerate()
        .map(|(id, m)| {
            Ok(SharedMessage {
                sensor_id: id,
                matrix: from_rows(m)?,
                iteration: 0,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out =
        run_dual_extrema(initial, &mut Channel::sync(graph), t_max, theta_th).map_err(py_err)?;
    Ok((
        out.messages.iter().map(|m| to_rows(&m.matrix)).collect(),
        out.loop_iterations,
    ))
}

/// Convection-diffusion field on `[0, size]^2` from zero to `until`, as
/// `ny` rows of `nx` values.
#[pyfunction]
#[pyo3(signature = (nx, ny, until, source=(6.0, 6.0), amplitude=1.0, size=10.0))]
fn convection_diffusion(
    nx: usize,
    ny: usize,
    until: f64,
    source: (f64, f64),
    amplitude: f64,
    size: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let spec = GridSpec::new(Domain::square(0.0, size), nx, ny).map_err(py_err)?;
    let g = advance_scaled(
        &FieldGrid::zeros(spec),
        until,
        &[source.0, source.1],
        amplitude,
    )
    .map_err(py_err)?;
    Ok(g.values.chunks(nx).map(<[f64]>::to_vec).collect())
}

/// Runs an experiment kind with `key=value` overrides and returns the
/// summary as JSON. Writes the full outputs when `out` is given.
#[pyfunction]
#[pyo3(signature = (kind, overrides=Vec::new(), out=None))]
fn run_experiment(kind: &str, overrides: Vec<String>, out: Option<String>) -> PyResult<String> {
    let kind = match kind {
        "consensus-bench" => ExperimentKind::ConsensusBench,
        "stationary" => ExperimentKind::Stationary,
        "dynamic" => ExperimentKind::Dynamic,
        "kernel-approx" => ExperimentKind::KernelApprox,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown experiment kind {other:?}"
            )))
        }
    };
    let pairs = overrides
        .iter()
        .map(|s| parse_key_value(s))
        .collect::<kdgp_core::Result<Vec<_>>>()
        .map_err(py_err)?;
    let cfg = ExperimentConfig::load(kind, None, &pairs).map_err(py_err)?;
    let output = run(&cfg).map_err(py_err)?;
    if let Some(dir) = out {
        write_outputs(&output, std::path::Path::new(&dir)).map_err(py_err)?;
    }
    serde_json::to_string(&summarize(&output)).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn kdgp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasis>()?;
    m.add_class::<PyPosterior>()?;
    m.add_function(wrap_pyfunction!(dual_extrema_consensus, m)?)?;
    m.add_function(wrap_pyfunction!(convection_diffusion, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
