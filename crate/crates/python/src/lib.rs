//! Python bindings: models, projectors, states, decoherence reports, scenarios and runs.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use zeno_core::histories::{self, DecoherenceReport, HistoryEvaluator, DEFAULT_TOLERANCE};
use zeno_core::linalg::CVector;
use zeno_core::model::{self, ModelSystem, Potential, Projector, Region, StateVector};
use zeno_core::propagators::{self, RestrictedDynamics};
use zeno_core::scenarios::{self as bundled, ScenarioId, ScenarioSpec};
use zeno_core::{runner, ZenoError};

create_exception!(zeno_histories, NumericalError, PyRuntimeError);

fn to_py(e: ZenoError) -> PyErr {
    match e {
        ZenoError::InvalidParameter { .. }
        | ZenoError::NotHermitian { .. }
        | ZenoError::NotProjector { .. }
        | ZenoError::DimensionMismatch { .. }
        | ZenoError::PacketLeak { .. }
        | ZenoError::Unsupported(_) => PyValueError::new_err(e.to_string()),
        _ => NumericalError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Model", frozen, module = "zeno_histories")]
struct PyModel(ModelSystem);

#[pymethods]
impl PyModel {
    /// Finite-difference particle in the box `(0, length)` with `n` interior points.
    #[staticmethod]
    #[pyo3(signature = (n, length = 1.0, mass = 1.0, potential = None))]
    fn grid(n: usize, length: f64, mass: f64, potential: Option<Vec<f64>>) -> PyResult<Self> {
        let potential = potential.map_or(Potential::Zero, |values| Potential::Table { values });
        model::make_grid_model(n, length, mass, potential).map(PyModel).map_err(to_py)
    }

    /// Two-level system with `H = (omega/2) sigma_x`.
    #[staticmethod]
    #[pyo3(signature = (omega = 1.0))]
    fn two_level(omega: f64) -> Self {
        PyModel(model::make_two_level(omega))
    }

    /// Hermitian matrix given as rows of complex numbers.
    #[staticmethod]
    fn custom(rows: Vec<Vec<Complex64>>) -> PyResult<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(PyValueError::new_err("hamiltonian must be square"));
        }
        let h = zeno_core::linalg::CMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
        ModelSystem::custom(h).map(PyModel).map_err(to_py)
    }

    /// This grid model coupled to a two-level environment through
    /// `strength * sign(x - L/2) (x) sigma_z`.
    #[pyo3(signature = (strength, environment_omega = 1.0))]
    fn with_environment(&self, strength: f64, environment_omega: f64) -> PyResult<Self> {
        bundled::environment_model(&self.0, environment_omega, strength)
            .map(PyModel)
            .map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn hamiltonian(&self) -> Vec<Vec<Complex64>> {
        let h = self.0.h();
        (0..h.nrows()).map(|i| h.row(i).iter().copied().collect()).collect()
    }

    fn positions(&self) -> Option<Vec<f64>> {
        self.0.grid().map(|g| g.positions())
    }

    fn __repr__(&self) -> String {
        match self.0.grid() {
            Some(g) => format!("Model(grid n={}, length={}, mass={}, dim={})", g.n, g.length, g.mass, self.0.dim()),
            None => format!("Model({:?}, dim={})", self.0.basis_kind(), self.0.dim()),
        }
    }
}

#[pyclass(name = "Projector", frozen, module = "zeno_histories")]
struct PyProjector(Projector);

#[pymethods]
impl PyProjector {
    /// Grid points strictly left of `L/2`.
    #[staticmethod]
    fn left_half(model: &PyModel) -> PyResult<Self> {
        model::region_projector(&model.0, &Region::LeftHalf).map(PyProjector).map_err(to_py)
    }

    /// Grid points with `a <= x <= b`.
    #[staticmethod]
    fn interval(model: &PyModel, a: f64, b: f64) -> PyResult<Self> {
        model::region_projector(&model.0, &Region::Interval { a, b })
            .map(PyProjector)
            .map_err(to_py)
    }

    #[staticmethod]
    fn indices(model: &PyModel, indices: Vec<usize>) -> PyResult<Self> {
        model::region_projector(&model.0, &Region::Indices(indices))
            .map(PyProjector)
            .map_err(to_py)
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn support(&self) -> Vec<usize> {
        self.0.support().to_vec()
    }

    fn expectation(&self, state: &PyState) -> f64 {
        self.0.expectation(&state.0)
    }

    fn __repr__(&self) -> String {
        format!("Projector(rank={}, dim={})", self.0.rank(), self.0.dim())
    }
}

#[pyclass(name = "State", frozen, module = "zeno_histories")]
struct PyState(StateVector);

#[pymethods]
impl PyState {
    #[staticmethod]
    fn from_amplitudes(amplitudes: Vec<Complex64>) -> PyResult<Self> {
        StateVector::new(CVector::from_vec(amplitudes)).map(PyState).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (model, x0, sigma, p0 = 0.0))]
    fn gaussian(model: &PyModel, x0: f64, sigma: f64, p0: f64) -> PyResult<Self> {
        model::gaussian_state(&model.0, x0, p0, sigma).map(PyState).map_err(to_py)
    }

    /// `g(x) - g(L - x)` for the Gaussian `g`, normalized on the grid.
    #[staticmethod]
    #[pyo3(signature = (model, x0, sigma, p0 = 0.0))]
    fn antisymmetric_gaussian(model: &PyModel, x0: f64, sigma: f64, p0: f64) -> PyResult<Self> {
        model::antisymmetric_gaussian(&model.0, x0, p0, sigma).map(PyState).map_err(to_py)
    }

    /// Lattice box eigenstate, levels counted from 1.
    #[staticmethod]
    fn eigenstate(model: &PyModel, level: usize) -> PyResult<Self> {
        model::box_eigenstate(&model.0, level).map(PyState).map_err(to_py)
    }

    #[staticmethod]
    fn basis(dim: usize, index: usize) -> PyResult<Self> {
        StateVector::basis(dim, index).map(PyState).map_err(to_py)
    }

    /// `system (x) environment`.
    #[staticmethod]
    fn product(system: &PyState, environment: &PyState) -> Self {
        PyState(StateVector::product(&system.0, &environment.0))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn amplitudes(&self) -> Vec<Complex64> {
        self.0.amplitudes().iter().copied().collect()
    }
}

#[pyclass(name = "Report", frozen, module = "zeno_histories")]
struct PyReport(DecoherenceReport);

#[pymethods]
impl PyReport {
    #[getter]
    fn d_alpha_beta(&self) -> Complex64 {
        self.0.d_alpha_beta
    }

    #[getter]
    fn d_normalized(&self) -> f64 {
        self.0.d_normalized
    }

    #[getter]
    fn p_remain(&self) -> f64 {
        self.0.p_remain
    }

    #[getter]
    fn p_leave(&self) -> f64 {
        self.0.p_leave
    }

    #[getter]
    fn p_subspace(&self) -> f64 {
        self.0.p_subspace
    }

    #[getter]
    fn lhs_rhs_gap(&self) -> f64 {
        self.0.lhs_rhs_gap
    }

    #[getter]
    fn verdict(&self) -> &'static str {
        self.0.verdict.as_str()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.0.dt
    }

    fn row_sum(&self) -> f64 {
        self.0.row_sum()
    }

    fn is_decoherent(&self) -> bool {
        self.0.is_decoherent()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Report(verdict={}, d_normalized={:e}, p_remain={}, dt={})",
            self.0.verdict.as_str(),
            self.0.d_normalized,
            self.0.p_remain,
            self.0.dt
        )
    }
}

/// Remain/leave decoherence report at one time step.
#[pyfunction]
#[pyo3(signature = (model, projector, state, dt, tolerance = DEFAULT_TOLERANCE))]
fn decoherence_report(
    model: &PyModel,
    projector: &PyProjector,
    state: &PyState,
    dt: f64,
    tolerance: f64,
) -> PyResult<PyReport> {
    HistoryEvaluator::new(&model.0, &projector.0, &state.0, tolerance)
        .map(|ev| PyReport(ev.report(dt)))
        .map_err(to_py)
}

/// Reports for every time step, in input order.
#[pyfunction]
#[pyo3(signature = (model, projector, state, dts, tolerance = DEFAULT_TOLERANCE))]
fn dt_scan(
    py: Python<'_>,
    model: &PyModel,
    projector: &PyProjector,
    state: &PyState,
    dts: Vec<f64>,
    tolerance: f64,
) -> PyResult<Vec<PyReport>> {
    let ev = HistoryEvaluator::new(&model.0, &projector.0, &state.0, tolerance).map_err(to_py)?;
    let reports = py.detach(|| ev.scan(&dts));
    Ok(reports.into_iter().map(PyReport).collect())
}

/// `(n, survival)` pairs for a state inside the subspace.
#[pyfunction]
fn survival_curve(
    py: Python<'_>,
    model: &PyModel,
    projector: &PyProjector,
    state: &PyState,
    dt: f64,
    n_list: Vec<u64>,
) -> PyResult<Vec<(u64, f64)>> {
    let points = py
        .detach(|| histories::zeno_survival_curve(&model.0, &projector.0, &state.0, dt, &n_list))
        .map_err(to_py)?;
    Ok(points.into_iter().map(|p| (p.n, p.survival)).collect())
}

/// Operator-norm distance between the `n`-slice product and the closed form.
#[pyfunction]
fn product_defect(py: Python<'_>, model: &PyModel, projector: &PyProjector, dt: f64, n: u64) -> PyResult<f64> {
    py.detach(|| RestrictedDynamics::new(&model.0, &projector.0).and_then(|d| d.product_defect(dt, n)))
        .map_err(to_py)
}

/// Max-entry residual of the restricted evolution equation at step `h`.
#[pyfunction]
fn ode_residual(model: &PyModel, projector: &PyProjector, dt: f64, h: f64) -> PyResult<f64> {
    propagators::restricted_ode_residual(&model.0, &projector.0, dt, h).map_err(to_py)
}

/// `(id, description)` for each bundled scenario, in stable order.
#[pyfunction]
fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    ScenarioId::ALL.iter().map(|id| (id.as_str(), id.description())).collect()
}

/// Runs a bundled scenario with its default parameters; returns the outcome as JSON.
#[pyfunction]
fn run_scenario(py: Python<'_>, id: &str) -> PyResult<String> {
    let id: ScenarioId = id.parse().map_err(to_py)?;
    let outcome = py.detach(|| bundled::run_scenario(&ScenarioSpec::default_for(id))).map_err(to_py)?;
    serde_json::to_string(&outcome).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Checks a JSON config; raises `ValueError` naming the offending key.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<()> {
    runner::validate_config_text(text)
        .map(|_| ())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Runs a JSON config into `out`; returns the process exit code the CLI would use.
#[pyfunction]
fn run_config(py: Python<'_>, text: &str, out: PathBuf) -> i32 {
    py.detach(|| runner::run_config_text(text, Some(&out))).status.code()
}

#[pymodule]
fn zeno_histories(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyProjector>()?;
    m.add_class::<PyState>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(decoherence_report, m)?)?;
    m.add_function(wrap_pyfunction!(dt_scan, m)?)?;
    m.add_function(wrap_pyfunction!(survival_curve, m)?)?;
    m.add_function(wrap_pyfunction!(product_defect, m)?)?;
    m.add_function(wrap_pyfunction!(ode_residual, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add("DEFAULT_TOLERANCE", DEFAULT_TOLERANCE)?;
    Ok(())
}
