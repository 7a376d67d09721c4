//! Python module `rishm`: instance generation, objective evaluation, full
//! optimization runs and the surrogate accuracy experiment.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rishm_core::controller::{self, RunConfig, Variant};
use rishm_core::evaluator::{self, EvalCounter};
use rishm_core::genome;
use rishm_core::scenario::{self, Scale, ScenarioInstance};
use rishm_core::terrain::{generate_terrain, TerrainParams};
use rishm_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::State(_) | Error::BudgetExhausted { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A candidate deployment: which sites carry a sensor and how each is aimed.
#[pyclass(name = "Solution", module = "rishm", from_py_object)]
#[derive(Clone)]
pub struct PySolution {
    inner: genome::Solution,
}

#[pymethods]
impl PySolution {
    #[new]
    fn new(select: Vec<bool>, pan: Vec<f64>, tilt: Vec<f64>) -> PyResult<Self> {
        let inner = genome::Solution::new(select, pan, tilt).map_err(to_py)?;
        if !inner.angles_in_bounds() {
            return Err(PyValueError::new_err("pan must lie in [-180, 180] and tilt in [-90, 90]"));
        }
        Ok(PySolution { inner })
    }

    /// Uniformly random valid solution with exactly `k` selected sites.
    #[staticmethod]
    fn random(num_sites: usize, k: usize, seed: u64) -> PyResult<Self> {
        Ok(PySolution {
            inner: genome::Solution::random(num_sites, k, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?,
        })
    }

    #[getter]
    fn select(&self) -> Vec<bool> {
        self.inner.select.clone()
    }

    #[getter]
    fn pan(&self) -> Vec<f64> {
        self.inner.pan.clone()
    }

    #[getter]
    fn tilt(&self) -> Vec<f64> {
        self.inner.tilt.clone()
    }

    fn is_valid(&self, k: usize) -> bool {
        self.inner.is_valid(k)
    }

    fn __len__(&self) -> usize {
        self.inner.num_sites()
    }

    fn __repr__(&self) -> String {
        let sites: Vec<String> = self.inner.selected().map(|j| j.to_string()).collect();
        format!("Solution(selected=[{}])", sites.join(", "))
    }
}

/// A benchmark instance: terrain, candidate sites, weighted targets, budget `k`.
#[pyclass(name = "Instance", module = "rishm")]
pub struct PyInstance {
    inner: ScenarioInstance,
}

#[pymethods]
impl PyInstance {
    /// Synthetic instance at a named `scale` such as "small".
    /// The terrain seed defaults to `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed, scale, terrain_seed=None))]
    fn generate(seed: u64, scale: &str, terrain_seed: Option<u64>) -> PyResult<Self> {
        let scale: Scale = scale.parse().map_err(to_py)?;
        let grid = generate_terrain(terrain_seed.unwrap_or(seed), &TerrainParams::default()).map_err(to_py)?;
        Ok(PyInstance {
            inner: scenario::generate_instance(seed, scale, &grid).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyInstance {
            inner: ScenarioInstance::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn num_sites(&self) -> usize {
        self.inner.num_sites()
    }

    #[getter]
    fn num_targets(&self) -> usize {
        self.inner.targets().len()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    #[getter]
    fn total_weight(&self) -> f64 {
        self.inner.total_weight()
    }

    /// True objective: returns `(fitness, coverage_fraction)`. Lower fitness is better.
    fn evaluate(&self, py: Python<'_>, solution: &PySolution) -> PyResult<(f64, f64)> {
        let sol = solution.inner.clone();
        let v = py
            .detach(|| evaluator::evaluate(&sol, &self.inner, &EvalCounter::unlimited()))
            .map_err(to_py)?;
        Ok((v.fitness, v.coverage_fraction))
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(id={:?}, sites={}, targets={}, k={})",
            self.inner.id(),
            self.inner.num_sites(),
            self.inner.targets().len(),
            self.inner.k()
        )
    }
}

/// Outcome of one optimization run.
#[pyclass(name = "RunResult", module = "rishm")]
pub struct PyRunResult {
    inner: controller::RunResult,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn best_fitness(&self) -> f64 {
        self.inner.final_best()
    }

    #[getter]
    fn coverage(&self) -> f64 {
        self.inner.best.objective.coverage_fraction
    }

    #[getter]
    fn evaluations(&self) -> u64 {
        self.inner.evaluations
    }

    #[getter]
    fn iterations(&self) -> u64 {
        self.inner.iterations
    }

    #[getter]
    fn best_solution(&self) -> PySolution {
        PySolution {
            inner: self.inner.best.solution.clone(),
        }
    }

    /// Convergence trace as `(fe, best_fitness)` tuples.
    #[getter]
    fn trace(&self) -> Vec<(u64, f64)> {
        self.inner.trace.iter().map(|t| (t.fe, t.best_fitness)).collect()
    }

    #[getter]
    fn phase_switches(&self) -> usize {
        self.inner.phase_log.len()
    }

    #[getter]
    fn surrogate_fits(&self) -> usize {
        self.inner.surrogate_log.len()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// Runs one variant ("rishm", "rishm_wo_global", "rishm_wo_local", "ga_only"
/// or "random_search"). The GIL is released while the optimizer runs.
#[pyfunction]
#[pyo3(signature = (instance, variant="rishm", seed=0, max_fes=2000, pop_size=100))]
fn run(
    py: Python<'_>,
    instance: &PyInstance,
    variant: &str,
    seed: u64,
    max_fes: u64,
    pop_size: usize,
) -> PyResult<PyRunResult> {
    let variant: Variant = variant.parse().map_err(to_py)?;
    let cfg = RunConfig {
        variant,
        seed,
        max_fes,
        pop_size,
        ..RunConfig::default()
    };
    let inner = py.detach(|| controller::run(&instance.inner, &cfg)).map_err(to_py)?;
    Ok(PyRunResult { inner })
}

/// Held-out pairwise accuracy of the ranking surrogate trained on the
/// initial design: returns `(train_accuracy, test_accuracy)`.
#[pyfunction]
#[pyo3(signature = (instance, seed=0))]
fn surrogate_accuracy(py: Python<'_>, instance: &PyInstance, seed: u64) -> PyResult<(f64, f64)> {
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let r = py
        .detach(|| controller::surrogate_accuracy(&instance.inner, &cfg))
        .map_err(to_py)?;
    Ok((r.train_accuracy, r.test_accuracy))
}

#[pyfunction]
fn fitness_diversity(fitness: Vec<f64>) -> f64 {
    controller::fitness_diversity_of(&fitness)
}

#[pyfunction]
fn gower_distance(a: &PySolution, b: &PySolution) -> PyResult<f64> {
    if a.inner.num_sites() != b.inner.num_sites() {
        return Err(PyValueError::new_err("solutions have different lengths"));
    }
    Ok(genome::gower_distance(&a.inner, &b.inner))
}

/// Membership functions under the default sensor parameters.
#[pyfunction]
fn mu_distance(d: f64) -> f64 {
    evaluator::mu_distance(d, &scenario::SensorParams::default())
}

#[pyfunction]
fn mu_pan(alpha: f64) -> f64 {
    evaluator::mu_pan(alpha, &scenario::SensorParams::default())
}

#[pyfunction]
fn mu_tilt(alpha: f64) -> f64 {
    evaluator::mu_tilt(alpha, &scenario::SensorParams::default())
}

/// Adds every class and function to `m`; also used to build the module
/// inside an embedded interpreter.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySolution>()?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(surrogate_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(fitness_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(gower_distance, m)?)?;
    m.add_function(wrap_pyfunction!(mu_distance, m)?)?;
    m.add_function(wrap_pyfunction!(mu_pan, m)?)?;
    m.add_function(wrap_pyfunction!(mu_tilt, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

#[pymodule]
fn rishm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
