//! Python bindings. Labels are 1-based on both sides of the boundary.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use subsetq_core::bounds::{self, BoundInputs};
use subsetq_core::datasets::{self, GaussianMixtureSpec, LabeledDataset, QueryResponseDataset};
use subsetq_core::model::{Architecture, Scorer};
use subsetq_core::query::{self, LabelSubset, Response};
use subsetq_core::risk::{self, Correction};
use subsetq_core::rng::SeededRng;
use subsetq_core::trainer::{self, EmptyGroupPolicy, TrainConfig};
use subsetq_core::verify::{self, MonteCarloConfig, VerifyConfig};
use subsetq_core::{ClasswiseLoss, Error, ErrorClass, ProbabilityVector};

fn py_err(e: Error) -> PyErr {
    match (&e, e.class()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorClass::Runtime) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for subsetq_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn parse_loss(name: &str) -> subsetq_core::Result<ClasswiseLoss> {
    name.parse()
}

fn parse_correction(name: &str) -> subsetq_core::Result<Correction> {
    name.parse()
}

fn subset_of(members: Vec<usize>, cfg: &query::QueryConfig) -> subsetq_core::Result<LabelSubset> {
    LabelSubset::new(members, cfg.space())
}

/// Uniform random size-`m` subsets of `{1..k}`.
#[pyclass(name = "QueryConfig", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyQueryConfig {
    inner: query::QueryConfig,
}

#[pymethods]
impl PyQueryConfig {
    #[new]
    fn new(k: usize, m: usize) -> PyResult<Self> {
        Ok(Self { inner: query::QueryConfig::new(k, m).py()? })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    /// Number of possible subsets, `C(k, m)`.
    #[getter]
    fn family_size(&self) -> u128 {
        self.inner.family_size()
    }

    /// `P(s = 1) = m / k`.
    #[getter]
    fn positive_rate(&self) -> f64 {
        query::group_proportion(&self.inner, Response::In)
    }

    /// Draws `count` subsets from a generator seeded with `seed`.
    #[pyo3(signature = (count, seed))]
    fn sample(&self, count: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = SeededRng::new(seed);
        (0..count).map(|_| query::sample_subset(&self.inner, &mut rng).members().to_vec()).collect()
    }

    /// Position of `subset` in lexicographic enumeration order.
    fn rank(&self, subset: Vec<usize>) -> PyResult<usize> {
        let s = subset_of(subset, &self.inner).py()?;
        self.inner.rank(&s).py()
    }

    fn __repr__(&self) -> String {
        format!("QueryConfig(k={}, m={})", self.inner.k(), self.inner.m())
    }
}

/// Labeled examples, row-major features.
#[pyclass(name = "LabeledDataset", frozen, from_py_object)]
#[derive(Clone)]
struct PyLabeled {
    inner: LabeledDataset,
}

#[pymethods]
impl PyLabeled {
    #[new]
    #[pyo3(signature = (features, labels, k))]
    fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<Self> {
        let d = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != d) {
            return Err(PyValueError::new_err("ragged feature rows"));
        }
        let flat = features.into_iter().flatten().collect();
        Ok(Self { inner: LabeledDataset::new(flat, labels, k, d, "python").py()? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        (0..self.inner.n()).map(|i| self.inner.row(i).to_vec()).collect()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    /// Replaces every label with a random subset and its membership bit.
    fn weakify(&self, query: PyQueryConfig, seed: u64) -> PyResult<PyWeak> {
        Ok(PyWeak { inner: datasets::weakify(&self.inner, &query.inner, seed).py()? })
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        datasets::save_csv(&self.inner, &path).py()
    }

    #[staticmethod]
    #[pyo3(signature = (path, k=None))]
    fn load_csv(path: PathBuf, k: Option<usize>) -> PyResult<Self> {
        Ok(Self { inner: datasets::load_csv(&path, datasets::LabelColumn::Last, k).py()? })
    }

    #[staticmethod]
    #[pyo3(signature = (images, labels, k=None))]
    fn load_idx(images: PathBuf, labels: PathBuf, k: Option<usize>) -> PyResult<Self> {
        Ok(Self { inner: datasets::load_idx(&images, &labels, k).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

/// Observable training data: features, query subsets and membership bits.
#[pyclass(name = "WeakDataset", frozen, from_py_object)]
#[derive(Clone)]
struct PyWeak {
    inner: QueryResponseDataset,
}

#[pymethods]
impl PyWeak {
    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n1(&self) -> usize {
        self.inner.n1()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn subsets(&self) -> Vec<Vec<usize>> {
        self.inner.subsets().iter().map(|s| s.members().to_vec()).collect()
    }

    #[getter]
    fn responses(&self) -> Vec<bool> {
        self.inner.responses().iter().map(|r| r.is_in()).collect()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.provenance().seed
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        datasets::save_weak(&self.inner, &path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: datasets::load_weak(&path).py()? })
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }
}

#[pyclass(name = "Scorer", frozen, from_py_object)]
#[derive(Clone)]
struct PyScorer {
    inner: Scorer,
}

#[pymethods]
impl PyScorer {
    /// `architecture` is `"linear"` or `"mlp:<hidden>"`.
    #[new]
    #[pyo3(signature = (architecture, input_dim, k, seed=0))]
    fn new(architecture: &str, input_dim: usize, k: usize, seed: u64) -> PyResult<Self> {
        let arch: Architecture = architecture.parse().py()?;
        Ok(Self { inner: Scorer::init(arch, input_dim, k, &mut SeededRng::new(seed)).py()? })
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.architecture().to_string()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Softmax probabilities for one feature row.
    fn predict(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.predict(&x).py()?.into_inner())
    }

    fn accuracy(&self, data: &PyLabeled) -> PyResult<f64> {
        trainer::evaluate(&self.inner, &data.inner).py()
    }

    /// Whole-dataset risk estimate on weak data.
    #[pyo3(signature = (data, loss="mae", correction="abs"))]
    fn weak_objective<'py>(&self, py: Python<'py>, data: &PyWeak, loss: &str, correction: &str) -> PyResult<Bound<'py, PyDict>> {
        let est = trainer::dataset_objective(&self.inner, &data.inner, &parse_loss(loss).py()?, &parse_correction(correction).py()?)
            .py()?;
        estimate_dict(py, &est)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Scorer::load(&path).py()? })
    }
}

fn estimate_dict<'py>(py: Python<'py>, est: &risk::RiskEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("raw", est.raw)?;
    d.set_item("corrected", est.corrected)?;
    d.set_item("positive_mean", est.r1_mean)?;
    d.set_item("negative_mean", est.r0_mean)?;
    d.set_item("n1", est.n1)?;
    d.set_item("n0", est.n0)?;
    d.set_item("correction_active", est.correction_active)?;
    Ok(d)
}

fn probs(p: Vec<f64>) -> PyResult<ProbabilityVector> {
    ProbabilityVector::new(p).py()
}

/// Class-wise loss `ℓ(p, label)`.
#[pyfunction]
fn loss_value(loss: &str, p: Vec<f64>, label: usize) -> PyResult<f64> {
    parse_loss(loss).py()?.value(&probs(p)?, label).py()
}

/// Mean class-wise loss over the members of `subset`.
#[pyfunction]
fn subset_loss(loss: &str, p: Vec<f64>, subset: Vec<usize>) -> PyResult<f64> {
    let p = probs(p)?;
    let space = query::LabelSpace::new(p.k()).py()?;
    let s = LabelSubset::new(subset, space).py()?;
    Ok(parse_loss(loss).py()?.subset_loss(&p, &s).py()?.value)
}

/// Upper bound of the class-wise loss.
#[pyfunction]
fn loss_bound(loss: &str) -> PyResult<f64> {
    Ok(parse_loss(loss).py()?.bound())
}

#[pyfunction]
fn apply_correction(z: f64, correction: &str) -> PyResult<f64> {
    risk::apply_correction(z, &parse_correction(correction).py()?).py()
}

/// Risk estimate from per-example subset losses and membership bits.
#[pyfunction]
#[pyo3(signature = (losses, responses, query, correction="none"))]
fn estimate_risk<'py>(
    py: Python<'py>,
    losses: Vec<f64>,
    responses: Vec<bool>,
    query: PyQueryConfig,
    correction: &str,
) -> PyResult<Bound<'py, PyDict>> {
    if losses.len() != responses.len() {
        return Err(PyValueError::new_err("losses and responses differ in length"));
    }
    let samples = losses.into_iter().zip(responses).map(|(v, s)| (v, if s { Response::In } else { Response::Out }));
    let est = risk::estimate_risk(samples, &query.inner, &parse_correction(correction).py()?).py()?;
    estimate_dict(py, &est)
}

/// Train and test splits of a built-in Gaussian mixture (`"desk"` or `"triangle"`).
#[pyfunction]
#[pyo3(signature = (name, seed, n_train=None, n_test=None))]
fn generate_mixture(name: &str, seed: u64, n_train: Option<usize>, n_test: Option<usize>) -> PyResult<(PyLabeled, PyLabeled)> {
    let mut spec = match name {
        "desk" => GaussianMixtureSpec::desk_benchmark(),
        "triangle" => GaussianMixtureSpec::triangle(),
        other => return Err(PyValueError::new_err(format!("unknown mixture '{other}'"))),
    };
    if let Some(n) = n_train {
        spec.n_train = n;
    }
    if let Some(n) = n_test {
        spec.n_test = n;
    }
    let (train, test) = datasets::generate_mixture(&spec, &mut SeededRng::new(seed)).py()?;
    Ok((PyLabeled { inner: train }, PyLabeled { inner: test }))
}

/// Trains from scratch; returns the scorer and per-epoch metrics.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    data, architecture="linear", epochs=20, batch_size=64, learning_rate=0.1, momentum=0.9,
    weight_decay=0.0, loss="mae", correction="abs", seed=0, empty_group_policy="skip", test=None,
))]
fn train<'py>(
    py: Python<'py>,
    data: &PyWeak,
    architecture: &str,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    momentum: f64,
    weight_decay: f64,
    loss: &str,
    correction: &str,
    seed: u64,
    empty_group_policy: &str,
    test: Option<PyLabeled>,
) -> PyResult<(PyScorer, Vec<Bound<'py, PyDict>>)> {
    let cfg = TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        momentum,
        weight_decay,
        lr_decay: None,
        loss: parse_loss(loss).py()?,
        correction: parse_correction(correction).py()?,
        seed,
        empty_group_policy: empty_group_policy.parse::<EmptyGroupPolicy>().py()?,
        record_timing: false,
    };
    let arch: Architecture = architecture.parse().py()?;
    let weak = &data.inner;
    let eval = test.as_ref().map(|t| &t.inner);
    let outcome = py.detach(|| trainer::train_from_scratch(arch, weak, &cfg, eval)).py()?;
    let history = outcome
        .history
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("epoch", e.epoch)?;
            d.set_item("learning_rate", e.learning_rate)?;
            d.set_item("raw_objective_mean", e.raw_objective_mean)?;
            d.set_item("corrected_objective_mean", e.corrected_objective_mean)?;
            d.set_item("negative_batch_fraction", e.negative_batch_fraction)?;
            d.set_item("processed_batches", e.processed_batches)?;
            d.set_item("skipped_batches", e.skipped_batches)?;
            d.set_item("test_accuracy", e.test_accuracy)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyScorer { inner: outcome.scorer }, history))
}

#[allow(clippy::too_many_arguments)]
fn bound_inputs(k: usize, m: usize, n1: usize, n0: usize, delta: f64, c_ell: f64, rho: f64, c_r: f64) -> BoundInputs {
    BoundInputs { rho, c_r, ..BoundInputs::new(k, m, n1, n0, delta, c_ell) }
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (k, m, n1, n0, delta, c_ell, rho=1.0, c_r=1.0))]
fn deviation_bound(k: usize, m: usize, n1: usize, n0: usize, delta: f64, c_ell: f64, rho: f64, c_r: f64) -> PyResult<f64> {
    bounds::deviation_bound(&bound_inputs(k, m, n1, n0, delta, c_ell, rho, c_r)).py()
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (k, m, n1, n0, delta, c_ell, rho=1.0, c_r=1.0))]
fn excess_risk_bound(k: usize, m: usize, n1: usize, n0: usize, delta: f64, c_ell: f64, rho: f64, c_r: f64) -> PyResult<f64> {
    bounds::excess_risk_bound(&bound_inputs(k, m, n1, n0, delta, c_ell, rho, c_r)).py()
}

/// Empty-group tail probabilities for `n` draws and the adjusted confidence.
#[pyfunction]
#[pyo3(signature = (k, m, n, delta=0.05))]
fn unconditional_adjustment<'py>(py: Python<'py>, k: usize, m: usize, n: usize, delta: f64) -> PyResult<Bound<'py, PyDict>> {
    let inp = BoundInputs { n1: None, n0: None, n: Some(n), ..BoundInputs::new(k, m, 0, 0, delta, 1.0) };
    let u = bounds::unconditional_adjustment(&inp).py()?;
    let d = PyDict::new(py);
    d.set_item("p_n1_zero", u.p_n1_zero)?;
    d.set_item("p_n0_zero", u.p_n0_zero)?;
    d.set_item("confidence", u.confidence)?;
    d.set_item("clamped", u.clamped)?;
    Ok(d)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (k, m, n1, n0, delta, c_ell, zeta, kappa=0.0))]
fn corrected_bias_bound<'py>(
    py: Python<'py>,
    k: usize,
    m: usize,
    n1: usize,
    n0: usize,
    delta: f64,
    c_ell: f64,
    zeta: f64,
    kappa: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let inp = BoundInputs { kappa, zeta_f: Some(zeta), ..BoundInputs::new(k, m, n1, n0, delta, c_ell) };
    let c = bounds::corrected_bias_bound(&inp).py()?;
    let d = PyDict::new(py);
    d.set_item("delta_f", c.delta_f)?;
    d.set_item("bias_bound", c.bias_bound)?;
    d.set_item("deviation_bound", c.deviation_bound)?;
    Ok(d)
}

/// Runs the exact identity battery and, optionally, the Monte Carlo check.
#[pyfunction(name = "verify")]
#[pyo3(signature = (k_min=2, k_max=8, joints_per_pair=100, simulation_draws=200_000, seed=0, monte_carlo_datasets=None))]
fn run_verify<'py>(
    py: Python<'py>,
    k_min: usize,
    k_max: usize,
    joints_per_pair: usize,
    simulation_draws: u64,
    seed: u64,
    monte_carlo_datasets: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = VerifyConfig {
        k_min,
        k_max,
        joints_per_pair,
        simulation_draws,
        seed,
        monte_carlo: monte_carlo_datasets.map(|datasets| MonteCarloConfig { datasets, ..MonteCarloConfig::default() }),
        ..VerifyConfig::default()
    };
    let report = py.detach(|| verify::run_battery(&cfg)).py()?;
    let d = PyDict::new(py);
    d.set_item("passed", report.passed)?;
    d.set_item("failures", report.failures())?;
    let ids = PyDict::new(py);
    for id in &report.identities {
        ids.set_item(&id.name, (id.max_residual, id.tolerance, id.passed))?;
    }
    d.set_item("identities", ids)?;
    Ok(d)
}

#[pymodule]
fn subsetq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyQueryConfig>()?;
    m.add_class::<PyLabeled>()?;
    m.add_class::<PyWeak>()?;
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(subset_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss_bound, m)?)?;
    m.add_function(wrap_pyfunction!(apply_correction, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_risk, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mixture, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(deviation_bound, m)?)?;
    m.add_function(wrap_pyfunction!(excess_risk_bound, m)?)?;
    m.add_function(wrap_pyfunction!(unconditional_adjustment, m)?)?;
    m.add_function(wrap_pyfunction!(corrected_bias_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_parse() {
        assert_eq!(parse_loss("gce").unwrap(), ClasswiseLoss::default_gce());
        assert_eq!(parse_correction("abs").unwrap(), Correction::Abs);
        assert!(parse_loss("hinge").is_err());
    }

    #[test]
    fn error_classes_map_to_exception_types() {
        Python::attach(|py| {
            let e = py_err(Error::Config("x".into()));
            assert!(e.is_instance_of::<PyValueError>(py));
            let e = py_err(Error::Training("x".into()));
            assert!(e.is_instance_of::<PyRuntimeError>(py));
            let e = py_err(Error::io("p", std::io::Error::other("x")));
            assert!(e.is_instance_of::<PyOSError>(py));
        });
    }

    #[test]
    fn subsets_are_checked() {
        let cfg = query::QueryConfig::new(4, 2).unwrap();
        assert!(subset_of(vec![1, 5], &cfg).is_err());
        assert_eq!(subset_of(vec![3, 1], &cfg).unwrap().members(), &[1, 3]);
    }
}
