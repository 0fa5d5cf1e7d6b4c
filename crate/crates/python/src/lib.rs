//! Python bindings for the `fedgrab` simulator.

use fedgrab::data::{self, ClassCountVector, GlobalDataset, Sample};
use fedgrab::dpa::{self, PriorVector};
use fedgrab::experiment::{self, ExperimentConfig};
use fedgrab::fed;
use fedgrab::model::{self, ModelMode, ModelParams};
use fedgrab::sgb::{self, SgbClassState, SgbGains};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: fedgrab::Error) -> PyErr {
    match e {
        fedgrab::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_mode(mode: &str) -> PyResult<ModelMode> {
    match mode {
        "linear" => Ok(ModelMode::Linear),
        "mlp" => Ok(ModelMode::Mlp),
        other => Err(PyValueError::new_err(format!("unknown model mode {other:?}; use \"linear\" or \"mlp\""))),
    }
}

#[pyfunction]
fn make_longtailed_counts(num_classes: usize, n_max: usize, imbalance: f64) -> PyResult<Vec<usize>> {
    data::make_longtailed_counts(num_classes, n_max, imbalance)
        .map(|c| c.as_slice().to_vec())
        .map_err(to_py)
}

/// Global training set plus its balanced held-out test set.
#[pyclass(name = "Dataset", module = "fedgrab_py")]
struct PyDataset {
    inner: GlobalDataset,
    test: Vec<Sample>,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (dim, counts, class_separation=3.0, noise_std=1.0, test_per_class=100, seed=0))]
    fn new(
        dim: usize,
        counts: Vec<usize>,
        class_separation: f64,
        noise_std: f64,
        test_per_class: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let counts = ClassCountVector::new(counts).map_err(to_py)?;
        let (inner, test) =
            data::synthesize_dataset(dim, &counts, class_separation, noise_std, test_per_class, seed)
                .map_err(to_py)?;
        Ok(Self { inner, test })
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.inner.counts.as_slice().to_vec()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.features.clone()).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.samples.iter().map(|s| s.label).collect()
    }

    #[getter]
    fn test_features(&self) -> Vec<Vec<f64>> {
        self.test.iter().map(|s| s.features.clone()).collect()
    }

    #[getter]
    fn test_labels(&self) -> Vec<usize> {
        self.test.iter().map(|s| s.label).collect()
    }

    #[getter]
    fn class_means(&self) -> Vec<Vec<f64>> {
        self.inner.generator.means.clone()
    }

    /// Per-client label histograms of a Dirichlet split.
    fn partition<'py>(&self, py: Python<'py>, n_clients: usize, alpha: f64, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let shards = data::partition_dirichlet(&self.inner, n_clients, alpha, seed).map_err(to_py)?;
        let rows: Vec<serde_json::Value> = shards
            .iter()
            .map(|s| {
                serde_json::json!({
                    "client_id": s.client_id,
                    "local_counts": s.local_counts,
                    "size": s.len(),
                    "flagged_empty": s.flagged_empty,
                })
            })
            .collect();
        json_to_py(py, &rows)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }
}

/// Classifier parameters (linear or one-hidden-layer MLP).
#[pyclass(name = "Model", module = "fedgrab_py")]
struct PyModel {
    inner: ModelParams,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, mode="linear", hidden_dim=0, seed=0))]
    fn new(input_dim: usize, num_classes: usize, mode: &str, hidden_dim: usize, seed: u64) -> PyResult<Self> {
        let inner = model::init_model(input_dim, hidden_dim, num_classes, parse_mode(mode)?, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    /// Softmax probabilities, one row per input.
    fn forward(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let trace = model::forward(&self.inner, &rows).map_err(to_py)?;
        Ok((0..trace.batch).map(|i| trace.probs_of(i).to_vec()).collect())
    }

    fn predict(&self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        Ok(model::forward(&self.inner, &rows).map_err(to_py)?.predictions())
    }

    fn loss(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let trace = model::forward(&self.inner, &rows).map_err(to_py)?;
        if labels.len() != trace.batch {
            return Err(PyValueError::new_err("labels and inputs differ in length"));
        }
        Ok(model::ce_loss(&trace, &labels))
    }

    /// `(pos, neg)` per-class gradient magnitudes for a batch.
    fn gradient_split(&self, inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let rows: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let trace = model::forward(&self.inner, &rows).map_err(to_py)?;
        if labels.len() != trace.batch {
            return Err(PyValueError::new_err("labels and inputs differ in length"));
        }
        let split = model::logit_gradient_split(&trace, &labels);
        Ok((split.pos, split.neg))
    }

    fn weight_norms(&self) -> Vec<f64> {
        model::classifier_weight_norms(&self.inner)
    }

    fn tau_normalize(&self, tau: f64) -> PyResult<Self> {
        Ok(Self {
            inner: model::tau_normalize(&self.inner, tau).map_err(to_py)?,
        })
    }

    fn to_flat(&self) -> Vec<f64> {
        self.inner.to_flat()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

#[pyfunction]
fn fedavg_aggregate(models: Vec<PyRef<'_, PyModel>>, sizes: Vec<usize>) -> PyResult<PyModel> {
    if models.len() != sizes.len() {
        return Err(PyValueError::new_err("models and sizes differ in length"));
    }
    let pairs: Vec<(&ModelParams, usize)> = models.iter().map(|m| &m.inner).zip(sizes).collect();
    Ok(PyModel {
        inner: fed::fedavg_aggregate(&pairs).map_err(to_py)?,
    })
}

#[pyfunction]
#[pyo3(signature = (x, gamma=2.0, delta=1.0, zeta=1.0))]
fn phi(x: f64, gamma: f64, delta: f64, zeta: f64) -> f64 {
    sgb::phi(x, gamma, delta, zeta)
}

/// Returns `(u, error, integral)`.
#[pyfunction]
#[pyo3(signature = (delta_now, integral=0.0, prev_error=0.0, kp=10.0, ki=0.01, kd=0.1, target=0.0))]
fn pid_output(
    delta_now: f64,
    integral: f64,
    prev_error: f64,
    kp: f64,
    ki: f64,
    kd: f64,
    target: f64,
) -> (f64, f64, f64) {
    let gains = SgbGains {
        target,
        ..SgbGains::with_pid(kp, ki, kd)
    };
    let state = SgbClassState {
        integral,
        prev_error,
        ..SgbClassState::default()
    };
    let out = sgb::pid_output(&state, &gains, delta_now);
    (out.u, out.error, out.integral)
}

/// Returns `(beta_pos, beta_neg)` with the default activation.
#[pyfunction]
fn coefficients(u: f64, threshold: f64, r: f64) -> (f64, f64) {
    let c = sgb::coefficients(u, threshold, r, &SgbGains::default());
    (c.pos, c.neg)
}

#[pyfunction]
fn estimate_prior(norms: Vec<f64>) -> PyResult<Vec<f64>> {
    dpa::estimate_prior(&norms).map(|p| p.probs().to_vec()).map_err(to_py)
}

fn prior_and_counts(prior: Vec<f64>, counts: Vec<usize>) -> PyResult<(PriorVector, ClassCountVector)> {
    Ok((
        PriorVector::from_masses(&prior).map_err(to_py)?,
        ClassCountVector::new(counts).map_err(to_py)?,
    ))
}

#[pyfunction]
#[pyo3(signature = (prior, counts, tail_fraction=0.3))]
fn tail_identification_accuracy(prior: Vec<f64>, counts: Vec<usize>, tail_fraction: f64) -> PyResult<f64> {
    let (p, c) = prior_and_counts(prior, counts)?;
    dpa::tail_identification_accuracy(&p, &c, tail_fraction).map_err(to_py)
}

#[pyfunction]
fn prior_l2_distance(prior: Vec<f64>, counts: Vec<usize>) -> PyResult<f64> {
    let (p, c) = prior_and_counts(prior, counts)?;
    dpa::prior_l2_distance(&p, &c).map_err(to_py)
}

/// `(label, overrides)` of one preset variant.
type Variant = (String, Vec<String>);

#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    experiment::PRESET_NAMES.to_vec()
}

/// Base config of a preset plus `{label: overrides}` for its variants.
#[pyfunction]
fn preset(name: &str) -> PyResult<(String, Vec<Variant>)> {
    let p = experiment::preset(name).map_err(to_py)?;
    let variants = p.variants.into_iter().map(|v| (v.label, v.overrides)).collect();
    Ok((p.base.to_toml().map_err(to_py)?, variants))
}

#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().to_toml().map_err(to_py)
}

/// Run every seed of a TOML config in memory. Returns one dict per seed
/// with the summary fields and per-round metric lists.
#[pyfunction]
#[pyo3(signature = (config_toml, overrides=Vec::new()))]
fn run_experiment<'py>(py: Python<'py>, config_toml: &str, overrides: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_toml(config_toml)
        .and_then(|c| c.with_overrides(&overrides))
        .map_err(to_py)?;
    let results = py
        .detach(|| {
            cfg.seeds
                .iter()
                .map(|&seed| {
                    let (setup, outcome) = experiment::run_seed(&cfg, seed)?;
                    let summary = experiment::summarize(&cfg, seed, &setup, &outcome);
                    let rounds: Vec<&fedgrab::metrics::RoundMetrics> =
                        outcome.rounds.iter().map(|r| &r.metrics).collect();
                    let mut value = serde_json::to_value(&summary)?;
                    value["rounds"] = serde_json::to_value(rounds)?;
                    Ok(value)
                })
                .collect::<fedgrab::Result<Vec<serde_json::Value>>>()
        })
        .map_err(to_py)?;
    json_to_py(py, &results)
}

#[pymodule]
pub fn fedgrab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(make_longtailed_counts, m)?)?;
    m.add_function(wrap_pyfunction!(fedavg_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(pid_output, m)?)?;
    m.add_function(wrap_pyfunction!(coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_prior, m)?)?;
    m.add_function(wrap_pyfunction!(tail_identification_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(prior_l2_distance, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
