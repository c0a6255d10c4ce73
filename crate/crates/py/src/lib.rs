//! Python bindings: task generation, training, harness protocols, losses
//! and cluster metrics. Matrices cross the boundary as lists of rows.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use stablept::harness::{ExperimentPlan, ResultsTable, Runner};
use stablept::metrics;
use stablept::model::{Backbone, ModelConfig, ModelState, SoftInit, Variant};
use stablept::objectives;
use stablept::rng::derive_seed;
use stablept::taskgen::{self, FewShotTask};
use stablept::trainer::{self, EncodedTask, RunHistory, TrainConfig};
use stablept::{Error, Tensor};

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.kind()))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Tensor::new(vec![n, d], rows.into_iter().flatten().collect()).map_err(py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// A generated few-shot task.
#[pyclass(name = "Task", module = "stablept_py")]
struct PyTask {
    inner: FewShotTask,
}

#[pymethods]
impl PyTask {
    #[new]
    #[pyo3(signature = (num_classes = 2, noise = 0.15, seed = 1))]
    fn new(num_classes: usize, noise: f64, seed: u64) -> PyResult<Self> {
        let inner = taskgen::generate_task(num_classes, noise, seed).map_err(py_err)?;
        Ok(PyTask { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn noise(&self) -> f64 {
        self.inner.noise_level
    }

    /// `(tokens, label)` pairs of `"train"`, `"dev"` or `"test"`.
    fn split(&self, name: &str) -> PyResult<Vec<(Vec<usize>, usize)>> {
        let s = match name {
            "train" => &self.inner.train,
            "dev" => &self.inner.dev,
            "test" => &self.inner.test,
            _ => return Err(PyValueError::new_err(format!("unknown split {name:?}"))),
        };
        Ok(s.iter().map(|e| (e.tokens.clone(), e.label)).collect())
    }

    fn write_jsonl(&self, path: &str) -> PyResult<()> {
        self.inner.write_jsonl(path.as_ref()).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Task(seed={}, noise={}, train={}, dev={}, test={})",
            self.inner.seed,
            self.inner.noise_level,
            self.inner.train.len(),
            self.inner.dev.len(),
            self.inner.test.len()
        )
    }
}

/// Outcome of one training run, holding the selected model.
#[pyclass(name = "TrainResult", module = "stablept_py")]
struct PyTrainResult {
    history: RunHistory,
    initial: ModelState,
    state: ModelState,
    data: Arc<EncodedTask>,
    variant: Variant,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn test_accuracy(&self) -> f64 {
        self.history.test_accuracy
    }

    #[getter]
    fn selected_epoch(&self) -> Option<usize> {
        self.history.selected_epoch
    }

    #[getter]
    fn wall_time(&self) -> f64 {
        self.history.wall_time_secs
    }

    /// Per-epoch records as dicts.
    fn epochs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.history
            .epochs
            .iter()
            .map(|e| {
                let d = PyDict::new(py);
                d.set_item("epoch", e.epoch)?;
                d.set_item("l_total", e.l_total)?;
                d.set_item("l_mlm", e.l_mlm)?;
                d.set_item("l_cl", e.l_cl)?;
                d.set_item("dev_accuracy", e.dev_accuracy)?;
                Ok(d)
            })
            .collect()
    }

    fn history_json(&self) -> PyResult<String> {
        self.history.to_json().map_err(py_err)
    }

    /// Pooled prompt states of the test split, before or after tuning.
    #[pyo3(signature = (after = true))]
    fn embeddings(&self, after: bool) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let state = if after { &self.state } else { &self.initial };
        let emb = trainer::pooled_embeddings(state, &self.data.test, self.variant).map_err(py_err)?;
        Ok((rows(&emb), self.data.test.labels.clone()))
    }

    /// Test-split class predictions of the selected model.
    fn predict(&self) -> PyResult<Vec<usize>> {
        self.state.predict(&self.data.test.batch, self.variant).map_err(py_err)
    }

    fn backbone_checksum(&self) -> u64 {
        self.state.backbone.checksum()
    }
}

/// Trains one model with the default architecture on a fresh task.
#[pyfunction]
#[pyo3(signature = (variant = "full", strategy = "random", template_id = 0, noise = 0.0, task_seed = 1, seed = 0, epochs = 100, learning_rate = 1e-4))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    variant: &str,
    strategy: &str,
    template_id: usize,
    noise: f64,
    task_seed: u64,
    seed: u64,
    epochs: usize,
    learning_rate: f64,
) -> PyResult<PyTrainResult> {
    let variant: Variant = parse(variant)?;
    let strategy: SoftInit = parse(strategy)?;
    py.detach(|| {
        let model = ModelConfig::default();
        let task = taskgen::generate_task(model.num_classes, noise, task_seed)?;
        let backbone = Arc::new(Backbone::new(&model)?);
        let templates = taskgen::build_templates(template_id + 1, ExperimentPlan::default().template_style_seed);
        let template = variant.effective_template(&templates[template_id], model.mask_token_id);
        let data = Arc::new(EncodedTask::new(&backbone, &task, &template)?);
        let cfg = TrainConfig {
            seed: derive_seed(0, seed),
            variant,
            soft_init: strategy,
            epochs,
            learning_rate,
            ..TrainConfig::default()
        };
        let initial = ModelState::new(backbone, cfg.seed, strategy, &task)?;
        let (state, history) = trainer::train(initial.clone(), &data, &cfg)?;
        Ok(PyTrainResult {
            history,
            initial,
            state,
            data,
            variant,
        })
    })
    .map_err(py_err)
}

fn table_rows<'py>(py: Python<'py>, table: &ResultsTable) -> PyResult<Vec<Bound<'py, PyDict>>> {
    table
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("variant", r.variant.name())?;
            d.set_item("strategy", r.strategy.name())?;
            d.set_item("template_id", r.template_id)?;
            d.set_item("prompt_len", r.prompt_len)?;
            d.set_item("seed", r.seed)?;
            d.set_item("test_accuracy", r.test_accuracy)?;
            d.set_item("selected_epoch", r.selected_epoch)?;
            Ok(d)
        })
        .collect()
}

/// Runs a harness protocol (`stability_soft`, `stability_hard`, `ablation`
/// or `length_sweep`) from a JSON plan and returns its rows.
#[pyfunction]
#[pyo3(signature = (protocol, plan_json = None))]
fn run_protocol<'py>(py: Python<'py>, protocol: &str, plan_json: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let plan: ExperimentPlan = match plan_json {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => ExperimentPlan::default(),
    };
    let f = match protocol {
        "stability_soft" => Runner::stability_soft,
        "stability_hard" => Runner::stability_hard,
        "ablation" => Runner::ablation,
        "length_sweep" => Runner::length_sweep,
        _ => return Err(PyValueError::new_err(format!("unknown protocol {protocol:?}"))),
    };
    let table = py
        .detach(|| Runner::new(&plan).and_then(|mut r| f(&mut r, &plan)))
        .map_err(py_err)?;
    table_rows(py, &table)
}

/// Default experiment plan as JSON, for editing.
#[pyfunction]
fn default_plan_json() -> PyResult<String> {
    serde_json::to_string_pretty(&ExperimentPlan::default()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (n, style_seed = 11))]
fn build_templates(n: usize, style_seed: u64) -> Vec<Vec<usize>> {
    taskgen::build_templates(n, style_seed).into_iter().map(|t| t.tokens).collect()
}

#[pyfunction]
#[pyo3(signature = (embeddings, labels, temperature = 0.1))]
fn supcon_loss(embeddings: Vec<Vec<f64>>, labels: Vec<usize>, temperature: f64) -> PyResult<f64> {
    objectives::supcon_loss(&matrix(embeddings)?, &labels, temperature).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (logits, labels, label_word_ids = vec![2, 3]))]
fn mlm_loss(logits: Vec<Vec<f64>>, labels: Vec<usize>, label_word_ids: Vec<usize>) -> PyResult<f64> {
    objectives::mlm_loss(&matrix(logits)?, &labels, &label_word_ids).map_err(py_err)
}

#[pyfunction]
fn silhouette(embeddings: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::silhouette(&matrix(embeddings)?, &labels).map_err(py_err)
}

#[pyfunction]
fn kl_gaussian(embeddings: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    metrics::kl_gaussian(&matrix(embeddings)?, &labels).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (x, y, bandwidth = None))]
fn mmd_rbf(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, bandwidth: Option<f64>) -> PyResult<f64> {
    let (x, y) = (matrix(x)?, matrix(y)?);
    match bandwidth {
        Some(s) => metrics::mmd_rbf_with_bandwidth(&x, &y, s),
        None => metrics::mmd_rbf(&x, &y),
    }
    .map_err(py_err)
}

#[pymodule]
fn stablept_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", stablept::harness::LIBRARY_VERSION)?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(run_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(default_plan_json, m)?)?;
    m.add_function(wrap_pyfunction!(build_templates, m)?)?;
    m.add_function(wrap_pyfunction!(supcon_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mlm_loss, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(kl_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(mmd_rbf, m)?)?;
    Ok(())
}
