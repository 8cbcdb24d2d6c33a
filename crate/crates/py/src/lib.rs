//! Python bindings: `import kdalign`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use kdalign::autodiff::Matrix;
use kdalign::config::RunConfig;
use kdalign::eval::{self, TabularData};
use kdalign::ot::{self, Marginals};
use kdalign::rules::{self, FeatureIndex};
use kdalign::train::{self as tr, Checkpoint};
use kdalign::util::derive_seed;
use kdalign::{Error, ErrorClass};

fn py_err(e: Error) -> PyErr {
    match (&e, e.class()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorClass::Numeric) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for kdalign::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Converts any serialisable value to plain Python objects via JSON.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
}

/// Run configuration; the same TOML schema the command-line tool reads.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// `overrides` are `section.key=value` strings.
    #[new]
    #[pyo3(signature = (toml = "", overrides = Vec::new()))]
    fn new(toml: &str, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::from_toml(toml, &overrides).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: RunConfig::load(&path, &overrides).py()?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={})", self.inner.seed)
    }
}

fn config_or_default(config: Option<PyConfig>) -> RunConfig {
    config.map(|c| c.inner).unwrap_or_default()
}

/// Labelled tabular data.
#[pyclass(name = "Dataset", from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: TabularData,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(features: Vec<String>, x: Vec<Vec<f64>>, y: Vec<u8>) -> PyResult<Self> {
        Ok(PyDataset {
            inner: TabularData::new(features, matrix(x)?, y).py()?,
        })
    }

    /// Reads a CSV with a `label` column.
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: eval::read_csv(&path).py()?,
        })
    }

    /// The bundled synthetic dataset described by `config.data.synthetic`.
    #[staticmethod]
    #[pyo3(signature = (config = None))]
    fn synthetic(config: Option<PyConfig>) -> PyResult<Self> {
        Ok(PyDataset {
            inner: eval::make_synthetic(&config_or_default(config).data.synthetic).py()?,
        })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        let mut buf = Vec::new();
        eval::write_csv(&self.inner, &mut buf).py()?;
        kdalign::util::write_atomic(&path, &buf).py()
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.features.clone()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.x.to_rows()
    }

    #[getter]
    fn y(&self) -> Vec<u8> {
        self.inner.y.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let anomalies = self.inner.y.iter().filter(|&&v| v == 1).count();
        format!(
            "Dataset(rows={}, features={}, anomalies={anomalies})",
            self.inner.len(),
            self.inner.features.len()
        )
    }
}

/// One `IF ... THEN anomaly IS true` rule.
#[pyclass(name = "Rule", from_py_object)]
#[derive(Clone)]
struct PyRule {
    inner: rules::Rule,
}

#[pymethods]
impl PyRule {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let mut parsed = rules::parse_rule_text(text).py()?;
        if parsed.len() != 1 {
            return Err(PyValueError::new_err(format!("expected one rule, found {}", parsed.len())));
        }
        Ok(PyRule {
            inner: parsed.remove(0),
        })
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id.clone()
    }

    /// Whether each row of `data` satisfies the antecedent.
    fn matches(&self, data: &PyDataset) -> PyResult<Vec<bool>> {
        let index: FeatureIndex = data.inner.feature_index();
        (0..data.inner.len())
            .map(|r| rules::match_rule(&self.inner, data.inner.x.row(r), &index))
            .collect::<kdalign::Result<_>>()
            .py()
    }

    /// CNF, d-DNNF size and model count of the rule on its own.
    fn compile<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        #[derive(Serialize)]
        struct Compiled {
            cnf: String,
            nodes: usize,
            variables: usize,
            model_count: String,
        }
        let (table, compiled) = rules::compile_rules(std::slice::from_ref(&self.inner)).py()?;
        let c = &compiled[0];
        to_py(
            py,
            &Compiled {
                cnf: c.cnf.to_string(),
                nodes: c.graph.len(),
                variables: table.len(),
                model_count: rules::model_count(&c.graph, table.len()).to_string(),
            },
        )
    }

    fn __str__(&self) -> String {
        self.inner.render()
    }

    fn __repr__(&self) -> String {
        format!("Rule({:?})", self.inner.render())
    }
}

fn wrap_rules(rules: Vec<rules::Rule>) -> Vec<PyRule> {
    rules.into_iter().map(|inner| PyRule { inner }).collect()
}

fn unwrap_rules(rules: Vec<PyRule>) -> Vec<rules::Rule> {
    rules.into_iter().map(|r| r.inner).collect()
}

/// Parses rule-file text, one rule per line.
#[pyfunction]
fn parse_rules(text: &str) -> PyResult<Vec<PyRule>> {
    Ok(wrap_rules(rules::parse_rule_text(text).py()?))
}

#[pyfunction]
fn load_rules(path: PathBuf) -> PyResult<Vec<PyRule>> {
    Ok(wrap_rules(rules::load_rules(&path).py()?))
}

#[pyfunction]
fn render_rules(rules: Vec<PyRule>) -> String {
    rules::render_rule_text(&unwrap_rules(rules))
}

/// Extracts all-right anomaly paths from a forest fitted to `data`.
#[pyfunction]
#[pyo3(signature = (data, config = None))]
fn acquire_rules(data: &PyDataset, config: Option<PyConfig>) -> PyResult<Vec<PyRule>> {
    let cfg = config_or_default(config);
    let d = &data.inner;
    let (rules, _, _) = kdalign::acquisition::acquire_rules(&d.x, &d.y, &d.features, &cfg.acquire_config()).py()?;
    Ok(wrap_rules(rules))
}

/// A trained detector.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: Checkpoint,
    log: Vec<tr::EpochRecord>,
}

#[pymethods]
impl PyModel {
    /// Splits `data`, trains with `config.train.lambda` and keeps the best
    /// validation epoch. Rules are acquired from `data` when omitted.
    #[staticmethod]
    #[pyo3(signature = (data, rules = None, config = None))]
    fn train(py: Python<'_>, data: &PyDataset, rules: Option<Vec<PyRule>>, config: Option<PyConfig>) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let d = data.inner.clone();
        let rules = rules.map(unwrap_rules);
        let outcome = py
            .detach(move || -> kdalign::Result<tr::TrainOutcome> {
                let rules = match rules {
                    Some(r) => r,
                    None => kdalign::acquisition::acquire_rules(&d.x, &d.y, &d.features, &cfg.acquire_config())?.0,
                };
                let split = eval::split_dataset(&d, &rules, cfg.data.k_labeled, derive_seed(cfg.seed, "split"))?;
                let mut tc = cfg.train_config(cfg.train.lambda);
                tc.seed = derive_seed(cfg.seed, "train");
                let knowledge = if tc.ot.enabled && tc.lambda > 0.0 && !rules.is_empty() {
                    Some(eval::build_knowledge(&rules, &cfg.know_encoder, cfg.model.embed_dim, cfg.seed)?.embeddings)
                } else {
                    None
                };
                tr::train(&split, knowledge.as_ref(), &cfg.model_spec(d.features.len()), &tc)
            })
            .py()?;
        Ok(PyModel {
            inner: outcome.checkpoint,
            log: outcome.log,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: tr::load_checkpoint(&path).py()?,
            log: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        tr::save_checkpoint(&self.inner, &path).py()
    }

    /// Anomaly scores for each row of `x`, a `Dataset` or a list of rows.
    fn score(&self, x: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
        let m = match x.cast::<PyDataset>() {
            Ok(d) => d.borrow().inner.x.clone(),
            Err(_) => matrix(x.extract()?)?,
        };
        tr::infer(&self.inner, &m).py()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.inner.meta.epoch
    }

    #[getter]
    fn val_auprc(&self) -> Option<f64> {
        self.inner.meta.val_auprc
    }

    /// Per-epoch training records (empty for a loaded model).
    #[getter]
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.log)
    }

    /// The knowledge embeddings the model was aligned with, if any.
    #[getter]
    fn knowledge(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.knowledge().map(Matrix::to_rows)
    }

    fn __repr__(&self) -> String {
        let val = self.inner.meta.val_auprc.map_or_else(|| "None".to_string(), |v| format!("{v:.4}"));
        format!("Model(best_epoch={}, val_auprc={val})", self.inner.meta.epoch)
    }
}

#[pyfunction]
fn auprc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auprc(&scores, &labels).py()
}

/// Recall among the top-K scores, K being the number of anomalies.
#[pyfunction]
fn rec_at_k(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    Ok(eval::rec_at_k(&scores, &labels).py()?.value)
}

/// Log-domain Sinkhorn on `cost`. Marginals default to uniform and ε to
/// the adaptive choice. Returns `(plan, info)`.
#[pyfunction]
#[pyo3(signature = (cost, mu = None, nu = None, epsilon = None, max_iter = 1000, tol = 1e-9))]
fn sinkhorn<'py>(
    py: Python<'py>,
    cost: Vec<Vec<f64>>,
    mu: Option<Vec<f64>>,
    nu: Option<Vec<f64>>,
    epsilon: Option<f64>,
    max_iter: usize,
    tol: f64,
) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyAny>)> {
    let c = matrix(cost)?;
    let uniform = Marginals::uniform(c.rows(), c.cols());
    let marg = Marginals {
        mu: mu.unwrap_or(uniform.mu),
        nu: nu.unwrap_or(uniform.nu),
    };
    let eps = epsilon.unwrap_or_else(|| ot::SinkhornConfig::default().epsilon_for(&c));
    let plan = ot::sinkhorn(&c, &marg, eps, max_iter, tol).py()?;
    #[derive(Serialize)]
    struct Info {
        epsilon: f64,
        iterations: usize,
        converged: bool,
        row_residual: f64,
        col_residual: f64,
        distance: f64,
    }
    let info = Info {
        epsilon: plan.epsilon,
        iterations: plan.iterations,
        converged: plan.converged,
        row_residual: plan.row_residual,
        col_residual: plan.col_residual,
        distance: ot::ot_distance(&c, &plan.plan).py()?,
    };
    Ok((plan.plan.to_rows(), to_py(py, &info)?))
}

/// Baseline against the aligned detector over the configured seeds;
/// returns the report as nested dicts.
#[pyfunction]
#[pyo3(signature = (data, rules = None, config = None))]
fn run_experiment<'py>(
    py: Python<'py>,
    data: &PyDataset,
    rules: Option<Vec<PyRule>>,
    config: Option<PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_or_default(config);
    let d = data.inner.clone();
    let rules = rules.map(unwrap_rules);
    let report = py
        .detach(move || eval::run_experiment_with_rules(&d, rules.as_deref(), &cfg.experiment(d.features.len())))
        .py()?;
    to_py(py, &report)
}

#[pymodule]
#[pyo3(name = "kdalign")]
pub fn kdalign_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRule>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse_rules, m)?)?;
    m.add_function(wrap_pyfunction!(load_rules, m)?)?;
    m.add_function(wrap_pyfunction!(render_rules, m)?)?;
    m.add_function(wrap_pyfunction!(acquire_rules, m)?)?;
    m.add_function(wrap_pyfunction!(auprc, m)?)?;
    m.add_function(wrap_pyfunction!(rec_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
