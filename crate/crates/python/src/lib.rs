//! Python bindings. Configs and reports cross the boundary as plain dicts.

use std::collections::BTreeSet;

use conscal::calibrator::{self, FitOptions};
use conscal::evaluation::{self, EvalDataset, TrialConfig};
use conscal::records::{load_generations, load_labels, load_queries, SampleSet};
use conscal::{baselines, consistency, metrics, synth};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: conscal::Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, value: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(dict) = value else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (dict,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyclass(name = "CalibratorModel", module = "conscal_py", from_py_object)]
#[derive(Clone)]
struct PyCalibrator {
    inner: calibrator::CalibratorModel,
}

#[pymethods]
impl PyCalibrator {
    #[staticmethod]
    #[pyo3(signature = (features, targets, split_frac = 0.5, alpha = 1.0, seed = 0, feature_source = "response"))]
    fn fit(
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        split_frac: f64,
        alpha: f64,
        seed: u64,
        feature_source: &str,
    ) -> PyResult<Self> {
        let opts = FitOptions {
            split_frac,
            alpha,
            seed,
            feature_source: feature_source.parse().map_err(err)?,
        };
        let inner = calibrator::fit_pipeline(&features, &targets, &opts).map_err(err)?;
        Ok(Self { inner })
    }

    fn predict(&self, feature: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&feature).map_err(err)
    }

    fn predict_many(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        features.iter().map(|f| self.inner.predict(f).map_err(err)).collect()
    }

    fn linear_score(&self, feature: Vec<f64>) -> PyResult<f64> {
        self.inner.linear_score(&feature).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = calibrator::CalibratorModel::from_json(text).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = calibrator::CalibratorModel::load(path).map_err(err)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!("CalibratorModel(dim={})", self.inner.dim())
    }
}

#[pyfunction]
fn extract_boxed(text: &str) -> Option<String> {
    consistency::extract_boxed(text)
}

#[pyfunction]
fn normalize_answer(raw: &str) -> String {
    consistency::normalize_answer(raw)
}

#[pyfunction]
fn token_prob_score(token_logprobs: Vec<f64>) -> PyResult<f64> {
    baselines::token_prob_score(&token_logprobs).map_err(err)
}

#[pyfunction]
fn parse_verbal_confidence(text: &str) -> Option<f64> {
    baselines::parse_verbal_confidence(text)
}

/// Returns `(slope, bias)`.
#[pyfunction]
fn fit_platt(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<(f64, f64)> {
    let m = baselines::fit_platt(&scores, &labels).map_err(err)?;
    Ok((m.slope, m.bias))
}

#[pyfunction]
fn apply_platt(slope: f64, bias: f64, score: f64) -> f64 {
    baselines::PlattModel {
        slope,
        bias,
        input_clip: baselines::PLATT_EPS,
    }
    .apply(score)
}

#[pyfunction]
#[pyo3(signature = (confidences, labels, bins = 12, p = 1))]
fn ece(confidences: Vec<f64>, labels: Vec<u8>, bins: usize, p: u32) -> PyResult<f64> {
    metrics::ece(&confidences, &labels, bins, p).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (confidences, labels, bins = 12))]
fn mce(confidences: Vec<f64>, labels: Vec<u8>, bins: usize) -> PyResult<f64> {
    metrics::mce(&confidences, &labels, bins).map_err(err)
}

#[pyfunction]
fn brier(confidences: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    metrics::brier(&confidences, &labels).map_err(err)
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<u8>) -> Option<f64> {
    metrics::auroc(&scores, &labels)
}

#[pyfunction]
#[pyo3(signature = (confidences, labels, bins = 12))]
fn evaluate(py: Python<'_>, confidences: Vec<f64>, labels: Vec<u8>, bins: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &metrics::evaluate(&confidences, &labels, bins).map_err(err)?)
}

/// Writes a synthetic corpus to `out_dir`; returns `(mean gold mass, fraction of correct samples)`.
#[pyfunction]
#[pyo3(signature = (out_dir, config = None))]
fn synth_generate(py: Python<'_>, out_dir: &str, config: Option<&Bound<'_, PyDict>>) -> PyResult<(f64, f64)> {
    let cfg: synth::SynthConfig = from_py(py, config)?;
    let data = synth::generate(&cfg).map_err(err)?;
    data.write_to(out_dir).map_err(err)?;
    Ok(data.summary())
}

fn load_sets(queries: &str, generations: &str) -> PyResult<Vec<SampleSet>> {
    let q = load_queries(queries).map_err(err)?;
    Ok(load_generations(generations, &q).map_err(err)?.value)
}

/// One target per query with an extractable answer.
#[pyfunction]
fn build_targets(py: Python<'_>, queries: &str, generations: &str) -> PyResult<Py<PyAny>> {
    let targets: Vec<_> = load_sets(queries, generations)?
        .iter()
        .filter_map(|s| consistency::build_target(s).ok())
        .collect();
    to_py(py, &targets)
}

fn dataset(queries: &str, generations: &str, labels: Option<&str>, truth: Option<&str>) -> PyResult<EvalDataset> {
    let sets = load_sets(queries, generations)?;
    let labels = labels.map(|p| load_labels(p, &sets)).transpose().map_err(err)?;
    let truth = truth.map(synth::load_truth).transpose().map_err(err)?;
    EvalDataset::build(sets, labels.as_ref(), truth.as_ref()).map_err(err)
}

/// Repeated calibration/test trials; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (queries, generations, labels = None, truth = None, config = None, rates = None))]
fn run_trials(
    py: Python<'_>,
    queries: &str,
    generations: &str,
    labels: Option<&str>,
    truth: Option<&str>,
    config: Option<&Bound<'_, PyDict>>,
    rates: Option<Vec<f64>>,
) -> PyResult<Py<PyAny>> {
    let cfg: TrialConfig = from_py(py, config)?;
    let ds = dataset(queries, generations, labels, truth)?;
    let report = match rates {
        Some(r) => evaluation::run_selective(&ds, &cfg, &r),
        None => evaluation::run_trials(&ds, &cfg),
    }
    .map_err(err)?;
    to_py(py, &report)
}

/// Calibrate on `train_groups`, evaluate on `test_groups`.
#[pyfunction]
#[pyo3(signature = (queries, generations, train_groups, test_groups, labels = None, truth = None, config = None))]
#[allow(clippy::too_many_arguments)]
fn shift_eval(
    py: Python<'_>,
    queries: &str,
    generations: &str,
    train_groups: BTreeSet<String>,
    test_groups: BTreeSet<String>,
    labels: Option<&str>,
    truth: Option<&str>,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<Py<PyAny>> {
    let cfg: TrialConfig = from_py(py, config)?;
    let ds = dataset(queries, generations, labels, truth)?;
    let report = evaluation::shift_eval(&train_groups, &test_groups, &ds, &cfg).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn conscal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCalibrator>()?;
    m.add_function(wrap_pyfunction!(extract_boxed, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(token_prob_score, m)?)?;
    m.add_function(wrap_pyfunction!(parse_verbal_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(fit_platt, m)?)?;
    m.add_function(wrap_pyfunction!(apply_platt, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(mce, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(build_targets, m)?)?;
    m.add_function(wrap_pyfunction!(run_trials, m)?)?;
    m.add_function(wrap_pyfunction!(shift_eval, m)?)?;
    m.add("REPORT_FORMAT", evaluation::REPORT_FORMAT)?;
    m.add("MODEL_FORMAT", calibrator::MODEL_FORMAT)?;
    Ok(())
}
