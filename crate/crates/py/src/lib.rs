//! Python bindings: model construction and embedding, checkpoint loading,
//! synthetic data, training, evaluation, and the standalone loss and AUC
//! functions.
//!
//! Configuration crosses the boundary as plain dicts with the same keys as
//! the TOML run config; omitted keys take their defaults.

use std::path::PathBuf;

use fingerdiff_core::dataset::{directory_digest, generate_synthetic_dataset, load_manifest, SynthConfig, VideoRecord};
use fingerdiff_core::error::Category;
use fingerdiff_core::evaluation::{self, embed_video, EvalConfig, Recipe};
use fingerdiff_core::model::{self, count_parameters, Embedding, ModelConfig};
use fingerdiff_core::objective::{supcon_with_grad, SupConConfig};
use fingerdiff_core::training::{self, load_checkpoint, TrainConfig};
use fingerdiff_core::Error;
use ndarray::{Array4, Axis};
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray2, PyReadonlyArrayDyn};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err.category() {
        Category::Config | Category::Data => PyValueError::new_err(msg),
        Category::Numeric => PyArithmeticError::new_err(msg),
        Category::Io => PyOSError::new_err(msg),
    }
}

fn from_dict<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(obj) = obj.filter(|o| !o.is_none()) else {
        return Ok(T::default());
    };
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(format!("invalid configuration: {e}")))
}

fn to_dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn embedding_array<'py>(py: Python<'py>, e: Embedding) -> Bound<'py, PyArray1<f32>> {
    e.0.into_pyarray(py)
}

/// Accepts `(T, H, W)` or `(T, 1, H, W)` luma in `[0, 1]`.
fn clip_from_array(clip: PyReadonlyArrayDyn<'_, f32>) -> PyResult<Array4<f32>> {
    let view = clip.as_array();
    let clip = match view.ndim() {
        3 => view.insert_axis(Axis(1)).to_owned(),
        4 => view.to_owned(),
        n => return Err(PyValueError::new_err(format!("clip must have 3 or 4 dimensions, got {n}"))),
    };
    clip.into_dimensionality().map_err(|e| PyValueError::new_err(e.to_string()))
}

/// The embedding network with `float32` weights.
#[pyclass(unsendable, module = "fingerdiff")]
struct Model {
    inner: model::Model<f32>,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = from_dict(py, config)?;
        let mut inner = model::Model::new(cfg, seed).map_err(to_py)?;
        inner.set_train(false);
        Ok(Self { inner })
    }

    /// Restores a checkpoint directory written by training.
    #[staticmethod]
    fn load(checkpoint: PathBuf) -> PyResult<Self> {
        let (mut inner, _) = load_checkpoint(&checkpoint, None).map_err(to_py)?;
        inner.set_train(false);
        Ok(Self { inner })
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, self.inner.config())
    }

    #[getter]
    fn num_params(&mut self) -> usize {
        self.inner.parameter_count().total
    }

    fn parameter_count<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_dict(py, &self.inner.parameter_count())
    }

    /// Unit-norm embedding of a clip already resized to `frame_size`.
    fn embed<'py>(&mut self, py: Python<'py>, clip: PyReadonlyArrayDyn<'_, f32>) -> PyResult<Bound<'py, PyArray1<f32>>> {
        let clip = clip_from_array(clip)?;
        let e = self.inner.embed(clip.view()).map_err(to_py)?;
        Ok(embedding_array(py, e))
    }

    /// Embeds the centre clip of a directory of frame images.
    fn embed_video<'py>(&mut self, py: Python<'py>, video_dir: PathBuf) -> PyResult<Bound<'py, PyArray1<f32>>> {
        let record = VideoRecord::from_frame_dir(&video_dir).map_err(to_py)?;
        let e = embed_video(&record, &mut self.inner).map_err(to_py)?;
        Ok(embedding_array(py, e))
    }

    fn __repr__(&self) -> String {
        let cfg = self.inner.config();
        format!("Model(condition='{}', clip_length={}, embed_dim={})", cfg.condition, cfg.clip_length, cfg.embed_dim)
    }
}

/// Default model configuration as a dict.
#[pyfunction]
fn default_model_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_dict(py, &ModelConfig::default())
}

/// Closed-form parameter counts for a configuration.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn count_params<'py>(py: Python<'py>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: ModelConfig = from_dict(py, config)?;
    to_dict(py, &count_parameters(&cfg).map_err(to_py)?)
}

/// Supervised contrastive loss and its gradient for a `(B, D)` batch.
#[pyfunction]
#[pyo3(signature = (embeddings, labels, temperature=0.07))]
fn supcon_loss<'py>(
    py: Python<'py>,
    embeddings: PyReadonlyArray2<'_, f64>,
    labels: Vec<i64>,
    temperature: f64,
) -> PyResult<(f64, Bound<'py, PyArray2<f64>>)> {
    let cfg = SupConConfig { temperature, ..SupConConfig::default() };
    let out = supcon_with_grad(embeddings.as_array(), &labels, &cfg).map_err(to_py)?;
    Ok((out.loss, out.grad.into_pyarray(py)))
}

/// Mann-Whitney AUC with ties counted as one half.
#[pyfunction]
fn auc(positives: Vec<f64>, negatives: Vec<f64>) -> PyResult<f64> {
    evaluation::auc(&positives, &negatives).map_err(to_py)
}

/// Cosine-nearest neighbours of every column of a `(C, P)` matrix, as a
/// `(P, k)` list of column indices.
#[pyfunction]
fn cosine_knn(x: PyReadonlyArray2<'_, f64>, k: usize) -> Vec<Vec<usize>> {
    model::cosine_knn(x.as_array(), k).chunks(k.max(1)).map(<[usize]>::to_vec).collect()
}

/// Learning rate after `global_step` optimiser steps.
#[pyfunction]
#[pyo3(signature = (global_step, config=None))]
fn lr_at(py: Python<'_>, global_step: usize, config: Option<&Bound<'_, PyAny>>) -> PyResult<f64> {
    let cfg: TrainConfig = from_dict(py, config)?;
    training::lr_at(global_step, &cfg).map_err(to_py)
}

/// Renders a synthetic dataset and returns a SHA-256 digest of the files
/// written, which depends only on the configuration.
#[pyfunction]
#[pyo3(signature = (out_dir, config=None))]
fn synth_data(py: Python<'_>, out_dir: PathBuf, config: Option<&Bound<'_, PyAny>>) -> PyResult<String> {
    let cfg: SynthConfig = from_dict(py, config)?;
    generate_synthetic_dataset(&cfg, &out_dir).map_err(to_py)?;
    directory_digest(&out_dir).map_err(to_py)
}

/// Trains on a manifest and returns the selected checkpoint path and the
/// per-step losses. `model`, `train` and `objective` are config dicts.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, model=None, train=None, objective=None))]
fn train<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    out_dir: PathBuf,
    model: Option<&Bound<'_, PyAny>>,
    train: Option<&Bound<'_, PyAny>>,
    objective: Option<&Bound<'_, PyAny>>,
) -> PyResult<Bound<'py, PyDict>> {
    let recipe = Recipe {
        model: from_dict(py, model)?,
        train: from_dict(py, train)?,
        objective: from_dict(py, objective)?,
    };
    let manifest = load_manifest(&manifest).map_err(to_py)?;
    let outcome = py
        .detach(|| training::train(&manifest, &recipe.model, &recipe.train, &recipe.objective, &out_dir))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("checkpoint", outcome.selected_checkpoint())?;
    out.set_item("losses", outcome.losses())?;
    out.set_item("metrics", &outcome.metrics_path)?;
    Ok(out)
}

/// Scores the test split of a manifest with a model and returns the report.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &mut Model, manifest: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let manifest = load_manifest(&manifest).map_err(to_py)?;
    let report = evaluation::evaluate(&manifest, &mut model.inner, &EvalConfig::default()).map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
fn fingerdiff(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(default_model_config, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(supcon_loss, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_knn, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(synth_data, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
