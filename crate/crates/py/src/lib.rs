//! Python bindings for the toolkit: label algebra as plain string functions,
//! plus `Corpus` and `Model` classes that wrap the corresponding Rust types.
//! Build the cdylib and import the produced library as `osca_py`; the
//! `python/smoke_test.py` script in the repository does exactly that.
//!
//! Structured results (metric reports, sweep rows, annotations) cross the
//! boundary as plain dicts and lists so no Python-side schema is needed.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use osca::annotation::{annotate_video, AuditReport};
use osca::corpus::{generate_synthetic, load_corpus, save_corpus, split_corpus, Split, SynthConfig};
use osca::labels::{FrameStateLabel, StateChangeClass, NUM_CLASSES};
use osca::model::{
    load_checkpoint, save_checkpoint, EncoderConfig, EpochStats, ModelConfig, ModelParams,
    StreamSet, TrainConfig,
};
use osca::recognizers::RecognizerSpec;
use osca::OscaError;

fn to_py_err(e: OscaError) -> PyErr {
    match e.category() {
        "io" => PyOSError::new_err(e.to_string()),
        "train" => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<Py<PyAny>> {
    use serde_json::Value;
    match v {
        Value::Null => Ok(py.None()),
        Value::Bool(b) => b.into_py_any(py),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        Value::String(s) => s.into_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, val) in map {
                dict.set_item(key, json_to_py(py, val)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn parse_split(split: Option<&str>) -> PyResult<Option<Split>> {
    match split {
        None => Ok(None),
        Some("all") => Ok(None),
        Some(s) => s.parse().map(Some).map_err(to_py_err),
    }
}

fn priors_array(values: Vec<f64>) -> PyResult<[f64; NUM_CLASSES]> {
    values.try_into().map_err(|v: Vec<f64>| {
        PyValueError::new_err(format!("class priors need {NUM_CLASSES} entries, got {}", v.len()))
    })
}

/// Composes pre and post frame predictions into a state-change class name.
#[pyfunction]
fn compose(pre: &str, post: &str) -> PyResult<String> {
    let a: FrameStateLabel = pre.parse().map_err(to_py_err)?;
    let b: FrameStateLabel = post.parse().map_err(to_py_err)?;
    Ok(osca::recognizers::compose_state_change(a, b).to_string())
}

/// The inverse partner of a state-change class, or None.
#[pyfunction]
fn inverse(class: &str) -> PyResult<Option<String>> {
    let c: StateChangeClass = class.parse().map_err(to_py_err)?;
    Ok(osca::labels::inverse_of(c).map(|i| i.to_string()))
}

/// Whether two frame labels show the object in the same underlying state.
#[pyfunction]
fn same_state(a: &str, b: &str) -> PyResult<bool> {
    let x: FrameStateLabel = a.parse().map_err(to_py_err)?;
    let y: FrameStateLabel = b.parse().map_err(to_py_err)?;
    Ok(osca::labels::same_state(x, y))
}

/// The nine state-change class names in canonical order.
#[pyfunction]
fn classes() -> Vec<String> {
    StateChangeClass::ALL.iter().map(|c| c.to_string()).collect()
}

/// The sixteen frame-level label names.
#[pyfunction]
fn frame_labels() -> Vec<String> {
    FrameStateLabel::all().iter().map(|l| l.to_string()).collect()
}

/// An activity corpus held in memory.
#[pyclass]
struct Corpus {
    inner: osca::corpus::Corpus,
}

#[pymethods]
impl Corpus {
    /// Draws a synthetic corpus. Priors and transition rows default to
    /// uniform; pass `class_priors` (9 floats) or `transition_matrix`
    /// (9 rows of 9) to shape the label process.
    #[staticmethod]
    #[pyo3(signature = (
        num_videos=100, segments_per_video=(5, 15), verbs_per_state=4, nouns_per_state=4,
        feature_dim=256, steps_per_segment=8, feature_informativeness=0.5, seed=0,
        class_priors=None, transition_matrix=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        num_videos: usize,
        segments_per_video: (usize, usize),
        verbs_per_state: usize,
        nouns_per_state: usize,
        feature_dim: usize,
        steps_per_segment: usize,
        feature_informativeness: f64,
        seed: u64,
        class_priors: Option<Vec<f64>>,
        transition_matrix: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let uniform = 1.0 / NUM_CLASSES as f64;
        let priors = match class_priors {
            Some(v) => priors_array(v)?,
            None => [uniform; NUM_CLASSES],
        };
        let transitions = match transition_matrix {
            Some(rows) => {
                if rows.len() != NUM_CLASSES {
                    return Err(PyValueError::new_err(format!(
                        "transition matrix needs {NUM_CLASSES} rows, got {}",
                        rows.len()
                    )));
                }
                let mut m = [[0.0; NUM_CLASSES]; NUM_CLASSES];
                for (target, row) in m.iter_mut().zip(rows) {
                    *target = priors_array(row)?;
                }
                m
            }
            None => [[uniform; NUM_CLASSES]; NUM_CLASSES],
        };
        let cfg = SynthConfig {
            num_videos,
            segments_per_video,
            class_priors: priors,
            transition_matrix: transitions,
            verbs_per_state,
            nouns_per_state,
            feature_dim,
            steps_per_segment,
            feature_informativeness,
            seed,
        };
        Ok(Corpus { inner: generate_synthetic(&cfg).map_err(to_py_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus { inner: load_corpus(&path).map_err(to_py_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_corpus(&self.inner, &path).map_err(to_py_err)
    }

    /// Assigns every video to train, val or test. Ratios must sum to one.
    #[pyo3(signature = (train=0.7, val=0.15, test=0.15, seed=0))]
    fn split(&mut self, train: f64, val: f64, test: f64, seed: u64) -> PyResult<()> {
        split_corpus(&mut self.inner, (train, val, test), seed).map_err(to_py_err)
    }

    #[getter]
    fn num_videos(&self) -> usize {
        self.inner.videos.len()
    }

    #[getter]
    fn num_segments(&self) -> usize {
        self.inner.num_segments()
    }

    #[getter]
    fn feature_dim(&self) -> Option<usize> {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_verbs(&self) -> usize {
        self.inner.vocabulary.num_verbs()
    }

    #[getter]
    fn num_nouns(&self) -> usize {
        self.inner.vocabulary.num_nouns()
    }

    fn video_ids(&self) -> Vec<String> {
        self.inner.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    /// Empirical target distribution of the decision samples in a split
    /// (\"train\", \"val\", \"test\" or \"all\").
    #[pyo3(signature = (split=None))]
    fn class_priors(&self, split: Option<&str>) -> PyResult<Vec<f64>> {
        let priors = osca::corpus::class_priors(&self.inner, parse_split(split)?)
            .map_err(to_py_err)?;
        Ok(priors.to_vec())
    }

    /// Counts of consecutive state-change pairs, row = from, column = to.
    #[pyo3(signature = (split=None))]
    fn transition_counts(&self, split: Option<&str>) -> PyResult<Vec<Vec<u64>>> {
        let matrix = osca::eval::transition_matrix(&self.inner, parse_split(split)?);
        Ok(matrix.counts.iter().map(|row| row.to_vec()).collect())
    }

    /// Runs the annotation pipeline over every video. Returns the list of
    /// per-segment annotations (each carrying its video id) and the merged
    /// audit counts.
    fn annotate(&self, py: Python<'_>) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
        let mut rows = Vec::new();
        let mut merged = AuditReport::default();
        for video in &self.inner.videos {
            let (annotations, audit) = annotate_video(video).map_err(to_py_err)?;
            merged.merge(&audit);
            for annotation in annotations {
                let mut value = serde_json::to_value(&annotation)
                    .map_err(|e| PyValueError::new_err(e.to_string()))?;
                value
                    .as_object_mut()
                    .expect("annotations serialize as objects")
                    .insert("video_id".into(), video.video_id.clone().into());
                rows.push(value);
            }
        }
        let annotations = json_to_py(py, &serde_json::Value::Array(rows))?;
        let audit = serialize_to_py(py, &merged)?;
        Ok((annotations, audit))
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus(videos={}, segments={}, feature_dim={:?})",
            self.inner.videos.len(),
            self.inner.num_segments(),
            self.inner.feature_dim()
        )
    }
}

fn history_to_py(py: Python<'_>, history: &[EpochStats]) -> PyResult<Py<PyAny>> {
    let list = PyList::empty(py);
    for row in history {
        let dict = PyDict::new(py);
        dict.set_item("epoch", row.epoch)?;
        dict.set_item("train_loss", row.train_loss)?;
        dict.set_item("val_loss", row.val_loss)?;
        dict.set_item("val_top1", row.val_top1)?;
        dict.set_item("val_top5", row.val_top5)?;
        dict.set_item("val_f1", row.val_f1)?;
        list.append(dict)?;
    }
    list.into_py_any(py)
}

/// A trained anticipation model plus the feature window it was built for.
#[pyclass]
struct Model {
    params: ModelParams,
    window: usize,
}

#[pymethods]
impl Model {
    /// Trains on the corpus train split, selecting the best epoch by
    /// validation loss. Returns the model and the per-epoch history as a
    /// list of dicts (epoch 0 is the untrained measurement).
    #[staticmethod]
    #[pyo3(signature = (
        corpus, streams="vid,action,state", hidden_size=64, embedding_dim=32,
        mlp=None, fusion_mlp=None, window=1, batch_size=32, learning_rate=1e-3,
        epochs=20, seed=0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        corpus: &Corpus,
        streams: &str,
        hidden_size: usize,
        embedding_dim: usize,
        mlp: Option<Vec<usize>>,
        fusion_mlp: Option<Vec<usize>>,
        window: usize,
        batch_size: usize,
        learning_rate: f64,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(Self, Py<PyAny>)> {
        let streams: StreamSet = streams.parse().map_err(to_py_err)?;
        let encoder = EncoderConfig {
            hidden_size,
            mlp_sizes: mlp.unwrap_or_else(|| vec![hidden_size]),
            embedding_dim,
        };
        let model_cfg = ModelConfig {
            streams,
            visual: encoder.clone(),
            action: encoder.clone(),
            state: encoder,
            fusion_mlp: fusion_mlp.unwrap_or_else(|| vec![2 * hidden_size, NUM_CLASSES]),
            feature_dim: corpus.inner.feature_dim().unwrap_or(1),
            num_verbs: corpus.inner.vocabulary.num_verbs(),
            num_nouns: corpus.inner.vocabulary.num_nouns(),
        };
        let train_cfg = TrainConfig { batch_size, learning_rate, epochs, seed };
        let train_samples =
            corpus.inner.decision_samples(window, Some(Split::Train)).map_err(to_py_err)?;
        let val_samples =
            corpus.inner.decision_samples(window, Some(Split::Val)).map_err(to_py_err)?;
        let (params, history) = osca::model::train(
            &train_samples,
            &val_samples,
            &model_cfg,
            &train_cfg,
            &corpus.inner.vocabulary.fingerprint(),
        )
        .map_err(to_py_err)?;
        Ok((Model { params, window }, history_to_py(py, &history)?))
    }

    /// Scores the model on a split. The recognizer spec is the same string
    /// format the command line takes: \"oracle\", \"noisy(a,s,seed)\" or
    /// \"composed(p,q,seed)\".
    #[pyo3(signature = (corpus, split="test", recognizer="oracle"))]
    fn evaluate(
        &self,
        py: Python<'_>,
        corpus: &Corpus,
        split: Option<&str>,
        recognizer: &str,
    ) -> PyResult<Py<PyAny>> {
        let spec: RecognizerSpec = recognizer.parse().map_err(to_py_err)?;
        let report = osca::eval::evaluate(
            &corpus.inner,
            parse_split(split)?,
            &self.params,
            self.window,
            &spec,
        )
        .map_err(to_py_err)?;
        serialize_to_py(py, &report)
    }

    /// Evaluates under token corruption at each (action, state) noise level,
    /// aggregated over the given seeds. Returns one dict per level.
    #[pyo3(signature = (corpus, split="test", levels=None, seeds=None))]
    fn noise_sweep(
        &self,
        py: Python<'_>,
        corpus: &Corpus,
        split: Option<&str>,
        levels: Option<Vec<(f64, f64)>>,
        seeds: Option<Vec<u64>>,
    ) -> PyResult<Py<PyAny>> {
        let levels = levels
            .unwrap_or_else(|| vec![(0.0, 0.0), (0.25, 0.25), (0.5, 0.5), (0.75, 0.75)]);
        let seeds = seeds.unwrap_or_else(|| vec![0, 1, 2]);
        let rows = osca::eval::noise_sweep(
            &corpus.inner,
            parse_split(split)?,
            &self.params,
            self.window,
            &levels,
            &seeds,
        )
        .map_err(to_py_err)?;
        serialize_to_py(py, &rows)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&path, &self.params).map_err(to_py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, window=1))]
    fn load(path: PathBuf, window: usize) -> PyResult<Self> {
        Ok(Model { params: load_checkpoint(&path).map_err(to_py_err)?, window })
    }

    #[getter]
    fn streams(&self) -> String {
        self.params.config().streams.to_string()
    }

    #[getter]
    fn window(&self) -> usize {
        self.window
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.params.seed()
    }

    fn __repr__(&self) -> String {
        format!("Model(streams=\"{}\", window={})", self.params.config().streams, self.window)
    }
}

#[pymodule]
fn osca_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NUM_CLASSES", NUM_CLASSES)?;
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(compose, m)?)?;
    m.add_function(wrap_pyfunction!(inverse, m)?)?;
    m.add_function(wrap_pyfunction!(same_state, m)?)?;
    m.add_function(wrap_pyfunction!(classes, m)?)?;
    m.add_function(wrap_pyfunction!(frame_labels, m)?)?;
    Ok(())
}
