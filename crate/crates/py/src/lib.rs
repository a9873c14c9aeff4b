//! Python bindings: the `dasmon_py` extension module.
//!
//! Exposes the simulator, preprocessing, featurization, model
//! composition/training and the evaluation metrics. Matrices cross
//! the boundary as flat row-major `list[float]` plus a shape tuple so
//! callers can `np.asarray(x).reshape(shape)` without a hard numpy
//! dependency on this side.

use dasmon::dsp;
use dasmon::engine::Graph;
use dasmon::features::{self, FeatureSet};
use dasmon::layers::{self, AttentionWeights, ModelSpec};
use dasmon::sim::{self, EventClass};
use dasmon::train as dtrain;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: dasmon::DasError) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

#[pyclass(name = "SiteConfig")]
#[derive(Clone)]
struct PySiteConfig {
    inner: sim::SiteConfig,
}

#[pymethods]
impl PySiteConfig {
    #[staticmethod]
    fn palacio() -> Self {
        PySiteConfig {
            inner: sim::SiteConfig::palacio(),
        }
    }

    #[staticmethod]
    fn acera() -> Self {
        PySiteConfig {
            inner: sim::SiteConfig::acera(),
        }
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn num_sps(&self) -> usize {
        self.inner.num_sps
    }

    #[getter]
    fn num_lanes(&self) -> usize {
        self.inner.num_lanes
    }

    #[getter]
    fn fs(&self) -> f64 {
        self.inner.fs
    }

    #[setter]
    fn set_background_sigma(&mut self, sigma: f64) {
        self.inner.background_sigma = sigma;
    }

    #[setter]
    fn set_mean_gap_s(&mut self, gap: f64) {
        self.inner.mean_gap_s = gap;
    }

    #[setter]
    fn set_allow_overlap(&mut self, allow: bool) {
        self.inner.allow_overlap = allow;
    }

    fn __repr__(&self) -> String {
        format!(
            "SiteConfig(name='{}', sps={}, lanes={})",
            self.inner.name, self.inner.num_sps, self.inner.num_lanes
        )
    }
}

#[pyclass(name = "StrainMatrix")]
#[derive(Clone)]
struct PyStrainMatrix {
    inner: sim::StrainMatrix,
}

#[pymethods]
impl PyStrainMatrix {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.data.dim()
    }

    #[getter]
    fn fs(&self) -> f64 {
        self.inner.fs
    }

    /// Row-major flattened samples.
    fn data(&self) -> Vec<f64> {
        self.inner.data.iter().cloned().collect()
    }

    fn row(&self, sp: usize) -> PyResult<Vec<f64>> {
        if sp >= self.inner.num_sps() {
            return Err(PyValueError::new_err(format!("SP {sp} out of range")));
        }
        Ok(self.inner.data.row(sp).to_vec())
    }

    fn __repr__(&self) -> String {
        let (s, t) = self.inner.data.dim();
        format!("StrainMatrix(sps={s}, samples={t}, fs={})", self.inner.fs)
    }
}

#[pyclass(name = "EventAnnotation")]
#[derive(Clone)]
struct PyAnnotation {
    inner: sim::EventAnnotation,
}

#[pymethods]
impl PyAnnotation {
    #[getter]
    fn label(&self) -> &'static str {
        self.inner.class.name()
    }

    #[getter]
    fn start_s(&self) -> f64 {
        self.inner.start_s
    }

    #[getter]
    fn end_s(&self) -> f64 {
        self.inner.end_s
    }

    #[getter]
    fn lane(&self) -> usize {
        self.inner.lane
    }

    fn __repr__(&self) -> String {
        format!(
            "EventAnnotation({} {:.2}-{:.2}s lane {})",
            self.inner.class.name(),
            self.inner.start_s,
            self.inner.end_s,
            self.inner.lane
        )
    }
}

#[pyclass(name = "FeatureSequence")]
#[derive(Clone)]
struct PyFeatureSequence {
    inner: features::FeatureSequence,
}

#[pymethods]
impl PyFeatureSequence {
    #[getter]
    fn segment_id(&self) -> usize {
        self.inner.segment_id
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.features.dim()
    }

    fn features(&self) -> Vec<f64> {
        self.inner.features.iter().cloned().collect()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels.iter().map(|l| l.index() as u8).collect()
    }

    fn __repr__(&self) -> String {
        let (t, d) = self.inner.features.dim();
        format!("FeatureSequence(id={}, T={t}, D={d})", self.inner.segment_id)
    }
}

#[pyclass(name = "FeatureStore")]
struct PyFeatureStore {
    inner: features::FeatureStore,
}

#[pymethods]
impl PyFeatureStore {
    #[getter]
    fn num_sps(&self) -> usize {
        self.inner.num_sps()
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.inner.num_frames()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels.iter().map(|l| l.index() as u8).collect()
    }

    /// Packed segments around `target`; `deltas` selects the
    /// derivative-augmented 324-wide variant over the 108-wide base.
    #[pyo3(signature = (target=None, deltas=true, segment_s=90.0))]
    fn segments(
        &self,
        target: Option<usize>,
        deltas: bool,
        segment_s: f64,
    ) -> PyResult<Vec<PyFeatureSequence>> {
        let target = target.unwrap_or_else(|| self.inner.center_sp());
        let set = if deltas {
            FeatureSet::WithDeltas
        } else {
            FeatureSet::Base
        };
        let segs = self
            .inner
            .segments(target, set, segment_s)
            .map_err(to_py_err)?;
        Ok(segs
            .into_iter()
            .map(|inner| PyFeatureSequence { inner })
            .collect())
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: layers::Model,
}

#[pymethods]
impl PyModel {
    /// Compose and initialize a model.
    #[staticmethod]
    #[pyo3(signature = (arch, input_dim, hidden, layers=1, dropout=0.0, d_k=None, seed=0))]
    fn compose(
        arch: &str,
        input_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        d_k: Option<usize>,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ModelSpec {
            arch: arch.to_string(),
            input_dim,
            hidden,
            layers,
            dropout,
            d_k,
            num_classes: 3,
            residual: false,
        };
        Ok(PyModel {
            inner: layers::compose(&spec, seed).map_err(to_py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyModel {
            inner: dasmon::io::read_model(std::path::Path::new(path)).map_err(to_py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        dasmon::io::write_model(std::path::Path::new(path), &self.inner).map_err(to_py_err)
    }

    #[getter]
    fn arch(&self) -> String {
        self.inner.spec.arch.clone()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.spec.input_dim
    }

    fn count_params(&self) -> usize {
        self.inner.count_params()
    }

    /// Frame probabilities (flat T×3) and argmax predictions.
    fn predict(&self, seq: &PyFeatureSequence) -> PyResult<(Vec<f64>, Vec<u8>)> {
        let (probs, preds) = self.inner.predict(&seq.inner.features).map_err(to_py_err)?;
        Ok((
            probs.iter().cloned().collect(),
            preds.into_iter().map(|p| p as u8).collect(),
        ))
    }

    /// Attention weights per stage: list of ("temporal", T, flat T×T)
    /// or ("spatial", T, flat T×9) tuples.
    fn attention(&self, seq: &PyFeatureSequence) -> PyResult<Vec<(String, usize, Vec<f64>)>> {
        let mut g = Graph::new();
        let pass = self
            .inner
            .forward(&mut g, &seq.inner.features, true)
            .map_err(to_py_err)?;
        let mut out = Vec::new();
        for trace in pass.attention {
            match trace.weights {
                AttentionWeights::Temporal(a) => {
                    out.push((
                        "temporal".to_string(),
                        a.nrows(),
                        a.iter().cloned().collect(),
                    ));
                }
                AttentionWeights::Spatial(frames) => {
                    let t = frames.len();
                    let flat: Vec<f64> = frames
                        .iter()
                        .flat_map(|m| m.iter().cloned().collect::<Vec<f64>>())
                        .collect();
                    out.push(("spatial".to_string(), t, flat));
                }
            }
        }
        Ok(out)
    }
}

/// Generate a synthetic scene; returns the strain matrix and the
/// ground-truth annotations.
#[pyfunction]
fn simulate_scene(
    site: &PySiteConfig,
    duration_s: f64,
    seed: u64,
) -> PyResult<(PyStrainMatrix, Vec<PyAnnotation>)> {
    let (m, anns) = sim::generate_scene(&site.inner, duration_s, seed).map_err(to_py_err)?;
    Ok((
        PyStrainMatrix { inner: m },
        anns.into_iter().map(|inner| PyAnnotation { inner }).collect(),
    ))
}

/// Detrend + zero-phase band-pass every SP row.
#[pyfunction]
#[pyo3(signature = (matrix, lo=0.1, hi=30.0))]
fn preprocess(matrix: &PyStrainMatrix, lo: f64, hi: f64) -> PyResult<PyStrainMatrix> {
    Ok(PyStrainMatrix {
        inner: dsp::preprocess_matrix(&matrix.inner, lo, hi).map_err(to_py_err)?,
    })
}

/// Featurize a (preprocessed) scene into a per-SP feature store.
#[pyfunction]
#[pyo3(signature = (matrix, annotations, win_s=2.0, shift_s=0.5))]
fn build_features(
    matrix: &PyStrainMatrix,
    annotations: Vec<PyAnnotation>,
    win_s: f64,
    shift_s: f64,
) -> PyResult<PyFeatureStore> {
    let grid = dsp::WindowGrid::new(win_s, shift_s, matrix.inner.fs).map_err(to_py_err)?;
    let anns: Vec<sim::EventAnnotation> = annotations.into_iter().map(|a| a.inner).collect();
    Ok(PyFeatureStore {
        inner: features::FeatureStore::build("py", &matrix.inner, &anns, &grid)
            .map_err(to_py_err)?,
    })
}

/// Train one architecture on the given segments (the trailing
/// `val_count` segments are the holdout).
#[pyfunction]
#[pyo3(signature = (arch, segments, val_count, hidden=64, layers=1, lr=1e-3, dropout=0.1, l2=1e-5, epochs=20, patience=10, batch=8, seed=0, target_acc=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    arch: &str,
    segments: Vec<PyFeatureSequence>,
    val_count: usize,
    hidden: usize,
    layers: usize,
    lr: f64,
    dropout: f64,
    l2: f64,
    epochs: usize,
    patience: usize,
    batch: usize,
    seed: u64,
    target_acc: Option<f64>,
) -> PyResult<(PyModel, Vec<(usize, f64, f64, f64)>)> {
    if val_count == 0 || val_count >= segments.len() {
        return Err(PyValueError::new_err(
            "val_count must leave at least one training segment",
        ));
    }
    let config = dtrain::TrainConfig {
        lr,
        layers,
        hidden,
        dropout,
        l2,
        epochs_max: epochs,
        patience,
        batch_segments: batch,
        seed,
        stop_at_val_acc: target_acc,
    };
    let split = segments.len() - val_count;
    let spec = config.to_spec(arch, segments[0].inner.dim());
    let train_refs: Vec<&features::FeatureSequence> =
        segments[..split].iter().map(|s| &s.inner).collect();
    let val_refs: Vec<&features::FeatureSequence> =
        segments[split..].iter().map(|s| &s.inner).collect();
    let (model, history) =
        dtrain::train_model(&spec, &train_refs, &val_refs, &config).map_err(to_py_err)?;
    Ok((
        PyModel { inner: model },
        history
            .epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.val_loss, e.val_acc))
            .collect(),
    ))
}

/// Frame-level (accuracy %, weighted F1 %) of predictions vs truths.
#[pyfunction]
fn frame_metrics(preds: Vec<Vec<usize>>, truths: Vec<Vec<usize>>) -> PyResult<(f64, f64)> {
    let cm = dasmon::eval::confusion(&preds, &truths).map_err(to_py_err)?;
    dasmon::eval::metrics(&cm).map_err(to_py_err)
}

#[pyfunction]
fn ri_acc(acc_model: f64, acc_base: f64) -> PyResult<f64> {
    dasmon::eval::ri_acc(acc_model, acc_base).map_err(to_py_err)
}

#[pyfunction]
fn rpi(params_model: f64, params_base: f64) -> PyResult<f64> {
    dasmon::eval::rpi(params_model, params_base).map_err(to_py_err)
}

/// The 36 base feature column names.
#[pyfunction]
fn feature_layout() -> Vec<String> {
    features::FEATURE_LAYOUT.iter().map(|s| s.to_string()).collect()
}

/// The twelve supported architecture strings.
#[pyfunction]
fn architectures() -> Vec<String> {
    layers::ARCHITECTURES.iter().map(|s| s.to_string()).collect()
}

/// Hamming window of length n.
#[pyfunction]
fn hamming(n: usize) -> PyResult<Vec<f64>> {
    dsp::hamming(n).map_err(to_py_err)
}

/// Zero-phase order-4 Butterworth band-pass.
#[pyfunction]
fn bandpass(x: Vec<f64>, fs: f64, lo: f64, hi: f64) -> PyResult<Vec<f64>> {
    dsp::bandpass(&x, fs, lo, hi).map_err(to_py_err)
}

/// The 36 features of one Hamming-weighted window.
#[pyfunction]
fn featurize_window(samples: Vec<f64>, fs: f64) -> PyResult<Vec<f64>> {
    features::featurize_samples(&samples, fs).map_err(to_py_err)
}

/// Class names in label order.
#[pyfunction]
fn class_names() -> Vec<&'static str> {
    EventClass::ALL.iter().map(|c| c.name()).collect()
}

#[pymodule]
fn dasmon_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySiteConfig>()?;
    m.add_class::<PyStrainMatrix>()?;
    m.add_class::<PyAnnotation>()?;
    m.add_class::<PyFeatureSequence>()?;
    m.add_class::<PyFeatureStore>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(build_features, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(frame_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(ri_acc, m)?)?;
    m.add_function(wrap_pyfunction!(rpi, m)?)?;
    m.add_function(wrap_pyfunction!(feature_layout, m)?)?;
    m.add_function(wrap_pyfunction!(architectures, m)?)?;
    m.add_function(wrap_pyfunction!(hamming, m)?)?;
    m.add_function(wrap_pyfunction!(bandpass, m)?)?;
    m.add_function(wrap_pyfunction!(featurize_window, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add("__version__", dasmon::VERSION)?;
    Ok(())
}
