//! Python bindings for the segcycle core types and operations.

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use segcycle::ensemble::{self, PseudoLabelConfig, Strategy};
use segcycle::image::Image;
use segcycle::metrics;
use segcycle::train::{self, ModelParams, SoftPrediction};
use segcycle::{io, tta, ClassMapping, Error, LabelMap, ProbMap};

fn to_py(err: Error) -> PyErr {
    match err.root() {
        Error::Io(_) => PyOSError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for segcycle::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Per-pixel class probabilities, channel-major float32.
#[pyclass(name = "ProbMap", module = "segcycle_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyProbMap {
    inner: ProbMap,
}

#[pymethods]
impl PyProbMap {
    #[new]
    fn new(height: usize, width: usize, num_classes: usize, data: Vec<f32>) -> PyResult<Self> {
        Ok(Self {
            inner: ProbMap::new(height, width, num_classes, data).py()?,
        })
    }

    #[staticmethod]
    fn uniform(height: usize, width: usize, num_classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ProbMap::uniform(height, width, num_classes).py()?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_prob_map(&path).py()?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_prob_map(data).py()?,
        })
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_prob_map(&path, &self.inner).py()
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let mut buf = Vec::new();
        io::write_prob_map(&self.inner, &mut buf).py()?;
        Ok(PyBytes::new(py, &buf))
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn data(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    /// Probability of `class` at row `y`, column `x`.
    fn get(&self, class: usize, y: usize, x: usize) -> PyResult<f32> {
        if class >= self.inner.num_classes() || y >= self.inner.height() || x >= self.inner.width() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(class, y, x))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "ProbMap({}x{}, {} classes)",
            self.inner.height(),
            self.inner.width(),
            self.inner.num_classes()
        )
    }
}

/// Hard class ids, row-major uint8; 255 means ignore.
#[pyclass(name = "LabelMap", module = "segcycle_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyLabelMap {
    inner: LabelMap,
}

#[pymethods]
impl PyLabelMap {
    #[new]
    fn new(height: usize, width: usize, data: Vec<u8>) -> PyResult<Self> {
        Ok(Self {
            inner: LabelMap::new(height, width, data).py()?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_label_map(&path).py()?,
        })
    }

    fn write(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::save_label_map(&path, &self.inner).py()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn data(&self) -> Vec<u8> {
        self.inner.data().to_vec()
    }

    /// Fraction of pixels that are not ignore.
    fn coverage(&self) -> f64 {
        self.inner.coverage()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("LabelMap({}x{})", self.inner.height(), self.inner.width())
    }
}

#[pyclass(name = "ConfusionMatrix", module = "segcycle_py")]
struct PyConfusionMatrix {
    inner: metrics::ConfusionMatrix,
}

#[pymethods]
impl PyConfusionMatrix {
    #[new]
    #[pyo3(signature = (class_count, counts=None))]
    fn new(class_count: usize, counts: Option<Vec<u64>>) -> PyResult<Self> {
        let inner = match counts {
            Some(c) => metrics::ConfusionMatrix::from_counts(class_count, c),
            None => metrics::ConfusionMatrix::new(class_count),
        };
        Ok(Self { inner: inner.py()? })
    }

    fn accumulate(&mut self, pred: &PyLabelMap, gt: &PyLabelMap) -> PyResult<()> {
        self.inner.accumulate(&pred.inner, &gt.inner).py()
    }

    fn merge(&self, other: &PyConfusionMatrix) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.merge(&other.inner).py()?,
        })
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    #[getter]
    fn abstained(&self) -> u64 {
        self.inner.abstained()
    }

    fn miou(&self) -> PyResult<f64> {
        self.inner.miou().py()
    }

    fn weighted_iou(&self) -> PyResult<f64> {
        self.inner.weighted_iou().py()
    }

    fn per_class_iou(&self) -> Vec<Option<f64>> {
        self.inner.per_class_iou()
    }
}

/// Linear per-pixel segmenter parameters.
#[pyclass(name = "ModelParams", module = "segcycle_py", frozen)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    fn new(class_count: usize, feature_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: ModelParams::new(class_count, feature_dim, weights, bias).py()?,
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let file = std::fs::File::open(&path).map_err(|e| to_py(e.into()))?;
        Ok(Self {
            inner: train::read_params(file).py()?,
        })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        io::write_atomic(&path, |f| train::write_params(&self.inner, f)).py()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    #[getter]
    fn bias(&self) -> Vec<f64> {
        self.inner.bias().to_vec()
    }

    /// Segments an RGB frame given as channel-major floats in [0, 1].
    fn segment(&self, height: usize, width: usize, rgb: Vec<f32>) -> PyResult<PyProbMap> {
        let img = Image::new(height, width, rgb).py()?;
        Ok(PyProbMap {
            inner: tta::Segmenter::segment(&self.inner, &img).py()?,
        })
    }

    /// Multi-scale / flip averaged segmentation.
    #[pyo3(signature = (height, width, rgb, scales=None, flip=true))]
    fn segment_tta(
        &self,
        height: usize,
        width: usize,
        rgb: Vec<f32>,
        scales: Option<Vec<String>>,
        flip: bool,
    ) -> PyResult<PyProbMap> {
        let img = Image::new(height, width, rgb).py()?;
        let scales = match scales {
            Some(s) => s.iter().map(|s| s.parse()).collect::<Result<_, _>>().py()?,
            None => tta::default_scales(),
        };
        let cfg = tta::TtaConfig {
            scales,
            flip,
            base_size: None,
        };
        Ok(PyProbMap {
            inner: tta::tta_aggregate(&self.inner, &img, &cfg).py()?,
        })
    }
}

#[pyfunction]
#[pyo3(signature = (maps, strategy="mean"))]
fn ensemble_probs(maps: Vec<PyProbMap>, strategy: &str) -> PyResult<PyProbMap> {
    let strategy: Strategy = strategy.parse().py()?;
    let maps: Vec<ProbMap> = maps.into_iter().map(|m| m.inner).collect();
    Ok(PyProbMap {
        inner: ensemble::ensemble(&maps, strategy).py()?,
    })
}

#[pyfunction]
fn argmax_label(pm: &PyProbMap) -> PyLabelMap {
    PyLabelMap {
        inner: ensemble::argmax_label(&pm.inner),
    }
}

#[pyfunction]
#[pyo3(signature = (pm, threshold=0.4))]
fn pseudo_label(pm: &PyProbMap, threshold: f64) -> PyResult<PyLabelMap> {
    let cfg = PseudoLabelConfig::new(threshold).py()?;
    Ok(PyLabelMap {
        inner: ensemble::pseudo_label(&pm.inner, &cfg),
    })
}

/// Remaps labels through `{source: target}`; unmapped sources become 255.
#[pyfunction]
fn remap_labels(
    lm: &PyLabelMap,
    mapping: std::collections::BTreeMap<u8, u8>,
    source_class_count: usize,
) -> PyResult<PyLabelMap> {
    let mut m = ClassMapping::new(source_class_count).py()?;
    for (s, t) in mapping {
        m.insert(s, t).py()?;
    }
    Ok(PyLabelMap {
        inner: ensemble::remap_labels(&lm.inner, &m).py()?,
    })
}

#[pyfunction]
fn resize_prob(pm: &PyProbMap, out_h: usize, out_w: usize) -> PyResult<PyProbMap> {
    Ok(PyProbMap {
        inner: tta::resize_prob(&pm.inner, out_h, out_w).py()?,
    })
}

#[pyfunction]
fn hflip_prob(pm: &PyProbMap) -> PyProbMap {
    PyProbMap {
        inner: tta::hflip_prob(&pm.inner),
    }
}

#[pyfunction]
fn video_consistency(preds: Vec<PyLabelMap>, gts: Vec<PyLabelMap>, n: usize) -> PyResult<f64> {
    let preds: Vec<LabelMap> = preds.into_iter().map(|m| m.inner).collect();
    let gts: Vec<LabelMap> = gts.into_iter().map(|m| m.inner).collect();
    metrics::video_consistency(&preds, &gts, n).py()
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> Vec<f64> {
    train::softmax(&logits)
}

/// Joint CE + Dice loss over channel-major probabilities; returns
/// `(loss, gradient wrt logits)`.
#[pyfunction]
#[pyo3(signature = (probs, gt, ce_weight=1.0, dice_weight=1.0))]
fn joint_loss(
    probs: &PyProbMap,
    gt: &PyLabelMap,
    ce_weight: f64,
    dice_weight: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let p = SoftPrediction::from(&probs.inner);
    let w = train::LossWeights {
        ce: ce_weight,
        dice: dice_weight,
    };
    let out = train::joint_loss(&p, &gt.inner, w).py()?;
    Ok((out.loss, out.grad))
}

#[pymodule]
pub fn segcycle_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProbMap>()?;
    m.add_class::<PyLabelMap>()?;
    m.add_class::<PyConfusionMatrix>()?;
    m.add_class::<PyModelParams>()?;
    m.add_function(wrap_pyfunction!(ensemble_probs, m)?)?;
    m.add_function(wrap_pyfunction!(argmax_label, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_label, m)?)?;
    m.add_function(wrap_pyfunction!(remap_labels, m)?)?;
    m.add_function(wrap_pyfunction!(resize_prob, m)?)?;
    m.add_function(wrap_pyfunction!(hflip_prob, m)?)?;
    m.add_function(wrap_pyfunction!(video_consistency, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(joint_loss, m)?)?;
    m.add("IGNORE", segcycle::IGNORE)?;
    Ok(())
}
