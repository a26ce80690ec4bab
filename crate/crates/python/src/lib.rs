//! Python bindings. Tensors cross the boundary as a shape plus a flat
//! column-major list of floats.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::Rng;

use sknn::conv::ConvGeometry;
use sknn::data::{Dataset, SyntheticConfig};
use sknn::gradcheck::{check_layer, DEFAULT_STEP, DEFAULT_TOLERANCE};
use sknn::layers::{DenseConv, DenseFc, Layer, SkConv, SkFc};
use sknn::network::{build_testnet, parse_sketch_specs, Network};
use sknn::rng::stream_rng;
use sknn::suites::Suite;
use sknn::train::TrainConfig;

const INPUT_STREAM: u64 = 0x1_4707;

fn to_py(e: sknn::Error) -> PyErr {
    match e {
        sknn::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "Tensor", module = "sknn_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyTensor {
    inner: sknn::Tensor,
}

impl From<sknn::Tensor> for PyTensor {
    fn from(inner: sknn::Tensor) -> Self {
        PyTensor { inner }
    }
}

#[pymethods]
impl PyTensor {
    /// `data` is in column-major order (first index fastest).
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        sknn::Tensor::new(&shape, data)
            .map(Into::into)
            .map_err(to_py)
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        sknn::Tensor::zeros(&shape).into()
    }

    /// Matrix from a list of rows.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        sknn::Tensor::from_rows(&refs)
            .map(Into::into)
            .map_err(to_py)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        let shape = self.inner.shape();
        if index.len() != shape.len() || index.iter().zip(shape).any(|(i, n)| i >= n) {
            return Err(PyValueError::new_err(format!(
                "index {index:?} out of range for {shape:?}"
            )));
        }
        Ok(self.inner.get(&index))
    }

    fn matmul(&self, other: PyRef<'_, PyTensor>) -> PyResult<Self> {
        self.inner
            .matmul(&other.inner)
            .map(Into::into)
            .map_err(to_py)
    }

    fn transpose(&self) -> PyResult<Self> {
        self.inner.transpose().map(Into::into).map_err(to_py)
    }

    /// 1-based `mode`.
    fn mode_n_product(&self, m: PyRef<'_, PyTensor>, mode: usize) -> PyResult<Self> {
        self.inner
            .mode_n_product(&m.inner, mode)
            .map(Into::into)
            .map_err(to_py)
    }

    fn mat_n(&self, mode: usize) -> PyResult<Self> {
        self.inner.mat_n(mode).map(Into::into).map_err(to_py)
    }

    #[staticmethod]
    fn unmat_n(m: PyRef<'_, PyTensor>, shape: Vec<usize>, mode: usize) -> PyResult<Self> {
        sknn::Tensor::unmat_n(&m.inner, &shape, mode)
            .map(Into::into)
            .map_err(to_py)
    }

    fn max_abs_diff(&self, other: PyRef<'_, PyTensor>) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyclass(name = "SignMatrix", module = "sknn_py")]
pub struct PySignMatrix {
    inner: sknn::SignMatrix,
}

#[pymethods]
impl PySignMatrix {
    #[new]
    fn new(seed: u64, rows: usize, cols: usize) -> PyResult<Self> {
        sknn::SignMatrix::new(seed, rows, cols)
            .map(|inner| PySignMatrix { inner })
            .map_err(to_py)
    }

    fn sign(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.inner.rows() || col >= self.inner.cols() {
            return Err(PyValueError::new_err("sign index out of range"));
        }
        Ok(self.inner.sign(row, col))
    }

    fn materialize(&self) -> PyTensor {
        self.inner.materialize().into()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.rows(), self.inner.cols())
    }
}

/// `U1ᵀ S1 M` for a materialized sign matrix and sketch.
#[pyfunction]
fn left_estimate(
    u1: PyRef<'_, PyTensor>,
    s1: PyRef<'_, PyTensor>,
    m: PyRef<'_, PyTensor>,
) -> PyResult<PyTensor> {
    sknn::sketch::left_estimate(&u1.inner, &s1.inner, &m.inner)
        .map(Into::into)
        .map_err(to_py)
}

/// `S2 U2 M` for a materialized sign matrix and sketch.
#[pyfunction]
fn right_estimate(
    s2: PyRef<'_, PyTensor>,
    u2: PyRef<'_, PyTensor>,
    m: PyRef<'_, PyTensor>,
) -> PyResult<PyTensor> {
    sknn::sketch::right_estimate(&s2.inner, &u2.inner, &m.inner)
        .map(Into::into)
        .map_err(to_py)
}

#[pyclass(name = "Dataset", module = "sknn_py")]
pub struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(images: Vec<PyRef<'_, PyTensor>>, labels: Vec<usize>, classes: usize) -> PyResult<Self> {
        let images = images.iter().map(|t| t.inner.clone()).collect();
        Dataset::new(images, labels, classes)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }

    /// Synthetic prototype-plus-noise images; `split` 0 and 1 share
    /// prototypes but draw independent noise.
    #[staticmethod]
    #[pyo3(signature = (classes, per_class, shape, noise = SyntheticConfig::DEFAULT_NOISE, seed = 0, split = 0))]
    fn synthetic(
        classes: usize,
        per_class: usize,
        shape: [usize; 3],
        noise: f64,
        seed: u64,
        split: u64,
    ) -> PyResult<Self> {
        SyntheticConfig {
            classes,
            per_class,
            shape,
            noise,
            seed,
        }
        .generate(split)
        .map(|inner| PyDataset { inner })
        .map_err(to_py)
    }

    #[staticmethod]
    fn load_idx(images: &str, labels: &str) -> PyResult<Self> {
        sknn::data::load_idx(images, labels)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    #[getter]
    fn classes(&self) -> usize {
        self.inner.classes()
    }

    fn image(&self, i: usize) -> PyResult<PyTensor> {
        self.inner
            .images()
            .get(i)
            .map(|t| t.clone().into())
            .ok_or_else(|| PyValueError::new_err(format!("sample {i} out of range")))
    }
}

#[pyclass(name = "Network", module = "sknn_py")]
pub struct PyNetwork {
    inner: Network,
}

#[pymethods]
impl PyNetwork {
    /// TestNet for `[height, width, channels]` images; `sketch` uses the
    /// `fc1:k=10,l=2;conv2:k=4,l=1` grammar.
    #[staticmethod]
    #[pyo3(signature = (image_shape, classes, sketch = "", seed = 0))]
    fn testnet(image_shape: [usize; 3], classes: usize, sketch: &str, seed: u64) -> PyResult<Self> {
        let specs = parse_sketch_specs(sketch).map_err(to_py)?;
        build_testnet(image_shape, classes, &specs, seed)
            .map(|inner| PyNetwork { inner })
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        sknn::data::load_checkpoint(path)
            .map(|inner| PyNetwork { inner })
            .map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        sknn::data::save_checkpoint(&self.inner, path).map_err(to_py)
    }

    fn forward(&self, input: PyRef<'_, PyTensor>) -> PyResult<PyTensor> {
        self.inner
            .forward(&input.inner)
            .map(Into::into)
            .map_err(to_py)
    }

    fn predict(&self, input: PyRef<'_, PyTensor>) -> PyResult<usize> {
        self.inner.predict(&input.inner).map_err(to_py)
    }

    fn layer_kinds(&self) -> Vec<&'static str> {
        self.inner.layers().iter().map(Layer::kind).collect()
    }

    /// `(weights, biases)` per layer.
    fn param_counts(&self) -> Vec<(usize, usize)> {
        self.inner
            .layers()
            .iter()
            .map(|l| {
                let c = l.param_count();
                (c.weights, c.biases)
            })
            .collect()
    }

    fn compression_rate(&self) -> f64 {
        self.inner.compression_rate()
    }

    /// Replaces layer `index` by a sketch of its current weights.
    fn with_sketched_layer(&self, index: usize, k: usize, ell: usize, seed: u64) -> PyResult<Self> {
        self.inner
            .with_sketched_layer(index, k, ell, seed)
            .map(|inner| PyNetwork { inner })
            .map_err(to_py)
    }

    /// Trains in place and returns one dict per epoch.
    #[pyo3(signature = (train_set, test_set = None, epochs = 10, lr = 0.005, momentum = 0.9, batch = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        train_set: PyRef<'_, PyDataset>,
        test_set: Option<PyRef<'_, PyDataset>>,
        epochs: usize,
        lr: f64,
        momentum: f64,
        batch: usize,
        seed: u64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let cfg = TrainConfig {
            epochs,
            batch,
            lr,
            momentum,
            seed,
            eval_each_epoch: true,
            decay: None,
        };
        let history = sknn::train::train(
            &mut self.inner,
            &train_set.inner,
            test_set.as_ref().map(|t| &t.inner),
            &cfg,
            |_| {},
        )
        .map_err(to_py)?;
        history
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("train_loss", r.train_loss)?;
                d.set_item("test_top1", r.test_top1)?;
                Ok(d)
            })
            .collect()
    }

    fn top1_error(&self, data: PyRef<'_, PyDataset>) -> PyResult<f64> {
        sknn::train::top1_error(&self.inner, &data.inner).map_err(to_py)
    }
}

/// Runs `estimators`, `variance`, `exact` or `conv-equiv`; returns
/// `(check, measured, limit, pass)` rows.
#[pyfunction]
#[pyo3(signature = (suite, trials = sknn::suites::DEFAULT_TRIALS, seed = 0))]
fn verify(suite: &str, trials: usize, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let suite: Suite = suite.parse().map_err(to_py)?;
    let rows = suite.run(trials, seed).map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.check, r.measured, r.limit, r.pass))
        .collect())
}

/// Gradient check of a freshly initialized layer. `dims` is
/// `[in, out]` for fc layers and `[h, w, c, kh, kw, out]` for conv layers;
/// `k = None` selects the dense layer. Returns the largest relative error.
#[pyfunction]
#[pyo3(signature = (kind, dims, k = None, ell = 1, stride = 1, pad = 0, seed = 0, step = DEFAULT_STEP))]
#[allow(clippy::too_many_arguments)]
fn gradcheck(
    kind: &str,
    dims: Vec<usize>,
    k: Option<usize>,
    ell: usize,
    stride: usize,
    pad: usize,
    seed: u64,
    step: f64,
) -> PyResult<f64> {
    let (layer, shape) =
        match (kind, dims.as_slice()) {
            ("fc", &[d2, d1]) => {
                let layer = match k {
                    None => Layer::DenseFc(DenseFc::init(d1, d2, seed)),
                    Some(k) => Layer::SkFc(SkFc::init(d1, d2, k, ell, seed).map_err(to_py)?),
                };
                (layer, vec![d2])
            }
            ("conv", &[h, w, c, kh, kw, out]) => {
                let g = ConvGeometry::new(h, w, c, kh, kw, out, stride, pad).map_err(to_py)?;
                let layer = match k {
                    None => Layer::DenseConv(DenseConv::init(g, seed).map_err(to_py)?),
                    Some(k) => Layer::SkConv(SkConv::init(g, k, ell, true, seed).map_err(to_py)?),
                };
                (layer, vec![h, w, c])
            }
            _ => return Err(PyValueError::new_err(
                "expected kind 'fc' with dims [in, out] or 'conv' with dims [h, w, c, kh, kw, out]",
            )),
        };
    let mut rng = stream_rng(seed, INPUT_STREAM);
    let input = sknn::Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    check_layer(&layer, &input, step, DEFAULT_TOLERANCE, seed)
        .map(|r| r.max_error())
        .map_err(to_py)
}

#[pymodule]
fn sknn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PySignMatrix>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(left_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(right_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
