//! Python bindings. Matrices cross the boundary as lists of rows.

use std::collections::BTreeSet;

use engine::dataset::{self, Dataset, SyntheticSpec};
use engine::experiment::{run_campaign as run_campaign_impl, EpisodeConfig};
use engine::gaussian;
use engine::metrics::{self, ConfusionMatrix};
use engine::net::{self, Activation, FeatureSet, NetworkParams, NetworkSpec, TrainConfig};
use engine::resample::{self, Strategy};
use engine::rng::Stream;
use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn err(e: engine::Error) -> PyErr {
    match e {
        engine::Error::Io { .. } | engine::Error::NonFiniteLoss { .. } | engine::Error::NotPositiveDefinite { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

pub fn to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

pub fn to_rows(a: &Array2<f64>) -> Rows {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn dataset_from(features: &[Vec<f64>], labels: Vec<usize>) -> PyResult<Dataset> {
    let x = to_array(features)?;
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(x, labels, n_classes).map_err(err)
}

/// Isotropic Gaussian clusters; returns `(features, labels)`.
#[pyfunction]
#[pyo3(signature = (classes, per_class, dims, spread, seed))]
fn make_synthetic(classes: usize, per_class: usize, dims: usize, spread: f64, seed: u64) -> PyResult<(Rows, Vec<usize>)> {
    let spec = SyntheticSpec { n_classes: classes, samples_per_class: per_class, n_dims: dims, cluster_spread: spread, seed };
    let data = dataset::make_synthetic(&spec).map_err(err)?;
    Ok((to_rows(data.features()), data.labels().to_vec()))
}

#[pyclass(name = "GaussianModel", module = "cavityfill", frozen)]
pub struct PyGaussian {
    inner: gaussian::GaussianModel,
}

#[pymethods]
impl PyGaussian {
    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.to_vec()
    }

    /// Regularized covariance (jitter included).
    #[getter]
    fn covariance(&self) -> Rows {
        to_rows(&self.inner.covariance)
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    #[getter]
    fn n_fit(&self) -> usize {
        self.inner.n_fit
    }

    fn sample(&self, n: usize, seed: u64) -> Rows {
        to_rows(&gaussian::sample_full(&self.inner, n, &mut Stream::new(seed)))
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyGaussian { inner: gaussian::GaussianModel::from_text(text).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("GaussianModel(dim={}, n_fit={}, epsilon={:e})", self.inner.dim(), self.inner.n_fit, self.inner.epsilon)
    }
}

/// Full-covariance maximum-likelihood fit.
#[pyfunction]
fn fit_gaussian(points: Rows) -> PyResult<PyGaussian> {
    let x = to_array(&points)?;
    Ok(PyGaussian { inner: gaussian::fit_full(x.view()).map_err(err)? })
}

#[pyfunction]
#[pyo3(signature = (points, n, seed, k = resample::DEFAULT_SMOTE_K))]
fn smote(points: Rows, n: usize, seed: u64, k: usize) -> PyResult<Rows> {
    let x = to_array(&points)?;
    Ok(to_rows(&resample::smote(x.view(), k, n, &mut Stream::new(seed)).map_err(err)?))
}

#[pyfunction]
fn perturb(points: Rows, n: usize, seed: u64) -> PyResult<Rows> {
    let x = to_array(&points)?;
    Ok(to_rows(&resample::perturb(x.view(), n, &mut Stream::new(seed)).map_err(err)?))
}

/// Returns `(targets, pseudo)` per class.
#[pyfunction]
fn plan_balance(counts: Vec<usize>) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let plan = resample::plan_balance(&counts).map_err(err)?;
    Ok((plan.targets, plan.pseudo))
}

/// Rebalances labelled features with a named strategy. Returns
/// `(features, labels, origins)` with origins `"real"` or `"pseudo"`.
#[pyfunction]
fn augment(strategy: &str, features: Rows, labels: Vec<usize>, seed: u64) -> PyResult<(Rows, Vec<usize>, Vec<&'static str>)> {
    let strategy: Strategy = strategy.parse().map_err(err)?;
    let data = dataset_from(&features, labels)?;
    let aug = resample::generate(strategy, &FeatureSet::from_dataset(&data), &mut Stream::new(seed)).map_err(err)?;
    let (mut rows, mut out_labels, mut origins) = (Vec::new(), Vec::new(), Vec::new());
    for (set, origin) in [(&aug.real, "real"), (&aug.pseudo, "pseudo")] {
        let (x, y) = set.stacked();
        origins.extend(std::iter::repeat_n(origin, y.len()));
        rows.extend(to_rows(&x));
        out_labels.extend(y);
    }
    Ok((rows, out_labels, origins))
}

fn report_dict<'py>(py: Python<'py>, r: &metrics::ScoreReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", r.accuracy)?;
    d.set_item("precision", r.precision.clone())?;
    d.set_item("recall", r.recall.clone())?;
    d.set_item("f1", r.f1.clone())?;
    d.set_item("macro_precision", r.macro_precision)?;
    d.set_item("macro_recall", r.macro_recall)?;
    d.set_item("macro_f1", r.macro_f1)?;
    match &r.minor {
        Some(m) => {
            let md = PyDict::new(py);
            md.set_item("ids", m.ids.clone())?;
            md.set_item("accuracy", m.accuracy)?;
            md.set_item("precision", m.precision)?;
            md.set_item("recall", m.recall)?;
            md.set_item("f1", m.f1)?;
            d.set_item("minor", md)?;
        }
        None => d.set_item("minor", py.None())?,
    }
    Ok(d)
}

/// Scores a confusion matrix (rows = truth, columns = prediction).
#[pyfunction]
#[pyo3(signature = (confusion, minors = Vec::new()))]
fn score<'py>(py: Python<'py>, confusion: Vec<Vec<u64>>, minors: Vec<usize>) -> PyResult<Bound<'py, PyDict>> {
    let cm = ConfusionMatrix::from_counts(confusion).map_err(err)?;
    let minors: BTreeSet<usize> = minors.into_iter().collect();
    report_dict(py, &metrics::score(&cm, &minors).map_err(err)?)
}

#[pyfunction]
fn confusion(truth: Vec<usize>, predicted: Vec<usize>, n_classes: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(metrics::confusion(&truth, &predicted, n_classes).map_err(err)?.counts)
}

/// Feed-forward softmax classifier.
#[pyclass(name = "Network", module = "cavityfill")]
pub struct PyNetwork {
    spec: NetworkSpec,
    params: NetworkParams,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (widths, seed, activation = "relu"))]
    fn new(widths: Vec<usize>, seed: u64, activation: &str) -> PyResult<Self> {
        let activation = match activation {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            other => return Err(PyValueError::new_err(format!("unknown activation {other:?}"))),
        };
        let spec = NetworkSpec::new(widths, activation).map_err(err)?;
        let params = net::init(&spec, seed).map_err(err)?;
        Ok(PyNetwork { spec, params })
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.spec.layer_widths.clone()
    }

    #[pyo3(signature = (features, labels, seed, epochs = 100, batch_size = 128, learning_rate = 1e-3))]
    fn train(
        &mut self,
        py: Python<'_>,
        features: Rows,
        labels: Vec<usize>,
        seed: u64,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
    ) -> PyResult<()> {
        let data = dataset_from(&features, labels)?;
        let cfg = TrainConfig { epochs, batch_size, learning_rate, seed, ..TrainConfig::default() };
        let (params, spec) = (&self.params, &self.spec);
        self.params = py.detach(|| net::train(params, spec, &data, &cfg)).map_err(err)?;
        Ok(())
    }

    /// Class probabilities.
    fn forward(&self, features: Rows) -> PyResult<Rows> {
        let x = to_array(&features)?;
        Ok(to_rows(&net::forward(&self.params, &self.spec, x.view()).map_err(err)?))
    }

    fn predict(&self, features: Rows) -> PyResult<Vec<usize>> {
        let x = to_array(&features)?;
        net::predict(&self.params, &self.spec, x.view()).map_err(err)
    }

    /// Penultimate-layer activations.
    fn features(&self, features: Rows) -> PyResult<Rows> {
        let x = to_array(&features)?;
        let split = net::split_at_penultimate(&self.params, &self.spec).map_err(err)?;
        Ok(to_rows(&split.features(x.view()).map_err(err)?))
    }

    /// Retrains only the final layer on already-extracted features.
    #[pyo3(signature = (features, labels, seed, epochs = 100, batch_size = 128, learning_rate = 1e-3))]
    fn retrain_head(
        &mut self,
        py: Python<'_>,
        features: Rows,
        labels: Vec<usize>,
        seed: u64,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
    ) -> PyResult<()> {
        let split = net::split_at_penultimate(&self.params, &self.spec).map_err(err)?;
        let x = to_array(&features)?;
        let n_classes = self.spec.n_classes();
        let mut classes = vec![Vec::new(); n_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(PyValueError::new_err(format!("label {l} out of range for {n_classes} classes")));
            }
            classes[l].push(i);
        }
        let mats = classes.iter().map(|idx| x.select(ndarray::Axis(0), idx)).collect();
        let real = FeatureSet::new(mats, split.feature_dim()).map_err(err)?;
        let pseudo = FeatureSet::empty(n_classes, split.feature_dim());
        let cfg = TrainConfig { epochs, batch_size, learning_rate, seed, ..TrainConfig::default() };
        let retrained = py.detach(|| net::retrain_head(&split, &real, &pseudo, &cfg)).map_err(err)?;
        let (params, spec) = net::reassemble(&retrained).map_err(err)?;
        self.params = params;
        self.spec = spec;
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!("Network(widths={:?})", self.spec.layer_widths)
    }
}

/// Runs a campaign from a JSON config and returns the result as JSON.
#[pyfunction]
#[pyo3(signature = (config_json, episodes = None))]
fn run_campaign(py: Python<'_>, config_json: &str, episodes: Option<usize>) -> PyResult<String> {
    let cfg = EpisodeConfig::from_json(config_json).map_err(err)?;
    let n = episodes.unwrap_or(cfg.episodes);
    let result = py.detach(|| run_campaign_impl(&cfg, n)).map_err(err)?;
    result.to_json().map_err(err)
}

/// The built-in default campaign configuration as JSON.
#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&EpisodeConfig::desk_default()).expect("plain data")
}

#[pymodule]
fn cavityfill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(smote, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(plan_balance, m)?)?;
    m.add_function(wrap_pyfunction!(augment, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_class::<PyGaussian>()?;
    m.add_class::<PyNetwork>()?;
    m.add("STRATEGIES", ["baseline", "under", "over", "smote", "perturb", "cavity", "cavity-diag"])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_conversion_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.5]];
        assert_eq!(to_rows(&to_array(&rows).unwrap()), rows);
        assert!(to_array(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert_eq!(to_array(&[]).unwrap().dim(), (0, 0));
    }

    #[test]
    fn module_functions_from_python() {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "cavityfill").unwrap();
            cavityfill(&m).unwrap();
            let r = m.getattr("score").unwrap().call1((vec![vec![2u64, 0], vec![2, 0]],)).unwrap();
            let f1: f64 = r.get_item("macro_f1").unwrap().extract().unwrap();
            assert!((f1 - 1.0 / 3.0).abs() < 1e-15);

            let plan: (Vec<usize>, Vec<usize>) = m.getattr("plan_balance").unwrap().call1((vec![5usize, 2],)).unwrap().extract().unwrap();
            assert_eq!(plan, (vec![5, 5], vec![0, 3]));

            let bad = m.getattr("augment").unwrap().call1(("nope", vec![vec![0.0]], vec![0usize], 1u64));
            assert!(bad.unwrap_err().is_instance_of::<PyValueError>(py));
        });
    }
}
