//! Python bindings. Complex results (configs, reports, attention summaries)
//! cross the boundary as JSON strings.

use std::path::PathBuf;

use mmoe_core::datamodel::{self, Split, SynthSpec};
use mmoe_core::diffcore::gradcheck::gradcheck as primitive_gradcheck;
use mmoe_core::diffcore::PrimitiveKind;
use mmoe_core::harness::{self, Metrics, PerturbMode, PerturbSpec, RunConfig, Variant};
use mmoe_core::Error;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Contract(_) | Error::Parse { .. } | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_split(name: &str) -> PyResult<Split> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("unknown split {other:?}, expected train/val/test"))),
    }
}

fn parse_config(config: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(format!("config: {e}")))?,
        None => RunConfig::desk(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn metrics_dict<'py>(py: Python<'py>, m: &Metrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("f1", m.f1)?;
    d.set_item("auc", m.auc)?;
    d.set_item("acc", m.acc)?;
    Ok(d)
}

/// Users, movies and reviews with labels and split assignment.
#[pyclass(module = "mmoe")]
struct Dataset {
    inner: datamodel::Dataset,
}

#[pymethods]
impl Dataset {
    /// Synthetic dataset. `preset` is "default" or "graph-only"; `spec` is
    /// an optional JSON object overriding generator fields.
    #[staticmethod]
    #[pyo3(signature = (seed=7, preset="default", spec=None))]
    fn synth(seed: u64, preset: &str, spec: Option<&str>) -> PyResult<Self> {
        let spec = match (spec, preset) {
            (Some(text), _) => {
                serde_json::from_str::<SynthSpec>(text).map_err(|e| PyValueError::new_err(format!("spec: {e}")))?
            }
            (None, "default") => SynthSpec::default(),
            (None, "graph-only") => SynthSpec::graph_only(),
            (None, other) => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        let inner = datamodel::synth_generate(&spec, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Reads users/movies/reviews JSONL from a directory. Unsplit data is
    /// split 8:1:1 with `seed`.
    #[staticmethod]
    #[pyo3(signature = (path, seed=7))]
    fn load(path: PathBuf, seed: u64) -> PyResult<Self> {
        let ds = datamodel::load_dataset(&path).map_err(to_py)?;
        let inner = if ds.is_split() {
            ds
        } else {
            datamodel::split_dataset(&ds, DEFAULT_SPLIT, seed).map_err(to_py)?
        };
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        datamodel::save_dataset(&path, &self.inner).map_err(to_py)
    }

    /// `(users, movies, reviews)`.
    fn counts(&self) -> (usize, usize, usize) {
        self.inner.counts()
    }

    fn labels(&self) -> Vec<u8> {
        self.inner.labels()
    }

    /// Review indices in the named split.
    fn split(&self, name: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.split_indices(parse_split(name)?))
    }

    fn __len__(&self) -> usize {
        self.inner.reviews.len()
    }

    fn __repr__(&self) -> String {
        let (u, m, r) = self.inner.counts();
        format!("Dataset(users={u}, movies={m}, reviews={r})")
    }
}

/// A trained model together with its training report.
#[pyclass(module = "mmoe")]
struct Trained {
    inner: harness::Trained,
}

#[pymethods]
impl Trained {
    /// Restores a run directory written by `save`.
    #[staticmethod]
    fn load(path: PathBuf, dataset: &Dataset) -> PyResult<Self> {
        let inner = harness::Trained::load(&path, &dataset.inner).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn report(&self) -> PyResult<String> {
        self.inner.report.to_json().map_err(to_py)
    }

    fn config(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.config).map_err(|e| to_py(e.into()))
    }

    /// F1, AUC, accuracy and summed loss on a split.
    #[pyo3(signature = (split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyDict>> {
        let reviews = self.inner.split(parse_split(split)?);
        let ev = py.detach(|| self.inner.evaluate(&reviews)).map_err(to_py)?;
        let d = metrics_dict(py, &ev.metrics)?;
        d.set_item("loss", ev.loss)?;
        Ok(d)
    }

    /// Spoiler probabilities for the reviews of a split, in split order.
    #[pyo3(signature = (split="test"))]
    fn scores(&self, py: Python<'_>, split: &str) -> PyResult<Vec<f64>> {
        let reviews = self.inner.split(parse_split(split)?);
        let ev = py.detach(|| self.inner.evaluate(&reviews)).map_err(to_py)?;
        Ok(ev.scores)
    }

    /// Test metrics as `mode` ("edges", "text" or "meta") is degraded at
    /// each rate. Returns a list of `{rate, f1, auc, acc}`.
    #[pyo3(signature = (mode, rates, seed=7))]
    fn perturb<'py>(&self, py: Python<'py>, mode: &str, rates: Vec<f64>, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mode: PerturbMode = mode.parse().map_err(to_py)?;
        let spec = PerturbSpec { mode, rates, seed };
        let curve = py.detach(|| harness::perturb(&self.inner, &spec)).map_err(to_py)?;
        curve
            .points
            .iter()
            .map(|p| {
                let d = metrics_dict(py, &p.metrics)?;
                d.set_item("rate", p.rate)?;
                Ok(d)
            })
            .collect()
    }

    /// Fusion and GAT attention statistics on a split, as JSON.
    #[pyo3(signature = (split="test"))]
    fn attention(&self, py: Python<'_>, split: &str) -> PyResult<String> {
        let reviews = self.inner.split(parse_split(split)?);
        let summary = py.detach(|| self.inner.analyze_attention(&reviews)).map_err(to_py)?;
        serde_json::to_string_pretty(&summary).map_err(|e| to_py(e.into()))
    }
}

/// Trains on `dataset`. `config` is a JSON run configuration; the
/// desk-scale configuration is used when omitted.
#[pyfunction]
#[pyo3(signature = (dataset, config=None))]
fn train(py: Python<'_>, dataset: &Dataset, config: Option<&str>) -> PyResult<Trained> {
    let cfg = parse_config(config)?;
    let inner = py.detach(|| harness::train(&dataset.inner, &cfg)).map_err(to_py)?;
    Ok(Trained { inner })
}

/// Trains one ablation variant, named by id or table label.
#[pyfunction]
#[pyo3(signature = (dataset, variant, config=None))]
fn ablate(py: Python<'_>, dataset: &Dataset, variant: &str, config: Option<&str>) -> PyResult<Trained> {
    let cfg = parse_config(config)?;
    let variant: Variant = variant.parse().map_err(to_py)?;
    let inner = py.detach(|| harness::ablate(&dataset.inner, &cfg, variant)).map_err(to_py)?;
    Ok(Trained { inner })
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.id()).collect()
}

/// The paper-scale run configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::default()).map_err(|e| to_py(e.into()))
}

/// The reduced configuration used for quick CPU runs, as JSON.
#[pyfunction]
fn desk_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::desk()).map_err(|e| to_py(e.into()))
}

#[pyfunction]
fn evaluate_metrics<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Bound<'py, PyDict>> {
    let m = harness::evaluate_metrics(&scores, &labels).map_err(to_py)?;
    metrics_dict(py, &m)
}

/// Largest relative error of analytic against finite-difference gradients
/// over every primitive.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn gradcheck(seed: u64) -> PyResult<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = primitive_gradcheck(&PrimitiveKind::ALL, &mut rng).map_err(to_py)?;
    Ok(report.max_rel_err())
}

#[pymodule]
fn mmoe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Trained>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
