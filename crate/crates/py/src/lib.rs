//! Python bindings: the exact rule, grid encoding, learned models, training
//! and length evaluation. Operands and products are Python `int`s of any size.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyInt};

use ncamul::eval;
use ncamul::model::checkpoint::{self, AnyModel};
use ncamul::model::{Engine, MlpModel, ModelKind, NcaModel, RuleNet, Stepper, Symbolic};
use ncamul::rule::{self, default_step_cap};
use ncamul::train::{self as training, TrainConfig};
use ncamul::{BitVec, Error, Grid};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Checkpoint(_) => PyOSError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::NonFiniteGradient { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn bitvec(x: &Bound<'_, PyAny>) -> PyResult<BitVec> {
    if !x.is_instance_of::<PyInt>() {
        return Err(PyValueError::new_err("operands must be ints"));
    }
    BitVec::from_decimal_str(&x.str()?.to_cow()?).map_err(to_py_err)
}

fn py_int<'py>(py: Python<'py>, x: &BitVec) -> PyResult<Bound<'py, PyAny>> {
    py.import("builtins")?.getattr("int")?.call1((x.to_decimal_string(),))
}

fn grid(rows: Vec<Vec<u32>>) -> PyResult<Grid> {
    Grid::from_rows(&rows).map_err(to_py_err)
}

fn encode_pair(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>, n: Option<usize>) -> PyResult<(BitVec, BitVec, Grid)> {
    let (a, b) = (bitvec(a)?, bitvec(b)?);
    let n = n.unwrap_or_else(|| a.len().max(b.len()).max(1));
    let g = ncamul::outer_product_encode(&a, &b, n).map_err(to_py_err)?;
    Ok((a, b, g))
}

/// Reference product by shift-and-add.
#[pyfunction]
fn oracle_multiply<'py>(py: Python<'py>, a: &Bound<'py, PyAny>, b: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    py_int(py, &ncamul::multiply_oracle(&bitvec(a)?, &bitvec(b)?))
}

/// Multiply with the exact rule. Returns `(product, steps)`.
#[pyfunction]
fn multiply<'py>(py: Python<'py>, a: &Bound<'py, PyAny>, b: &Bound<'py, PyAny>) -> PyResult<(Bound<'py, PyAny>, usize)> {
    let (a, b) = (bitvec(a)?, bitvec(b)?);
    let (p, steps) = py.detach(|| rule::multiply_with_rule(&a, &b)).map_err(to_py_err)?;
    Ok((py_int(py, &p)?, steps))
}

/// Outer-product grid (2n rows × n columns) for `a · b`.
#[pyfunction]
#[pyo3(signature = (a, b, n=None))]
fn encode(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>, n: Option<usize>) -> PyResult<Vec<Vec<u32>>> {
    Ok(encode_pair(a, b, n)?.2.to_rows())
}

/// Product held by a fixed-point grid.
#[pyfunction]
fn decode<'py>(py: Python<'py>, rows: Vec<Vec<u32>>) -> PyResult<Bound<'py, PyAny>> {
    py_int(py, &ncamul::decode_product(&grid(rows)?).map_err(to_py_err)?)
}

/// One application of the exact rule.
#[pyfunction]
fn step(rows: Vec<Vec<u32>>) -> PyResult<Vec<Vec<u32>>> {
    Ok(rule::checked_step(&grid(rows)?).map_err(to_py_err)?.to_rows())
}

#[pyfunction]
fn is_fixed_point(rows: Vec<Vec<u32>>) -> PyResult<bool> {
    Ok(rule::is_fixed_point(&grid(rows)?))
}

/// Run the exact rule to its fixed point. Returns `(grid, steps)`.
#[pyfunction]
#[pyo3(signature = (rows, max_steps=None))]
fn evolve(py: Python<'_>, rows: Vec<Vec<u32>>, max_steps: Option<usize>) -> PyResult<(Vec<Vec<u32>>, usize)> {
    let g = grid(rows)?;
    let cap = max_steps.unwrap_or_else(|| default_step_cap(g.n()));
    let (fixed, steps) = py.detach(|| rule::evolve_to_fixed_point(&g, cap)).map_err(to_py_err)?;
    Ok((fixed.to_rows(), steps))
}

/// Every frame of the exact rule's run on `a · b`, ending with the repeat.
#[pyfunction]
#[pyo3(signature = (a, b, n=None))]
fn trace(a: &Bound<'_, PyAny>, b: &Bound<'_, PyAny>, n: Option<usize>) -> PyResult<Vec<Vec<Vec<u32>>>> {
    let (_, _, g) = encode_pair(a, b, n)?;
    let traj = rule::Trajectory::generate(&g, default_step_cap(g.n())).map_err(to_py_err)?;
    Ok(traj.states.iter().map(Grid::to_rows).collect())
}

/// A trained (or freshly initialised) rule network.
#[pyclass(name = "Model", module = "ncamul", frozen)]
struct PyModel {
    inner: AnyModel,
}

macro_rules! with_model {
    ($any:expr, $m:ident => $body:expr) => {
        match $any {
            AnyModel::Nca($m) => $body,
            AnyModel::Mlp($m) => $body,
        }
    };
}

fn parse_kind(kind: &str) -> PyResult<ModelKind> {
    match kind {
        "nca" => Ok(ModelKind::Nca),
        "mlp" => Ok(ModelKind::Mlp),
        other => Err(PyValueError::new_err(format!("unknown model kind {other:?}"))),
    }
}

#[pymethods]
impl PyModel {
    /// The initial weights training starts from for this seed.
    #[staticmethod]
    #[pyo3(signature = (kind="nca", hidden=16, seed=0))]
    fn init(kind: &str, hidden: usize, seed: u64) -> PyResult<Self> {
        if hidden == 0 {
            return Err(PyValueError::new_err("hidden must be at least 1"));
        }
        let config = TrainConfig {
            hidden,
            seed,
            ..TrainConfig::default()
        };
        let inner = match parse_kind(kind)? {
            ModelKind::Nca => AnyModel::Nca(training::init_model::<NcaModel>(&config)),
            ModelKind::Mlp => AnyModel::Mlp(training::init_model::<MlpModel>(&config)),
        };
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load(&path).map_err(to_py_err)?.model,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        with_model!(&self.inner, m => checkpoint::save(&path, m, None, &serde_json::Value::Null)).map_err(to_py_err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn hidden(&self) -> usize {
        with_model!(&self.inner, m => m.hidden())
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        with_model!(&self.inner, m => m.params().to_vec())
    }

    #[getter]
    fn fingerprint(&self) -> String {
        with_model!(&self.inner, m => m.fingerprint())
    }

    /// One relax-and-project update.
    fn step(&self, py: Python<'_>, rows: Vec<Vec<u32>>) -> PyResult<Vec<Vec<u32>>> {
        let g = grid(rows)?;
        Ok(py.detach(|| with_model!(&self.inner, m => Engine::new(m).step(&g))).to_rows())
    }

    /// Iterate to the first repeated state. Returns `(grid, steps)`.
    #[pyo3(signature = (rows, max_steps=None))]
    fn infer(&self, py: Python<'_>, rows: Vec<Vec<u32>>, max_steps: Option<usize>) -> PyResult<(Vec<Vec<u32>>, usize)> {
        let g = grid(rows)?;
        let cap = max_steps.unwrap_or_else(|| default_step_cap(g.n()));
        let (fixed, steps) = py
            .detach(|| with_model!(&self.inner, m => Engine::new(m).infer(&g, cap)))
            .map_err(to_py_err)?;
        Ok((fixed.to_rows(), steps))
    }

    /// Multiply with the learned rule. Returns `(product, steps)`; raises
    /// `RuntimeError` if no fixed point is reached.
    fn multiply<'py>(&self, py: Python<'py>, a: &Bound<'py, PyAny>, b: &Bound<'py, PyAny>) -> PyResult<(Bound<'py, PyAny>, usize)> {
        let (_, _, g) = encode_pair(a, b, None)?;
        let cap = default_step_cap(g.n());
        let (fixed, steps) = py
            .detach(|| with_model!(&self.inner, m => Engine::new(m).infer(&g, cap)))
            .map_err(to_py_err)?;
        let p = ncamul::decode_product(&fixed).map_err(to_py_err)?;
        Ok((py_int(py, &p)?, steps))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, hidden={}, params={})",
            self.kind(),
            self.hidden(),
            self.param_count()
        )
    }
}

/// Chaos-train a model. Returns `(model, metrics)` where `metrics` is a list
/// of dicts with keys `step`, `lr`, `loss`, `single_step_acc`.
#[pyfunction]
#[pyo3(signature = (kind="nca", hidden=None, seed=0, steps=30_000, batch=256, lr=1e-3, n_min=2, n_max=6, eval_every=500, eval_samples=1024))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    kind: &str,
    hidden: Option<usize>,
    seed: u64,
    steps: usize,
    batch: usize,
    lr: f64,
    n_min: usize,
    n_max: usize,
    eval_every: usize,
    eval_samples: usize,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let kind = parse_kind(kind)?;
    let config = TrainConfig {
        kind,
        hidden: hidden.unwrap_or(match kind {
            ModelKind::Nca => 16,
            ModelKind::Mlp => 32,
        }),
        total_steps: steps,
        batch_size: batch,
        lr0: lr,
        n_min,
        n_max,
        eval_every,
        eval_samples,
        seed,
        ..TrainConfig::default()
    };
    let (model, metrics) = py.detach(|| training::train(&config)).map_err(to_py_err)?;
    let points = metrics
        .points
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("step", p.step)?;
            d.set_item("lr", p.lr)?;
            d.set_item("loss", p.loss)?;
            d.set_item("single_step_acc", p.single_step_acc)?;
            Ok(d)
        })
        .collect::<PyResult<_>>()?;
    Ok((PyModel { inner: model }, points))
}

/// Exact-match accuracy per operand width. `model=None` scores the exact
/// rule. Returns one dict per width.
#[pyfunction]
#[pyo3(signature = (model=None, bits=vec![8, 16, 32, 64], samples=None, seed=0))]
fn evaluate<'py>(
    py: Python<'py>,
    model: Option<&PyModel>,
    bits: Vec<usize>,
    samples: Option<usize>,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let plan: Vec<(usize, usize)> = bits
        .iter()
        .map(|&n| (n, samples.unwrap_or_else(|| eval::default_samples(n))))
        .collect();
    let run = |s: &dyn Stepper| -> ncamul::Result<eval::EvalReport> {
        let records = plan
            .iter()
            .map(|&(n, k)| eval::evaluate_length(s, n, k, seed))
            .collect::<ncamul::Result<_>>()?;
        Ok(eval::EvalReport {
            model_id: s.label(),
            seed,
            records,
        })
    };
    let report = py
        .detach(|| match model {
            None => run(&Symbolic),
            Some(m) => with_model!(&m.inner, m => run(&Engine::new(m))),
        })
        .map_err(to_py_err)?;
    report
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("bits", r.bits)?;
            d.set_item("samples", r.samples)?;
            d.set_item("correct", r.correct)?;
            d.set_item("accuracy", r.exact_match_rate)?;
            d.set_item("mean_steps", r.mean_steps)?;
            d.set_item("max_steps", r.max_steps)?;
            d.set_item("divergences", r.divergences)?;
            Ok(d)
        })
        .collect()
}

#[pymodule(name = "ncamul")]
fn ncamul_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(oracle_multiply, m)?)?;
    m.add_function(wrap_pyfunction!(multiply, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(step, m)?)?;
    m.add_function(wrap_pyfunction!(is_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(trace, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
