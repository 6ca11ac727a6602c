//! Python bindings: CDFs, pooling, scores, weights and the verify suites.

use angular_pool::estimation::{estimate_weights as estimate, InSampleRecord};
use angular_pool::verify::{run_suite, Suite, VerifyOptions};
use angular_pool::{
    cdf_from_quantiles, Aggregator, BoundRule, CombinationSpec, Direction, FlatRule, PiecewiseLinearCdf,
    QuantileForecast, TrimKind, Weights, HUB_LEVELS,
};
use chrono::NaiveDate;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: angular_pool::Error) -> PyErr {
    match e {
        angular_pool::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(format!("[{}] {e}", e.code())),
    }
}

/// Piecewise-linear CDF given by its knots `[(x, p), ...]`.
#[pyclass(name = "Cdf", module = "angular_pool", frozen, from_py_object)]
#[derive(Clone)]
pub struct Cdf(PiecewiseLinearCdf);

#[pymethods]
impl Cdf {
    #[new]
    fn new(knots: Vec<(f64, f64)>) -> PyResult<Self> {
        PiecewiseLinearCdf::new(knots).map(Cdf).map_err(to_py)
    }

    /// CDF through quantiles at `levels` (the 23 hub levels by default),
    /// with tails closed at the 0.01/0.99 extrapolation bounds.
    #[staticmethod]
    #[pyo3(signature = (quantiles, levels=None))]
    fn from_quantiles(quantiles: Vec<f64>, levels: Option<Vec<f64>>) -> PyResult<Self> {
        let levels = levels.unwrap_or_else(|| HUB_LEVELS.to_vec());
        let qf = QuantileForecast::new(levels, quantiles).map_err(to_py)?;
        cdf_from_quantiles(&qf, BoundRule::default()).map(Cdf).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        PiecewiseLinearCdf::from_json(text).map(Cdf).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[getter]
    fn knots(&self) -> Vec<(f64, f64)> {
        self.0.knots().to_vec()
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.moments().mean
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.moments().variance
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.eval(x, FlatRule::Midpoint)
    }

    fn inverse(&self, alpha: f64) -> PyResult<f64> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PyValueError::new_err("alpha must be in [0, 1]"));
        }
        Ok(self.0.inverse(alpha))
    }

    fn __len__(&self) -> usize {
        self.0.knots().len()
    }

    fn __repr__(&self) -> String {
        format!("Cdf(knots={}, support=[{}, {}])", self.0.knots().len(), self.0.lower(), self.0.upper())
    }
}

fn unwrap_all(cdfs: Vec<Cdf>) -> Vec<PiecewiseLinearCdf> {
    cdfs.into_iter().map(|c| c.0).collect()
}

/// Pool `cdfs`. `direction` is "vertical", "horizontal" or "angular" (which
/// needs `theta` in degrees); `agg` is "mean", "weighted", "median" or
/// "trimmed".
#[pyfunction]
#[pyo3(signature = (cdfs, direction, theta=None, agg="mean", weights=None, trim="exterior", fraction=0.0))]
fn combine(
    cdfs: Vec<Cdf>,
    direction: &str,
    theta: Option<f64>,
    agg: &str,
    weights: Option<Vec<f64>>,
    trim: &str,
    fraction: f64,
) -> PyResult<Cdf> {
    let direction = match (direction, theta) {
        ("vertical", None) => Direction::Vertical,
        ("horizontal", None) => Direction::Horizontal,
        ("angular", Some(theta_deg)) => Direction::Angular { theta_deg },
        ("angular", None) => return Err(PyValueError::new_err("angular pooling needs theta")),
        ("vertical" | "horizontal", Some(_)) => return Err(PyValueError::new_err("theta only applies to angular pooling")),
        (other, _) => return Err(PyValueError::new_err(format!("unknown direction `{other}`"))),
    };
    let aggregator = match (agg, weights) {
        ("weighted", Some(w)) => Aggregator::Weighted { weights: Weights::normalized(w).map_err(to_py)? },
        ("weighted", None) => return Err(PyValueError::new_err("weighted pooling needs weights")),
        (_, Some(_)) => return Err(PyValueError::new_err("weights only apply to agg=\"weighted\"")),
        ("mean", None) => Aggregator::Mean,
        ("median", None) => Aggregator::Median,
        ("trimmed", None) => {
            let trim = match trim {
                "exterior" => TrimKind::Exterior,
                "interior" => TrimKind::Interior,
                other => return Err(PyValueError::new_err(format!("unknown trim `{other}`"))),
            };
            Aggregator::Trimmed { trim, fraction }
        }
        (other, None) => return Err(PyValueError::new_err(format!("unknown aggregator `{other}`"))),
    };
    let members = unwrap_all(cdfs);
    CombinationSpec::new(direction, aggregator).combine(&members).map(Cdf).map_err(to_py)
}

#[pyfunction]
fn crps(cdf: &Cdf, x: f64) -> f64 {
    angular_pool::crps(&cdf.0, x)
}

/// Mean quantile score over `levels` (the hub levels by default).
#[pyfunction]
#[pyo3(signature = (cdf, x, levels=None))]
fn mqs(cdf: &Cdf, x: f64, levels: Option<Vec<f64>>) -> f64 {
    angular_pool::mqs(&cdf.0, x, levels.as_deref().unwrap_or(&HUB_LEVELS))
}

/// Inverse-MQS weights from `(team, origin, horizon, mqs)` records, with
/// origins as YYYY-MM-DD. Returns `{team: weight}`.
#[pyfunction]
#[pyo3(signature = (records, min_periods=1))]
fn estimate_weights<'py>(
    py: Python<'py>,
    records: Vec<(String, String, u32, f64)>,
    min_periods: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let parsed = records
        .into_iter()
        .map(|(team, origin, horizon, score)| {
            let date = NaiveDate::parse_from_str(&origin, "%Y-%m-%d")
                .map_err(|e| PyValueError::new_err(format!("origin `{origin}`: {e}")))?;
            InSampleRecord::new(team, date, horizon, Some(score)).map_err(to_py)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let out = PyDict::new(py);
    for (team, w) in estimate(&parsed, min_periods).map_err(to_py)? {
        out.set_item(team, w)?;
    }
    Ok(out)
}

/// Run one verify suite, or all of them. Returns the report lines and
/// whether every check passed.
#[pyfunction]
#[pyo3(signature = (suite="all", trials=200, seed=1))]
fn verify(py: Python<'_>, suite: &str, trials: usize, seed: u64) -> PyResult<(Vec<String>, bool)> {
    let suites = match suite {
        "all" => Suite::ALL.to_vec(),
        s => vec![s.parse::<Suite>().map_err(to_py)?],
    };
    let opts = VerifyOptions { trials, seed, ..Default::default() };
    py.detach(|| {
        let mut lines = Vec::new();
        let mut ok = true;
        for s in suites {
            let report = run_suite(s, &opts)?;
            ok &= report.passed();
            lines.extend(report.lines());
        }
        Ok((lines, ok))
    })
    .map_err(to_py)
}

#[pymodule(name = "angular_pool")]
fn angular_pool_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cdf>()?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(crps, m)?)?;
    m.add_function(wrap_pyfunction!(mqs, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_weights, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add("HUB_LEVELS", HUB_LEVELS.to_vec())?;
    Ok(())
}
