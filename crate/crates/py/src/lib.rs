//! Python bindings. Results cross the boundary as plain dicts and lists.

use std::sync::Arc;

use chrono::DateTime;
use labdash_core::{
    build_gauge_summaries, build_trend_series_in, build_visit_table, filter_rows, paginate, parse_visit_date,
    validate_band_spec, Band, BandSpec, DashboardConfig, Observation, PageRequest, TrafficColor, UnitKind,
};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList, PyString};
use serde_json::Value;

create_exception!(labdash_py, ConfigError, PyValueError, "The configuration failed to load or validate.");
create_exception!(labdash_py, BandSpecError, PyValueError, "A band spec violates a partition invariant.");

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (_, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let items = items.iter().map(|i| to_py(py, i)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(map) => {
            let d = PyDict::new(py);
            for (k, v) in map {
                d.set_item(k, to_py(py, v)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py>(py: Python<'py>, v: impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let json = serde_json::to_value(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &json)
}

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_unit(unit: &str) -> PyResult<UnitKind> {
    unit.parse().map_err(value_error)
}

/// A loaded and validated dashboard configuration.
#[pyclass(frozen, module = "labdash_py")]
struct Config {
    inner: Arc<DashboardConfig>,
}

#[pymethods]
impl Config {
    /// Load a TOML or JSON config file.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = DashboardConfig::load(path).map_err(|e| ConfigError::new_err(e.to_string()))?;
        Ok(Config { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = DashboardConfig::from_toml_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?;
        Ok(Config { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = DashboardConfig::from_json_str(text).map_err(|e| ConfigError::new_err(e.to_string()))?;
        Ok(Config { inner: Arc::new(inner) })
    }

    #[getter]
    fn clinic_timezone(&self) -> String {
        self.inner.clinic_timezone().name().to_string()
    }

    fn concepts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize(py, self.inner.registry().iter().collect::<Vec<_>>())
    }

    fn band_spec<'py>(&self, py: Python<'py>, concept_uuid: &str) -> PyResult<Bound<'py, PyAny>> {
        let spec = self
            .inner
            .band_spec(concept_uuid)
            .ok_or_else(|| value_error(format!("unknown concept `{concept_uuid}`")))?;
        serialize(py, spec)
    }

    /// The config as JSON, in the same schema `from_json` reads.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(self.inner.source()).map_err(value_error)
    }

    fn classify<'py>(&self, py: Python<'py>, concept_uuid: &str, value: f64, unit: &str) -> PyResult<Bound<'py, PyAny>> {
        let c = self.inner.classify(concept_uuid, value, parse_unit(unit)?).map_err(value_error)?;
        serialize(py, c)
    }

    fn convert(&self, concept_uuid: &str, value: f64, from_unit: &str, to_unit: &str) -> PyResult<f64> {
        self.inner
            .convert(concept_uuid, value, parse_unit(from_unit)?, parse_unit(to_unit)?)
            .map_err(value_error)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(concepts={}, clinic_timezone={:?})",
            self.inner.registry().len(),
            self.inner.clinic_timezone().name()
        )
    }
}

/// An observation as passed in from Python.
#[derive(FromPyObject)]
struct PyObservation {
    #[pyo3(item)]
    patient_uuid: String,
    #[pyo3(item)]
    concept_uuid: String,
    #[pyo3(item)]
    value: f64,
    #[pyo3(item)]
    unit: String,
    #[pyo3(item)]
    obs_datetime: String,
}

fn to_observations(config: &DashboardConfig, items: Vec<PyObservation>) -> PyResult<Vec<Observation>> {
    items
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let at = DateTime::parse_from_rfc3339(&o.obs_datetime)
                .map_err(|e| value_error(format!("observation {i}: obs_datetime `{}`: {e}", o.obs_datetime)))?;
            let obs = config
                .observation(&o.patient_uuid, &o.concept_uuid, o.value, parse_unit(&o.unit)?, at)
                .map_err(|e| value_error(format!("observation {i}: {e}")))?;
            Ok(obs.with_record_id(format!("{i:08}")))
        })
        .collect()
}

/// Latest-value gauges: `{"gauges": [...], "missing": [concept_uuid, ...]}`.
#[pyfunction]
fn gauge_summaries<'py>(
    py: Python<'py>,
    config: &Config,
    observations: Vec<PyObservation>,
) -> PyResult<Bound<'py, PyAny>> {
    let obs = to_observations(&config.inner, observations)?;
    let report = build_gauge_summaries(&obs, &config.inner);
    let errors: Vec<Value> = report
        .errors
        .iter()
        .map(|e| serde_json::json!({"concept_uuid": e.concept_uuid, "message": e.error.to_string()}))
        .collect();
    serialize(
        py,
        serde_json::json!({"gauges": report.gauges, "missing": report.missing, "unclassified": errors}),
    )
}

/// One page of the per-visit table, newest first.
#[pyfunction]
#[pyo3(signature = (config, observations, page = 1, size = 10, date = None))]
fn visit_table<'py>(
    py: Python<'py>,
    config: &Config,
    observations: Vec<PyObservation>,
    page: usize,
    size: usize,
    date: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let date = date.map(parse_visit_date).transpose().map_err(value_error)?;
    let obs = to_observations(&config.inner, observations)?;
    let rows = build_visit_table(&obs, &config.inner);
    let rows = match date {
        Some(d) => filter_rows(&rows, d),
        None => rows,
    };
    serialize(py, paginate(&rows, &PageRequest::new(page, size, date)))
}

/// Time-ordered series for one concept, in `unit` or the canonical unit.
#[pyfunction]
#[pyo3(signature = (config, observations, concept_uuid, unit = None))]
fn trend_series<'py>(
    py: Python<'py>,
    config: &Config,
    observations: Vec<PyObservation>,
    concept_uuid: &str,
    unit: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let concept = config
        .inner
        .registry()
        .get(concept_uuid)
        .ok_or_else(|| value_error(format!("unknown concept `{concept_uuid}`")))?;
    let unit = unit.map(parse_unit).transpose()?.unwrap_or(concept.canonical_unit);
    let obs = to_observations(&config.inner, observations)?;
    let series = build_trend_series_in(&obs, concept_uuid, unit, &config.inner).map_err(value_error)?;
    serialize(py, series)
}

/// Check a band list; raises `BandSpecError` naming the first violation.
///
/// `intervals` is a list of `(lower, upper, color)` with `math.inf` for an
/// open top band.
#[pyfunction]
fn check_band_spec(concept_uuid: &str, unit: &str, intervals: Vec<(f64, f64, String)>) -> PyResult<()> {
    let bands = intervals
        .into_iter()
        .map(|(lower, upper, color)| {
            let color: TrafficColor =
                serde_json::from_value(Value::String(color.clone())).map_err(|_| value_error(format!("unknown color `{color}`")))?;
            Ok(Band::new(lower, upper, color))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let spec = BandSpec {
        concept_uuid: concept_uuid.to_string(),
        unit: parse_unit(unit)?,
        bands,
    };
    validate_band_spec(&spec).map_err(|e| BandSpecError::new_err(e.to_string()))
}

/// Parse a fixture CSV into observation dicts accepted by the view functions.
#[pyfunction]
fn parse_fixture_csv<'py>(py: Python<'py>, config: &Config, text: &str) -> PyResult<Bound<'py, PyAny>> {
    let rows = mock_ehr::parse_rows(text.as_bytes(), &config.inner).map_err(value_error)?;
    let items: Vec<Value> = rows
        .iter()
        .map(|r| {
            let [patient_uuid, concept_uuid, _, unit, obs_datetime] = r.to_record();
            serde_json::json!({
                "patient_uuid": patient_uuid,
                "concept_uuid": concept_uuid,
                "value": r.value,
                "unit": unit,
                "obs_datetime": obs_datetime,
            })
        })
        .collect();
    to_py(py, &Value::Array(items))
}

/// Seeded synthetic history for one patient, as fixture CSV text.
#[pyfunction]
#[pyo3(signature = (config, seed, visits = 6, interval_days = 30))]
fn generate_fixture(config: &Config, seed: u64, visits: u32, interval_days: u32) -> PyResult<String> {
    let spec = mock_ehr::GeneratorSpec::for_config(&config.inner, seed, visits, interval_days);
    let rows = mock_ehr::generate(&spec, &config.inner).map_err(value_error)?;
    let mut out = Vec::new();
    mock_ehr::write_csv(&rows, &mut out).map_err(value_error)?;
    String::from_utf8(out).map_err(value_error)
}

#[pymodule]
pub fn labdash_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Config>()?;
    m.add("ConfigError", m.py().get_type::<ConfigError>())?;
    m.add("BandSpecError", m.py().get_type::<BandSpecError>())?;
    m.add_function(wrap_pyfunction!(gauge_summaries, m)?)?;
    m.add_function(wrap_pyfunction!(visit_table, m)?)?;
    m.add_function(wrap_pyfunction!(trend_series, m)?)?;
    m.add_function(wrap_pyfunction!(check_band_spec, m)?)?;
    m.add_function(wrap_pyfunction!(parse_fixture_csv, m)?)?;
    m.add_function(wrap_pyfunction!(generate_fixture, m)?)?;
    Ok(())
}
