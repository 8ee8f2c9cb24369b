//! CSV fixtures and the in-memory store the mock server reads from.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, FixedOffset, NaiveDate};
use indexmap::IndexMap;
use labdash_core::{DashboardConfig, UnitKind};
use labdash_ehr::wire;
use thiserror::Error;
use uuid::Uuid;

pub const OBS_HEADER: [&str; 5] = ["patient_uuid", "concept_uuid", "value", "unit", "obs_datetime"];
pub const PATIENT_HEADER: [&str; 4] = ["patient_uuid", "display", "gender", "birthdate"];

/// Birthdate given to patients that only appear in the observation file.
pub const PLACEHOLDER_BIRTHDATE: &str = "1970-01-01";

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("header must be `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: unknown concept `{uuid}`")]
    UnknownConcept { line: u64, uuid: String },
}

/// One observation line of a fixture file.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureRow {
    pub patient_uuid: String,
    pub concept_uuid: String,
    pub value: f64,
    pub unit: UnitKind,
    pub obs_datetime: DateTime<FixedOffset>,
}

impl FixtureRow {
    pub fn to_record(&self) -> [String; 5] {
        [
            self.patient_uuid.clone(),
            self.concept_uuid.clone(),
            self.value.to_string(),
            self.unit.as_str().to_string(),
            wire::format_datetime(&self.obs_datetime),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub uuid: String,
    pub display: String,
    pub gender: String,
    pub birthdate: NaiveDate,
}

/// An observation as served: value already in the concept's canonical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredObs {
    pub uuid: String,
    pub concept_uuid: String,
    pub concept_display: String,
    pub value: f64,
    pub obs_datetime: DateTime<FixedOffset>,
}

/// Read-only observation and patient store.
#[derive(Debug, Clone, Default)]
pub struct ObservationStore {
    patients: IndexMap<String, PatientRecord>,
    obs: HashMap<(String, String), Vec<StoredObs>>,
    rows: usize,
}

impl ObservationStore {
    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn patient(&self, uuid: &str) -> Option<&PatientRecord> {
        self.patients.get(uuid)
    }

    pub fn patients(&self) -> impl Iterator<Item = &PatientRecord> {
        self.patients.values()
    }

    /// Observations for (patient, concept) in fixture order.
    pub fn observations(&self, patient: &str, concept: &str) -> &[StoredObs] {
        self.obs
            .get(&(patient.to_string(), concept.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    /// Add or replace patient demographics.
    pub fn with_patients(mut self, patients: impl IntoIterator<Item = PatientRecord>) -> Self {
        for p in patients {
            self.patients.insert(p.uuid.clone(), p);
        }
        self
    }
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<(), FixtureError> {
    let header_err = |found: String| FixtureError::Header {
        expected: expected.join(","),
        found,
    };
    let headers = rdr.headers().map_err(|e| header_err(e.to_string()))?;
    if headers.iter().ne(expected.iter().copied()) {
        return Err(header_err(headers.iter().collect::<Vec<_>>().join(",")));
    }
    Ok(())
}

fn reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input)
}

fn parse_error(line: u64, message: impl Into<String>) -> FixtureError {
    FixtureError::Parse {
        line,
        message: message.into(),
    }
}

/// Parse observation rows, checking every concept against the registry.
pub fn parse_rows(input: impl Read, config: &DashboardConfig) -> Result<Vec<FixtureRow>, FixtureError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &OBS_HEADER)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let concept_uuid = record[1].to_string();
        let concept = config
            .registry()
            .get(&concept_uuid)
            .ok_or_else(|| FixtureError::UnknownConcept {
                line,
                uuid: concept_uuid.clone(),
            })?;
        let value: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(line, format!("value `{}` is not a number", &record[2])))?;
        if !value.is_finite() || value < 0.0 {
            return Err(parse_error(line, format!("value {value} must be finite and non-negative")));
        }
        let unit: UnitKind = record[3].parse().map_err(|e| parse_error(line, format!("{e}")))?;
        if !config
            .conversions()
            .supports(concept.analyte, unit, concept.canonical_unit)
        {
            return Err(parse_error(
                line,
                format!("unit {unit} cannot be converted to {} for {}", concept.canonical_unit, concept.name),
            ));
        }
        let obs_datetime = wire::parse_datetime(&record[4]).ok_or_else(|| {
            parse_error(line, format!("obs_datetime `{}` needs an explicit offset", &record[4]))
        })?;
        if record[0].is_empty() {
            return Err(parse_error(line, "empty patient_uuid"));
        }
        rows.push(FixtureRow {
            patient_uuid: record[0].to_string(),
            concept_uuid,
            value,
            unit,
            obs_datetime,
        });
    }
    Ok(rows)
}

/// Deterministic record uuid for the `index`-th fixture row.
pub fn obs_uuid(row: &FixtureRow, index: usize) -> String {
    let name = format!(
        "{}|{}|{}|{index}",
        row.patient_uuid,
        row.concept_uuid,
        wire::format_datetime(&row.obs_datetime)
    );
    Uuid::new_v5(&Uuid::NAMESPACE_OID, name.as_bytes()).to_string()
}

/// Build a store from parsed rows. Values are converted to each concept's
/// canonical unit, since the wire format carries no unit.
pub fn store_from_rows(rows: &[FixtureRow], config: &DashboardConfig) -> ObservationStore {
    let mut store = ObservationStore::default();
    for (index, row) in rows.iter().enumerate() {
        let concept = config
            .registry()
            .get(&row.concept_uuid)
            .expect("rows are checked against the registry");
        let value = config
            .conversions()
            .convert(row.value, concept, row.unit, concept.canonical_unit)
            .expect("row units are checked at parse time");
        store
            .obs
            .entry((row.patient_uuid.clone(), row.concept_uuid.clone()))
            .or_default()
            .push(StoredObs {
                uuid: obs_uuid(row, index),
                concept_uuid: row.concept_uuid.clone(),
                concept_display: concept.name.clone(),
                value,
                obs_datetime: row.obs_datetime,
            });
        store
            .patients
            .entry(row.patient_uuid.clone())
            .or_insert_with(|| placeholder_patient(&row.patient_uuid));
        store.rows += 1;
    }
    store
}

fn placeholder_patient(uuid: &str) -> PatientRecord {
    let short: String = uuid.chars().take(8).collect();
    PatientRecord {
        uuid: uuid.to_string(),
        display: format!("Patient {short}"),
        gender: "U".into(),
        birthdate: NaiveDate::parse_from_str(PLACEHOLDER_BIRTHDATE, "%Y-%m-%d").unwrap(),
    }
}

/// Load an observation fixture file into a store.
pub fn load_fixtures(path: impl AsRef<Path>, config: &DashboardConfig) -> Result<ObservationStore, FixtureError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let rows = parse_rows(file, config)?;
    Ok(store_from_rows(&rows, config))
}

pub fn parse_patients(input: impl Read) -> Result<Vec<PatientRecord>, FixtureError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &PATIENT_HEADER)?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| parse_error(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let birthdate = NaiveDate::parse_from_str(&record[3], "%Y-%m-%d")
            .map_err(|_| parse_error(line, format!("birthdate `{}` is not YYYY-MM-DD", &record[3])))?;
        out.push(PatientRecord {
            uuid: record[0].to_string(),
            display: record[1].to_string(),
            gender: record[2].to_string(),
            birthdate,
        });
    }
    Ok(out)
}

pub fn load_patients(path: impl AsRef<Path>) -> Result<Vec<PatientRecord>, FixtureError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_patients(file)
}
