//! Seeded synthetic patient histories.

use std::io::Write;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, TimeZone};
use labdash_core::{BandSpec, DashboardConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use uuid::Uuid;

use crate::fixtures::{FixtureRow, OBS_HEADER};

#[derive(Debug, Error, PartialEq)]
pub enum GeneratorError {
    #[error("n_visits must be at least 1")]
    NoVisits,
    #[error("visit_interval_days must be at least 1")]
    NoInterval,
    #[error("concept `{0}` has invalid parameters")]
    BadParams(String),
}

/// value = baseline + drift * visit_index + uniform noise in [-noise, +noise], floored at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptParams {
    pub concept_uuid: String,
    pub baseline: f64,
    pub drift: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_visits: u32,
    pub visit_interval_days: u32,
    pub start: NaiveDate,
    pub concepts: Vec<ConceptParams>,
}

impl GeneratorSpec {
    /// Parameters for every registered concept, derived from its bands so a
    /// history starts in the first band and drifts across the others.
    pub fn for_config(config: &DashboardConfig, seed: u64, n_visits: u32, visit_interval_days: u32) -> Self {
        let concepts = config
            .registry()
            .iter()
            .map(|c| {
                let spec = config.band_spec(&c.uuid).expect("every concept has bands");
                params_from_bands(&c.uuid, spec)
            })
            .collect();
        GeneratorSpec {
            seed,
            n_visits,
            visit_interval_days,
            start: NaiveDate::from_ymd_opt(2018, 1, 15).unwrap(),
            concepts,
        }
    }

    pub fn patient_uuid(&self) -> String {
        Uuid::new_v5(&Uuid::NAMESPACE_OID, format!("mock-ehr-patient-{}", self.seed).as_bytes()).to_string()
    }
}

fn params_from_bands(concept_uuid: &str, spec: &BandSpec) -> ConceptParams {
    let first = spec.bands[0].upper;
    let last = spec.bands[spec.bands.len() - 1].lower;
    let (first, last) = if first.is_finite() { (first, last) } else { (1.0, 1.0) };
    ConceptParams {
        concept_uuid: concept_uuid.to_string(),
        baseline: first * 0.85,
        drift: ((last - first) * 0.3).max(first * 0.05),
        noise: first * 0.05,
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Generate one patient's history. Rows are ordered by visit, then concept.
pub fn generate(spec: &GeneratorSpec, config: &DashboardConfig) -> Result<Vec<FixtureRow>, GeneratorError> {
    if spec.n_visits == 0 {
        return Err(GeneratorError::NoVisits);
    }
    if spec.visit_interval_days == 0 {
        return Err(GeneratorError::NoInterval);
    }
    for p in &spec.concepts {
        let ok = [p.baseline, p.drift, p.noise].iter().all(|v| v.is_finite()) && p.noise >= 0.0;
        if !ok || !config.registry().contains(&p.concept_uuid) {
            return Err(GeneratorError::BadParams(p.concept_uuid.clone()));
        }
    }
    let tz = config.clinic_timezone();
    let patient = spec.patient_uuid();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = Vec::with_capacity(spec.n_visits as usize * spec.concepts.len());
    for visit in 0..spec.n_visits {
        let day = spec.start + Duration::days(i64::from(visit) * i64::from(spec.visit_interval_days));
        let minutes = rng.random_range(0..240);
        let local = day.and_hms_opt(8, 0, 0).unwrap() + Duration::minutes(minutes);
        let at: DateTime<FixedOffset> = tz
            .from_local_datetime(&local)
            .earliest()
            .expect("08:00-12:00 always exists")
            .fixed_offset();
        for p in &spec.concepts {
            let noise = if p.noise > 0.0 {
                rng.random_range(-p.noise..=p.noise)
            } else {
                0.0
            };
            let value = round2((p.baseline + p.drift * f64::from(visit) + noise).max(0.0));
            let unit = config.registry().get(&p.concept_uuid).unwrap().canonical_unit;
            rows.push(FixtureRow {
                patient_uuid: patient.clone(),
                concept_uuid: p.concept_uuid.clone(),
                value,
                unit,
                obs_datetime: at,
            });
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[FixtureRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(OBS_HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush()?;
    Ok(())
}
