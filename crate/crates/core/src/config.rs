//! Dashboard configuration: concept registry, reference bands, conversion
//! rules and clinic timezone, loaded from a TOML file and fully validated
//! before use.

use std::path::{Path, PathBuf};

use chrono::{DateTime, FixedOffset};
use chrono_tz::Tz;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify, ClassifyError, Classification};
use crate::model::{
    validate_band_spec, BandSpec, BandSpecError, Concept, ConceptRegistry, ModelError,
    Observation, UnitKind,
};
use crate::units::{ConversionEntry, ConversionError, ConversionTable};

/// The on-disk schema, kept verbatim so it can be echoed back to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub clinic_timezone: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ehr_base_url: Option<String>,
    pub concepts: Vec<Concept>,
    pub bands: Vec<BandSpec>,
    #[serde(default)]
    pub conversions: Vec<ConversionEntry>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("unknown clinic timezone `{0}`")]
    UnknownTimezone(String),
    #[error("concept registry: {0}")]
    Registry(#[from] ModelError),
    #[error("band spec references unknown concept `{concept_uuid}`")]
    UnknownConcept { concept_uuid: String },
    #[error("concept `{concept}` has more than one band spec")]
    DuplicateBandSpec { concept: String },
    #[error("concept `{concept}` has no band spec")]
    MissingBandSpec { concept: String },
    #[error("band spec for `{concept}`: {source}")]
    BandSpec {
        concept: String,
        #[source]
        source: BandSpecError,
    },
    #[error("band spec for `{concept}` uses {unit}, which cannot be reached from the canonical unit {canonical}")]
    BandUnit {
        concept: String,
        unit: UnitKind,
        canonical: UnitKind,
    },
    #[error("conversion table: {0}")]
    Conversion(#[from] ConversionError),
}

/// A validated configuration. Immutable; reloading yields a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct DashboardConfig {
    clinic_timezone: Tz,
    registry: ConceptRegistry,
    band_specs: IndexMap<String, BandSpec>,
    conversions: ConversionTable,
    source: ConfigFile,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

impl DashboardConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ConfigError::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        Ok(Self::from_file(file)?)
    }

    /// Parse the JSON rendering produced by [`DashboardConfig::source`].
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(Self::from_file(file)?)
    }

    pub fn from_file(file: ConfigFile) -> Result<Self, ValidationError> {
        let clinic_timezone: Tz = file
            .clinic_timezone
            .parse()
            .map_err(|_| ValidationError::UnknownTimezone(file.clinic_timezone.clone()))?;
        let registry = ConceptRegistry::new(file.concepts.iter().cloned())?;
        let conversions = ConversionTable::from_entries(&file.conversions)?;

        let mut band_specs = IndexMap::new();
        for spec in &file.bands {
            let concept = registry
                .get(&spec.concept_uuid)
                .ok_or_else(|| ValidationError::UnknownConcept {
                    concept_uuid: spec.concept_uuid.clone(),
                })?;
            validate_band_spec(spec).map_err(|source| ValidationError::BandSpec {
                concept: concept.uuid.clone(),
                source,
            })?;
            if !conversions.supports(concept.analyte, concept.canonical_unit, spec.unit) {
                return Err(ValidationError::BandUnit {
                    concept: concept.uuid.clone(),
                    unit: spec.unit,
                    canonical: concept.canonical_unit,
                });
            }
            if band_specs.insert(spec.concept_uuid.clone(), spec.clone()).is_some() {
                return Err(ValidationError::DuplicateBandSpec {
                    concept: concept.uuid.clone(),
                });
            }
        }
        if let Some(c) = registry.iter().find(|c| !band_specs.contains_key(&c.uuid)) {
            return Err(ValidationError::MissingBandSpec {
                concept: c.uuid.clone(),
            });
        }

        Ok(Self {
            clinic_timezone,
            registry,
            band_specs,
            conversions,
            source: file,
        })
    }

    pub fn clinic_timezone(&self) -> Tz {
        self.clinic_timezone
    }

    pub fn ehr_base_url(&self) -> Option<&str> {
        self.source.ehr_base_url.as_deref()
    }

    pub fn registry(&self) -> &ConceptRegistry {
        &self.registry
    }

    pub fn band_spec(&self, concept_uuid: &str) -> Option<&BandSpec> {
        self.band_specs.get(concept_uuid)
    }

    pub fn band_specs(&self) -> impl Iterator<Item = &BandSpec> {
        self.band_specs.values()
    }

    pub fn conversions(&self) -> &ConversionTable {
        &self.conversions
    }

    /// The configuration exactly as loaded.
    pub fn source(&self) -> &ConfigFile {
        &self.source
    }

    /// Convert `value` of the given concept between two units.
    pub fn convert(
        &self,
        concept_uuid: &str,
        value: f64,
        from: UnitKind,
        to: UnitKind,
    ) -> Result<f64, ClassifyError> {
        let concept = self
            .registry
            .get(concept_uuid)
            .ok_or_else(|| ClassifyError::UnknownConcept(concept_uuid.to_string()))?;
        Ok(self.conversions.convert(value, concept, from, to)?)
    }

    /// Classify a value against the configured band spec for its concept.
    pub fn classify(
        &self,
        concept_uuid: &str,
        value: f64,
        unit: UnitKind,
    ) -> Result<Classification, ClassifyError> {
        let concept = self
            .registry
            .get(concept_uuid)
            .ok_or_else(|| ClassifyError::UnknownConcept(concept_uuid.to_string()))?;
        let spec = self
            .band_specs
            .get(concept_uuid)
            .ok_or_else(|| ClassifyError::UnknownConcept(concept_uuid.to_string()))?;
        classify(value, unit, spec, concept, &self.conversions)
    }

    /// Build an observation whose unit is known to convert to the concept's
    /// canonical unit, with its visit date taken in the clinic timezone.
    pub fn observation(
        &self,
        patient_uuid: &str,
        concept_uuid: &str,
        value: f64,
        unit: UnitKind,
        obs_datetime: DateTime<FixedOffset>,
    ) -> Result<Observation, ClassifyError> {
        let concept = self
            .registry
            .get(concept_uuid)
            .ok_or_else(|| ClassifyError::UnknownConcept(concept_uuid.to_string()))?;
        if !self
            .conversions
            .supports(concept.analyte, unit, concept.canonical_unit)
        {
            return Err(ClassifyError::Conversion(ConversionError::NoRule {
                analyte: concept.analyte,
                from: unit,
                to: concept.canonical_unit,
            }));
        }
        Ok(Observation::new(
            patient_uuid,
            concept_uuid,
            value,
            unit,
            obs_datetime,
            self.clinic_timezone,
        )?)
    }
}
