//! Traffic-light classification of a value against a band spec.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BandSpec, Concept, ModelError, TrafficColor, UnitKind};
use crate::units::{ConversionError, ConversionTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub concept_uuid: String,
    pub concept_name: String,
    /// The value as given, in `unit`.
    pub value: f64,
    pub unit: UnitKind,
    pub color: TrafficColor,
    pub band_index: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("value {0} is negative")]
    Negative(f64),
    #[error(transparent)]
    Conversion(#[from] ConversionError),
    #[error("converted value {value} {unit} falls outside every band")]
    OutsideBands { value: f64, unit: UnitKind },
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Find the band containing `value` after converting it to the spec's unit.
///
/// Bands are lower-inclusive and upper-exclusive, so a value sitting exactly
/// on a boundary lands in the higher band. No rounding is applied.
pub fn classify(
    value: f64,
    unit: UnitKind,
    spec: &BandSpec,
    concept: &Concept,
    conversions: &ConversionTable,
) -> Result<Classification, ClassifyError> {
    if !value.is_finite() {
        return Err(ClassifyError::NonFinite(value));
    }
    if value < 0.0 {
        return Err(ClassifyError::Negative(value));
    }
    let converted = conversions.convert(value, concept, unit, spec.unit)?;
    let band_index = spec.bands.partition_point(|b| b.upper <= converted);
    let band = spec
        .bands
        .get(band_index)
        .filter(|b| b.contains(converted))
        .ok_or(ClassifyError::OutsideBands {
            value: converted,
            unit: spec.unit,
        })?;
    Ok(Classification {
        concept_uuid: concept.uuid.clone(),
        concept_name: concept.name.clone(),
        value,
        unit,
        color: band.color,
        band_index,
    })
}

/// Most severe first; equal colors fall back to concept name ascending.
pub fn classification_severity(a: &Classification, b: &Classification) -> Ordering {
    b.color
        .cmp(&a.color)
        .then_with(|| a.concept_name.cmp(&b.concept_name))
}
