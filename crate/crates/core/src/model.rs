//! Shared domain types: concepts, observations, patient headers and
//! reference bands.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, FixedOffset, NaiveDate};
use chrono_tz::Tz;
use indexmap::IndexMap;
use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Units a lab value can be reported in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnitKind {
    #[serde(rename = "mmol_per_L")]
    MmolPerL,
    #[serde(rename = "mg_per_dL")]
    MgPerDl,
    #[serde(rename = "percent")]
    Percent,
    #[serde(rename = "mmol_per_mol")]
    MmolPerMol,
    #[serde(rename = "umol_per_L")]
    UmolPerL,
    #[serde(rename = "mL_per_min_per_1_73m2")]
    MlPerMinPer173M2,
}

impl UnitKind {
    pub const ALL: [UnitKind; 6] = [
        UnitKind::MmolPerL,
        UnitKind::MgPerDl,
        UnitKind::Percent,
        UnitKind::MmolPerMol,
        UnitKind::UmolPerL,
        UnitKind::MlPerMinPer173M2,
    ];

    /// Identifier used in config files, CSV fixtures and query strings.
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::MmolPerL => "mmol_per_L",
            UnitKind::MgPerDl => "mg_per_dL",
            UnitKind::Percent => "percent",
            UnitKind::MmolPerMol => "mmol_per_mol",
            UnitKind::UmolPerL => "umol_per_L",
            UnitKind::MlPerMinPer173M2 => "mL_per_min_per_1_73m2",
        }
    }

    /// Human-readable symbol for axis labels and tooltips.
    pub fn symbol(self) -> &'static str {
        match self {
            UnitKind::MmolPerL => "mmol/L",
            UnitKind::MgPerDl => "mg/dL",
            UnitKind::Percent => "%",
            UnitKind::MmolPerMol => "mmol/mol",
            UnitKind::UmolPerL => "µmol/L",
            UnitKind::MlPerMinPer173M2 => "mL/min/1.73m²",
        }
    }
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown unit `{0}`")]
pub struct UnknownUnit(pub String);

impl FromStr for UnitKind {
    type Err = UnknownUnit;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UnitKind::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| UnknownUnit(s.to_string()))
    }
}

/// The chemical quantity behind a concept. Determines which units are
/// physically meaningful and which conversion rules apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analyte {
    Glucose,
    Cholesterol,
    Triglycerides,
    Creatinine,
    Hba1c,
    Egfr,
}

impl Analyte {
    pub fn allowed_units(self) -> &'static [UnitKind] {
        match self {
            Analyte::Glucose | Analyte::Cholesterol | Analyte::Triglycerides => {
                &[UnitKind::MmolPerL, UnitKind::MgPerDl]
            }
            Analyte::Creatinine => &[UnitKind::UmolPerL, UnitKind::MgPerDl],
            Analyte::Hba1c => &[UnitKind::Percent, UnitKind::MmolPerMol],
            Analyte::Egfr => &[UnitKind::MlPerMinPer173M2],
        }
    }

    pub fn allows(self, unit: UnitKind) -> bool {
        self.allowed_units().contains(&unit)
    }
}

impl fmt::Display for Analyte {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Analyte::Glucose => "glucose",
            Analyte::Cholesterol => "cholesterol",
            Analyte::Triglycerides => "triglycerides",
            Analyte::Creatinine => "creatinine",
            Analyte::Hba1c => "hba1c",
            Analyte::Egfr => "egfr",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileGroup {
    Glycemic,
    Lipid,
    Renal,
}

/// Traffic-light color. Ordered by severity: `Green < Yellow < Red`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficColor {
    Green,
    Yellow,
    Red,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminologyCode {
    pub system: String,
    pub code: String,
}

/// A measurable clinical quantity as registered in the concept dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub uuid: String,
    pub name: String,
    #[serde(rename = "unit")]
    pub canonical_unit: UnitKind,
    pub profile: ProfileGroup,
    pub analyte: Analyte,
    #[serde(default)]
    pub codes: Vec<TerminologyCode>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("concept uuid must not be empty")]
    EmptyUuid,
    #[error("duplicate concept uuid `{0}`")]
    DuplicateUuid(String),
    #[error("concept `{concept}` declares unit {unit}, which is not valid for {analyte}")]
    UnitNotValidForAnalyte {
        concept: String,
        unit: UnitKind,
        analyte: Analyte,
    },
    #[error("observation value {0} is not finite")]
    NonFiniteValue(f64),
    #[error("observation value {0} is negative")]
    NegativeValue(f64),
    #[error("birthdate {birthdate} is after {today}")]
    BirthdateInFuture { birthdate: NaiveDate, today: NaiveDate },
}

/// Concepts keyed by uuid, in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConceptRegistry {
    concepts: IndexMap<String, Concept>,
}

impl ConceptRegistry {
    pub fn new(concepts: impl IntoIterator<Item = Concept>) -> Result<Self, ModelError> {
        let mut map = IndexMap::new();
        for concept in concepts {
            if concept.uuid.is_empty() {
                return Err(ModelError::EmptyUuid);
            }
            if !concept.analyte.allows(concept.canonical_unit) {
                return Err(ModelError::UnitNotValidForAnalyte {
                    concept: concept.uuid,
                    unit: concept.canonical_unit,
                    analyte: concept.analyte,
                });
            }
            if map.contains_key(&concept.uuid) {
                return Err(ModelError::DuplicateUuid(concept.uuid));
            }
            map.insert(concept.uuid.clone(), concept);
        }
        Ok(Self { concepts: map })
    }

    pub fn get(&self, uuid: &str) -> Option<&Concept> {
        self.concepts.get(uuid)
    }

    pub fn contains(&self, uuid: &str) -> bool {
        self.concepts.contains_key(uuid)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }
}

/// One measured value for one patient and concept.
///
/// `visit_date` is derived from `obs_datetime` in the clinic timezone at
/// construction and cannot drift from it afterwards.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    record_id: Option<String>,
    patient_uuid: String,
    concept_uuid: String,
    value: f64,
    unit: UnitKind,
    obs_datetime: DateTime<FixedOffset>,
    visit_date: NaiveDate,
}

impl Observation {
    pub fn new(
        patient_uuid: impl Into<String>,
        concept_uuid: impl Into<String>,
        value: f64,
        unit: UnitKind,
        obs_datetime: DateTime<FixedOffset>,
        clinic_tz: Tz,
    ) -> Result<Self, ModelError> {
        if !value.is_finite() {
            return Err(ModelError::NonFiniteValue(value));
        }
        if value < 0.0 {
            return Err(ModelError::NegativeValue(value));
        }
        Ok(Self {
            record_id: None,
            patient_uuid: patient_uuid.into(),
            concept_uuid: concept_uuid.into(),
            value,
            unit,
            obs_datetime,
            visit_date: obs_datetime.with_timezone(&clinic_tz).date_naive(),
        })
    }

    /// Attach the EHR's record identifier, used as a tie-breaker between
    /// observations sharing a timestamp.
    pub fn with_record_id(mut self, id: impl Into<String>) -> Self {
        self.record_id = Some(id.into());
        self
    }

    pub fn record_id(&self) -> Option<&str> {
        self.record_id.as_deref()
    }

    pub fn patient_uuid(&self) -> &str {
        &self.patient_uuid
    }

    pub fn concept_uuid(&self) -> &str {
        &self.concept_uuid
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn unit(&self) -> UnitKind {
        self.unit
    }

    pub fn obs_datetime(&self) -> DateTime<FixedOffset> {
        self.obs_datetime
    }

    pub fn visit_date(&self) -> NaiveDate {
        self.visit_date
    }

    /// Total order used wherever "the later observation wins": timestamp,
    /// then record id, then value.
    pub fn recency_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.obs_datetime
            .cmp(&other.obs_datetime)
            .then_with(|| self.record_id.cmp(&other.record_id))
            .then_with(|| self.value.total_cmp(&other.value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "U", alias = "O")]
    Unknown,
}

impl Gender {
    /// Lenient parse of EHR gender codes; anything unrecognised is `Unknown`.
    pub fn from_code(code: &str) -> Self {
        match code.trim().to_ascii_uppercase().as_str() {
            "M" | "MALE" => Gender::Male,
            "F" | "FEMALE" => Gender::Female,
            _ => Gender::Unknown,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Male => "M",
            Gender::Female => "F",
            Gender::Unknown => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientHeader {
    pub patient_uuid: String,
    pub display_name: String,
    pub gender: Gender,
    pub birthdate: NaiveDate,
}

impl PatientHeader {
    pub fn new(
        patient_uuid: impl Into<String>,
        display_name: impl Into<String>,
        gender: Gender,
        birthdate: NaiveDate,
        today: NaiveDate,
    ) -> Result<Self, ModelError> {
        if birthdate > today {
            return Err(ModelError::BirthdateInFuture { birthdate, today });
        }
        Ok(Self {
            patient_uuid: patient_uuid.into(),
            display_name: display_name.into(),
            gender,
            birthdate,
        })
    }
}

/// One reference interval `[lower, upper)`. `upper` may be `f64::INFINITY`.
///
/// Serialized as a `[lower, upper, color]` triple with an infinite upper
/// bound written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lower: f64,
    pub upper: f64,
    pub color: TrafficColor,
}

impl Band {
    pub fn new(lower: f64, upper: f64, color: TrafficColor) -> Self {
        Self {
            lower,
            upper,
            color,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value < self.upper
    }
}

impl Serialize for Band {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(3)?;
        t.serialize_element(&self.lower)?;
        if self.upper == f64::INFINITY {
            t.serialize_element("inf")?;
        } else {
            t.serialize_element(&self.upper)?;
        }
        t.serialize_element(&self.color)?;
        t.end()
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum UpperBound {
    Number(f64),
    Text(String),
}

impl<'de> Deserialize<'de> for Band {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BandVisitor;

        impl<'de> Visitor<'de> for BandVisitor {
            type Value = Band;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a [lower, upper_or_\"inf\", color] triple")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Band, A::Error> {
                let lower: f64 = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let upper = match seq
                    .next_element::<UpperBound>()?
                    .ok_or_else(|| de::Error::invalid_length(1, &self))?
                {
                    UpperBound::Number(v) => v,
                    UpperBound::Text(s) => match s.as_str() {
                        "inf" | "+inf" | "infinity" => f64::INFINITY,
                        other => {
                            return Err(de::Error::invalid_value(
                                de::Unexpected::Str(other),
                                &"a number or \"inf\"",
                            ))
                        }
                    },
                };
                let color = seq
                    .next_element()?
                    .ok_or_else(|| de::Error::invalid_length(2, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(4, &self));
                }
                Ok(Band::new(lower, upper, color))
            }
        }

        deserializer.deserialize_seq(BandVisitor)
    }
}

/// Ordered reference intervals for one concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub concept_uuid: String,
    pub unit: UnitKind,
    #[serde(rename = "intervals")]
    pub bands: Vec<Band>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BandSpecError {
    #[error("band list is empty")]
    Empty,
    #[error("band {index} has a non-finite lower bound or NaN upper bound")]
    NonFinite { index: usize },
    #[error("band {index} is empty or inverted: [{lower}, {upper})")]
    Degenerate { index: usize, lower: f64, upper: f64 },
    #[error("band {index} is out of order: lower {lower} is below the previous band's lower {previous_lower}")]
    Unsorted {
        index: usize,
        lower: f64,
        previous_lower: f64,
    },
    #[error("gap before band {index}: [{from}, {to}) is not covered")]
    Gap { index: usize, from: f64, to: f64 },
    #[error("band {index} overlaps the previous band on [{from}, {to})")]
    Overlap { index: usize, from: f64, to: f64 },
    #[error("band {index} starts below zero at {lower}")]
    StartsBelowZero { index: usize, lower: f64 },
    #[error("last band {index} ends at {upper}; the bands must extend to infinity")]
    BoundedAbove { index: usize, upper: f64 },
}

impl BandSpecError {
    pub fn index(&self) -> Option<usize> {
        match *self {
            BandSpecError::Empty => None,
            BandSpecError::NonFinite { index }
            | BandSpecError::Degenerate { index, .. }
            | BandSpecError::Unsorted { index, .. }
            | BandSpecError::Gap { index, .. }
            | BandSpecError::Overlap { index, .. }
            | BandSpecError::StartsBelowZero { index, .. }
            | BandSpecError::BoundedAbove { index, .. } => Some(index),
        }
    }
}

/// Checks that the bands form an ordered, contiguous partition of `[0, ∞)`.
///
/// Invariants are checked in order (non-empty, finite, sorted, well-formed,
/// contiguous, full cover) and the first violation is reported.
pub fn validate_band_spec(spec: &BandSpec) -> Result<(), BandSpecError> {
    let bands = &spec.bands;
    if bands.is_empty() {
        return Err(BandSpecError::Empty);
    }
    for (index, band) in bands.iter().enumerate() {
        if !band.lower.is_finite() || band.upper.is_nan() {
            return Err(BandSpecError::NonFinite { index });
        }
    }
    for (index, pair) in bands.windows(2).enumerate() {
        if pair[1].lower < pair[0].lower {
            return Err(BandSpecError::Unsorted {
                index: index + 1,
                lower: pair[1].lower,
                previous_lower: pair[0].lower,
            });
        }
    }
    for (index, band) in bands.iter().enumerate() {
        if band.lower >= band.upper {
            return Err(BandSpecError::Degenerate {
                index,
                lower: band.lower,
                upper: band.upper,
            });
        }
    }
    let first = bands[0];
    if first.lower > 0.0 {
        return Err(BandSpecError::Gap {
            index: 0,
            from: 0.0,
            to: first.lower,
        });
    }
    if first.lower < 0.0 {
        return Err(BandSpecError::StartsBelowZero {
            index: 0,
            lower: first.lower,
        });
    }
    for (i, pair) in bands.windows(2).enumerate() {
        let (prev, next) = (pair[0], pair[1]);
        if next.lower > prev.upper {
            return Err(BandSpecError::Gap {
                index: i + 1,
                from: prev.upper,
                to: next.lower,
            });
        }
        if next.lower < prev.upper {
            return Err(BandSpecError::Overlap {
                index: i + 1,
                from: next.lower,
                to: prev.upper,
            });
        }
    }
    let last_index = bands.len() - 1;
    let last = bands[last_index];
    if last.upper != f64::INFINITY {
        return Err(BandSpecError::BoundedAbove {
            index: last_index,
            upper: last.upper,
        });
    }
    Ok(())
}
