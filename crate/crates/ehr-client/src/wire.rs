//! JSON shapes of the two OpenMRS REST resources the dashboard reads.
//!
//! Shared with the mock server so both ends agree byte for byte.

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

pub const REST_PREFIX: [&str; 3] = ["ws", "rest", "v1"];

/// Timestamp format used on the wire: `YYYY-MM-DDThh:mm:ss±hh:mm`.
pub const DATETIME_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%:z";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientResource {
    pub uuid: String,
    pub display: String,
    pub person: PersonResource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonResource {
    pub gender: String,
    pub birthdate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsPage {
    pub results: Vec<ObsResource>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<Link>,
}

impl ObsPage {
    pub fn next_link(&self) -> Option<&str> {
        self.links
            .iter()
            .find(|l| l.rel == "next")
            .map(|l| l.uri.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsResource {
    pub uuid: String,
    pub concept: ConceptRef,
    #[serde(rename = "obsDatetime")]
    pub obs_datetime: String,
    /// A bare number for numeric concepts; coded answers arrive as objects.
    pub value: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRef {
    pub uuid: String,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub rel: String,
    pub uri: String,
}

pub fn format_datetime(dt: &DateTime<FixedOffset>) -> String {
    dt.format(DATETIME_FORMAT).to_string()
}

/// Accepts the canonical wire format, RFC 3339, and the OpenMRS default
/// `2018-11-30T09:15:00.000-0500` form.
pub fn parse_datetime(s: &str) -> Option<DateTime<FixedOffset>> {
    DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z"))
        .ok()
}

/// Birthdates come either as a plain date or as a midnight timestamp.
pub fn parse_birthdate(s: &str) -> Option<NaiveDate> {
    let date_part = s.get(..10)?;
    NaiveDate::parse_from_str(date_part, "%Y-%m-%d").ok()
}

/// Numeric payload of an obs value, if it has one.
pub fn numeric_value(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        _ => None,
    }
}
