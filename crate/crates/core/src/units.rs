//! Per-analyte unit conversion.
//!
//! Rules are data loaded from the config file. Each rule is stored once, in
//! one direction, and the inverse is derived, so a round trip is exact up to
//! floating point rounding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Analyte, Concept, UnitKind};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConversionKind {
    /// `to = from * factor`
    Scale(f64),
    /// `to = slope * from + intercept`
    Linear { slope: f64, intercept: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionRule {
    pub analyte: Analyte,
    pub from: UnitKind,
    pub to: UnitKind,
    pub kind: ConversionKind,
}

impl ConversionRule {
    fn forward(&self, value: f64) -> f64 {
        match self.kind {
            ConversionKind::Scale(factor) => value * factor,
            ConversionKind::Linear { slope, intercept } => slope * value + intercept,
        }
    }

    fn inverse(&self, value: f64) -> f64 {
        match self.kind {
            ConversionKind::Scale(factor) => value / factor,
            ConversionKind::Linear { slope, intercept } => (value - intercept) / slope,
        }
    }
}

/// Config-file form of a rule: either `factor`, or `slope` and `intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionEntry {
    pub analyte: Analyte,
    pub from: UnitKind,
    pub to: UnitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConversionError {
    #[error("{unit} is not a valid unit for {analyte}")]
    InvalidUnit { analyte: Analyte, unit: UnitKind },
    #[error("no conversion from {from} to {to} for {analyte}")]
    NoRule {
        analyte: Analyte,
        from: UnitKind,
        to: UnitKind,
    },
    #[error("conversion rule {index} for {analyte}: {reason}")]
    BadRule {
        index: usize,
        analyte: Analyte,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConversionTable {
    rules: Vec<ConversionRule>,
}

impl ConversionTable {
    pub fn from_entries(entries: &[ConversionEntry]) -> Result<Self, ConversionError> {
        let mut rules: Vec<ConversionRule> = Vec::with_capacity(entries.len());
        for (index, e) in entries.iter().enumerate() {
            let bad = |reason: &str| ConversionError::BadRule {
                index,
                analyte: e.analyte,
                reason: reason.to_string(),
            };
            for unit in [e.from, e.to] {
                if !e.analyte.allows(unit) {
                    return Err(bad(&format!("{unit} is not a valid unit for this analyte")));
                }
            }
            if e.from == e.to {
                return Err(bad("from and to units are identical"));
            }
            let kind = match (e.factor, e.slope, e.intercept) {
                (Some(f), None, None) => {
                    if !(f.is_finite() && f > 0.0) {
                        return Err(bad("factor must be finite and positive"));
                    }
                    ConversionKind::Scale(f)
                }
                (None, Some(slope), Some(intercept)) => {
                    if !(slope.is_finite() && slope != 0.0 && intercept.is_finite()) {
                        return Err(bad("slope must be finite and non-zero, intercept finite"));
                    }
                    ConversionKind::Linear { slope, intercept }
                }
                _ => return Err(bad("give either `factor`, or both `slope` and `intercept`")),
            };
            let duplicate = rules.iter().any(|r| {
                r.analyte == e.analyte
                    && ((r.from == e.from && r.to == e.to) || (r.from == e.to && r.to == e.from))
            });
            if duplicate {
                return Err(bad("duplicate rule for this unit pair"));
            }
            rules.push(ConversionRule {
                analyte: e.analyte,
                from: e.from,
                to: e.to,
                kind,
            });
        }
        Ok(Self { rules })
    }

    pub fn rules(&self) -> &[ConversionRule] {
        &self.rules
    }

    /// Whether `from` can be converted to `to` for this analyte.
    pub fn supports(&self, analyte: Analyte, from: UnitKind, to: UnitKind) -> bool {
        analyte.allows(from)
            && analyte.allows(to)
            && (from == to || self.find(analyte, from, to).is_some())
    }

    fn find(&self, analyte: Analyte, from: UnitKind, to: UnitKind) -> Option<(&ConversionRule, bool)> {
        self.rules.iter().find_map(|r| {
            if r.analyte != analyte {
                None
            } else if r.from == from && r.to == to {
                Some((r, true))
            } else if r.from == to && r.to == from {
                Some((r, false))
            } else {
                None
            }
        })
    }

    pub fn convert_analyte(
        &self,
        value: f64,
        analyte: Analyte,
        from: UnitKind,
        to: UnitKind,
    ) -> Result<f64, ConversionError> {
        for unit in [from, to] {
            if !analyte.allows(unit) {
                return Err(ConversionError::InvalidUnit { analyte, unit });
            }
        }
        if from == to {
            return Ok(value);
        }
        match self.find(analyte, from, to) {
            Some((rule, true)) => Ok(rule.forward(value)),
            Some((rule, false)) => Ok(rule.inverse(value)),
            None => Err(ConversionError::NoRule { analyte, from, to }),
        }
    }

    /// Convert a value of `measure` between two of its units.
    pub fn convert(
        &self,
        value: f64,
        measure: &Concept,
        from: UnitKind,
        to: UnitKind,
    ) -> Result<f64, ConversionError> {
        self.convert_analyte(value, measure.analyte, from, to)
    }
}
