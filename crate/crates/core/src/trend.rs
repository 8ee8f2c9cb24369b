//! The three dashboard views over a patient's observations: latest-value
//! gauges, a per-visit table and per-concept trend series.
//!
//! Wherever two observations compete for the same slot, the later one wins
//! (see [`Observation::recency_cmp`]).

use std::collections::BTreeMap;

use chrono::{DateTime, Datelike, FixedOffset, Month, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{ClassifyError, Classification};
use crate::config::DashboardConfig;
use crate::model::{Observation, UnitKind};

pub const MIN_PAGE_SIZE: usize = 10;
pub const MAX_PAGE_SIZE: usize = 100;

/// The observation of `concept` with the latest timestamp, if any.
pub fn latest_observation<'a>(obs: &'a [Observation], concept: &str) -> Option<&'a Observation> {
    obs.iter()
        .filter(|o| o.concept_uuid() == concept)
        .max_by(|a, b| a.recency_cmp(b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeSummary {
    pub concept_uuid: String,
    /// Latest value expressed in the band spec's unit.
    pub latest_value: f64,
    pub unit: UnitKind,
    pub obs_datetime: DateTime<FixedOffset>,
    pub classification: Classification,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeError {
    pub concept_uuid: String,
    pub error: ClassifyError,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaugeReport {
    /// In registry order.
    pub gauges: Vec<GaugeSummary>,
    /// Registered concepts with no observation.
    pub missing: Vec<String>,
    /// Concepts whose latest value could not be classified.
    pub errors: Vec<GaugeError>,
}

pub fn build_gauge_summaries(obs: &[Observation], config: &DashboardConfig) -> GaugeReport {
    let mut report = GaugeReport::default();
    for concept in config.registry().iter() {
        let Some(latest) = latest_observation(obs, &concept.uuid) else {
            report.missing.push(concept.uuid.clone());
            continue;
        };
        let summary = gauge_for(latest, config);
        match summary {
            Ok(g) => report.gauges.push(g),
            Err(error) => report.errors.push(GaugeError {
                concept_uuid: concept.uuid.clone(),
                error,
            }),
        }
    }
    report
}

fn gauge_for(latest: &Observation, config: &DashboardConfig) -> Result<GaugeSummary, ClassifyError> {
    let concept = latest.concept_uuid();
    let spec = config
        .band_spec(concept)
        .ok_or_else(|| ClassifyError::UnknownConcept(concept.to_string()))?;
    let value = config.convert(concept, latest.value(), latest.unit(), spec.unit)?;
    let classification = config.classify(concept, value, spec.unit)?;
    Ok(GaugeSummary {
        concept_uuid: concept.to_string(),
        latest_value: value,
        unit: spec.unit,
        obs_datetime: latest.obs_datetime(),
        classification,
    })
}

/// One table row: every concept measured on one visit date, in canonical
/// units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRow {
    pub visit_date: NaiveDate,
    pub values: BTreeMap<String, f64>,
}

/// Rows newest first. Observations of unregistered concepts, or whose unit
/// cannot reach the canonical unit, are left out.
pub fn build_visit_table(obs: &[Observation], config: &DashboardConfig) -> Vec<VisitRow> {
    let mut by_date: BTreeMap<NaiveDate, BTreeMap<&str, &Observation>> = BTreeMap::new();
    for o in obs {
        if !config.registry().contains(o.concept_uuid()) {
            continue;
        }
        let slot = by_date
            .entry(o.visit_date())
            .or_default()
            .entry(o.concept_uuid())
            .or_insert(o);
        if o.recency_cmp(slot).is_gt() {
            *slot = o;
        }
    }

    by_date
        .into_iter()
        .rev()
        .filter_map(|(visit_date, cells)| {
            let values: BTreeMap<String, f64> = cells
                .into_iter()
                .filter_map(|(uuid, o)| {
                    let canonical = config.registry().get(uuid)?.canonical_unit;
                    let v = config.convert(uuid, o.value(), o.unit(), canonical).ok()?;
                    Some((uuid.to_string(), v))
                })
                .collect();
            (!values.is_empty()).then_some(VisitRow { visit_date, values })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed date `{0}`; expected YYYY-MM-DD")]
pub struct MalformedDate(pub String);

/// Strict `YYYY-MM-DD` parse for table searches.
pub fn parse_visit_date(s: &str) -> Result<NaiveDate, MalformedDate> {
    let bytes = s.as_bytes();
    let shape_ok = bytes.len() == 10
        && bytes[4] == b'-'
        && bytes[7] == b'-'
        && bytes
            .iter()
            .enumerate()
            .all(|(i, b)| i == 4 || i == 7 || b.is_ascii_digit());
    if !shape_ok {
        return Err(MalformedDate(s.to_string()));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| MalformedDate(s.to_string()))
}

/// Exact-date search.
pub fn filter_rows(rows: &[VisitRow], date_query: NaiveDate) -> Vec<VisitRow> {
    rows.iter()
        .filter(|r| r.visit_date == date_query)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageRequest {
    page: usize,
    size: usize,
    date_query: Option<NaiveDate>,
}

impl PageRequest {
    /// `size` is clamped to `[10, 100]`, `page` to at least 1.
    pub fn new(page: usize, size: usize, date_query: Option<NaiveDate>) -> Self {
        Self {
            page: page.max(1),
            size: size.clamp(MIN_PAGE_SIZE, MAX_PAGE_SIZE),
            date_query,
        }
    }

    pub fn page(&self) -> usize {
        self.page
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn date_query(&self) -> Option<NaiveDate> {
        self.date_query
    }
}

impl Default for PageRequest {
    fn default() -> Self {
        Self::new(1, MIN_PAGE_SIZE, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Page<T> {
    pub rows: Vec<T>,
    pub total_rows: usize,
    pub total_pages: usize,
    pub page: usize,
    pub size: usize,
}

pub fn paginate<T: Clone>(rows: &[T], req: &PageRequest) -> Page<T> {
    let total_rows = rows.len();
    let size = req.size();
    let start = (req.page() - 1).saturating_mul(size).min(total_rows);
    let end = start.saturating_add(size).min(total_rows);
    Page {
        rows: rows[start..end].to_vec(),
        total_rows,
        total_pages: total_rows.div_ceil(size),
        page: req.page(),
        size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    pub obs_datetime: DateTime<FixedOffset>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub concept_uuid: String,
    pub unit: UnitKind,
    pub points: Vec<TrendPoint>,
    /// Month name of each point in the clinic timezone, one per point.
    pub month_labels: Vec<String>,
}

/// Trend series in the concept's canonical unit. Unknown concepts and
/// unconvertible observations yield fewer (or no) points.
pub fn build_trend_series(obs: &[Observation], concept: &str, config: &DashboardConfig) -> TrendSeries {
    let unit = config
        .registry()
        .get(concept)
        .map_or(UnitKind::MmolPerL, |c| c.canonical_unit);
    build_series(obs, concept, unit, config, true).unwrap_or_else(|_| TrendSeries {
        concept_uuid: concept.to_string(),
        unit,
        points: vec![],
        month_labels: vec![],
    })
}

/// Trend series converted to `unit`; fails if the unit is not reachable for
/// the concept.
pub fn build_trend_series_in(
    obs: &[Observation],
    concept: &str,
    unit: UnitKind,
    config: &DashboardConfig,
) -> Result<TrendSeries, ClassifyError> {
    let c = config
        .registry()
        .get(concept)
        .ok_or_else(|| ClassifyError::UnknownConcept(concept.to_string()))?;
    config.convert(concept, 0.0, c.canonical_unit, unit)?;
    build_series(obs, concept, unit, config, false)
}

fn build_series(
    obs: &[Observation],
    concept: &str,
    unit: UnitKind,
    config: &DashboardConfig,
    skip_unconvertible: bool,
) -> Result<TrendSeries, ClassifyError> {
    let mut selected: Vec<&Observation> = obs.iter().filter(|o| o.concept_uuid() == concept).collect();
    selected.sort_by(|a, b| a.recency_cmp(b));
    // equal timestamps collapse onto the winning (last) observation
    let mut deduped: Vec<&Observation> = Vec::with_capacity(selected.len());
    for o in selected {
        match deduped.last_mut() {
            Some(last) if last.obs_datetime() == o.obs_datetime() => *last = o,
            _ => deduped.push(o),
        }
    }

    let tz = config.clinic_timezone();
    let mut points = Vec::with_capacity(deduped.len());
    let mut month_labels = Vec::with_capacity(deduped.len());
    for o in deduped {
        let value = match config.convert(concept, o.value(), o.unit(), unit) {
            Ok(v) => v,
            Err(_) if skip_unconvertible => continue,
            Err(e) => return Err(e),
        };
        let month = o.obs_datetime().with_timezone(&tz).month();
        let label = Month::try_from(month as u8).map(|m| m.name()).unwrap_or("");
        points.push(TrendPoint {
            obs_datetime: o.obs_datetime(),
            value,
        });
        month_labels.push(label.to_string());
    }
    Ok(TrendSeries {
        concept_uuid: concept.to_string(),
        unit,
        points,
        month_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrafficColor;

    const CONFIG: &str = r#"
clinic_timezone = "America/New_York"

[[concepts]]
uuid = "a1c"
name = "HbA1c"
unit = "percent"
profile = "glycemic"
analyte = "hba1c"

[[concepts]]
uuid = "fpg"
name = "FPG"
unit = "mmol_per_L"
profile = "glycemic"
analyte = "glucose"

[[bands]]
concept_uuid = "a1c"
unit = "percent"
intervals = [[0.0, 5.7, "green"], [5.7, 6.5, "yellow"], [6.5, "inf", "red"]]

[[bands]]
concept_uuid = "fpg"
unit = "mmol_per_L"
intervals = [[0.0, 5.6, "green"], [5.6, 7.0, "yellow"], [7.0, "inf", "red"]]

[[conversions]]
analyte = "glucose"
from = "mmol_per_L"
to = "mg_per_dL"
factor = 18.0156
"#;

    fn config() -> DashboardConfig {
        DashboardConfig::from_toml_str(CONFIG).unwrap()
    }

    fn obs(cfg: &DashboardConfig, concept: &str, value: f64, at: &str) -> Observation {
        let unit = cfg.registry().get(concept).unwrap().canonical_unit;
        cfg.observation("p", concept, value, unit, DateTime::parse_from_rfc3339(at).unwrap())
            .unwrap()
    }

    fn date(s: &str) -> NaiveDate {
        parse_visit_date(s).unwrap()
    }

    #[test]
    fn latest_picks_max_datetime() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 7.0, "2018-11-30T09:00:00-05:00"),
            obs(&cfg, "a1c", 6.0, "2018-10-01T09:00:00-04:00"),
        ];
        assert_eq!(latest_observation(&list, "a1c").unwrap().value(), 7.0);
        assert!(latest_observation(&list, "fpg").is_none());
        assert_eq!(latest_observation(&list[..1], "a1c"), Some(&list[0]));
    }

    #[test]
    fn latest_tie_breaks_on_record_id() {
        let cfg = config();
        let a = obs(&cfg, "a1c", 7.0, "2018-11-30T09:00:00-05:00").with_record_id("b");
        let b = obs(&cfg, "a1c", 6.0, "2018-11-30T09:00:00-05:00").with_record_id("a");
        let list = vec![a, b];
        assert_eq!(latest_observation(&list, "a1c").unwrap().record_id(), Some("b"));
    }

    #[test]
    fn gauges_report_missing_concepts() {
        let cfg = config();
        let empty = build_gauge_summaries(&[], &cfg);
        assert!(empty.gauges.is_empty());
        assert_eq!(empty.missing, vec!["a1c".to_string(), "fpg".to_string()]);

        let list = vec![obs(&cfg, "a1c", 6.5, "2018-11-30T09:00:00-05:00")];
        let report = build_gauge_summaries(&list, &cfg);
        assert_eq!(report.gauges.len(), 1);
        assert_eq!(report.missing, vec!["fpg".to_string()]);
        assert_eq!(report.gauges[0].classification.color, TrafficColor::Red);
    }

    #[test]
    fn gauge_converts_into_spec_unit() {
        let cfg = config();
        let dt = DateTime::parse_from_rfc3339("2018-11-30T09:00:00-05:00").unwrap();
        let o = cfg.observation("p", "fpg", 130.0, UnitKind::MgPerDl, dt).unwrap();
        let report = build_gauge_summaries(&[o], &cfg);
        let g = &report.gauges[0];
        assert_eq!(g.unit, UnitKind::MmolPerL);
        assert!((g.latest_value - 130.0 / 18.0156).abs() < 1e-12);
        assert_eq!(g.classification.color, TrafficColor::Red);
    }

    #[test]
    fn table_groups_by_date_newest_first() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 6.0, "2018-10-31T09:00:00-04:00"),
            obs(&cfg, "a1c", 6.2, "2018-11-30T09:00:00-05:00"),
            obs(&cfg, "fpg", 6.1, "2018-11-30T09:10:00-05:00"),
            obs(&cfg, "fpg", 5.1, "2018-09-28T09:10:00-04:00"),
        ];
        let rows = build_visit_table(&list, &cfg);
        let dates: Vec<_> = rows.iter().map(|r| r.visit_date).collect();
        assert_eq!(dates, vec![date("2018-11-30"), date("2018-10-31"), date("2018-09-28")]);
        assert_eq!(rows[0].values.len(), 2);
    }

    #[test]
    fn table_later_same_day_wins() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 6.9, "2018-11-30T14:00:00-05:00"),
            obs(&cfg, "a1c", 6.2, "2018-11-30T08:00:00-05:00"),
        ];
        let rows = build_visit_table(&list, &cfg);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].values["a1c"], 6.9);
    }

    #[test]
    fn visit_date_uses_clinic_timezone() {
        let cfg = config();
        // 02:00 UTC on Dec 1 is still Nov 30 in New York
        let list = vec![obs(&cfg, "a1c", 6.0, "2018-12-01T02:00:00+00:00")];
        let rows = build_visit_table(&list, &cfg);
        assert_eq!(rows[0].visit_date, date("2018-11-30"));
    }

    #[test]
    fn filter_is_exact_match() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 6.0, "2018-10-31T09:00:00-04:00"),
            obs(&cfg, "a1c", 6.2, "2018-11-30T09:00:00-05:00"),
        ];
        let rows = build_visit_table(&list, &cfg);
        let hit = filter_rows(&rows, date("2018-11-30"));
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].visit_date, date("2018-11-30"));
        assert!(filter_rows(&rows, date("2018-11-29")).is_empty());
        let single = &rows[..1];
        assert_eq!(filter_rows(single, single[0].visit_date), single.to_vec());
    }

    #[test]
    fn malformed_dates_rejected() {
        for bad in ["2018-1-30", "2018/11/30", "30-11-2018", "2018-02-30", "", "2018-11-30 "] {
            assert!(parse_visit_date(bad).is_err(), "{bad}");
        }
        assert!(parse_visit_date("2018-11-30").is_ok());
    }

    #[test]
    fn pagination_arithmetic() {
        let rows: Vec<u32> = (0..25).collect();
        let page = paginate(&rows, &PageRequest::new(3, 10, None));
        assert_eq!(page.rows, vec![20, 21, 22, 23, 24]);
        assert_eq!((page.total_rows, page.total_pages), (25, 3));

        assert_eq!(PageRequest::new(1, 5, None).size(), 10);
        assert_eq!(PageRequest::new(1, 500, None).size(), 100);
        assert_eq!(PageRequest::new(0, 10, None).page(), 1);

        let beyond = paginate(&rows, &PageRequest::new(999, 10, None));
        assert!(beyond.rows.is_empty());
        assert_eq!(beyond.total_pages, 3);

        let none: Vec<u32> = vec![];
        assert_eq!(paginate(&none, &PageRequest::default()).total_pages, 0);
    }

    #[test]
    fn trend_sorted_with_month_labels() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 6.4, "2018-11-30T09:00:00-05:00"),
            obs(&cfg, "a1c", 6.1, "2018-10-31T09:00:00-04:00"),
        ];
        let series = build_trend_series(&list, "a1c", &cfg);
        let values: Vec<f64> = series.points.iter().map(|p| p.value).collect();
        assert_eq!(values, vec![6.1, 6.4]);
        assert_eq!(series.month_labels, vec!["October", "November"]);

        let reversed: Vec<_> = list.iter().rev().cloned().collect();
        assert_eq!(build_trend_series(&reversed, "a1c", &cfg), series);

        let empty = build_trend_series(&[], "a1c", &cfg);
        assert!(empty.points.is_empty() && empty.month_labels.is_empty());
    }

    #[test]
    fn trend_unit_conversion() {
        let cfg = config();
        let list = vec![obs(&cfg, "fpg", 5.0, "2018-11-30T09:00:00-05:00")];
        let mg = build_trend_series_in(&list, "fpg", UnitKind::MgPerDl, &cfg).unwrap();
        assert!((mg.points[0].value - 90.078).abs() < 1e-9);
        assert_eq!(mg.unit, UnitKind::MgPerDl);
        assert!(build_trend_series_in(&list, "a1c", UnitKind::MgPerDl, &cfg).is_err());
        assert!(build_trend_series_in(&list, "nope", UnitKind::MmolPerL, &cfg).is_err());
    }

    #[test]
    fn month_label_repeats_within_month() {
        let cfg = config();
        let list = vec![
            obs(&cfg, "a1c", 6.4, "2018-11-02T09:00:00-04:00"),
            obs(&cfg, "a1c", 6.1, "2018-11-30T09:00:00-05:00"),
        ];
        let series = build_trend_series(&list, "a1c", &cfg);
        assert_eq!(series.month_labels, vec!["November", "November"]);
    }
}
