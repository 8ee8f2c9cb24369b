//! Domain model, reference-band classification and dashboard views for a
//! diabetes lab dashboard.

pub mod classify;
pub mod config;
pub mod model;
pub mod trend;
pub mod units;

pub use classify::{classification_severity, classify, Classification, ClassifyError};
pub use config::{ConfigError, ConfigFile, DashboardConfig, ValidationError};
pub use model::{
    validate_band_spec, Analyte, Band, BandSpec, BandSpecError, Concept, ConceptRegistry, Gender,
    ModelError, Observation, PatientHeader, ProfileGroup, TerminologyCode, TrafficColor, UnitKind,
};
pub use trend::{
    build_gauge_summaries, build_trend_series, build_trend_series_in, build_visit_table,
    filter_rows, latest_observation, paginate, parse_visit_date, GaugeReport, GaugeSummary, Page,
    PageRequest, TrendPoint, TrendSeries, VisitRow, MAX_PAGE_SIZE, MIN_PAGE_SIZE,
};
pub use units::{ConversionEntry, ConversionError, ConversionTable};
