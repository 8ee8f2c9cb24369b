//! A stand-in for the OpenMRS REST endpoints the dashboard reads, backed by
//! CSV fixtures, plus a seeded generator for synthetic histories.

pub mod fixtures;
pub mod generator;
pub mod server;

pub use fixtures::{
    load_fixtures, load_patients, parse_patients, parse_rows, store_from_rows, FixtureError, FixtureRow,
    ObservationStore, PatientRecord, StoredObs,
};
pub use generator::{generate, write_csv, ConceptParams, GeneratorError, GeneratorSpec};
pub use server::{router, FailMode, FaultSwitch, MockServer};

use labdash_core::DashboardConfig;

/// The shipped default configuration, compiled in so the binary runs without a config file.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../../config/default-bands.toml");

pub fn default_config() -> DashboardConfig {
    DashboardConfig::from_toml_str(DEFAULT_CONFIG_TOML).expect("shipped config is valid")
}
