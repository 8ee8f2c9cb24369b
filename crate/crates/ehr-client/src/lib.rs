//! REST client for an OpenMRS-style EHR: patient headers and lab
//! observations, with a persistent cache that keeps the dashboard usable
//! while the EHR is unreachable.

pub mod cache;
mod client;
pub mod wire;

pub use cache::{CacheEntry, CacheError, CacheKey, DiskCache};
pub use client::{
    parse_patient, BasicAuth, ClientError, EhrClient, EhrEndpoint, Fetched, ObservationBatch,
    DEFAULT_TIMEOUT,
};
