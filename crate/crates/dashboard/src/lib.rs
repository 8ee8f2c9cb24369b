//! HTTP API for the lab results dashboard: patient summary gauges, the
//! per-visit table, trend series and the active reference ranges.

pub mod api;
pub mod error;
pub mod settings;

pub use api::{router, AppState};
pub use error::{ApiError, ErrorCode};
pub use settings::{prepare, Prepared, ServeArgs, Server, StartupError};
