//! Route handlers. Every handler validates its query before touching the EHR.

use std::any::Any;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::to_bytes;
use axum::extract::{Path, RawQuery, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use labdash_core::{
    build_gauge_summaries, build_trend_series_in, build_visit_table, filter_rows, paginate, parse_visit_date,
    BandSpec, ClassifyError, ConfigFile, DashboardConfig, GaugeSummary, Observation, PageRequest, PatientHeader,
    ProfileGroup, TrafficColor, TrendSeries, UnitKind, MIN_PAGE_SIZE,
};
use labdash_ehr::{ClientError, EhrClient};
use serde::Serialize;
use tower_http::catch_panic::CatchPanicLayer;
use tower_http::services::ServeDir;
use tracing::warn;

use crate::error::{ApiError, ErrorCode};

/// Largest error body the safety net will read back into a message.
const MAX_ERROR_BODY: usize = 4096;

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<DashboardConfig>,
    pub client: EhrClient,
}

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/patients/{uuid}/summary", get(summary))
        .route("/patients/{uuid}/table", get(table))
        .route("/patients/{uuid}/trends", get(trends))
        .route("/config/ranges", get(ranges))
        .fallback(|| async { ApiError::bad_request("no such endpoint").with_status(StatusCode::NOT_FOUND) })
        .method_not_allowed_fallback(|| async {
            ApiError::bad_request("method not allowed").with_status(StatusCode::METHOD_NOT_ALLOWED)
        })
        .with_state(state);
    let app = Router::new().nest("/api", api);
    let app = match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(|| async { ApiError::bad_request("no such endpoint").with_status(StatusCode::NOT_FOUND) }),
    };
    app.layer(middleware::from_fn(api_errors_only))
        .layer(CatchPanicLayer::custom(panic_response))
}

fn panic_response(_: Box<dyn Any + Send + 'static>) -> Response {
    ApiError::internal("handler panicked").into_response()
}

/// Rewrite any non-2xx response that is not already an ApiError (framework
/// rejections, static file errors) into one.
async fn api_errors_only(req: Request, next: Next) -> Response {
    let resp = next.run(req).await;
    let status = resp.status();
    if status.is_success() || status.is_redirection() || status == StatusCode::NOT_MODIFIED {
        return resp;
    }
    let is_json = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .is_some_and(|v| v.as_bytes().starts_with(b"application/json"));
    if is_json {
        return resp;
    }
    let body = to_bytes(resp.into_body(), MAX_ERROR_BODY).await.unwrap_or_default();
    let message = String::from_utf8_lossy(&body).trim().to_string();
    let code = match status {
        s if s.is_client_error() => ErrorCode::BadRequest,
        StatusCode::SERVICE_UNAVAILABLE => ErrorCode::EhrUnavailable,
        _ => ErrorCode::Internal,
    };
    let message = if message.is_empty() {
        status.canonical_reason().unwrap_or("error").to_string()
    } else {
        message
    };
    ApiError::new(code, message).with_status(status).into_response()
}

/// Parse a query string, rejecting unknown and repeated parameters.
fn parse_query(raw: Option<&str>, allowed: &[&str]) -> Result<Vec<(String, String)>, ApiError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, v) in url::form_urlencoded::parse(raw.unwrap_or("").as_bytes()) {
        if !allowed.contains(&k.as_ref()) {
            return Err(ApiError::bad_request(format!(
                "unknown query parameter `{k}` (expected one of: {})",
                allowed.join(", ")
            )));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(ApiError::bad_request(format!("query parameter `{k}` given more than once")));
        }
        out.push((k.into_owned(), v.into_owned()));
    }
    Ok(out)
}

fn param<'a>(params: &'a [(String, String)], name: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn parse_uint(params: &[(String, String)], name: &str) -> Result<Option<usize>, ApiError> {
    param(params, name)
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| ApiError::bad_request(format!("`{name}` must be a non-negative integer, got `{v}`")))
        })
        .transpose()
}

struct PatientData {
    header: PatientHeader,
    observations: Vec<Observation>,
    stale: bool,
    cached_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Serialize)]
struct Freshness {
    stale: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    cached_at: Option<DateTime<Utc>>,
}

impl PatientData {
    fn freshness(&self) -> Freshness {
        Freshness {
            stale: self.stale,
            cached_at: self.cached_at,
        }
    }
}

async fn fetch_patient(state: &AppState, uuid: &str) -> Result<PatientData, ApiError> {
    let (header, obs) = tokio::join!(
        state.client.fetch_patient(uuid),
        state.client.fetch_all_observations(uuid)
    );
    let (header, obs) = match (header, obs) {
        (Ok(h), Ok(o)) => (h, o),
        (Err(e @ ClientError::UnknownPatient(_)), _) | (_, Err(e @ ClientError::UnknownPatient(_))) => {
            return Err(e.into())
        }
        (Err(e), _) | (_, Err(e)) => return Err(e.into()),
    };
    if obs.value.skipped_invalid + obs.value.skipped_non_numeric > 0 {
        warn!(
            patient = uuid,
            non_numeric = obs.value.skipped_non_numeric,
            invalid = obs.value.skipped_invalid,
            "some observations were skipped"
        );
    }
    let stale = header.stale || obs.stale;
    Ok(PatientData {
        header: header.value,
        observations: obs.value.observations,
        stale,
        cached_at: stale.then(|| header.fetched_at.min(obs.fetched_at)),
    })
}

#[derive(Debug, Serialize)]
struct GaugeView<'a> {
    #[serde(flatten)]
    summary: GaugeSummary,
    concept_name: &'a str,
    profile: ProfileGroup,
    bands: &'a BandSpec,
}

#[derive(Debug, Serialize)]
struct UnclassifiedView {
    concept_uuid: String,
    message: String,
}

#[derive(Debug, Serialize)]
struct SummaryResponse<'a> {
    header: PatientHeader,
    gauges: Vec<GaugeView<'a>>,
    missing: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    unclassified: Vec<UnclassifiedView>,
    #[serde(flatten)]
    freshness: Freshness,
}

async fn summary(
    State(state): State<AppState>,
    Path(uuid): Path<String>,
    RawQuery(raw): RawQuery,
) -> Result<Response, ApiError> {
    parse_query(raw.as_deref(), &[])?;
    let data = fetch_patient(&state, &uuid).await?;
    let config = &state.config;
    let report = build_gauge_summaries(&data.observations, config);
    let gauges = report
        .gauges
        .into_iter()
        .map(|summary| {
            let concept = config.registry().get(&summary.concept_uuid).expect("gauges are built from the registry");
            let bands = config.band_spec(&summary.concept_uuid).expect("every concept has bands");
            GaugeView {
                summary,
                concept_name: &concept.name,
                profile: concept.profile,
                bands,
            }
        })
        .collect();
    let unclassified = report
        .errors
        .into_iter()
        .map(|e| UnclassifiedView {
            concept_uuid: e.concept_uuid,
            message: e.error.to_string(),
        })
        .collect();
    let body = SummaryResponse {
        header: data.header.clone(),
        gauges,
        missing: report.missing,
        unclassified,
        freshness: data.freshness(),
    };
    Ok(Json(body).into_response())
}

#[derive(Debug, Serialize)]
struct Cell {
    concept_uuid: String,
    value: f64,
    unit: UnitKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    color: Option<TrafficColor>,
}

#[derive(Debug, Serialize)]
struct TableRow {
    visit_date: NaiveDate,
    cells: Vec<Cell>,
}

#[derive(Debug, Serialize)]
struct Column<'a> {
    concept_uuid: &'a str,
    name: &'a str,
    unit: UnitKind,
    profile: ProfileGroup,
}

#[derive(Debug, Serialize)]
struct TableResponse<'a> {
    columns: Vec<Column<'a>>,
    rows: Vec<TableRow>,
    total_rows: usize,
    total_pages: usize,
    page: usize,
    size: usize,
    #[serde(flatten)]
    freshness: Freshness,
}

async fn table(
    State(state): State<AppState>,
    Path(uuid): Path<String>,
    RawQuery(raw): RawQuery,
) -> Result<Response, ApiError> {
    let params = parse_query(raw.as_deref(), &["page", "size", "date"])?;
    let page = parse_uint(&params, "page")?.unwrap_or(1);
    let size = parse_uint(&params, "size")?.unwrap_or(MIN_PAGE_SIZE);
    let date = param(&params, "date")
        .map(parse_visit_date)
        .transpose()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let request = PageRequest::new(page, size, date);

    let data = fetch_patient(&state, &uuid).await?;
    let config = &state.config;
    let rows = build_visit_table(&data.observations, config);
    let rows = match request.date_query() {
        Some(d) => filter_rows(&rows, d),
        None => rows,
    };
    let page = paginate(&rows, &request);

    let registry = config.registry();
    let rows = page
        .rows
        .into_iter()
        .map(|row| TableRow {
            visit_date: row.visit_date,
            cells: registry
                .iter()
                .filter_map(|c| {
                    let value = *row.values.get(&c.uuid)?;
                    let color = config.classify(&c.uuid, value, c.canonical_unit).ok().map(|k| k.color);
                    Some(Cell {
                        concept_uuid: c.uuid.clone(),
                        value,
                        unit: c.canonical_unit,
                        color,
                    })
                })
                .collect(),
        })
        .collect();
    let columns = registry
        .iter()
        .map(|c| Column {
            concept_uuid: &c.uuid,
            name: &c.name,
            unit: c.canonical_unit,
            profile: c.profile,
        })
        .collect();
    Ok(Json(TableResponse {
        columns,
        rows,
        total_rows: page.total_rows,
        total_pages: page.total_pages,
        page: page.page,
        size: page.size,
        freshness: data.freshness(),
    })
    .into_response())
}

#[derive(Debug, Serialize)]
struct TrendResponse {
    #[serde(flatten)]
    series: TrendSeries,
    #[serde(flatten)]
    freshness: Freshness,
}

async fn trends(
    State(state): State<AppState>,
    Path(uuid): Path<String>,
    RawQuery(raw): RawQuery,
) -> Result<Response, ApiError> {
    let params = parse_query(raw.as_deref(), &["concept", "unit"])?;
    let config = &state.config;
    let concept_uuid = param(&params, "concept").ok_or_else(|| ApiError::bad_request("`concept` is required"))?;
    let concept = config
        .registry()
        .get(concept_uuid)
        .ok_or_else(|| ApiError::bad_request(format!("unknown concept `{concept_uuid}`")))?;
    let unit = match param(&params, "unit") {
        Some(u) => u.parse::<UnitKind>().map_err(|e| ApiError::bad_request(e.to_string()))?,
        None => concept.canonical_unit,
    };
    if let Err(e) = config.convert(concept_uuid, 0.0, concept.canonical_unit, unit) {
        return Err(ApiError::bad_request(format!("unit {unit} is not supported for {}: {e}", concept.name)));
    }

    let data = fetch_patient(&state, &uuid).await?;
    let series = build_trend_series_in(&data.observations, concept_uuid, unit, config).map_err(|e| match e {
        ClassifyError::Conversion(_) | ClassifyError::UnknownConcept(_) => ApiError::bad_request(e.to_string()),
        other => ApiError::internal(other.to_string()),
    })?;
    Ok(Json(TrendResponse {
        series,
        freshness: data.freshness(),
    })
    .into_response())
}

async fn ranges(State(state): State<AppState>, RawQuery(raw): RawQuery) -> Result<Json<ConfigFile>, ApiError> {
    parse_query(raw.as_deref(), &[])?;
    Ok(Json(state.config.source().clone()))
}
