//! HTTP server speaking the patient and obs resources of the OpenMRS REST API.

use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::Arc;

use axum::extract::{OriginalUri, Path, RawQuery, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::serve::Listener;
use axum::{Json, Router};
use labdash_ehr::wire::{self, ConceptRef, Link, ObsPage, ObsResource, PatientResource, PersonResource};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::fixtures::ObservationStore;

/// Page size used when a request has no `limit`.
pub const DEFAULT_LIMIT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailMode {
    None,
    /// Every request gets `503 Service Unavailable`.
    Unavailable,
    /// Connections are closed as soon as they are accepted.
    Drop,
}

impl FailMode {
    fn to_u8(self) -> u8 {
        match self {
            FailMode::None => 0,
            FailMode::Unavailable => 1,
            FailMode::Drop => 2,
        }
    }

    fn from_u8(v: u8) -> Self {
        match v {
            1 => FailMode::Unavailable,
            2 => FailMode::Drop,
            _ => FailMode::None,
        }
    }
}

impl FromStr for FailMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FailMode::None),
            "503" => Ok(FailMode::Unavailable),
            "drop" => Ok(FailMode::Drop),
            other => Err(format!("unknown fail mode `{other}` (expected none, 503 or drop)")),
        }
    }
}

impl fmt::Display for FailMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailMode::None => "none",
            FailMode::Unavailable => "503",
            FailMode::Drop => "drop",
        })
    }
}

/// Fail mode shared between the listener, the handlers and the owner.
#[derive(Debug, Clone)]
pub struct FaultSwitch(Arc<AtomicU8>);

impl FaultSwitch {
    pub fn new(mode: FailMode) -> Self {
        FaultSwitch(Arc::new(AtomicU8::new(mode.to_u8())))
    }

    pub fn get(&self) -> FailMode {
        FailMode::from_u8(self.0.load(Ordering::SeqCst))
    }

    pub fn set(&self, mode: FailMode) {
        self.0.store(mode.to_u8(), Ordering::SeqCst);
    }
}

struct FaultyListener {
    inner: TcpListener,
    fault: FaultSwitch,
}

impl Listener for FaultyListener {
    type Io = TcpStream;
    type Addr = SocketAddr;

    async fn accept(&mut self) -> (Self::Io, Self::Addr) {
        loop {
            let (stream, addr) = Listener::accept(&mut self.inner).await;
            if self.fault.get() == FailMode::Drop {
                drop(stream);
                continue;
            }
            return (stream, addr);
        }
    }

    fn local_addr(&self) -> io::Result<Self::Addr> {
        self.inner.local_addr()
    }
}

#[derive(Clone)]
struct AppState {
    store: Arc<ObservationStore>,
    fault: FaultSwitch,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    let body = serde_json::json!({ "error": { "message": message.into() } });
    (status, Json(body)).into_response()
}

/// Router serving the REST resources under both `/openmrs/ws/rest/v1` and `/ws/rest/v1`.
pub fn router(store: Arc<ObservationStore>, fault: FaultSwitch) -> Router {
    let state = AppState { store, fault };
    let api = Router::new()
        .route("/patient/{uuid}", get(patient))
        .route("/obs", get(obs));
    Router::new()
        .nest("/openmrs/ws/rest/v1", api.clone())
        .nest("/ws/rest/v1", api)
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such resource") })
        .layer(middleware::from_fn_with_state(state.clone(), faults))
        .with_state(state)
}

async fn faults(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let mut resp = if state.fault.get() == FailMode::Unavailable {
        error(StatusCode::SERVICE_UNAVAILABLE, "service unavailable (injected)")
    } else {
        next.run(req).await
    };
    // One request per connection, so a switch to `drop` takes effect on the next request.
    resp.headers_mut()
        .insert(header::CONNECTION, HeaderValue::from_static("close"));
    resp
}

fn parse_query(raw: Option<&str>, allowed: &[&str]) -> Result<Vec<(String, String)>, String> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (k, v) in url::form_urlencoded::parse(raw.unwrap_or("").as_bytes()) {
        if !allowed.contains(&k.as_ref()) {
            return Err(format!("unsupported query parameter `{k}`"));
        }
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(format!("query parameter `{k}` given more than once"));
        }
        out.push((k.into_owned(), v.into_owned()));
    }
    Ok(out)
}

fn param<'a>(params: &'a [(String, String)], name: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn check_view(params: &[(String, String)]) -> Result<(), String> {
    match param(params, "v") {
        None | Some("full" | "default" | "ref") => Ok(()),
        Some(other) => Err(format!("unknown representation `{other}`")),
    }
}

async fn patient(State(state): State<AppState>, Path(uuid): Path<String>, RawQuery(raw): RawQuery) -> Response {
    let params = match parse_query(raw.as_deref(), &["v"]) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if let Err(e) = check_view(&params) {
        return error(StatusCode::BAD_REQUEST, e);
    }
    match state.store.patient(&uuid) {
        Some(p) => Json(PatientResource {
            uuid: p.uuid.clone(),
            display: p.display.clone(),
            person: PersonResource {
                gender: p.gender.clone(),
                birthdate: p.birthdate.format("%Y-%m-%d").to_string(),
            },
        })
        .into_response(),
        None => error(StatusCode::NOT_FOUND, format!("patient `{uuid}` not found")),
    }
}

fn parse_count(params: &[(String, String)], name: &str, min: usize) -> Result<Option<usize>, String> {
    match param(params, name) {
        None => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n >= min => Ok(Some(n)),
            _ => Err(format!("`{name}` must be an integer >= {min}, got `{v}`")),
        },
    }
}

async fn obs(State(state): State<AppState>, headers: HeaderMap, OriginalUri(uri): OriginalUri, RawQuery(raw): RawQuery) -> Response {
    let params = match parse_query(raw.as_deref(), &["patient", "concept", "v", "limit", "startIndex"]) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let parsed = check_view(&params).and_then(|()| {
        let patient = param(&params, "patient").filter(|s| !s.is_empty()).ok_or("`patient` is required")?;
        let concept = param(&params, "concept").filter(|s| !s.is_empty()).ok_or("`concept` is required")?;
        let limit = parse_count(&params, "limit", 1)?.unwrap_or(DEFAULT_LIMIT);
        let start = parse_count(&params, "startIndex", 0)?.unwrap_or(0);
        Ok((patient, concept, limit, start))
    });
    let (patient, concept, limit, start) = match parsed {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    if state.store.patient(patient).is_none() {
        return error(StatusCode::NOT_FOUND, format!("patient `{patient}` not found"));
    }
    let all = state.store.observations(patient, concept);
    let end = start.saturating_add(limit).min(all.len());
    let results = all
        .get(start.min(all.len())..end)
        .unwrap_or(&[])
        .iter()
        .map(|o| ObsResource {
            uuid: o.uuid.clone(),
            concept: ConceptRef {
                uuid: o.concept_uuid.clone(),
                display: o.concept_display.clone(),
            },
            obs_datetime: wire::format_datetime(&o.obs_datetime),
            value: serde_json::json!(o.value),
        })
        .collect();

    let host = headers
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .unwrap_or("localhost");
    let link = |rel: &str, index: usize| {
        let query = url::form_urlencoded::Serializer::new(String::new())
            .append_pair("patient", patient)
            .append_pair("concept", concept)
            .append_pair("v", param(&params, "v").unwrap_or("full"))
            .append_pair("limit", &limit.to_string())
            .append_pair("startIndex", &index.to_string())
            .finish();
        Link {
            rel: rel.to_string(),
            uri: format!("http://{host}{}?{query}", uri.path()),
        }
    };
    let mut links = Vec::new();
    if start > 0 {
        links.push(link("prev", start.saturating_sub(limit)));
    }
    if end < all.len() {
        links.push(link("next", end));
    }
    Json(ObsPage { results, links }).into_response()
}

/// A running mock server. Dropping it stops the server.
pub struct MockServer {
    addr: SocketAddr,
    fault: FaultSwitch,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<io::Result<()>>>,
}

impl MockServer {
    pub async fn start(store: ObservationStore, bind: SocketAddr, mode: FailMode) -> io::Result<Self> {
        let listener = TcpListener::bind(bind).await?;
        let addr = listener.local_addr()?;
        let fault = FaultSwitch::new(mode);
        let app = router(Arc::new(store), fault.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let listener = FaultyListener {
            inner: listener,
            fault: fault.clone(),
        };
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(MockServer {
            addr,
            fault,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base url to configure a client with, including the `/openmrs` context path.
    pub fn base_url(&self) -> String {
        format!("http://{}/openmrs", self.addr)
    }

    pub fn fail_mode(&self) -> FailMode {
        self.fault.get()
    }

    pub fn set_fail_mode(&self, mode: FailMode) {
        self.fault.set(mode);
    }

    /// Stop accepting connections and wait for the server task to finish.
    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.take() {
            Some(task) => task.await.map_err(io::Error::other)?,
            None => Ok(()),
        }
    }

    /// Serve until the process receives Ctrl-C.
    pub async fn run_until_ctrl_c(self) -> io::Result<()> {
        tokio::signal::ctrl_c().await?;
        self.shutdown().await
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
