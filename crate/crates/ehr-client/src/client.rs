use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::future::join_all;
use labdash_core::{DashboardConfig, Gender, Observation, PatientHeader};
use thiserror::Error;
use tracing::{debug, warn};
use url::Url;

use crate::cache::{CacheError, CacheKey, DiskCache};
use crate::wire::{self, ObsPage, PatientResource, REST_PREFIX};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicAuth {
    pub username: String,
    pub password: String,
}

/// Where and how to reach the EHR.
#[derive(Debug, Clone)]
pub struct EhrEndpoint {
    base_url: Url,
    auth: Option<BasicAuth>,
    request_timeout: Duration,
    page_limit: Option<u32>,
}

impl EhrEndpoint {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let base_url =
            Url::parse(base_url).map_err(|e| ClientError::InvalidEndpoint(format!("{base_url}: {e}")))?;
        if base_url.cannot_be_a_base() || !matches!(base_url.scheme(), "http" | "https") {
            return Err(ClientError::InvalidEndpoint(format!(
                "{base_url}: must be an absolute http(s) URL"
            )));
        }
        Ok(Self {
            base_url,
            auth: None,
            request_timeout: DEFAULT_TIMEOUT,
            page_limit: None,
        })
    }

    pub fn with_auth(mut self, username: impl Into<String>, password: impl Into<String>) -> Self {
        self.auth = Some(BasicAuth {
            username: username.into(),
            password: password.into(),
        });
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self, ClientError> {
        if timeout.is_zero() {
            return Err(ClientError::InvalidEndpoint("timeout must be positive".into()));
        }
        self.request_timeout = timeout;
        Ok(self)
    }

    /// Page size requested from the obs endpoint; `None` leaves it to the
    /// server default.
    pub fn with_page_limit(mut self, limit: Option<u32>) -> Self {
        self.page_limit = limit.filter(|&n| n > 0);
        self
    }

    pub fn base_url(&self) -> &Url {
        &self.base_url
    }

    fn resource_url(&self, segments: &[&str]) -> Url {
        let mut url = self.base_url.clone();
        {
            let mut path = url.path_segments_mut().expect("checked in new()");
            path.pop_if_empty();
            path.extend(REST_PREFIX);
            path.extend(segments);
        }
        url
    }

    pub fn patient_url(&self, patient_uuid: &str) -> Url {
        let mut url = self.resource_url(&["patient", patient_uuid]);
        url.query_pairs_mut().append_pair("v", "full");
        url
    }

    pub fn obs_url(&self, patient_uuid: &str, concept_uuid: &str) -> Url {
        let mut url = self.resource_url(&["obs"]);
        {
            let mut q = url.query_pairs_mut();
            q.append_pair("patient", patient_uuid)
                .append_pair("concept", concept_uuid)
                .append_pair("v", "full");
            if let Some(limit) = self.page_limit {
                q.append_pair("limit", &limit.to_string())
                    .append_pair("startIndex", "0");
            }
        }
        url
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid EHR endpoint: {0}")]
    InvalidEndpoint(String),
    #[error("EHR unavailable and nothing cached: {0}")]
    Unavailable(String),
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("EHR protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// A fetched value and whether it came from the offline cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Fetched<T> {
    pub value: T,
    pub stale: bool,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationBatch {
    /// In server order.
    pub observations: Vec<Observation>,
    /// Results with a coded or otherwise non-numeric value.
    pub skipped_non_numeric: usize,
    /// Numeric results that are not valid measurements (e.g. negative).
    pub skipped_invalid: usize,
}

enum Response {
    Body(Vec<u8>),
    NotFound,
}

/// Client for the patient and obs REST resources with an on-disk fallback.
///
/// Every successful fetch refreshes the cache; when the EHR cannot be
/// reached (transport failure or 5xx) the last cached payload is served and
/// flagged stale.
#[derive(Debug, Clone)]
pub struct EhrClient {
    endpoint: Arc<EhrEndpoint>,
    http: reqwest::Client,
    cache: Arc<DiskCache>,
    config: Arc<DashboardConfig>,
}

enum Unreachable {
    Unavailable(String),
    Failed(ClientError),
}

impl From<ClientError> for Unreachable {
    fn from(e: ClientError) -> Self {
        Unreachable::Failed(e)
    }
}

impl EhrClient {
    pub fn new(
        endpoint: EhrEndpoint,
        cache: Arc<DiskCache>,
        config: Arc<DashboardConfig>,
    ) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(endpoint.request_timeout)
            .connect_timeout(endpoint.request_timeout)
            .build()
            .map_err(|e| ClientError::InvalidEndpoint(e.to_string()))?;
        Ok(Self {
            endpoint: Arc::new(endpoint),
            http,
            cache,
            config,
        })
    }

    pub fn endpoint(&self) -> &EhrEndpoint {
        &self.endpoint
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }

    pub fn config(&self) -> &DashboardConfig {
        &self.config
    }

    async fn get(&self, url: &Url) -> Result<Response, Unreachable> {
        let mut req = self.http.get(url.clone()).header("Accept", "application/json");
        if let Some(auth) = &self.endpoint.auth {
            req = req.basic_auth(&auth.username, Some(&auth.password));
        }
        let resp = req
            .send()
            .await
            .map_err(|e| Unreachable::Unavailable(format!("GET {url}: {e}")))?;
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Ok(Response::NotFound);
        }
        if status.is_server_error() {
            return Err(Unreachable::Unavailable(format!("GET {url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(ClientError::Protocol(format!("GET {url}: HTTP {status}")).into());
        }
        let body = resp
            .bytes()
            .await
            .map_err(|e| Unreachable::Unavailable(format!("GET {url}: {e}")))?;
        Ok(Response::Body(body.to_vec()))
    }

    fn store(&self, key: &CacheKey, payload: &[u8]) {
        if let Err(e) = self.cache.put(key, payload) {
            warn!(%key, error = %e, "could not update offline cache");
        }
    }

    fn from_cache(&self, key: &CacheKey, reason: String) -> Result<(Vec<u8>, DateTime<Utc>), ClientError> {
        match self.cache.get(key) {
            Ok(Some(entry)) => {
                debug!(%key, %reason, "serving cached payload");
                Ok((entry.payload, entry.fetched_at))
            }
            Ok(None) => Err(ClientError::Unavailable(reason)),
            Err(CacheError::Corrupt { path, reason: why }) => {
                warn!(path = %path.display(), %why, "ignoring corrupt cache entry");
                Err(ClientError::Unavailable(reason))
            }
            Err(e) => Err(e.into()),
        }
    }

    pub async fn fetch_patient(&self, patient_uuid: &str) -> Result<Fetched<PatientHeader>, ClientError> {
        let key = CacheKey::header(patient_uuid);
        let url = self.endpoint.patient_url(patient_uuid);
        match self.get(&url).await {
            Ok(Response::Body(body)) => {
                let header = parse_patient(&body, Utc::now())?;
                self.store(&key, &body);
                Ok(Fetched {
                    value: header,
                    stale: false,
                    fetched_at: Utc::now(),
                })
            }
            Ok(Response::NotFound) => Err(ClientError::UnknownPatient(patient_uuid.to_string())),
            Err(Unreachable::Failed(e)) => Err(e),
            Err(Unreachable::Unavailable(reason)) => {
                let (body, fetched_at) = self.from_cache(&key, reason)?;
                Ok(Fetched {
                    value: parse_patient(&body, Utc::now())?,
                    stale: true,
                    fetched_at,
                })
            }
        }
    }

    async fn fetch_obs_pages(&self, patient_uuid: &str, concept_uuid: &str) -> Result<ObsPage, Unreachable> {
        let mut url = self.endpoint.obs_url(patient_uuid, concept_uuid);
        let mut visited: HashSet<String> = HashSet::new();
        let mut all = ObsPage {
            results: vec![],
            links: vec![],
        };
        loop {
            visited.insert(url.to_string());
            let body = match self.get(&url).await? {
                Response::Body(b) => b,
                Response::NotFound => {
                    return Err(ClientError::UnknownPatient(patient_uuid.to_string()).into())
                }
            };
            let page: ObsPage = serde_json::from_slice(&body)
                .map_err(|e| ClientError::Protocol(format!("obs page {url}: {e}")))?;
            let next = page.next_link().map(str::to_owned);
            all.results.extend(page.results);
            let Some(next) = next else { break };
            let next_url = url
                .join(&next)
                .map_err(|e| ClientError::Protocol(format!("bad next link `{next}`: {e}")))?;
            if visited.contains(next_url.as_str()) {
                return Err(
                    ClientError::Protocol(format!("pagination loop: `{next_url}` was already visited")).into(),
                );
            }
            url = next_url;
        }
        Ok(all)
    }

    /// All observations of one concept for a patient, following `next`
    /// links until the result set is exhausted.
    pub async fn fetch_observations(
        &self,
        patient_uuid: &str,
        concept_uuid: &str,
    ) -> Result<Fetched<ObservationBatch>, ClientError> {
        let key = CacheKey::observations(patient_uuid, concept_uuid);
        match self.fetch_obs_pages(patient_uuid, concept_uuid).await {
            Ok(page) => {
                let batch = self.to_observations(patient_uuid, &page)?;
                let payload = serde_json::to_vec(&page).expect("wire types serialize");
                self.store(&key, &payload);
                Ok(Fetched {
                    value: batch,
                    stale: false,
                    fetched_at: Utc::now(),
                })
            }
            Err(Unreachable::Failed(e)) => Err(e),
            Err(Unreachable::Unavailable(reason)) => {
                let (body, fetched_at) = self.from_cache(&key, reason)?;
                let page: ObsPage = serde_json::from_slice(&body)
                    .map_err(|e| ClientError::Protocol(format!("cached obs for {key}: {e}")))?;
                Ok(Fetched {
                    value: self.to_observations(patient_uuid, &page)?,
                    stale: true,
                    fetched_at,
                })
            }
        }
    }

    /// Fetch every registered concept concurrently and merge the results.
    pub async fn fetch_all_observations(
        &self,
        patient_uuid: &str,
    ) -> Result<Fetched<ObservationBatch>, ClientError> {
        let fetches = self
            .config
            .registry()
            .iter()
            .map(|c| self.fetch_observations(patient_uuid, &c.uuid));
        let results = join_all(fetches).await;

        let mut merged = Fetched {
            value: ObservationBatch::default(),
            stale: false,
            fetched_at: Utc::now(),
        };
        let mut first_error = None;
        for r in results {
            match r {
                Ok(f) => {
                    merged.stale |= f.stale;
                    merged.fetched_at = merged.fetched_at.min(f.fetched_at);
                    merged.value.observations.extend(f.value.observations);
                    merged.value.skipped_non_numeric += f.value.skipped_non_numeric;
                    merged.value.skipped_invalid += f.value.skipped_invalid;
                }
                Err(e @ ClientError::UnknownPatient(_)) => return Err(e),
                Err(e) => {
                    first_error.get_or_insert(e);
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(merged),
        }
    }

    fn to_observations(&self, patient_uuid: &str, page: &ObsPage) -> Result<ObservationBatch, ClientError> {
        let mut batch = ObservationBatch::default();
        for r in &page.results {
            let concept = self.config.registry().get(&r.concept.uuid).ok_or_else(|| {
                ClientError::Protocol(format!("obs {} has unregistered concept `{}`", r.uuid, r.concept.uuid))
            })?;
            let dt = wire::parse_datetime(&r.obs_datetime).ok_or_else(|| {
                ClientError::Protocol(format!("obs {} has bad obsDatetime `{}`", r.uuid, r.obs_datetime))
            })?;
            let Some(value) = wire::numeric_value(&r.value) else {
                warn!(obs = %r.uuid, concept = %concept.name, "skipping non-numeric observation");
                batch.skipped_non_numeric += 1;
                continue;
            };
            match self
                .config
                .observation(patient_uuid, &concept.uuid, value, concept.canonical_unit, dt)
            {
                Ok(o) => batch.observations.push(o.with_record_id(&r.uuid)),
                Err(e) => {
                    warn!(obs = %r.uuid, error = %e, "skipping invalid observation");
                    batch.skipped_invalid += 1;
                }
            }
        }
        Ok(batch)
    }
}

/// Parse a patient resource body into a header.
pub fn parse_patient(body: &[u8], now: DateTime<Utc>) -> Result<PatientHeader, ClientError> {
    let p: PatientResource =
        serde_json::from_slice(body).map_err(|e| ClientError::Protocol(format!("patient: {e}")))?;
    let birthdate = wire::parse_birthdate(&p.person.birthdate).ok_or_else(|| {
        ClientError::Protocol(format!("patient: bad field `birthdate`: `{}`", p.person.birthdate))
    })?;
    PatientHeader::new(
        p.uuid,
        p.display,
        Gender::from_code(&p.person.gender),
        birthdate,
        now.date_naive(),
    )
    .map_err(|e| ClientError::Protocol(format!("patient: {e}")))
}
