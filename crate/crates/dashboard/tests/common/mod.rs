#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use labdash::{Prepared, Server};
use labdash_core::DashboardConfig;
use labdash_ehr::{DiskCache, EhrClient, EhrEndpoint};
use mock_ehr::{FailMode, MockServer, ObservationStore};

pub const DEMO_PATIENT: &str = "5b2e6c8a-3f1d-4e7a-9c0b-1d2e3f4a5b6c";
pub const EMPTY_PATIENT: &str = "c4e8a2d6-1f3b-4a5c-9e7d-0b2c4d6e8f1a";
pub const HBA1C: &str = "159644AAAAAAAAAAAAAAAAAAAAAAAAAAAAAA";
pub const FPG: &str = "160912AAAAAAAAAAAAAAAAAAAAAAAAAAAAAA";

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

pub fn default_config_path() -> PathBuf {
    repo_path("config/default-bands.toml")
}

pub fn default_config() -> DashboardConfig {
    DashboardConfig::load(default_config_path()).unwrap()
}

pub fn demo_store(config: &DashboardConfig) -> ObservationStore {
    mock_ehr::load_fixtures(repo_path("fixtures/demo-observations.csv"), config)
        .unwrap()
        .with_patients(mock_ehr::load_patients(repo_path("fixtures/patients.csv")).unwrap())
}

pub struct Stack {
    pub mock: MockServer,
    pub api: Server,
    pub client: EhrClient,
    pub http: reqwest::Client,
}

impl Stack {
    pub async fn start(store: ObservationStore, cache_dir: &Path) -> Stack {
        let config = Arc::new(default_config());
        let mock = MockServer::start(store, "127.0.0.1:0".parse().unwrap(), FailMode::None)
            .await
            .unwrap();
        let endpoint = EhrEndpoint::new(&mock.base_url()).unwrap();
        let cache = Arc::new(DiskCache::open(cache_dir).unwrap());
        let client = EhrClient::new(endpoint, cache, config.clone()).unwrap();
        let api = Server::start(Prepared {
            config,
            client: client.clone(),
            bind: "127.0.0.1:0".parse().unwrap(),
            ui_dir: None,
        })
        .await
        .unwrap();
        Stack {
            mock,
            api,
            client,
            http: reqwest::Client::new(),
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Vec<u8>) {
        let resp = self.http.get(format!("{}{path}", self.api.base_url())).send().await.unwrap();
        (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
    }

    pub async fn get_json(&self, path: &str) -> (u16, serde_json::Value) {
        let (status, body) = self.get(path).await;
        let json = serde_json::from_slice(&body)
            .unwrap_or_else(|e| panic!("{path}: body is not JSON ({e}): {}", String::from_utf8_lossy(&body)));
        (status, json)
    }
}

/// Reference bands read straight from the TOML file, independent of the
/// config loader: concept uuid -> [(lower, upper, color)].
pub fn oracle_bands(path: &Path) -> HashMap<String, Vec<(f64, f64, String)>> {
    let text = std::fs::read_to_string(path).unwrap();
    let doc: toml::Table = toml::from_str(&text).unwrap();
    let mut out = HashMap::new();
    for spec in doc["bands"].as_array().unwrap() {
        let uuid = spec["concept_uuid"].as_str().unwrap().to_string();
        let intervals = spec["intervals"]
            .as_array()
            .unwrap()
            .iter()
            .map(|iv| {
                let iv = iv.as_array().unwrap();
                let num = |v: &toml::Value| match v {
                    toml::Value::Float(f) => *f,
                    toml::Value::Integer(i) => *i as f64,
                    toml::Value::String(s) if s == "inf" => f64::INFINITY,
                    other => panic!("bad bound {other:?}"),
                };
                (num(&iv[0]), num(&iv[1]), iv[2].as_str().unwrap().to_string())
            })
            .collect();
        out.insert(uuid, intervals);
    }
    out
}

/// Color of `value` by linear scan over half-open intervals.
pub fn oracle_color(bands: &[(f64, f64, String)], value: f64) -> Option<String> {
    let hits: Vec<_> = bands.iter().filter(|(lo, hi, _)| *lo <= value && value < *hi).collect();
    (hits.len() == 1).then(|| hits[0].2.clone())
}

/// One CSV fixture row as plain strings, parsed without the fixture loader.
#[derive(Debug, Clone)]
pub struct RawRow {
    pub patient: String,
    pub concept: String,
    pub value: f64,
    pub unit: String,
    pub datetime: chrono::DateTime<chrono::FixedOffset>,
    pub datetime_text: String,
}

pub fn raw_rows(csv_text: &str) -> Vec<RawRow> {
    let mut lines = csv_text.lines();
    assert_eq!(lines.next(), Some("patient_uuid,concept_uuid,value,unit,obs_datetime"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 5, "{l}");
            RawRow {
                patient: f[0].into(),
                concept: f[1].into(),
                value: f[2].parse().unwrap(),
                unit: f[3].into(),
                datetime: chrono::DateTime::parse_from_rfc3339(f[4]).unwrap(),
                datetime_text: f[4].into(),
            }
        })
        .collect()
}
