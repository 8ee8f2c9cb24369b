mod common;

use std::collections::BTreeSet;
use std::process::Command;

use common::*;
use labdash_core::DashboardConfig;
use mock_ehr::FailMode;
use proptest::prelude::*;
use serde_json::Value;

async fn demo_stack(dir: &tempfile::TempDir) -> Stack {
    Stack::start(demo_store(&default_config()), dir.path()).await
}

fn assert_api_error(status: u16, body: &Value, want_status: u16, code: &str) {
    assert_eq!(status, want_status, "{body}");
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()), "{body}");
}

#[tokio::test]
async fn summary_matches_brute_force_scan() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let (status, body) = stack.get_json(&format!("/api/patients/{DEMO_PATIENT}/summary")).await;
    assert_eq!(status, 200, "{body}");
    assert_eq!(body["stale"], false);
    assert_eq!(body["header"]["display_name"], "Maria Santos");
    assert_eq!(body["missing"], serde_json::json!([]));

    let bands = oracle_bands(&default_config_path());
    let csv = std::fs::read_to_string(repo_path("fixtures/demo-observations.csv")).unwrap();
    let rows = raw_rows(&csv);
    let gauges = body["gauges"].as_array().unwrap();
    assert_eq!(gauges.len(), 8);
    for g in gauges {
        let concept = g["concept_uuid"].as_str().unwrap();
        let latest = rows
            .iter()
            .filter(|r| r.concept == concept)
            .max_by_key(|r| r.datetime)
            .unwrap();
        assert_eq!(g["latest_value"].as_f64().unwrap(), latest.value);
        assert_eq!(g["obs_datetime"].as_str().unwrap(), latest.datetime_text);
        let color = oracle_color(&bands[concept], latest.value).unwrap();
        assert_eq!(g["classification"]["color"].as_str().unwrap(), color);
        assert_eq!(g["bands"]["concept_uuid"], concept);
        assert!(g["bands"]["intervals"].as_array().unwrap().len() >= 2);
    }
}

#[tokio::test]
async fn patient_without_observations() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let (status, body) = stack.get_json(&format!("/api/patients/{EMPTY_PATIENT}/summary")).await;
    assert_eq!(status, 200);
    assert_eq!(body["gauges"].as_array().unwrap().len(), 0);
    assert_eq!(body["missing"].as_array().unwrap().len(), 8);
    let (status, body) = stack.get_json(&format!("/api/patients/{EMPTY_PATIENT}/table")).await;
    assert_eq!(status, 200);
    assert_eq!((body["total_rows"].as_u64(), body["total_pages"].as_u64()), (Some(0), Some(0)));
}

#[tokio::test]
async fn unknown_patient_is_404_on_every_view() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    for view in ["summary", "table", &format!("trends?concept={HBA1C}")] {
        let (status, body) = stack.get_json(&format!("/api/patients/nobody/{view}")).await;
        assert_api_error(status, &body, 404, "unknown_patient");
    }
}

#[tokio::test]
async fn table_search_and_clamping() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let base = format!("/api/patients/{DEMO_PATIENT}/table");

    let (status, body) = stack.get_json(&format!("{base}?date=2018-11-30")).await;
    assert_eq!(status, 200);
    let rows = body["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["visit_date"], "2018-11-30");
    let cells = rows[0]["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 8);
    let hba1c = cells.iter().find(|c| c["concept_uuid"] == HBA1C).unwrap();
    assert_eq!((hba1c["value"].as_f64(), hba1c["color"].as_str()), (Some(7.1), Some("red")));

    let (_, body) = stack.get_json(&base).await;
    let dates: Vec<&str> = body["rows"].as_array().unwrap().iter().map(|r| r["visit_date"].as_str().unwrap()).collect();
    assert_eq!(dates, ["2018-11-30", "2018-10-31", "2018-09-28", "2018-08-31", "2018-07-31", "2018-06-29"]);
    assert_eq!(body["columns"].as_array().unwrap().len(), 8);

    for (size, echoed) in [(7, 10), (5, 10), (500, 100), (25, 25)] {
        let (_, body) = stack.get_json(&format!("{base}?size={size}")).await;
        assert_eq!(body["size"], echoed);
    }
    let (_, body) = stack.get_json(&format!("{base}?page=999")).await;
    assert_eq!(body["rows"], serde_json::json!([]));
    assert_eq!((body["total_pages"].as_u64(), body["page"].as_u64()), (Some(1), Some(999)));

    let (_, body) = stack.get_json(&format!("{base}?date=2018-01-01")).await;
    assert_eq!(body["total_rows"], 0);

    for bad in ["date=2018-11-31", "date=30/11/2018", "date=", "page=-1", "size=ten", "page=1&page=2", "sort=asc"] {
        let (status, body) = stack.get_json(&format!("{base}?{bad}")).await;
        assert_api_error(status, &body, 400, "bad_request");
    }
}

#[tokio::test]
async fn trends_in_canonical_and_requested_units() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let base = format!("/api/patients/{DEMO_PATIENT}/trends");

    let (status, body) = stack.get_json(&format!("{base}?concept={HBA1C}")).await;
    assert_eq!(status, 200);
    assert_eq!(body["unit"], "percent");
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), 6);
    let times: Vec<_> = points
        .iter()
        .map(|p| chrono::DateTime::parse_from_rfc3339(p["obs_datetime"].as_str().unwrap()).unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(
        body["month_labels"],
        serde_json::json!(["June", "July", "August", "September", "October", "November"])
    );

    let (_, mmol) = stack.get_json(&format!("{base}?concept={FPG}")).await;
    let (status, mg) = stack.get_json(&format!("{base}?concept={FPG}&unit=mg_per_dL")).await;
    assert_eq!(status, 200);
    assert_eq!(mg["unit"], "mg_per_dL");
    for (a, b) in mmol["points"].as_array().unwrap().iter().zip(mg["points"].as_array().unwrap()) {
        let expected = a["value"].as_f64().unwrap() * 18.0156;
        assert!((b["value"].as_f64().unwrap() - expected).abs() < 0.01);
    }

    for bad in [
        String::new(),
        "concept=nope".to_string(),
        format!("concept={FPG}&unit=percent"),
        format!("concept={FPG}&unit=furlongs"),
    ] {
        let (status, body) = stack.get_json(&format!("{base}?{bad}")).await;
        assert_api_error(status, &body, 400, "bad_request");
    }
}

#[tokio::test]
async fn config_ranges_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let (status, body) = stack.get("/api/config/ranges").await;
    assert_eq!(status, 200);
    let reparsed = DashboardConfig::from_json_str(std::str::from_utf8(&body).unwrap()).unwrap();
    assert_eq!(reparsed.band_specs().count(), 8);
    assert_eq!(reparsed.source(), default_config().source());
}

#[tokio::test]
async fn repeated_reads_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    for path in [
        format!("/api/patients/{DEMO_PATIENT}/summary"),
        format!("/api/patients/{DEMO_PATIENT}/table?size=25"),
        format!("/api/patients/{DEMO_PATIENT}/trends?concept={FPG}&unit=mg_per_dL"),
        "/api/config/ranges".to_string(),
    ] {
        let first = stack.get(&path).await;
        let second = stack.get(&path).await;
        assert_eq!(first, second, "{path}");
    }
}

#[tokio::test]
async fn routing_errors_are_api_errors() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let (status, body) = stack.get_json("/api/nothing/here").await;
    assert_api_error(status, &body, 404, "bad_request");
    let (status, body) = stack.get_json("/index.html").await;
    assert_api_error(status, &body, 404, "bad_request");
    let resp = stack
        .http
        .post(format!("{}/api/config/ranges", stack.api.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status().as_u16(), 405);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "bad_request");
}

#[tokio::test]
async fn offline_behaviour() {
    let dir = tempfile::tempdir().unwrap();
    let stack = demo_stack(&dir).await;
    let summary = format!("/api/patients/{DEMO_PATIENT}/summary");
    let (_, fresh) = stack.get_json(&summary).await;

    stack.mock.set_fail_mode(FailMode::Unavailable);
    let (status, cached) = stack.get_json(&summary).await;
    assert_eq!(status, 200);
    assert_eq!(cached["stale"], true);
    assert!(cached["cached_at"].is_string());
    assert_eq!(cached["gauges"], fresh["gauges"]);

    let (status, body) = stack.get_json(&format!("/api/patients/{EMPTY_PATIENT}/summary")).await;
    assert_api_error(status, &body, 503, "ehr_unavailable");

    stack.mock.set_fail_mode(FailMode::None);
    let (_, again) = stack.get_json(&summary).await;
    assert_eq!(again["stale"], false);
}

#[tokio::test]
async fn serves_ui_statics() {
    let cache = tempfile::tempdir().unwrap();
    let ui = tempfile::tempdir().unwrap();
    std::fs::write(ui.path().join("index.html"), "<h1>labdash</h1>").unwrap();
    let config = std::sync::Arc::new(default_config());
    let endpoint = labdash_ehr::EhrEndpoint::new("http://127.0.0.1:9/openmrs").unwrap();
    let client = labdash_ehr::EhrClient::new(
        endpoint,
        std::sync::Arc::new(labdash_ehr::DiskCache::open(cache.path()).unwrap()),
        config.clone(),
    )
    .unwrap();
    let server = labdash::Server::start(labdash::Prepared {
        config,
        client,
        bind: "127.0.0.1:0".parse().unwrap(),
        ui_dir: Some(ui.path().to_path_buf()),
    })
    .await
    .unwrap();
    let body = reqwest::get(format!("{}/", server.base_url())).await.unwrap().text().await.unwrap();
    assert_eq!(body, "<h1>labdash</h1>");
    let resp = reqwest::get(format!("{}/api/config/ranges", server.base_url())).await.unwrap();
    assert_eq!(resp.status().as_u16(), 200);
}

fn run_cli(args: &[&str], env: &[(&str, &str)]) -> (bool, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_labdash"));
    cmd.arg("serve").args(args);
    for var in ["LABDASH_CONFIG", "LABDASH_BIND", "LABDASH_EHR_URL", "LABDASH_CACHE_DIR", "LABDASH_EHR_USER"] {
        cmd.env_remove(var);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    (out.status.success(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn cli_startup_errors() {
    let gap = repo_path("config/invalid/gap.toml");
    let gap = gap.to_str().unwrap();
    let valid = default_config_path();
    let valid = valid.to_str().unwrap();

    let (ok, err) = run_cli(&["--config", gap, "--ehr-url", "http://127.0.0.1:9"], &[]);
    assert!(!ok);
    assert!(err.contains("gap"), "{err}");

    // flag beats environment
    let (ok, err) = run_cli(&["--config", gap], &[("LABDASH_CONFIG", valid)]);
    assert!(!ok);
    assert!(err.contains("gap"), "{err}");
    let (ok, err) = run_cli(&[], &[("LABDASH_CONFIG", gap)]);
    assert!(!ok);
    assert!(err.contains("gap"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let no_url = dir.path().join("no-url.toml");
    let text = std::fs::read_to_string(valid).unwrap();
    let text: String = text.lines().filter(|l| !l.starts_with("ehr_base_url")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&no_url, text).unwrap();
    let (ok, err) = run_cli(&["--config", no_url.to_str().unwrap()], &[]);
    assert!(!ok);
    assert!(err.contains("ehr_url"), "{err}");

    let (ok, err) = run_cli(&["--config", valid, "--bind", "not-an-address"], &[]);
    assert!(!ok);
    assert!(err.contains("bind"), "{err}");

    let (ok, err) = run_cli(&["--config", valid, "--ehr-user", "admin"], &[]);
    assert!(!ok);
    assert!(err.contains("LABDASH_EHR_PASSWORD"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn malformed_table_queries_are_400(key in "[a-z]{1,6}", value in "[ -~]{0,12}") {
        prop_assume!(!["page", "size", "date"].contains(&key.as_str()));
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let dir = tempfile::tempdir().unwrap();
            let stack = demo_stack(&dir).await;
            let query: String = url::form_urlencoded::Serializer::new(String::new())
                .append_pair(&key, &value)
                .finish();
            let (status, body) = stack.get_json(&format!("/api/patients/{DEMO_PATIENT}/table?{query}")).await;
            assert_api_error(status, &body, 400, "bad_request");
        });
    }

    #[test]
    fn arbitrary_queries_never_fail_server_side(raw in "[ -~]{0,40}") {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let dir = tempfile::tempdir().unwrap();
            let stack = demo_stack(&dir).await;
            let encoded: String = raw.chars().map(|c| match c {
                ' ' => "+".to_string(),
                '#' => "%23".to_string(),
                c => c.to_string(),
            }).collect();
            for view in ["table", "trends", "summary"] {
                let (status, body) = stack.get_json(&format!("/api/patients/{DEMO_PATIENT}/{view}?{encoded}")).await;
                assert!(status == 200 || status == 400, "{view}?{encoded} -> {status} {body}");
                if status == 400 {
                    assert_eq!(body["code"], "bad_request");
                }
            }
        });
    }

    #[test]
    fn table_pages_partition_rows(size in 1usize..130, date in proptest::option::of(0usize..6)) {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let dir = tempfile::tempdir().unwrap();
            let stack = demo_stack(&dir).await;
            let dates = ["2018-06-29", "2018-07-31", "2018-08-31", "2018-09-28", "2018-10-31", "2018-11-30"];
            let filter = date.map(|i| format!("&date={}", dates[i])).unwrap_or_default();
            let (_, first) = stack.get_json(&format!("/api/patients/{DEMO_PATIENT}/table?size={size}{filter}")).await;
            let pages = first["total_pages"].as_u64().unwrap();
            let mut seen = Vec::new();
            for p in 1..=pages {
                let (_, page) = stack.get_json(&format!("/api/patients/{DEMO_PATIENT}/table?page={p}&size={size}{filter}")).await;
                seen.extend(page["rows"].as_array().unwrap().iter().map(|r| r["visit_date"].as_str().unwrap().to_string()));
            }
            let unique: BTreeSet<_> = seen.iter().cloned().collect();
            assert_eq!(unique.len(), seen.len());
            assert_eq!(seen.len() as u64, first["total_rows"].as_u64().unwrap());
            assert_eq!(seen.len(), if date.is_some() { 1 } else { 6 });
        });
    }
}
