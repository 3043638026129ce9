mod common;

use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use serde_json::{json, Value};

use ni_stratum::api::scenario::{check_log, execute, run_scenario, RunOptions, Scenario};
use ni_stratum::api::service::{router, Clock, RequestStatus, ServeConfig, Service};
use ni_stratum::api::{parse_jsonl, EventLog, EventLogError, EventRecord, Outcome};

const TOKEN: &str = "operator-token";

fn record(t: u64, seq: u64) -> EventRecord {
    EventRecord {
        t,
        seq,
        actor: "NIO".into(),
        action: "probe".into(),
        subject: format!("s{seq}"),
        outcome: Outcome::Ok,
        detail: json!({"k": seq}),
    }
}

fn service() -> Service {
    let descriptors = ["anomaly-scaler.yaml", "relocator.yaml", "edge-autoscale.yaml"]
        .iter()
        .map(|f| common::scenarios_dir().join("descriptors").join(f))
        .collect();
    let config = ServeConfig { descriptors, ..ServeConfig::default() };
    Service::start(config.build_nio().unwrap(), Clock::Manual(Arc::new(AtomicU64::new(0))))
}

fn create_body() -> String {
    json!({"nisd": "edge-autoscale"}).to_string()
}

#[test]
fn log_file_has_one_line_per_record_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    let mut log = EventLog::to_file(&path).unwrap();
    log.emit(record(0, 0)).unwrap();
    log.emit(record(5, 1)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(parse_jsonl(&text).unwrap(), log.records());
    assert!(matches!(log.emit(record(4, 2)), Err(EventLogError::OrderViolation { .. })));
    assert!(matches!(log.emit(record(5, 1)), Err(EventLogError::OrderViolation { .. })));
    assert_eq!(log.len(), 2);
}

#[test]
fn outcomes_serialize_as_strings() {
    let mut r = record(1, 0);
    r.outcome = Outcome::Error("unknown_instance".into());
    let line = serde_json::to_string(&r).unwrap();
    assert!(line.contains("\"error:unknown_instance\""));
    assert_eq!(serde_json::from_str::<EventRecord>(&line).unwrap(), r);
}

#[test]
fn empty_scenario_yields_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&Scenario::default(), dir.path(), &RunOptions::default()).unwrap();
    assert!(run.records.is_empty());
    assert_eq!(run.exit_code(), 0);
    assert!(check_log(&run.records).is_empty());
}

#[test]
fn run_scenario_writes_log_and_summary() {
    let out = tempfile::tempdir().unwrap();
    let run = run_scenario(&common::scenarios_dir().join("scenario_conflict.json"), out.path(), &RunOptions::default())
        .unwrap();
    let written = std::fs::read_to_string(out.path().join("events.jsonl")).unwrap();
    assert_eq!(parse_jsonl(&written).unwrap(), run.records);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"], json!(run.records.len()));
    assert_eq!(run.exit_code(), 0);
}

#[test]
fn scenario_seed_override_changes_only_what_it_should() {
    let a = common::run_bundled("scenario_lifecycle.json", None);
    let b = common::run_bundled("scenario_lifecycle.json", None);
    assert_eq!(a.log_text(), b.log_text());
    let c = common::run_bundled("scenario_lifecycle.json", Some(1234));
    assert_eq!(c.exit_code(), 0);
    assert_eq!(c.summary.seed, 1234);
}

#[test]
fn lifecycle_requests_are_accepted_then_completed() {
    let svc = service();
    let r = svc.handle("POST", "/v1/nis", Some(TOKEN), &create_body());
    assert_eq!(r.status, 202);
    let id = r.body["request_id"].as_str().unwrap().to_string();
    assert!(id.starts_with("req-"));
    let sub = svc.wait(&id).unwrap();
    assert_eq!(sub.request_id, id);
    assert_eq!(sub.outcome, Outcome::Ok);

    let polled = svc.handle("GET", &format!("/v1/requests/{id}"), Some(TOKEN), "");
    assert_eq!(polled.status, 200);
    assert!(matches!(svc.request_status(&id), Some(RequestStatus::Completed { .. })));

    let inst = svc.handle("POST", "/v1/nis/edge-autoscale/instances", Some(TOKEN), "");
    assert_eq!(inst.status, 202);
    let sub = svc.wait(inst.body["request_id"].as_str().unwrap()).unwrap();
    assert_eq!(sub.outcome, Outcome::Ok);
    let nis = sub.result.unwrap();
    let nis_id = nis.as_str().or_else(|| nis["instance_id"].as_str()).unwrap().to_string();
    let got = svc.handle("GET", &format!("/v1/instances/{nis_id}"), Some(TOKEN), "");
    assert_eq!(got.status, 200);
    assert_eq!(got.body["state"], "Running");

    let del = svc.handle("DELETE", &format!("/v1/instances/{nis_id}"), Some(TOKEN), "");
    assert_eq!(svc.wait(del.body["request_id"].as_str().unwrap()).unwrap().outcome, Outcome::Ok);
}

#[test]
fn bad_token_is_unauthorized() {
    let svc = service();
    assert_eq!(svc.handle("POST", "/v1/nis", Some("stolen"), &create_body()).status, 401);
    assert_eq!(svc.handle("POST", "/v1/nis", None, &create_body()).status, 401);
}

#[test]
fn unknown_resources_and_extension_routes() {
    let svc = service();
    assert_eq!(svc.handle("GET", "/v1/nis/nope", Some(TOKEN), "").status, 404);
    assert_eq!(svc.handle("GET", "/v1/instances/nis-9999", Some(TOKEN), "").status, 404);
    assert_eq!(svc.handle("GET", "/v1/requests/req-9999", Some(TOKEN), "").status, 404);
    assert_eq!(svc.handle("GET", "/v1/ext/peers", None, "").status, 501);
    assert_eq!(svc.handle("POST", "/v1/nis", Some(TOKEN), "not json").status, 400);
    let known = svc.handle("GET", "/v1/nis/edge-autoscale", Some(TOKEN), "");
    assert_eq!(known.status, 200);
    assert_eq!(known.body["nifs"], json!(["anomaly-scaler", "relocator"]));
}

#[test]
fn descriptors_can_be_onboarded_over_the_api() {
    let svc = service();
    let text = common::monitor_nifd("watcher", 100);
    let r = svc.handle("POST", "/v1/descriptors", Some(TOKEN), &json!({"descriptor": text}).to_string());
    assert_eq!(r.status, 201);
    let bad = svc.handle("POST", "/v1/descriptors", Some(TOKEN), &json!({"descriptor": "kind: NIFD"}).to_string());
    assert_eq!(bad.status, 400);
    assert_eq!(svc.handle("GET", "/v1/policies", Some(TOKEN), "").status, 200);
}

#[test]
fn http_round_trip() {
    let svc = Arc::new(service());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, router(svc)).await });

    let base = format!("http://{addr}");
    let client = reqwest::blocking::Client::new();
    let res = client.post(format!("{base}/v1/nis")).bearer_auth(TOKEN).body(create_body()).send().unwrap();
    assert_eq!(res.status().as_u16(), 202);
    let id = res.json::<Value>().unwrap()["request_id"].as_str().unwrap().to_string();
    let mut state = Value::Null;
    for _ in 0..100 {
        state = client.get(format!("{base}/v1/requests/{id}")).bearer_auth(TOKEN).send().unwrap().json().unwrap();
        if state["state"]["status"] != "pending" {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    assert_eq!(state["state"]["submission"]["outcome"], "ok");
    let res = client.post(format!("{base}/v1/nis")).bearer_auth("stolen").body(create_body()).send().unwrap();
    assert_eq!(res.status().as_u16(), 401);
}

#[test]
fn bundled_config_loads_and_builds() {
    let config = ServeConfig::load(&common::crate_dir().join("nist.toml")).unwrap();
    assert_eq!(config.nodes.len(), 3);
    let mut config = config;
    config.descriptors = config.descriptors.iter().map(|p| common::crate_dir().join(p)).collect();
    let nio = config.build_nio().unwrap();
    assert_eq!(nio.env().nodes().count(), 3);
}

/// Every documented operation is routed, and answers with one of the
/// statuses the document lists for it.
#[test]
fn openapi_document_matches_routes() {
    let doc: Value = serde_yaml::from_str(&std::fs::read_to_string(common::crate_dir().join("openapi.yaml")).unwrap()).unwrap();
    let svc = service();
    let mut seen = 0;
    for (path, ops) in doc["paths"].as_object().unwrap() {
        let concrete = path.replace("{id}", "unknown").replace("{rest}", "peers");
        for (method, op) in ops.as_object().unwrap() {
            if method == "parameters" {
                continue;
            }
            let documented: Vec<u16> = op["responses"].as_object().unwrap().keys().map(|k| k.parse().unwrap()).collect();
            let r = svc.handle(&method.to_uppercase(), &concrete, Some(TOKEN), "{}");
            assert!(documented.contains(&r.status), "{method} {path} answered {} not in {documented:?}", r.status);
            assert!(!r.body["error"].as_str().unwrap_or("").starts_with("no route"), "{method} {path} unrouted");
            seen += 1;
        }
    }
    assert_eq!(seen, 11);
}
