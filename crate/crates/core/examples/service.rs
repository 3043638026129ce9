//! Runs the request service in-process and walks a NIS through the HTTP
//! handler without opening a socket. With `--config` it prints the default
//! service configuration as TOML instead.
//!
//! cargo run --example service
//! cargo run --example service -- --config > nist.toml

use serde_json::json;

use ni_stratum::api::scenario::DEFAULT_TOKEN;
use ni_stratum::api::service::{Clock, ServeConfig, Service};

fn main() -> anyhow::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/descriptors");
    let descriptors = ["anomaly-scaler.yaml", "relocator.yaml", "edge-autoscale.yaml"].iter().map(|f| dir.join(f)).collect();
    let config = ServeConfig { descriptors, ..ServeConfig::default() };
    if std::env::args().any(|a| a == "--config") {
        print!("{}", toml::to_string(&config)?);
        return Ok(());
    }
    let svc = Service::start(config.build_nio()?, Clock::Wall(std::time::Instant::now()));
    let auth = Some(DEFAULT_TOKEN);

    let show = |label: &str, r: ni_stratum::api::service::ApiResponse| {
        println!("{label}: {} {}", r.status, r.body);
        r.body["request_id"].as_str().map(str::to_string)
    };
    let req = show("POST /v1/nis", svc.handle("POST", "/v1/nis", auth, &json!({"nisd": "edge-autoscale"}).to_string()));
    if let Some(id) = req {
        svc.wait(&id);
        show("GET request", svc.handle("GET", &format!("/v1/requests/{id}"), auth, ""));
    }
    let req = show("POST instances", svc.handle("POST", "/v1/nis/edge-autoscale/instances", auth, ""));
    let sub = req.and_then(|id| svc.wait(&id));
    let result = sub.and_then(|s| s.result).unwrap_or_default();
    if let Some(nis) = result.as_str().or(result["instance_id"].as_str()) {
        show("GET instance", svc.handle("GET", &format!("/v1/instances/{nis}"), auth, ""));
    }
    show("bad token", svc.handle("GET", "/v1/policies", Some("nope"), ""));
    show("extension", svc.handle("GET", "/v1/ext/federation", None, ""));
    Ok(())
}
