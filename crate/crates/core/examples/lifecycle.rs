//! Drives one NIS through create, instantiate, update, query and terminate
//! against the default simulated infrastructure.
//!
//! cargo run --example lifecycle

use std::collections::BTreeMap;

use ni_stratum::api::scenario::{DEFAULT_SENDER, DEFAULT_TOKEN};
use ni_stratum::api::service::ServeConfig;
use ni_stratum::orchestrator::Credentials;

fn main() -> anyhow::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/descriptors");
    let descriptors = ["anomaly-scaler.yaml", "relocator.yaml", "edge-autoscale.yaml"].iter().map(|f| dir.join(f)).collect();
    let config = ServeConfig { descriptors, ..ServeConfig::default() };
    let mut nio = config.build_nio()?;
    let op = Credentials::new(DEFAULT_SENDER, DEFAULT_TOKEN);

    let created = nio.create_nis(&op, "edge-autoscale")?;
    println!("created {} trained {:?}", created.nisd_id, created.trained_nifs);
    for (nif, model) in &created.models {
        println!("  {nif} -> {model}");
    }

    let id = nio.instantiate_nis(&op, "edge-autoscale", &BTreeMap::new())?;
    nio.advance_to(10_000)?;
    let status = nio.query_nis(&op, &id)?;
    println!("{id} {:?}", status.state);
    for n in &status.nifs {
        println!("  {} on {:?} model {} {:?}", n.nif_name, n.node_id, n.model_id, n.state);
    }

    let newer = std::fs::read_to_string(dir.join("relocator-1.1.yaml"))?;
    let updated = nio.update_nis(&op, &id, &newer, None)?;
    println!("update {}", serde_json::to_string(&updated)?);

    let report = nio.terminate_nis(&op, &id)?;
    println!("terminated {:?} retained {:?}", report.terminated_nifs, report.retained_nifs);
    println!("{} events logged", nio.event_log().len());
    Ok(())
}
