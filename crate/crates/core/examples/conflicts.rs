//! Detects the conflict between the bundled scaler and relocator, stores
//! the resolving policy and replays two actions through the gate.
//!
//! cargo run --example conflicts

use std::collections::BTreeMap;

use ni_stratum::descriptors::{extract_profile, parse_nifd, ActionClass};
use ni_stratum::policy::{check_pair, resolve, ActionGate, ActionRequest, ConflictMatrix, Party, PolicyStore};

fn main() -> anyhow::Result<()> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/descriptors");
    let scaler = parse_nifd(&std::fs::read_to_string(format!("{dir}/anomaly-scaler.yaml"))?)?;
    let relocator = parse_nifd(&std::fs::read_to_string(format!("{dir}/relocator.yaml"))?)?;
    let (a, b) = (extract_profile(&scaler), extract_profile(&relocator));

    let matrix = ConflictMatrix::default();
    let conflicts = check_pair(&Party::new("nis-0001", &a.nif_name), &a, &Party::new("nis-0002", &b.nif_name), &b, &matrix);
    for c in &conflicts {
        println!("conflict {:?} on {}", c.kind, c.subject);
    }

    let resolution = resolve(&conflicts, &matrix, &[], &BTreeMap::new(), 0);
    let mut store = PolicyStore::new();
    for rule in resolution.rules {
        println!("policy {}", serde_json::to_string(&rule.rule)?);
        store.store_policy(rule)?;
    }

    let mut gate = ActionGate::new();
    gate.register_nif(&a.nif_name);
    gate.register_nif(&b.nif_name);
    let steps = [(&a.nif_name, ActionClass::Scale, 100_000), (&b.nif_name, ActionClass::Relocate, 110_000)];
    for (nif, action_class, now) in steps {
        let req = ActionRequest { nif: nif.clone(), service_id: "svcA".into(), action_class };
        let d = gate.gate_action(&req, now, &store)?;
        println!("t={now} {nif} {action_class:?}: {:?} ({})", d.verdict, d.reason);
    }
    Ok(())
}
