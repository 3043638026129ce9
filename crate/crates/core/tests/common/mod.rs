#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ni_stratum::api::scenario::{
    execute, DescriptorSource, RunOptions, Scenario, ScenarioRun, ScriptedAction, TimedRequest, DEFAULT_SENDER,
    DEFAULT_TOKEN,
};
use ni_stratum::descriptors::{parse_descriptor, ActionClass};
use ni_stratum::orchestrator::{AuthTable, Credentials, Nio, NioConfig, RequestPayload};
use ni_stratum::simenv::{MetricKind, NodeConfig, Resources, ServiceConfig, SimEnv, SourceConfig, Tier};

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn scenarios_dir() -> PathBuf {
    crate_dir().join("scenarios")
}

pub fn run_bundled(name: &str, seed: Option<u64>) -> ScenarioRun {
    let (scenario, base) = Scenario::load(&scenarios_dir().join(name)).expect("bundled scenario loads");
    execute(&scenario, &base, &RunOptions { seed, ..RunOptions::default() }).expect("bundled scenario runs")
}

pub fn operator() -> Credentials {
    Credentials::new(DEFAULT_SENDER, DEFAULT_TOKEN)
}

pub fn seal(text: &str) -> String {
    parse_descriptor(text).expect("fixture parses").sealed().to_canonical_json()
}

/// A Plan-only NIF acting on one service path.
pub fn planner_nifd(name: &str, service: &str, path: &str, action: ActionClass, cpu: u64) -> String {
    seal(&format!(
        r#"
kind: NIFD
metadata:
  name: {name}
  version: 1.0.0
  labels:
    daemon.nmapek.type.Plan: "true"
  annotations:
    daemon.nmapek.plan.target.0: "{service}:spec.containers.{path}:{action}"
spec:
  networkOperation: act on {service}
  data: {{sourceIds: [edge-1.cpu], inputFormat: timeseries/f64, samplingPeriodMs: 1000}}
  learningMetric: accuracy
  thresholds: {{upper: 0.8, lower: 0.75}}
  outputFormat: action
  resources: {{cpuMillicores: {cpu}, memMib: 128}}
"#
    ))
}

/// A monitoring NIF with no plan targets.
pub fn monitor_nifd(name: &str, cpu: u64) -> String {
    seal(&format!(
        r#"
kind: NIFD
metadata:
  name: {name}
  version: 1.0.0
  labels:
    daemon.nmapek.type.Monitor: "true"
spec:
  networkOperation: watch edge load
  data: {{sourceIds: [edge-1.cpu], inputFormat: timeseries/f64, samplingPeriodMs: 1000}}
  learningMetric: accuracy
  thresholds: {{upper: 0.8, lower: 0.75}}
  outputFormat: label/binary
  resources: {{cpuMillicores: {cpu}, memMib: 128}}
"#
    ))
}

/// A NISD over the given members, linked as a chain.
pub fn chain_nisd(name: &str, members: &[&str]) -> String {
    let nifs: Vec<String> = members.iter().map(|m| format!("    - {{name: {m}, version: \">=1.0.0\"}}")).collect();
    let links: Vec<String> = members.windows(2).map(|w| format!("    - {{from: {}, to: {}}}", w[0], w[1])).collect();
    let links = if links.is_empty() { String::new() } else { format!("  links:\n{}\n", links.join("\n")) };
    seal(&format!(
        "kind: NISD\nmetadata: {{name: {name}, version: 1.0.0}}\nspec:\n  objective: {name}\n  nifs:\n{}\n{links}",
        nifs.join("\n")
    ))
}

pub fn node(id: &str, cpu: u64, mem: u64) -> NodeConfig {
    NodeConfig {
        id: id.into(),
        tier: Tier::Edge,
        capacity: Resources { cpu_millicores: cpu, mem_mib: mem, gpu: 0, link_bw_mbps: 1000 },
        base_latency_ms: None,
    }
}

pub fn cpu_source(node: &str) -> SourceConfig {
    SourceConfig {
        id: format!("{node}.cpu"),
        node: Some(node.into()),
        service: None,
        kind: MetricKind::CpuLoad,
        mean: 0.3,
        std: 0.02,
        phi: 0.8,
        period_ms: 1000,
        spikes: vec![],
    }
}

pub fn services() -> Vec<ServiceConfig> {
    vec![
        ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 },
        ServiceConfig { id: "svcB".into(), node: "edge-2".into(), replicas: 1 },
    ]
}

pub fn small_nio(seed: u64, nodes: Vec<NodeConfig>) -> Nio {
    let sources = nodes.iter().map(|n| cpu_source(&n.id)).collect::<Vec<_>>();
    let svcs: Vec<ServiceConfig> =
        services().into_iter().filter(|s| nodes.iter().any(|n| n.id == s.node)).collect();
    let env = SimEnv::new(seed, &nodes, &sources, &svcs).expect("env");
    let config =
        NioConfig { seed, auth: AuthTable::single(DEFAULT_SENDER, DEFAULT_TOKEN), ..NioConfig::default() };
    Nio::new(config, env).expect("nio")
}

const CLASSES: [ActionClass; 3] = [ActionClass::Scale, ActionClass::Relocate, ActionClass::Reconfigure];

/// A random gate workload: 2 to 5 planners over two services, deployed as
/// singleton or paired NIS instances, with a random action schedule.
pub fn random_gate_scenario(index: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + index);
    let k = rng.random_range(2..=5usize);
    let mut nifs = Vec::new();
    let mut descriptors = Vec::new();
    for j in 0..k {
        let class = CLASSES[rng.random_range(0..3)];
        let service = if rng.random_bool(0.75) { "svcA" } else { "svcB" };
        let name = format!("nif{j}");
        descriptors.push(DescriptorSource::Inline {
            inline: planner_nifd(&name, service, &format!("p{j}"), class, 100),
        });
        nifs.push((name, class, service));
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut j = 0;
    while j < k {
        let pair_ok = j + 1 < k && temporal(nifs[j].1, nifs[j + 1].1).is_some();
        if pair_ok && rng.random_bool(0.5) {
            groups.push(vec![j, j + 1]);
            j += 2;
        } else {
            groups.push(vec![j]);
            j += 1;
        }
    }
    let mut requests = Vec::new();
    for (g, members) in groups.iter().enumerate() {
        let name = format!("nis{g}");
        let names: Vec<&str> = members.iter().map(|m| nifs[*m].0.as_str()).collect();
        descriptors.push(DescriptorSource::Inline { inline: chain_nisd(&name, &names) });
        let at = 10 * g as u64;
        requests.push(timed(at, RequestPayload::Create { nisd: name.clone() }));
        requests.push(timed(at + 5, RequestPayload::Instantiate { nisd: name, placement: Default::default() }));
    }
    let mut actions = Vec::new();
    for _ in 0..rng.random_range(5..=20) {
        let (nif, class, service) = &nifs[rng.random_range(0..k)];
        let target_node = (*class == ActionClass::Relocate)
            .then(|| if rng.random_bool(0.5) { "edge-1" } else { "edge-2" }.to_string());
        actions.push(ScriptedAction {
            at: rng.random_range(1_000..100_000),
            nif: nif.clone(),
            service: service.to_string(),
            action: *class,
            target_node,
            retry: rng.random_bool(0.7),
        });
    }
    Scenario {
        seed: rng.random(),
        nodes: vec![node("edge-1", 4000, 8192), node("edge-2", 4000, 8192)],
        sources: vec![cpu_source("edge-1"), cpu_source("edge-2")],
        services: services(),
        descriptors,
        nis_requests: requests,
        actions,
        until: Some(200_000),
        ..Scenario::default()
    }
}

fn timed(at: u64, payload: RequestPayload) -> TimedRequest {
    TimedRequest { at, sender: DEFAULT_SENDER.into(), token: DEFAULT_TOKEN.into(), payload }
}

/// Temporal windows of the default conflict matrix, written out by hand.
pub fn temporal(a: ActionClass, b: ActionClass) -> Option<u64> {
    use ActionClass::*;
    match (a, b) {
        (Scale, Relocate) | (Relocate, Scale) => Some(30_000),
        (Reconfigure, _) | (_, Reconfigure) => Some(10_000),
        _ => None,
    }
}
