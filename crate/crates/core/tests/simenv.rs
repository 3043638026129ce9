mod common;

use proptest::prelude::*;

use ni_stratum::descriptors::ActionClass;
use ni_stratum::simenv::{
    relocation_choice, relocation_scores, EventQueue, MetricKind, NifBehavior, NodeConfig, ProposedAction,
    RelocationWeights, Resources, ScenarioNifs, ServiceConfig, SimEnv, SimError, SourceConfig, Spike, Tier,
};

fn source(id: &str, node: Option<&str>, service: Option<&str>, kind: MetricKind, mean: f64, std: f64) -> SourceConfig {
    SourceConfig {
        id: id.into(),
        node: node.map(Into::into),
        service: service.map(Into::into),
        kind,
        mean,
        std,
        phi: 0.8,
        period_ms: 1000,
        spikes: vec![],
    }
}

fn two_tier() -> SimEnv {
    let mut cloud = common::node("cloud-1", 16_000, 32_768);
    cloud.tier = Tier::Cloud;
    let nodes = vec![common::node("edge-1", 4000, 8192), cloud];
    let sources = vec![
        source("edge-1.cpu", Some("edge-1"), None, MetricKind::CpuLoad, 0.4, 0.05),
        source("cloud-1.cpu", Some("cloud-1"), None, MetricKind::CpuLoad, 0.4, 0.05),
        source("svcA.lat", None, Some("svcA"), MetricKind::E2eLatencyMs, 2.0, 0.5),
    ];
    let services = vec![ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 }];
    SimEnv::new(9, &nodes, &sources, &services).unwrap()
}

#[test]
fn empty_queue_advances_clock() {
    let mut q: EventQueue<()> = EventQueue::new();
    assert!(q.advance(10).unwrap().is_empty());
    assert_eq!(q.now(), 10);
    assert!(matches!(q.advance(9), Err(SimError::TimeReversal { now: 10, requested: 9 })));
}

#[test]
fn simultaneous_events_keep_schedule_order() {
    let mut q = EventQueue::new();
    q.schedule(5, "b");
    q.schedule(3, "a");
    q.schedule(5, "c");
    let got: Vec<&str> = q.advance(5).unwrap().into_iter().map(|e| e.payload).collect();
    assert_eq!(got, vec!["a", "b", "c"]);
    assert_eq!(q.dispatched_count(), 3);
}

#[test]
fn samples_are_pure_functions_of_seed_source_and_time() {
    let env = two_tier();
    let again = two_tier();
    for t in [0, 999, 1000, 54_321, 1_000_000] {
        assert_eq!(env.sample("edge-1.cpu", t).unwrap(), again.sample("edge-1.cpu", t).unwrap());
    }
    assert!(matches!(env.sample("nope", 0), Err(SimError::UnknownSource(_))));
}

#[test]
fn faulted_node_reports_high_load() {
    let mut env = two_tier();
    env.set_fault("edge-1", true).unwrap();
    for t in (0..60_000).step_by(1000) {
        assert!(env.sample("edge-1.cpu", t).unwrap() >= 0.95);
    }
    env.set_fault("edge-1", false).unwrap();
    assert!(env.sample("edge-1.cpu", 0).unwrap() < 0.95);
}

#[test]
fn spike_forces_value() {
    let mut cfg = source("edge-1.cpu", Some("edge-1"), None, MetricKind::CpuLoad, 0.3, 0.05);
    cfg.spikes.push(Spike { from: 10_000, to: 20_000, value: 0.97 });
    let env = SimEnv::new(1, &[common::node("edge-1", 1000, 1000)], &[cfg], &[]).unwrap();
    assert_eq!(env.sample("edge-1.cpu", 10_000).unwrap(), 0.97);
    assert_eq!(env.sample("edge-1.cpu", 19_999).unwrap(), 0.97);
    assert_ne!(env.sample("edge-1.cpu", 20_000).unwrap(), 0.97);
}

/// The mean latency of each placement is the node's tier latency plus the
/// stream mean; edge must come out below cloud both in expectation and in
/// the empirical average.
#[test]
fn edge_latency_below_cloud() {
    let env = two_tier();
    let expected = |tier: Tier| tier.default_latency_ms() + 2.0;
    assert!(expected(Tier::Edge) < expected(Tier::Cloud));
    let avg = |node: &str| {
        let ts: Vec<u64> = (0..200).map(|i| i * 1000).collect();
        ts.iter().map(|t| env.latency_estimate("svcA", node, *t).unwrap()).sum::<f64>() / ts.len() as f64
    };
    let (edge, cloud) = (avg("edge-1"), avg("cloud-1"));
    assert!(edge < cloud);
    assert!((edge - expected(Tier::Edge)).abs() < 0.5, "{edge}");
    assert!((cloud - expected(Tier::Cloud)).abs() < 0.5, "{cloud}");
}

#[test]
fn config_errors() {
    let zero = NodeConfig {
        id: "z".into(),
        tier: Tier::Edge,
        capacity: Resources { cpu_millicores: 0, mem_mib: 1, gpu: 0, link_bw_mbps: 1 },
        base_latency_ms: None,
    };
    assert!(matches!(SimEnv::new(0, &[zero], &[], &[]), Err(SimError::Config(_))));
    let svc = ServiceConfig { id: "s".into(), node: "ghost".into(), replicas: 1 };
    assert!(matches!(SimEnv::new(0, &[], &[], &[svc]), Err(SimError::UnknownNode(_))));
}

#[test]
fn anomaly_nif_proposes_scale_on_onset() {
    let mut cfg = source("edge-1.cpu", Some("edge-1"), None, MetricKind::CpuLoad, 0.3, 0.0);
    cfg.spikes.push(Spike { from: 5000, to: 20_000, value: 0.97 });
    let services = [ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 }];
    let env = SimEnv::new(42, &[common::node("edge-1", 1000, 1000)], &[cfg], &services).unwrap();
    let mut nifs = ScenarioNifs::new();
    nifs.add("NIF1", NifBehavior::AnomalyScale { service: "svcA".into(), theta: 0.8 }, 5000, 0);
    nifs.set_active("NIF1", true);
    assert!(nifs.run_scenario_nifs(&env, 0).is_empty());
    let got = nifs.run_scenario_nifs(&env, 5000);
    assert_eq!(
        got,
        vec![ProposedAction {
            nif: "NIF1".into(),
            service_id: "svcA".into(),
            action_class: ActionClass::Scale,
            target_node: None,
            at: 5000
        }]
    );
    assert!(nifs.run_scenario_nifs(&env, 10_000).is_empty(), "only the rising edge proposes");
}

#[test]
fn equal_nodes_keep_the_service_in_place() {
    let nodes = vec![common::node("edge-1", 1000, 1000), common::node("edge-2", 1000, 1000)];
    let sources: Vec<SourceConfig> = nodes
        .iter()
        .map(|n| source(&format!("{}.cpu", n.id), Some(&n.id), None, MetricKind::CpuLoad, 0.5, 0.0))
        .collect();
    let services = [ServiceConfig { id: "svcA".into(), node: "edge-2".into(), replicas: 1 }];
    let env = SimEnv::new(1, &nodes, &sources, &services).unwrap();
    assert_eq!(relocation_choice(&env, "svcA", &RelocationWeights::default(), 0.0, 0), None);
}

#[test]
fn applying_actions() {
    let mut env = two_tier();
    let scale =
        ProposedAction { nif: "n".into(), service_id: "svcA".into(), action_class: ActionClass::Scale, target_node: None, at: 0 };
    env.apply(&scale).unwrap();
    assert_eq!(env.service("svcA").unwrap().replicas, 2);
    let mv = ProposedAction { action_class: ActionClass::Relocate, target_node: Some("cloud-1".into()), ..scale };
    env.apply(&mv).unwrap();
    assert_eq!(env.service("svcA").unwrap().node, "cloud-1");
}

fn loaded_env(loads: &[f64], home: usize) -> SimEnv {
    let nodes: Vec<NodeConfig> = (0..loads.len()).map(|i| common::node(&format!("n{i}"), 1000, 1000)).collect();
    let sources: Vec<SourceConfig> = loads
        .iter()
        .enumerate()
        .map(|(i, l)| source(&format!("n{i}.cpu"), Some(&format!("n{i}")), None, MetricKind::CpuLoad, *l, 0.0))
        .collect();
    let services = [ServiceConfig { id: "svc".into(), node: format!("n{home}"), replicas: 1 }];
    SimEnv::new(3, &nodes, &sources, &services).unwrap()
}

proptest! {
    /// With only cpu weighted and no hysteresis the choice is the strict
    /// argmin of node load, else staying put.
    #[test]
    fn relocation_matches_argmin(loads in prop::collection::vec(0.0f64..1.0, 2..6), home in 0usize..6) {
        let home = home % loads.len();
        let env = loaded_env(&loads, home);
        let w = RelocationWeights { cpu: 1.0, mem: 0.0, storage: 0.0, latency: 0.0 };
        let min = loads.iter().copied().fold(f64::INFINITY, f64::min);
        let want = if loads[home] <= min {
            None
        } else {
            loads.iter().position(|l| *l == min).map(|i| format!("n{i}"))
        };
        prop_assert_eq!(relocation_choice(&env, "svc", &w, 0.0, 0), want);
    }

    /// Scaling every weight (and the hysteresis) by c > 0 keeps the choice.
    #[test]
    fn relocation_is_scale_invariant(
        loads in prop::collection::vec(0.0f64..1.0, 2..6),
        home in 0usize..6,
        c in 0.01f64..100.0,
        h in 0.0f64..0.2,
    ) {
        let home = home % loads.len();
        let env = loaded_env(&loads, home);
        let w = RelocationWeights::default();
        let base = relocation_choice(&env, "svc", &w, h, 0);
        let scaled = relocation_choice(&env, "svc", &w.scaled(c), h * c, 0);
        let scores = relocation_scores(&env, "svc", &w, 0);
        let near_tie = scores.values().any(|a| scores.values().any(|b| a != b && ((a - b).abs() - h).abs() < 1e-9));
        if !near_tie {
            prop_assert_eq!(base, scaled);
        }
    }
}
