//! Samples telemetry from a two-tier simulated infrastructure, injects a
//! node fault and shows where a relocating NIF would move the service.
//!
//! cargo run --example simulate -- 42

use ni_stratum::simenv::{
    relocation_choice, relocation_scores, MetricKind, NodeConfig, RelocationWeights, Resources, ServiceConfig, SimEnv,
    SourceConfig, Tier,
};

fn node(id: &str, tier: Tier) -> NodeConfig {
    NodeConfig {
        id: id.into(),
        tier,
        capacity: Resources { cpu_millicores: 4000, mem_mib: 8192, gpu: 0, link_bw_mbps: 1000 },
        base_latency_ms: None,
    }
}

fn cpu(node: &str, mean: f64) -> SourceConfig {
    SourceConfig {
        id: format!("{node}.cpu"),
        node: Some(node.into()),
        service: None,
        kind: MetricKind::CpuLoad,
        mean,
        std: 0.05,
        phi: 0.8,
        period_ms: 1000,
        spikes: vec![],
    }
}

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(42);
    let nodes = [node("edge-1", Tier::Edge), node("edge-2", Tier::Edge), node("cloud-1", Tier::Cloud)];
    let sources = [cpu("edge-1", 0.6), cpu("edge-2", 0.3), cpu("cloud-1", 0.2)];
    let services = [ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 }];
    let mut env = SimEnv::new(seed, &nodes, &sources, &services)?;

    for t in (0..5000).step_by(1000) {
        let row: Vec<String> = sources.iter().map(|s| format!("{}={:.3}", s.id, env.sample(&s.id, t).unwrap())).collect();
        println!("t={t:>5} {}", row.join(" "));
    }
    for n in &nodes {
        println!("latency svcA@{}: {:.2} ms", n.id, env.latency_estimate("svcA", &n.id, 0)?);
    }

    let w = RelocationWeights::default();
    println!("scores {:?}", relocation_scores(&env, "svcA", &w, 0));
    println!("move svcA to {:?}", relocation_choice(&env, "svcA", &w, 0.05, 0));
    env.set_fault("edge-2", true)?;
    println!("edge-2 faulted, cpu={:.3}", env.sample("edge-2.cpu", 0)?);
    println!("move svcA to {:?}", relocation_choice(&env, "svcA", &w, 0.05, 0));
    Ok(())
}
