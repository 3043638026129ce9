//! Deterministic discrete-event simulation of the edge/cloud infrastructure.
//!
//! Time is logical and measured in integer milliseconds. Metric samples are
//! pure functions of `(seed, source, time)`: each source is an AR(1)-style
//! process whose innovations are drawn from a ChaCha stream keyed by the
//! sample index, truncated to a fixed history window so any instant can be
//! evaluated without replaying the whole run.

mod behaviors;
mod queue;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::stable_hash;
use crate::descriptors::ActionClass;
use crate::Millis;

pub use behaviors::{
    relocation_choice, relocation_scores, NifBehavior, ProposedAction, RelocationWeights, ScenarioNifs,
};
pub use queue::{EventQueue, SimEvent};

/// AR(1) history evaluated per sample.
const AR_WINDOW: u64 = 32;
/// cpu_load floor on a node with an injected fault.
pub const FAULT_CPU_LOAD: f64 = 0.97;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("cannot move clock from {now} back to {requested}")]
    TimeReversal { now: Millis, requested: Millis },
    #[error("unknown metric source {0}")]
    UnknownSource(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// Resource vector used for node capacities and demands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Resources {
    #[serde(default)]
    pub cpu_millicores: u64,
    #[serde(default)]
    pub mem_mib: u64,
    #[serde(default)]
    pub gpu: u64,
    #[serde(default)]
    pub link_bw_mbps: u64,
}

impl Resources {
    pub fn fits_in(&self, available: &Resources) -> bool {
        self.cpu_millicores <= available.cpu_millicores
            && self.mem_mib <= available.mem_mib
            && self.gpu <= available.gpu
            && self.link_bw_mbps <= available.link_bw_mbps
    }

    pub fn saturating_sub(&self, other: &Resources) -> Resources {
        Resources {
            cpu_millicores: self.cpu_millicores.saturating_sub(other.cpu_millicores),
            mem_mib: self.mem_mib.saturating_sub(other.mem_mib),
            gpu: self.gpu.saturating_sub(other.gpu),
            link_bw_mbps: self.link_bw_mbps.saturating_sub(other.link_bw_mbps),
        }
    }

    pub fn add(&self, other: &Resources) -> Resources {
        Resources {
            cpu_millicores: self.cpu_millicores + other.cpu_millicores,
            mem_mib: self.mem_mib + other.mem_mib,
            gpu: self.gpu + other.gpu,
            link_bw_mbps: self.link_bw_mbps + other.link_bw_mbps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Cloud,
    Edge,
}

impl Tier {
    pub fn default_latency_ms(self) -> f64 {
        match self {
            Tier::Edge => 5.0,
            Tier::Cloud => 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeConfig {
    pub id: String,
    pub tier: Tier,
    pub capacity: Resources,
    /// Network latency contributed by the node; defaults per tier.
    #[serde(default)]
    pub base_latency_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimNode {
    pub node_id: String,
    pub tier: Tier,
    pub capacity: Resources,
    pub base_latency_ms: f64,
    pub fault: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    CpuLoad,
    MemLoad,
    StorageUsed,
    E2eLatencyMs,
}

/// Forced value over `[from, to)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub from: Millis,
    pub to: Millis,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceConfig {
    pub id: String,
    #[serde(default)]
    pub node: Option<String>,
    #[serde(default)]
    pub service: Option<String>,
    pub kind: MetricKind,
    pub mean: f64,
    #[serde(default)]
    pub std: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    pub period_ms: Millis,
    #[serde(default)]
    pub spikes: Vec<Spike>,
}

fn default_phi() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub id: String,
    pub node: String,
    #[serde(default = "one")]
    pub replicas: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceState {
    pub node: String,
    pub replicas: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StreamTarget {
    Node(String),
    Service(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStream {
    pub source_id: String,
    pub target: StreamTarget,
    pub kind: MetricKind,
    pub mean: f64,
    pub std: f64,
    pub phi: f64,
    pub period_ms: Millis,
    pub spikes: Vec<Spike>,
}

/// Simulated nodes, services and metric sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEnv {
    seed: u64,
    nodes: BTreeMap<String, SimNode>,
    sources: BTreeMap<String, MetricStream>,
    services: BTreeMap<String, ServiceState>,
}

impl SimEnv {
    pub fn new(
        seed: u64,
        nodes: &[NodeConfig],
        sources: &[SourceConfig],
        services: &[ServiceConfig],
    ) -> Result<Self, SimError> {
        let mut env = SimEnv { seed, nodes: BTreeMap::new(), sources: BTreeMap::new(), services: BTreeMap::new() };
        for n in nodes {
            let c = n.capacity;
            if c.cpu_millicores == 0 || c.mem_mib == 0 || c.link_bw_mbps == 0 {
                return Err(SimError::Config(format!("node {} needs positive cpu, mem and link capacity", n.id)));
            }
            let node = SimNode {
                node_id: n.id.clone(),
                tier: n.tier,
                capacity: c,
                base_latency_ms: n.base_latency_ms.unwrap_or(n.tier.default_latency_ms()),
                fault: false,
            };
            if env.nodes.insert(n.id.clone(), node).is_some() {
                return Err(SimError::Config(format!("duplicate node {}", n.id)));
            }
        }
        for s in services {
            env.node(&s.node)?;
            env.services.insert(s.id.clone(), ServiceState { node: s.node.clone(), replicas: s.replicas });
        }
        for s in sources {
            if s.period_ms == 0 {
                return Err(SimError::Config(format!("source {} has zero period", s.id)));
            }
            let target = match (&s.node, &s.service) {
                (Some(n), None) => {
                    env.node(n)?;
                    StreamTarget::Node(n.clone())
                }
                (None, Some(svc)) => {
                    env.service(svc)?;
                    StreamTarget::Service(svc.clone())
                }
                _ => return Err(SimError::Config(format!("source {} needs exactly one of node/service", s.id))),
            };
            env.sources.insert(
                s.id.clone(),
                MetricStream {
                    source_id: s.id.clone(),
                    target,
                    kind: s.kind,
                    mean: s.mean,
                    std: s.std,
                    phi: s.phi.clamp(0.0, 0.999),
                    period_ms: s.period_ms,
                    spikes: s.spikes.clone(),
                },
            );
        }
        Ok(env)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.values()
    }

    pub fn node(&self, id: &str) -> Result<&SimNode, SimError> {
        self.nodes.get(id).ok_or_else(|| SimError::UnknownNode(id.into()))
    }

    pub fn service(&self, id: &str) -> Result<&ServiceState, SimError> {
        self.services.get(id).ok_or_else(|| SimError::UnknownService(id.into()))
    }

    pub fn services(&self) -> &BTreeMap<String, ServiceState> {
        &self.services
    }

    pub fn source(&self, id: &str) -> Result<&MetricStream, SimError> {
        self.sources.get(id).ok_or_else(|| SimError::UnknownSource(id.into()))
    }

    pub fn sources(&self) -> impl Iterator<Item = &MetricStream> {
        self.sources.values()
    }

    pub fn set_fault(&mut self, node: &str, fault: bool) -> Result<(), SimError> {
        self.nodes.get_mut(node).ok_or_else(|| SimError::UnknownNode(node.into()))?.fault = fault;
        Ok(())
    }

    /// Node a stream currently measures (a service stream follows its service).
    fn stream_node(&self, stream: &MetricStream) -> Option<&SimNode> {
        let id = match &stream.target {
            StreamTarget::Node(n) => n,
            StreamTarget::Service(s) => &self.services.get(s)?.node,
        };
        self.nodes.get(id)
    }

    pub fn sample(&self, source_id: &str, at: Millis) -> Result<f64, SimError> {
        let stream = self.source(source_id)?;
        let node = self.stream_node(stream);
        Ok(self.sample_stream(stream, node, at))
    }

    fn sample_stream(&self, stream: &MetricStream, node: Option<&SimNode>, at: Millis) -> f64 {
        let noise = self.ar_noise(stream, at);
        let raw = match stream.spikes.iter().find(|s| s.from <= at && at < s.to) {
            Some(spike) => spike.value,
            None => stream.mean + noise,
        };
        match stream.kind {
            MetricKind::E2eLatencyMs => {
                let base = node.map_or(0.0, |n| n.base_latency_ms);
                (base + raw).max(0.1)
            }
            MetricKind::CpuLoad => {
                let v = raw.clamp(0.0, 1.0);
                if node.is_some_and(|n| n.fault) {
                    v.max(FAULT_CPU_LOAD)
                } else {
                    v
                }
            }
            MetricKind::MemLoad | MetricKind::StorageUsed => raw.clamp(0.0, 1.0),
        }
    }

    /// Zero-mean AR(1) deviation at the sample index covering `at`.
    fn ar_noise(&self, stream: &MetricStream, at: Millis) -> f64 {
        if stream.std == 0.0 {
            return 0.0;
        }
        let k = at / stream.period_ms;
        let innovation_scale = stream.std * (1.0 - stream.phi * stream.phi).sqrt();
        let mut x = 0.0;
        for i in k.saturating_sub(AR_WINDOW)..=k {
            let key = stable_hash(&[&self.seed.to_le_bytes(), stream.source_id.as_bytes(), &i.to_le_bytes()]);
            let eps: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(key));
            x = stream.phi * x + innovation_scale * eps;
        }
        x
    }

    /// First stream of `kind` attached directly to `node`.
    pub fn node_metric(&self, node: &str, kind: MetricKind, at: Millis) -> Option<f64> {
        let n = self.nodes.get(node)?;
        self.sources
            .values()
            .find(|s| s.kind == kind && matches!(&s.target, StreamTarget::Node(id) if id == node))
            .map(|s| self.sample_stream(s, Some(n), at))
    }

    /// Latency the service would see if it ran on `node`.
    pub fn latency_estimate(&self, service: &str, node: &str, at: Millis) -> Result<f64, SimError> {
        let n = self.node(node)?;
        self.service(service)?;
        let stream = self
            .sources
            .values()
            .find(|s| s.kind == MetricKind::E2eLatencyMs && matches!(&s.target, StreamTarget::Service(id) if id == service));
        Ok(match stream {
            Some(s) => self.sample_stream(s, Some(n), at),
            None => n.base_latency_ms,
        })
    }

    /// Applies an admitted configuration action to the simulated service.
    /// Relocation swaps the placement atomically.
    pub fn apply(&mut self, action: &ProposedAction) -> Result<(), SimError> {
        if let Some(target) = &action.target_node {
            self.node(target)?;
        }
        let svc = self
            .services
            .get_mut(&action.service_id)
            .ok_or_else(|| SimError::UnknownService(action.service_id.clone()))?;
        match action.action_class {
            ActionClass::Scale => svc.replicas += 1,
            ActionClass::Relocate => {
                if let Some(target) = &action.target_node {
                    svc.node = target.clone();
                }
            }
            ActionClass::Reconfigure => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_edges_and_cloud() -> SimEnv {
        let cap = Resources { cpu_millicores: 4000, mem_mib: 8192, gpu: 0, link_bw_mbps: 1000 };
        let nodes = vec![
            NodeConfig { id: "cloud-0".into(), tier: Tier::Cloud, capacity: cap, base_latency_ms: None },
            NodeConfig { id: "edge-1".into(), tier: Tier::Edge, capacity: cap, base_latency_ms: None },
            NodeConfig { id: "edge-2".into(), tier: Tier::Edge, capacity: cap, base_latency_ms: None },
        ];
        let src = |id: &str, node: &str, kind| SourceConfig {
            id: id.into(),
            node: Some(node.into()),
            service: None,
            kind,
            mean: 0.3,
            std: 0.05,
            phi: 0.8,
            period_ms: 1000,
            spikes: vec![],
        };
        let mut sources = vec![
            src("edge-1.cpu", "edge-1", MetricKind::CpuLoad),
            src("edge-2.cpu", "edge-2", MetricKind::CpuLoad),
            src("cloud-0.cpu", "cloud-0", MetricKind::CpuLoad),
        ];
        sources.push(SourceConfig {
            id: "svcA.latency".into(),
            node: None,
            service: Some("svcA".into()),
            kind: MetricKind::E2eLatencyMs,
            mean: 2.0,
            std: 0.5,
            phi: 0.5,
            period_ms: 1000,
            spikes: vec![],
        });
        let services = vec![ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 }];
        SimEnv::new(42, &nodes, &sources, &services).unwrap()
    }

    #[test]
    fn samples_are_deterministic() {
        let env = two_edges_and_cloud();
        let other = two_edges_and_cloud();
        for t in [0, 999, 1000, 54321] {
            assert_eq!(env.sample("edge-1.cpu", t).unwrap(), other.sample("edge-1.cpu", t).unwrap());
        }
        // different seed, different stream
        let mut reseeded = other.clone();
        reseeded.seed = 7;
        assert_ne!(env.sample("edge-1.cpu", 5000).unwrap(), reseeded.sample("edge-1.cpu", 5000).unwrap());
    }

    #[test]
    fn fault_forces_high_cpu() {
        let mut env = two_edges_and_cloud();
        env.set_fault("edge-1", true).unwrap();
        for t in (0..20_000).step_by(1000) {
            assert!(env.sample("edge-1.cpu", t).unwrap() >= 0.95);
        }
    }

    #[test]
    fn edge_latency_below_cloud() {
        let env = two_edges_and_cloud();
        // generator means: edge 5 + 2 = 7 ms, cloud 40 + 2 = 42 ms; noise std 0.5
        for t in (0..50_000).step_by(1000) {
            let edge = env.latency_estimate("svcA", "edge-1", t).unwrap();
            let cloud = env.latency_estimate("svcA", "cloud-0", t).unwrap();
            assert!(edge < cloud, "t={t}: {edge} vs {cloud}");
        }
    }

    #[test]
    fn unknown_source() {
        let env = two_edges_and_cloud();
        assert_eq!(env.sample("nope", 0), Err(SimError::UnknownSource("nope".into())));
    }

    #[test]
    fn spikes_override() {
        let nodes = vec![NodeConfig {
            id: "n".into(),
            tier: Tier::Edge,
            capacity: Resources { cpu_millicores: 1, mem_mib: 1, gpu: 0, link_bw_mbps: 1 },
            base_latency_ms: None,
        }];
        let sources = vec![SourceConfig {
            id: "n.cpu".into(),
            node: Some("n".into()),
            service: None,
            kind: MetricKind::CpuLoad,
            mean: 0.2,
            std: 0.0,
            phi: 0.8,
            period_ms: 1000,
            spikes: vec![Spike { from: 5000, to: 6000, value: 0.97 }],
        }];
        let env = SimEnv::new(1, &nodes, &sources, &[]).unwrap();
        assert_eq!(env.sample("n.cpu", 4999).unwrap(), 0.2);
        assert_eq!(env.sample("n.cpu", 5000).unwrap(), 0.97);
        assert_eq!(env.sample("n.cpu", 6000).unwrap(), 0.2);
    }

    #[test]
    fn relocation_is_an_atomic_swap() {
        let mut env = two_edges_and_cloud();
        let action = ProposedAction {
            nif: "nif2".into(),
            service_id: "svcA".into(),
            action_class: ActionClass::Relocate,
            target_node: Some("edge-2".into()),
            at: 0,
        };
        env.apply(&action).unwrap();
        assert_eq!(env.service("svcA").unwrap().node, "edge-2");
    }
}
