//! The two scenario NIFs: an anomaly detector that scales a service out when
//! its node's CPU load crosses the model threshold, and a relocator that
//! moves the service to the node with the best multi-criteria score.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricKind, SimEnv};
use crate::descriptors::ActionClass;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposedAction {
    pub nif: String,
    pub service_id: String,
    pub action_class: ActionClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_node: Option<String>,
    pub at: Millis,
}

/// Criteria weights for the relocation score (lower score is better).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelocationWeights {
    pub cpu: f64,
    pub mem: f64,
    pub storage: f64,
    pub latency: f64,
}

impl Default for RelocationWeights {
    fn default() -> Self {
        RelocationWeights { cpu: 0.3, mem: 0.2, storage: 0.1, latency: 0.4 }
    }
}

impl RelocationWeights {
    pub fn scaled(self, c: f64) -> Self {
        RelocationWeights { cpu: self.cpu * c, mem: self.mem * c, storage: self.storage * c, latency: self.latency * c }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum NifBehavior {
    /// Proposes `scale` on the rising edge of `cpu_load > theta` on the
    /// service's node.
    AnomalyScale { service: String, theta: f64 },
    /// Proposes `relocate` when another node beats the current one by more
    /// than `hysteresis`.
    Relocate {
        service: String,
        #[serde(default)]
        weights: RelocationWeights,
        #[serde(default)]
        hysteresis: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    behavior: NifBehavior,
    period_ms: Millis,
    start_ms: Millis,
    active: bool,
    pending: bool,
    above_threshold: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioNifs {
    slots: BTreeMap<String, Slot>,
}

impl ScenarioNifs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, nif: &str, behavior: NifBehavior, period_ms: Millis, start_ms: Millis) {
        self.slots.insert(
            nif.to_string(),
            Slot { behavior, period_ms: period_ms.max(1), start_ms, active: false, pending: false, above_threshold: false },
        );
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.slots.keys()
    }

    pub fn contains(&self, nif: &str) -> bool {
        self.slots.contains_key(nif)
    }

    pub fn period(&self, nif: &str) -> Option<(Millis, Millis)> {
        self.slots.get(nif).map(|s| (s.start_ms, s.period_ms))
    }

    pub fn is_active(&self, nif: &str) -> bool {
        self.slots.get(nif).is_some_and(|s| s.active)
    }

    /// Activates the behaviour once its NIF instance runs; deactivation
    /// clears any pending proposal.
    pub fn set_active(&mut self, nif: &str, active: bool) {
        if let Some(s) = self.slots.get_mut(nif) {
            s.active = active;
            if !active {
                s.pending = false;
                s.above_threshold = false;
            }
        }
    }

    /// Sets the anomaly threshold read from the deployed model.
    pub fn set_theta(&mut self, nif: &str, theta: f64) {
        if let Some(Slot { behavior: NifBehavior::AnomalyScale { theta: t, .. }, .. }) = self.slots.get_mut(nif) {
            *t = theta;
        }
    }

    /// A NIF holding a delayed proposal does not propose again.
    pub fn set_pending(&mut self, nif: &str, pending: bool) {
        if let Some(s) = self.slots.get_mut(nif) {
            s.pending = pending;
        }
    }

    pub fn is_pending(&self, nif: &str) -> bool {
        self.slots.get(nif).is_some_and(|s| s.pending)
    }

    /// Evaluates one NIF's decision logic at `now`.
    pub fn propose(&mut self, nif: &str, env: &SimEnv, now: Millis) -> Option<ProposedAction> {
        let slot = self.slots.get_mut(nif)?;
        if !slot.active || slot.pending {
            return None;
        }
        match &slot.behavior {
            NifBehavior::AnomalyScale { service, theta } => {
                let node = &env.service(service).ok()?.node;
                let cpu = env.node_metric(node, MetricKind::CpuLoad, now)?;
                let above = cpu > *theta;
                let onset = above && !slot.above_threshold;
                slot.above_threshold = above;
                onset.then(|| ProposedAction {
                    nif: nif.to_string(),
                    service_id: service.clone(),
                    action_class: ActionClass::Scale,
                    target_node: None,
                    at: now,
                })
            }
            NifBehavior::Relocate { service, weights, hysteresis } => {
                let target = relocation_choice(env, service, weights, *hysteresis, now)?;
                Some(ProposedAction {
                    nif: nif.to_string(),
                    service_id: service.clone(),
                    action_class: ActionClass::Relocate,
                    target_node: Some(target),
                    at: now,
                })
            }
        }
    }

    /// Runs every active NIF whose decision period falls on `now`.
    pub fn run_scenario_nifs(&mut self, env: &SimEnv, now: Millis) -> Vec<ProposedAction> {
        let due: Vec<String> = self
            .slots
            .iter()
            .filter(|(_, s)| now >= s.start_ms && (now - s.start_ms).is_multiple_of(s.period_ms))
            .map(|(n, _)| n.clone())
            .collect();
        due.iter().filter_map(|n| self.propose(n, env, now)).collect()
    }
}

/// Per-node relocation scores for `service` (lower is better), keyed by node id.
pub fn relocation_scores(env: &SimEnv, service: &str, weights: &RelocationWeights, now: Millis) -> BTreeMap<String, f64> {
    let mut raw = Vec::new();
    for node in env.nodes() {
        let id = &node.node_id;
        let cpu = env.node_metric(id, MetricKind::CpuLoad, now).unwrap_or(0.0);
        let mem = env.node_metric(id, MetricKind::MemLoad, now).unwrap_or(0.0);
        let storage = env.node_metric(id, MetricKind::StorageUsed, now).unwrap_or(0.0);
        let latency = env.latency_estimate(service, id, now).unwrap_or(node.base_latency_ms);
        raw.push((id.clone(), cpu, mem, storage, latency));
    }
    let max_latency = raw.iter().map(|r| r.4).fold(0.0_f64, f64::max);
    raw.into_iter()
        .map(|(id, cpu, mem, storage, latency)| {
            let lat = if max_latency > 0.0 { latency / max_latency } else { 0.0 };
            (id, weights.cpu * cpu + weights.mem * mem + weights.storage * storage + weights.latency * lat)
        })
        .collect()
}

/// Node the service should move to, if any. The current node wins ties;
/// among other nodes the lowest id wins.
pub fn relocation_choice(
    env: &SimEnv,
    service: &str,
    weights: &RelocationWeights,
    hysteresis: f64,
    now: Millis,
) -> Option<String> {
    let current = env.service(service).ok()?.node.clone();
    let scores = relocation_scores(env, service, weights, now);
    let current_score = *scores.get(&current)?;
    let (best, best_score) = scores
        .iter()
        .fold(None::<(&String, f64)>, |acc, (id, s)| match acc {
            Some((_, bs)) if bs <= *s => acc,
            _ => Some((id, *s)),
        })?;
    (best != &current && best_score + hysteresis < current_score).then(|| best.clone())
}
