use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::nifc::{Demand, NifcManager, Reservation};
use super::ManagerError;
use crate::catalog::{Catalog, Requirements};
use crate::descriptors::{ComponentResources, LearningMetric, NifDescriptor, NmapekClass};
use crate::simenv::{MetricKind, Resources, SimEnv};
use crate::Millis;

/// Consecutive below-threshold reports before an instance is marked Degraded.
pub const DEGRADE_AFTER: u32 = 3;

/// What the NIF Manager needs to know to run a NIF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NifSpec {
    pub nif_name: String,
    pub model_id: String,
    pub classes: BTreeSet<NmapekClass>,
    pub resources: ComponentResources,
    pub metric: LearningMetric,
    pub threshold_lower: Option<f64>,
    #[serde(default)]
    pub config: BTreeMap<String, f64>,
}

impl NifSpec {
    pub fn from_nifd(desc: &NifDescriptor, model_id: &str) -> Self {
        NifSpec {
            nif_name: desc.name.clone(),
            model_id: model_id.into(),
            classes: desc.classes.clone(),
            resources: desc.resources,
            metric: desc.learning_metric,
            threshold_lower: desc.thresholds.map(|t| t.lower),
            config: desc.params.clone(),
        }
    }

    /// Total demand: one component per declared class, co-located.
    pub fn demand(&self) -> Resources {
        let n = self.classes.len().max(1) as u64;
        Resources {
            cpu_millicores: self.resources.cpu_millicores * n,
            mem_mib: self.resources.mem_mib * n,
            gpu: self.resources.gpu * n,
            link_bw_mbps: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NifState {
    Instantiating,
    Running,
    Degraded,
    Terminating,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NifInstance {
    pub nif_instance_id: String,
    pub nif_name: String,
    pub model_id: String,
    pub node_id: Option<String>,
    pub nifc_ids: Vec<String>,
    pub refcount: u32,
    pub state: NifState,
    pub config: BTreeMap<String, f64>,
    pub demand: Resources,
    pub reservation_id: Option<String>,
    pub metric: LearningMetric,
    pub threshold_lower: Option<f64>,
    /// Current learning score of the deployed model.
    pub score: Option<f64>,
    pub last_health_at: Option<Millis>,
    pub below_streak: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HealthVerdict {
    Healthy,
    BelowThreshold,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthReport {
    pub nif_instance_id: String,
    pub learning_kpis: BTreeMap<String, f64>,
    pub network_kpis: BTreeMap<String, f64>,
    pub verdict: HealthVerdict,
    pub at: Millis,
}

/// NIF Manager: NIF instances, sharing refcounts and health.
#[derive(Debug, Clone, Default)]
pub struct NifManager {
    instances: BTreeMap<String, NifInstance>,
    next_instance: u64,
}

impl NifManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn instances(&self) -> impl Iterator<Item = &NifInstance> {
        self.instances.values()
    }

    pub fn live(&self) -> impl Iterator<Item = &NifInstance> {
        self.instances.values().filter(|i| i.state != NifState::Terminated)
    }

    pub fn instance(&self, id: &str) -> Result<&NifInstance, ManagerError> {
        self.instances.get(id).ok_or_else(|| ManagerError::UnknownInstance(id.into()))
    }

    fn instance_mut(&mut self, id: &str) -> Result<&mut NifInstance, ManagerError> {
        self.instances.get_mut(id).ok_or_else(|| ManagerError::UnknownInstance(id.into()))
    }

    /// A Running instance of `nif_name` whose model meets `req`; lowest id wins.
    pub fn find_instance(&self, nif_name: &str, req: &Requirements, catalog: &Catalog) -> Option<String> {
        self.instances
            .values()
            .filter(|i| i.nif_name == nif_name && i.state == NifState::Running)
            .find(|i| catalog.model(&i.model_id).is_some_and(|m| req.accepts(m)))
            .map(|i| i.nif_instance_id.clone())
    }

    /// Reserves (held) the resources for a NIF. A feasible hint wins over
    /// first-fit placement.
    pub fn plan(
        &self,
        nifc: &mut NifcManager,
        spec: &NifSpec,
        hint: Option<&str>,
        now: Millis,
    ) -> Result<Reservation, ManagerError> {
        if !nifc.has_image(&spec.model_id) {
            return Err(ManagerError::UnknownModel(spec.model_id.clone()));
        }
        let demand = spec.demand();
        if let Some(node) = hint {
            if let Ok(r) = nifc.reserve(&[Demand::on(node, demand)], now) {
                return Ok(r);
            }
        }
        nifc.reserve(&[Demand::anywhere(demand)], now)
    }

    /// Commits a planned reservation and starts the NIF with refcount 1.
    pub fn activate(
        &mut self,
        nifc: &mut NifcManager,
        spec: &NifSpec,
        reservation: &Reservation,
        now: Millis,
    ) -> Result<String, ManagerError> {
        let node = reservation.node().ok_or_else(|| ManagerError::UnknownReservation(reservation.reservation_id.clone()))?;
        let node = node.to_string();
        nifc.commit(&reservation.reservation_id, now)?;
        self.next_instance += 1;
        let id = format!("nif-{:04}", self.next_instance);
        let nifc_ids = nifc.create_components(&id, &spec.classes, spec.resources, &node);
        self.instances.insert(
            id.clone(),
            NifInstance {
                nif_instance_id: id.clone(),
                nif_name: spec.nif_name.clone(),
                model_id: spec.model_id.clone(),
                node_id: Some(node),
                nifc_ids,
                refcount: 1,
                state: NifState::Running,
                config: spec.config.clone(),
                demand: spec.demand(),
                reservation_id: Some(reservation.reservation_id.clone()),
                metric: spec.metric,
                threshold_lower: spec.threshold_lower,
                score: None,
                last_health_at: None,
                below_streak: 0,
            },
        );
        Ok(id)
    }

    pub fn instantiate_nif(
        &mut self,
        nifc: &mut NifcManager,
        spec: &NifSpec,
        hint: Option<&str>,
        now: Millis,
    ) -> Result<String, ManagerError> {
        let r = self.plan(nifc, spec, hint, now)?;
        self.activate(nifc, spec, &r, now)
    }

    pub fn set_score(&mut self, id: &str, score: f64) -> Result<(), ManagerError> {
        self.instance_mut(id)?.score = Some(score);
        Ok(())
    }

    /// Swaps the model served by a live instance.
    pub fn set_model(&mut self, id: &str, model_id: &str, score: f64) -> Result<(), ManagerError> {
        let inst = self.instance_mut(id)?;
        if inst.state == NifState::Terminated {
            return Err(ManagerError::NotRunning(id.into()));
        }
        inst.model_id = model_id.into();
        inst.score = Some(score);
        Ok(())
    }

    pub fn retain(&mut self, id: &str) -> Result<u32, ManagerError> {
        let inst = self.instance_mut(id)?;
        if inst.state == NifState::Terminated {
            return Err(ManagerError::NotRunning(id.into()));
        }
        inst.refcount += 1;
        Ok(inst.refcount)
    }

    /// Drops one reference; the last one terminates the instance.
    pub fn release_ref(&mut self, nifc: &mut NifcManager, id: &str) -> Result<u32, ManagerError> {
        let inst = self.instance_mut(id)?;
        if inst.state == NifState::Terminated {
            return Err(ManagerError::NotRunning(id.into()));
        }
        inst.refcount = inst.refcount.saturating_sub(1);
        let left = inst.refcount;
        if left == 0 {
            self.terminate_nif(nifc, id)?;
        }
        Ok(left)
    }

    /// Tears the instance down: links, components and resources.
    pub fn terminate_nif(&mut self, nifc: &mut NifcManager, id: &str) -> Result<Vec<String>, ManagerError> {
        let inst = self.instance_mut(id)?;
        if inst.state == NifState::Terminated {
            return Err(ManagerError::NotRunning(id.into()));
        }
        inst.state = NifState::Terminating;
        let links: Vec<String> = nifc
            .links()
            .filter(|l| l.from_instance == id || l.to_instance == id)
            .map(|l| l.link_id.clone())
            .collect();
        for l in &links {
            nifc.disconnect(l)?;
        }
        if let Some(r) = inst.reservation_id.take() {
            let _ = nifc.release(&r);
        }
        nifc.remove_components(id);
        inst.nifc_ids.clear();
        inst.node_id = None;
        inst.refcount = 0;
        inst.state = NifState::Terminated;
        Ok(links)
    }

    /// Links two running instances, reserving bandwidth on both nodes.
    pub fn connect(
        &mut self,
        nifc: &mut NifcManager,
        a: &str,
        b: &str,
        bw: u64,
        now: Millis,
    ) -> Result<String, ManagerError> {
        let node_a = self.running_node(a)?;
        let node_b = self.running_node(b)?;
        let r = nifc.reserve_link(&node_a, &node_b, bw, now)?;
        nifc.commit(&r.reservation_id, now)?;
        Ok(nifc.add_link(a, b, bw, &r.reservation_id))
    }

    pub fn running_node(&self, id: &str) -> Result<String, ManagerError> {
        let inst = self.instance(id)?;
        match (&inst.node_id, inst.state) {
            (Some(n), NifState::Running | NifState::Degraded) => Ok(n.clone()),
            _ => Err(ManagerError::NotRunning(id.into())),
        }
    }

    /// Health at `now` without recording it.
    pub fn peek_health(&self, id: &str, env: &SimEnv, now: Millis) -> Result<HealthReport, ManagerError> {
        let inst = self.instance(id)?;
        let node = self.running_node(id)?;
        let fault = env.node(&node).map(|n| n.fault).unwrap_or(false);
        let mut learning = BTreeMap::new();
        if let Some(score) = inst.score {
            let key = if inst.metric.higher_is_better() { "accuracy" } else { "loss" };
            learning.insert(key.to_string(), score);
        }
        let mut network = BTreeMap::new();
        let base_latency = env.node(&node).map_or(0.0, |n| n.base_latency_ms);
        network.insert("latency_ms".into(), env.node_metric(&node, MetricKind::E2eLatencyMs, now).unwrap_or(base_latency));
        network.insert("cpu_load".into(), env.node_metric(&node, MetricKind::CpuLoad, now).unwrap_or(0.0));
        network.insert("mem_load".into(), env.node_metric(&node, MetricKind::MemLoad, now).unwrap_or(0.0));
        let verdict = if fault {
            HealthVerdict::Failed
        } else if inst.score.zip(inst.threshold_lower).is_some_and(|(s, l)| !inst.metric.meets(s, l)) {
            HealthVerdict::BelowThreshold
        } else {
            HealthVerdict::Healthy
        };
        Ok(HealthReport { nif_instance_id: id.into(), learning_kpis: learning, network_kpis: network, verdict, at: now })
    }

    /// Samples health and updates the instance state. Report times must
    /// strictly increase.
    pub fn nif_health(&mut self, id: &str, env: &SimEnv, now: Millis) -> Result<HealthReport, ManagerError> {
        let report = self.peek_health(id, env, now)?;
        let inst = self.instance_mut(id)?;
        if let Some(last) = inst.last_health_at {
            if now <= last {
                return Err(ManagerError::StaleHealth { last, at: now });
            }
        }
        inst.last_health_at = Some(now);
        match report.verdict {
            HealthVerdict::Healthy => {
                inst.below_streak = 0;
                inst.state = NifState::Running;
            }
            HealthVerdict::BelowThreshold => {
                inst.below_streak += 1;
                if inst.below_streak >= DEGRADE_AFTER {
                    inst.state = NifState::Degraded;
                }
            }
            HealthVerdict::Failed => inst.state = NifState::Degraded,
        }
        Ok(report)
    }
}
