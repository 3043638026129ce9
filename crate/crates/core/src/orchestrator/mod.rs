//! The network intelligence orchestrator (NIO): creation, instantiation,
//! update and termination of NIS instances, driven as explicit state
//! machines over the catalog, policy engine, managers and pipelines.
//!
//! `Nio` is the single mutator of all of that state. Every step is appended
//! to its event log with the acting component named.

mod auth;
mod lifecycle;
mod selection;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::api::eventlog::{actor, EventLog, EventLogError, Outcome};
use crate::catalog::{Catalog, CatalogError, ModelImage, Requirements};
use crate::descriptors::{
    extract_profile, parse_descriptor, Descriptor, NifDescriptor, NmapekProfile, VersionConstraint,
};
use crate::managers::{
    self, HealthReport, HealthVerdict, ManagerError, ManagerSnapshot, NifManager, NifState, NifcManager,
};
use crate::pipelines::{PipelineError, Pipelines};
use crate::policy::{
    ActionGate, ActionRequest, ConflictMatrix, GateDecision, PolicyError, PolicyRule, PolicyStore, Verdict,
};
use crate::simenv::{MetricKind, ProposedAction, Resources, SimEnv, SimError};
use crate::Millis;

pub use auth::{AuthEntry, AuthTable, RequestKind};
pub use lifecycle::{CreateResult, LifecycleRequest, RequestPayload, Submission, TerminationReport, UpdateResult};
pub use selection::{image_scores, select_model, ArbitrationPolicy, TIE_TOLERANCE};

#[derive(Debug, Error)]
pub enum NioError {
    #[error("sender {sender} may not issue {kind:?} requests")]
    Unauthorized { sender: String, kind: RequestKind },
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unknown NISD {0}")]
    UnknownNisd(String),
    #[error("unknown NIFD {0}")]
    UnknownNifd(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("instance {instance_id} is {state:?}")]
    InvalidState { instance_id: String, state: NisState },
    #[error("insufficient resources: {0}")]
    InsufficientResources(String),
    #[error("unresolvable conflicts: {0:?}")]
    ConflictUnresolvable(Vec<String>),
    #[error("pipeline for {nif} failed: {reason}")]
    PipelineFailed { nif: String, reason: String },
    #[error("no candidate models")]
    EmptyCandidates,
    #[error("no score vector for model {0}")]
    MissingScore(String),
    #[error("invalid arbitration policy: {0}")]
    InvalidPolicy(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Manager(ManagerError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Log(#[from] EventLogError),
    #[error("state dump: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ManagerError> for NioError {
    fn from(e: ManagerError) -> Self {
        match e {
            ManagerError::InsufficientResources(m) => NioError::InsufficientResources(m),
            other => NioError::Manager(other),
        }
    }
}

impl NioError {
    /// Short code used in `error:<code>` outcomes and HTTP bodies.
    pub fn code(&self) -> &'static str {
        match self {
            NioError::Unauthorized { .. } => "unauthorized",
            NioError::InvalidDescriptor(_) => "invalid_descriptor",
            NioError::UnknownNisd(_) => "unknown_nisd",
            NioError::UnknownNifd(_) => "unknown_nifd",
            NioError::UnknownInstance(_) => "unknown_instance",
            NioError::InvalidState { .. } => "invalid_state",
            NioError::InsufficientResources(_) => "insufficient_resources",
            NioError::ConflictUnresolvable(_) => "conflict_unresolvable",
            NioError::PipelineFailed { .. } => "pipeline_failed",
            NioError::EmptyCandidates => "empty_candidates",
            NioError::MissingScore(_) => "missing_score",
            NioError::InvalidPolicy(_) => "invalid_policy",
            NioError::Catalog(CatalogError::InvalidDescriptor(_)) => "invalid_descriptor",
            NioError::Catalog(CatalogError::VersionConflict { .. }) => "version_conflict",
            NioError::Catalog(_) => "catalog",
            NioError::Policy(PolicyError::UnknownNif(_)) => "unknown_nif",
            NioError::Policy(_) => "policy",
            NioError::Manager(_) => "manager",
            NioError::Pipeline(_) => "pipeline",
            NioError::Sim(_) => "sim",
            NioError::Log(_) => "event_log",
            NioError::Io(_) => "io",
        }
    }

    /// Denials are refusals by design; everything else is an error.
    pub fn outcome(&self) -> Outcome {
        match self {
            NioError::Unauthorized { .. } | NioError::InsufficientResources(_) => Outcome::Denied,
            other => Outcome::Error(other.code().into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NisState {
    Validating,
    ResolvingConflicts,
    CreatingNIFs,
    Reserving,
    Interconnecting,
    Running,
    Updating,
    Terminating,
    Terminated,
    Failed,
}

impl NisState {
    /// Transitions of the instance state machine.
    pub fn can_move_to(self, to: NisState) -> bool {
        use NisState::*;
        matches!(
            (self, to),
            (Validating, ResolvingConflicts)
                | (ResolvingConflicts, CreatingNIFs)
                | (CreatingNIFs, Reserving)
                | (Reserving, Interconnecting)
                | (Interconnecting, Running)
                | (Running, Updating)
                | (Updating, Running)
                | (Running, Terminating)
                | (Terminating, Terminated)
                | (Validating | ResolvingConflicts | CreatingNIFs | Reserving | Interconnecting | Updating, Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NisInstance {
    pub instance_id: String,
    pub nisd_ref: String,
    pub nisd_name: String,
    pub state: NisState,
    pub nif_instance_ids: Vec<String>,
    /// Member NIF name → NIF instance id.
    pub members: BTreeMap<String, String>,
    /// Member NIF name → digest of the NIFD it was deployed from.
    pub nifd_refs: BTreeMap<String, String>,
    pub link_ids: Vec<String>,
    pub created_at: Millis,
    pub policy_ids: Vec<String>,
    pub profiles: Vec<NmapekProfile>,
    /// Shared-knowledge rules attached at instantiation.
    pub knowledge: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NifSummary {
    pub nif_instance_id: String,
    pub nif_name: String,
    pub model_id: String,
    pub node_id: Option<String>,
    pub refcount: u32,
    pub state: NifState,
    pub health: Option<HealthReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NisStatus {
    pub instance_id: String,
    pub nisd_ref: String,
    pub state: NisState,
    pub nifs: Vec<NifSummary>,
    pub links: Vec<String>,
    pub policies: Vec<PolicyRule>,
    /// Resources held by this instance's NIFs, per node.
    pub allocations: BTreeMap<String, Resources>,
}

/// Everything a failed operation must leave untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NioSnapshot {
    pub managers: ManagerSnapshot,
    pub instances: Vec<NisInstance>,
    pub policies: Vec<PolicyRule>,
    pub active_models: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub source_id: String,
    pub samples: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub sender: String,
    pub token: String,
}

impl Credentials {
    pub fn new(sender: &str, token: &str) -> Self {
        Credentials { sender: sender.into(), token: token.into() }
    }
}

#[derive(Debug, Clone)]
pub struct NioConfig {
    pub seed: u64,
    pub epoch_budget: u32,
    pub arbitration: ArbitrationPolicy,
    pub matrix: ConflictMatrix,
    pub auth: AuthTable,
    pub reservation_ttl: Millis,
    /// Persist catalog, policies and pipeline runs here when set.
    pub data_dir: Option<PathBuf>,
}

impl Default for NioConfig {
    fn default() -> Self {
        NioConfig {
            seed: 42,
            epoch_budget: 100,
            arbitration: ArbitrationPolicy::default(),
            matrix: ConflictMatrix::default(),
            auth: AuthTable::new(),
            reservation_ttl: managers::DEFAULT_RESERVATION_TTL,
            data_dir: None,
        }
    }
}

pub struct Nio {
    pub(crate) config: NioConfig,
    pub(crate) catalog: Catalog,
    pub(crate) policies: PolicyStore,
    pub(crate) gate: ActionGate,
    pub(crate) nifm: NifManager,
    pub(crate) nifc: NifcManager,
    pub(crate) pipelines: Pipelines,
    pub(crate) env: SimEnv,
    pub(crate) log: EventLog,
    pub(crate) instances: BTreeMap<String, NisInstance>,
    /// NIF name → model currently deployed for it.
    pub(crate) active_models: BTreeMap<String, String>,
    pub(crate) now: Millis,
    next_request: u64,
    next_instance: u64,
    /// Deployment order of running instances, for priority rules.
    pub(crate) seniority: BTreeMap<String, u64>,
}

impl Nio {
    pub fn new(config: NioConfig, env: SimEnv) -> Result<Self, NioError> {
        config.arbitration.check()?;
        let (catalog, policies, pipelines) = match &config.data_dir {
            Some(dir) => (Catalog::open(dir)?, PolicyStore::open(dir)?, Pipelines::with_log(dir)?),
            None => (Catalog::in_memory(), PolicyStore::new(), Pipelines::new()),
        };
        let nifc = NifcManager::from_env(&env).with_ttl(config.reservation_ttl);
        Ok(Nio {
            config,
            catalog,
            policies,
            gate: ActionGate::new(),
            nifm: NifManager::new(),
            nifc,
            pipelines,
            env,
            log: EventLog::new(),
            instances: BTreeMap::new(),
            active_models: BTreeMap::new(),
            now: 0,
            next_request: 0,
            next_instance: 0,
            seniority: BTreeMap::new(),
        })
    }

    /// Replaces the in-memory log, e.g. with one mirrored to a file.
    pub fn with_event_log(mut self, log: EventLog) -> Self {
        self.log = log;
        self
    }

    pub fn config(&self) -> &NioConfig {
        &self.config
    }
    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }
    pub fn catalog_mut(&mut self) -> &mut Catalog {
        &mut self.catalog
    }
    pub fn policies(&self) -> &PolicyStore {
        &self.policies
    }
    pub fn gate(&self) -> &ActionGate {
        &self.gate
    }
    pub fn nif_manager(&self) -> &NifManager {
        &self.nifm
    }
    pub fn nifc_manager(&self) -> &NifcManager {
        &self.nifc
    }
    pub fn pipelines(&self) -> &Pipelines {
        &self.pipelines
    }
    pub fn env(&self) -> &SimEnv {
        &self.env
    }
    pub fn env_mut(&mut self) -> &mut SimEnv {
        &mut self.env
    }
    pub fn event_log(&self) -> &EventLog {
        &self.log
    }
    pub fn now(&self) -> Millis {
        self.now
    }
    pub fn active_model(&self, nif_name: &str) -> Option<&str> {
        self.active_models.get(nif_name).map(String::as_str)
    }
    pub fn instances(&self) -> impl Iterator<Item = &NisInstance> {
        self.instances.values()
    }
    pub fn instance(&self, id: &str) -> Result<&NisInstance, NioError> {
        self.instances.get(id).ok_or_else(|| NioError::UnknownInstance(id.into()))
    }

    /// Moves the clock forward and drops reservations that were never
    /// committed in time.
    pub fn advance_to(&mut self, t: Millis) -> Result<(), NioError> {
        if t < self.now {
            return Err(SimError::TimeReversal { now: self.now, requested: t }.into());
        }
        self.now = t;
        for id in self.nifc.expire(t) {
            self.emit(actor::NIFC_MANAGER, "reservation_expired", &id, Outcome::Ok, json!({}))?;
        }
        Ok(())
    }

    pub(crate) fn emit(
        &mut self,
        who: &str,
        action: &str,
        subject: &str,
        outcome: Outcome,
        detail: Value,
    ) -> Result<(), NioError> {
        self.log.record(self.now, who, action, subject, outcome, detail)?;
        Ok(())
    }

    /// Id the next lifecycle request will receive.
    pub fn peek_request_id(&self) -> String {
        format!("req-{:04}", self.next_request + 1)
    }

    pub(crate) fn next_request_id(&mut self) -> String {
        self.next_request += 1;
        format!("req-{:04}", self.next_request)
    }

    pub(crate) fn next_instance_id(&mut self) -> String {
        self.next_instance += 1;
        format!("nis-{:04}", self.next_instance)
    }

    /// Logs the request and checks the sender. Returns the request id.
    pub(crate) fn admit(&mut self, creds: &Credentials, kind: RequestKind, subject: &str) -> Result<String, NioError> {
        let req = self.next_request_id();
        self.emit(actor::SENDER, "request", &req, Outcome::Ok, json!({"kind": kind, "sender": creds.sender, "target": subject}))?;
        if !self.config.auth.authorize(&creds.sender, &creds.token, kind) {
            let err = NioError::Unauthorized { sender: creds.sender.clone(), kind };
            self.emit(actor::NIO, "authorize", &req, Outcome::Denied, json!({"sender": creds.sender}))?;
            self.emit(actor::NIO, "complete", &req, Outcome::Denied, json!({"kind": kind, "error": err.to_string()}))?;
            return Err(err);
        }
        self.emit(actor::NIO, "authorize", &req, Outcome::Ok, json!({"sender": creds.sender}))?;
        Ok(req)
    }

    /// Writes the terminal record of a request.
    pub(crate) fn finish<T: Serialize>(
        &mut self,
        req: &str,
        kind: RequestKind,
        result: Result<T, NioError>,
    ) -> Result<T, NioError> {
        match &result {
            Ok(v) => self.emit(actor::NIO, "complete", req, Outcome::Ok, json!({"kind": kind, "result": v}))?,
            Err(e) => self.emit(actor::NIO, "complete", req, e.outcome(), json!({"kind": kind, "error": e.to_string()}))?,
        }
        result
    }

    pub(crate) fn transition(&mut self, id: &str, to: NisState) -> Result<(), NioError> {
        let from = self.instances.get(id).map(|i| i.state);
        if let Some(f) = from {
            debug_assert!(f.can_move_to(to), "illegal transition {f:?} -> {to:?}");
        }
        if let Some(inst) = self.instances.get_mut(id) {
            inst.state = to;
        }
        self.emit(actor::NIO, "transition", id, Outcome::Ok, json!({"from": from, "to": to}))
    }

    /// Parses, validates and stores a descriptor. Returns its catalog id.
    pub fn onboard(&mut self, text: &str) -> Result<String, NioError> {
        let desc = match parse_descriptor(text) {
            Ok(d) => d,
            Err(e) => {
                let err = NioError::InvalidDescriptor(e.to_string());
                self.emit(actor::CSOI, "descriptor_parsed", "-", err.outcome(), json!({"error": e.to_string()}))?;
                return Err(err);
            }
        };
        self.onboard_descriptor(desc)
    }

    pub fn onboard_descriptor(&mut self, desc: Descriptor) -> Result<String, NioError> {
        let detail = match &desc {
            Descriptor::Nif(d) => json!({
                "kind": "NIFD",
                "name": d.name,
                "version": d.version.to_string(),
                "classes": d.classes,
                "plan_targets": d.plan_targets,
            }),
            Descriptor::Nis(d) => json!({
                "kind": "NISD",
                "name": d.name,
                "version": d.version.to_string(),
                "nifs": d.member_names(),
                "links": d.links.len(),
            }),
        };
        let name = desc.name().to_string();
        self.emit(actor::CSOI, "descriptor_parsed", &name, Outcome::Ok, detail)?;
        match self.catalog.onboard(desc, self.now) {
            Ok(id) => {
                self.emit(actor::NIO, "onboard", &name, Outcome::Ok, json!({"id": id}))?;
                Ok(id)
            }
            Err(e) => {
                let err = NioError::from(e);
                self.emit(actor::NIO, "onboard", &name, err.outcome(), json!({"error": err.to_string()}))?;
                Err(err)
            }
        }
    }

    /// Best registered model for a NIFD under a version constraint, preferring
    /// the model already deployed for that NIF.
    pub(crate) fn model_for(&self, nifd: &NifDescriptor, constraint: &VersionConstraint) -> Option<ModelImage> {
        let req = Requirements::from_nifd(nifd);
        let ok = |m: &ModelImage| req.accepts(m) && constraint.matches(&m.version);
        if let Some(m) = self.active_models.get(&nifd.name).and_then(|id| self.catalog.model(id)) {
            if ok(m) {
                return Some(m.clone());
            }
        }
        self.catalog.query_candidates(&nifd.name, &req).into_iter().find(|m| constraint.matches(&m.version))
    }

    pub(crate) fn profile_of(&self, nifd: &NifDescriptor) -> NmapekProfile {
        extract_profile(nifd)
    }

    /// Runs a proposed configuration action through the gate and, when
    /// allowed, applies it to the simulated service.
    pub fn propose(&mut self, action: &ProposedAction) -> Result<GateDecision, NioError> {
        let who = actor::nif(&action.nif);
        self.emit(
            &who,
            "propose_action",
            &action.service_id,
            Outcome::Ok,
            json!({"action": action.action_class, "target_node": action.target_node}),
        )?;
        let req = ActionRequest {
            nif: action.nif.clone(),
            service_id: action.service_id.clone(),
            action_class: action.action_class,
        };
        let decision = match self.gate.gate_action(&req, self.now, &self.policies) {
            Ok(d) => d,
            Err(e) => {
                let err = NioError::from(e);
                self.emit(actor::POLICY_IC, "gate", &action.service_id, err.outcome(), json!({"nif": action.nif}))?;
                return Err(err);
            }
        };
        let outcome = match decision.verdict {
            Verdict::Allow => Outcome::Ok,
            Verdict::Deny => Outcome::Denied,
            Verdict::Delay { .. } => Outcome::Delayed,
        };
        let mut detail = canonical_detail(&decision);
        detail["nif"] = json!(action.nif);
        detail["action"] = json!(action.action_class);
        self.emit(actor::POLICY_IC, "gate", &action.service_id, outcome, detail)?;
        if decision.verdict == Verdict::Allow {
            self.env.apply(action)?;
            let svc = self.env.service(&action.service_id)?.clone();
            self.emit(
                &who,
                "execute_action",
                &action.service_id,
                Outcome::Ok,
                json!({"action": action.action_class, "node": svc.node, "replicas": svc.replicas}),
            )?;
        }
        Ok(decision)
    }

    /// Samples and records the health of every live NIF instance.
    pub fn monitor_health(&mut self) -> Result<Vec<HealthReport>, NioError> {
        let ids: Vec<String> = self
            .nifm
            .live()
            .filter(|i| matches!(i.state, NifState::Running | NifState::Degraded))
            .map(|i| i.nif_instance_id.clone())
            .collect();
        let mut out = Vec::new();
        for id in ids {
            let before = self.nifm.instance(&id)?.state;
            let report = self.nifm.nif_health(&id, &self.env, self.now)?;
            let after = self.nifm.instance(&id)?.state;
            if report.verdict != HealthVerdict::Healthy || before != after {
                let outcome = if report.verdict == HealthVerdict::Healthy { Outcome::Ok } else { Outcome::Error("unhealthy".into()) };
                self.emit(actor::NIF_MANAGER, "health", &id, outcome, json!({"verdict": report.verdict, "state": after}))?;
            }
            out.push(report);
        }
        Ok(out)
    }

    /// Data-analytics summary of one metric stream over `[from, to]`.
    pub fn summarize(&self, source_id: &str, from: Millis, to: Millis) -> Result<MetricSummary, NioError> {
        let period = self.env.source(source_id)?.period_ms;
        let start = from.div_ceil(period) * period;
        let mut values = Vec::new();
        let mut t = start;
        while t <= to {
            values.push(self.env.sample(source_id, t)?);
            t += period;
        }
        let n = values.len();
        let mean = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        Ok(MetricSummary {
            source_id: source_id.into(),
            samples: n,
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }

    /// CPU load on the node currently hosting a service.
    pub fn service_cpu(&self, service: &str) -> Option<f64> {
        let node = &self.env.service(service).ok()?.node;
        self.env.node_metric(node, MetricKind::CpuLoad, self.now)
    }

    pub fn snapshot(&self) -> NioSnapshot {
        NioSnapshot {
            managers: managers::snapshot(&self.nifm, &self.nifc),
            instances: self.instances.values().cloned().collect(),
            policies: self.policies.all().cloned().collect(),
            active_models: self.active_models.clone(),
        }
    }

    /// Writes `state/managers.json` when a data directory is configured.
    pub fn dump_state(&self) -> Result<(), NioError> {
        if let Some(dir) = &self.config.data_dir {
            managers::dump_state(dir, &self.nifm, &self.nifc)?;
        }
        Ok(())
    }

    pub(crate) fn status_of(&self, id: &str) -> Result<NisStatus, NioError> {
        let inst = self.instance(id)?;
        let live = matches!(inst.state, NisState::Running | NisState::Updating);
        let mut nifs = Vec::new();
        let mut allocations: BTreeMap<String, Resources> = BTreeMap::new();
        for nid in &inst.nif_instance_ids {
            let Ok(n) = self.nifm.instance(nid) else { continue };
            let health = self.nifm.peek_health(nid, &self.env, self.now).ok();
            if live {
                if let Some(node) = &n.node_id {
                    let slot = allocations.entry(node.clone()).or_default();
                    *slot = slot.add(&n.demand);
                }
            }
            nifs.push(NifSummary {
                nif_instance_id: nid.clone(),
                nif_name: n.nif_name.clone(),
                model_id: n.model_id.clone(),
                node_id: n.node_id.clone(),
                refcount: n.refcount,
                state: n.state,
                health,
            });
        }
        let policies = inst.policy_ids.iter().filter_map(|p| self.policies.get(p)).cloned().collect();
        Ok(NisStatus {
            instance_id: inst.instance_id.clone(),
            nisd_ref: inst.nisd_ref.clone(),
            state: inst.state,
            nifs,
            links: if live { inst.link_ids.clone() } else { Vec::new() },
            policies,
            allocations,
        })
    }
}

fn canonical_detail<T: Serialize>(v: &T) -> Value {
    crate::canonical::to_value(v)
}
