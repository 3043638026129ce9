use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{image_scores, select_model, ArbitrationPolicy, Credentials, Nio, NioError, NisInstance, NisState, NisStatus, RequestKind};
use crate::api::eventlog::{actor, Outcome};
use crate::canonical::{stable_hash, to_value};
use crate::catalog::{ModelImage, Requirements};
use crate::descriptors::{parse_descriptor, Descriptor, NifDescriptor, NisDescriptor, NmapekProfile};
use crate::managers::{NifSpec, Reservation};
use crate::pipelines::{PipelineSpec, RunStatus};
use crate::policy::{
    build_shared_knowledge_policy, detect_all, detect_conflicts, initial_assessment, resolve, translate_knowledge,
    KnowledgeRules, PolicyError, PolicyRule,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResult {
    pub nisd_id: String,
    /// Member NIF name → model image made available for it.
    pub models: BTreeMap<String, String>,
    pub created_nifs: Vec<String>,
    pub trained_nifs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateResult {
    pub instance_id: String,
    pub selected_models: BTreeMap<String, String>,
    pub retrained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationReport {
    pub instance_id: String,
    pub terminated_nifs: Vec<String>,
    pub retained_nifs: Vec<String>,
    pub removed_links: Vec<String>,
}

/// A lifecycle request in transport-neutral form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifecycleRequest {
    pub sender: String,
    pub auth_token: String,
    #[serde(flatten)]
    pub payload: RequestPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RequestPayload {
    Create {
        nisd: String,
    },
    Instantiate {
        nisd: String,
        #[serde(default)]
        placement: BTreeMap<String, String>,
    },
    Update {
        instance_id: String,
        descriptor: String,
        #[serde(default)]
        arbitration: Option<ArbitrationPolicy>,
    },
    Terminate {
        instance_id: String,
    },
    Query {
        instance_id: String,
    },
}

impl RequestPayload {
    pub fn kind(&self) -> RequestKind {
        match self {
            RequestPayload::Create { .. } => RequestKind::Create,
            RequestPayload::Instantiate { .. } => RequestKind::Instantiate,
            RequestPayload::Update { .. } => RequestKind::Update,
            RequestPayload::Terminate { .. } => RequestKind::Terminate,
            RequestPayload::Query { .. } => RequestKind::Query,
        }
    }
}

/// Terminal state of a submitted request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub request_id: String,
    pub kind: RequestKind,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

enum Slot {
    Reused(String),
    New { spec: NifSpec, reservation: Reservation, score: f64 },
}

struct Member {
    name: String,
    nifd: NifDescriptor,
    model: ModelImage,
}

impl Nio {
    /// Dispatches a request and reports its terminal state.
    pub fn submit(&mut self, req: &LifecycleRequest) -> Submission {
        let creds = Credentials::new(&req.sender, &req.auth_token);
        let request_id = format!("req-{:04}", self.next_request + 1);
        let result = match &req.payload {
            RequestPayload::Create { nisd } => self.create_nis(&creds, nisd).map(|r| to_value(&r)),
            RequestPayload::Instantiate { nisd, placement } => {
                self.instantiate_nis(&creds, nisd, placement).map(|id| json!({"instance_id": id}))
            }
            RequestPayload::Update { instance_id, descriptor, arbitration } => {
                self.update_nis(&creds, instance_id, descriptor, arbitration.as_ref()).map(|r| to_value(&r))
            }
            RequestPayload::Terminate { instance_id } => self.terminate_nis(&creds, instance_id).map(|r| to_value(&r)),
            RequestPayload::Query { instance_id } => self.query_nis(&creds, instance_id).map(|r| to_value(&r)),
        };
        let kind = req.payload.kind();
        match result {
            Ok(v) => Submission { request_id, kind, outcome: Outcome::Ok, result: Some(v), error: None },
            Err(e) => Submission { request_id, kind, outcome: e.outcome(), result: None, error: Some(e.to_string()) },
        }
    }

    fn short(subject: &str) -> &str {
        if subject.contains('\n') || subject.len() > 64 {
            "descriptor"
        } else {
            subject
        }
    }

    /// Makes sure every member NIF of a NISD has a model image, training the
    /// missing ones, and uploads the images to the NIF-C Manager.
    pub fn create_nis(&mut self, creds: &Credentials, nisd: &str) -> Result<CreateResult, NioError> {
        let req = self.admit(creds, RequestKind::Create, Self::short(nisd))?;
        let r = self.lookup_or_onboard_nisd(nisd).and_then(|(id, d)| self.ensure_models(&id, &d));
        self.finish(&req, RequestKind::Create, r)
    }

    fn lookup_or_onboard_nisd(&mut self, nisd: &str) -> Result<(String, NisDescriptor), NioError> {
        if let Some((id, d)) = self.catalog.nisd(nisd) {
            return Ok((id.to_string(), d.clone()));
        }
        if !nisd.contains(':') {
            return Err(NioError::UnknownNisd(nisd.into()));
        }
        let id = self.onboard(nisd)?;
        match self.catalog.entry(&id).map(|e| &e.descriptor) {
            Some(Descriptor::Nis(d)) => Ok((id, d.clone())),
            _ => Err(NioError::InvalidDescriptor("expected a NISD".into())),
        }
    }

    fn member_nifds(&self, nisd: &NisDescriptor) -> Result<Vec<(NifDescriptor, crate::descriptors::VersionConstraint)>, NioError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for r in &nisd.nif_refs {
            if !seen.insert(r.name.clone()) {
                continue;
            }
            let nifd = self
                .catalog
                .nifd(&r.name, &r.version)
                .cloned()
                .ok_or_else(|| NioError::UnknownNifd(format!("{} {}", r.name, r.version)))?;
            out.push((nifd, r.version.clone()));
        }
        Ok(out)
    }

    pub(crate) fn ensure_models(&mut self, nisd_id: &str, nisd: &NisDescriptor) -> Result<CreateResult, NioError> {
        let mut result = CreateResult {
            nisd_id: nisd_id.into(),
            models: BTreeMap::new(),
            created_nifs: Vec::new(),
            trained_nifs: Vec::new(),
        };
        for (nifd, constraint) in self.member_nifds(nisd)? {
            let model_id = match self.model_for(&nifd, &constraint) {
                Some(m) => {
                    self.emit(actor::CSOI, "catalog_lookup", &nifd.name, Outcome::Ok, json!({"hit": true, "model_id": m.model_id}))?;
                    m.model_id
                }
                None => {
                    self.emit(actor::CSOI, "catalog_lookup", &nifd.name, Outcome::Ok, json!({"hit": false}))?;
                    let id = self.train(&nifd)?;
                    result.trained_nifs.push(nifd.name.clone());
                    id
                }
            };
            self.nifc.upload_image(&model_id, &self.catalog)?;
            self.emit(actor::NIFC_MANAGER, "upload_image", &model_id, Outcome::Ok, json!({"nif": nifd.name}))?;
            result.created_nifs.push(nifd.name.clone());
            result.models.insert(nifd.name.clone(), model_id);
        }
        Ok(result)
    }

    /// Runs the training pipeline for a NIFD. Returns the registered model.
    pub(crate) fn train(&mut self, nifd: &NifDescriptor) -> Result<String, NioError> {
        let seed = stable_hash(&[
            &self.config.seed.to_le_bytes(),
            nifd.name.as_bytes(),
            nifd.version.to_string().as_bytes(),
        ]);
        let failed = |reason: String| NioError::PipelineFailed { nif: nifd.name.clone(), reason };
        let run = PipelineSpec::from_nifd(nifd, self.config.epoch_budget, seed)
            .and_then(|spec| self.pipelines.run(spec, &mut self.catalog, &self.env, self.now));
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                let err = failed(e.to_string());
                self.emit(actor::PIPELINE, "run", &nifd.name, err.outcome(), json!({"error": e.to_string()}))?;
                return Err(err);
            }
        };
        let outcome = if run.status == RunStatus::Succeeded { Outcome::Ok } else { Outcome::Error("pipeline_failed".into()) };
        self.emit(actor::PIPELINE, "run", &nifd.name, outcome, to_value(&run))?;
        match (run.status, run.model_id) {
            (RunStatus::Succeeded, Some(id)) => Ok(id),
            (status, _) => Err(failed(run.failure.unwrap_or_else(|| format!("{status:?}")))),
        }
    }

    pub fn instantiate_nis(
        &mut self,
        creds: &Credentials,
        nisd_ref: &str,
        placement: &BTreeMap<String, String>,
    ) -> Result<String, NioError> {
        let req = self.admit(creds, RequestKind::Instantiate, nisd_ref)?;
        let r = self.instantiate_inner(nisd_ref, placement);
        self.finish(&req, RequestKind::Instantiate, r)
    }

    fn instantiate_inner(&mut self, nisd_ref: &str, placement: &BTreeMap<String, String>) -> Result<String, NioError> {
        let (nisd_id, nisd) = match self.catalog.nisd(nisd_ref) {
            Some((id, d)) => (id.to_string(), d.clone()),
            None => return Err(NioError::UnknownNisd(nisd_ref.into())),
        };
        let id = self.next_instance_id();
        self.instances.insert(
            id.clone(),
            NisInstance {
                instance_id: id.clone(),
                nisd_ref: nisd_id.clone(),
                nisd_name: nisd.name.clone(),
                state: NisState::Validating,
                nif_instance_ids: Vec::new(),
                members: BTreeMap::new(),
                nifd_refs: BTreeMap::new(),
                link_ids: Vec::new(),
                created_at: self.now,
                policy_ids: Vec::new(),
                profiles: Vec::new(),
                knowledge: Vec::new(),
            },
        );
        self.emit(actor::NIO, "transition", &id, Outcome::Ok, json!({"from": null, "to": NisState::Validating}))?;
        match self.instantiate_steps(&id, &nisd_id, &nisd, placement) {
            Ok(()) => Ok(id),
            Err(e) => {
                self.transition(&id, NisState::Failed)?;
                self.instances.remove(&id);
                Err(e)
            }
        }
    }

    fn instantiate_steps(
        &mut self,
        id: &str,
        nisd_id: &str,
        nisd: &NisDescriptor,
        placement: &BTreeMap<String, String>,
    ) -> Result<(), NioError> {
        // Validating: every member needs an uploaded image.
        let nifds = self.member_nifds(nisd)?;
        let missing = nifds.iter().any(|(d, c)| self.model_for(d, c).is_none_or(|m| !self.nifc.has_image(&m.model_id)));
        if missing {
            self.emit(actor::CSOI, "trigger_create", nisd_id, Outcome::Ok, json!({"instance": id}))?;
            self.ensure_models(nisd_id, nisd)?;
        }
        let mut members = Vec::new();
        for (nifd, c) in nifds {
            let model = self.model_for(&nifd, &c).ok_or_else(|| NioError::UnknownNifd(nifd.name.clone()))?;
            members.push(Member { name: nifd.name.clone(), nifd, model });
        }
        let profiles: Vec<NmapekProfile> = members.iter().map(|m| self.profile_of(&m.nifd)).collect();

        self.transition(id, NisState::ResolvingConflicts)?;
        let rules = self.resolve_conflicts(id, &profiles)?;

        self.transition(id, NisState::CreatingNIFs)?;
        let mut held: Vec<String> = Vec::new();
        let mut slots = Vec::new();
        for m in &members {
            let req = Requirements::from_nifd(&m.nifd);
            if let Some(existing) = self.nifm.find_instance(&m.name, &req, &self.catalog) {
                self.emit(actor::NIF_MANAGER, "reuse", &existing, Outcome::Ok, json!({"nif": m.name}))?;
                slots.push(Slot::Reused(existing));
                continue;
            }
            let spec = NifSpec::from_nifd(&m.nifd, &m.model.model_id);
            let hint = placement.get(&m.name).map(String::as_str);
            match self.nifm.plan(&mut self.nifc, &spec, hint, self.now) {
                Ok(r) => {
                    self.emit(
                        actor::NIFC_MANAGER,
                        "reserve",
                        &r.reservation_id,
                        Outcome::Ok,
                        json!({"nif": m.name, "node": r.node(), "state": r.state}),
                    )?;
                    held.push(r.reservation_id.clone());
                    slots.push(Slot::New { spec, reservation: r, score: m.model.test_score });
                }
                Err(e) => return self.roll_back(&held, &m.name, e.into()),
            }
        }

        self.transition(id, NisState::Reserving)?;
        let mut link_plans = Vec::new();
        for link in &nisd.links {
            let node_of = |name: &str| -> Result<String, NioError> {
                let i = members.iter().position(|m| m.name == name).ok_or_else(|| NioError::UnknownNifd(name.into()))?;
                match &slots[i] {
                    Slot::Reused(nid) => Ok(self.nifm.running_node(nid)?),
                    Slot::New { reservation, .. } => Ok(reservation.node().unwrap_or_default().to_string()),
                }
            };
            let (a, b) = (node_of(&link.from)?, node_of(&link.to)?);
            match self.nifc.reserve_link(&a, &b, link.bandwidth_mbps, self.now) {
                Ok(r) => {
                    self.emit(
                        actor::NIFC_MANAGER,
                        "reserve_link",
                        &r.reservation_id,
                        Outcome::Ok,
                        json!({"from": link.from, "to": link.to, "bandwidth_mbps": link.bandwidth_mbps}),
                    )?;
                    held.push(r.reservation_id.clone());
                    link_plans.push((link.clone(), r));
                }
                Err(e) => return self.roll_back(&held, &format!("{}->{}", link.from, link.to), e.into()),
            }
        }

        self.transition(id, NisState::Interconnecting)?;
        let mut ids = BTreeMap::new();
        for (m, slot) in members.iter().zip(slots) {
            let nid = match slot {
                Slot::Reused(nid) => {
                    let n = self.nifm.retain(&nid)?;
                    self.emit(actor::NIF_MANAGER, "retain", &nid, Outcome::Ok, json!({"nif": m.name, "refcount": n}))?;
                    nid
                }
                Slot::New { spec, reservation, score } => {
                    let nid = self.nifm.activate(&mut self.nifc, &spec, &reservation, self.now)?;
                    self.nifm.set_score(&nid, score)?;
                    self.emit(
                        actor::NIF_MANAGER,
                        "instantiate",
                        &nid,
                        Outcome::Ok,
                        json!({"nif": m.name, "model_id": spec.model_id, "node": reservation.node()}),
                    )?;
                    nid
                }
            };
            ids.insert(m.name.clone(), nid);
        }
        let mut link_ids = Vec::new();
        for (link, r) in link_plans {
            self.nifc.commit(&r.reservation_id, self.now)?;
            let lid = self.nifc.add_link(&ids[&link.from], &ids[&link.to], link.bandwidth_mbps, &r.reservation_id);
            self.emit(
                actor::NIFC_MANAGER,
                "link",
                &lid,
                Outcome::Ok,
                json!({"from": ids[&link.from], "to": ids[&link.to], "bandwidth_mbps": link.bandwidth_mbps}),
            )?;
            link_ids.push(lid);
        }

        let mut policy_ids = Vec::new();
        for rule in rules {
            if let Some(pid) = self.store_rule(rule)? {
                policy_ids.push(pid);
            }
        }
        for m in &members {
            self.gate.register_nif(&m.name);
            self.active_models.insert(m.name.clone(), m.model.model_id.clone());
        }
        let (knowledge_ids, knowledge) = self.apply_knowledge(id, nisd)?;
        policy_ids.extend(knowledge_ids);

        let order = self.seniority.values().max().map_or(1, |m| m + 1);
        self.seniority.insert(id.to_string(), order);
        let inst = self.instances.get_mut(id).expect("instance registered above");
        inst.nif_instance_ids = members.iter().map(|m| ids[&m.name].clone()).collect();
        inst.nifd_refs = members.iter().map(|m| (m.name.clone(), m.nifd.computed_digest())).collect();
        inst.members = ids;
        inst.link_ids = link_ids;
        inst.policy_ids = policy_ids;
        inst.profiles = profiles;
        inst.knowledge = knowledge;
        self.transition(id, NisState::Running)
    }

    /// Releases held reservations after a failed placement.
    fn roll_back(&mut self, held: &[String], what: &str, err: NioError) -> Result<(), NioError> {
        self.emit(actor::NIFC_MANAGER, "reserve", what, err.outcome(), json!({"error": err.to_string()}))?;
        for r in held.iter().rev() {
            self.nifc.release(r)?;
            self.emit(actor::NIFC_MANAGER, "release", r, Outcome::Ok, json!({"rollback": true}))?;
        }
        Err(err)
    }

    /// Profiles of the NIFs in running instances other than `except`.
    fn deployed_profiles(&self, except: &str) -> Vec<(String, NmapekProfile)> {
        self.instances
            .values()
            .filter(|i| i.instance_id != except && matches!(i.state, NisState::Running | NisState::Updating))
            .flat_map(|i| i.profiles.iter().map(|p| (i.instance_id.clone(), p.clone())))
            .collect()
    }

    fn resolve_conflicts(&mut self, id: &str, profiles: &[NmapekProfile]) -> Result<Vec<PolicyRule>, NioError> {
        let deployed = self.deployed_profiles(id);
        let mut everything: Vec<NmapekProfile> = profiles.to_vec();
        everything.extend(deployed.iter().map(|(_, p)| p.clone()));
        let possible = initial_assessment(&everything);
        self.emit(actor::POLICY_IC, "initial_assessment", id, Outcome::Ok, json!({"conflict_possible": possible}))?;
        if !possible {
            return Ok(Vec::new());
        }
        let tagged: Vec<(String, NmapekProfile)> = profiles.iter().map(|p| (id.to_string(), p.clone())).collect();
        let mut conflicts: BTreeSet<_> = detect_all(&tagged, &self.config.matrix).into_iter().collect();
        conflicts.extend(detect_conflicts(id, profiles, &deployed, &self.config.matrix));
        let conflicts: Vec<_> = conflicts.into_iter().collect();
        for c in &conflicts {
            self.emit(actor::CONFLICT_RESOLVER, "conflict_detected", &c.subject, Outcome::Ok, to_value(c))?;
        }
        if conflicts.is_empty() {
            return Ok(Vec::new());
        }
        let active: Vec<PolicyRule> = self.policies.active().cloned().collect();
        let res = resolve(&conflicts, &self.config.matrix, &active, &self.seniority, self.now);
        if res.fallback {
            let err = NioError::ConflictUnresolvable(
                res.unresolved.iter().map(|c| format!("{:?} on {}", c.kind, c.subject)).collect(),
            );
            self.emit(
                actor::CONFLICT_RESOLVER,
                "fallback",
                id,
                err.outcome(),
                json!({"unresolved": res.unresolved, "config_updates": res.config_updates}),
            )?;
            return Err(err);
        }
        self.emit(
            actor::CONFLICT_RESOLVER,
            "resolve",
            id,
            Outcome::Ok,
            json!({"rules": res.rules.iter().map(|r| r.rule.type_name()).collect::<Vec<_>>()}),
        )?;
        Ok(res.rules)
    }

    /// Stores a rule unless an identical active one exists.
    fn store_rule(&mut self, rule: PolicyRule) -> Result<Option<String>, NioError> {
        let detail = json!({"type": rule.rule.type_name(), "rule": rule.rule, "scope": rule.scope});
        match self.policies.store_policy(rule) {
            Ok(pid) => {
                self.emit(actor::POLICY_MANAGER, "policy_stored", &pid, Outcome::Ok, detail)?;
                Ok(Some(pid))
            }
            Err(PolicyError::DuplicatePolicy(existing)) => {
                self.emit(actor::POLICY_MANAGER, "policy_exists", &existing, Outcome::Ok, detail)?;
                Ok(None)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Turns external knowledge references and declared rules into stored
    /// knowledge policies.
    fn apply_knowledge(&mut self, id: &str, nisd: &NisDescriptor) -> Result<(Vec<String>, Vec<String>), NioError> {
        let mut sources = Vec::new();
        if !nisd.policies.is_empty() {
            match KnowledgeRules::new(&nisd.name, nisd.policies.clone()) {
                Ok(k) => sources.push(k),
                Err(e) => {
                    self.emit(actor::POLICY_MANAGER, "knowledge_dropped", &nisd.name, Outcome::Error("grammar".into()), json!({"error": e.to_string()}))?;
                }
            }
        }
        for r in &nisd.external_knowledge_refs {
            let model = if self.catalog.model(r).is_some() { Some(r.clone()) } else { self.active_models.get(r).cloned() };
            match model.map(|m| translate_knowledge(&m, &self.catalog)) {
                Some(Ok(k)) => sources.push(k),
                Some(Err(e)) => {
                    let err = NioError::from(e);
                    self.emit(actor::POLICY_MANAGER, "translate_knowledge", r, err.outcome(), json!({"error": err.to_string()}))?;
                }
                None => {
                    self.emit(actor::POLICY_MANAGER, "translate_knowledge", r, Outcome::Error("unknown_model".into()), json!({}))?;
                }
            }
        }
        let mut ids = Vec::new();
        let mut current = nisd.clone();
        for k in sources {
            let existing: Vec<PolicyRule> = self.policies.active().cloned().collect();
            let deployed = self.deployed_profiles(id);
            let out = build_shared_knowledge_policy(&current, &k, &existing, &deployed, &self.config.matrix, self.now);
            for d in &out.dropped {
                self.emit(actor::POLICY_MANAGER, "knowledge_dropped", &d.rule, Outcome::Denied, json!({"reason": d.reason}))?;
            }
            for rule in out.rules {
                if let Some(pid) = self.store_rule(rule)? {
                    ids.push(pid);
                }
            }
            current = out.nisd;
        }
        Ok((ids, current.policies))
    }

    pub fn update_nis(
        &mut self,
        creds: &Credentials,
        instance_id: &str,
        descriptor: &str,
        arbitration: Option<&ArbitrationPolicy>,
    ) -> Result<UpdateResult, NioError> {
        let req = self.admit(creds, RequestKind::Update, instance_id)?;
        let r = self.update_inner(instance_id, descriptor, arbitration);
        self.finish(&req, RequestKind::Update, r)
    }

    fn update_inner(
        &mut self,
        id: &str,
        text: &str,
        arbitration: Option<&ArbitrationPolicy>,
    ) -> Result<UpdateResult, NioError> {
        let inst = self.instance(id)?.clone();
        if inst.state != NisState::Running {
            return Err(NioError::InvalidState { instance_id: id.into(), state: inst.state });
        }
        if let Some(p) = arbitration {
            p.check()?;
        }
        let desc = parse_descriptor(text).map_err(|e| NioError::InvalidDescriptor(e.to_string()))?;
        let mut result = UpdateResult { instance_id: id.into(), ..Default::default() };
        match desc {
            Descriptor::Nis(d) => {
                let mut want = d.member_names();
                want.sort();
                if want != inst.members.keys().cloned().collect::<Vec<_>>() {
                    return Err(NioError::InvalidDescriptor("a NISD update may not change membership".into()));
                }
                if d.computed_digest() == inst.nisd_ref {
                    self.emit(actor::CSOI, "update_noop", id, Outcome::Ok, json!({}))?;
                    return Ok(result);
                }
                self.transition(id, NisState::Updating)?;
                match self.onboard_descriptor(Descriptor::Nis(d)) {
                    Ok(r) => {
                        if let Some(i) = self.instances.get_mut(id) {
                            i.nisd_ref = r;
                        }
                        self.transition(id, NisState::Running)?;
                        Ok(result)
                    }
                    Err(e) => {
                        self.transition(id, NisState::Running)?;
                        Err(e)
                    }
                }
            }
            Descriptor::Nif(d) => {
                let Some(nid) = inst.members.get(&d.name).cloned() else {
                    return Err(NioError::InvalidDescriptor(format!("{} is not a member of {id}", d.name)));
                };
                if inst.nifd_refs.get(&d.name) == Some(&d.computed_digest()) {
                    self.emit(actor::CSOI, "update_noop", id, Outcome::Ok, json!({"nif": d.name}))?;
                    return Ok(result);
                }
                self.transition(id, NisState::Updating)?;
                let policy = arbitration.cloned().unwrap_or_else(|| self.config.arbitration.clone());
                match self.swap_model(&nid, &d, &policy) {
                    Ok((model, retrained)) => {
                        result.selected_models.insert(d.name.clone(), model);
                        if retrained {
                            result.retrained.push(d.name.clone());
                        }
                        self.transition(id, NisState::Running)?;
                        Ok(result)
                    }
                    Err(e) => {
                        self.transition(id, NisState::Running)?;
                        Err(e)
                    }
                }
            }
        }
    }

    /// Picks (or trains) the model for an updated NIFD and deploys it on the
    /// NIF instance.
    fn swap_model(&mut self, nid: &str, d: &NifDescriptor, policy: &ArbitrationPolicy) -> Result<(String, bool), NioError> {
        self.onboard_descriptor(Descriptor::Nif(d.clone()))?;
        let req = Requirements::from_nifd(d);
        let candidates: Vec<ModelImage> =
            self.catalog.query_candidates(&d.name, &req).into_iter().filter(|m| m.version >= d.version).collect();
        self.emit(
            actor::CSOI,
            "query_candidates",
            &d.name,
            Outcome::Ok,
            json!({"candidates": candidates.iter().map(|m| &m.model_id).collect::<Vec<_>>()}),
        )?;
        let (model_id, retrained) = if candidates.is_empty() {
            (self.train(d)?, true)
        } else {
            let scores = image_scores(&candidates);
            let chosen = select_model(&candidates, &scores, policy)?;
            let weighted: BTreeMap<&str, f64> =
                candidates.iter().map(|m| (m.model_id.as_str(), policy.weighted(&scores[&m.model_id]))).collect();
            self.emit(actor::CSOI, "select_model", &d.name, Outcome::Ok, json!({"model_id": chosen, "weighted": weighted}))?;
            (chosen, false)
        };
        self.nifc.upload_image(&model_id, &self.catalog)?;
        self.emit(actor::NIFC_MANAGER, "upload_image", &model_id, Outcome::Ok, json!({"nif": d.name}))?;
        let score = self.catalog.model(&model_id).map_or(f64::NAN, |m| m.test_score);
        self.nifm.set_model(nid, &model_id, score)?;
        self.emit(actor::NIF_MANAGER, "model_swapped", nid, Outcome::Ok, json!({"nif": d.name, "model_id": model_id}))?;
        self.active_models.insert(d.name.clone(), model_id.clone());
        let digest = d.computed_digest();
        for inst in self.instances.values_mut() {
            if inst.members.get(&d.name).is_some_and(|n| n == nid) {
                inst.nifd_refs.insert(d.name.clone(), digest.clone());
            }
        }
        Ok((model_id, retrained))
    }

    pub fn terminate_nis(&mut self, creds: &Credentials, instance_id: &str) -> Result<TerminationReport, NioError> {
        let req = self.admit(creds, RequestKind::Terminate, instance_id)?;
        let r = self.terminate_inner(instance_id);
        self.finish(&req, RequestKind::Terminate, r)
    }

    fn terminate_inner(&mut self, id: &str) -> Result<TerminationReport, NioError> {
        let inst = self.instance(id)?.clone();
        if inst.state != NisState::Running {
            return Err(NioError::InvalidState { instance_id: id.into(), state: inst.state });
        }
        self.transition(id, NisState::Terminating)?;
        let mut report = TerminationReport {
            instance_id: id.into(),
            terminated_nifs: Vec::new(),
            retained_nifs: Vec::new(),
            removed_links: Vec::new(),
        };
        for lid in &inst.link_ids {
            if self.nifc.link(lid).is_some() {
                self.nifc.disconnect(lid)?;
                self.emit(actor::NIFC_MANAGER, "unlink", lid, Outcome::Ok, json!({}))?;
                report.removed_links.push(lid.clone());
            }
        }
        for (name, nid) in &inst.members {
            let left = self.nifm.release_ref(&mut self.nifc, nid)?;
            if left == 0 {
                self.emit(actor::NIF_MANAGER, "terminate", nid, Outcome::Ok, json!({"nif": name}))?;
                report.terminated_nifs.push(name.clone());
            } else {
                self.emit(actor::NIF_MANAGER, "release_ref", nid, Outcome::Ok, json!({"nif": name, "refcount": left}))?;
                report.retained_nifs.push(name.clone());
            }
        }
        for pid in &inst.policy_ids {
            if self.policies.get(pid).is_some_and(|p| p.active) {
                self.policies.deactivate(pid, self.now)?;
                self.emit(actor::POLICY_MANAGER, "policy_deactivated", pid, Outcome::Ok, json!({}))?;
            }
        }
        for name in inst.members.keys() {
            if !self.nifm.live().any(|n| &n.nif_name == name) {
                self.gate.unregister_nif(name);
            }
        }
        self.seniority.remove(id);
        self.transition(id, NisState::Terminated)?;
        Ok(report)
    }

    pub fn query_nis(&mut self, creds: &Credentials, instance_id: &str) -> Result<NisStatus, NioError> {
        let req = self.admit(creds, RequestKind::Query, instance_id)?;
        let r = self.status_of(instance_id);
        self.finish(&req, RequestKind::Query, r)
    }
}
