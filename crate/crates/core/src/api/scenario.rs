//! Scenario files: a simulated infrastructure, descriptors, timed lifecycle
//! requests, faults and scenario NIFs, run to completion on the event queue.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use semver::Version;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::eventlog::{actor, EventLog, EventRecord, Outcome};
use crate::canonical;
use crate::catalog::{ModelDraft, ScoreDimension};
use crate::descriptors::{ActionClass, Dependency, LearningMetric, Platform};
use crate::orchestrator::{
    ArbitrationPolicy, AuthTable, Nio, NioConfig, NioError, NisState, RequestPayload, Submission,
};
use crate::pipelines::{decode_artifact, encode_artifact, Curve, ModelArtifact};
use crate::policy::{ConflictMatrix, MatrixEntry, Verdict};
use crate::simenv::{
    EventQueue, NifBehavior, NodeConfig, ProposedAction, Resources, ScenarioNifs, ServiceConfig, SimEnv, SourceConfig,
};
use crate::Millis;

pub const DEFAULT_SENDER: &str = "operator";
pub const DEFAULT_TOKEN: &str = "operator-token";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nio(#[from] NioError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DescriptorSource {
    Path { path: PathBuf },
    Inline { inline: String },
}

/// A model image registered directly, bypassing the training pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSeed {
    #[serde(default)]
    pub at: Millis,
    pub nif_name: String,
    pub version: Version,
    #[serde(default = "default_metric")]
    pub metric: LearningMetric,
    pub test_score: f64,
    #[serde(default)]
    pub platform: Platform,
    pub input_format: String,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default)]
    pub aux_scores: BTreeMap<ScoreDimension, f64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn default_metric() -> LearningMetric {
    LearningMetric::Accuracy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedRequest {
    pub at: Millis,
    #[serde(default = "default_sender")]
    pub sender: String,
    #[serde(default = "default_token")]
    pub token: String,
    #[serde(flatten)]
    pub payload: RequestPayload,
}

fn default_sender() -> String {
    DEFAULT_SENDER.into()
}
fn default_token() -> String {
    DEFAULT_TOKEN.into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub at: Millis,
    pub node: String,
    #[serde(default = "yes")]
    pub on: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioNif {
    pub nif: String,
    #[serde(flatten)]
    pub behavior: NifBehavior,
    pub period_ms: Millis,
    #[serde(default)]
    pub start_ms: Millis,
}

/// A configuration action proposed at a fixed time on behalf of a NIF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub at: Millis,
    pub nif: String,
    pub service: String,
    pub action: ActionClass,
    #[serde(default)]
    pub target_node: Option<String>,
    /// Re-propose at the end of a delay.
    #[serde(default = "yes")]
    pub retry: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixSetting {
    pub a: ActionClass,
    pub b: ActionClass,
    pub entry: MatrixEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "default_budget")]
    pub epoch_budget: u32,
    #[serde(default)]
    pub reservation_ttl_ms: Option<Millis>,
    /// Health sampling period; no sampling when absent.
    #[serde(default)]
    pub health_period_ms: Option<Millis>,
    #[serde(default)]
    pub arbitration: Option<ArbitrationPolicy>,
    #[serde(default)]
    pub matrix: Vec<MatrixSetting>,
}

fn default_budget() -> u32 {
    100
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            epoch_budget: default_budget(),
            reservation_ttl_ms: None,
            health_period_ms: None,
            arbitration: None,
            matrix: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub services: Vec<ServiceConfig>,
    #[serde(default)]
    pub descriptors: Vec<DescriptorSource>,
    #[serde(default)]
    pub models: Vec<ModelSeed>,
    #[serde(default)]
    pub auth: Option<AuthTable>,
    #[serde(default)]
    pub config: ScenarioConfig,
    #[serde(default)]
    pub nis_requests: Vec<TimedRequest>,
    #[serde(default)]
    pub faults: Vec<Fault>,
    #[serde(default)]
    pub scenario_nifs: Vec<ScenarioNif>,
    #[serde(default)]
    pub actions: Vec<ScriptedAction>,
    #[serde(default)]
    pub until: Option<Millis>,
}

fn default_seed() -> u64 {
    42
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), ScenarioError> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::parse(&text)?, base))
    }

    /// Latest time anything is scheduled at.
    pub fn horizon(&self) -> Millis {
        let times = self
            .nis_requests
            .iter()
            .map(|r| r.at)
            .chain(self.faults.iter().map(|f| f.at))
            .chain(self.models.iter().map(|m| m.at))
            .chain(self.actions.iter().map(|a| a.at));
        self.until.unwrap_or_else(|| times.max().unwrap_or(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Model(usize),
    Fault(usize),
    Request(usize),
    Action(usize),
    Tick(String),
    Health,
    Retry { action: ProposedAction, scripted: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: Millis,
    pub invariant: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub seed: u64,
    pub until: Millis,
    pub events_scheduled: u64,
    pub events_dispatched: u64,
    pub records: usize,
    pub requests: Vec<Submission>,
    pub gate: BTreeMap<String, usize>,
    pub executed_actions: usize,
    pub initial_capacity: BTreeMap<String, Resources>,
    pub final_available: BTreeMap<String, Resources>,
    pub capacity_restored: bool,
    pub violations: Vec<Violation>,
}

pub struct ScenarioRun {
    pub records: Vec<EventRecord>,
    pub summary: ScenarioSummary,
    pub nio: Nio,
}

impl ScenarioRun {
    /// 0 iff no invariant was violated.
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.summary.violations.is_empty())
    }

    pub fn log_text(&self) -> String {
        super::eventlog::to_jsonl(&self.records)
    }
}

/// Options that do not change what the scenario does.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Mirror the event log to this file while running.
    pub log_path: Option<PathBuf>,
    /// Persist catalog, policies and pipeline runs here.
    pub data_dir: Option<PathBuf>,
}

/// Loads and runs a scenario file, writing `events.jsonl` and
/// `summary.json` into `out_dir`.
pub fn run_scenario(path: &Path, out_dir: &Path, opts: &RunOptions) -> Result<ScenarioRun, ScenarioError> {
    let (scenario, base) = Scenario::load(path)?;
    fs::create_dir_all(out_dir)?;
    let opts = RunOptions { log_path: Some(out_dir.join("events.jsonl")), ..opts.clone() };
    let run = execute(&scenario, &base, &opts)?;
    fs::write(out_dir.join("summary.json"), canonical::to_canonical_pretty(&run.summary))?;
    Ok(run)
}

struct Runner<'a> {
    scenario: &'a Scenario,
    base: PathBuf,
    nio: Nio,
    nifs: ScenarioNifs,
    queue: EventQueue<Step>,
    submissions: Vec<Submission>,
    violations: Vec<Violation>,
    gate_counts: BTreeMap<String, usize>,
    thetas: BTreeMap<String, String>,
}

/// Runs a parsed scenario. Descriptor paths resolve against `base`.
pub fn execute(scenario: &Scenario, base: &Path, opts: &RunOptions) -> Result<ScenarioRun, ScenarioError> {
    let seed = opts.seed.unwrap_or(scenario.seed);
    let env = SimEnv::new(seed, &scenario.nodes, &scenario.sources, &scenario.services).map_err(NioError::from)?;
    let mut matrix = ConflictMatrix::default();
    for s in &scenario.config.matrix {
        matrix.set(s.a, s.b, s.entry);
    }
    let config = NioConfig {
        seed,
        epoch_budget: scenario.config.epoch_budget,
        arbitration: scenario.config.arbitration.clone().unwrap_or_default(),
        matrix,
        auth: scenario.auth.clone().unwrap_or_else(|| AuthTable::single(DEFAULT_SENDER, DEFAULT_TOKEN)),
        reservation_ttl: scenario.config.reservation_ttl_ms.unwrap_or(crate::managers::DEFAULT_RESERVATION_TTL),
        data_dir: opts.data_dir.clone(),
    };
    let log = match &opts.log_path {
        Some(p) => EventLog::to_file(p).map_err(NioError::from)?,
        None => EventLog::new(),
    };
    let nio = Nio::new(config, env)?.with_event_log(log);
    let mut runner = Runner {
        scenario,
        base: base.to_path_buf(),
        nio,
        nifs: ScenarioNifs::new(),
        queue: EventQueue::new(),
        submissions: Vec::new(),
        violations: Vec::new(),
        gate_counts: BTreeMap::new(),
        thetas: BTreeMap::new(),
    };
    runner.setup()?;
    runner.run()?;
    Ok(runner.finish())
}

impl Runner<'_> {
    fn setup(&mut self) -> Result<(), ScenarioError> {
        for d in &self.scenario.descriptors {
            let text = match d {
                DescriptorSource::Path { path } => fs::read_to_string(self.base.join(path))?,
                DescriptorSource::Inline { inline } => inline.clone(),
            };
            self.nio.onboard(&text)?;
        }
        for n in &self.scenario.scenario_nifs {
            self.nifs.add(&n.nif, n.behavior.clone(), n.period_ms, n.start_ms);
        }
        let horizon = self.scenario.horizon();
        for (i, m) in self.scenario.models.iter().enumerate() {
            self.queue.schedule(m.at, Step::Model(i));
        }
        for (i, f) in self.scenario.faults.iter().enumerate() {
            self.queue.schedule(f.at, Step::Fault(i));
        }
        for (i, r) in self.scenario.nis_requests.iter().enumerate() {
            self.queue.schedule(r.at, Step::Request(i));
        }
        for (i, a) in self.scenario.actions.iter().enumerate() {
            self.queue.schedule(a.at, Step::Action(i));
        }
        // One tick per NIF decision period, interleaved in time order.
        let mut ticks = Vec::new();
        for n in &self.scenario.scenario_nifs {
            let mut t = n.start_ms;
            while t <= horizon {
                ticks.push((t, n.nif.clone()));
                t += n.period_ms.max(1);
            }
        }
        ticks.sort();
        for (t, nif) in ticks {
            self.queue.schedule(t, Step::Tick(nif));
        }
        if let Some(p) = self.scenario.config.health_period_ms.filter(|p| *p > 0) {
            let mut t = p;
            while t <= horizon {
                self.queue.schedule(t, Step::Health);
                t += p;
            }
        }
        Ok(())
    }

    fn run(&mut self) -> Result<(), ScenarioError> {
        let initial = self.capacities();
        while let Some(ev) = self.queue.pop_next() {
            self.nio.advance_to(ev.at)?;
            self.dispatch(ev.payload)?;
            self.check_invariants(&initial);
        }
        Ok(())
    }

    fn capacities(&self) -> BTreeMap<String, Resources> {
        self.nio.env().nodes().map(|n| (n.node_id.clone(), n.capacity)).collect()
    }

    fn dispatch(&mut self, step: Step) -> Result<(), ScenarioError> {
        match step {
            Step::Model(i) => self.register_model(i)?,
            Step::Fault(i) => {
                let f = &self.scenario.faults[i];
                self.nio.env_mut().set_fault(&f.node, f.on).map_err(NioError::from)?;
                let detail = json!({"on": f.on});
                let node = f.node.clone();
                self.nio.emit(actor::NIO, "fault", &node, Outcome::Ok, detail)?;
            }
            Step::Request(i) => {
                let r = &self.scenario.nis_requests[i];
                let mut req = crate::orchestrator::LifecycleRequest {
                    sender: r.sender.clone(),
                    auth_token: r.token.clone(),
                    payload: r.payload.clone(),
                };
                if let RequestPayload::Update { descriptor, .. } = &mut req.payload {
                    if let Some(text) = self.resolve_text(descriptor) {
                        *descriptor = text;
                    }
                }
                if let RequestPayload::Create { nisd } = &mut req.payload {
                    if let Some(text) = self.resolve_text(nisd) {
                        *nisd = text;
                    }
                }
                let sub = self.nio.submit(&req);
                self.submissions.push(sub);
                self.sync_nifs();
            }
            Step::Action(i) => {
                let a = &self.scenario.actions[i];
                let action = ProposedAction {
                    nif: a.nif.clone(),
                    service_id: a.service.clone(),
                    action_class: a.action,
                    target_node: a.target_node.clone(),
                    at: a.at,
                };
                let retry = a.retry;
                self.gate(action, retry, true)?;
            }
            Step::Tick(nif) => {
                let now = self.nio.now();
                if let Some(action) = self.nifs.propose(&nif, self.nio.env(), now) {
                    self.gate(action, true, false)?;
                }
            }
            Step::Health => {
                self.nio.monitor_health()?;
            }
            Step::Retry { mut action, scripted } => {
                action.at = self.nio.now();
                if scripted || self.nifs.is_active(&action.nif) {
                    self.gate(action, true, scripted)?;
                }
            }
        }
        Ok(())
    }

    /// Request payloads may name a descriptor file relative to the scenario.
    fn resolve_text(&self, reference: &str) -> Option<String> {
        if reference.contains('\n') {
            return None;
        }
        let path = self.base.join(reference);
        path.is_file().then(|| fs::read_to_string(path).ok()).flatten()
    }

    fn gate(&mut self, action: ProposedAction, retry: bool, scripted: bool) -> Result<(), ScenarioError> {
        let decision = match self.nio.propose(&action) {
            Ok(d) => d,
            Err(NioError::Policy(crate::policy::PolicyError::UnknownNif(_))) => {
                *self.gate_counts.entry("unknown_nif".into()).or_default() += 1;
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let key = match decision.verdict {
            Verdict::Allow => "allow",
            Verdict::Deny => "deny",
            Verdict::Delay { .. } => "delay",
        };
        *self.gate_counts.entry(key.into()).or_default() += 1;
        match decision.verdict {
            Verdict::Delay { until } if retry => {
                self.nifs.set_pending(&action.nif, true);
                self.queue.schedule(until, Step::Retry { action, scripted });
            }
            _ => self.nifs.set_pending(&action.nif, false),
        }
        Ok(())
    }

    fn register_model(&mut self, i: usize) -> Result<(), ScenarioError> {
        let m = &self.scenario.models[i];
        let artifact = ModelArtifact {
            nif_name: m.nif_name.clone(),
            version: m.version.clone(),
            metric: m.metric,
            seed: 0,
            curve: Curve { s0: m.test_score, smax: m.test_score, tau: 1.0 },
            epochs: 0,
            final_score: m.test_score,
            params: m.params.clone(),
        };
        let draft = ModelDraft {
            nif_name: m.nif_name.clone(),
            version: m.version.clone(),
            metric: m.metric,
            test_score: m.test_score,
            platform: m.platform,
            input_format: m.input_format.clone(),
            dependencies: m.dependencies.clone(),
            aux_scores: m.aux_scores.clone(),
            created_at: self.nio.now(),
        };
        let id = self.nio.catalog_mut().register_model(draft, &encode_artifact(&artifact)).map_err(NioError::from)?;
        let detail = json!({"nif": m.nif_name, "version": m.version.to_string(), "test_score": m.test_score});
        self.nio.emit(actor::NIO, "register_model", &id, Outcome::Ok, detail)?;
        Ok(())
    }

    /// Scenario NIFs act only while an instance of their NIF is live, with
    /// the threshold of the model it runs.
    fn sync_nifs(&mut self) {
        let names: Vec<String> = self.nifs.names().cloned().collect();
        for name in names {
            let live = self.nio.gate().is_registered(&name);
            if live != self.nifs.is_active(&name) {
                self.nifs.set_active(&name, live);
            }
            if !live {
                self.thetas.remove(&name);
                continue;
            }
            let Some(model) = self.nio.active_model(&name).map(str::to_string) else { continue };
            if self.thetas.get(&name) == Some(&model) {
                continue;
            }
            let theta = self
                .nio
                .catalog()
                .blob(&model)
                .ok()
                .and_then(|b| decode_artifact(b).ok())
                .and_then(|a| a.theta());
            if let Some(theta) = theta {
                self.nifs.set_theta(&name, theta);
            }
            self.thetas.insert(name, model);
        }
    }

    fn check_invariants(&mut self, initial: &BTreeMap<String, Resources>) {
        let t = self.nio.now();
        let nifc = self.nio.nifc_manager();
        for (node, cap) in initial {
            let alloc = nifc.allocated(node);
            if !alloc.fits_in(cap) {
                self.violations.push(Violation { t, invariant: "capacity".into(), detail: format!("{node} over-allocated: {alloc:?}") });
            }
            if nifc.available(node).ok() != Some(cap.saturating_sub(&alloc)) {
                self.violations.push(Violation { t, invariant: "available".into(), detail: format!("{node} availability drifted") });
            }
        }
        let mut shadow: BTreeMap<&str, u32> = BTreeMap::new();
        for inst in self.nio.instances().filter(|i| matches!(i.state, NisState::Running | NisState::Updating)) {
            for nid in inst.members.values() {
                *shadow.entry(nid.as_str()).or_default() += 1;
            }
        }
        for n in self.nio.nif_manager().live() {
            let want = shadow.get(n.nif_instance_id.as_str()).copied().unwrap_or(0);
            if n.refcount != want {
                self.violations.push(Violation {
                    t,
                    invariant: "refcount".into(),
                    detail: format!("{} has refcount {} but {} users", n.nif_instance_id, n.refcount, want),
                });
            }
        }
    }

    fn finish(mut self) -> ScenarioRun {
        let records = self.nio.event_log().records().to_vec();
        self.violations.extend(check_log(&records));
        self.violations.extend(gate_safety(&self.nio));
        let initial = self.capacities();
        let final_available: BTreeMap<String, Resources> = initial
            .keys()
            .map(|n| (n.clone(), self.nio.nifc_manager().available(n).unwrap_or_default()))
            .collect();
        let all_terminated = self.nio.instances().all(|i| matches!(i.state, NisState::Terminated));
        let summary = ScenarioSummary {
            seed: self.nio.config().seed,
            until: self.queue.now(),
            events_scheduled: self.queue.scheduled_count(),
            events_dispatched: self.queue.dispatched_count(),
            records: records.len(),
            requests: self.submissions,
            gate: self.gate_counts,
            executed_actions: self.nio.gate().history().len(),
            capacity_restored: all_terminated && final_available == initial,
            initial_capacity: initial,
            final_available,
            violations: self.violations,
        };
        ScenarioRun { records, summary, nio: self.nio }
    }
}

/// Log-level invariants: legal state transitions and a terminal record for
/// every request.
pub fn check_log(records: &[EventRecord]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut states: BTreeMap<&str, NisState> = BTreeMap::new();
    let mut open: BTreeMap<&str, Millis> = BTreeMap::new();
    for r in records {
        match (r.actor.as_str(), r.action.as_str()) {
            (actor::NIO, "transition") => {
                let to: Option<NisState> = serde_json::from_value(r.detail["to"].clone()).ok();
                let from = states.get(r.subject.as_str()).copied();
                match (from, to) {
                    (None, Some(NisState::Validating)) => {}
                    (Some(f), Some(t)) if f.can_move_to(t) => {}
                    _ => out.push(Violation {
                        t: r.t,
                        invariant: "state_machine".into(),
                        detail: format!("{}: {:?} -> {:?}", r.subject, from, to),
                    }),
                }
                if let Some(t) = to {
                    states.insert(&r.subject, t);
                }
            }
            (actor::SENDER, "request") => {
                open.insert(&r.subject, r.t);
            }
            (actor::NIO, "complete") if r.outcome.is_terminal() => {
                open.remove(r.subject.as_str());
            }
            _ => {}
        }
    }
    for (req, t) in open {
        out.push(Violation { t, invariant: "log_completeness".into(), detail: format!("{req} has no terminal record") });
    }
    out
}

/// Executed actions by different NIFs on one service that fall inside a
/// temporal window of the conflict matrix, among NIFs bound by a cooldown.
pub fn gate_safety(nio: &Nio) -> Vec<Violation> {
    let history = nio.gate().history();
    let matrix = &nio.config().matrix;
    let mut out = Vec::new();
    for (i, a) in history.iter().enumerate() {
        for b in &history[i + 1..] {
            if a.service_id != b.service_id || a.nif == b.nif {
                continue;
            }
            let Some(window) = matrix.window(a.action_class, b.action_class) else { continue };
            let bound = nio.policies().all().any(|p| {
                p.scope.service_id == a.service_id
                    && p.scope.covers(&a.nif)
                    && p.scope.covers(&b.nif)
                    && matches!(p.rule, crate::policy::Rule::Cooldown { .. })
                    && p.created_at <= a.at.min(b.at)
            });
            if bound && b.at.abs_diff(a.at) < window {
                out.push(Violation {
                    t: b.at,
                    invariant: "gate_safety".into(),
                    detail: format!("{} {} at {} and {} {} at {}", a.nif, a.action_class, a.at, b.nif, b.action_class, b.at),
                });
            }
        }
    }
    out
}
