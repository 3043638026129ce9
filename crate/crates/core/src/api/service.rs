//! The NIO service. Requests are accepted on any thread and funnelled into
//! one command loop that owns the orchestrator; lifecycle requests are
//! answered with `202` and a request id to poll.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::scenario::{DEFAULT_SENDER, DEFAULT_TOKEN};
use super::EventLog;
use crate::orchestrator::{
    ArbitrationPolicy, AuthTable, LifecycleRequest, Nio, NioConfig, NioError, RequestPayload, Submission,
};
use crate::simenv::{MetricKind, NodeConfig, ProposedAction, Resources, ServiceConfig, SimEnv, SourceConfig, Tier};
use crate::Millis;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("bad config: {0}")]
    Config(String),
    #[error(transparent)]
    Nio(#[from] NioError),
}

/// Service configuration, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub seed: u64,
    pub epoch_budget: u32,
    pub auth: AuthTable,
    pub nodes: Vec<NodeConfig>,
    pub sources: Vec<SourceConfig>,
    pub services: Vec<ServiceConfig>,
    /// Descriptor files onboarded at startup.
    pub descriptors: Vec<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        let node = |id: &str, tier, cpu, mem| NodeConfig {
            id: id.into(),
            tier,
            capacity: Resources { cpu_millicores: cpu, mem_mib: mem, gpu: 0, link_bw_mbps: 1000 },
            base_latency_ms: None,
        };
        let source = |node: &str, kind, suffix: &str| SourceConfig {
            id: format!("{node}.{suffix}"),
            node: Some(node.into()),
            service: None,
            kind,
            mean: 0.3,
            std: 0.02,
            phi: 0.8,
            period_ms: 1000,
            spikes: vec![],
        };
        let mut sources = Vec::new();
        for n in ["edge-1", "edge-2", "cloud-1"] {
            sources.push(source(n, MetricKind::CpuLoad, "cpu"));
            sources.push(source(n, MetricKind::MemLoad, "mem"));
        }
        ServeConfig {
            bind: "127.0.0.1:8080".into(),
            seed: 42,
            epoch_budget: 100,
            auth: AuthTable::single(DEFAULT_SENDER, DEFAULT_TOKEN),
            nodes: vec![
                node("edge-1", Tier::Edge, 4000, 8192),
                node("edge-2", Tier::Edge, 4000, 8192),
                node("cloud-1", Tier::Cloud, 16000, 32768),
            ],
            sources,
            services: vec![ServiceConfig { id: "svcA".into(), node: "edge-1".into(), replicas: 1 }],
            descriptors: vec![],
            data_dir: None,
            event_log: None,
        }
    }
}

impl ServeConfig {
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => toml::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    pub fn build_nio(&self) -> Result<Nio, ServiceError> {
        let env = SimEnv::new(self.seed, &self.nodes, &self.sources, &self.services).map_err(NioError::from)?;
        let config = NioConfig {
            seed: self.seed,
            epoch_budget: self.epoch_budget,
            auth: self.auth.clone(),
            data_dir: self.data_dir.clone(),
            ..NioConfig::default()
        };
        let mut nio = Nio::new(config, env)?;
        if let Some(p) = &self.event_log {
            nio = nio.with_event_log(EventLog::to_file(p).map_err(NioError::from)?);
        }
        for d in &self.descriptors {
            let text = std::fs::read_to_string(d).map_err(|e| ServiceError::Config(format!("{}: {e}", d.display())))?;
            nio.onboard(&text)?;
        }
        Ok(nio)
    }
}

/// Source of logical time for the service.
#[derive(Debug, Clone)]
pub enum Clock {
    /// Milliseconds since the service started.
    Wall(Instant),
    /// Set by the caller.
    Manual(Arc<AtomicU64>),
}

impl Clock {
    pub fn now(&self) -> Millis {
        match self {
            Clock::Wall(start) => start.elapsed().as_millis() as Millis,
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RequestStatus {
    Pending,
    Completed { submission: Submission },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn new(status: u16, body: Value) -> Self {
        ApiResponse { status, body }
    }

    fn error(status: u16, message: impl Into<String>) -> Self {
        ApiResponse { status, body: json!({"error": message.into()}) }
    }
}

type Job = Box<dyn FnOnce(&mut Nio) + Send>;

#[derive(Debug, Deserialize)]
struct CreateBody {
    nisd: String,
}

#[derive(Debug, Default, Deserialize)]
struct InstantiateBody {
    #[serde(default)]
    placement: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
struct UpdateBody {
    descriptor: String,
    #[serde(default)]
    arbitration: Option<ArbitrationPolicy>,
}

#[derive(Debug, Deserialize)]
struct DescriptorBody {
    descriptor: String,
}

/// Transport-independent request handling.
pub struct Service {
    jobs: Mutex<mpsc::Sender<Job>>,
    auth: AuthTable,
    requests: Arc<Mutex<BTreeMap<String, RequestStatus>>>,
    next_ticket: Mutex<u64>,
}

impl Service {
    /// Starts the command loop on its own thread.
    pub fn start(nio: Nio, clock: Clock) -> Service {
        let auth = nio.config().auth.clone();
        let first = nio.peek_request_id();
        let (tx, rx) = mpsc::channel::<Job>();
        thread::spawn(move || {
            let mut nio = nio;
            for job in rx {
                let t = clock.now().max(nio.now());
                if let Err(e) = nio.advance_to(t) {
                    log::warn!("clock: {e}");
                }
                job(&mut nio);
            }
        });
        let next = first.trim_start_matches("req-").parse::<u64>().unwrap_or(1);
        Service {
            jobs: Mutex::new(tx),
            auth,
            requests: Arc::new(Mutex::new(BTreeMap::new())),
            next_ticket: Mutex::new(next),
        }
    }

    fn run<T: Send + 'static>(&self, f: impl FnOnce(&mut Nio) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = mpsc::channel();
        let job: Job = Box::new(move |nio| {
            let _ = tx.send(f(nio));
        });
        self.jobs.lock().ok()?.send(job).ok()?;
        rx.recv().ok()
    }

    /// Queues a lifecycle request. Tickets are handed out under the same
    /// lock as the enqueue, so they match the ids the orchestrator assigns.
    fn enqueue(&self, req: LifecycleRequest) -> ApiResponse {
        let Ok(mut next) = self.next_ticket.lock() else { return ApiResponse::error(500, "service poisoned") };
        let ticket = format!("req-{:04}", *next);
        let requests = Arc::clone(&self.requests);
        let key = ticket.clone();
        let job: Job = Box::new(move |nio| {
            let sub = nio.submit(&req);
            if let Ok(mut r) = requests.lock() {
                r.insert(key, RequestStatus::Completed { submission: sub });
            }
        });
        if let Ok(mut r) = self.requests.lock() {
            r.insert(ticket.clone(), RequestStatus::Pending);
        }
        let Ok(jobs) = self.jobs.lock() else { return ApiResponse::error(500, "service poisoned") };
        if jobs.send(job).is_err() {
            return ApiResponse::error(503, "command loop stopped");
        }
        *next += 1;
        ApiResponse::new(202, json!({"request_id": ticket}))
    }

    pub fn request_status(&self, id: &str) -> Option<RequestStatus> {
        self.requests.lock().ok()?.get(id).cloned()
    }

    /// Blocks until the request has completed.
    pub fn wait(&self, id: &str) -> Option<Submission> {
        // Jobs run in order, so a no-op behind it completes after it.
        self.run(|_| ())?;
        match self.request_status(id)? {
            RequestStatus::Completed { submission } => Some(submission),
            RequestStatus::Pending => None,
        }
    }

    /// Runs a closure on the command loop.
    pub fn with_nio<T: Send + 'static>(&self, f: impl FnOnce(&mut Nio) -> T + Send + 'static) -> Option<T> {
        self.run(f)
    }

    pub fn handle(&self, method: &str, path: &str, bearer: Option<&str>, body: &str) -> ApiResponse {
        let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
        if segments.first() != Some(&"v1") {
            return ApiResponse::error(404, format!("no route for {path}"));
        }
        if segments.get(1) == Some(&"ext") {
            return ApiResponse::error(501, "external federation is not implemented");
        }
        let Some(sender) = bearer.and_then(|t| self.auth.sender_for(t)).map(str::to_string) else {
            return ApiResponse::error(401, "unknown or missing bearer token");
        };
        let token = bearer.unwrap_or_default().to_string();
        let lifecycle = |payload| LifecycleRequest { sender: sender.clone(), auth_token: token.clone(), payload };
        match (method, &segments[1..]) {
            ("POST", ["nis"]) => match parse::<CreateBody>(body) {
                Ok(b) => self.enqueue(lifecycle(RequestPayload::Create { nisd: b.nisd })),
                Err(e) => e,
            },
            ("GET", ["nis", id]) => {
                let id = id.to_string();
                self.run(move |nio| match nio.catalog().nisd(&id) {
                    Some((digest, d)) => ApiResponse::new(
                        200,
                        json!({"id": digest, "name": d.name, "version": d.version.to_string(), "nifs": d.member_names()}),
                    ),
                    None => ApiResponse::error(404, format!("no NISD {id}")),
                })
                .unwrap_or_else(stopped)
            }
            ("POST", ["nis", id, "instances"]) => {
                let b = if body.trim().is_empty() { Ok(InstantiateBody::default()) } else { parse(body) };
                let id = id.to_string();
                match b {
                    Ok(b) => {
                        let known = self.run({
                            let id = id.clone();
                            move |nio| nio.catalog().nisd(&id).is_some()
                        });
                        if known != Some(true) {
                            return ApiResponse::error(404, format!("no NISD {id}"));
                        }
                        self.enqueue(lifecycle(RequestPayload::Instantiate { nisd: id, placement: b.placement }))
                    }
                    Err(e) => e,
                }
            }
            ("PATCH", ["nis", id]) => match parse::<UpdateBody>(body) {
                Ok(b) => {
                    if !self.instance_exists(id) {
                        return ApiResponse::error(404, format!("no instance {id}"));
                    }
                    self.enqueue(lifecycle(RequestPayload::Update {
                        instance_id: id.to_string(),
                        descriptor: b.descriptor,
                        arbitration: b.arbitration,
                    }))
                }
                Err(e) => e,
            },
            ("DELETE", ["instances", id]) => {
                if !self.instance_exists(id) {
                    return ApiResponse::error(404, format!("no instance {id}"));
                }
                self.enqueue(lifecycle(RequestPayload::Terminate { instance_id: id.to_string() }))
            }
            ("GET", ["instances", id]) => {
                let id = id.to_string();
                self.run(move |nio| match nio.status_of(&id) {
                    Ok(s) => ApiResponse::new(200, json!(s)),
                    Err(e) => ApiResponse::error(404, e.to_string()),
                })
                .unwrap_or_else(stopped)
            }
            ("GET", ["requests", id]) => match self.request_status(id) {
                Some(s) => ApiResponse::new(200, json!({"request_id": id, "state": s})),
                None => ApiResponse::error(404, format!("no request {id}")),
            },
            ("POST", ["gate"]) => match parse::<ProposedAction>(body) {
                Ok(mut action) => self
                    .run(move |nio| {
                        action.at = nio.now();
                        match nio.propose(&action) {
                            Ok(d) => ApiResponse::new(200, json!(d)),
                            Err(e) => ApiResponse::error(status_of_error(&e), e.to_string()),
                        }
                    })
                    .unwrap_or_else(stopped),
                Err(e) => e,
            },
            ("GET", ["policies"]) => self
                .run(|nio| ApiResponse::new(200, json!(nio.policies().all().collect::<Vec<_>>())))
                .unwrap_or_else(stopped),
            ("POST", ["descriptors"]) => match parse::<DescriptorBody>(body) {
                Ok(b) => self
                    .run(move |nio| match nio.onboard(&b.descriptor) {
                        Ok(id) => ApiResponse::new(201, json!({"id": id})),
                        Err(e) => ApiResponse::error(status_of_error(&e), e.to_string()),
                    })
                    .unwrap_or_else(stopped),
                Err(e) => e,
            },
            _ => ApiResponse::error(404, format!("no route for {method} {path}")),
        }
    }

    fn instance_exists(&self, id: &str) -> bool {
        let id = id.to_string();
        self.run(move |nio| nio.instance(&id).is_ok()).unwrap_or(false)
    }
}

fn stopped() -> ApiResponse {
    ApiResponse::error(503, "command loop stopped")
}

fn parse<T: for<'de> Deserialize<'de>>(body: &str) -> Result<T, ApiResponse> {
    serde_json::from_str(body).map_err(|e| ApiResponse::error(400, format!("bad request body: {e}")))
}

fn status_of_error(e: &NioError) -> u16 {
    match e {
        NioError::Unauthorized { .. } => 403,
        NioError::UnknownNisd(_) | NioError::UnknownNifd(_) | NioError::UnknownInstance(_) => 404,
        NioError::InvalidDescriptor(_) | NioError::InvalidPolicy(_) => 400,
        NioError::Policy(crate::policy::PolicyError::UnknownNif(_)) => 404,
        NioError::Catalog(_) => 409,
        _ => 500,
    }
}

async fn route(State(svc): State<Arc<Service>>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let bearer = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::to_string);
    let body = String::from_utf8_lossy(&body).into_owned();
    let path = uri.path().to_string();
    let res = tokio::task::spawn_blocking(move || svc.handle(method.as_str(), &path, bearer.as_deref(), &body))
        .await
        .unwrap_or_else(|e| ApiResponse::error(500, e.to_string()));
    let status = StatusCode::from_u16(res.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(res.body)).into_response()
}

pub fn router(svc: Arc<Service>) -> Router {
    Router::new().fallback(route).with_state(svc)
}

/// Binds and serves until the process ends.
pub async fn serve(svc: Arc<Service>, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServiceError::Bind { addr: addr.into(), source })?;
    let local: SocketAddr = listener.local_addr().map_err(|source| ServiceError::Bind { addr: addr.into(), source })?;
    log::info!("listening on {local}");
    axum::serve(listener, router(svc)).await.map_err(|source| ServiceError::Bind { addr: addr.into(), source })
}
