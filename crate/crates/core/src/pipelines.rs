//! Mock MLOps pipeline: ingest, train, test, package, register.
//!
//! Training follows a saturating exponential curve whose parameters are drawn
//! from the run seed, so a run is a pure function of its spec. Each stage is
//! a separate step; [`Pipelines::run`] drives all five at once.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semver::Version;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::catalog::{Catalog, ModelDraft, ScoreDimension};
use crate::descriptors::{DataSpec, Dependency, LearningMetric, NifDescriptor, Platform};
use crate::simenv::SimEnv;
use crate::Millis;

const ARTIFACT_MAGIC: &[u8] = b"NISTMDL1\n";
/// Samples per source read during ingestion.
const INGEST_SAMPLES: u64 = 16;
/// NIFD parameter carrying the anomaly threshold of a detector model.
pub const THETA_PARAM: &str = "anomalyThreshold";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline spec: {0}")]
    InvalidSpec(String),
    #[error("unknown pipeline run {0}")]
    UnknownRun(String),
    #[error("malformed model artifact: {0}")]
    BadArtifact(String),
    #[error("pipeline log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub nif_name: String,
    /// Version the packaged image is registered under.
    pub version: Version,
    pub data_spec: DataSpec,
    pub metric: LearningMetric,
    pub threshold_upper: f64,
    pub epoch_budget: u32,
    pub seed: u64,
    pub platform: Platform,
    #[serde(default)]
    pub dependencies: Vec<Dependency>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl PipelineSpec {
    /// Spec for training the model a NIFD asks for.
    pub fn from_nifd(desc: &NifDescriptor, epoch_budget: u32, seed: u64) -> Result<Self, PipelineError> {
        let data_spec = desc.data_spec.clone().ok_or_else(|| PipelineError::InvalidSpec("NIFD has no data spec".into()))?;
        let thresholds =
            desc.thresholds.ok_or_else(|| PipelineError::InvalidSpec("NIFD has no thresholds".into()))?;
        Ok(PipelineSpec {
            nif_name: desc.name.clone(),
            version: desc.version.clone(),
            data_spec,
            metric: desc.learning_metric,
            threshold_upper: thresholds.upper,
            epoch_budget,
            seed,
            platform: desc.platform,
            dependencies: desc.dependencies.clone(),
            params: desc.params.clone(),
        })
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.epoch_budget == 0 {
            return Err(PipelineError::InvalidSpec("epoch budget must be at least 1".into()));
        }
        if !self.threshold_upper.is_finite() {
            return Err(PipelineError::InvalidSpec("threshold must be finite".into()));
        }
        if self.nif_name.is_empty() {
            return Err(PipelineError::InvalidSpec("empty NIF name".into()));
        }
        Ok(())
    }
}

/// Parameters of `score(e) = s_max - (s_max - s_0) * exp(-e / tau)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub s0: f64,
    pub smax: f64,
    pub tau: f64,
}

impl Curve {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s0 = rng.random_range(0.3..=0.6);
        let smax = rng.random_range(0.88..=0.99);
        let tau = rng.random_range(5.0..=30.0);
        Curve { s0, smax, tau }
    }

    /// Accuracy-like score after `epoch` epochs.
    pub fn at(&self, epoch: u32) -> f64 {
        self.smax - (self.smax - self.s0) * (-(epoch as f64) / self.tau).exp()
    }

    /// Score in the units of `metric`; loss-like metrics mirror the curve.
    pub fn in_metric(&self, metric: LearningMetric, epoch: u32) -> f64 {
        let s = self.at(epoch);
        if metric.higher_is_better() {
            s
        } else {
            1.0 - s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Train,
    Test,
    Package,
    Register,
}

impl Stage {
    pub const ORDER: [Stage; 5] = [Stage::Ingest, Stage::Train, Stage::Test, Stage::Package, Stage::Register];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Succeeded,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Running,
    Succeeded,
    FailedThreshold,
    FailedStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub run_id: String,
    pub nif_name: String,
    pub stages: Vec<StageRecord>,
    pub epochs: u32,
    pub final_score: f64,
    pub model_id: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PipelineResult {
    pub fn is_final(&self) -> bool {
        self.status != RunStatus::Running
    }
}

/// Decoded contents of a model artifact blob.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub nif_name: String,
    pub version: Version,
    pub metric: LearningMetric,
    pub seed: u64,
    pub curve: Curve,
    pub epochs: u32,
    pub final_score: f64,
    pub params: BTreeMap<String, f64>,
}

impl ModelArtifact {
    pub fn theta(&self) -> Option<f64> {
        self.params.get(THETA_PARAM).copied()
    }
}

pub fn encode_artifact(artifact: &ModelArtifact) -> Vec<u8> {
    let mut out = ARTIFACT_MAGIC.to_vec();
    out.extend_from_slice(canonical::to_canonical(artifact).as_bytes());
    out
}

pub fn decode_artifact(blob: &[u8]) -> Result<ModelArtifact, PipelineError> {
    let body = blob.strip_prefix(ARTIFACT_MAGIC).ok_or_else(|| PipelineError::BadArtifact("bad magic".into()))?;
    serde_json::from_slice(body).map_err(|e| PipelineError::BadArtifact(e.to_string()))
}

/// Energy cost per execution platform.
fn energy_cost(platform: Platform) -> f64 {
    match platform {
        Platform::Cpu => 0.3,
        Platform::Gpu => 0.6,
        Platform::Tpu => 0.5,
        Platform::Fpga => 0.2,
    }
}

#[derive(Debug, Clone)]
struct Run {
    spec: PipelineSpec,
    result: PipelineResult,
    curve: Curve,
    ingested: BTreeMap<String, f64>,
    next: usize,
}

/// Engine holding every run started in this process.
#[derive(Debug, Default)]
pub struct Pipelines {
    runs: BTreeMap<String, Run>,
    counter: u64,
    log_path: Option<PathBuf>,
}

impl Pipelines {
    pub fn new() -> Self {
        Self::default()
    }

    /// Engine that appends finished runs to `<data_dir>/pipelines/runs.log`.
    pub fn with_log(data_dir: &std::path::Path) -> Result<Self, PipelineError> {
        let dir = data_dir.join("pipelines");
        fs::create_dir_all(&dir)?;
        Ok(Pipelines { log_path: Some(dir.join("runs.log")), ..Self::default() })
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn start(&mut self, spec: PipelineSpec) -> Result<String, PipelineError> {
        spec.check()?;
        self.counter += 1;
        let run_id = format!("run-{:04}", self.counter);
        let curve = Curve::from_seed(spec.seed);
        let result = PipelineResult {
            run_id: run_id.clone(),
            nif_name: spec.nif_name.clone(),
            stages: Vec::new(),
            epochs: 0,
            final_score: f64::NAN,
            model_id: None,
            status: RunStatus::Running,
            failure: None,
        };
        self.runs.insert(run_id.clone(), Run { spec, result, curve, ingested: BTreeMap::new(), next: 0 });
        Ok(run_id)
    }

    /// Executes the next stage of a run. Returns the snapshot afterwards.
    pub fn step(
        &mut self,
        run_id: &str,
        catalog: &mut Catalog,
        env: &SimEnv,
        now: Millis,
    ) -> Result<PipelineResult, PipelineError> {
        let run = self.runs.get_mut(run_id).ok_or_else(|| PipelineError::UnknownRun(run_id.into()))?;
        if run.result.is_final() {
            return Ok(run.result.clone());
        }
        let stage = Stage::ORDER[run.next];
        run.next += 1;
        let outcome = execute(run, stage, catalog, env, now);
        let status = if outcome.is_ok() { StageStatus::Succeeded } else { StageStatus::Failed };
        run.result.stages.push(StageRecord { stage, status, at: now });
        match outcome {
            Ok(()) if run.next == Stage::ORDER.len() => run.result.status = RunStatus::Succeeded,
            Ok(()) => {}
            Err((status, why)) => {
                run.result.status = status;
                run.result.failure = Some(why);
                for &rest in &Stage::ORDER[run.next..] {
                    run.result.stages.push(StageRecord { stage: rest, status: StageStatus::Skipped, at: now });
                }
                run.next = Stage::ORDER.len();
            }
        }
        let snapshot = run.result.clone();
        if snapshot.is_final() {
            self.append_log(&snapshot)?;
        }
        Ok(snapshot)
    }

    /// Runs all five stages at `now`.
    pub fn run(
        &mut self,
        spec: PipelineSpec,
        catalog: &mut Catalog,
        env: &SimEnv,
        now: Millis,
    ) -> Result<PipelineResult, PipelineError> {
        let id = self.start(spec)?;
        loop {
            let r = self.step(&id, catalog, env, now)?;
            if r.is_final() {
                return Ok(r);
            }
        }
    }

    pub fn status(&self, run_id: &str) -> Result<PipelineResult, PipelineError> {
        self.runs.get(run_id).map(|r| r.result.clone()).ok_or_else(|| PipelineError::UnknownRun(run_id.into()))
    }

    fn append_log(&self, result: &PipelineResult) -> Result<(), PipelineError> {
        if let Some(path) = &self.log_path {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", canonical::to_canonical(result))?;
        }
        Ok(())
    }
}

type StageFailure = (RunStatus, String);

fn execute(run: &mut Run, stage: Stage, catalog: &mut Catalog, env: &SimEnv, now: Millis) -> Result<(), StageFailure> {
    let spec = &run.spec;
    match stage {
        Stage::Ingest => {
            for source in &spec.data_spec.source_ids {
                let period = spec.data_spec.sampling_period_ms.max(1);
                let mut sum = 0.0;
                for i in 0..INGEST_SAMPLES {
                    let at = now.saturating_sub(i * period);
                    sum += env.sample(source, at).map_err(|e| (RunStatus::FailedStage, e.to_string()))?;
                }
                run.ingested.insert(source.clone(), sum / INGEST_SAMPLES as f64);
            }
            Ok(())
        }
        Stage::Train => {
            let mut epoch = 1;
            while epoch < spec.epoch_budget && !spec.metric.meets(run.curve.in_metric(spec.metric, epoch), spec.threshold_upper) {
                epoch += 1;
            }
            run.result.epochs = epoch;
            run.result.final_score = run.curve.in_metric(spec.metric, epoch);
            Ok(())
        }
        Stage::Test => {
            if spec.metric.meets(run.result.final_score, spec.threshold_upper) {
                Ok(())
            } else {
                Err((
                    RunStatus::FailedThreshold,
                    format!(
                        "score {:.4} after {} epochs does not meet {}",
                        run.result.final_score, run.result.epochs, spec.threshold_upper
                    ),
                ))
            }
        }
        Stage::Package => Ok(()),
        Stage::Register => {
            let artifact = build_artifact(run);
            let spec = &run.spec;
            let draft = ModelDraft {
                nif_name: spec.nif_name.clone(),
                version: spec.version.clone(),
                metric: spec.metric,
                test_score: run.result.final_score,
                platform: spec.platform,
                input_format: spec.data_spec.input_format.clone(),
                dependencies: spec.dependencies.clone(),
                aux_scores: BTreeMap::from([(ScoreDimension::Energy, energy_cost(spec.platform))]),
                created_at: now,
            };
            let id = catalog
                .register_model(draft, &encode_artifact(&artifact))
                .map_err(|e| (RunStatus::FailedStage, e.to_string()))?;
            run.result.model_id = Some(id);
            Ok(())
        }
    }
}

fn build_artifact(run: &Run) -> ModelArtifact {
    let spec = &run.spec;
    let mut params = spec.params.clone();
    params.entry(THETA_PARAM.to_string()).or_insert_with(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7468_6574_61);
        (rng.random_range(0.7..=0.9_f64) * 100.0).round() / 100.0
    });
    for (source, mean) in &run.ingested {
        params.insert(format!("ingest.{source}.mean"), *mean);
    }
    ModelArtifact {
        nif_name: spec.nif_name.clone(),
        version: spec.version.clone(),
        metric: spec.metric,
        seed: spec.seed,
        curve: run.curve,
        epochs: run.result.epochs,
        final_score: run.result.final_score,
        params,
    }
}
