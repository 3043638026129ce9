//! NIF and NIS descriptors (NIFD / NISD).
//!
//! Descriptors keep the shape of a Kubernetes manifest: identity and the
//! N-MAPE-K taxonomy live in `metadata.labels` / `metadata.annotations`,
//! everything else under `spec`. Both YAML and JSON input are accepted; the
//! canonical output is JSON with sorted keys.
//!
//! Label and annotation conventions:
//!
//! * `daemon.nmapek.type.<Class>: "true"` declares an N-MAPE-K component class.
//! * `daemon.nmapek.plan.target.<i>: "<service>:<path>:<action>"` declares a
//!   configuration target the NIF may act on.
//! * `daemon.integrity.sha256` carries the digest of the canonical body.

mod nifd;
mod nisd;
pub mod version;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Millis;

pub use nifd::{parse_nifd, NifDescriptor};
pub use nisd::{parse_nisd, LinkSpec, NifRef, NisDescriptor};
pub use version::VersionConstraint;

pub const TYPE_LABEL_PREFIX: &str = "daemon.nmapek.type.";
pub const PLAN_TARGET_PREFIX: &str = "daemon.nmapek.plan.target";
pub const INTEGRITY_ANNOTATION: &str = "daemon.integrity.sha256";
/// Manifest prefix stripped from plan-target paths; paths are stored relative
/// to the container spec.
pub const CONTAINER_PATH_PREFIX: &str = "spec.containers.";
pub const API_VERSION: &str = "nist/v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescriptorError {
    #[error("malformed descriptor: {0}")]
    Parse(String),
    #[error("unknown N-MAPE-K class {0:?}")]
    UnknownClass(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("link references unknown NIF {0:?}")]
    DanglingLink(String),
    #[error("integrity digest mismatch (stored {stored}, computed {computed})")]
    IntegrityMismatch { stored: String, computed: String },
    #[error("descriptor invariant violated: {0}")]
    Invariant(String),
}

/// Component classes of the N-MAPE-K taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NmapekClass {
    Sensor,
    Monitor,
    Analyze,
    Plan,
    Execute,
    Effector,
    Knowledge,
    Source,
    Sink,
}

impl NmapekClass {
    pub const ALL: [NmapekClass; 9] = [
        NmapekClass::Sensor,
        NmapekClass::Monitor,
        NmapekClass::Analyze,
        NmapekClass::Plan,
        NmapekClass::Execute,
        NmapekClass::Effector,
        NmapekClass::Knowledge,
        NmapekClass::Source,
        NmapekClass::Sink,
    ];

    /// Role used for conflict analysis: Source acts as Sensor, Sink as Effector.
    pub fn role(self) -> NmapekClass {
        match self {
            NmapekClass::Source => NmapekClass::Sensor,
            NmapekClass::Sink => NmapekClass::Effector,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NmapekClass::Sensor => "Sensor",
            NmapekClass::Monitor => "Monitor",
            NmapekClass::Analyze => "Analyze",
            NmapekClass::Plan => "Plan",
            NmapekClass::Execute => "Execute",
            NmapekClass::Effector => "Effector",
            NmapekClass::Knowledge => "Knowledge",
            NmapekClass::Source => "Source",
            NmapekClass::Sink => "Sink",
        }
    }

    /// Classes that consume data from a source.
    pub fn is_sensing(self) -> bool {
        matches!(self.role(), NmapekClass::Sensor | NmapekClass::Monitor)
    }
}

impl fmt::Display for NmapekClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NmapekClass {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "Analyse" {
            return Ok(NmapekClass::Analyze);
        }
        NmapekClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| DescriptorError::UnknownClass(s.to_string()))
    }
}

/// Kind of configuration action a Plan component can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionClass {
    Scale,
    Relocate,
    Reconfigure,
}

impl ActionClass {
    pub const ALL: [ActionClass; 3] = [ActionClass::Scale, ActionClass::Relocate, ActionClass::Reconfigure];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionClass::Scale => "scale",
            ActionClass::Relocate => "relocate",
            ActionClass::Reconfigure => "reconfigure",
        }
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionClass {
    type Err = DescriptorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionClass::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| DescriptorError::Parse(format!("unknown action class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LearningMode {
    #[default]
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningMetric {
    Accuracy,
    CrossEntropy,
    Mse,
    Reward,
}

impl LearningMetric {
    pub fn higher_is_better(self) -> bool {
        matches!(self, LearningMetric::Accuracy | LearningMetric::Reward)
    }

    /// `value` is at least as good as `bound` under this metric's orientation.
    pub fn meets(self, value: f64, bound: f64) -> bool {
        if self.higher_is_better() {
            value >= bound
        } else {
            value <= bound
        }
    }

    /// Value mapped so that larger is always better.
    pub fn oriented(self, value: f64) -> f64 {
        if self.higher_is_better() {
            value
        } else {
            -value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    #[default]
    Cpu,
    Gpu,
    Tpu,
    Fpga,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default)]
    pub source_ids: Vec<String>,
    pub input_format: String,
    pub sampling_period_ms: Millis,
}

/// A library dependency: a version constraint in descriptors, a concrete
/// version (exact constraint) on registered model images.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dependency {
    pub name: String,
    pub version: VersionConstraint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub upper: f64,
    pub lower: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanTarget {
    pub service_id: String,
    pub target_path: String,
    pub action_class: ActionClass,
}

impl PlanTarget {
    /// Parses the `<service>:<path>:<action>` annotation value.
    pub fn parse_annotation(value: &str) -> Result<Self, DescriptorError> {
        let parts: Vec<&str> = value.split(':').collect();
        let [service, path, action] = parts.as_slice() else {
            return Err(DescriptorError::Parse(format!(
                "plan target {value:?} is not <service>:<path>:<action>"
            )));
        };
        if service.is_empty() || path.is_empty() {
            return Err(DescriptorError::Parse(format!("plan target {value:?} has empty parts")));
        }
        let path = path.strip_prefix(CONTAINER_PATH_PREFIX).unwrap_or(path);
        Ok(PlanTarget {
            service_id: service.to_string(),
            target_path: path.to_string(),
            action_class: action.parse()?,
        })
    }

    pub fn to_annotation(&self) -> String {
        format!(
            "{}:{}{}:{}",
            self.service_id, CONTAINER_PATH_PREFIX, self.target_path, self.action_class
        )
    }
}

/// Per-component resource demand of a NIF-C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ComponentResources {
    pub cpu_millicores: u64,
    pub mem_mib: u64,
    #[serde(default)]
    pub gpu: u64,
}

impl Default for ComponentResources {
    fn default() -> Self {
        ComponentResources { cpu_millicores: 250, mem_mib: 256, gpu: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUse {
    pub source_id: String,
    pub sampling_period_ms: Millis,
}

/// The conflict-relevant view of a NIF.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmapekProfile {
    pub nif_name: String,
    pub classes: BTreeSet<NmapekClass>,
    pub plan_targets: Vec<PlanTarget>,
    pub sources: Vec<SourceUse>,
}

impl NmapekProfile {
    pub fn has_role(&self, role: NmapekClass) -> bool {
        self.classes.iter().any(|c| c.role() == role.role())
    }
}

pub fn extract_profile(desc: &NifDescriptor) -> NmapekProfile {
    let sources = desc
        .data_spec
        .as_ref()
        .map(|d| {
            d.source_ids
                .iter()
                .map(|s| SourceUse { source_id: s.clone(), sampling_period_ms: d.sampling_period_ms })
                .collect()
        })
        .unwrap_or_default();
    NmapekProfile {
        nif_name: desc.name.clone(),
        classes: desc.classes.clone(),
        plan_targets: desc.plan_targets.clone(),
        sources,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub missing_mandatory: Vec<String>,
    pub integrity_ok: bool,
    pub messages: Vec<String>,
}

impl ValidationReport {
    fn new(missing: Vec<String>, stored: Option<&str>, computed: &str) -> Self {
        let integrity_ok = stored == Some(computed);
        let mut messages: Vec<String> =
            missing.iter().map(|m| format!("mandatory element `{m}` is missing")).collect();
        match stored {
            None => messages.push("no integrity digest present".into()),
            Some(s) if s != computed => {
                messages.push(format!("integrity digest mismatch: stored {s}, computed {computed}"))
            }
            _ => {}
        }
        ValidationReport { valid: missing.is_empty() && integrity_ok, missing_mandatory: missing, integrity_ok, messages }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptor {
    Nif(NifDescriptor),
    Nis(NisDescriptor),
}

impl Descriptor {
    pub fn name(&self) -> &str {
        match self {
            Descriptor::Nif(d) => &d.name,
            Descriptor::Nis(d) => &d.name,
        }
    }

    pub fn version(&self) -> &semver::Version {
        match self {
            Descriptor::Nif(d) => &d.version,
            Descriptor::Nis(d) => &d.version,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Descriptor::Nif(_) => "NIFD",
            Descriptor::Nis(_) => "NISD",
        }
    }

    pub fn to_canonical_json(&self) -> String {
        match self {
            Descriptor::Nif(d) => d.to_canonical_json(),
            Descriptor::Nis(d) => d.to_canonical_json(),
        }
    }

    pub fn computed_digest(&self) -> String {
        match self {
            Descriptor::Nif(d) => d.computed_digest(),
            Descriptor::Nis(d) => d.computed_digest(),
        }
    }

    pub fn integrity(&self) -> Option<&str> {
        match self {
            Descriptor::Nif(d) => d.integrity.as_deref(),
            Descriptor::Nis(d) => d.integrity.as_deref(),
        }
    }

    pub fn sealed(self) -> Self {
        match self {
            Descriptor::Nif(d) => Descriptor::Nif(d.sealed()),
            Descriptor::Nis(d) => Descriptor::Nis(d.sealed()),
        }
    }
}

/// Parses either descriptor kind, dispatching on the document's `kind`.
pub fn parse_descriptor(text: &str) -> Result<Descriptor, DescriptorError> {
    let value = parse_document(text)?;
    match value.get("kind").and_then(|k| k.as_str()) {
        Some("NIFD") => parse_nifd(text).map(Descriptor::Nif),
        Some("NISD") => parse_nisd(text).map(Descriptor::Nis),
        Some(other) => Err(DescriptorError::Parse(format!("unknown descriptor kind {other:?}"))),
        None => Err(DescriptorError::MissingField("kind".into())),
    }
}

pub fn validate_descriptor(desc: &Descriptor) -> ValidationReport {
    match desc {
        Descriptor::Nif(d) => d.validate(),
        Descriptor::Nis(d) => d.validate(),
    }
}

/// YAML is a superset of JSON, so one parser handles both input forms.
pub(crate) fn parse_document(text: &str) -> Result<serde_json::Value, DescriptorError> {
    let value: serde_json::Value =
        serde_yaml::from_str(text).map_err(|e| DescriptorError::Parse(e.to_string()))?;
    if !value.is_object() {
        return Err(DescriptorError::Parse("document root must be a mapping".into()));
    }
    Ok(value)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, deserialize_with = "null_as_default")]
    pub labels: BTreeMap<String, String>,
    #[serde(default, deserialize_with = "null_as_default")]
    pub annotations: BTreeMap<String, String>,
}

/// YAML renders an empty mapping key as null.
pub(crate) fn null_as_default<'de, D, T>(deserializer: D) -> Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Default + Deserialize<'de>,
{
    Ok(Option::<T>::deserialize(deserializer)?.unwrap_or_default())
}

impl Metadata {
    pub fn identity(&self) -> Result<(String, semver::Version), DescriptorError> {
        let name = self
            .name
            .clone()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| DescriptorError::MissingField("metadata.name".into()))?;
        let version = self
            .version
            .as_deref()
            .ok_or_else(|| DescriptorError::MissingField("metadata.version".into()))?;
        Ok((name, version::parse_version(version)?))
    }
}

pub(crate) fn check_kind(value: &serde_json::Value, expected: &str) -> Result<(), DescriptorError> {
    match value.get("kind").and_then(|k| k.as_str()) {
        Some(k) if k == expected => Ok(()),
        Some(k) => Err(DescriptorError::Parse(format!("expected kind {expected}, found {k}"))),
        None => Err(DescriptorError::MissingField("kind".into())),
    }
}
