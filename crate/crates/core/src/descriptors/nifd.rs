use std::collections::{BTreeMap, BTreeSet};

use semver::Version;
use serde::{Deserialize, Serialize};

use super::{
    check_kind, parse_document, ComponentResources, DataSpec, DescriptorError, Dependency, LearningMetric,
    LearningMode, Metadata, NmapekClass, PlanTarget, Platform, Thresholds, ValidationReport, API_VERSION,
    INTEGRITY_ANNOTATION, PLAN_TARGET_PREFIX, TYPE_LABEL_PREFIX,
};
use crate::canonical;

/// A parsed NIF descriptor.
///
/// The mandatory elements (`network_operation`, `data_spec`, `output_format`,
/// `thresholds`) are optional here so that incomplete documents can still be
/// parsed and reported on by [`NifDescriptor::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct NifDescriptor {
    pub name: String,
    pub version: Version,
    pub network_operation: Option<String>,
    pub learning_mode: LearningMode,
    pub data_spec: Option<DataSpec>,
    pub learning_metric: LearningMetric,
    pub thresholds: Option<Thresholds>,
    pub output_format: Option<String>,
    /// Logical timestamp (ms).
    pub last_modified: u64,
    pub dependencies: Vec<Dependency>,
    pub classes: BTreeSet<NmapekClass>,
    pub plan_targets: Vec<PlanTarget>,
    pub platform: Platform,
    pub resources: ComponentResources,
    /// Model hyper-parameters handed to the training pipeline.
    pub params: BTreeMap<String, f64>,
    pub extra_labels: BTreeMap<String, String>,
    pub extra_annotations: BTreeMap<String, String>,
    pub integrity: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NifDocument {
    #[serde(default = "default_api_version")]
    api_version: String,
    kind: String,
    metadata: Metadata,
    #[serde(default)]
    spec: NifSpecDoc,
}

fn default_api_version() -> String {
    API_VERSION.to_string()
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct NifSpecDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network_operation: Option<String>,
    #[serde(default)]
    learning_mode: LearningMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    learning_metric: Option<LearningMetric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    thresholds: Option<Thresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output_format: Option<String>,
    #[serde(default)]
    last_modified: u64,
    #[serde(default)]
    dependencies: Vec<Dependency>,
    #[serde(default)]
    platform: Platform,
    #[serde(default)]
    resources: ComponentResources,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

/// Parses a NIFD from YAML or JSON text.
pub fn parse_nifd(text: &str) -> Result<NifDescriptor, DescriptorError> {
    let value = parse_document(text)?;
    check_kind(&value, "NIFD")?;
    let doc: NifDocument = serde_json::from_value(value).map_err(|e| DescriptorError::Parse(e.to_string()))?;
    NifDescriptor::from_document(doc)
}

impl NifDescriptor {
    fn from_document(doc: NifDocument) -> Result<Self, DescriptorError> {
        let (name, version) = doc.metadata.identity()?;

        let mut classes = BTreeSet::new();
        let mut extra_labels = BTreeMap::new();
        for (key, value) in doc.metadata.labels {
            match key.strip_prefix(TYPE_LABEL_PREFIX) {
                Some(class) => {
                    let class: NmapekClass = class.parse()?;
                    if value == "true" {
                        classes.insert(class);
                    }
                }
                None => {
                    extra_labels.insert(key, value);
                }
            }
        }

        let mut indexed_targets = Vec::new();
        let mut extra_annotations = BTreeMap::new();
        let mut integrity = None;
        for (key, value) in doc.metadata.annotations {
            if key == INTEGRITY_ANNOTATION {
                integrity = Some(value);
            } else if let Some(rest) = key.strip_prefix(PLAN_TARGET_PREFIX) {
                let index: u32 = rest
                    .strip_prefix('.')
                    .and_then(|i| i.parse().ok())
                    .ok_or_else(|| DescriptorError::Parse(format!("bad plan target key {key:?}")))?;
                indexed_targets.push((index, PlanTarget::parse_annotation(&value)?));
            } else {
                extra_annotations.insert(key, value);
            }
        }
        indexed_targets.sort_by_key(|(i, _)| *i);
        let plan_targets: Vec<PlanTarget> = indexed_targets.into_iter().map(|(_, t)| t).collect();

        let spec = doc.spec;
        let learning_metric = spec
            .learning_metric
            .ok_or_else(|| DescriptorError::MissingField("learning_metric".into()))?;

        if classes.is_empty() {
            return Err(DescriptorError::MissingField("nmapek_labels".into()));
        }
        let has_plan = classes.contains(&NmapekClass::Plan);
        if has_plan && plan_targets.is_empty() {
            return Err(DescriptorError::MissingField("plan_targets".into()));
        }
        if !has_plan && !plan_targets.is_empty() {
            return Err(DescriptorError::Invariant("plan targets declared without a Plan component".into()));
        }
        if let Some(t) = &spec.thresholds {
            if !t.upper.is_finite() || !t.lower.is_finite() {
                return Err(DescriptorError::Invariant("thresholds must be finite".into()));
            }
            let ordered = if learning_metric.higher_is_better() { t.lower < t.upper } else { t.lower > t.upper };
            if !ordered {
                return Err(DescriptorError::Invariant(format!(
                    "thresholds lower={} upper={} are mis-ordered for {:?}",
                    t.lower, t.upper, learning_metric
                )));
            }
        }
        if let Some(data) = &spec.data {
            if data.sampling_period_ms == 0 {
                return Err(DescriptorError::Invariant("sampling period must be positive".into()));
            }
            if classes.iter().any(|c| c.is_sensing()) && data.source_ids.is_empty() {
                return Err(DescriptorError::Invariant("sensing component declared without data sources".into()));
            }
        }

        Ok(NifDescriptor {
            name,
            version,
            network_operation: spec.network_operation,
            learning_mode: spec.learning_mode,
            data_spec: spec.data,
            learning_metric,
            thresholds: spec.thresholds,
            output_format: spec.output_format,
            last_modified: spec.last_modified,
            dependencies: spec.dependencies,
            classes,
            plan_targets,
            platform: spec.platform,
            resources: spec.resources,
            params: spec.params,
            extra_labels,
            extra_annotations,
            integrity,
        })
    }

    fn to_document(&self, integrity: Option<&str>) -> NifDocument {
        let mut labels = self.extra_labels.clone();
        for (key, value) in self.nmapek_labels() {
            labels.insert(key, value);
        }
        let mut annotations = self.extra_annotations.clone();
        for (i, target) in self.plan_targets.iter().enumerate() {
            annotations.insert(format!("{PLAN_TARGET_PREFIX}.{i}"), target.to_annotation());
        }
        if let Some(digest) = integrity {
            annotations.insert(INTEGRITY_ANNOTATION.to_string(), digest.to_string());
        }
        NifDocument {
            api_version: API_VERSION.to_string(),
            kind: "NIFD".to_string(),
            metadata: Metadata {
                name: Some(self.name.clone()),
                version: Some(self.version.to_string()),
                labels,
                annotations,
            },
            spec: NifSpecDoc {
                network_operation: self.network_operation.clone(),
                learning_mode: self.learning_mode,
                data: self.data_spec.clone(),
                learning_metric: Some(self.learning_metric),
                thresholds: self.thresholds,
                output_format: self.output_format.clone(),
                last_modified: self.last_modified,
                dependencies: self.dependencies.clone(),
                platform: self.platform,
                resources: self.resources,
                params: self.params.clone(),
            },
        }
    }

    /// `daemon.nmapek.type.<Class>` labels for the declared classes.
    pub fn nmapek_labels(&self) -> BTreeMap<String, String> {
        self.classes
            .iter()
            .map(|c| (format!("{TYPE_LABEL_PREFIX}{c}"), "true".to_string()))
            .collect()
    }

    pub fn to_canonical_json(&self) -> String {
        canonical::to_canonical_pretty(&self.to_document(self.integrity.as_deref()))
    }

    /// Digest of the canonical body with the integrity field blanked.
    pub fn computed_digest(&self) -> String {
        canonical::digest_of(&self.to_document(Some("")))
    }

    /// Sets the integrity annotation to the digest of the current body.
    pub fn seal(&mut self) {
        self.integrity = Some(self.computed_digest());
    }

    pub fn sealed(mut self) -> Self {
        self.seal();
        self
    }

    pub fn validate(&self) -> ValidationReport {
        let mut missing = Vec::new();
        if self.network_operation.as_deref().is_none_or(str::is_empty) {
            missing.push("network_operation".to_string());
        }
        if self.data_spec.is_none() {
            missing.push("data_spec".to_string());
        }
        if self.output_format.as_deref().is_none_or(str::is_empty) {
            missing.push("output_format".to_string());
        }
        if self.thresholds.is_none() {
            missing.push("thresholds".to_string());
        }
        ValidationReport::new(missing, self.integrity.as_deref(), &self.computed_digest())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{extract_profile, ActionClass};

    pub(crate) const NIF1: &str = r#"
kind: NIFD
metadata:
  name: nif1
  version: 1.0.0
  labels:
    app: anomaly-detector
    daemon.nmapek.type.Knowledge: "true"
    daemon.nmapek.type.Plan: "true"
  annotations:
    daemon.nmapek.plan.target.0: "svcA:spec.containers.resources.requests.memory:scale"
spec:
  networkOperation: federated anomaly detection with service scale out
  learningMode: online
  data:
    sourceIds: [edge-1.cpu]
    inputFormat: timeseries/f64
    samplingPeriodMs: 1000
  learningMetric: accuracy
  thresholds: {upper: 0.9, lower: 0.85}
  outputFormat: label/binary
  dependencies:
    - {name: numpy, version: ">=1.20.0"}
"#;

    const NIF2: &str = r#"
kind: NIFD
metadata:
  name: nif2
  version: 1.0.0
  labels:
    daemon.nmapek.type.Plan: "true"
  annotations:
    daemon.nmapek.plan.target.0: "svcA:spec.containers.nodeSelector:relocate"
spec:
  networkOperation: service relocation
  data: {sourceIds: [edge-1.cpu], inputFormat: timeseries/f64, samplingPeriodMs: 1000}
  learningMetric: accuracy
  thresholds: {upper: 0.9, lower: 0.85}
  outputFormat: node-id
"#;

    #[test]
    fn scale_out_nif_labels_and_target() {
        let d = parse_nifd(NIF1).unwrap();
        assert_eq!(d.classes, BTreeSet::from([NmapekClass::Knowledge, NmapekClass::Plan]));
        assert_eq!(
            d.plan_targets,
            vec![PlanTarget {
                service_id: "svcA".into(),
                target_path: "resources.requests.memory".into(),
                action_class: ActionClass::Scale,
            }]
        );
        assert_eq!(d.extra_labels.get("app").map(String::as_str), Some("anomaly-detector"));
        assert_eq!(d.learning_mode, LearningMode::Online);
    }

    #[test]
    fn relocation_nif() {
        let d = parse_nifd(NIF2).unwrap();
        assert_eq!(d.classes, BTreeSet::from([NmapekClass::Plan]));
        assert_eq!(d.plan_targets[0].target_path, "nodeSelector");
        assert_eq!(d.plan_targets[0].action_class, ActionClass::Relocate);
        let profile = extract_profile(&d);
        assert_eq!(profile.plan_targets, d.plan_targets);
    }

    #[test]
    fn plan_without_target_is_missing_field() {
        let text = NIF2.replace("    daemon.nmapek.plan.target.0: \"svcA:spec.containers.nodeSelector:relocate\"\n", "");
        assert_eq!(parse_nifd(&text), Err(DescriptorError::MissingField("plan_targets".into())));
    }

    #[test]
    fn unknown_class_rejected() {
        let text = NIF2.replace("daemon.nmapek.type.Plan", "daemon.nmapek.type.Planner");
        assert_eq!(parse_nifd(&text), Err(DescriptorError::UnknownClass("Planner".into())));
    }

    #[test]
    fn monitor_analyze_profile_has_no_targets() {
        let text = r#"{"kind":"NIFD","metadata":{"name":"mon","version":"0.1.0","labels":{
            "daemon.nmapek.type.Monitor":"true","daemon.nmapek.type.Analyze":"true"}},
            "spec":{"learningMetric":"mse","data":{"sourceIds":["s"],"inputFormat":"f","samplingPeriodMs":500}}}"#;
        let d = parse_nifd(text).unwrap();
        let p = extract_profile(&d);
        assert!(p.plan_targets.is_empty());
        assert_eq!(p.sources.len(), 1);
    }

    #[test]
    fn reversed_thresholds_for_loss_metric() {
        let text = NIF2.replace("learningMetric: accuracy", "learningMetric: mse");
        assert!(matches!(parse_nifd(&text), Err(DescriptorError::Invariant(_))));
        let text = text.replace("{upper: 0.9, lower: 0.85}", "{upper: 0.05, lower: 0.2}");
        assert!(parse_nifd(&text).is_ok());
    }

    #[test]
    fn complete_sealed_descriptor_is_valid() {
        let d = parse_nifd(NIF1).unwrap().sealed();
        let report = d.validate();
        assert!(report.valid, "{report:?}");
        assert!(report.missing_mandatory.is_empty());
    }

    #[test]
    fn unsealed_descriptor_fails_integrity() {
        let report = parse_nifd(NIF1).unwrap().validate();
        assert!(!report.integrity_ok);
        assert!(!report.valid);
    }

    #[test]
    fn output_format_removed() {
        let mut d = parse_nifd(NIF1).unwrap();
        d.output_format = None;
        d.seal();
        let report = d.validate();
        assert!(!report.valid);
        assert_eq!(report.missing_mandatory, vec!["output_format".to_string()]);
    }

    #[test]
    fn tampered_body_detected() {
        let sealed = parse_nifd(NIF1).unwrap().sealed().to_canonical_json();
        let tampered = sealed.replace("federated anomaly", "federated anomalz");
        assert_ne!(sealed, tampered);
        let d = parse_nifd(&tampered).unwrap();
        let report = d.validate();
        assert!(!report.integrity_ok);
        // independent recomputation over the mutated body
        assert_ne!(d.integrity.as_deref(), Some(d.computed_digest().as_str()));
    }

    #[test]
    fn canonical_form_is_fixpoint() {
        let d = parse_nifd(NIF1).unwrap().sealed();
        let once = d.to_canonical_json();
        let reparsed = parse_nifd(&once).unwrap();
        assert_eq!(reparsed, d);
        assert_eq!(reparsed.to_canonical_json(), once);
        assert!(reparsed.validate().valid);
    }
}
