mod common;

use proptest::prelude::*;
use serde_json::Value;
use sha2::{Digest, Sha256};

use ni_stratum::descriptors::{
    extract_profile, parse_descriptor, parse_nifd, parse_nisd, validate_descriptor, ActionClass, Descriptor,
    DescriptorError, NmapekClass, INTEGRITY_ANNOTATION,
};

const SCALER: &str = r#"
kind: NIFD
metadata:
  name: NIF1
  version: 1.0.0
  labels:
    daemon.nmapek.type.Knowledge: "true"
    daemon.nmapek.type.Plan: "true"
  annotations:
    daemon.nmapek.plan.target.0: "svcA:spec.containers.resources.requests.memory:scale"
spec:
  networkOperation: anomaly detection with scale out
  data: {sourceIds: [edge-1.cpu], inputFormat: timeseries/f64, samplingPeriodMs: 1000}
  learningMetric: accuracy
  thresholds: {upper: 0.9, lower: 0.85}
  outputFormat: label/binary
"#;

/// Digest recomputed from the canonical document: blank the integrity
/// annotation, re-encode with sorted keys, hash.
fn oracle_digest(canonical: &str) -> String {
    let mut doc: Value = serde_yaml::from_str(canonical).unwrap();
    doc["metadata"]["annotations"][INTEGRITY_ANNOTATION] = Value::String(String::new());
    hex::encode(Sha256::digest(serde_json::to_string(&doc).unwrap().as_bytes()))
}

#[test]
fn scaler_manifest_yields_classes_and_target() {
    let d = parse_nifd(SCALER).unwrap();
    assert_eq!(d.classes.iter().copied().collect::<Vec<_>>(), vec![NmapekClass::Plan, NmapekClass::Knowledge]);
    assert_eq!(d.plan_targets.len(), 1);
    let t = &d.plan_targets[0];
    assert_eq!((t.service_id.as_str(), t.target_path.as_str()), ("svcA", "resources.requests.memory"));
    assert_eq!(t.action_class, ActionClass::Scale);
}

#[test]
fn relocator_profile() {
    let text = std::fs::read_to_string(common::scenarios_dir().join("descriptors/relocator.yaml")).unwrap();
    let Descriptor::Nif(d) = parse_descriptor(&text).unwrap() else { panic!("expected NIFD") };
    let p = extract_profile(&d);
    assert_eq!(p.classes.len(), 1);
    assert!(p.has_role(NmapekClass::Plan));
    assert_eq!(p.plan_targets[0].target_path, "nodeSelector");
    assert_eq!(p.plan_targets[0].action_class, ActionClass::Relocate);
}

#[test]
fn plan_without_target_is_rejected() {
    let text = SCALER.replace("    daemon.nmapek.plan.target.0: \"svcA:spec.containers.resources.requests.memory:scale\"\n", "");
    assert!(matches!(parse_nifd(&text), Err(DescriptorError::MissingField(_))));
}

#[test]
fn unknown_class_label_is_rejected() {
    let text = SCALER.replace("daemon.nmapek.type.Knowledge", "daemon.nmapek.type.Oracle");
    assert!(matches!(parse_nifd(&text), Err(DescriptorError::UnknownClass(c)) if c == "Oracle"));
}

#[test]
fn source_and_sink_share_roles_with_sensor_and_effector() {
    assert_eq!(NmapekClass::Source.role(), NmapekClass::Sensor.role());
    assert_eq!(NmapekClass::Sink.role(), NmapekClass::Effector.role());
    assert_ne!(NmapekClass::Sensor.role(), NmapekClass::Effector.role());
}

#[test]
fn monitor_analyze_profile_has_no_targets() {
    let text = SCALER
        .replace("daemon.nmapek.type.Knowledge", "daemon.nmapek.type.Monitor")
        .replace("daemon.nmapek.type.Plan", "daemon.nmapek.type.Analyze")
        .replace("    daemon.nmapek.plan.target.0: \"svcA:spec.containers.resources.requests.memory:scale\"\n", "");
    let p = extract_profile(&parse_nifd(&text).unwrap());
    assert!(p.plan_targets.is_empty());
    assert!(p.has_role(NmapekClass::Monitor));
}

#[test]
fn nisd_with_two_members_and_one_link() {
    let text = std::fs::read_to_string(common::scenarios_dir().join("descriptors/edge-autoscale.yaml")).unwrap();
    let d = parse_nisd(&text).unwrap();
    assert_eq!(d.nif_refs.len(), 2);
    assert_eq!(d.links.len(), 1);
    assert_eq!(d.links[0].bandwidth_mbps, 10);
    assert!(d.validate().valid);
}

#[test]
fn singleton_nisd_is_valid() {
    let text = common::chain_nisd("solo", &["NIF1"]);
    let Descriptor::Nis(d) = parse_descriptor(&text).unwrap() else { panic!("expected NISD") };
    assert!(d.links.is_empty());
    assert!(d.validate().valid);
}

#[test]
fn dangling_link_is_rejected() {
    let text = "kind: NISD\nmetadata: {name: s, version: 1.0.0}\nspec:\n  nifs: [{name: NIF1}, {name: NIF2}]\n  links: [{from: NIF1, to: NIF3}]\n";
    assert!(matches!(parse_nisd(text), Err(DescriptorError::DanglingLink(n)) if n == "NIF3"));
}

#[test]
fn bundled_descriptors_are_sealed_and_valid() {
    let dir = common::scenarios_dir().join("descriptors");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let d = parse_descriptor(&text).unwrap();
        let report = validate_descriptor(&d);
        assert!(report.valid, "{}: {:?}", d.name(), report.messages);
        assert_eq!(d.integrity(), Some(oracle_digest(&d.to_canonical_json()).as_str()));
        seen += 1;
    }
    assert!(seen >= 4);
}

#[test]
fn missing_output_format_reported() {
    let text = common::seal(&SCALER.replace("  outputFormat: label/binary\n", ""));
    let r = validate_descriptor(&parse_descriptor(&text).unwrap());
    assert!(!r.valid);
    assert_eq!(r.missing_mandatory, vec!["output_format".to_string()]);
    assert!(r.integrity_ok);
}

#[test]
fn one_byte_change_breaks_integrity() {
    let sealed = common::seal(SCALER);
    let tampered = sealed.replace("anomaly detection with scale out", "anomaly detection with scale ouT");
    let d = parse_descriptor(&tampered).unwrap();
    let r = validate_descriptor(&d);
    assert!(!r.integrity_ok);
    assert!(!r.valid);
    assert_ne!(d.integrity(), Some(oracle_digest(&tampered).as_str()));
}

#[test]
fn loss_metric_reverses_threshold_order() {
    let text = SCALER.replace("learningMetric: accuracy", "learningMetric: mse");
    assert!(parse_nifd(&text).is_err());
    let text = text.replace("{upper: 0.9, lower: 0.85}", "{upper: 0.1, lower: 0.2}");
    assert!(parse_nifd(&text).is_ok());
}

proptest! {
    #[test]
    fn canonical_form_round_trips(
        name in "[a-z][a-z0-9-]{0,12}",
        major in 0u64..5, minor in 0u64..20,
        period in 1u64..60_000,
        cpu in 1u64..4000,
        upper in 0.5f64..1.0,
        gap in 0.01f64..0.4,
        action in prop::sample::select(vec!["scale", "relocate", "reconfigure"]),
        theta in prop::option::of(0.0f64..1.0),
    ) {
        let params = theta.map(|t| format!("  params: {{anomalyThreshold: {t}}}\n")).unwrap_or_default();
        let text = format!(
            "kind: NIFD\nmetadata:\n  name: {name}\n  version: {major}.{minor}.0\n  labels: {{daemon.nmapek.type.Plan: \"true\", daemon.nmapek.type.Monitor: \"true\"}}\n  annotations: {{daemon.nmapek.plan.target.0: \"svcA:spec.containers.x:{action}\"}}\nspec:\n  networkOperation: op\n  data: {{sourceIds: [s], inputFormat: f, samplingPeriodMs: {period}}}\n  learningMetric: accuracy\n  thresholds: {{upper: {upper}, lower: {}}}\n  outputFormat: o\n  resources: {{cpuMillicores: {cpu}, memMib: 64}}\n{params}",
            upper - gap
        );
        let d = parse_descriptor(&text).unwrap().sealed();
        let json = d.to_canonical_json();
        let back = parse_descriptor(&json).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.to_canonical_json(), json.clone());
        prop_assert!(validate_descriptor(&back).valid);
        prop_assert_eq!(d.integrity().unwrap(), oracle_digest(&json));
    }
}
