mod common;

use std::collections::BTreeMap;

use semver::Version;

use ni_stratum::catalog::{Catalog, ModelDraft};
use ni_stratum::descriptors::{
    parse_nisd, ActionClass, LearningMetric, NmapekClass, NmapekProfile, PlanTarget, Platform, SourceUse,
};
use ni_stratum::pipelines::{encode_artifact, Curve, ModelArtifact};
use ni_stratum::policy::{
    build_shared_knowledge_policy, detect_all, detect_conflicts, initial_assessment, resolve, ActionGate,
    ActionRequest, ConflictKind, ConflictMatrix, KnowledgeRules, PolicyError, PolicyRule, PolicyStore, Rule, Scope,
    Verdict, translate_knowledge,
};

fn planner(name: &str, service: &str, path: &str, action: ActionClass) -> NmapekProfile {
    NmapekProfile {
        nif_name: name.into(),
        classes: [NmapekClass::Plan].into(),
        plan_targets: vec![PlanTarget { service_id: service.into(), target_path: path.into(), action_class: action }],
        sources: vec![],
    }
}

fn reader(name: &str, source: &str, period: u64) -> NmapekProfile {
    NmapekProfile {
        nif_name: name.into(),
        classes: [NmapekClass::Monitor].into(),
        plan_targets: vec![],
        sources: vec![SourceUse { source_id: source.into(), sampling_period_ms: period }],
    }
}

fn nif1() -> NmapekProfile {
    let mut p = planner("NIF1", "svcA", "resources.requests.memory", ActionClass::Scale);
    p.classes.insert(NmapekClass::Knowledge);
    p
}

fn nif2() -> NmapekProfile {
    planner("NIF2", "svcA", "nodeSelector", ActionClass::Relocate)
}

fn cooldown_store() -> (PolicyStore, String) {
    let mut store = PolicyStore::new();
    let m = ConflictMatrix::default();
    let conflicts = detect_conflicts("nis-0002", &[nif2()], &[("nis-0001".into(), nif1())], &m);
    let res = resolve(&conflicts, &m, &[], &BTreeMap::new(), 0);
    let id = store.store_policy(res.rules[0].clone()).unwrap();
    (store, id)
}

#[test]
fn scale_and_relocate_on_one_service_conflict() {
    let m = ConflictMatrix::default();
    let c = detect_conflicts("nis-0002", &[nif2()], &[("nis-0001".into(), nif1())], &m);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].kind, ConflictKind::SameServiceAction);
    assert_eq!(c[0].subject, "svcA");
}

#[test]
fn disjoint_services_do_not_conflict() {
    let m = ConflictMatrix::default();
    let other = planner("NIF2", "svcB", "nodeSelector", ActionClass::Relocate);
    assert!(detect_conflicts("n2", &[other], &[("n1".into(), nif1())], &m).is_empty());
}

#[test]
fn differing_granularity_on_a_source() {
    let m = ConflictMatrix::default();
    let c = detect_all(&[("n1".into(), reader("A", "S", 1000)), ("n2".into(), reader("B", "S", 10_000))], &m);
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].kind, ConflictKind::SourceGranularity);
}

#[test]
fn initial_assessment_cases() {
    assert!(!initial_assessment(&[reader("A", "S", 1000), reader("B", "T", 1000)]));
    assert!(initial_assessment(&[nif2()]));
    assert!(initial_assessment(&[reader("A", "S", 1000), reader("B", "S", 1000)]));
}

/// Enumerates small profile sets: whenever the detector finds anything the
/// cheap pre-check must have said "possible".
#[test]
fn initial_assessment_is_sound() {
    let m = ConflictMatrix::default();
    let pool = [reader("A", "S", 1000),
        reader("B", "S", 5000),
        reader("C", "T", 1000),
        planner("D", "svcA", "x", ActionClass::Scale),
        planner("E", "svcA", "y", ActionClass::Relocate),
        planner("F", "svcB", "x", ActionClass::Reconfigure)];
    for mask in 1u32..(1 << pool.len()) {
        let set: Vec<(String, NmapekProfile)> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(i, p)| (format!("n{i}"), p.clone()))
            .collect();
        let profiles: Vec<NmapekProfile> = set.iter().map(|(_, p)| p.clone()).collect();
        if !detect_all(&set, &m).is_empty() {
            assert!(initial_assessment(&profiles), "mask {mask:b}");
        }
    }
}

#[test]
fn temporal_conflict_resolves_to_cooldown() {
    let (store, id) = cooldown_store();
    let rule = store.get(&id).unwrap();
    assert_eq!(
        rule.rule,
        Rule::Cooldown { after_action: ActionClass::Scale, blocked_action: ActionClass::Relocate, window_ms: 30_000 }
    );
    assert_eq!(rule.scope.nifs, vec!["NIF1".to_string(), "NIF2".to_string()]);
}

#[test]
fn granularity_resolves_to_merge() {
    let m = ConflictMatrix::default();
    let c = detect_all(&[("n1".into(), reader("A", "S", 1000)), ("n2".into(), reader("B", "S", 10_000))], &m);
    let res = resolve(&c, &m, &[], &BTreeMap::new(), 0);
    assert_eq!(res.rules.len(), 1);
    let Rule::GranularityMerge { provisioned_period_ms, delivery_ms, .. } = &res.rules[0].rule else {
        panic!("expected merge")
    };
    assert_eq!(*provisioned_period_ms, 1000);
    assert_eq!(delivery_ms["A"], 1000);
    assert_eq!(delivery_ms["B"] / provisioned_period_ms, 10);
}

#[test]
fn nothing_to_resolve() {
    let res = resolve(&[], &ConflictMatrix::default(), &[], &BTreeMap::new(), 0);
    assert!(res.rules.is_empty());
    assert!(!res.fallback);
}

#[test]
fn store_lookup_and_duplicates() {
    let (mut store, id) = cooldown_store();
    let found = store.lookup_policies("svcA", ActionClass::Relocate);
    assert_eq!(found.iter().map(|r| r.policy_id.as_str()).collect::<Vec<_>>(), vec![id.as_str()]);
    assert!(store.lookup_policies("svcB", ActionClass::Relocate).is_empty());
    let again = store.get(&id).unwrap().clone();
    assert!(matches!(store.store_policy(again), Err(PolicyError::DuplicatePolicy(_))));
}

#[test]
fn gate_delays_relocation_inside_window() {
    let (store, id) = cooldown_store();
    let mut gate = ActionGate::new();
    gate.register_nif("NIF1");
    gate.register_nif("NIF2");
    let scale = ActionRequest { nif: "NIF1".into(), service_id: "svcA".into(), action_class: ActionClass::Scale };
    let relocate = ActionRequest { nif: "NIF2".into(), service_id: "svcA".into(), action_class: ActionClass::Relocate };
    assert_eq!(gate.gate_action(&scale, 100_000, &store).unwrap().verdict, Verdict::Allow);
    let d = gate.gate_action(&relocate, 110_000, &store).unwrap();
    assert_eq!(d.verdict, Verdict::Delay { until: 130_000 });
    assert_eq!(d.rule_id.as_deref(), Some(id.as_str()));
    assert_eq!(gate.gate_action(&relocate, 131_000, &store).unwrap().verdict, Verdict::Allow);
    let elsewhere = ActionRequest { service_id: "svcB".into(), ..relocate };
    assert_eq!(gate.gate_action(&elsewhere, 131_001, &store).unwrap().verdict, Verdict::Allow);
}

#[test]
fn gate_rejects_unregistered_nif() {
    let (store, _) = cooldown_store();
    let mut gate = ActionGate::new();
    let req = ActionRequest { nif: "ghost".into(), service_id: "svcA".into(), action_class: ActionClass::Scale };
    assert!(matches!(gate.gate_action(&req, 0, &store), Err(PolicyError::UnknownNif(_))));
}

fn catalog_with_theta(theta: f64) -> (Catalog, String) {
    let mut catalog = Catalog::in_memory();
    let artifact = ModelArtifact {
        nif_name: "NIF1".into(),
        version: Version::new(1, 0, 0),
        metric: LearningMetric::Accuracy,
        seed: 1,
        curve: Curve { s0: 0.5, smax: 0.95, tau: 10.0 },
        epochs: 20,
        final_score: 0.91,
        params: BTreeMap::from([("anomalyThreshold".to_string(), theta)]),
    };
    let draft = ModelDraft {
        nif_name: "NIF1".into(),
        version: Version::new(1, 0, 0),
        metric: LearningMetric::Accuracy,
        test_score: 0.91,
        platform: Platform::Cpu,
        input_format: "timeseries/f64".into(),
        dependencies: vec![],
        aux_scores: BTreeMap::new(),
        created_at: 0,
    };
    let id = catalog.register_model(draft, &encode_artifact(&artifact)).unwrap();
    (catalog, id)
}

#[test]
fn knowledge_rule_reads_theta_from_artifact() {
    let (catalog, id) = catalog_with_theta(0.8);
    let rules = translate_knowledge(&id, &catalog).unwrap();
    assert_eq!(rules.rules, vec!["cpu_load > 0.8 -> flag(anomaly)".to_string()]);
    assert_eq!(translate_knowledge(&id, &catalog).unwrap(), rules);
    assert!(matches!(translate_knowledge("nope", &catalog), Err(PolicyError::UnknownModel(_))));
}

#[test]
fn shared_knowledge_attaches_to_nisd() {
    let nisd = parse_nisd(&common::chain_nisd("pair", &["NIF1", "NIF2"])).unwrap();
    let m = ConflictMatrix::default();
    let rules = KnowledgeRules::new("NIF1", vec!["cpu_load > 0.8 -> flag(anomaly)".into()]).unwrap();
    let out = build_shared_knowledge_policy(&nisd, &rules, &[], &[], &m, 0);
    assert_eq!(out.nisd.policies.len(), nisd.policies.len() + 1);
    assert_eq!(out.rules.len(), 1);
    assert!(out.nisd.validate().valid);

    let empty = KnowledgeRules::new("NIF1", vec![]).unwrap();
    assert_eq!(build_shared_knowledge_policy(&nisd, &empty, &[], &[], &m, 0).nisd, nisd);
}

#[test]
fn contradicting_knowledge_rule_is_dropped() {
    let nisd = parse_nisd(&common::chain_nisd("pair", &["NIF1", "NIF2"])).unwrap();
    let m = ConflictMatrix::default();
    let mut priority = PolicyRule::new(
        Scope::new("svcA", ["OTHER".to_string(), "NIF2".to_string()]),
        Rule::Priority { winner: "OTHER".into(), loser: "NIF2".into() },
        0,
    );
    priority.policy_id = "pol-0001".into();
    let rules = KnowledgeRules::new("NIF1", vec!["cpu_load > 0.9 -> scale(svcA)".into()]).unwrap();
    let out = build_shared_knowledge_policy(&nisd, &rules, &[priority], &[], &m, 0);
    assert!(out.rules.is_empty());
    assert_eq!(out.dropped.len(), 1);
    assert_eq!(out.nisd, nisd);
}
