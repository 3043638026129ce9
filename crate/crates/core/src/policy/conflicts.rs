use std::collections::{BTreeMap, BTreeSet};

use super::{Conflict, ConflictDetails, ConflictKind, ConflictMatrix, MatrixEntry, Party};
use crate::descriptors::{NmapekClass, NmapekProfile};

/// Conflicts between two NIFs. A NIF never conflicts with itself, so
/// profiles with the same name (a shared instance) yield nothing.
pub fn check_pair(
    pa: &Party,
    a: &NmapekProfile,
    pb: &Party,
    b: &NmapekProfile,
    matrix: &ConflictMatrix,
) -> Vec<Conflict> {
    let mut out = BTreeSet::new();
    if a.nif_name == b.nif_name {
        return Vec::new();
    }
    if a.has_role(NmapekClass::Plan) && b.has_role(NmapekClass::Plan) {
        for ta in &a.plan_targets {
            for tb in &b.plan_targets {
                if ta.service_id != tb.service_id {
                    continue;
                }
                let details = ConflictDetails::Targets {
                    paths: [ta.target_path.clone(), tb.target_path.clone()],
                    actions: [ta.action_class, tb.action_class],
                };
                let kind = if ta.target_path == tb.target_path {
                    ConflictKind::TargetOverlap
                } else if matrix.get(ta.action_class, tb.action_class) != MatrixEntry::None {
                    ConflictKind::SameServiceAction
                } else {
                    continue;
                };
                out.insert(Conflict::new(kind, pa.clone(), pb.clone(), &ta.service_id, details));
            }
        }
    }
    for sa in &a.sources {
        for sb in &b.sources {
            if sa.source_id == sb.source_id && sa.sampling_period_ms != sb.sampling_period_ms {
                let details = ConflictDetails::Periods { periods_ms: [sa.sampling_period_ms, sb.sampling_period_ms] };
                out.insert(Conflict::new(
                    ConflictKind::SourceGranularity,
                    pa.clone(),
                    pb.clone(),
                    &sa.source_id,
                    details,
                ));
            }
        }
    }
    out.into_iter().collect()
}

/// Conflicts between the NIFs of a new NIS and those already deployed.
/// Output is sorted by subject, then parties.
pub fn detect_conflicts(
    new_nis: &str,
    new: &[NmapekProfile],
    deployed: &[(String, NmapekProfile)],
    matrix: &ConflictMatrix,
) -> Vec<Conflict> {
    let mut out = BTreeSet::new();
    for p in new {
        let pa = Party::new(new_nis, &p.nif_name);
        for (nis, d) in deployed {
            let pb = Party::new(nis, &d.nif_name);
            out.extend(check_pair(&pa, p, &pb, d, matrix));
        }
    }
    out.into_iter().collect()
}

/// Conflicts among every pair of the given NIFs.
pub fn detect_all(profiles: &[(String, NmapekProfile)], matrix: &ConflictMatrix) -> Vec<Conflict> {
    let mut out = BTreeSet::new();
    for (i, (na, a)) in profiles.iter().enumerate() {
        for (nb, b) in &profiles[i + 1..] {
            out.extend(check_pair(&Party::new(na, &a.nif_name), a, &Party::new(nb, &b.nif_name), b, matrix));
        }
    }
    out.into_iter().collect()
}

/// Cheap pre-check: false only when no profile can act and no source is
/// shared, in which case no conflict is possible.
pub fn initial_assessment(profiles: &[NmapekProfile]) -> bool {
    if profiles.iter().any(|p| p.has_role(NmapekClass::Plan) || p.has_role(NmapekClass::Execute)) {
        return true;
    }
    let mut readers: BTreeMap<&str, usize> = BTreeMap::new();
    for p in profiles {
        let ids: BTreeSet<&str> = p.sources.iter().map(|s| s.source_id.as_str()).collect();
        for id in ids {
            *readers.entry(id).or_default() += 1;
        }
    }
    readers.values().any(|&n| n > 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{ActionClass, PlanTarget, SourceUse};

    fn planner(name: &str, svc: &str, path: &str, action: ActionClass) -> NmapekProfile {
        NmapekProfile {
            nif_name: name.into(),
            classes: [NmapekClass::Plan].into(),
            plan_targets: vec![PlanTarget { service_id: svc.into(), target_path: path.into(), action_class: action }],
            sources: vec![],
        }
    }

    fn reader(name: &str, src: &str, period: u64) -> NmapekProfile {
        NmapekProfile {
            nif_name: name.into(),
            classes: [NmapekClass::Monitor].into(),
            plan_targets: vec![],
            sources: vec![SourceUse { source_id: src.into(), sampling_period_ms: period }],
        }
    }

    #[test]
    fn scale_vs_relocate_on_same_service() {
        let m = ConflictMatrix::default();
        let nif1 = planner("NIF1", "svcA", "resources.requests.memory", ActionClass::Scale);
        let nif2 = planner("NIF2", "svcA", "nodeSelector", ActionClass::Relocate);
        let c = detect_conflicts("nis-b", std::slice::from_ref(&nif2), &[("nis-a".into(), nif1.clone())], &m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, ConflictKind::SameServiceAction);
        assert_eq!(c[0].subject, "svcA");
        assert_eq!(c, detect_conflicts("nis-a", &[nif1], &[("nis-b".into(), nif2)], &m));
    }

    #[test]
    fn disjoint_services_do_not_conflict() {
        let m = ConflictMatrix::default();
        let nif1 = planner("NIF1", "svcA", "x", ActionClass::Scale);
        let nif2 = planner("NIF2", "svcB", "y", ActionClass::Relocate);
        assert!(detect_conflicts("b", &[nif2], &[("a".into(), nif1)], &m).is_empty());
    }

    #[test]
    fn same_path_is_target_overlap() {
        let m = ConflictMatrix::all(MatrixEntry::None);
        let nif1 = planner("NIF1", "svcA", "replicas", ActionClass::Scale);
        let nif2 = planner("NIF2", "svcA", "replicas", ActionClass::Scale);
        let c = detect_all(&[("n".into(), nif1), ("n".into(), nif2)], &m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, ConflictKind::TargetOverlap);
    }

    #[test]
    fn different_granularity_on_one_source() {
        let m = ConflictMatrix::default();
        let c = detect_all(&[("n".into(), reader("A", "S", 1000)), ("n".into(), reader("B", "S", 10_000))], &m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].kind, ConflictKind::SourceGranularity);
        assert!(detect_all(&[("n".into(), reader("A", "S", 1000)), ("n".into(), reader("B", "S", 1000))], &m).is_empty());
    }

    #[test]
    fn assessment() {
        assert!(!initial_assessment(&[reader("A", "S", 1), reader("B", "T", 1)]));
        assert!(initial_assessment(&[planner("A", "s", "p", ActionClass::Scale)]));
        assert!(initial_assessment(&[reader("A", "S", 1), reader("B", "S", 1)]));
    }
}
