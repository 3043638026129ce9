use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Conflict, ConflictDetails, ConflictKind, ConflictMatrix, MatrixEntry, Party, PolicyRule, Rule, Scope};
use crate::Millis;

/// Last valid configuration of a service: the policies that stay in force.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigUpdate {
    pub service_id: String,
    pub policy_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Resolution {
    pub rules: Vec<PolicyRule>,
    pub config_updates: Vec<ConfigUpdate>,
    pub fallback: bool,
    /// Conflicts no solver could handle.
    pub unresolved: Vec<Conflict>,
}

/// Earlier-deployed party, if the order is known. A NIS missing from
/// `seniority` is the one being deployed now and is therefore the junior.
fn senior<'a>(parties: &'a [Party; 2], seniority: &BTreeMap<String, u64>) -> Option<(&'a Party, &'a Party)> {
    let [a, b] = parties;
    match (seniority.get(&a.nis_id), seniority.get(&b.nis_id)) {
        (Some(x), Some(y)) if x < y => Some((a, b)),
        (Some(x), Some(y)) if y < x => Some((b, a)),
        (Some(_), None) => Some((a, b)),
        (None, Some(_)) => Some((b, a)),
        _ => None,
    }
}

fn priority(conflict: &Conflict, seniority: &BTreeMap<String, u64>, now: Millis) -> Option<PolicyRule> {
    let (w, l) = senior(&conflict.parties, seniority)?;
    Some(PolicyRule::new(
        Scope::new(&conflict.subject, [w.nif_name.clone(), l.nif_name.clone()]),
        Rule::Priority { winner: w.nif_name.clone(), loser: l.nif_name.clone() },
        now,
    ))
}

/// Picks a solver per conflict and produces the rules to store.
pub fn resolve(
    conflicts: &[Conflict],
    matrix: &ConflictMatrix,
    deployed_policies: &[PolicyRule],
    seniority: &BTreeMap<String, u64>,
    now: Millis,
) -> Resolution {
    let mut res = Resolution::default();
    let mut merges: BTreeMap<&str, BTreeMap<String, Millis>> = BTreeMap::new();
    for c in conflicts {
        let rule = match (&c.kind, &c.details) {
            (ConflictKind::TargetOverlap, _) => priority(c, seniority, now),
            (ConflictKind::SameServiceAction, ConflictDetails::Targets { actions: [xa, xb], .. }) => {
                match matrix.get(*xa, *xb) {
                    MatrixEntry::Temporal { window_ms } => Some(PolicyRule::new(
                        Scope::new(&c.subject, c.parties.iter().map(|p| p.nif_name.clone())),
                        Rule::Cooldown { after_action: *xa.min(xb), blocked_action: *xa.max(xb), window_ms },
                        now,
                    )),
                    MatrixEntry::Exclusive => priority(c, seniority, now),
                    MatrixEntry::Merge | MatrixEntry::None => continue,
                }
            }
            (ConflictKind::SourceGranularity, ConflictDetails::Periods { periods_ms }) => {
                let consumers = merges.entry(&c.subject).or_default();
                for (p, period) in c.parties.iter().zip(periods_ms) {
                    consumers.insert(p.nif_name.clone(), *period);
                }
                continue;
            }
            _ => None,
        };
        match rule {
            Some(r) => push_unique(&mut res.rules, deployed_policies, r),
            None => res.unresolved.push(c.clone()),
        }
    }
    for (source, consumers) in merges {
        let provisioned = consumers.values().copied().min().unwrap_or(1).max(1);
        let delivery = consumers.iter().map(|(n, p)| (n.clone(), p / provisioned * provisioned)).collect();
        let rule = PolicyRule::new(
            Scope::new(source, consumers.keys().cloned()),
            Rule::GranularityMerge { source_id: source.into(), provisioned_period_ms: provisioned, delivery_ms: delivery },
            now,
        );
        push_unique(&mut res.rules, deployed_policies, rule);
    }
    if !res.unresolved.is_empty() {
        res.fallback = true;
        let mut services: Vec<&str> = res.unresolved.iter().map(|c| c.subject.as_str()).collect();
        services.sort();
        services.dedup();
        res.config_updates = services
            .into_iter()
            .map(|s| ConfigUpdate {
                service_id: s.into(),
                policy_ids: deployed_policies
                    .iter()
                    .filter(|p| p.active && p.scope.service_id == s)
                    .map(|p| p.policy_id.clone())
                    .collect(),
            })
            .collect();
    }
    res
}

fn push_unique(out: &mut Vec<PolicyRule>, deployed: &[PolicyRule], rule: PolicyRule) {
    let same = |p: &PolicyRule| p.scope == rule.scope && p.rule == rule.rule;
    if !deployed.iter().any(|p| p.active && same(p)) && !out.iter().any(same) {
        out.push(rule);
    }
}
