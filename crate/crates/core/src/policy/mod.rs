//! Conflict detection and resolution, the policy database, the runtime action
//! gate and knowledge-sharing policies.

mod conflicts;
mod gate;
mod knowledge;
mod resolve;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptors::ActionClass;
use crate::Millis;

pub use conflicts::{check_pair, detect_all, detect_conflicts, initial_assessment};
pub use gate::{ActionGate, ActionRequest, ExecutedAction};
pub use knowledge::{
    build_shared_knowledge_policy, translate_knowledge, CmpOp, DroppedRule, KnowledgeOutcome, KnowledgeRule,
    KnowledgeRules,
};
pub use resolve::{resolve, ConfigUpdate, Resolution};
pub use store::PolicyStore;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("an identical active policy already exists: {0}")]
    DuplicatePolicy(String),
    #[error("unknown policy {0}")]
    UnknownPolicy(String),
    #[error("unknown NIF {0}")]
    UnknownNif(String),
    #[error("unknown model {0}")]
    UnknownModel(String),
    #[error("rule does not parse: {0}")]
    Grammar(String),
    #[error("policy database: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy database is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConflictKind {
    TargetOverlap,
    SameServiceAction,
    SourceGranularity,
}

/// One side of a conflict: a NIF inside a NIS (instance).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Party {
    pub nis_id: String,
    pub nif_name: String,
}

impl Party {
    pub fn new(nis_id: &str, nif_name: &str) -> Self {
        Party { nis_id: nis_id.into(), nif_name: nif_name.into() }
    }
}

/// Per-party facts behind a conflict, listed in party order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConflictDetails {
    Targets { paths: [String; 2], actions: [ActionClass; 2] },
    Periods { periods_ms: [Millis; 2] },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Conflict {
    pub kind: ConflictKind,
    pub parties: [Party; 2],
    pub subject: String,
    pub details: ConflictDetails,
}

impl Conflict {
    /// Builds a conflict with parties in canonical order, swapping the
    /// per-party details along with them.
    pub fn new(kind: ConflictKind, a: Party, b: Party, subject: &str, details: ConflictDetails) -> Self {
        if a <= b {
            return Conflict { kind, parties: [a, b], subject: subject.into(), details };
        }
        let details = match details {
            ConflictDetails::Targets { paths: [pa, pb], actions: [xa, xb] } => {
                ConflictDetails::Targets { paths: [pb, pa], actions: [xb, xa] }
            }
            ConflictDetails::Periods { periods_ms: [pa, pb] } => ConflictDetails::Periods { periods_ms: [pb, pa] },
        };
        Conflict { kind, parties: [b, a], subject: subject.into(), details }
    }

    fn sort_key(&self) -> (&str, &[Party; 2], ConflictKind, &ConflictDetails) {
        (&self.subject, &self.parties, self.kind, &self.details)
    }
}

impl PartialOrd for Conflict {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Conflict {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixEntry {
    None,
    Temporal { window_ms: Millis },
    Exclusive,
    Merge,
}

/// Symmetric table from pairs of action classes to a resolution kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictMatrix {
    entries: BTreeMap<(ActionClass, ActionClass), MatrixEntry>,
}

fn ordered(a: ActionClass, b: ActionClass) -> (ActionClass, ActionClass) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Default for ConflictMatrix {
    fn default() -> Self {
        use ActionClass::*;
        let mut m = ConflictMatrix::all(MatrixEntry::None);
        m.set(Scale, Relocate, MatrixEntry::Temporal { window_ms: 30_000 });
        m.set(Scale, Scale, MatrixEntry::Exclusive);
        m.set(Relocate, Relocate, MatrixEntry::Exclusive);
        for other in ActionClass::ALL {
            m.set(Reconfigure, other, MatrixEntry::Temporal { window_ms: 10_000 });
        }
        m
    }
}

impl ConflictMatrix {
    /// Matrix with the same entry for every pair.
    pub fn all(entry: MatrixEntry) -> Self {
        let mut entries = BTreeMap::new();
        for a in ActionClass::ALL {
            for b in ActionClass::ALL {
                entries.insert(ordered(a, b), entry);
            }
        }
        ConflictMatrix { entries }
    }

    pub fn get(&self, a: ActionClass, b: ActionClass) -> MatrixEntry {
        self.entries.get(&ordered(a, b)).copied().unwrap_or(MatrixEntry::None)
    }

    pub fn set(&mut self, a: ActionClass, b: ActionClass, entry: MatrixEntry) {
        if let MatrixEntry::Temporal { window_ms: 0 } = entry {
            return;
        }
        self.entries.insert(ordered(a, b), entry);
    }

    /// Cooldown window between the two classes, if any.
    pub fn window(&self, a: ActionClass, b: ActionClass) -> Option<Millis> {
        match self.get(a, b) {
            MatrixEntry::Temporal { window_ms } => Some(window_ms),
            _ => None,
        }
    }
}

/// Where a rule applies: a service (or source) and the NIFs involved.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Scope {
    pub service_id: String,
    pub nifs: Vec<String>,
}

impl Scope {
    pub fn new(service_id: &str, nifs: impl IntoIterator<Item = String>) -> Self {
        let mut nifs: Vec<String> = nifs.into_iter().collect();
        nifs.sort();
        nifs.dedup();
        Scope { service_id: service_id.into(), nifs }
    }

    pub fn covers(&self, nif: &str) -> bool {
        self.nifs.iter().any(|n| n == nif)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Rule {
    Cooldown { after_action: ActionClass, blocked_action: ActionClass, window_ms: Millis },
    Priority { winner: String, loser: String },
    GranularityMerge { source_id: String, provisioned_period_ms: Millis, delivery_ms: BTreeMap<String, Millis> },
    Knowledge { rule: String },
}

impl Rule {
    pub fn type_name(&self) -> &'static str {
        match self {
            Rule::Cooldown { .. } => "Cooldown",
            Rule::Priority { .. } => "Priority",
            Rule::GranularityMerge { .. } => "GranularityMerge",
            Rule::Knowledge { .. } => "Knowledge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicyRule {
    /// Empty until the rule is stored.
    pub policy_id: String,
    pub scope: Scope,
    pub rule: Rule,
    pub active: bool,
    pub created_at: Millis,
}

impl PolicyRule {
    pub fn new(scope: Scope, rule: Rule, created_at: Millis) -> Self {
        PolicyRule { policy_id: String::new(), scope, rule, active: true, created_at }
    }

    /// Whether the rule constrains `action` on its service.
    pub fn governs(&self, service_id: &str, action: ActionClass) -> bool {
        if self.scope.service_id != service_id {
            return false;
        }
        match &self.rule {
            Rule::Cooldown { after_action, blocked_action, .. } => *after_action == action || *blocked_action == action,
            Rule::Priority { .. } => true,
            Rule::GranularityMerge { .. } | Rule::Knowledge { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict")]
pub enum Verdict {
    Allow,
    Deny,
    Delay { until: Millis },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateDecision {
    #[serde(flatten)]
    pub verdict: Verdict,
    pub rule_id: Option<String>,
    pub reason: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_is_symmetric_and_total() {
        let m = ConflictMatrix::default();
        for a in ActionClass::ALL {
            for b in ActionClass::ALL {
                assert_eq!(m.get(a, b), m.get(b, a));
            }
        }
        assert_eq!(m.window(ActionClass::Relocate, ActionClass::Scale), Some(30_000));
        assert_eq!(m.get(ActionClass::Scale, ActionClass::Scale), MatrixEntry::Exclusive);
        assert_eq!(m.window(ActionClass::Scale, ActionClass::Reconfigure), Some(10_000));
    }

    #[test]
    fn conflict_parties_are_unordered() {
        let d = ConflictDetails::Periods { periods_ms: [1000, 10_000] };
        let a = Conflict::new(ConflictKind::SourceGranularity, Party::new("x", "B"), Party::new("x", "A"), "s", d);
        let b = Conflict::new(
            ConflictKind::SourceGranularity,
            Party::new("x", "A"),
            Party::new("x", "B"),
            "s",
            ConflictDetails::Periods { periods_ms: [10_000, 1000] },
        );
        assert_eq!(a, b);
    }
}
