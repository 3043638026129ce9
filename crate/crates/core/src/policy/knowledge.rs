use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{detect_conflicts, Conflict, ConflictMatrix, PolicyError, PolicyRule, Rule, Scope};
use crate::catalog::Catalog;
use crate::descriptors::{ActionClass, NisDescriptor, NmapekClass, NmapekProfile, PlanTarget};
use crate::pipelines::decode_artifact;
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
}

impl CmpOp {
    const TOKENS: [(&'static str, CmpOp); 5] =
        [("<=", CmpOp::Le), (">=", CmpOp::Ge), ("==", CmpOp::Eq), ("<", CmpOp::Lt), (">", CmpOp::Gt)];

    pub fn as_str(self) -> &'static str {
        Self::TOKENS.iter().find(|(_, op)| *op == self).map(|(s, _)| *s).unwrap_or("?")
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

/// `<metric> <op> <const> -> <verb>(<arg>)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRule {
    pub metric: String,
    pub op: CmpOp,
    pub constant: f64,
    pub verb: String,
    pub arg: String,
}

impl KnowledgeRule {
    /// The configuration action the rule asserts, if its verb is one.
    pub fn action(&self) -> Option<ActionClass> {
        self.verb.parse().ok()
    }
}

impl fmt::Display for KnowledgeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} -> {}({})", self.metric, self.op.as_str(), self.constant, self.verb, self.arg)
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

impl FromStr for KnowledgeRule {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PolicyError::Grammar(s.to_string());
        let (cond, assertion) = s.split_once("->").ok_or_else(bad)?;
        let parts: Vec<&str> = cond.split_whitespace().collect();
        let [metric, op, constant] = parts.as_slice() else {
            return Err(bad());
        };
        let op = CmpOp::TOKENS.iter().find(|(t, _)| t == op).map(|(_, o)| *o).ok_or_else(bad)?;
        let constant: f64 = constant.parse().map_err(|_| bad())?;
        let assertion = assertion.trim();
        let (verb, rest) = assertion.split_once('(').ok_or_else(bad)?;
        let arg = rest.strip_suffix(')').ok_or_else(bad)?;
        if !is_ident(metric) || !is_ident(verb) || !is_ident(arg) || !constant.is_finite() {
            return Err(bad());
        }
        Ok(KnowledgeRule { metric: metric.to_string(), op, constant, verb: verb.into(), arg: arg.into() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeRules {
    pub source_model_ref: String,
    pub rules: Vec<String>,
}

impl KnowledgeRules {
    /// Checks every rule against the grammar.
    pub fn new(source_model_ref: &str, rules: Vec<String>) -> Result<Self, PolicyError> {
        for r in &rules {
            r.parse::<KnowledgeRule>()?;
        }
        Ok(KnowledgeRules { source_model_ref: source_model_ref.into(), rules })
    }

    pub fn parsed(&self) -> Vec<KnowledgeRule> {
        self.rules.iter().filter_map(|r| r.parse().ok()).collect()
    }
}

/// Extracts threshold rules from a model artifact's stored parameters.
pub fn translate_knowledge(model_ref: &str, catalog: &Catalog) -> Result<KnowledgeRules, PolicyError> {
    let blob = catalog.blob(model_ref).map_err(|_| PolicyError::UnknownModel(model_ref.into()))?;
    let artifact = decode_artifact(blob).map_err(|e| PolicyError::Corrupt(e.to_string()))?;
    let rule = match artifact.theta() {
        Some(theta) => KnowledgeRule {
            metric: "cpu_load".into(),
            op: CmpOp::Gt,
            constant: theta,
            verb: "flag".into(),
            arg: "anomaly".into(),
        },
        None => KnowledgeRule {
            metric: "learning_score".into(),
            op: CmpOp::Lt,
            constant: artifact.final_score,
            verb: "flag".into(),
            arg: "degraded".into(),
        },
    };
    KnowledgeRules::new(model_ref, vec![rule.to_string()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRule {
    pub rule: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeOutcome {
    pub nisd: NisDescriptor,
    pub rules: Vec<PolicyRule>,
    pub dropped: Vec<DroppedRule>,
    pub conflicts: Vec<Conflict>,
}

/// Attaches knowledge rules to a NISD. Rules that would act against an
/// active priority, or that conflict with other deployed NIFs, are dropped.
pub fn build_shared_knowledge_policy(
    nisd: &NisDescriptor,
    rules: &KnowledgeRules,
    existing: &[PolicyRule],
    deployed: &[(String, NmapekProfile)],
    matrix: &ConflictMatrix,
    now: Millis,
) -> KnowledgeOutcome {
    let members: BTreeSet<String> = nisd.member_names().into_iter().collect();
    let others: Vec<(String, NmapekProfile)> =
        deployed.iter().filter(|(_, p)| !members.contains(&p.nif_name)).cloned().collect();
    let mut out = KnowledgeOutcome { nisd: nisd.clone(), rules: Vec::new(), dropped: Vec::new(), conflicts: Vec::new() };
    for text in &rules.rules {
        let rule: KnowledgeRule = match text.parse() {
            Ok(r) => r,
            Err(e) => {
                out.dropped.push(DroppedRule { rule: text.clone(), reason: e.to_string() });
                continue;
            }
        };
        let canonical = rule.to_string();
        let mut service = nisd.name.clone();
        if let Some(action) = rule.action() {
            service = rule.arg.clone();
            let contradicted = existing.iter().find(|p| {
                p.active
                    && p.scope.service_id == rule.arg
                    && matches!(&p.rule, Rule::Priority { loser, .. } if members.contains(loser))
            });
            if let Some(p) = contradicted {
                out.dropped.push(DroppedRule {
                    rule: canonical,
                    reason: format!("contradicts active priority {} on {}", p.policy_id, rule.arg),
                });
                continue;
            }
            let probe = NmapekProfile {
                nif_name: format!("{}#knowledge", nisd.name),
                classes: [NmapekClass::Plan].into(),
                plan_targets: vec![PlanTarget {
                    service_id: rule.arg.clone(),
                    target_path: format!("knowledge.{}", rule.metric),
                    action_class: action,
                }],
                sources: vec![],
            };
            let found = detect_conflicts(&nisd.name, std::slice::from_ref(&probe), &others, matrix);
            if let Some(c) = found.first() {
                let other = c.parties.iter().find(|p| p.nif_name != probe.nif_name).map_or("", |p| &p.nif_name);
                out.dropped.push(DroppedRule { rule: canonical, reason: format!("conflicts with deployed NIF {other}") });
                out.conflicts.extend(found);
                continue;
            }
        }
        if !out.nisd.policies.contains(&canonical) {
            out.nisd.policies.push(canonical.clone());
        }
        out.rules.push(PolicyRule::new(Scope::new(&service, members.iter().cloned()), Rule::Knowledge { rule: canonical }, now));
    }
    if out.nisd.policies != nisd.policies && nisd.integrity.is_some() {
        out.nisd.seal();
    }
    out
}
