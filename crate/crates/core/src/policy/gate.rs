use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{GateDecision, PolicyError, PolicyStore, Rule, Verdict};
use crate::descriptors::ActionClass;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub nif: String,
    pub service_id: String,
    pub action_class: ActionClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutedAction {
    pub nif: String,
    pub service_id: String,
    pub action_class: ActionClass,
    pub at: Millis,
}

/// Runtime admission of NIF configuration actions. A decision and, when
/// allowed, the history append happen in one call.
#[derive(Debug, Clone, Default)]
pub struct ActionGate {
    nifs: BTreeSet<String>,
    history: Vec<ExecutedAction>,
    pending: BTreeMap<(String, String), ActionClass>,
}

impl ActionGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_nif(&mut self, nif: &str) {
        self.nifs.insert(nif.into());
    }

    pub fn unregister_nif(&mut self, nif: &str) {
        self.nifs.remove(nif);
        self.pending.retain(|(n, _), _| n != nif);
    }

    pub fn is_registered(&self, nif: &str) -> bool {
        self.nifs.contains(nif)
    }

    pub fn history(&self) -> &[ExecutedAction] {
        &self.history
    }

    /// Whether `nif` has an action on `service` that was held back.
    pub fn has_pending(&self, nif: &str, service: &str) -> bool {
        self.pending.contains_key(&(nif.to_string(), service.to_string()))
    }

    fn last_by_others(&self, nifs: &[String], me: &str, service: &str, classes: &[ActionClass]) -> Option<Millis> {
        self.history
            .iter()
            .rev()
            .find(|a| {
                a.service_id == service && a.nif != me && nifs.contains(&a.nif) && classes.contains(&a.action_class)
            })
            .map(|a| a.at)
    }

    pub fn gate_action(
        &mut self,
        action: &ActionRequest,
        now: Millis,
        store: &PolicyStore,
    ) -> Result<GateDecision, PolicyError> {
        if !self.is_registered(&action.nif) {
            return Err(PolicyError::UnknownNif(action.nif.clone()));
        }
        let mut delay: Option<(Millis, String, String)> = None;
        let mut deny: Option<(String, String)> = None;
        for rule in store.lookup_policies(&action.service_id, action.action_class) {
            if !rule.scope.covers(&action.nif) {
                continue;
            }
            match &rule.rule {
                Rule::Cooldown { after_action, blocked_action, window_ms } => {
                    let mut triggers = Vec::new();
                    if action.action_class == *blocked_action {
                        triggers.push(*after_action);
                    }
                    if action.action_class == *after_action {
                        triggers.push(*blocked_action);
                    }
                    let last = self.last_by_others(&rule.scope.nifs, &action.nif, &action.service_id, &triggers);
                    if let Some(t) = last {
                        let until = t + window_ms;
                        if now < until && delay.as_ref().is_none_or(|(u, _, _)| until > *u) {
                            let reason = format!("cooldown of {window_ms} ms after action at {t}");
                            delay = Some((until, rule.policy_id.clone(), reason));
                        }
                    }
                }
                Rule::Priority { winner, loser } => {
                    if *loser == action.nif && self.has_pending(winner, &action.service_id) && deny.is_none() {
                        deny = Some((rule.policy_id.clone(), format!("{winner} has priority on {}", action.service_id)));
                    }
                }
                Rule::GranularityMerge { .. } | Rule::Knowledge { .. } => {}
            }
        }
        let key = (action.nif.clone(), action.service_id.clone());
        let decision = if let Some((rule_id, reason)) = deny {
            self.pending.insert(key, action.action_class);
            GateDecision { verdict: Verdict::Deny, rule_id: Some(rule_id), reason }
        } else if let Some((until, rule_id, reason)) = delay {
            self.pending.insert(key, action.action_class);
            GateDecision { verdict: Verdict::Delay { until }, rule_id: Some(rule_id), reason }
        } else {
            self.pending.remove(&key);
            self.history.push(ExecutedAction {
                nif: action.nif.clone(),
                service_id: action.service_id.clone(),
                action_class: action.action_class,
                at: now,
            });
            GateDecision { verdict: Verdict::Allow, rule_id: None, reason: "no rule holds the action back".into() }
        };
        Ok(decision)
    }
}
