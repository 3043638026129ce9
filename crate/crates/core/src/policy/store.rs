use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicyRule};
use crate::canonical;
use crate::descriptors::ActionClass;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogRecord {
    op: String,
    policy_id: String,
    t: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rule: Option<PolicyRule>,
}

/// The policies database. Optionally mirrored to `policies/policies.log`.
#[derive(Debug, Clone, Default)]
pub struct PolicyStore {
    rules: BTreeMap<String, PolicyRule>,
    counter: u64,
    log: Option<PathBuf>,
}

impl PolicyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(data_dir: &Path) -> Result<Self, PolicyError> {
        let dir = data_dir.join("policies");
        fs::create_dir_all(&dir)?;
        let path = dir.join("policies.log");
        let mut store = PolicyStore::default();
        if path.exists() {
            for line in BufReader::new(fs::File::open(&path)?).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: LogRecord = serde_json::from_str(&line).map_err(|e| PolicyError::Corrupt(e.to_string()))?;
                match (rec.op.as_str(), rec.rule) {
                    ("store", Some(rule)) => {
                        store.counter += 1;
                        store.rules.insert(rule.policy_id.clone(), rule);
                    }
                    ("deactivate", _) => {
                        if let Some(r) = store.rules.get_mut(&rec.policy_id) {
                            r.active = false;
                        }
                    }
                    (op, _) => return Err(PolicyError::Corrupt(format!("bad record {op:?}"))),
                }
            }
        }
        store.log = Some(path);
        Ok(store)
    }

    fn append(&self, rec: &LogRecord) -> Result<(), PolicyError> {
        if let Some(path) = &self.log {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", canonical::to_canonical(rec))?;
        }
        Ok(())
    }

    /// Stores an active rule and assigns its id.
    pub fn store_policy(&mut self, mut rule: PolicyRule) -> Result<String, PolicyError> {
        if let Some(dup) = self.rules.values().find(|r| r.active && r.scope == rule.scope && r.rule == rule.rule) {
            return Err(PolicyError::DuplicatePolicy(dup.policy_id.clone()));
        }
        self.counter += 1;
        rule.policy_id = format!("pol-{:04}", self.counter);
        rule.active = true;
        self.append(&LogRecord { op: "store".into(), policy_id: rule.policy_id.clone(), t: rule.created_at, rule: Some(rule.clone()) })?;
        let id = rule.policy_id.clone();
        self.rules.insert(id.clone(), rule);
        Ok(id)
    }

    /// Active rules that constrain `action` on `service_id`, by policy id.
    pub fn lookup_policies(&self, service_id: &str, action: ActionClass) -> Vec<PolicyRule> {
        self.rules.values().filter(|r| r.active && r.governs(service_id, action)).cloned().collect()
    }

    pub fn get(&self, policy_id: &str) -> Option<&PolicyRule> {
        self.rules.get(policy_id)
    }

    pub fn all(&self) -> impl Iterator<Item = &PolicyRule> {
        self.rules.values()
    }

    pub fn active(&self) -> impl Iterator<Item = &PolicyRule> {
        self.rules.values().filter(|r| r.active)
    }

    pub fn deactivate(&mut self, policy_id: &str, now: Millis) -> Result<(), PolicyError> {
        let r = self.rules.get_mut(policy_id).ok_or_else(|| PolicyError::UnknownPolicy(policy_id.into()))?;
        if r.active {
            r.active = false;
            self.append(&LogRecord { op: "deactivate".into(), policy_id: policy_id.into(), t: now, rule: None })?;
        }
        Ok(())
    }

    pub fn deactivate_all(&mut self, now: Millis) -> Result<(), PolicyError> {
        let ids: Vec<String> = self.active().map(|r| r.policy_id.clone()).collect();
        for id in ids {
            self.deactivate(&id, now)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Rule, Scope};

    fn cooldown() -> PolicyRule {
        PolicyRule::new(
            Scope::new("svcA", ["NIF1".to_string(), "NIF2".to_string()]),
            Rule::Cooldown { after_action: ActionClass::Scale, blocked_action: ActionClass::Relocate, window_ms: 30_000 },
            0,
        )
    }

    #[test]
    fn store_lookup_deactivate() {
        let mut s = PolicyStore::new();
        let id = s.store_policy(cooldown()).unwrap();
        assert_eq!(s.lookup_policies("svcA", ActionClass::Relocate).len(), 1);
        assert!(s.lookup_policies("svcB", ActionClass::Relocate).is_empty());
        assert!(matches!(s.store_policy(cooldown()), Err(PolicyError::DuplicatePolicy(_))));
        s.deactivate(&id, 5).unwrap();
        assert!(s.lookup_policies("svcA", ActionClass::Relocate).is_empty());
    }

    #[test]
    fn log_replays() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = PolicyStore::open(dir.path()).unwrap();
        let id = s.store_policy(cooldown()).unwrap();
        s.store_policy(PolicyRule::new(Scope::new("svcB", []), Rule::Priority { winner: "a".into(), loser: "b".into() }, 1))
            .unwrap();
        s.deactivate(&id, 2).unwrap();
        let again = PolicyStore::open(dir.path()).unwrap();
        assert_eq!(again.all().cloned().collect::<Vec<_>>(), s.all().cloned().collect::<Vec<_>>());
    }
}
