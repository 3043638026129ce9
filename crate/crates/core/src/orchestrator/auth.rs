use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestKind {
    Create,
    Instantiate,
    Update,
    Terminate,
    Query,
}

impl RequestKind {
    pub const ALL: [RequestKind; 5] =
        [RequestKind::Create, RequestKind::Instantiate, RequestKind::Update, RequestKind::Terminate, RequestKind::Query];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Create => "create",
            RequestKind::Instantiate => "instantiate",
            RequestKind::Update => "update",
            RequestKind::Terminate => "terminate",
            RequestKind::Query => "query",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthEntry {
    pub token: String,
    pub kinds: BTreeSet<RequestKind>,
}

/// Static sender table: each sender has one token and a set of allowed
/// request kinds.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AuthTable {
    entries: BTreeMap<String, AuthEntry>,
}

impl AuthTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// One sender allowed to issue every kind of request.
    pub fn single(sender: &str, token: &str) -> Self {
        let mut t = AuthTable::new();
        t.grant(sender, token, RequestKind::ALL);
        t
    }

    pub fn grant(&mut self, sender: &str, token: &str, kinds: impl IntoIterator<Item = RequestKind>) {
        self.entries.insert(sender.into(), AuthEntry { token: token.into(), kinds: kinds.into_iter().collect() });
    }

    pub fn authorize(&self, sender: &str, token: &str, kind: RequestKind) -> bool {
        self.entries.get(sender).is_some_and(|e| e.token == token && e.kinds.contains(&kind))
    }

    /// Sender owning a bearer token.
    pub fn sender_for(&self, token: &str) -> Option<&str> {
        self.entries.iter().find(|(_, e)| e.token == token).map(|(s, _)| s.as_str())
    }
}
