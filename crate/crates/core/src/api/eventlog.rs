use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::Millis;

pub mod actor {
    pub const NIO: &str = "NIO";
    pub const CSOI: &str = "CSOI";
    pub const POLICY_IC: &str = "PolicyIC";
    pub const CONFLICT_RESOLVER: &str = "ConflictResolver";
    pub const POLICY_MANAGER: &str = "PolicyManager";
    pub const NIF_MANAGER: &str = "NIFManager";
    pub const NIFC_MANAGER: &str = "NIFCManager";
    pub const PIPELINE: &str = "Pipeline";
    pub const SENDER: &str = "Sender";

    pub fn nif(name: &str) -> String {
        format!("NIF:{name}")
    }
}

#[derive(Debug, Error)]
pub enum EventLogError {
    #[error("record ({t}, {seq}) does not follow ({last_t}, {last_seq})")]
    OrderViolation { t: Millis, seq: u64, last_t: Millis, last_seq: u64 },
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Denied,
    Delayed,
    Error(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Denied => f.write_str("denied"),
            Outcome::Delayed => f.write_str("delayed"),
            Outcome::Error(code) => write!(f, "error:{code}"),
        }
    }
}

impl Outcome {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(Outcome::Ok),
            "denied" => Some(Outcome::Denied),
            "delayed" => Some(Outcome::Delayed),
            _ => s.strip_prefix("error:").map(|c| Outcome::Error(c.into())),
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, Outcome::Delayed)
    }
}

impl Serialize for Outcome {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Outcome {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Outcome::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad outcome {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: Millis,
    pub seq: u64,
    pub actor: String,
    pub action: String,
    pub subject: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub detail: Value,
}

/// Append-only event log, optionally mirrored line by line to a file.
#[derive(Debug, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    sink: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self, EventLogError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(EventLog { records: Vec::new(), sink: Some(BufWriter::new(f)) })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn last_key(&self) -> Option<(Millis, u64)> {
        self.records.last().map(|r| (r.t, r.seq))
    }

    pub fn next_seq(&self) -> u64 {
        self.last_key().map_or(0, |(_, s)| s + 1)
    }

    /// Appends a record whose `(t, seq)` must follow the last one.
    pub fn emit(&mut self, record: EventRecord) -> Result<(), EventLogError> {
        if let Some((last_t, last_seq)) = self.last_key() {
            if (record.t, record.seq) <= (last_t, last_seq) || record.t < last_t {
                return Err(EventLogError::OrderViolation { t: record.t, seq: record.seq, last_t, last_seq });
            }
        }
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{}", canonical::to_canonical(&record))?;
            sink.flush()?;
        }
        self.records.push(record);
        Ok(())
    }

    /// Emits a record with the next sequence number.
    pub fn record(
        &mut self,
        t: Millis,
        actor: &str,
        action: &str,
        subject: &str,
        outcome: Outcome,
        detail: Value,
    ) -> Result<(), EventLogError> {
        let seq = self.next_seq();
        let t = t.max(self.last_key().map_or(0, |(t, _)| t));
        self.emit(EventRecord {
            t,
            seq,
            actor: actor.into(),
            action: action.into(),
            subject: subject.into(),
            outcome,
            detail,
        })
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }
}

pub fn to_jsonl(records: &[EventRecord]) -> String {
    records.iter().map(|r| canonical::to_canonical(r) + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<EventRecord>, EventLogError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| EventLogError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}
