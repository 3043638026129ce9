//! The NIO API surface: the event log, the scenario runner and the HTTP
//! service.

pub mod eventlog;

pub use eventlog::{actor, parse_jsonl, to_jsonl, EventLog, EventLogError, EventRecord, Outcome};
pub mod scenario;
pub mod service;
