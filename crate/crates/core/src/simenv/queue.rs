use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent<P> {
    pub at: Millis,
    pub seq: u64,
    pub payload: P,
}

#[derive(Debug)]
struct Entry<P>(SimEvent<P>);

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seq) == (other.0.at, other.0.seq)
    }
}
impl<P> Eq for Entry<P> {}
impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for Entry<P> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.at, self.0.seq).cmp(&(other.0.at, other.0.seq))
    }
}

/// Logical clock plus a queue of timed events, dispatched in `(at, seq)` order.
#[derive(Debug)]
pub struct EventQueue<P> {
    now: Millis,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Entry<P>>>,
    dispatched: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue { now: 0, next_seq: 0, heap: BinaryHeap::new(), dispatched: 0 }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn scheduled_count(&self) -> u64 {
        self.next_seq
    }

    pub fn dispatched_count(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Schedules an event; events in the past are clamped to `now`.
    pub fn schedule(&mut self, at: Millis, payload: P) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Entry(SimEvent { at: at.max(self.now), seq, payload })));
        seq
    }

    pub fn peek_time(&self) -> Option<Millis> {
        self.heap.peek().map(|Reverse(e)| e.0.at)
    }

    /// Dispatches the next event and moves the clock to its time.
    pub fn pop_next(&mut self) -> Option<SimEvent<P>> {
        let Reverse(Entry(ev)) = self.heap.pop()?;
        self.now = ev.at;
        self.dispatched += 1;
        Some(ev)
    }

    /// Dispatches every event with `at <= until`, then sets `now = until`.
    pub fn advance(&mut self, until: Millis) -> Result<Vec<SimEvent<P>>, SimError> {
        if until < self.now {
            return Err(SimError::TimeReversal { now: self.now, requested: until });
        }
        let mut out = Vec::new();
        while self.peek_time().is_some_and(|t| t <= until) {
            out.extend(self.pop_next());
        }
        self.now = until;
        Ok(out)
    }
}
