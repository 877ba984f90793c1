//! Event model and temporal adjacency index for continuous-time dynamic graphs.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Attack,
    /// Synthetic event injected into a test stream.
    Noise,
}

impl Label {
    /// Parses a flow label. `benign`/`normal` map to [`Label::Normal`],
    /// `noise` to [`Label::Noise`], anything else to [`Label::Attack`].
    pub fn parse(s: &str) -> Self {
        let s = s.trim();
        if s.eq_ignore_ascii_case("benign") || s.eq_ignore_ascii_case("normal") {
            Label::Normal
        } else if s.eq_ignore_ascii_case("noise") {
            Label::Noise
        } else {
            Label::Attack
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Attack => "attack",
            Label::Noise => "noise",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One directed, timestamped interaction `src → dst` with edge features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    pub features: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Outgoing,
    Incoming,
}

/// Entry of a node's incident-event list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incidence {
    pub event: usize,
    pub other: NodeId,
    pub t: f64,
    pub direction: Direction,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("out-of-order event: timestamp {got} precedes last inserted timestamp {last}")]
    OutOfOrder { last: f64, got: f64 },
    #[error("non-finite timestamp {0}")]
    BadTimestamp(f64),
}

/// Append-only, time-ordered event store with per-node incidence lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalAdjacencyStore {
    events: Vec<Event>,
    incident: Vec<Vec<Incidence>>,
}

impl TemporalAdjacencyStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a store from an already time-sorted stream.
    pub fn from_events<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for e in events {
            store.insert_event(e.clone())?;
        }
        Ok(store)
    }

    pub fn insert_event(&mut self, event: Event) -> Result<usize, StoreError> {
        if !event.t.is_finite() {
            return Err(StoreError::BadTimestamp(event.t));
        }
        if let Some(last) = self.events.last() {
            if event.t < last.t {
                return Err(StoreError::OutOfOrder {
                    last: last.t,
                    got: event.t,
                });
            }
        }
        let idx = self.events.len();
        let need = event.src.max(event.dst) + 1;
        if self.incident.len() < need {
            self.incident.resize_with(need, Vec::new);
        }
        self.incident[event.src].push(Incidence {
            event: idx,
            other: event.dst,
            t: event.t,
            direction: Direction::Outgoing,
        });
        self.incident[event.dst].push(Incidence {
            event: idx,
            other: event.src,
            t: event.t,
            direction: Direction::Incoming,
        });
        self.events.push(event);
        Ok(idx)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn event(&self, idx: usize) -> &Event {
        &self.events[idx]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of node slots, i.e. one past the largest node id seen.
    pub fn node_capacity(&self) -> usize {
        self.incident.len()
    }

    pub fn incident(&self, node: NodeId) -> &[Incidence] {
        self.incident.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Up to `k` most recent events incident to `node` with timestamp strictly
    /// before `t`, most recent first.
    pub fn neighbors(&self, node: NodeId, t: f64, k: usize) -> impl Iterator<Item = &Incidence> {
        let list = self.incident(node);
        let end = list.partition_point(|inc| inc.t < t);
        let start = end.saturating_sub(k);
        list[start..end].iter().rev()
    }

    /// `F(T)`: every node taking part in an event with timestamp `≤ until`.
    pub fn node_set(&self, until: f64) -> BTreeSet<NodeId> {
        self.prefix(until).iter().flat_map(|e| [e.src, e.dst]).collect()
    }

    /// `E(T)`: distinct ordered pairs with at least one event at timestamp `≤ until`.
    pub fn edges_until(&self, until: f64) -> BTreeSet<(NodeId, NodeId)> {
        self.prefix(until).iter().map(|e| (e.src, e.dst)).collect()
    }

    fn prefix(&self, until: f64) -> &[Event] {
        let end = self.events.partition_point(|e| e.t <= until);
        &self.events[..end]
    }
}
