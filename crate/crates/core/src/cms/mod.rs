//! Capability Metadata Store.
//!
//! Every agent holds a [`CmsStore`]: a map from `(agent, key)` to the newest
//! [`CmsEntry`] it has seen. Agents only write their own keys; other agents'
//! entries arrive through gossip and are merged last-writer-wins under the
//! total order `(seq, stamp, agent_id, payload)`.

mod gossip;

pub use gossip::{converged, gossip_round, GossipError, Topology};

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AgentId;

pub const KEY_MODEL_ARCHITECTURE: &str = "model.architecture";
pub const KEY_MODEL_PARAMETERS: &str = "model.parameters";
pub const KEY_MODEL_QUANTIZATION: &str = "model.quantization";
pub const KEY_TASK_PROGRESS: &str = "task.progress";
pub const KEY_NODE_HEALTH: &str = "node.health";
pub const KEY_NODE_LOAD: &str = "node.load";
pub const KEY_NODE_DECODE_RATE: &str = "node.decode_rate";
pub const KEY_NODE_CONCURRENCY: &str = "node.concurrency_limit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Number(f64),
    Text(String),
}

impl Payload {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Payload::Number(n) => Some(*n),
            Payload::Text(_) => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Payload::Text(s) => Some(s),
            Payload::Number(_) => None,
        }
    }

    fn total_cmp(&self, other: &Payload) -> Ordering {
        match (self, other) {
            (Payload::Number(a), Payload::Number(b)) => a.total_cmp(b),
            (Payload::Text(a), Payload::Text(b)) => a.cmp(b),
            (Payload::Number(_), Payload::Text(_)) => Ordering::Less,
            (Payload::Text(_), Payload::Number(_)) => Ordering::Greater,
        }
    }
}

impl From<f64> for Payload {
    fn from(v: f64) -> Self {
        Payload::Number(v)
    }
}

impl From<&str> for Payload {
    fn from(v: &str) -> Self {
        Payload::Text(v.to_string())
    }
}

impl From<String> for Payload {
    fn from(v: String) -> Self {
        Payload::Text(v)
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Number(n) => write!(f, "{n}"),
            Payload::Text(s) => f.write_str(s),
        }
    }
}

/// One versioned metadata record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmsEntry {
    pub agent_id: AgentId,
    pub key: String,
    pub payload: Payload,
    /// Per-(agent, key) version, starting at 1.
    pub seq: u64,
    /// Logical clock of the writer when the entry was made.
    pub stamp: u64,
}

impl CmsEntry {
    /// Compare two versions of the same `(agent, key)`.
    pub fn version_cmp(&self, other: &CmsEntry) -> Ordering {
        self.seq
            .cmp(&other.seq)
            .then(self.stamp.cmp(&other.stamp))
            .then(self.agent_id.cmp(&other.agent_id))
            .then_with(|| self.payload.total_cmp(&other.payload))
    }

    fn is_well_formed(&self) -> bool {
        !self.key.is_empty() && self.seq >= 1 && self.payload.as_number().is_none_or(|n| !n.is_nan())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CmsError {
    #[error("metadata key must not be empty")]
    EmptyKey,
    #[error("numeric payload must not be NaN")]
    NanPayload,
}

/// Counters for entries skipped during merges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeDiagnostics {
    pub malformed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmsStore {
    owner: AgentId,
    clock: u64,
    #[serde(with = "entry_list")]
    entries: BTreeMap<(AgentId, String), CmsEntry>,
    diagnostics: MergeDiagnostics,
}

impl CmsStore {
    pub fn new(owner: AgentId) -> Self {
        Self {
            owner,
            clock: 0,
            entries: BTreeMap::new(),
            diagnostics: MergeDiagnostics::default(),
        }
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Move the logical clock forward; it never goes back.
    pub fn advance_clock(&mut self, to: u64) {
        self.clock = self.clock.max(to);
    }

    pub fn diagnostics(&self) -> MergeDiagnostics {
        self.diagnostics
    }

    /// Write `key` for the owning agent.
    pub fn put_local(&mut self, key: &str, payload: impl Into<Payload>) -> Result<CmsEntry, CmsError> {
        if key.is_empty() {
            return Err(CmsError::EmptyKey);
        }
        let payload = payload.into();
        if payload.as_number().is_some_and(f64::is_nan) {
            return Err(CmsError::NanPayload);
        }
        let slot = (self.owner, key.to_string());
        let seq = self.entries.get(&slot).map_or(0, |e| e.seq) + 1;
        let entry = CmsEntry {
            agent_id: self.owner,
            key: key.to_string(),
            payload,
            seq,
            stamp: self.clock,
        };
        self.entries.insert(slot, entry.clone());
        Ok(entry)
    }

    pub fn get(&self, agent: AgentId, key: &str) -> Option<&CmsEntry> {
        self.entries.get(&(agent, key.to_string()))
    }

    pub fn entries(&self) -> impl Iterator<Item = &CmsEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adopt every remote entry newer than the local copy. Returns the number
    /// adopted; malformed entries are skipped and tallied.
    pub fn merge<'a, I>(&mut self, remote: I) -> usize
    where
        I: IntoIterator<Item = &'a CmsEntry>,
    {
        let mut adopted = 0;
        for entry in remote {
            if !entry.is_well_formed() {
                self.diagnostics.malformed += 1;
                continue;
            }
            let slot = (entry.agent_id, entry.key.clone());
            let newer = self
                .entries
                .get(&slot)
                .is_none_or(|current| entry.version_cmp(current) == Ordering::Greater);
            if newer {
                self.clock = self.clock.max(entry.stamp);
                self.entries.insert(slot, entry.clone());
                adopted += 1;
            }
        }
        adopted
    }

    /// True when both stores hold exactly the same entries.
    pub fn same_contents(&self, other: &CmsStore) -> bool {
        self.entries == other.entries
    }
}

mod entry_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<(AgentId, String), CmsEntry>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(map.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<(AgentId, String), CmsEntry>, D::Error> {
        let list = Vec::<CmsEntry>::deserialize(deserializer)?;
        Ok(list.into_iter().map(|e| ((e.agent_id, e.key.clone()), e)).collect())
    }
}
