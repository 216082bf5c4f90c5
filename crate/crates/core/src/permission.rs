//! Permission sets and permitter requests.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::message::{BlockId, Identifier, Message, Timeslot};

/// A (possibly infinite) set of messages a processor may broadcast.
///
/// Infinite sets are represented intensionally: `all` is the universal set,
/// and each `extend` entry admits every block by `producer` that extends
/// `tip` with timestamp `slot`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermissionSet {
    pub all: bool,
    pub exact: BTreeSet<Message>,
    pub extend: BTreeSet<ChainGrant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChainGrant {
    pub tip: BlockId,
    pub slot: Timeslot,
    pub producer: Identifier,
}

impl PermissionSet {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn universal() -> Self {
        PermissionSet { all: true, ..Self::default() }
    }

    pub fn exactly(m: Message) -> Self {
        let mut s = Self::default();
        s.exact.insert(m);
        s
    }

    pub fn extending(grant: ChainGrant) -> Self {
        let mut s = Self::default();
        s.extend.insert(grant);
        s
    }

    pub fn is_empty(&self) -> bool {
        !self.all && self.exact.is_empty() && self.extend.is_empty()
    }

    pub fn union_with(&mut self, other: &PermissionSet) {
        self.all |= other.all;
        self.exact.extend(other.exact.iter().cloned());
        self.extend.extend(other.extend.iter().copied());
    }

    pub fn permits(&self, m: &Message) -> bool {
        if self.all || self.exact.contains(m) {
            return true;
        }
        if self.extend.is_empty() || !m.signatures.iter().all(|s| !s.is_general()) {
            return false;
        }
        match m.as_block() {
            Some(b) => b.slot.is_some_and(|slot| {
                m.timestamp == Some(slot)
                    && self.extend.contains(&ChainGrant { tip: b.parent, slot, producer: b.producer })
            }),
            None => false,
        }
    }
}

/// `(M, A)` in the untimed setting, `(t', M, A)` in the timed one.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Request {
    Untimed { messages: BTreeSet<Message>, extra: Option<Message> },
    Timed { slot: Timeslot, messages: BTreeSet<Message>, extra: Option<Message> },
}

impl Request {
    pub fn messages(&self) -> &BTreeSet<Message> {
        match self {
            Request::Untimed { messages, .. } | Request::Timed { messages, .. } => messages,
        }
    }

    pub fn extra(&self) -> Option<&Message> {
        match self {
            Request::Untimed { extra, .. } | Request::Timed { extra, .. } => extra.as_ref(),
        }
    }

    pub fn timed_slot(&self) -> Option<Timeslot> {
        match self {
            Request::Timed { slot, .. } => Some(*slot),
            Request::Untimed { .. } => None,
        }
    }

    /// Canonical bytes, used to key per-run permitter randomness.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Request::Untimed { .. } => out.push(0x55),
            Request::Timed { slot, .. } => {
                out.push(0x54);
                out.extend_from_slice(&slot.to_be_bytes());
            }
        }
        let messages = self.messages();
        out.extend_from_slice(&(messages.len() as u32).to_be_bytes());
        for m in messages {
            out.extend_from_slice(&m.encode());
        }
        match self.extra() {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.encode());
            }
        }
        out
    }
}
