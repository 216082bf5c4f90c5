//! Resource pools `R(U, t, M)` and the checks that relate them to the
//! adversary.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Identifier, Message, Timeslot};
use crate::setting::Sizing;

/// One `(t, M)` point at which a pool is evaluated.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PoolPoint {
    pub slot: Timeslot,
    pub messages: BTreeSet<Message>,
}

impl PoolPoint {
    pub fn new(slot: Timeslot, messages: BTreeSet<Message>) -> Self {
        PoolPoint { slot, messages }
    }

    pub fn bare(slot: Timeslot) -> Self {
        PoolPoint { slot, messages: BTreeSet::new() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub id: Identifier,
    pub balance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub id: Identifier,
    pub slot: Timeslot,
    /// Hex encodings of the messages in `M`; absent means "any `M`".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages: Option<Vec<String>>,
    pub balance: f64,
}

/// A resource pool. Named rules cover the common shapes; `Table` is an
/// explicit lookup with a rule to fall back on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum ResourcePool {
    /// Constant balance per identifier, independent of `t` and `M`.
    Constant { balances: Vec<Balance> },
    /// Explicit `(U, t[, M])` entries over a fallback rule.
    Table { entries: Vec<TableEntry>, fallback: Box<ResourcePool> },
    /// Identifier `owners[t]` holds `balance` at slot `t` and nobody else
    /// does; slots without an owner go to a synthetic identifier
    /// `filler_base + t` belonging to a processor that is never simulated.
    /// Serialised as `[slot, identifier]` pairs.
    SlotOwners {
        #[serde(with = "pairs")]
        owners: BTreeMap<Timeslot, Identifier>,
        filler_base: u32,
        balance: f64,
    },
    /// Base stake plus `reward` for each block in `M` produced by `U`.
    StakeFromChain { base: Vec<Balance>, reward: f64 },
}

mod pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, K: Serialize, V: Serialize>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("total balance at slot {slot} is zero")]
    ZeroTotal { slot: Timeslot },
    #[error("identifier {id} has balance at slot {slot} but belongs to no processor")]
    Orphan { id: Identifier, slot: Timeslot },
    #[error("negative balance {balance} for {id} at slot {slot}")]
    Negative { id: Identifier, slot: Timeslot, balance: f64 },
    #[error("total balance {total} at slot {slot} outside the unsized bounds [{alpha0}, {alpha1}]")]
    OutOfBounds { slot: Timeslot, total: f64, alpha0: f64, alpha1: f64 },
    #[error("bad table entry: {0}")]
    Table(String),
}

impl ResourcePool {
    pub fn constant(balances: impl IntoIterator<Item = (Identifier, f64)>) -> Self {
        ResourcePool::Constant {
            balances: balances.into_iter().map(|(id, balance)| Balance { id, balance }).collect(),
        }
    }

    /// False models PoW-style pools `R: U x N -> R>=0`.
    pub fn message_dependent(&self) -> bool {
        match self {
            ResourcePool::Constant { .. } | ResourcePool::SlotOwners { .. } => false,
            ResourcePool::StakeFromChain { .. } => true,
            ResourcePool::Table { entries, fallback } => {
                entries.iter().any(|e| e.messages.is_some()) || fallback.message_dependent()
            }
        }
    }

    pub fn balance(&self, id: Identifier, slot: Timeslot, messages: &BTreeSet<Message>) -> f64 {
        match self {
            ResourcePool::Constant { balances } => {
                balances.iter().find(|b| b.id == id).map_or(0.0, |b| b.balance)
            }
            ResourcePool::Table { entries, fallback } => {
                let mut key: Option<Vec<String>> = None;
                let mut wildcard = None;
                for e in entries.iter().filter(|e| e.id == id && e.slot == slot) {
                    match &e.messages {
                        None => wildcard = Some(e.balance),
                        Some(ms) => {
                            let key = key.get_or_insert_with(|| canonical_key(messages));
                            if sorted(ms) == *key {
                                return e.balance;
                            }
                        }
                    }
                }
                wildcard.unwrap_or_else(|| fallback.balance(id, slot, messages))
            }
            ResourcePool::SlotOwners { owners, filler_base, balance } => {
                let owner = owners.get(&slot).copied().or_else(|| filler(*filler_base, slot));
                if owner == Some(id) {
                    *balance
                } else {
                    0.0
                }
            }
            ResourcePool::StakeFromChain { base, reward } => {
                let Some(b) = base.iter().find(|b| b.id == id) else { return 0.0 };
                let produced = messages
                    .iter()
                    .filter(|m| m.as_block().is_some_and(|blk| blk.producer == id))
                    .count();
                b.balance + reward * produced as f64
            }
        }
    }

    /// The identifiers with non-zero balance at `(t, M)`, with balances.
    pub fn support(&self, point: &PoolPoint) -> Vec<(Identifier, f64)> {
        let mut candidates: BTreeSet<Identifier> = BTreeSet::new();
        self.candidates(point.slot, &mut candidates);
        candidates
            .into_iter()
            .map(|id| (id, self.balance(id, point.slot, &point.messages)))
            .filter(|(_, b)| *b != 0.0)
            .collect()
    }

    fn candidates(&self, slot: Timeslot, out: &mut BTreeSet<Identifier>) {
        match self {
            ResourcePool::Constant { balances } => out.extend(balances.iter().map(|b| b.id)),
            ResourcePool::Table { entries, fallback } => {
                out.extend(entries.iter().filter(|e| e.slot == slot).map(|e| e.id));
                fallback.candidates(slot, out);
            }
            ResourcePool::SlotOwners { owners, filler_base, .. } => {
                if let Some(id) = owners.get(&slot).copied().or_else(|| filler(*filler_base, slot)) {
                    out.insert(id);
                }
            }
            ResourcePool::StakeFromChain { base, .. } => out.extend(base.iter().map(|b| b.id)),
        }
    }

    /// `T(t, M)`: the finite sum over the support.
    pub fn total_balance(&self, point: &PoolPoint) -> Result<f64, PoolError> {
        let total: f64 = self.support(point).iter().map(|(_, b)| b).sum();
        if total > 0.0 {
            Ok(total)
        } else {
            Err(PoolError::ZeroTotal { slot: point.slot })
        }
    }

    /// Checks conditions (a) and (c), non-negativity, and for unsized pools
    /// the `[alpha0, alpha1]` bound on the total, over `domain`.
    /// `owners` lists every processor identifier, simulated or not.
    pub fn validate(
        &self,
        owners: &BTreeSet<Identifier>,
        sizing: Sizing,
        domain: &[PoolPoint],
    ) -> Result<(), PoolError> {
        if let ResourcePool::Table { entries, .. } = self {
            for e in entries {
                if let Some(ms) = &e.messages {
                    for h in ms {
                        Message::from_hex(h).map_err(|err| PoolError::Table(err.to_string()))?;
                    }
                }
            }
        }
        for point in domain {
            for (id, b) in self.support(point) {
                if b < 0.0 {
                    return Err(PoolError::Negative { id, slot: point.slot, balance: b });
                }
                if !owners.contains(&id) && !self.is_filler(id) {
                    return Err(PoolError::Orphan { id, slot: point.slot });
                }
            }
            let total = self.total_balance(point)?;
            if let Sizing::Unsized { alpha0, alpha1 } = sizing {
                if total < alpha0 || total > alpha1 {
                    return Err(PoolError::OutOfBounds { slot: point.slot, total, alpha0, alpha1 });
                }
            }
        }
        Ok(())
    }

    fn is_filler(&self, id: Identifier) -> bool {
        match self {
            ResourcePool::SlotOwners { filler_base, .. } => id.raw() >= *filler_base,
            ResourcePool::Table { fallback, .. } => fallback.is_filler(id),
            _ => false,
        }
    }
}

fn filler(base: u32, slot: Timeslot) -> Option<Identifier> {
    u32::try_from(slot).ok().and_then(|s| base.checked_add(s)).and_then(Identifier::new)
}

fn canonical_key(messages: &BTreeSet<Message>) -> Vec<String> {
    let v: Vec<String> = messages.iter().map(Message::to_hex).collect();
    sorted(&v)
}

fn sorted(v: &[String]) -> Vec<String> {
    let mut v = v.to_vec();
    v.sort();
    v
}

/// q-boundedness of a weighed adversary: at every point in `domain` the
/// adversary's balance is at most a `q` fraction of all processors' balance.
pub fn check_q_bounded(
    pool: &ResourcePool,
    adversary: &BTreeSet<Identifier>,
    processors: &BTreeSet<Identifier>,
    q: f64,
    domain: &[PoolPoint],
) -> bool {
    domain.iter().all(|point| {
        let held: f64 = adversary.iter().map(|&u| pool.balance(u, point.slot, &point.messages)).sum();
        let total: f64 =
            processors.iter().map(|&u| pool.balance(u, point.slot, &point.messages)).sum();
        held <= q * total + 1e-12 * total.abs()
    })
}

/// Permissioned q-boundedness: at most a `q` fraction of processors faulty.
pub fn check_q_bounded_count(faulty: usize, processors: usize, q: f64) -> bool {
    faulty as f64 <= q * processors as f64 + 1e-12
}

/// Supports at distinct slots never intersect, whatever the message sets.
pub fn check_disjoint_supports(pool: &ResourcePool, domain: &[PoolPoint]) -> bool {
    let mut owner_slot: BTreeMap<Identifier, Timeslot> = BTreeMap::new();
    for point in domain {
        for (id, _) in pool.support(point) {
            match owner_slot.get(&id) {
                Some(&s) if s != point.slot => return false,
                _ => {
                    owner_slot.insert(id, point.slot);
                }
            }
        }
    }
    true
}

/// No single identifier holds more than a `q` fraction at any point.
pub fn check_single_identifier_bound(pool: &ResourcePool, q: f64, domain: &[PoolPoint]) -> bool {
    domain.iter().all(|point| {
        let support = pool.support(point);
        let total: f64 = support.iter().map(|(_, b)| b).sum();
        support.iter().all(|(_, b)| *b <= q * total + 1e-12 * total)
    })
}
