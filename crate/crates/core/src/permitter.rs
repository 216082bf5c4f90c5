//! Permitter oracles: permissioned, balance-gated, lottery, proof-of-work and
//! longest-chain proof-of-stake.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::message::{Block, BlockId, Identifier, Message, Timeslot};
use crate::permission::{ChainGrant, PermissionSet, Request};
use crate::resource::ResourcePool;

/// How the oracle's coin flips relate across queries of one run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomnessMode {
    /// The oracle is a random function drawn once per run: equal queries get
    /// equal answers.
    #[default]
    FixedFunctionPerRun,
    /// Every query consumes fresh randomness from one stream.
    PerQueryIndependent,
}

/// Seeded randomness for one run.
#[derive(Clone, Debug)]
pub struct Coins {
    seed: u64,
    mode: RandomnessMode,
    stream: ChaCha8Rng,
}

impl Coins {
    pub fn new(seed: u64, mode: RandomnessMode) -> Self {
        Coins { seed, mode, stream: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`. In fixed-function mode the value depends only on
    /// the seed and `key`.
    pub fn uniform(&mut self, key: &[u8]) -> f64 {
        match self.mode {
            RandomnessMode::FixedFunctionPerRun => keyed_uniform(self.seed, key),
            RandomnessMode::PerQueryIndependent => self.stream.gen::<f64>(),
        }
    }
}

pub fn keyed_uniform(seed: u64, key: &[u8]) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    h.update(key);
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest).gen::<f64>()
}

/// Everything the oracle may look at for one request.
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    /// Slot at which the request was made.
    pub slot: Timeslot,
    pub request: &'a Request,
    /// `R(U_p, t, M)`, or `R(U_p, t', M)` for timed requests.
    pub balance: f64,
    /// Present only in the authenticated setting.
    pub identity: Option<Identifier>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Response {
    pub permissions: PermissionSet,
    pub diagnostic: Option<String>,
}

impl Response {
    fn grant(permissions: PermissionSet) -> Self {
        Response { permissions, diagnostic: None }
    }

    fn none() -> Self {
        Response::default()
    }

    fn reject(why: impl Into<String>) -> Self {
        Response { permissions: PermissionSet::empty(), diagnostic: Some(why.into()) }
    }
}

/// The oracle families, selectable from scenario config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PermitterSpec {
    /// Every processor may broadcast everything.
    Permissioned,
    /// Deterministic: the universal set for any request with non-zero balance.
    Gate,
    /// `{A}` with probability `1 - exp(-lambda * balance)`, any `A`.
    Lottery { lambda: f64 },
    /// As `Lottery`, but `A` must be a valid block extending a longest chain
    /// in `M`.
    Pow { lambda: f64 },
    /// One leader per `(C, t')`, drawn with probability proportional to stake.
    PosLeader,
}

impl PermitterSpec {
    pub fn is_deterministic(&self) -> bool {
        matches!(self, PermitterSpec::Permissioned | PermitterSpec::Gate)
    }

    pub fn respond(&self, query: &Query<'_>, pool: &ResourcePool, coins: &mut Coins) -> Response {
        if let PermitterSpec::Permissioned = self {
            return permissioned_permitter(query.request);
        }
        if query.balance <= 0.0 {
            return Response::none();
        }
        match self {
            PermitterSpec::Permissioned => unreachable!(),
            PermitterSpec::Gate => Response::grant(PermissionSet::universal()),
            PermitterSpec::Lottery { lambda } => lottery(*lambda, query, coins, false),
            PermitterSpec::Pow { lambda } => lottery(*lambda, query, coins, true),
            PermitterSpec::PosLeader => pos_permitter(query, pool, coins.seed()),
        }
    }
}

pub fn permissioned_permitter(_request: &Request) -> Response {
    Response::grant(PermissionSet::universal())
}

/// Success law for a balance `b`.
pub fn pow_success_probability(lambda: f64, balance: f64) -> f64 {
    if balance <= 0.0 {
        0.0
    } else {
        1.0 - (-lambda * balance).exp()
    }
}

fn lottery(lambda: f64, query: &Query<'_>, coins: &mut Coins, blocks: bool) -> Response {
    let Some(extra) = query.request.extra() else {
        return Response::reject("request carries no candidate message");
    };
    if blocks {
        if let Err(why) = valid_extension(extra, query.request.messages()) {
            return Response::reject(why);
        }
    }
    // The key leaves out the requester and `M`: only the slot, the candidate
    // and the balance decide the coin.
    let mut key = b"lottery".to_vec();
    key.extend_from_slice(&query.slot.to_be_bytes());
    key.extend_from_slice(&extra.encode());
    key.extend_from_slice(&query.balance.to_bits().to_be_bytes());
    if coins.uniform(&key) < pow_success_probability(lambda, query.balance) {
        Response::grant(PermissionSet::exactly(extra.clone()))
    } else {
        Response::none()
    }
}

/// Whether `candidate` is an untimed block extending a longest-chain tip among
/// the blocks in `m`.
pub fn valid_extension(candidate: &Message, m: &BTreeSet<Message>) -> Result<(), String> {
    let Some(block) = candidate.as_block() else {
        return Err("candidate is not a block".into());
    };
    if block.slot.is_some() || candidate.timestamp.is_some() {
        return Err("untimed block carries a timestamp".into());
    }
    let best = m.iter().filter_map(Message::as_block).map(|b| b.height).max().unwrap_or(0);
    let parent_height = if block.parent == BlockId::GENESIS {
        Some(0)
    } else {
        m.iter().filter_map(Message::as_block).find(|b| b.id() == block.parent).map(|b| b.height)
    };
    match parent_height {
        None => Err(format!("parent {:?} not in the request's message set", block.parent)),
        Some(h) if h != best => Err(format!("parent at height {h} is not a longest tip ({best})")),
        Some(h) if block.height != h + 1 => Err(format!("height {} does not follow {h}", block.height)),
        Some(_) => Ok(()),
    }
}

/// The tip of `chain` if its blocks form one timed path from genesis.
pub fn timed_chain_tip(chain: &BTreeSet<Message>) -> Result<Option<Block>, String> {
    let mut by_id: BTreeMap<BlockId, &Block> = BTreeMap::new();
    for m in chain {
        let b = m.as_block().ok_or("chain contains a non-block message")?;
        if b.slot.is_none() || m.timestamp != b.slot {
            return Err("chain block without a matching timestamp".into());
        }
        by_id.insert(b.id(), b);
    }
    let Some(tip) = by_id.values().max_by_key(|b| b.height).copied() else {
        return Ok(None);
    };
    let mut cur = tip;
    let mut seen = 1;
    loop {
        if cur.parent == BlockId::GENESIS {
            if cur.height != 1 {
                return Err("first block must have height 1".into());
            }
            break;
        }
        let parent = by_id.get(&cur.parent).ok_or("chain has a gap")?;
        if parent.height + 1 != cur.height || parent.slot >= cur.slot {
            return Err("chain heights or slots out of order".into());
        }
        cur = parent;
        seen += 1;
    }
    if seen != by_id.len() {
        return Err("message set is not a single chain".into());
    }
    Ok(Some(tip.clone()))
}

/// Leader for `(C, t')`: a deterministic function of the run seed, the
/// chain tip and `t'`, weighted by `R(U, t', C)`.
pub fn pos_leader(
    pool: &ResourcePool,
    tip: BlockId,
    slot: Timeslot,
    chain: &BTreeSet<Message>,
    seed: u64,
) -> Option<Identifier> {
    let support = pool.support(&crate::resource::PoolPoint::new(slot, chain.clone()));
    let total: f64 = support.iter().map(|(_, b)| b).sum();
    if total <= 0.0 {
        return None;
    }
    let mut key = b"pos-leader".to_vec();
    key.extend_from_slice(&tip.0.to_be_bytes());
    key.extend_from_slice(&slot.to_be_bytes());
    let target = keyed_uniform(seed, &key) * total;
    let mut acc = 0.0;
    for (id, b) in &support {
        acc += b;
        if target < acc {
            return Some(*id);
        }
    }
    support.last().map(|(id, _)| *id)
}

pub fn pos_permitter(query: &Query<'_>, pool: &ResourcePool, seed: u64) -> Response {
    let Request::Timed { slot, messages, extra } = query.request else {
        return Response::reject("proof-of-stake requests must be timed");
    };
    if extra.is_some() {
        return Response::reject("multi-permitter request with non-empty A");
    }
    let Some(identity) = query.identity else {
        return Response::reject("proof-of-stake needs the requester's identity");
    };
    let tip = match timed_chain_tip(messages) {
        Ok(tip) => tip,
        Err(why) => return Response::reject(why),
    };
    let (tip_id, tip_slot) = tip.map_or((BlockId::GENESIS, 0), |b| (b.id(), b.slot.unwrap_or(0)));
    // Requests may look ahead to future slots.
    if *slot <= tip_slot {
        return Response::reject(format!("slot {slot} outside the chain's slot set"));
    }
    if pos_leader(pool, tip_id, *slot, messages, seed) == Some(identity) {
        Response::grant(PermissionSet::extending(ChainGrant { tip: tip_id, slot: *slot, producer: identity }))
    } else {
        Response::none()
    }
}
