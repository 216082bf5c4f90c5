//! Longest-chain protocols: proof-of-work mining in the untimed setting,
//! proof-of-stake leader slots in the timed setting, a private-mining
//! adversary, and the confirmed-prefix checks.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::message::{sign, Bit, Block, BlockId, Identifier, Message, Timeslot};
use crate::permission::Request;
use crate::processor::{input_values, Processor, Protocol, SpawnContext, StepInput, StepOutput};
use crate::trace::{RoleTag, Trace};

/// The blocks a processor knows, with blocks whose parent is missing held
/// back until it arrives.
#[derive(Clone, Debug, Default)]
pub struct ChainView {
    blocks: BTreeMap<BlockId, Message>,
    orphans: Vec<Message>,
    best: Option<(u64, BlockId)>,
}

impl ChainView {
    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id).and_then(Message::as_block)
    }

    pub fn message(&self, id: BlockId) -> Option<&Message> {
        self.blocks.get(&id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Adds a block message. Returns whether anything new was linked in.
    pub fn insert(&mut self, m: Message) -> bool {
        let Some(b) = m.as_block() else { return false };
        if self.blocks.contains_key(&b.id()) || self.orphans.contains(&m) {
            return false;
        }
        self.orphans.push(m);
        let mut linked = false;
        loop {
            let ready = self.orphans.iter().position(|o| {
                let b = o.as_block().unwrap();
                let parent_height = if b.parent == BlockId::GENESIS { Some(0) } else { self.get(b.parent).map(|p| p.height) };
                parent_height.is_some() && parent_height == b.height.checked_sub(1)
            });
            let Some(i) = ready else {
                // Blocks whose parent is known but whose height is wrong are
                // discarded.
                self.orphans.retain(|o| {
                    let b = o.as_block().unwrap();
                    b.parent != BlockId::GENESIS && !self.blocks.contains_key(&b.parent)
                });
                return linked;
            };
            let m = self.orphans.swap_remove(i);
            let b = m.as_block().unwrap();
            let key = (b.height, b.id());
            if self.best.map_or(true, |(h, id)| key.0 > h || (key.0 == h && key.1 < id)) {
                self.best = Some(key);
            }
            self.blocks.insert(key.1, m);
            linked = true;
        }
    }

    /// Longest tip, lowest id among equals.
    pub fn best_tip(&self) -> Option<&Block> {
        self.best.and_then(|(_, id)| self.get(id))
    }

    pub fn best_height(&self) -> u64 {
        self.best.map_or(0, |(h, _)| h)
    }

    /// Block ids from height 1 up to `tip`.
    pub fn chain_to(&self, tip: BlockId) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = tip;
        while cur != BlockId::GENESIS {
            out.push(cur);
            match self.get(cur) {
                Some(b) => cur = b.parent,
                None => break,
            }
        }
        out.reverse();
        out
    }

    pub fn best_chain(&self) -> Vec<BlockId> {
        self.best.map_or_else(Vec::new, |(_, id)| self.chain_to(id))
    }

    pub fn chain_messages(&self, tip: BlockId) -> BTreeSet<Message> {
        self.chain_to(tip).into_iter().filter_map(|id| self.blocks.get(&id).cloned()).collect()
    }
}

fn first_value(view: &ChainView, depth: u64) -> Option<Bit> {
    if view.best_height() < depth {
        return None;
    }
    let chain = view.best_chain();
    Some(view.get(chain[0]).and_then(|b| b.value).unwrap_or(0))
}

/// Proof-of-work longest-chain mining. With `decide` set, processors output
/// the value carried by the first block of the longest chain once that chain
/// is `decide` blocks long.
#[derive(Clone, Debug)]
pub struct Nakamoto {
    pub confirm_depth: u64,
    pub decide: Option<u64>,
}

impl Protocol for Nakamoto {
    fn name(&self) -> &str {
        "nakamoto"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let value = self.decide.map(|_| input_values(&ctx.inputs).into_iter().next().unwrap_or(0));
        Box::new(Miner {
            identifier: ctx.identifier,
            view: ChainView::default(),
            value,
            decide: self.decide,
            candidate: None,
        })
    }
}

fn candidate_on(view: &ChainView, parent: Option<&Block>, producer: Identifier, value: Option<Bit>) -> (BTreeSet<Message>, Message) {
    let (messages, parent_id, height) = match parent {
        Some(b) => ([view.message(b.id()).unwrap().clone()].into(), b.id(), b.height),
        None => (BTreeSet::new(), BlockId::GENESIS, 0),
    };
    let block = Block { parent: parent_id, producer, height: height + 1, slot: None, value };
    (messages, Message::block(block))
}

#[derive(Clone, Debug)]
struct Miner {
    identifier: Identifier,
    view: ChainView,
    value: Option<Bit>,
    decide: Option<u64>,
    candidate: Option<Message>,
}

impl Processor for Miner {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let mut out = StepOutput::idle();
        for m in input.received {
            self.view.insert(m.clone());
        }
        if let Some(c) = self.candidate.take() {
            if input.permissions.permits(&c) && self.view.insert(c.clone()) {
                out.broadcast.push(c);
            }
        }
        let (messages, candidate) = candidate_on(&self.view, self.view.best_tip(), self.identifier, self.value);
        out.requests.push(Request::Untimed { messages, extra: Some(candidate.clone()) });
        self.candidate = Some(candidate);
        if let Some(d) = self.decide {
            out.output = first_value(&self.view, d);
        }
        out
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "height": self.view.best_height(), "blocks": self.view.len() })
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

/// Withholds its blocks and publishes them only when that overtakes the
/// public chain. Gives up once the public chain is `give_up` blocks ahead.
#[derive(Clone, Debug)]
pub struct PrivateMining {
    pub give_up: u64,
}

impl Protocol for PrivateMining {
    fn name(&self) -> &str {
        "private-mining"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        Box::new(PrivateMiner {
            identifier: ctx.identifier,
            give_up: self.give_up,
            public: ChainView::default(),
            private: Vec::new(),
            base: None,
            candidate: None,
        })
    }
}

#[derive(Clone, Debug)]
struct PrivateMiner {
    identifier: Identifier,
    give_up: u64,
    public: ChainView,
    private: Vec<Message>,
    /// Public block the private branch forks from.
    base: Option<Block>,
    candidate: Option<Message>,
}

impl PrivateMiner {
    fn base_height(&self) -> u64 {
        self.base.as_ref().map_or(0, |b| b.height)
    }

    fn private_height(&self) -> u64 {
        self.base_height() + self.private.len() as u64
    }
}

impl Processor for PrivateMiner {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let mut out = StepOutput::idle();
        let (received, permissions) = match input.coalition {
            Some(c) => (&c.received, &c.permissions),
            None => (input.received, input.permissions),
        };
        for m in received {
            self.public.insert(m.clone());
        }
        if let Some(c) = self.candidate.take() {
            if permissions.permits(&c) {
                self.private.push(c);
            }
        }
        let public_height = self.public.best_height();
        if !self.private.is_empty() && self.private_height() > public_height && public_height > self.base_height() {
            for m in self.private.drain(..) {
                self.public.insert(m.clone());
                out.broadcast.push(m);
            }
        } else if public_height >= self.private_height() + self.give_up {
            self.private.clear();
        }
        if self.private.is_empty() {
            self.base = self.public.best_tip().cloned();
        }

        let (messages, candidate) = match self.private.last() {
            Some(tip) => {
                let b = tip.as_block().unwrap();
                let block = Block { parent: b.id(), producer: self.identifier, height: b.height + 1, slot: None, value: b.value };
                ([tip.clone()].into(), Message::block(block))
            }
            None => candidate_on(&self.public, self.base.as_ref(), self.identifier, None),
        };
        out.requests.push(Request::Untimed { messages, extra: Some(candidate.clone()) });
        self.candidate = Some(candidate);
        out
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "public": self.public.best_height(), "private": self.private.len() })
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

/// Longest-chain proof of stake. At `t` each processor asks to extend its
/// longest chain at `t + 1`; a leader broadcasts its signed block exactly at
/// the block's slot.
#[derive(Clone, Debug)]
pub struct LcPos {
    pub decide: Option<u64>,
}

impl Protocol for LcPos {
    fn name(&self) -> &str {
        "lc-pos"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let value = self.decide.map(|_| input_values(&ctx.inputs).into_iter().next().unwrap_or(0));
        Box::new(Staker { identifier: ctx.identifier, view: ChainView::default(), value, decide: self.decide })
    }
}

#[derive(Clone, Debug)]
struct Staker {
    identifier: Identifier,
    view: ChainView,
    value: Option<Bit>,
    decide: Option<u64>,
}

impl Processor for Staker {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let t = input.slot;
        let mut out = StepOutput::idle();
        for m in input.received {
            if m.as_block().is_some_and(|b| b.slot.is_some_and(|s| s <= t)) {
                self.view.insert(m.clone());
            }
        }
        let grant = input
            .permissions
            .extend
            .iter()
            .filter(|g| g.slot == t && g.producer == self.identifier)
            .filter_map(|g| {
                if g.tip == BlockId::GENESIS {
                    Some((0, g.tip))
                } else {
                    self.view.get(g.tip).map(|b| (b.height, g.tip))
                }
            })
            .max_by_key(|&(h, id)| (h, std::cmp::Reverse(id)));
        if let Some((height, tip)) = grant {
            let block = Block { parent: tip, producer: self.identifier, height: height + 1, slot: Some(t), value: self.value };
            let m = sign(&Message::block(block), self.identifier);
            self.view.insert(m.clone());
            out.broadcast.push(m);
        }
        let messages = self.view.best_tip().map_or_else(BTreeSet::new, |b| self.view.chain_messages(b.id()));
        out.requests.push(Request::Timed { slot: t + 1, messages, extra: None });
        if let Some(d) = self.decide {
            out.output = first_value(&self.view, d);
        }
        out
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "height": self.view.best_height() })
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

/// Number of block heights at which more than one distinct block was
/// broadcast.
pub fn count_forks(trace: &Trace) -> usize {
    let mut by_height: BTreeMap<u64, BTreeSet<BlockId>> = BTreeMap::new();
    for (_, _, m) in trace.broadcasts() {
        if let Some(b) = m.as_block() {
            by_height.entry(b.height).or_default().insert(b.id());
        }
    }
    by_height.values().filter(|s| s.len() > 1).count()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ChainViolation {
    /// A processor's confirmed prefix lost a block.
    Rollback { slot: Timeslot, processor: usize, height: u64 },
    /// Two processors confirmed different blocks at one height.
    Conflict { slot: Timeslot, processors: (usize, usize), height: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StallReport {
    pub processor: usize,
    pub window_start: Timeslot,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChainReport {
    pub consistency: Option<ChainViolation>,
    pub liveness: Option<StallReport>,
    /// Confirmed length of each non-faulty processor at the horizon.
    pub confirmed: Vec<usize>,
}

impl ChainReport {
    pub fn consistent(&self) -> bool {
        self.consistency.is_none()
    }

    pub fn live(&self) -> bool {
        self.liveness.is_none()
    }
}

/// Rebuilds every non-faulty processor's chain slot by slot from its
/// receipts and own broadcasts. A block is confirmed once `confirm_depth`
/// blocks follow it on the longest chain. Consistency requires confirmed
/// prefixes to only grow and to agree across processors; liveness requires
/// growth in every `window` slots after the first window.
pub fn check_consistency_liveness(trace: &Trace, confirm_depth: u64, window: Timeslot) -> ChainReport {
    let honest: Vec<usize> =
        trace.processors.iter().filter(|p| p.role == RoleTag::Honest).map(|p| p.index).collect();
    let mut views = vec![ChainView::default(); honest.len()];
    let mut confirmed: Vec<Vec<BlockId>> = vec![Vec::new(); honest.len()];
    let mut history: Vec<Vec<usize>> = vec![vec![0]; honest.len()];
    let mut global: BTreeMap<u64, (BlockId, usize)> = BTreeMap::new();
    let mut report = ChainReport::default();

    for t in 1..=trace.horizon {
        for (k, &p) in honest.iter().enumerate() {
            let rec = trace.record(t, p);
            for r in &rec.received {
                views[k].insert(r.message.clone());
            }
            for m in &rec.broadcast {
                views[k].insert(m.clone());
            }
            let chain = views[k].best_chain();
            let keep = chain.len().saturating_sub(confirm_depth as usize);
            let now = &chain[..keep];
            if report.consistency.is_none() {
                let old = &confirmed[k];
                if let Some(h) = (0..old.len()).find(|&i| now.get(i) != Some(&old[i])) {
                    report.consistency = Some(ChainViolation::Rollback { slot: t, processor: p, height: h as u64 + 1 });
                }
                for (i, id) in now.iter().enumerate() {
                    let height = i as u64 + 1;
                    match global.get(&height) {
                        Some(&(other, q)) if other != *id && report.consistency.is_none() => {
                            report.consistency = Some(ChainViolation::Conflict { slot: t, processors: (q, p), height });
                        }
                        Some(_) => {}
                        None => {
                            global.insert(height, (*id, p));
                        }
                    }
                }
            }
            confirmed[k] = now.to_vec();
            history[k].push(keep);
        }
    }

    if window > 0 {
        'outer: for (k, &p) in honest.iter().enumerate() {
            let mut start = window;
            while start + window <= trace.horizon {
                if history[k][(start + window) as usize] <= history[k][start as usize] {
                    report.liveness = Some(StallReport { processor: p, window_start: start });
                    break 'outer;
                }
                start += window;
            }
        }
    }
    report.confirmed = confirmed.iter().map(Vec::len).collect();
    report
}
