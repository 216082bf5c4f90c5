//! k-runs as deviation sets, the broadcast partition, compliant chains of
//! k-runs, and the chain argument against deterministic weakly decentralised
//! protocols.
//!
//! Processor 0 and processor 1 are the two deciders. A k-run is the set of
//! its deviations from the norms: input `{0}` for everyone, broadcasts when
//! instructed, delivery at the next slot.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumerate::{explore, DelayMenu, EnumError, Tape};
use crate::message::{Bit, Identifier, Message, Timeslot};
use crate::network::TimingRule;
use crate::permitter::{PermitterSpec, RandomnessMode};
use crate::processor::Protocol;
use crate::protocols::check_weak_decentralisation;
use crate::resource::ResourcePool;
use crate::scheduler::{run_execution, Instance, ProcessorSpec, Role, RunError};
use crate::setting::{Regime, SettingFlags};
use crate::trace::Trace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deviation {
    /// `(p)`: input `{1}` instead of `{0}`.
    Input(usize),
    /// `(p, p')`: what `p` broadcasts reaches `p'` two slots later.
    Late(usize, usize),
    /// `(p, t')`: what `p` is first instructed to broadcast goes out at `t'`.
    Defer(usize, Timeslot),
}

impl Deviation {
    /// The broadcasting processor of a timing deviation.
    fn sender(self) -> Option<usize> {
        match self {
            Deviation::Input(_) => None,
            Deviation::Late(p, _) | Deviation::Defer(p, _) => Some(p),
        }
    }
}

pub type DeviationSet = BTreeSet<Deviation>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KRun {
    pub deviations: DeviationSet,
    pub k: Timeslot,
}

#[derive(Debug, Error, PartialEq)]
pub enum ComplianceError {
    #[error("run failed: {0}")]
    Run(#[from] RunError),
    #[error(transparent)]
    Enumeration(#[from] EnumError),
    #[error("the network must be synchronous with delay bound 2")]
    Network,
    #[error("the permitter must be deterministic")]
    NotDeterministic,
    #[error("the protocol is not weakly decentralised")]
    NotWeaklyDecentralised,
    #[error("deviation {0:?} names a processor outside the system")]
    UnknownProcessor(Deviation),
    #[error("processor {processor} deferred from {from} to {to}")]
    BadDeferral { processor: usize, from: Timeslot, to: Timeslot },
    #[error("processor {processor} is instructed to broadcast at both {first} and {second}")]
    NotPartition { processor: usize, first: Timeslot, second: Timeslot },
    #[error("{procedure}({processor}): hypothesis failed: {hypothesis}")]
    Precondition { procedure: &'static str, processor: usize, hypothesis: String },
    #[error("{procedure}({processor}): postcondition failed: {detail}")]
    Postcondition { procedure: &'static str, processor: usize, detail: String },
    #[error("chain is not compliant at index {index}: {reason}")]
    NotCompliant { index: usize, reason: String },
}

/// What is fixed across all k-runs: protocol, setting, identities, pool
/// and permitter.
#[derive(Clone)]
pub struct KRunSystem {
    pub setting: SettingFlags,
    pub protocol: Arc<dyn Protocol>,
    pub identifiers: Vec<Identifier>,
    pub pool: ResourcePool,
    pub permitter: PermitterSpec,
}

impl KRunSystem {
    pub fn len(&self) -> usize {
        self.identifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers.is_empty()
    }

    fn check(&self) -> Result<(), ComplianceError> {
        if self.setting.network != (Regime::Synchronous { delta: 2 }) {
            return Err(ComplianceError::Network);
        }
        if !self.permitter.is_deterministic() {
            return Err(ComplianceError::NotDeterministic);
        }
        Ok(())
    }

    fn instance(&self, ones: &BTreeSet<usize>, roles: impl Fn(usize) -> Role) -> Instance {
        Instance {
            setting: self.setting,
            protocol: self.protocol.clone(),
            processors: self
                .identifiers
                .iter()
                .enumerate()
                .map(|(p, &identifier)| ProcessorSpec {
                    identifier,
                    inputs: [Message::general(Bit::from(ones.contains(&p)))].into(),
                    role: roles(p),
                })
                .collect(),
            pool: self.pool.clone(),
            permitter: self.permitter.clone(),
            randomness: RandomnessMode::FixedFunctionPerRun,
            seed: 0,
            record_state: false,
        }
    }
}

/// Applies a deviation set as a timing rule.
struct KRunTiming<'a> {
    deviations: &'a DeviationSet,
    deferred: BTreeSet<usize>,
    error: Option<ComplianceError>,
}

impl TimingRule for KRunTiming<'_> {
    fn regime(&self) -> Regime {
        Regime::Synchronous { delta: 2 }
    }

    fn delivery(&mut self, from: usize, to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        if self.deviations.contains(&Deviation::Late(from, to)) {
            sent + 2
        } else {
            sent + 1
        }
    }

    fn defer(&mut self, p: usize, instructed: Timeslot) -> Option<Timeslot> {
        if !self.deferred.insert(p) {
            return Some(instructed);
        }
        let to = self.deviations.iter().find_map(|d| match *d {
            Deviation::Defer(q, t) if q == p => Some(t),
            _ => None,
        })?;
        if to <= instructed && self.error.is_none() {
            self.error = Some(ComplianceError::BadDeferral { processor: p, from: instructed, to });
        }
        Some(to.max(instructed))
    }
}

/// The run over slots `1..=k` that `z` specifies.
pub fn expand_krun(z: &KRun, system: &KRunSystem) -> Result<Trace, ComplianceError> {
    system.check()?;
    let n = system.len();
    for d in &z.deviations {
        let ok = match *d {
            Deviation::Input(p) => p < n,
            Deviation::Late(p, q) => p < n && q < n && p != q,
            Deviation::Defer(p, t) => p < n && t <= z.k,
        };
        if !ok {
            return Err(ComplianceError::UnknownProcessor(*d));
        }
    }
    let ones: BTreeSet<usize> = z
        .deviations
        .iter()
        .filter_map(|d| match d {
            Deviation::Input(p) => Some(*p),
            _ => None,
        })
        .collect();
    let deferring: BTreeSet<usize> =
        z.deviations.iter().filter(|d| matches!(d, Deviation::Defer(..))).filter_map(|d| d.sender()).collect();
    let instance =
        system.instance(&ones, |p| if deferring.contains(&p) { Role::DelayFaulty } else { Role::Honest });
    let mut timing = KRunTiming { deviations: &z.deviations, deferred: BTreeSet::new(), error: None };
    let trace = run_execution(&instance, &mut timing, z.k)?;
    match timing.error {
        Some(e) => Err(e),
        None => Ok(trace),
    }
}

/// `B_t` for `t < k` with the never-broadcasters split by decider, and the
/// sizes of `M_t` and `Q_t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BroadcastPartition {
    pub k: Timeslot,
    pub by_slot: BTreeMap<Timeslot, BTreeSet<usize>>,
    pub never_zero: BTreeSet<usize>,
    pub never_one: BTreeSet<usize>,
    /// `|M_t|`: distinct messages instructed at slots up to `t`.
    pub messages: Vec<usize>,
    /// `|Q_t|`: processors that received a non-empty permission set by `t`.
    pub permitted: Vec<usize>,
    pub runs: usize,
}

impl BroadcastPartition {
    pub fn slot_of(&self, p: usize) -> Option<Timeslot> {
        self.by_slot.iter().find(|(_, s)| s.contains(&p)).map(|(&t, _)| t)
    }

    pub fn broadcasters(&self) -> BTreeSet<usize> {
        self.by_slot.values().flatten().copied().collect()
    }

    /// `P_{>t}`: broadcasters after `t` and before `k`, plus both deciders,
    /// ascending.
    pub fn later(&self, t: Timeslot) -> Vec<usize> {
        let mut out: BTreeSet<usize> = self.by_slot.range(t + 1..self.k).flat_map(|(_, s)| s.iter().copied()).collect();
        out.insert(0);
        out.insert(1);
        out.into_iter().collect()
    }
}

/// Runs `body` on every run in which every processor may defer and every
/// delivery may take one or two slots, for every assignment of `{0}` or
/// `{1}` inputs.
fn for_each_pi_run(
    system: &KRunSystem,
    horizon: Timeslot,
    budget: usize,
    mut body: impl FnMut(&BTreeSet<usize>, &Trace) -> Result<(), ComplianceError>,
) -> Result<usize, ComplianceError> {
    system.check()?;
    let n = system.len();
    let everyone: BTreeSet<usize> = (0..n).collect();
    let mut total = 0;
    for mask in 0u64..(1 << n) {
        let ones: BTreeSet<usize> = (0..n).filter(|&p| mask >> p & 1 == 1).collect();
        let instance = system.instance(&ones, |_| Role::DelayFaulty);
        let remaining = budget.saturating_sub(total);
        if remaining == 0 {
            return Err(EnumError::Budget(budget).into());
        }
        let count = explore(remaining, |tape: &mut Tape| {
            let mut menu = DelayMenu::new(Regime::Synchronous { delta: 2 }, horizon, &everyone, tape);
            menu.per_receiver_honest = true;
            let trace = run_execution(&instance, &mut menu, horizon)?;
            body(&ones, &trace)
        })
        .map_err(|e| match e {
            EnumError::Budget(_) => EnumError::Budget(budget),
            other => other,
        })??;
        total += count;
    }
    Ok(total)
}

pub fn compute_partition(system: &KRunSystem, k: Timeslot, budget: usize) -> Result<BroadcastPartition, ComplianceError> {
    let mut first: BTreeMap<usize, Timeslot> = BTreeMap::new();
    let mut messages: Vec<BTreeSet<Message>> = vec![BTreeSet::new(); k as usize];
    let mut permitted: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k as usize];
    let horizon = k.saturating_sub(1).max(1);
    let runs = for_each_pi_run(system, horizon, budget, |_, trace| {
        for t in 1..k.min(trace.horizon + 1) {
            for p in 0..trace.processors.len() {
                let rec = trace.record(t, p);
                if !rec.instructed.is_empty() {
                    match first.get(&p) {
                        Some(&s) if s != t => {
                            return Err(ComplianceError::NotPartition { processor: p, first: s.min(t), second: s.max(t) })
                        }
                        _ => {
                            first.insert(p, t);
                        }
                    }
                    messages[t as usize].extend(rec.instructed.iter().cloned());
                }
                if !rec.permissions.is_empty() {
                    permitted[t as usize].insert(p);
                }
            }
        }
        Ok(())
    })?;
    let mut by_slot: BTreeMap<Timeslot, BTreeSet<usize>> = (1..k).map(|t| (t, BTreeSet::new())).collect();
    for (&p, &t) in &first {
        by_slot.entry(t).or_default().insert(p);
    }
    let mut never_zero = BTreeSet::new();
    let mut never_one = BTreeSet::new();
    for p in (0..system.len()).filter(|p| !first.contains_key(p)) {
        if p == 1 {
            never_one.insert(p);
        } else {
            never_zero.insert(p);
        }
    }
    Ok(BroadcastPartition {
        k,
        by_slot,
        never_zero,
        never_one,
        messages: cumulative(&messages),
        permitted: cumulative(&permitted),
        runs,
    })
}

fn cumulative<T: Ord + Clone>(sets: &[BTreeSet<T>]) -> Vec<usize> {
    let mut acc = BTreeSet::new();
    sets.iter()
        .skip(1)
        .map(|s| {
            acc.extend(s.iter().cloned());
            acc.len()
        })
        .collect()
}

/// Least `t <= max_t` by which both deciders have output in every run, or
/// `None` if some run leaves one of them undecided through `max_t`.
pub fn find_decision_bound(system: &KRunSystem, max_t: Timeslot, budget: usize) -> Result<Option<Timeslot>, ComplianceError> {
    let mut worst: Option<Timeslot> = Some(0);
    for_each_pi_run(system, max_t, budget, |_, trace| {
        let outs = trace.outputs();
        for p in [0, 1] {
            worst = match (worst, outs[p]) {
                (Some(w), Some((_, t))) => Some(w.max(t)),
                _ => None,
            };
        }
        Ok(())
    })?;
    Ok(worst)
}

/// The part of a run fixed through slot `t`: inputs and each processor's
/// timed receipts.
pub fn t_projection(ones: &BTreeSet<usize>, trace: &Trace, t: Timeslot) -> Vec<u8> {
    let mut out: Vec<u8> = ones.iter().flat_map(|&p| (p as u32).to_be_bytes()).collect();
    for s in 1..=t.min(trace.horizon) {
        for p in 0..trace.processors.len() {
            out.push(0xfc);
            let mut receipts: Vec<(usize, Timeslot, Vec<u8>)> =
                trace.record(s, p).received.iter().map(|r| (r.from, r.sent, r.message.encode())).collect();
            receipts.sort();
            for (from, sent, m) in receipts {
                out.extend_from_slice(&(from as u32).to_be_bytes());
                out.extend_from_slice(&sent.to_be_bytes());
                out.extend_from_slice(&m);
            }
        }
    }
    out
}

/// Number of distinct `t`-specifications over all runs.
pub fn count_t_specifications(system: &KRunSystem, t: Timeslot, budget: usize) -> Result<usize, ComplianceError> {
    let mut seen = BTreeSet::new();
    for_each_pi_run(system, t, budget, |ones, trace| {
        seen.insert(t_projection(ones, trace, t));
        Ok(())
    })?;
    Ok(seen.len())
}

fn timing_part(z: &DeviationSet, keep: impl Fn(Option<Timeslot>) -> bool, partition: &BroadcastPartition) -> DeviationSet {
    z.iter().filter(|d| d.sender().is_some_and(|p| keep(partition.slot_of(p)))).copied().collect()
}

/// `ζ_{≥t}`: timing deviations of processors broadcasting at `t` or later.
pub fn zeta_from(z: &DeviationSet, t: Timeslot, partition: &BroadcastPartition) -> DeviationSet {
    timing_part(z, |s| s.is_some_and(|s| s >= t), partition)
}

/// `ζ_{<t}`.
pub fn zeta_before(z: &DeviationSet, t: Timeslot, partition: &BroadcastPartition) -> DeviationSet {
    timing_part(z, |s| s.is_some_and(|s| s < t), partition)
}

/// Builds chains of k-runs by the remove/add/change procedures, checking
/// each procedure's hypotheses and conclusions as it goes.
pub struct ChainBuilder<'a> {
    pub partition: &'a BroadcastPartition,
    pub seq: Vec<DeviationSet>,
}

impl<'a> ChainBuilder<'a> {
    pub fn new(partition: &'a BroadcastPartition, start: DeviationSet) -> Self {
        ChainBuilder { partition, seq: vec![start] }
    }

    pub fn last(&self) -> &DeviationSet {
        self.seq.last().expect("chains are never empty")
    }

    fn push(&mut self, z: DeviationSet) {
        self.seq.push(z);
    }

    fn late_all(p: usize, others: &[usize]) -> impl Iterator<Item = Deviation> + '_ {
        others.iter().map(move |&q| Deviation::Late(p, q))
    }

    pub fn remove(&mut self, p: usize) -> Result<(), ComplianceError> {
        let Some(t) = self.partition.slot_of(p) else { return Ok(()) };
        let k = self.partition.k;
        let from = zeta_from(self.last(), t, self.partition);
        if !from.is_empty() {
            return Err(ComplianceError::Precondition {
                procedure: "remove",
                processor: p,
                hypothesis: format!("no timing deviations from slot {t} on, found {from:?}"),
            });
        }
        let before = zeta_before(self.last(), t, self.partition);
        let others = self.partition.later(t);
        for j in t + 1..=k {
            for &q in &others {
                self.remove(q)?;
                let mut z = self.last().clone();
                z.insert(Deviation::Late(p, q));
                self.push(z);
                self.add(q)?;
            }
            let mut z = self.last().clone();
            for d in Self::late_all(p, &others) {
                z.remove(&d);
            }
            z.remove(&Deviation::Defer(p, j - 1));
            z.insert(Deviation::Defer(p, j));
            self.push(z);
        }
        let after = zeta_from(self.last(), t, self.partition);
        if after != [Deviation::Defer(p, k)].into() || zeta_before(self.last(), t, self.partition) != before {
            return Err(ComplianceError::Postcondition {
                procedure: "remove",
                processor: p,
                detail: format!("ended with {after:?} from slot {t}"),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, p: usize) -> Result<(), ComplianceError> {
        let Some(t) = self.partition.slot_of(p) else { return Ok(()) };
        let k = self.partition.k;
        let from = zeta_from(self.last(), t, self.partition);
        if from != [Deviation::Defer(p, k)].into() {
            return Err(ComplianceError::Precondition {
                procedure: "add",
                processor: p,
                hypothesis: format!("exactly the deferral to {k} from slot {t} on, found {from:?}"),
            });
        }
        let before = zeta_before(self.last(), t, self.partition);
        let others = self.partition.later(t);
        for j in (t..k).rev() {
            let mut z = self.last().clone();
            z.remove(&Deviation::Defer(p, j + 1));
            if j > t {
                z.insert(Deviation::Defer(p, j));
            }
            z.extend(Self::late_all(p, &others));
            self.push(z);
            for &q in &others {
                self.remove(q)?;
                let mut z = self.last().clone();
                z.remove(&Deviation::Late(p, q));
                self.push(z);
                self.add(q)?;
            }
        }
        let after = zeta_from(self.last(), t, self.partition);
        if !after.is_empty() || zeta_before(self.last(), t, self.partition) != before {
            return Err(ComplianceError::Postcondition {
                procedure: "add",
                processor: p,
                detail: format!("ended with {after:?} from slot {t}"),
            });
        }
        Ok(())
    }

    pub fn change(&mut self, p: usize) -> Result<(), ComplianceError> {
        let start = self.last().clone();
        if start.iter().any(|d| d.sender().is_some()) {
            return Err(ComplianceError::Precondition {
                procedure: "change",
                processor: p,
                hypothesis: format!("no timing deviations, found {start:?}"),
            });
        }
        self.remove(p)?;
        let mut z = self.last().clone();
        z.insert(Deviation::Input(p));
        self.push(z);
        self.add(p)?;
        let mut want = start;
        want.insert(Deviation::Input(p));
        if *self.last() != want {
            return Err(ComplianceError::Postcondition {
                procedure: "change",
                processor: p,
                detail: format!("ended with {:?}", self.last()),
            });
        }
        Ok(())
    }
}

/// `ζ_0 = ∅`, then every processor's input flipped: first each of `P_{>1}`
/// by `change`, then the rest at once.
pub fn build_full_chain(partition: &BroadcastPartition, n: usize) -> Result<Vec<DeviationSet>, ComplianceError> {
    let mut b = ChainBuilder::new(partition, DeviationSet::new());
    for p in partition.later(1) {
        b.change(p)?;
    }
    let mut last = b.last().clone();
    last.extend((0..n).map(Deviation::Input));
    if last != *b.last() {
        b.push(last);
    }
    Ok(b.seq)
}

/// Expands k-runs, each at most once.
pub struct Expander<'a> {
    pub system: &'a KRunSystem,
    pub k: Timeslot,
    cache: HashMap<DeviationSet, Trace>,
}

impl<'a> Expander<'a> {
    pub fn new(system: &'a KRunSystem, k: Timeslot) -> Self {
        Expander { system, k, cache: HashMap::new() }
    }

    pub fn trace(&mut self, z: &DeviationSet) -> Result<&Trace, ComplianceError> {
        if !self.cache.contains_key(z) {
            let t = expand_krun(&KRun { deviations: z.clone(), k: self.k }, self.system)?;
            self.cache.insert(z.clone(), t);
        }
        Ok(&self.cache[z])
    }
}

/// For each adjacent pair, the decider that cannot tell them apart. Fails
/// on the first pair neither can, or the first k-run with two deferring
/// processors in one `B_t`.
pub fn is_compliant(
    seq: &[DeviationSet],
    partition: &BroadcastPartition,
    expander: &mut Expander<'_>,
) -> Result<Vec<usize>, ComplianceError> {
    for (index, z) in seq.iter().enumerate() {
        for (t, members) in &partition.by_slot {
            let faulty: BTreeSet<usize> = z
                .iter()
                .filter_map(|d| match *d {
                    Deviation::Defer(p, _) if members.contains(&p) => Some(p),
                    _ => None,
                })
                .collect();
            if faulty.len() > 1 {
                return Err(ComplianceError::NotCompliant {
                    index,
                    reason: format!("processors {faulty:?} in the slot-{t} class both defer"),
                });
            }
        }
    }
    let k = expander.k;
    let mut designated = Vec::with_capacity(seq.len().saturating_sub(1));
    for (index, pair) in seq.windows(2).enumerate() {
        let a: Vec<Vec<u8>> = {
            let t = expander.trace(&pair[0])?;
            vec![t.view(0, k), t.view(1, k)]
        };
        let b = expander.trace(&pair[1])?;
        match (0..2).find(|&i| a[i] == b.view(i, k)) {
            Some(i) => designated.push(i),
            None => {
                return Err(ComplianceError::NotCompliant {
                    index,
                    reason: format!("both deciders see a difference between {:?} and {:?}", pair[0], pair[1]),
                })
            }
        }
    }
    Ok(designated)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Breach {
    /// A decider has no output by `k`.
    OutputByK,
    Agreement,
    Validity,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TheoremReport {
    pub k: Option<Timeslot>,
    pub partition: Option<BroadcastPartition>,
    pub chain: Vec<DeviationSet>,
    pub designated: Vec<usize>,
    /// `(p0, p1)` outputs by `k` along the chain.
    pub outputs: Vec<(Option<Bit>, Option<Bit>)>,
    /// Each step keeps the designated decider's output.
    pub propagation_holds: bool,
    pub breach: Option<(usize, Breach)>,
}

/// Runs the whole chain argument on `system`. Declines protocols that are
/// not deterministic or not weakly decentralised.
pub fn demonstrate_theorem_3_3(system: &KRunSystem, max_t: Timeslot, budget: usize) -> Result<TheoremReport, ComplianceError> {
    system.check()?;
    let n = system.len();
    for ones in [BTreeSet::new(), (0..n).collect::<BTreeSet<usize>>()] {
        let deviations = ones.iter().map(|&p| Deviation::Input(p)).collect();
        let trace = expand_krun(&KRun { deviations, k: max_t }, system)?;
        if !check_weak_decentralisation(&trace) {
            return Err(ComplianceError::NotWeaklyDecentralised);
        }
    }
    let Some(k) = find_decision_bound(system, max_t, budget)? else {
        return Ok(TheoremReport {
            k: None,
            partition: None,
            chain: Vec::new(),
            designated: Vec::new(),
            outputs: Vec::new(),
            propagation_holds: true,
            breach: Some((0, Breach::OutputByK)),
        });
    };
    let partition = compute_partition(system, k, budget)?;
    let chain = build_full_chain(&partition, n)?;
    let mut expander = Expander::new(system, k);
    let designated = is_compliant(&chain, &partition, &mut expander)?;
    let mut outputs = Vec::with_capacity(chain.len());
    for z in &chain {
        let t = expander.trace(z)?;
        outputs.push((t.output_of(0), t.output_of(1)));
    }
    let get = |o: (Option<Bit>, Option<Bit>), i: usize| if i == 0 { o.0 } else { o.1 };
    let propagation_holds = designated.iter().enumerate().all(|(j, &i)| get(outputs[j], i) == get(outputs[j + 1], i));
    let last = outputs.len() - 1;
    let breach = outputs.iter().enumerate().find_map(|(j, &(a, b))| match (a, b) {
        (None, _) | (_, None) => Some((j, Breach::OutputByK)),
        (Some(x), Some(y)) if x != y => Some((j, Breach::Agreement)),
        (Some(x), _) if j == 0 && x != 0 => Some((j, Breach::Validity)),
        (Some(x), _) if j == last && x != 1 => Some((j, Breach::Validity)),
        _ => None,
    });
    Ok(TheoremReport { k: Some(k), partition: Some(partition), chain, designated, outputs, propagation_holds, breach })
}

/// Four processors running the vote relay: the two deciders never hold
/// resource, processor 2 holds it at slot 1 and processor 3 at slot 2, so
/// they broadcast at slots 2 and 3. Decisions at slot 4.
pub fn echo_decide_system() -> KRunSystem {
    let ids: Vec<Identifier> = (0..4).map(|i| Identifier::new(i).unwrap()).collect();
    KRunSystem {
        setting: SettingFlags {
            timing: crate::setting::Timing::Untimed,
            sizing: crate::setting::Sizing::Sized,
            permits: crate::setting::Permits::Single,
            auth: crate::setting::Auth::Authenticated,
            network: Regime::Synchronous { delta: 2 },
            permissioned: false,
        },
        protocol: Arc::new(crate::protocols::EchoDecide { decide_at: 4 }),
        pool: ResourcePool::SlotOwners { owners: [(1, ids[2]), (2, ids[3])].into(), filler_base: 1000, balance: 1.0 },
        identifiers: ids,
        permitter: PermitterSpec::Gate,
    }
}

/// Two idle processors.
pub fn idle_system() -> KRunSystem {
    let ids: Vec<Identifier> = (0..2).map(|i| Identifier::new(i).unwrap()).collect();
    KRunSystem {
        setting: echo_decide_system().setting,
        protocol: Arc::new(crate::processor::IdleProtocol),
        pool: ResourcePool::constant([(ids[0], 0.0), (ids[1], 0.0)]),
        identifiers: ids,
        permitter: PermitterSpec::Gate,
    }
}
