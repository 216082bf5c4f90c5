//! Byzantine Broadcast for the sized, timed, authenticated multi-permitter
//! setting.
//!
//! Insiders are the processors whose identifiers hold stake at `(0, {})`.
//! They relay signature chains `z_{U*, U1, .., Ui}` in rounds `t*_i`;
//! outsiders only listen, `Δ` slots ahead of each round.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{sign, Bit, Identifier, Message, Timeslot};
use crate::permission::Request;
use crate::processor::{Processor, Protocol, SpawnContext, StepInput, StepOutput};
use crate::trace::{RoleTag, Trace};

/// `t*_i = 2 + 2iΔ`.
pub fn pos_bb_round_time(i: u64, delta: u64) -> Timeslot {
    2 + i * 2 * delta
}

/// Largest number of identifiers whose balances sum to at most `q` times the
/// total. Taking the smallest balances first is optimal.
pub fn compute_k(balances: &BTreeMap<Identifier, f64>, q: f64) -> usize {
    let total: f64 = balances.values().sum();
    let budget = q * total;
    let mut sorted: Vec<f64> = balances.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut k = 0;
    for b in sorted {
        if sum + b > budget + 1e-12 * total.max(1.0) {
            break;
        }
        sum += b;
        k += 1;
    }
    k
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("stake support must be non-empty with positive balances")]
    EmptySupport,
    #[error("q = {0} is outside [0, 1)")]
    BadQ(f64),
    #[error("delta must be at least 1")]
    BadDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBConfig {
    pub delta: u64,
    pub q: f64,
    pub ustar: BTreeMap<Identifier, f64>,
    pub k: usize,
}

impl BBConfig {
    pub fn new(delta: u64, q: f64, ustar: BTreeMap<Identifier, f64>) -> Result<Self, ConfigError> {
        if delta == 0 {
            return Err(ConfigError::BadDelta);
        }
        if !(0.0..1.0).contains(&q) {
            return Err(ConfigError::BadQ(q));
        }
        if ustar.is_empty() || ustar.values().any(|&b| b.is_nan() || b <= 0.0) {
            return Err(ConfigError::EmptySupport);
        }
        let k = compute_k(&ustar, q);
        Ok(BBConfig { delta, q, ustar, k })
    }

    pub fn round_time(&self, i: usize) -> Timeslot {
        pos_bb_round_time(i as u64, self.delta)
    }

    /// `t*_{k+1}`, the output slot.
    pub fn decision_slot(&self) -> Timeslot {
        self.round_time(self.k + 1)
    }

    /// The round `i` if `m ∈ M_i`: a bit signed first by the general and
    /// then by `i` distinct stake holders.
    pub fn round_of(&self, m: &Message) -> Option<(usize, Bit)> {
        let z = m.as_bit()?;
        if m.timestamp.is_some() {
            return None;
        }
        let (first, rest) = m.signatures.split_first()?;
        if !first.is_general() {
            return None;
        }
        let mut seen = BTreeSet::new();
        for u in rest {
            if !self.ustar.contains_key(u) || !seen.insert(*u) {
                return None;
            }
        }
        Some((rest.len(), z))
    }

    /// Slot by which a message of round `i` must have arrived to count.
    fn deadline(&self, i: usize, insider: bool) -> Option<Timeslot> {
        if insider {
            Some(self.round_time(i))
        } else if i == 0 {
            None
        } else {
            Some(self.round_time(i) - self.delta)
        }
    }
}

#[derive(Clone, Debug)]
pub struct PosBb {
    pub config: BBConfig,
}

impl Protocol for PosBb {
    fn name(&self) -> &str {
        "pos-bb"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let insider = self.config.ustar.contains_key(&ctx.identifier);
        let mut pending = Vec::new();
        if insider {
            pending.extend(ctx.inputs.iter().filter(|m| self.config.round_of(m).is_some()).cloned());
        }
        Box::new(PosBbMachine {
            config: self.config.clone(),
            identifier: ctx.identifier,
            insider,
            pending,
            values: BTreeSet::new(),
        })
    }
}

#[derive(Clone, Debug)]
struct PosBbMachine {
    config: BBConfig,
    identifier: Identifier,
    insider: bool,
    /// Received messages of some round not yet processed.
    pending: Vec<Message>,
    /// `O_p`.
    values: BTreeSet<Bit>,
}

impl PosBbMachine {
    fn process(&mut self, round: usize, t: Timeslot, out: &mut StepOutput) {
        let mut keep = Vec::with_capacity(self.pending.len());
        for m in std::mem::take(&mut self.pending) {
            let Some((i, z)) = self.config.round_of(&m) else { continue };
            if i < round {
                continue;
            }
            if i > round {
                keep.push(m);
                continue;
            }
            if self.values.insert(z) && self.insider && i <= self.config.k && t == self.config.round_time(i) {
                out.broadcast.push(sign(&m, self.identifier));
            }
        }
        self.pending = keep;
    }
}

impl Processor for PosBbMachine {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let t = input.slot;
        let mut out = StepOutput::idle();
        let last = self.config.k + 1;
        self.pending.extend(
            input.received.iter().filter(|m| self.config.round_of(m).is_some_and(|(i, _)| i <= last)).cloned(),
        );
        if self.insider && t == 1 {
            out.requests.push(Request::Timed { slot: 0, messages: BTreeSet::new(), extra: None });
        }
        for round in 0..=self.config.k + 1 {
            if self.config.deadline(round, self.insider) == Some(t) {
                self.process(round, t, &mut out);
            }
        }
        if t == self.config.decision_slot() {
            let z = if self.values.len() == 1 { *self.values.iter().next().unwrap() } else { 0 };
            out.output = Some(z);
        }
        out
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "insider": self.insider, "values": self.values })
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DaggerLemma {
    /// A value reaching an honest insider by round `i <= k` reaches every
    /// honest processor by round `i + 1`.
    Relay,
    /// A value carried by a round-`k+1` message received in time reaches
    /// every honest processor by round `k + 1`.
    LastRound,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DaggerViolation {
    pub lemma: DaggerLemma,
    pub value: Bit,
    pub p: usize,
    pub p_prime: usize,
}

/// `i_{z,p}` for every processor and value, recomputed from the receipts in
/// `trace`.
pub fn first_rounds(trace: &Trace, config: &BBConfig) -> Vec<BTreeMap<Bit, usize>> {
    trace
        .processors
        .iter()
        .map(|info| {
            let insider = config.ustar.contains_key(&info.identifier);
            let mut first: BTreeMap<Bit, usize> = BTreeMap::new();
            let mut note = |i: usize, z: Bit, at: Timeslot| {
                if config.deadline(i, insider).is_some_and(|d| at <= d) {
                    let e = first.entry(z).or_insert(i);
                    *e = (*e).min(i);
                }
            };
            if insider {
                for m in &info.inputs {
                    if let Some((i, z)) = config.round_of(m) {
                        note(i, z, 0);
                    }
                }
            }
            for t in 1..=trace.horizon {
                for r in &trace.record(t, info.index).received {
                    if let Some((i, z)) = config.round_of(&r.message) {
                        if i <= config.k + 1 {
                            note(i, z, t);
                        }
                    }
                }
            }
            first
        })
        .collect()
}

/// Checks both relay lemmas on a trace; returns every violating triple.
pub fn check_dagger_lemmas(trace: &Trace, config: &BBConfig) -> Vec<DaggerViolation> {
    let first = first_rounds(trace, config);
    let honest: Vec<usize> =
        trace.processors.iter().filter(|p| p.role == RoleTag::Honest).map(|p| p.index).collect();
    let mut out = Vec::new();
    for &p in &honest {
        if !config.ustar.contains_key(&trace.processors[p].identifier) {
            continue;
        }
        for (&z, &i) in &first[p] {
            if i > config.k {
                continue;
            }
            for &q in &honest {
                if first[q].get(&z).map_or(true, |&j| j > i + 1) {
                    out.push(DaggerViolation { lemma: DaggerLemma::Relay, value: z, p, p_prime: q });
                }
            }
        }
    }
    let last = config.decision_slot();
    for info in &trace.processors {
        let mut carried = BTreeSet::new();
        for t in 1..=last.min(trace.horizon) {
            for r in &trace.record(t, info.index).received {
                if let Some((i, z)) = config.round_of(&r.message) {
                    if i == config.k + 1 {
                        carried.insert(z);
                    }
                }
            }
        }
        for z in carried {
            for &q in &honest {
                if first[q].get(&z).map_or(true, |&j| j > config.k + 1) {
                    out.push(DaggerViolation { lemma: DaggerLemma::LastRound, value: z, p: info.index, p_prime: q });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u(n: u32) -> Identifier {
        Identifier::new(n).unwrap()
    }

    #[test]
    fn round_times() {
        assert_eq!(pos_bb_round_time(1, 2), 6);
        assert_eq!(pos_bb_round_time(0, 7), 2);
        assert_eq!(pos_bb_round_time(3, 2), 14);
    }

    #[test]
    fn k_examples() {
        let three: BTreeMap<_, _> = (0..3).map(|i| (u(i), 1.0)).collect();
        assert_eq!(compute_k(&three, 0.5), 1);
        assert_eq!(compute_k(&three, 0.0), 0);
        let four: BTreeMap<_, _> = [(u(0), 1.0), (u(1), 1.0), (u(2), 1.0), (u(3), 3.0)].into();
        assert_eq!(compute_k(&four, 0.5), 3);
    }

    #[test]
    fn round_membership() {
        let cfg = BBConfig::new(2, 0.5, (0..3).map(|i| (u(i), 1.0)).collect()).unwrap();
        let m = sign(&sign(&Message::general(1), u(0)), u(2));
        assert_eq!(cfg.round_of(&m), Some((2, 1)));
        assert_eq!(cfg.round_of(&sign(&sign(&Message::general(1), u(0)), u(0))), None);
        assert_eq!(cfg.round_of(&sign(&Message::general(1), u(9))), None);
        assert_eq!(cfg.round_of(&sign(&Message::bit(1), u(0))), None);
    }
}
