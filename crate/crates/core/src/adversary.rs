//! Adversaries: scheduled delays, the two simulation attacks on
//! majority-style protocols, the eclipse instance triple, and view
//! comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::message::{Bit, Identifier, Message, Payload, Timeslot};
use crate::network::{MinimalDelay, Partition, TimingRule};
use crate::permission::PermissionSet;
use crate::permitter::{keyed_uniform, PermitterSpec, RandomnessMode};
use crate::processor::{input_values, CoalitionView, Processor, Protocol, SpawnContext, StepInput, StepOutput};
use crate::resource::{check_q_bounded, ResourcePool};
use crate::scheduler::{Instance, ProcessorSpec, Role};
use crate::setting::{Regime, SettingFlags};
use crate::trace::Trace;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("input of processor {0} holds both values")]
    MalformedInput(usize),
    #[error("target {target} is out of range for {n} processors")]
    BadTarget { target: usize, n: usize },
    #[error("expected {expected} processors, got {got}")]
    Size { expected: usize, got: usize },
    #[error("pool must give the first two identifiers equal positive balance and the third none: {0}")]
    UnequalBalances(String),
}

/// Which processors the adversary holds and what they run.
#[derive(Clone)]
pub struct AdversaryStrategy {
    pub controlled: BTreeSet<usize>,
    /// Replacement machine for controlled processors. `None` leaves them on
    /// the protocol's machine with only delays under adversary control.
    pub machine: Option<Arc<dyn Protocol>>,
}

impl AdversaryStrategy {
    /// Delay-only control of `controlled`.
    pub fn delay_only(controlled: BTreeSet<usize>) -> Self {
        AdversaryStrategy { controlled, machine: None }
    }

    pub fn role(&self, p: usize) -> Role {
        if !self.controlled.contains(&p) {
            return Role::Honest;
        }
        match &self.machine {
            Some(m) => Role::Controlled(m.clone()),
            None => Role::DelayFaulty,
        }
    }

    /// Whether the controlled identifiers stay within a `q` share at every
    /// `(t, M)` the trace reached.
    pub fn q_bounded(&self, instance: &Instance, trace: &Trace, q: f64) -> bool {
        if instance.setting.permissioned {
            let n = instance.processors.len();
            return crate::resource::check_q_bounded_count(self.controlled.len(), n, q);
        }
        let adversary: BTreeSet<Identifier> =
            self.controlled.iter().map(|&p| instance.processors[p].identifier).collect();
        check_q_bounded(&instance.pool, &adversary, &instance.identifiers(), q, &trace.reached_points())
    }
}

/// A delay adversary given as data: per-processor deferrals of instructed
/// slots, and extra per-link delay on top of next-slot delivery, capped at
/// the regime's deadline.
#[derive(Clone, Debug, Default)]
pub struct DelaySchedule {
    pub deferrals: BTreeMap<(usize, Timeslot), Option<Timeslot>>,
    pub extra: BTreeMap<(usize, usize), u64>,
}

pub struct ScheduledTiming {
    pub regime: Regime,
    pub schedule: DelaySchedule,
}

impl TimingRule for ScheduledTiming {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, from: usize, to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        let extra = self.schedule.extra.get(&(from, to)).copied().unwrap_or(0);
        (sent + 1 + extra).min(self.regime.deadline(sent))
    }

    fn defer(&mut self, p: usize, instructed: Timeslot) -> Option<Timeslot> {
        self.schedule.deferrals.get(&(p, instructed)).copied().unwrap_or(Some(instructed))
    }
}

/// Random delays that depend on the receiver and slot but not the sender, so
/// that instances which swap who sends what stay coupled.
pub struct ReceiverKeyedDelay {
    pub regime: Regime,
    pub seed: u64,
}

impl TimingRule for ReceiverKeyedDelay {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, _from: usize, to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        let mut key = b"receiver-delay".to_vec();
        key.extend_from_slice(&(to as u64).to_be_bytes());
        key.extend_from_slice(&sent.to_be_bytes());
        let span = self.regime.deadline(sent) - sent;
        sent + 1 + (keyed_uniform(self.seed, &key) * span as f64) as u64 % span
    }
}

/// `s̄`: every general-signed value flipped.
pub fn reverse_input(inputs: &BTreeSet<Message>) -> BTreeSet<Message> {
    inputs
        .iter()
        .map(|m| match (&m.payload, m.signatures.as_slice()) {
            (Payload::Bit(z), [g]) if g.is_general() => Message::general(1 - z),
            _ => m.clone(),
        })
        .collect()
}

fn check_inputs(s: &[BTreeSet<Message>]) -> Result<(), AdversaryError> {
    for (i, inputs) in s.iter().enumerate() {
        if input_values(inputs).len() > 1 {
            return Err(AdversaryError::MalformedInput(i));
        }
    }
    Ok(())
}

/// Processor 0 ignores its own input and runs the honest machines of the
/// listed identities on their own inputs, sending everything they send.
#[derive(Clone)]
pub struct Simulation {
    pub base: Arc<dyn Protocol>,
    pub simulated: Vec<(Identifier, BTreeSet<Message>)>,
    /// Forward simulated permission requests as one's own and hand the
    /// responses back.
    pub forward_requests: bool,
}

impl Protocol for Simulation {
    fn name(&self) -> &str {
        "simulation"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let machines = self
            .simulated
            .iter()
            .enumerate()
            .map(|(k, (id, inputs))| {
                let sub = SpawnContext { index: ctx.index * 1000 + k, identifier: *id, inputs: inputs.clone() };
                self.base.spawn(&sub)
            })
            .collect::<Vec<_>>();
        let n = machines.len();
        Box::new(Simulator { machines, forward: self.forward_requests, internal: vec![BTreeSet::new(); n] })
    }
}

#[derive(Clone)]
struct Simulator {
    machines: Vec<Box<dyn Processor>>,
    forward: bool,
    /// What each simulated machine receives from the others at the next slot.
    internal: Vec<BTreeSet<Message>>,
}

impl Processor for Simulator {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let mut out = StepOutput::idle();
        let empty = PermissionSet::empty();
        let (received, permissions) = match input.coalition {
            Some(CoalitionView { received, permissions }) => (received, permissions),
            None => (input.received, input.permissions),
        };
        let n = self.machines.len();
        let mut next = vec![BTreeSet::new(); n];
        for k in 0..n {
            let mut seen: BTreeSet<Message> = received.clone();
            seen.extend(self.internal[k].iter().cloned());
            let sub = StepInput {
                slot: input.slot,
                received: &seen,
                permissions: if self.forward { permissions } else { &empty },
                coalition: None,
            };
            let step = self.machines[k].step(&sub);
            for (j, inbox) in next.iter_mut().enumerate() {
                if j != k {
                    inbox.extend(step.broadcast.iter().cloned());
                }
            }
            out.broadcast.extend(step.broadcast);
            if self.forward {
                out.requests.extend(step.requests);
            }
        }
        self.internal = next;
        out
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

/// `adv(i, s)`: processor 0 simulates every processor other than itself and
/// the target `i`, each on its reversed input.
pub fn adv_permissioned_sim(
    i: usize,
    s: &[BTreeSet<Message>],
    identifiers: &[Identifier],
    base: Arc<dyn Protocol>,
) -> Result<AdversaryStrategy, AdversaryError> {
    let n = s.len();
    if i == 0 || i >= n {
        return Err(AdversaryError::BadTarget { target: i, n });
    }
    if identifiers.len() != n {
        return Err(AdversaryError::Size { expected: n, got: identifiers.len() });
    }
    check_inputs(s)?;
    let simulated = (1..n).filter(|&j| j != i).map(|j| (identifiers[j], reverse_input(&s[j]))).collect();
    Ok(AdversaryStrategy {
        controlled: [0].into(),
        machine: Some(Arc::new(Simulation { base, simulated, forward_requests: false })),
    })
}

/// Processor 0 simulates processor 1 on its reversed input, using its own
/// equal balance to obtain the permissions processor 1 would get.
pub fn adv_permissionless_sim(
    s: &[BTreeSet<Message>],
    identifiers: &[Identifier],
    pool: &ResourcePool,
    base: Arc<dyn Protocol>,
) -> Result<AdversaryStrategy, AdversaryError> {
    if s.len() != 3 || identifiers.len() != 3 {
        return Err(AdversaryError::Size { expected: 3, got: s.len().min(identifiers.len()) });
    }
    check_inputs(s)?;
    if pool.message_dependent() {
        return Err(AdversaryError::UnequalBalances("balances depend on the message state".into()));
    }
    for t in 0..=64 {
        let b: Vec<f64> = identifiers.iter().map(|&u| pool.balance(u, t, &BTreeSet::new())).collect();
        if b[0] != b[1] || b[0] <= 0.0 || b[2] != 0.0 {
            return Err(AdversaryError::UnequalBalances(format!("slot {t}: {b:?}")));
        }
    }
    Ok(AdversaryStrategy {
        controlled: [0].into(),
        machine: Some(Arc::new(Simulation {
            base,
            simulated: vec![(identifiers[1], reverse_input(&s[1]))],
            forward_requests: true,
        })),
    })
}

/// Builds the instance for `strategy` over the given processors.
pub fn attack_instance(
    setting: SettingFlags,
    protocol: Arc<dyn Protocol>,
    identifiers: &[Identifier],
    s: &[BTreeSet<Message>],
    strategy: &AdversaryStrategy,
    pool: ResourcePool,
    permitter: PermitterSpec,
    seed: u64,
) -> Instance {
    Instance {
        setting,
        protocol,
        processors: identifiers
            .iter()
            .zip(s)
            .enumerate()
            .map(|(p, (&identifier, inputs))| ProcessorSpec { identifier, inputs: inputs.clone(), role: strategy.role(p) })
            .collect(),
        pool,
        permitter,
        randomness: RandomnessMode::FixedFunctionPerRun,
        seed,
        record_state: false,
    }
}

/// How the two single-holder instances of the eclipse triple are timed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EclipseTiming {
    #[default]
    Minimal,
    Partition,
}

/// One instance of the eclipse triple together with its timing rule.
#[derive(Clone)]
pub struct TimedInstance {
    pub instance: Instance,
    pub regime: Regime,
    /// Side of each processor when cross traffic is held back.
    pub partition: Option<Vec<u8>>,
}

impl TimedInstance {
    pub fn timing(&self) -> Box<dyn TimingRule> {
        match &self.partition {
            Some(side) => Box::new(Partition { regime: self.regime, side: side.clone() }),
            None => Box::new(MinimalDelay { regime: self.regime }),
        }
    }

    pub fn with_seed(&self, seed: u64) -> TimedInstance {
        let mut out = self.clone();
        out.instance.seed = seed;
        out
    }
}

/// `I0`: both identifiers hold `I`, cross traffic between processors 0 and
/// 1 arrives only after `T`. `I1`, `I2`: only processor 0 (resp. 1) holds
/// `I`. Processor `i` has input `{i}`; everything else is shared.
#[allow(clippy::too_many_arguments)]
pub fn build_eclipse_instances(
    balance: f64,
    delta: u64,
    stabilisation: Timeslot,
    protocol: Arc<dyn Protocol>,
    permitter: PermitterSpec,
    seed: u64,
    alternate_timing: EclipseTiming,
) -> (TimedInstance, TimedInstance, TimedInstance) {
    let regime = Regime::PartiallySynchronous { delta, stabilisation };
    let ids = [Identifier::new(0).unwrap(), Identifier::new(1).unwrap()];
    let setting = SettingFlags::pow(regime, crate::setting::Auth::Unauthenticated, balance / 2.0, balance * 4.0);
    let make = |pool: ResourcePool, partition: Option<Vec<u8>>| TimedInstance {
        instance: Instance {
            setting,
            protocol: protocol.clone(),
            processors: ids
                .iter()
                .enumerate()
                .map(|(i, &identifier)| ProcessorSpec {
                    identifier,
                    inputs: [Message::general(i as Bit)].into(),
                    role: Role::Honest,
                })
                .collect(),
            pool,
            permitter: permitter.clone(),
            randomness: RandomnessMode::FixedFunctionPerRun,
            seed,
            record_state: false,
        },
        regime,
        partition,
    };
    let alt = match alternate_timing {
        EclipseTiming::Minimal => None,
        EclipseTiming::Partition => Some(vec![0, 1]),
    };
    let i0 = make(ResourcePool::constant([(ids[0], balance), (ids[1], balance)]), Some(vec![0, 1]));
    let i1 = make(ResourcePool::constant([(ids[0], balance), (ids[1], 0.0)]), alt.clone());
    let i2 = make(ResourcePool::constant([(ids[0], 0.0), (ids[1], balance)]), alt);
    (i0, i1, i2)
}

/// Exact equality of `p`'s inputs and per-slot `(M, M*)` through `horizon`.
pub fn indistinguishable_for(a: &Trace, b: &Trace, p: usize, horizon: Timeslot) -> bool {
    a.horizon >= horizon && b.horizon >= horizon && a.view(p, horizon) == b.view(p, horizon)
}

/// Equality of the empirical distributions of `p`'s views.
pub fn indistinguishable_in_distribution(a: &[Trace], b: &[Trace], p: usize, horizon: Timeslot) -> bool {
    let views = |ts: &[Trace]| {
        let mut v: Vec<Vec<u8>> = ts.iter().map(|t| t.view(p, horizon)).collect();
        v.sort();
        v
    };
    a.iter().chain(b).all(|t| t.horizon >= horizon) && views(a) == views(b)
}

/// `s` with a general-signed input per processor.
pub fn system_input(values: &[Option<Bit>]) -> Vec<BTreeSet<Message>> {
    values.iter().map(|v| v.map(|z| [Message::general(z)].into()).unwrap_or_default()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reversal_is_an_involution() {
        let s: BTreeSet<Message> = [Message::general(0)].into();
        assert_eq!(reverse_input(&s), [Message::general(1)].into());
        assert_eq!(reverse_input(&reverse_input(&s)), s);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let ids: Vec<Identifier> = (0..3).map(|i| Identifier::new(i).unwrap()).collect();
        let mut s = system_input(&[Some(0), Some(0), Some(1)]);
        s[1].insert(Message::general(1));
        let base: Arc<dyn Protocol> = Arc::new(crate::processor::IdleProtocol);
        assert_eq!(adv_permissioned_sim(2, &s, &ids, base).err(), Some(AdversaryError::MalformedInput(1)));
    }

    #[test]
    fn receiver_keyed_delay_stays_in_window() {
        let regime = Regime::Synchronous { delta: 3 };
        let mut r = ReceiverKeyedDelay { regime, seed: 5 };
        for t in 1..50 {
            let d = r.delivery(0, 1, &[], t);
            assert!(d > t && d <= t + 3);
            assert_eq!(d, r.delivery(2, 1, &[], t));
        }
    }
}
