//! The slot-synchronous simulation loop.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::auth::{signatures_backed, SignedPairIndex};
use crate::message::{Bit, Identifier, Message, Timeslot};
use crate::network::TimingRule;
use crate::permission::{PermissionSet, Request};
use crate::permitter::{Coins, PermitterSpec, Query, RandomnessMode};
use crate::processor::{CoalitionView, Processor, Protocol, SpawnContext, StepInput};
use crate::resource::{PoolError, ResourcePool};
use crate::setting::{Permits, SettingError, SettingFlags, Timing};
use crate::trace::{ProcessorInfo, Receipt, RoleTag, SlotRecord, Trace};

#[derive(Clone)]
pub enum Role {
    Honest,
    /// Runs the protocol's machine, but the timing rule may defer its
    /// broadcasts.
    DelayFaulty,
    /// Replaced by an adversary machine.
    Controlled(Arc<dyn Protocol>),
}

impl Role {
    pub fn tag(&self) -> RoleTag {
        match self {
            Role::Honest => RoleTag::Honest,
            Role::DelayFaulty => RoleTag::DelayFaulty,
            Role::Controlled(_) => RoleTag::Controlled,
        }
    }
}

#[derive(Clone)]
pub struct ProcessorSpec {
    pub identifier: Identifier,
    pub inputs: BTreeSet<Message>,
    pub role: Role,
}

/// Processors with inputs and roles, protocol, pool, permitter and seed. The
/// timing rule is supplied separately to `run_execution`.
#[derive(Clone)]
pub struct Instance {
    pub setting: SettingFlags,
    pub protocol: Arc<dyn Protocol>,
    pub processors: Vec<ProcessorSpec>,
    pub pool: ResourcePool,
    pub permitter: PermitterSpec,
    pub randomness: RandomnessMode,
    pub seed: u64,
    pub record_state: bool,
}

impl Instance {
    pub fn identifiers(&self) -> BTreeSet<Identifier> {
        self.processors.iter().map(|p| p.identifier).collect()
    }

    pub fn faulty(&self) -> BTreeSet<usize> {
        (0..self.processors.len()).filter(|&i| !matches!(self.processors[i].role, Role::Honest)).collect()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.setting.validate()?;
        let ids = self.identifiers();
        if ids.len() != self.processors.len() {
            return Err(RunError::DuplicateIdentifier);
        }
        if ids.contains(&Identifier::GENERAL) {
            return Err(RunError::DuplicateIdentifier);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RunError {
    #[error("setting: {0}")]
    Setting(#[from] SettingError),
    #[error("pool: {0}")]
    Pool(#[from] PoolError),
    #[error("identifiers must be distinct and must not be the general's")]
    DuplicateIdentifier,
    #[error("processor {processor} broadcast an unpermitted message at slot {slot}: {message}")]
    Unpermitted { processor: usize, slot: Timeslot, message: String },
    #[error("processor {processor} broadcast a message with a signature it cannot have at slot {slot}: {message}")]
    Forgery { processor: usize, slot: Timeslot, message: String },
    #[error("processor {processor} made {count} requests at slot {slot} in the single-permitter setting")]
    TooManyRequests { processor: usize, slot: Timeslot, count: usize },
    #[error("processor {processor} made a request with non-empty A at slot {slot} in the multi-permitter setting")]
    ExtraInMulti { processor: usize, slot: Timeslot },
    #[error("processor {processor} made a {kind} request at slot {slot} in the wrong timing setting")]
    WrongTiming { processor: usize, slot: Timeslot, kind: &'static str },
    #[error("processor {processor} requested with a message it neither holds nor is permitted: {message}")]
    UnknownRequestMessage { processor: usize, slot: Timeslot, message: String },
    #[error("timing rule delivered {from}->{to} for slot {sent} at {received}, outside ({sent}, {deadline}]")]
    Window { from: usize, to: usize, sent: Timeslot, received: Timeslot, deadline: Timeslot },
    #[error("deferral of processor {processor} to slot {to} precedes its instruction at {from}")]
    BadDeferral { processor: usize, from: Timeslot, to: Timeslot },
    #[error("processor {processor} changed its output at slot {slot}")]
    OutputChanged { processor: usize, slot: Timeslot },
}

struct Local {
    machine: Box<dyn Processor>,
    known: HashSet<Message>,
    index: SignedPairIndex,
    permitted: PermissionSet,
    next_permissions: PermissionSet,
    deferred: BTreeMap<Timeslot, Vec<Message>>,
    output: Option<Bit>,
}

type Inbox = BTreeMap<Timeslot, Vec<Vec<Receipt>>>;

/// Executes slots `1..=horizon` of `instance` under `timing`.
pub fn run_execution(
    instance: &Instance,
    timing: &mut dyn TimingRule,
    horizon: Timeslot,
) -> Result<Trace, RunError> {
    instance.validate()?;
    let n = instance.processors.len();
    let setting = instance.setting;
    let auth = setting.is_authenticated();
    let regime = timing.regime();
    let mut coins = Coins::new(instance.seed, instance.randomness);

    let mut locals: Vec<Local> = instance
        .processors
        .iter()
        .enumerate()
        .map(|(index, spec)| {
            let ctx = SpawnContext { index, identifier: spec.identifier, inputs: spec.inputs.clone() };
            let machine = match &spec.role {
                Role::Controlled(adv) => adv.spawn(&ctx),
                _ => instance.protocol.spawn(&ctx),
            };
            let mut index_set = SignedPairIndex::default();
            if auth {
                for m in &spec.inputs {
                    index_set.insert_message(m);
                }
            }
            Local {
                machine,
                known: spec.inputs.iter().cloned().collect(),
                index: index_set,
                permitted: if setting.permissioned { PermissionSet::universal() } else { PermissionSet::empty() },
                next_permissions: PermissionSet::empty(),
                deferred: BTreeMap::new(),
                output: None,
            }
        })
        .collect();

    let coalition: Vec<usize> =
        (0..n).filter(|&i| matches!(instance.processors[i].role, Role::Controlled(_))).collect();
    let coalition_ids: BTreeSet<Identifier> =
        coalition.iter().map(|&i| instance.processors[i].identifier).collect();

    let mut inbox: Inbox = BTreeMap::new();
    let mut slots = Vec::with_capacity(horizon as usize);

    for t in 1..=horizon {
        let arrivals = inbox.remove(&t).unwrap_or_else(|| vec![Vec::new(); n]);
        let mut records: Vec<SlotRecord> = Vec::with_capacity(n);
        let mut received_sets: Vec<BTreeSet<Message>> = Vec::with_capacity(n);
        for (p, receipts) in arrivals.into_iter().enumerate() {
            let local = &mut locals[p];
            let set: BTreeSet<Message> = receipts.iter().map(|r| r.message.clone()).collect();
            for m in &set {
                if auth {
                    local.index.insert_message(m);
                }
                local.known.insert(m.clone());
            }
            let perms = std::mem::take(&mut local.next_permissions);
            local.permitted.union_with(&perms);
            received_sets.push(set);
            records.push(SlotRecord { received: receipts, permissions: perms, ..SlotRecord::default() });
        }

        let view = (!coalition.is_empty()).then(|| {
            let mut v = CoalitionView::default();
            for &c in &coalition {
                v.received.extend(received_sets[c].iter().cloned());
                v.permissions.union_with(&records[c].permissions);
            }
            v
        });

        let mut outgoing: Vec<Vec<Message>> = vec![Vec::new(); n];
        let mut all_requests: Vec<(usize, Request)> = Vec::new();
        for p in 0..n {
            let controlled = matches!(instance.processors[p].role, Role::Controlled(_));
            let input = StepInput {
                slot: t,
                received: &received_sets[p],
                permissions: &records[p].permissions,
                coalition: if controlled { view.as_ref() } else { None },
            };
            let out = locals[p].machine.step(&input);

            let group: &[usize] = if controlled { &coalition } else { std::slice::from_ref(&p) };
            for m in &out.broadcast {
                check_broadcast(&locals, group, &coalition_ids, instance.processors[p].identifier, auth, p, t, m)?;
            }
            check_requests(&locals, group, setting, p, t, &out.requests)?;

            let local = &mut locals[p];
            for m in &out.broadcast {
                local.known.insert(m.clone());
            }
            let actual = match instance.processors[p].role {
                Role::DelayFaulty if !out.broadcast.is_empty() => {
                    match timing.defer(p, t) {
                        Some(at) if at < t => {
                            return Err(RunError::BadDeferral { processor: p, from: t, to: at });
                        }
                        Some(at) => local.deferred.entry(at).or_default().extend(out.broadcast.iter().cloned()),
                        None => {}
                    }
                    local.deferred.remove(&t).unwrap_or_default()
                }
                Role::DelayFaulty => local.deferred.remove(&t).unwrap_or_default(),
                _ => out.broadcast.clone(),
            };
            outgoing[p] = dedup(actual);

            if let Some(z) = out.output {
                match local.output {
                    None => local.output = Some(z),
                    Some(prev) if prev != z => return Err(RunError::OutputChanged { processor: p, slot: t }),
                    Some(_) => {}
                }
            }
            let rec = &mut records[p];
            rec.instructed = out.broadcast;
            rec.broadcast = outgoing[p].clone();
            rec.requests = out.requests.clone();
            rec.output = out.output;
            if instance.record_state {
                rec.state = Some(local.machine.state());
            }
            all_requests.extend(out.requests.into_iter().map(|r| (p, r)));
        }

        for (p, batch) in outgoing.iter().enumerate() {
            if batch.is_empty() {
                continue;
            }
            for q in 0..n {
                if q == p {
                    continue;
                }
                let at = timing.delivery(p, q, batch, t);
                let deadline = regime.deadline(t);
                if at <= t || at > deadline {
                    return Err(RunError::Window { from: p, to: q, sent: t, received: at, deadline });
                }
                if at <= horizon {
                    let slot = inbox.entry(at).or_insert_with(|| vec![Vec::new(); n]);
                    slot[q].extend(batch.iter().map(|m| Receipt { message: m.clone(), from: p, sent: t }));
                }
            }
        }

        for (p, req) in &all_requests {
            let identifier = instance.processors[*p].identifier;
            let at = req.timed_slot().unwrap_or(t);
            let balance = instance.pool.balance(identifier, at, req.messages());
            let query = Query { slot: t, request: req, balance, identity: auth.then_some(identifier) };
            let resp = instance.permitter.respond(&query, &instance.pool, &mut coins);
            locals[*p].next_permissions.union_with(&resp.permissions);
        }

        slots.push(records);
    }

    Ok(Trace {
        setting,
        seed: instance.seed,
        horizon,
        processors: instance
            .processors
            .iter()
            .enumerate()
            .map(|(index, s)| ProcessorInfo {
                index,
                identifier: s.identifier,
                role: s.role.tag(),
                inputs: s.inputs.clone(),
            })
            .collect(),
        slots,
    })
}

fn dedup(mut v: Vec<Message>) -> Vec<Message> {
    let mut seen = HashSet::new();
    v.retain(|m| seen.insert(m.clone()));
    v
}

#[allow(clippy::too_many_arguments)]
fn check_broadcast(
    locals: &[Local],
    group: &[usize],
    coalition_ids: &BTreeSet<Identifier>,
    own: Identifier,
    auth: bool,
    p: usize,
    t: Timeslot,
    m: &Message,
) -> Result<(), RunError> {
    if !group.iter().any(|&g| locals[g].permitted.permits(m)) {
        return Err(RunError::Unpermitted { processor: p, slot: t, message: m.to_hex() });
    }
    if auth {
        let backed = if group.len() == 1 && group[0] == p {
            signatures_backed(own, m, &locals[p].index)
        } else {
            coalition_backed(locals, group, coalition_ids, m)
        };
        if !backed {
            return Err(RunError::Forgery { processor: p, slot: t, message: m.to_hex() });
        }
    }
    Ok(())
}

fn coalition_backed(locals: &[Local], group: &[usize], ids: &BTreeSet<Identifier>, m: &Message) -> bool {
    let mut ok = true;
    crate::message::for_each_signed_pair(m, &mut |u, inner| {
        if ok && !ids.contains(&u) && !group.iter().any(|&g| locals[g].index.contains(u, inner)) {
            ok = false;
        }
    });
    ok
}

fn check_requests(
    locals: &[Local],
    group: &[usize],
    setting: SettingFlags,
    p: usize,
    t: Timeslot,
    requests: &[Request],
) -> Result<(), RunError> {
    if setting.permits == Permits::Single && requests.len() > 1 {
        return Err(RunError::TooManyRequests { processor: p, slot: t, count: requests.len() });
    }
    for r in requests {
        if setting.permits == Permits::Multi && r.extra().is_some() {
            return Err(RunError::ExtraInMulti { processor: p, slot: t });
        }
        match (setting.timing, r) {
            (Timing::Timed, Request::Untimed { .. }) => {
                return Err(RunError::WrongTiming { processor: p, slot: t, kind: "untimed" })
            }
            (Timing::Untimed, Request::Timed { .. }) => {
                return Err(RunError::WrongTiming { processor: p, slot: t, kind: "timed" })
            }
            _ => {}
        }
        for m in r.messages() {
            let held = group.iter().any(|&g| locals[g].known.contains(m) || locals[g].permitted.permits(m));
            if !held {
                return Err(RunError::UnknownRequestMessage { processor: p, slot: t, message: m.to_hex() });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::sign;
    use crate::network::MinimalDelay;
    use crate::processor::{IdleProtocol, StepOutput};
    use crate::setting::{Auth, Regime};

    fn u(n: u32) -> Identifier {
        Identifier::new(n).unwrap()
    }

    fn base(protocol: Arc<dyn Protocol>, n: u32, setting: SettingFlags) -> Instance {
        Instance {
            setting,
            protocol,
            processors: (0..n)
                .map(|i| ProcessorSpec { identifier: u(i), inputs: BTreeSet::new(), role: Role::Honest })
                .collect(),
            pool: ResourcePool::constant((0..n).map(|i| (u(i), 1.0))),
            permitter: PermitterSpec::Gate,
            randomness: RandomnessMode::default(),
            seed: 7,
            record_state: false,
        }
    }

    #[test]
    fn idle_run_is_empty() {
        let regime = Regime::Synchronous { delta: 1 };
        let inst = base(Arc::new(IdleProtocol), 3, SettingFlags::permissioned(regime, Auth::Authenticated));
        let tr = run_execution(&inst, &mut MinimalDelay { regime }, 5).unwrap();
        assert_eq!(tr.slots.len(), 5);
        assert!(tr.slots.iter().flatten().all(|r| r.broadcast.is_empty() && r.output.is_none()));
    }

    #[derive(Clone)]
    struct Forger;
    impl Processor for Forger {
        fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
            if input.slot == 1 {
                StepOutput { broadcast: vec![sign(&Message::general(0), u(1))], ..StepOutput::idle() }
            } else {
                StepOutput::idle()
            }
        }
        fn box_clone(&self) -> Box<dyn Processor> {
            Box::new(self.clone())
        }
    }
    struct ForgerProtocol;
    impl Protocol for ForgerProtocol {
        fn name(&self) -> &str {
            "forger"
        }
        fn spawn(&self, _: &SpawnContext) -> Box<dyn Processor> {
            Box::new(Forger)
        }
    }

    #[test]
    fn forgery_aborts_in_authenticated_setting_only() {
        let regime = Regime::Synchronous { delta: 1 };
        let inst = base(Arc::new(ForgerProtocol), 2, SettingFlags::permissioned(regime, Auth::Authenticated));
        let err = run_execution(&inst, &mut MinimalDelay { regime }, 2).err().unwrap();
        assert!(matches!(err, RunError::Forgery { processor: 0, slot: 1, .. }));
        let inst = base(Arc::new(ForgerProtocol), 2, SettingFlags::permissioned(regime, Auth::Unauthenticated));
        assert!(run_execution(&inst, &mut MinimalDelay { regime }, 2).is_ok());
    }

    #[test]
    fn unpermitted_broadcast_aborts() {
        let regime = Regime::Synchronous { delta: 1 };
        let inst = base(Arc::new(ForgerProtocol), 2, SettingFlags::pos(regime));
        let err = run_execution(&inst, &mut MinimalDelay { regime }, 2).err().unwrap();
        assert!(matches!(err, RunError::Unpermitted { processor: 0, slot: 1, .. }));
    }
}
