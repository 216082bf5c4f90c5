//! Random small instances shared by the property suites.

#![allow(dead_code)]

pub mod fuzz;

use std::sync::Arc;

use proptest::prelude::*;

use permsim::adversary::{DelaySchedule, ScheduledTiming};
use permsim::message::{Identifier, Timeslot};
use permsim::network::{RandomDelay, TimingRule};
use permsim::permitter::{PermitterSpec, RandomnessMode};
use permsim::processor::{general_inputs, Protocol};
use permsim::protocols::{BBConfig, EchoDecide, LcPos, NaiveMajority, PosBb};
use permsim::resource::ResourcePool;
use permsim::scheduler::{run_execution, Instance, ProcessorSpec, Role};
use permsim::setting::{Auth, Regime, SettingFlags};
use permsim::trace::Trace;

pub fn u(n: u32) -> Identifier {
    Identifier::new(n).unwrap()
}

pub fn regime() -> impl Strategy<Value = Regime> {
    prop_oneof![
        (1u64..=3).prop_map(|delta| Regime::Synchronous { delta }),
        (1u64..=2, 0u64..=6).prop_map(|(delta, stabilisation)| Regime::PartiallySynchronous { delta, stabilisation }),
    ]
}

#[derive(Clone, Debug)]
pub struct RunCase {
    pub family: u8,
    pub n: usize,
    pub regime: Regime,
    pub faulty: Vec<bool>,
    pub inputs: Vec<u8>,
    pub seed: u64,
    pub scheduled: bool,
    pub deferrals: Vec<(usize, Timeslot, Option<Timeslot>)>,
    pub extra: Vec<(usize, usize, u64)>,
    pub horizon: Timeslot,
}

pub fn run_case() -> impl Strategy<Value = RunCase> {
    (0u8..4, 2usize..=4, regime(), any::<u64>(), any::<bool>(), 3u64..=8).prop_flat_map(
        |(family, n, regime, seed, scheduled, horizon)| {
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0u8..2, n),
                prop::collection::vec((0..n, 1..horizon, prop::option::of(1..horizon + 2)), 0..4),
                prop::collection::vec((0..n, 0..n, 0u64..4), 0..4),
            )
                .prop_map(move |(faulty, inputs, deferrals, extra)| RunCase {
                    family,
                    n,
                    regime,
                    faulty,
                    inputs,
                    seed,
                    scheduled,
                    deferrals: deferrals
                        .into_iter()
                        .map(|(p, from, to)| (p, from, to.map(|t| t.max(from))))
                        .collect(),
                    extra,
                    horizon,
                })
        },
    )
}

pub fn build(case: &RunCase) -> Instance {
    let ids: Vec<Identifier> = (0..case.n as u32).map(u).collect();
    let network = case.regime;
    let (setting, protocol, permitter): (SettingFlags, Arc<dyn Protocol>, PermitterSpec) = match case.family {
        0 => (
            SettingFlags::permissioned(network, Auth::Authenticated),
            Arc::new(NaiveMajority { rounds: case.horizon, permissioned: true }),
            PermitterSpec::Permissioned,
        ),
        1 => (
            SettingFlags::pow(network, Auth::Authenticated, 0.5, 10.0),
            Arc::new(EchoDecide { decide_at: case.horizon }),
            PermitterSpec::Gate,
        ),
        2 => {
            let cfg = BBConfig::new(1, 0.5, ids.iter().map(|&i| (i, 1.0)).collect()).unwrap();
            (SettingFlags::pos(network), Arc::new(PosBb { config: cfg }), PermitterSpec::Gate)
        }
        _ => (SettingFlags::pos(network), Arc::new(LcPos { decide: None }), PermitterSpec::PosLeader),
    };
    Instance {
        setting,
        protocol,
        processors: ids
            .iter()
            .enumerate()
            .map(|(p, &identifier)| ProcessorSpec {
                identifier,
                inputs: general_inputs(&[case.inputs[p]]),
                role: if case.faulty[p] { Role::DelayFaulty } else { Role::Honest },
            })
            .collect(),
        pool: ResourcePool::constant(ids.iter().map(|&i| (i, 1.0))),
        permitter,
        randomness: RandomnessMode::FixedFunctionPerRun,
        seed: case.seed,
        record_state: false,
    }
}

pub fn execute(case: &RunCase) -> Trace {
    execute_to(case, case.horizon)
}

/// `case` run to `horizon` instead of its own.
pub fn execute_to(case: &RunCase, horizon: Timeslot) -> Trace {
    let instance = build(case);
    let mut timing: Box<dyn TimingRule> = if case.scheduled {
        let mut schedule = DelaySchedule::default();
        for &(p, from, to) in &case.deferrals {
            schedule.deferrals.insert((p, from), to);
        }
        for &(from, to, extra) in &case.extra {
            schedule.extra.insert((from, to), extra);
        }
        Box::new(ScheduledTiming { regime: case.regime, schedule })
    } else {
        Box::new(RandomDelay::new(case.regime, case.seed))
    };
    run_execution(&instance, timing.as_mut(), horizon).unwrap()
}
