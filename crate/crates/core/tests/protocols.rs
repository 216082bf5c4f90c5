use std::collections::BTreeMap;
use std::sync::Arc;

use permsim::message::{Identifier, Timeslot};
use permsim::network::{MinimalDelay, RandomDelay, TimingRule};
use permsim::permitter::{PermitterSpec, RandomnessMode};
use permsim::processor::{general_inputs, Protocol};
use permsim::protocols::*;
use permsim::resource::ResourcePool;
use permsim::scheduler::{run_execution, Instance, ProcessorSpec, Role};
use permsim::setting::{Auth, Regime, SettingFlags};
use permsim::trace::Trace;

fn u(n: u32) -> Identifier {
    Identifier::new(n).unwrap()
}

fn instance(setting: SettingFlags, protocol: Arc<dyn Protocol>, inputs: &[&[u8]], pool: ResourcePool, permitter: PermitterSpec, seed: u64) -> Instance {
    Instance {
        setting,
        protocol,
        processors: inputs
            .iter()
            .enumerate()
            .map(|(i, z)| ProcessorSpec { identifier: u(i as u32), inputs: general_inputs(z), role: Role::Honest })
            .collect(),
        pool,
        permitter,
        randomness: RandomnessMode::FixedFunctionPerRun,
        seed,
        record_state: false,
    }
}

fn run(inst: &Instance, timing: &mut dyn TimingRule, horizon: Timeslot) -> Trace {
    run_execution(inst, timing, horizon).unwrap()
}

fn bb_config(delta: u64, q: f64, n: u32) -> BBConfig {
    BBConfig::new(delta, q, (0..n).map(|i| (u(i), 1.0)).collect()).unwrap()
}

fn pos_bb_instance(cfg: &BBConfig, inputs: &[&[u8]]) -> Instance {
    let pool = ResourcePool::constant(cfg.ustar.iter().map(|(&id, &b)| (id, b)));
    let setting = SettingFlags::pos(Regime::Synchronous { delta: cfg.delta });
    instance(setting, Arc::new(PosBb { config: cfg.clone() }), inputs, pool, PermitterSpec::Gate, 1)
}

#[test]
fn pos_bb_honest_general_all_zero() {
    let cfg = bb_config(2, 0.5, 3);
    let inst = pos_bb_instance(&cfg, &[&[0], &[0], &[0], &[0]]);
    let trace = run(&inst, &mut MinimalDelay { regime: Regime::Synchronous { delta: 2 } }, cfg.decision_slot());
    assert!(trace.outputs().iter().all(|o| *o == Some((0, cfg.decision_slot()))));
    assert!(check_dagger_lemmas(&trace, &cfg).is_empty());
    assert!(!check_weak_decentralisation(&trace));
}

#[test]
fn pos_bb_both_values_give_zero() {
    let cfg = bb_config(1, 0.5, 3);
    let inst = pos_bb_instance(&cfg, &[&[1], &[0], &[1]]);
    let trace = run(&inst, &mut MinimalDelay { regime: Regime::Synchronous { delta: 1 } }, cfg.decision_slot());
    for p in 0..3 {
        assert_eq!(trace.output_of(p), Some(0));
    }
}

#[test]
fn pos_bb_random_delays_never_break_relay_lemmas() {
    for seed in 0..200u64 {
        let n = 3 + (seed % 3) as u32;
        let cfg = bb_config(2, 0.5, n.min(4));
        let inputs: Vec<Vec<u8>> = (0..n).map(|i| vec![((seed >> i) & 1) as u8]).collect();
        let refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
        let inst = pos_bb_instance(&cfg, &refs);
        let mut timing = RandomDelay::new(Regime::Synchronous { delta: 2 }, seed);
        let trace = run(&inst, &mut timing, cfg.decision_slot());
        assert!(check_dagger_lemmas(&trace, &cfg).is_empty(), "seed {seed}");
        let outs: Vec<_> = trace.outputs().into_iter().map(|o| o.unwrap().0).collect();
        assert!(outs.windows(2).all(|w| w[0] == w[1]), "seed {seed}");
    }
}

#[test]
fn pos_bb_relay_beyond_the_bound_is_reported() {
    // Processors assume delay 1 while the network takes 3.
    let cfg = bb_config(1, 0.5, 3);
    let inst = pos_bb_instance(&cfg, &[&[1], &[1], &[1], &[1]]);
    let mut slow = permsim::network::MaximalDelay { regime: Regime::Synchronous { delta: 3 } };
    let trace = run(&inst, &mut slow, cfg.decision_slot());
    let v = check_dagger_lemmas(&trace, &cfg);
    assert!(!v.is_empty());
}

fn pow_setting() -> SettingFlags {
    SettingFlags::pow(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated, 0.5, 10.0)
}

#[test]
fn single_miner_never_forks() {
    let pool = ResourcePool::constant([(u(0), 1.0)]);
    for seed in 0..20 {
        let inst = instance(pow_setting(), Arc::new(Nakamoto { confirm_depth: 6, decide: None }), &[&[]], pool.clone(), PermitterSpec::Pow { lambda: 0.5 }, seed);
        let trace = run(&inst, &mut MinimalDelay { regime: Regime::Synchronous { delta: 1 } }, 100);
        assert_eq!(count_forks(&trace), 0);
        let report = check_consistency_liveness(&trace, 6, 50);
        assert!(report.consistent() && report.live(), "{report:?}");
    }
}

#[test]
fn two_miners_settle_on_one_tip() {
    let pool = ResourcePool::constant([(u(0), 1.0), (u(1), 1.0)]);
    let mut forked = false;
    for seed in 0..30 {
        let inst = instance(pow_setting(), Arc::new(Nakamoto { confirm_depth: 3, decide: None }), &[&[], &[]], pool.clone(), PermitterSpec::Pow { lambda: 0.7 }, seed);
        let mut trace_timing = MinimalDelay { regime: Regime::Synchronous { delta: 1 } };
        let trace = run(&inst, &mut trace_timing, 60);
        forked |= count_forks(&trace) > 0;
        let mut tips = Vec::new();
        for p in 0..2 {
            let mut v = ChainView::default();
            for t in 1..=60 {
                for r in &trace.record(t, p).received {
                    v.insert(r.message.clone());
                }
                for m in &trace.record(t, p).broadcast {
                    v.insert(m.clone());
                }
            }
            tips.push(v.best_chain()[..v.best_chain().len() - 3].to_vec());
        }
        let k = tips[0].len().min(tips[1].len());
        assert_eq!(tips[0][..k], tips[1][..k], "seed {seed}");
    }
    assert!(forked, "no seed produced a simultaneous pair of blocks");
}

#[test]
fn naive_majority_split() {
    let setting = SettingFlags::permissioned(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated);
    let pool = ResourcePool::constant((0..3).map(|i| (u(i), 1.0)));
    let inst = instance(setting, Arc::new(NaiveMajority { rounds: 3, permissioned: true }), &[&[1], &[0], &[1]], pool, PermitterSpec::Permissioned, 0);
    let trace = run(&inst, &mut MinimalDelay { regime: Regime::Synchronous { delta: 1 } }, 3);
    for p in 0..3 {
        assert_eq!(trace.output_of(p), Some(1));
    }
}

#[test]
fn lc_pos_is_weakly_decentralised_and_grows() {
    let setting = SettingFlags::pos(Regime::Synchronous { delta: 1 });
    let pool = ResourcePool::StakeFromChain {
        base: (0..3).map(|i| permsim::resource::Balance { id: u(i), balance: 1.0 }).collect(),
        reward: 0.0,
    };
    let inst = instance(setting, Arc::new(LcPos { decide: None }), &[&[], &[], &[]], pool, PermitterSpec::PosLeader, 4);
    let trace = run(&inst, &mut MinimalDelay { regime: Regime::Synchronous { delta: 1 } }, 40);
    assert!(check_weak_decentralisation(&trace));
    let report = check_consistency_liveness(&trace, 2, 10);
    assert!(report.consistent());
    assert!(report.confirmed.iter().all(|&c| c > 10), "{report:?}");
}

#[test]
fn registry_knows_every_family() {
    let params: BTreeMap<&str, serde_json::Value> = [
        ("idle", serde_json::Value::Null),
        ("pos-bb", serde_json::json!({"delta": 2, "q": 0.5, "stake": [{"id": 0, "balance": 1.0}]})),
        ("nakamoto", serde_json::json!({"confirm_depth": 6})),
        ("lc-pos", serde_json::json!({})),
        ("naive-majority", serde_json::json!({"rounds": 3})),
        ("echo-decide", serde_json::json!({"decide_at": 4})),
    ]
    .into();
    for (name, p) in params {
        assert_eq!(protocol_by_name(name, &p).unwrap().name(), name);
    }
    assert!(protocol_by_name("nope", &serde_json::Value::Null).is_err());
}
