//! Randomised properties and their brute-force oracles, shared by the fuzz
//! suite and the acceptance run.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};

use permsim::auth::authenticated_filter;
use permsim::message::{Block, BlockId, Identifier, Message, Payload};
use permsim::network::{validate_timing_rule, RandomDelay};
use permsim::permission::{PermissionSet, Request};
use permsim::permitter::{Coins, PermitterSpec, Query, RandomnessMode};
use permsim::processor::general_inputs;
use permsim::protocols::{compute_k, NaiveMajority};
use permsim::resource::ResourcePool;
use permsim::scheduler::{run_execution, Instance, ProcessorSpec, Role};
use permsim::setting::{Auth, Regime, SettingFlags};
use permsim::trace::deliveries_injective;

use super::{execute, run_case, u, RunCase};

pub const CASES: u32 = 10_000;

pub fn config() -> Config {
    Config { cases: CASES, failure_persistence: None, ..Config::default() }
}

/// Every base payload with up to three signatures from three identifiers,
/// including bundles of such messages.
pub fn message(depth: u32) -> impl Strategy<Value = Message> {
    let signer = prop_oneof![Just(Identifier::GENERAL), (1u32..=3).prop_map(u)];
    let leaf = (0u8..2, prop::option::of(0u64..3)).prop_map(|(z, ts)| Message { payload: Payload::Bit(z), timestamp: ts, signatures: vec![] });
    let base = leaf.prop_recursive(depth, 6, 2, |inner| {
        prop::collection::vec(inner, 0..=2).prop_map(|items| Message::new(Payload::Bundle(items)))
    });
    (base, prop::collection::vec(signer, 0..=3)).prop_map(|(mut m, sigs)| {
        m.signatures = sigs;
        m
    })
}

/// Every message obtainable from `m` by peeling signatures, recursively
/// through bundles.
pub fn subterms(m: &Message, out: &mut BTreeSet<Message>) {
    for j in 0..=m.signatures.len() {
        out.insert(Message { payload: m.payload.clone(), timestamp: m.timestamp, signatures: m.signatures[..j].to_vec() });
    }
    if let Payload::Bundle(items) = &m.payload {
        for item in items {
            subterms(item, out);
        }
    }
}

/// Every signature on `m` or inside it, other than `own`'s, must already
/// appear, with the same content beneath it, in something received.
pub fn brute_backed(own: Identifier, m: &Message, known: &BTreeSet<Message>) -> bool {
    let ok_here = (1..=m.signatures.len()).all(|j| {
        m.signatures[j - 1] == own
            || known.contains(&Message { payload: m.payload.clone(), timestamp: m.timestamp, signatures: m.signatures[..j].to_vec() })
    });
    let ok_inside = match &m.payload {
        Payload::Bundle(items) => items.iter().all(|i| brute_backed(own, i, known)),
        _ => true,
    };
    ok_here && ok_inside
}

pub fn brute_k(balances: &[u32], q_twentieths: u32) -> usize {
    let total: u64 = balances.iter().map(|&b| b as u64).sum();
    let n = balances.len();
    (0u32..1 << n)
        .filter(|mask| {
            let sum: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| balances[i] as u64).sum();
            sum * 20 <= q_twentieths as u64 * total
        })
        .map(|mask| mask.count_ones() as usize)
        .max()
        .unwrap_or(0)
}

pub fn request() -> impl Strategy<Value = Request> {
    let block = (0u64..4, 1u32..4, 1u64..4).prop_map(|(parent, producer, height)| {
        Message::block(Block { parent: BlockId(parent), producer: u(producer), height, slot: None, value: None })
    });
    prop_oneof![
        prop::option::of(block.clone()).prop_map(|extra| Request::Untimed { messages: BTreeSet::new(), extra }),
        (0u64..6).prop_map(|slot| Request::Timed { slot, messages: BTreeSet::new(), extra: None }),
    ]
}

pub type Outcome = Result<(), TestCaseError>;

#[derive(Clone, Debug)]
pub struct PermitterCase {
    pub kind: usize,
    pub lambda: f64,
    pub slot: u64,
    pub seed: u64,
    pub request: Request,
    pub authenticated: bool,
}

pub fn permitter_case() -> impl Strategy<Value = PermitterCase> {
    (0usize..4, 0.01f64..5.0, 0u64..20, any::<u64>(), request(), any::<bool>()).prop_map(
        |(kind, lambda, slot, seed, request, authenticated)| PermitterCase { kind, lambda, slot, seed, request, authenticated },
    )
}

pub fn no_balance_no_voice(c: PermitterCase) -> Outcome {
    let lambda = c.lambda;
    let spec = [PermitterSpec::Gate, PermitterSpec::Lottery { lambda }, PermitterSpec::Pow { lambda }, PermitterSpec::PosLeader][c.kind].clone();
    let pool = ResourcePool::constant([(u(1), 0.0), (u(2), 1.0)]);
    let query = Query { slot: c.slot, request: &c.request, balance: 0.0, identity: c.authenticated.then(|| u(1)) };
    let mut coins = Coins::new(c.seed, RandomnessMode::FixedFunctionPerRun);
    prop_assert!(spec.respond(&query, &pool, &mut coins).permissions.is_empty());
    Ok(())
}

/// Seed, lottery rate, mask of zero-balance processors (never all three)
/// and horizon.
pub fn zero_balance_case() -> impl Strategy<Value = (u64, f64, u8, u64)> {
    (any::<u64>(), 0.1f64..3.0, 0u8..7, 2u64..8)
}

pub fn zero_balance_processors_never_broadcast((seed, lambda, mask, horizon): (u64, f64, u8, u64)) -> Outcome {
    let zero: Vec<bool> = (0..3).map(|p| mask >> p & 1 == 1).collect();
    let ids: Vec<Identifier> = (0..3).map(u).collect();
    let pool = ResourcePool::constant(ids.iter().zip(&zero).map(|(&i, &z)| (i, if z { 0.0 } else { 1.0 })));
    let instance = Instance {
        setting: SettingFlags::pow(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated, 0.5, 10.0),
        protocol: Arc::new(NaiveMajority { rounds: horizon, permissioned: false }),
        processors: ids.iter().map(|&identifier| ProcessorSpec { identifier, inputs: general_inputs(&[1]), role: Role::Honest }).collect(),
        pool,
        permitter: PermitterSpec::Lottery { lambda },
        randomness: RandomnessMode::FixedFunctionPerRun,
        seed,
        record_state: false,
    };
    let trace = run_execution(&instance, &mut RandomDelay::new(instance.setting.network, seed), horizon).unwrap();
    for t in 1..=horizon {
        for p in (0..3).filter(|&p| zero[p]) {
            let rec = trace.record(t, p);
            prop_assert!(rec.permissions.is_empty());
            prop_assert!(rec.broadcast.is_empty());
        }
    }
    Ok(())
}

pub fn deliveries_are_injective(case: RunCase) -> Outcome {
    prop_assert!(deliveries_injective(&execute(&case)));
    Ok(())
}

pub fn deliveries_respect_the_timing_window(case: RunCase) -> Outcome {
    let trace = execute(&case);
    let result = validate_timing_rule(case.regime, &trace.deliveries(), &trace.broadcasts());
    prop_assert!(result.is_ok(), "{:?}", result);
    Ok(())
}

pub fn message_pair() -> impl Strategy<Value = (Message, Message)> {
    (message(2), message(2))
}

pub fn encodings_are_prefix_free((a, b): (Message, Message)) -> Outcome {
    let (ea, eb) = (a.encode(), b.encode());
    prop_assert_eq!(Message::decode(&ea).unwrap(), a.clone());
    if a != b {
        prop_assert!(!eb.starts_with(&ea) && !ea.starts_with(&eb));
    }
    for cut in 0..ea.len() {
        prop_assert!(Message::decode(&ea[..cut]).is_err());
    }
    Ok(())
}

pub fn filter_case() -> impl Strategy<Value = (u32, Message, Vec<Message>, bool)> {
    (1u32..=3, message(2), prop::collection::vec(message(2), 0..4), any::<bool>())
}

pub fn authenticated_filter_matches_brute_force((own, m, received, universal): (u32, Message, Vec<Message>, bool)) -> Outcome {
    let own = u(own);
    let received: BTreeSet<Message> = received.into_iter().collect();
    let mut known = BTreeSet::new();
    for r in &received {
        subterms(r, &mut known);
    }
    let permissions = if universal { PermissionSet::universal() } else { PermissionSet::exactly(m.clone()) };
    prop_assert_eq!(authenticated_filter(own, &m, &received, &permissions), brute_backed(own, &m, &known));
    prop_assert!(!authenticated_filter(own, &m, &received, &PermissionSet::empty()));
    Ok(())
}

/// Integer balances for up to twelve holders and `q` in twentieths.
pub fn stake_case() -> impl Strategy<Value = (Vec<u32>, u32)> {
    (prop::collection::vec(1u32..=20, 1..=12), 0u32..20)
}

pub fn compute_k_matches_subset_search((balances, q_twentieths): (Vec<u32>, u32)) -> Outcome {
    let map: BTreeMap<Identifier, f64> = balances.iter().enumerate().map(|(i, &b)| (u(i as u32), b as f64)).collect();
    prop_assert_eq!(compute_k(&map, q_twentieths as f64 / 20.0), brute_k(&balances, q_twentieths));
    Ok(())
}

/// Runs one property over `CASES` cases; the error names the minimal
/// failing input.
pub fn check<S: Strategy>(strategy: S, property: fn(S::Value) -> Outcome) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    TestRunner::new(config()).run(&strategy, property).map_err(|e| match e {
        TestError::Abort(why) => format!("aborted: {why}"),
        TestError::Fail(why, input) => format!("{why} on {input:?}"),
    })
}

/// Every fuzz property by name.
pub fn all() -> Vec<(&'static str, Box<dyn Fn() -> Result<(), String>>)> {
    vec![
        ("no balance no voice", Box::new(|| check(permitter_case(), no_balance_no_voice))),
        ("zero-balance processors never broadcast", Box::new(|| check(zero_balance_case(), zero_balance_processors_never_broadcast))),
        ("delivery injectivity", Box::new(|| check(run_case(), deliveries_are_injective))),
        ("timing windows", Box::new(|| check(run_case(), deliveries_respect_the_timing_window))),
        ("prefix-freeness", Box::new(|| check(message_pair(), encodings_are_prefix_free))),
        ("authenticated filter vs brute force", Box::new(|| check(filter_case(), authenticated_filter_matches_brute_force))),
        ("k vs subset search", Box::new(|| check(stake_case(), compute_k_matches_subset_search))),
    ]
}
