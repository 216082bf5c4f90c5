//! The three attack experiments and the private-mining chain experiment,
//! each run over a list of seeds.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Deserialize;

use super::{structural_ok, CheckResult, HarnessError, Named, ProcessorEntry, RoleName, Rule, Scenario, SeedOutcome, Seeds, Verdict};
use crate::adversary::{
    adv_permissioned_sim, adv_permissionless_sim, attack_instance, build_eclipse_instances, indistinguishable_for,
    system_input, AdversaryStrategy, EclipseTiming, ReceiverKeyedDelay,
};
use crate::message::{Bit, Identifier, Message, Timeslot};
use crate::network::TimingSpec;
use crate::permitter::{PermitterSpec, RandomnessMode};
use crate::processor::Protocol;
use crate::protocols::{self, NaiveMajority};
use crate::resource::{Balance, ResourcePool};
use crate::scheduler::run_execution;
use crate::setting::{Auth, Regime, SettingFlags};
use crate::trace::Trace;

pub const ATTACKS: &[&str] = &["app7-sim", "app8-sim", "app9-eclipse", "bitcoin"];

fn ids(n: u32) -> Vec<Identifier> {
    (0..n).map(|i| Identifier::new(i).unwrap()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimKind {
    /// Processor 0 simulates everyone but itself and `target`.
    Permissioned { target: usize },
    /// Processor 0 simulates processor 1 with its own balance.
    Permissionless,
}

/// A simulation attack: the run under `s`, and for each observer a second
/// system input whose run that observer must not be able to tell apart.
#[derive(Clone)]
pub struct SimAttack {
    pub kind: SimKind,
    pub setting: SettingFlags,
    pub protocol: Arc<dyn Protocol>,
    pub identifiers: Vec<Identifier>,
    pub s: Vec<BTreeSet<Message>>,
    pub alternates: Vec<(usize, Vec<BTreeSet<Message>>)>,
    /// The two non-faulty processors expected to disagree.
    pub pair: (usize, usize),
    pub pool: ResourcePool,
    pub permitter: PermitterSpec,
    pub horizon: Timeslot,
    pub q: f64,
}

impl SimAttack {
    /// Three permissioned processors on naive majority; the adversary
    /// targets processor 2.
    pub fn app7() -> SimAttack {
        SimAttack {
            kind: SimKind::Permissioned { target: 2 },
            setting: SettingFlags::permissioned(Regime::Synchronous { delta: 2 }, Auth::Unauthenticated),
            protocol: Arc::new(NaiveMajority { rounds: 3, permissioned: true }),
            identifiers: ids(3),
            s: system_input(&[Some(0), Some(0), Some(1)]),
            alternates: vec![(2, system_input(&[Some(0), Some(1), Some(1)]))],
            pair: (1, 2),
            pool: ResourcePool::constant(ids(3).into_iter().map(|u| (u, 1.0))),
            permitter: PermitterSpec::Permissioned,
            horizon: 3,
            q: 1.0 / 3.0,
        }
    }

    /// Three processors where 0 and 1 hold equal balance and 2 holds none.
    pub fn app8() -> SimAttack {
        let u = ids(3);
        SimAttack {
            kind: SimKind::Permissionless,
            setting: SettingFlags::pow(Regime::Synchronous { delta: 2 }, Auth::Unauthenticated, 1.0, 4.0),
            protocol: Arc::new(NaiveMajority { rounds: 8, permissioned: false }),
            identifiers: u.clone(),
            s: system_input(&[Some(0), Some(0), Some(1)]),
            alternates: vec![
                (2, system_input(&[Some(0), Some(1), Some(1)])),
                (1, system_input(&[Some(0), Some(0), Some(0)])),
            ],
            pair: (1, 2),
            pool: ResourcePool::constant([(u[0], 1.0), (u[1], 1.0), (u[2], 0.0)]),
            permitter: PermitterSpec::Lottery { lambda: 1.0 },
            horizon: 8,
            q: 0.5,
        }
    }

    fn strategy(&self, s: &[BTreeSet<Message>]) -> Result<AdversaryStrategy, HarnessError> {
        let r = match self.kind {
            SimKind::Permissioned { target } => adv_permissioned_sim(target, s, &self.identifiers, self.protocol.clone()),
            SimKind::Permissionless => adv_permissionless_sim(s, &self.identifiers, &self.pool, self.protocol.clone()),
        };
        r.map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    fn run(&self, s: &[BTreeSet<Message>], seed: u64) -> Result<(Trace, bool), HarnessError> {
        let strategy = self.strategy(s)?;
        let instance = attack_instance(
            self.setting,
            self.protocol.clone(),
            &self.identifiers,
            s,
            &strategy,
            self.pool.clone(),
            self.permitter.clone(),
            seed,
        );
        let mut timing = ReceiverKeyedDelay { regime: self.setting.network, seed };
        let trace = run_execution(&instance, &mut timing, self.horizon).map_err(|error| HarnessError::Run { seed, error })?;
        let bounded = strategy.q_bounded(&instance, &trace, self.q);
        Ok((trace, bounded))
    }

    /// One seed: the attacked run, each alternate run, and the checks.
    pub fn sample(&self, seed: u64) -> Result<SeedOutcome, HarnessError> {
        let (trace, bounded) = self.run(&self.s, seed)?;
        let mut checks = BTreeMap::new();
        let mut structural = structural_ok(&trace, self.setting.network);
        for (observer, alt) in &self.alternates {
            let (other, _) = self.run(alt, seed)?;
            structural &= structural_ok(&other, self.setting.network);
            checks.insert(format!("view-p{observer}"), indistinguishable_for(&trace, &other, *observer, self.horizon));
        }
        let (a, b) = self.pair;
        let disagree = matches!((trace.output_of(a), trace.output_of(b)), (Some(x), Some(y)) if x != y);
        checks.insert("disagreement".into(), disagree);
        checks.insert("q-bounded".into(), bounded);
        checks.insert("structural".into(), structural);
        Ok(SeedOutcome { seed, outputs: outputs(&trace), checks, trace: None })
    }

    pub fn verdict(&self, name: &str, seeds: &[u64], epsilon: f64) -> Result<Verdict, HarnessError> {
        let samples = par_samples(seeds, |seed| self.sample(seed))?;
        let mut rules: BTreeMap<String, Rule> =
            self.alternates.iter().map(|(o, _)| (format!("view-p{o}"), Rule::All)).collect();
        rules.insert("disagreement".into(), Rule::AtLeast(1.0 - 2.0 * epsilon));
        rules.insert("q-bounded".into(), Rule::All);
        rules.insert("structural".into(), Rule::All);
        Ok(aggregate(name, rules, samples))
    }
}

fn outputs(trace: &Trace) -> Vec<Option<Bit>> {
    (0..trace.processors.len()).map(|p| trace.output_of(p)).collect()
}

fn par_samples(
    seeds: &[u64],
    f: impl Fn(u64) -> Result<SeedOutcome, HarnessError> + Sync,
) -> Result<Vec<SeedOutcome>, HarnessError> {
    seeds.par_iter().map(|&s| f(s)).collect()
}

fn aggregate(name: &str, rules: BTreeMap<String, Rule>, samples: Vec<SeedOutcome>) -> Verdict {
    let trials = samples.len();
    let checks = rules
        .into_iter()
        .map(|(check, rule)| {
            let ok = samples.iter().filter(|o| o.checks.get(&check) == Some(&true)).count();
            (check, CheckResult::new(ok, trials, rule))
        })
        .collect();
    Verdict::new(name, checks, samples)
}

/// The eclipse triple: a two-processor chain protocol that decides quickly
/// when it is alone, run in `I0`, `I1` and `I2`.
#[derive(Clone)]
pub struct EclipseAttack {
    pub balance: f64,
    pub delta: u64,
    /// Stabilisation slot `T`; every run stops there.
    pub stabilisation: Timeslot,
    /// Decisions must happen by this slot, `t0 < T`.
    pub t0: Timeslot,
    pub protocol: Arc<dyn Protocol>,
    pub permitter: PermitterSpec,
    pub alternate_timing: EclipseTiming,
}

impl EclipseAttack {
    pub fn app9() -> EclipseAttack {
        EclipseAttack {
            balance: 1.0,
            delta: 1,
            stabilisation: 50,
            t0: 40,
            protocol: Arc::new(protocols::Nakamoto { confirm_depth: 6, decide: Some(3) }),
            permitter: PermitterSpec::Pow { lambda: 0.35 },
            alternate_timing: EclipseTiming::Minimal,
        }
    }

    pub fn sample(&self, seed: u64) -> Result<SeedOutcome, HarnessError> {
        let (i0, i1, i2) = build_eclipse_instances(
            self.balance,
            self.delta,
            self.stabilisation,
            self.protocol.clone(),
            self.permitter.clone(),
            seed,
            self.alternate_timing,
        );
        let horizon = self.stabilisation;
        let run = |ti: &crate::adversary::TimedInstance| {
            let mut timing = ti.timing();
            run_execution(&ti.instance, timing.as_mut(), horizon).map_err(|error| HarnessError::Run { seed, error })
        };
        let (r0, r1, r2) = (run(&i0)?, run(&i1)?, run(&i2)?);
        let by = |trace: &Trace, p: usize, limit: Timeslot| trace.outputs()[p].filter(|&(_, t)| t <= limit).map(|(z, _)| z);
        let all_decided = |trace: &Trace| (0..trace.processors.len()).all(|p| by(trace, p, self.t0).is_some());
        let mut checks = BTreeMap::new();
        checks.insert("view-p0-i0-i1".into(), indistinguishable_for(&r0, &r1, 0, horizon));
        checks.insert("view-p1-i0-i2".into(), indistinguishable_for(&r0, &r2, 1, horizon));
        checks.insert("decides-i1".into(), all_decided(&r1));
        checks.insert("decides-i2".into(), all_decided(&r2));
        let before = self.t0.saturating_sub(1);
        checks.insert("split-i0".into(), by(&r0, 0, before) == Some(0) && by(&r0, 1, before) == Some(1));
        let regime = i0.regime;
        checks.insert(
            "structural".into(),
            structural_ok(&r0, regime) && structural_ok(&r1, regime) && structural_ok(&r2, regime),
        );
        Ok(SeedOutcome { seed, outputs: outputs(&r0), checks, trace: None })
    }

    pub fn verdict(&self, name: &str, seeds: &[u64], epsilon: f64) -> Result<Verdict, HarnessError> {
        let samples = par_samples(seeds, |seed| self.sample(seed))?;
        let rules = BTreeMap::from([
            ("view-p0-i0-i1".to_string(), Rule::All),
            ("view-p1-i0-i2".to_string(), Rule::All),
            ("decides-i1".to_string(), Rule::Above(1.0 - epsilon)),
            ("decides-i2".to_string(), Rule::Above(1.0 - epsilon)),
            ("split-i0".to_string(), Rule::Above(1.0 - 2.0 * epsilon)),
            ("structural".to_string(), Rule::All),
        ]);
        Ok(aggregate(name, rules, samples))
    }
}

/// Longest-chain mining with one private miner among `honest + 1` equal
/// miners, block rate about one per ten slots.
pub fn bitcoin_scenario(honest: u32, runs: u64, slots: Timeslot) -> Scenario {
    let n = honest + 1;
    let lambda = -(0.975f64).ln();
    Scenario {
        name: "bitcoin-private-mining".into(),
        protocol: Named { name: "nakamoto".into(), params: serde_json::json!({ "confirm_depth": 6 }) },
        setting: SettingFlags::pow(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated, n as f64 / 4.0, n as f64 * 2.0),
        processors: (0..n).map(|id| ProcessorEntry { id, input: vec![], role: RoleName::Honest }).collect(),
        pool: ResourcePool::Constant { balances: (0..n).map(|id| Balance { id: Identifier::new(id).unwrap(), balance: 1.0 }).collect() },
        permitter: PermitterSpec::Pow { lambda },
        randomness: RandomnessMode::FixedFunctionPerRun,
        timing: TimingSpec::Minimal,
        adversary: Named { name: "private-mining".into(), params: serde_json::json!({ "processors": [honest], "give_up": 3 }) },
        q: 1.0 / n as f64,
        epsilon: 0.05,
        horizon: slots,
        seeds: Seeds::Count(runs),
        checks: vec!["consistency".into(), "liveness".into(), "q-bounded".into()],
        thresholds: BTreeMap::from([
            ("confirm-depth".to_string(), 6.0),
            ("window".to_string(), 100.0),
            ("consistency".to_string(), 0.05),
            ("liveness".to_string(), 0.95),
        ]),
        trace_dir: None,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimParams {
    #[serde(default)]
    target: Option<usize>,
    /// Observer and the other system input it must not tell apart.
    alternates: Vec<(usize, Vec<Option<Bit>>)>,
    #[serde(default = "pair")]
    pair: (usize, usize),
}

fn pair() -> (usize, usize) {
    (1, 2)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EclipseParams {
    balance: f64,
    stabilisation: Timeslot,
    t0: Timeslot,
    #[serde(default)]
    partition_alternates: bool,
}

fn input_of(p: &ProcessorEntry) -> Result<Option<Bit>, HarnessError> {
    match p.input.as_slice() {
        [] => Ok(None),
        [z] => Ok(Some(*z)),
        _ => Err(HarnessError::Scenario(format!("processor {} holds both values", p.id))),
    }
}

/// Runs `s` if it names one of the attack adversaries.
pub fn run_attack_scenario(s: &Scenario) -> Result<Option<Verdict>, HarnessError> {
    let seeds = s.seeds.list();
    let params = if s.adversary.params.is_null() { serde_json::json!({}) } else { s.adversary.params.clone() };
    let bad = |e: serde_json::Error| HarnessError::Scenario(format!("adversary parameters: {e}"));
    match s.adversary.name.as_str() {
        "app7-sim" | "app8-sim" => {
            let p: SimParams = serde_json::from_value(params).map_err(bad)?;
            let kind = if s.adversary.name == "app7-sim" {
                SimKind::Permissioned {
                    target: p.target.ok_or_else(|| HarnessError::Scenario("app7-sim needs a target".into()))?,
                }
            } else {
                SimKind::Permissionless
            };
            let values = s.processors.iter().map(input_of).collect::<Result<Vec<_>, _>>()?;
            let attack = SimAttack {
                kind,
                setting: s.setting,
                protocol: s.protocol()?,
                identifiers: s.identifiers()?,
                s: system_input(&values),
                alternates: p.alternates.iter().map(|(o, v)| (*o, system_input(v))).collect(),
                pair: p.pair,
                pool: s.pool.clone(),
                permitter: s.permitter.clone(),
                horizon: s.horizon,
                q: s.q,
            };
            attack.verdict(&s.name, &seeds, s.epsilon).map(Some)
        }
        "app9-eclipse" => {
            let p: EclipseParams = serde_json::from_value(params).map_err(bad)?;
            let attack = EclipseAttack {
                balance: p.balance,
                delta: s.setting.network.delta(),
                stabilisation: p.stabilisation,
                t0: p.t0,
                protocol: s.protocol()?,
                permitter: s.permitter.clone(),
                alternate_timing: if p.partition_alternates { EclipseTiming::Partition } else { EclipseTiming::Minimal },
            };
            attack.verdict(&s.name, &seeds, s.epsilon).map(Some)
        }
        _ => Ok(None),
    }
}

/// The named attack with its built-in configuration.
pub fn run_named_attack(name: &str, seeds: &[u64], epsilon: f64) -> Result<Verdict, HarnessError> {
    match name {
        "app7-sim" => SimAttack::app7().verdict(name, seeds, epsilon),
        "app8-sim" => SimAttack::app8().verdict(name, seeds, epsilon),
        "app9-eclipse" => EclipseAttack::app9().verdict(name, seeds, epsilon),
        "bitcoin" => {
            let mut s = bitcoin_scenario(3, 0, 500);
            s.seeds = Seeds::List(seeds.to_vec());
            super::run_scenario(&s)
        }
        other => Err(HarnessError::Scenario(format!("unknown attack {other:?}; known: {}", ATTACKS.join(", ")))),
    }
}
