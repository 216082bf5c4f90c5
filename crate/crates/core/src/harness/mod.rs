//! Scenario files, seed sweeps, property checks and verdicts.

pub mod attacks;
pub mod exhaustive;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{DelaySchedule, ScheduledTiming};
use crate::compliance::{ComplianceError, KRunSystem};
use crate::message::{Bit, Identifier, Message, Timeslot};
use crate::network::{validate_timing_rule, TimingRule, TimingSpec};
use crate::permitter::{PermitterSpec, RandomnessMode};
use crate::processor::{input_values, Protocol};
use crate::protocols::{self, check_consistency_liveness, check_weak_decentralisation, count_forks, RegistryError};
use crate::resource::{check_q_bounded, check_q_bounded_count, PoolError, PoolPoint, ResourcePool};
use crate::scheduler::{run_execution, Instance, ProcessorSpec, Role, RunError};
use crate::setting::{Regime, SettingFlags};
use crate::trace::{deliveries_injective, RoleTag, Trace};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959964;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("pool: {0}")]
    Pool(#[from] PoolError),
    #[error("invalid instance: {0}")]
    Instance(RunError),
    #[error("seed {seed}: {error}")]
    Run { seed: u64, error: RunError },
    #[error(transparent)]
    Compliance(#[from] ComplianceError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub name: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleName {
    #[default]
    Honest,
    DelayFaulty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorEntry {
    pub id: u32,
    /// Values `z` of the general-signed inputs `z_{U*}`.
    #[serde(default)]
    pub input: Vec<Bit>,
    #[serde(default)]
    pub role: RoleName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn list(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

/// One experiment: everything needed to build an instance per seed, the
/// adversary, and the checks to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub protocol: Named,
    pub setting: SettingFlags,
    #[serde(default)]
    pub processors: Vec<ProcessorEntry>,
    pub pool: ResourcePool,
    pub permitter: PermitterSpec,
    #[serde(default)]
    pub randomness: RandomnessMode,
    #[serde(default = "minimal_timing")]
    pub timing: TimingSpec,
    #[serde(default = "no_adversary")]
    pub adversary: Named,
    #[serde(default)]
    pub q: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub horizon: Timeslot,
    pub seeds: Seeds,
    #[serde(default)]
    pub checks: Vec<String>,
    /// Frequency bounds for the Monte Carlo chain checks.
    #[serde(default)]
    pub thresholds: BTreeMap<String, f64>,
    /// Where to write one JSON-lines trace per seed.
    #[serde(default)]
    pub trace_dir: Option<String>,
}

fn minimal_timing() -> TimingSpec {
    TimingSpec::Minimal
}

fn no_adversary() -> Named {
    Named { name: "none".into(), params: serde_json::Value::Null }
}

fn default_epsilon() -> f64 {
    0.1
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, HarnessError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(HarnessError::Scenario(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(HarnessError::Scenario(format!("q {} not in [0, 1]", self.q)));
        }
        self.setting.validate().map_err(|e| HarnessError::Scenario(e.to_string()))?;
        for c in &self.checks {
            if !KNOWN_CHECKS.contains(&c.as_str()) {
                return Err(HarnessError::Scenario(format!("unknown check {c:?}")));
            }
        }
        Ok(())
    }

    pub fn identifiers(&self) -> Result<Vec<Identifier>, HarnessError> {
        self.processors
            .iter()
            .map(|p| Identifier::new(p.id).ok_or_else(|| HarnessError::Scenario(format!("identifier {} is reserved", p.id))))
            .collect()
    }

    pub fn protocol(&self) -> Result<Arc<dyn Protocol>, HarnessError> {
        Ok(protocols::protocol_by_name(&self.protocol.name, &self.protocol.params)?)
    }

    /// The fixed part of a k-run system: protocol, setting, pool, permitter.
    pub fn krun_system(&self) -> Result<KRunSystem, HarnessError> {
        Ok(KRunSystem {
            setting: self.setting,
            protocol: self.protocol()?,
            identifiers: self.identifiers()?,
            pool: self.pool.clone(),
            permitter: self.permitter.clone(),
        })
    }
}

pub const KNOWN_CHECKS: &[&str] = &[
    "structural",
    "bb",
    "bb-probabilistic",
    "weak-decentralisation",
    "consistency",
    "liveness",
    "no-forks",
    "dagger",
    "q-bounded",
];

/// Agreement and validity of one trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BbOutcome {
    /// Every non-faulty processor gave an output.
    pub decided: bool,
    pub agreement: bool,
    pub validity: bool,
}

impl BbOutcome {
    pub fn holds(&self) -> bool {
        self.decided && self.agreement && self.validity
    }
}

/// The general's value if it is honest: every processor holds the same
/// single general-signed value.
pub fn honest_general(inputs: &[BTreeSet<Message>]) -> Option<Bit> {
    let mut values = inputs.iter().map(input_values);
    let first = values.next()?;
    if first.len() != 1 {
        return None;
    }
    values.all(|v| v == first).then(|| *first.iter().next().unwrap())
}

/// Missing outputs count against agreement and validity.
pub fn check_bb(trace: &Trace) -> BbOutcome {
    let inputs: Vec<BTreeSet<Message>> = trace.processors.iter().map(|p| p.inputs.clone()).collect();
    let general = honest_general(&inputs);
    let outs: Vec<Option<Bit>> = trace
        .processors
        .iter()
        .filter(|p| p.role == RoleTag::Honest)
        .map(|p| trace.output_of(p.index))
        .collect();
    let decided = outs.iter().all(Option::is_some);
    let agreement = decided && outs.windows(2).all(|w| w[0] == w[1]);
    let validity = decided && general.map_or(true, |z| outs.iter().all(|o| *o == Some(z)));
    BbOutcome { decided, agreement, validity }
}

/// Deliveries are injective and every delivery respects the regime.
pub fn structural_ok(trace: &Trace, regime: Regime) -> bool {
    deliveries_injective(trace) && validate_timing_rule(regime, &trace.deliveries(), &trace.broadcasts()).is_ok()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub passed: bool,
    pub successes: usize,
    pub trials: usize,
    pub frequency: f64,
    pub ci95: (f64, f64),
    /// How `frequency` is judged.
    pub rule: String,
}

impl CheckResult {
    pub fn new(successes: usize, trials: usize, rule: Rule) -> Self {
        let frequency = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let passed = match rule {
            Rule::All => successes == trials,
            Rule::Above(x) => frequency > x,
            Rule::AtLeast(x) => frequency >= x,
        };
        CheckResult { passed, successes, trials, frequency, ci95: wilson_interval(successes, trials, Z95), rule: rule.describe() }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Rule {
    All,
    Above(f64),
    AtLeast(f64),
}

impl Rule {
    fn describe(self) -> String {
        match self {
            Rule::All => "all".into(),
            Rule::Above(x) => format!("> {x}"),
            Rule::AtLeast(x) => format!(">= {x}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub outputs: Vec<Option<Bit>>,
    /// Check name to whether it held on this seed.
    pub checks: BTreeMap<String, bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub scenario: String,
    pub ci_method: String,
    pub checks: BTreeMap<String, CheckResult>,
    pub seeds: Vec<SeedOutcome>,
    pub passed: bool,
}

impl Verdict {
    pub fn new(scenario: &str, checks: BTreeMap<String, CheckResult>, seeds: Vec<SeedOutcome>) -> Self {
        let passed = checks.values().all(|c| c.passed);
        Verdict { scenario: scenario.into(), ci_method: "wilson-score-95".into(), checks, seeds, passed }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdicts serialise")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DelayParams {
    /// `[processor, instructed slot, actual slot or null]`.
    #[serde(default)]
    deferrals: Vec<(usize, Timeslot, Option<Timeslot>)>,
    /// `[from, to, extra slots]`.
    #[serde(default)]
    extra: Vec<(usize, usize, u64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrivateParams {
    processors: Vec<usize>,
    #[serde(default = "three")]
    give_up: u64,
}

fn three() -> u64 {
    3
}

fn parse<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T, HarnessError> {
    let v = if v.is_null() { serde_json::json!({}) } else { v.clone() };
    serde_json::from_value(v).map_err(|e| HarnessError::Scenario(format!("adversary parameters: {e}")))
}

struct Plan {
    instance: Instance,
    schedule: Option<DelaySchedule>,
}

fn plan(s: &Scenario) -> Result<Plan, HarnessError> {
    let ids = s.identifiers()?;
    let mut roles: Vec<Role> = s
        .processors
        .iter()
        .map(|p| match p.role {
            RoleName::Honest => Role::Honest,
            RoleName::DelayFaulty => Role::DelayFaulty,
        })
        .collect();
    let mut schedule = None;
    match s.adversary.name.as_str() {
        "none" => {}
        "delay-schedule" => {
            let p: DelayParams = parse(&s.adversary.params)?;
            let mut d = DelaySchedule::default();
            for (proc_, from, to) in p.deferrals {
                d.deferrals.insert((proc_, from), to);
                roles[proc_] = Role::DelayFaulty;
            }
            for (from, to, extra) in p.extra {
                d.extra.insert((from, to), extra);
            }
            schedule = Some(d);
        }
        "private-mining" => {
            let p: PrivateParams = parse(&s.adversary.params)?;
            let machine: Arc<dyn Protocol> = Arc::new(protocols::PrivateMining { give_up: p.give_up });
            for i in p.processors {
                let slot = roles.get_mut(i).ok_or_else(|| HarnessError::Scenario(format!("no processor {i}")))?;
                *slot = Role::Controlled(machine.clone());
            }
        }
        other => return Err(HarnessError::Scenario(format!("adversary {other:?} is not a per-seed adversary"))),
    }
    let instance = Instance {
        setting: s.setting,
        protocol: s.protocol()?,
        processors: ids
            .iter()
            .zip(&s.processors)
            .zip(roles)
            .map(|((&identifier, p), role)| ProcessorSpec {
                identifier,
                inputs: p.input.iter().map(|&z| Message::general(z)).collect(),
                role,
            })
            .collect(),
        pool: s.pool.clone(),
        permitter: s.permitter.clone(),
        randomness: s.randomness,
        seed: 0,
        record_state: false,
    };
    Ok(Plan { instance, schedule })
}

fn timing_for(s: &Scenario, schedule: &Option<DelaySchedule>, seed: u64) -> Box<dyn TimingRule> {
    match schedule {
        Some(d) => Box::new(ScheduledTiming { regime: s.setting.network, schedule: d.clone() }),
        None => s.timing.build(s.setting.network, seed),
    }
}

/// One seed of a per-seed scenario.
pub fn run_seed(s: &Scenario, seed: u64) -> Result<(Trace, SeedOutcome), HarnessError> {
    let Plan { mut instance, schedule } = plan(s)?;
    instance.seed = seed;
    let mut timing = timing_for(s, &schedule, seed);
    let trace = run_execution(&instance, timing.as_mut(), s.horizon).map_err(|error| HarnessError::Run { seed, error })?;
    let mut checks = BTreeMap::new();
    let structural = structural_ok(&trace, s.setting.network);
    checks.insert("structural".to_string(), structural);
    let depth = s.thresholds.get("confirm-depth").copied().unwrap_or(6.0) as u64;
    let window = s.thresholds.get("window").copied().unwrap_or(100.0) as Timeslot;
    let chain = if s.checks.iter().any(|c| c == "consistency" || c == "liveness") {
        Some(check_consistency_liveness(&trace, depth, window))
    } else {
        None
    };
    for c in &s.checks {
        let ok = structural && match c.as_str() {
            "structural" => true,
            "bb" | "bb-probabilistic" => check_bb(&trace).holds(),
            "weak-decentralisation" => check_weak_decentralisation(&trace),
            "consistency" => chain.as_ref().unwrap().consistent(),
            "liveness" => chain.as_ref().unwrap().live(),
            "no-forks" => count_forks(&trace) == 0,
            "dagger" => {
                if s.protocol.name != "pos-bb" {
                    return Err(HarnessError::Scenario("dagger needs the pos-bb protocol".into()));
                }
                let cfg = protocols::pos_bb_config(&s.protocol.params)?;
                protocols::check_dagger_lemmas(&trace, &cfg).is_empty()
            }
            "q-bounded" => q_bounded(&instance, &trace, s.q),
            _ => unreachable!("validated"),
        };
        checks.insert(c.clone(), ok);
    }
    let outputs = (0..trace.processors.len()).map(|p| trace.output_of(p)).collect();
    let mut trace_ref = None;
    if let Some(dir) = &s.trace_dir {
        std::fs::create_dir_all(dir)?;
        let path = format!("{dir}/seed-{seed}.jsonl");
        std::fs::write(&path, trace.to_jsonl())?;
        trace_ref = Some(path);
    }
    Ok((trace, SeedOutcome { seed, outputs, checks, trace: trace_ref }))
}

fn q_bounded(instance: &Instance, trace: &Trace, q: f64) -> bool {
    let faulty = instance.faulty();
    if instance.setting.permissioned {
        return check_q_bounded_count(faulty.len(), instance.processors.len(), q);
    }
    let adversary = faulty.iter().map(|&p| instance.processors[p].identifier).collect();
    check_q_bounded(&instance.pool, &adversary, &instance.identifiers(), q, &trace.reached_points())
}

/// Runs every seed (in parallel, merged in seed order) and aggregates.
pub fn run_scenario(s: &Scenario) -> Result<Verdict, HarnessError> {
    s.validate()?;
    if let Some(v) = attacks::run_attack_scenario(s)? {
        return Ok(v);
    }
    let Plan { instance, .. } = plan(s)?;
    instance.validate().map_err(HarnessError::Instance)?;
    let domain: Vec<PoolPoint> = (0..=s.horizon).map(PoolPoint::bare).collect();
    s.pool.validate(&instance.identifiers(), s.setting.sizing, &domain)?;
    let seeds = s.seeds.list();
    let outcomes: Vec<SeedOutcome> = seeds
        .par_iter()
        .map(|&seed| run_seed(s, seed).map(|(_, o)| o))
        .collect::<Result<Vec<_>, _>>()?;
    let trials = outcomes.len();
    let count = |name: &str| outcomes.iter().filter(|o| o.checks.get(name) == Some(&true)).count();
    let mut checks = BTreeMap::new();
    checks.insert("structural".to_string(), CheckResult::new(count("structural"), trials, Rule::All));
    for c in &s.checks {
        let rule = match c.as_str() {
            "bb-probabilistic" => Rule::Above(1.0 - s.epsilon),
            // The threshold bounds the violation rate.
            "consistency" => match s.thresholds.get("consistency") {
                Some(&bound) if bound > 0.0 => Rule::Above(1.0 - bound),
                _ => Rule::All,
            },
            "liveness" => s.thresholds.get("liveness").map_or(Rule::All, |&x| Rule::Above(x)),
            _ => Rule::All,
        };
        checks.insert(c.clone(), CheckResult::new(count(c), trials, rule));
    }
    Ok(Verdict::new(&s.name, checks, outcomes))
}

/// `scenario` with the value at JSON pointer `path` replaced by each value
/// in turn.
pub fn sweep(s: &Scenario, path: &str, values: &[serde_json::Value]) -> Result<Vec<Verdict>, HarnessError> {
    let base = serde_json::to_value(s)?;
    values
        .iter()
        .map(|v| {
            let mut doc = base.clone();
            let slot = doc
                .pointer_mut(path)
                .ok_or_else(|| HarnessError::Scenario(format!("no field at {path}")))?;
            *slot = v.clone();
            let mut variant: Scenario = serde_json::from_value(doc)?;
            variant.name = format!("{} [{path}={v}]", s.name);
            run_scenario(&variant)
        })
        .collect()
}

/// Checks one stored trace: structure, weak decentralisation and the
/// broadcast properties.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceReport {
    pub structural: bool,
    pub weakly_decentralised: bool,
    pub bb: BbOutcome,
    pub passed: bool,
}

pub fn verify_trace(trace: &Trace) -> TraceReport {
    let structural = structural_ok(trace, trace.setting.network);
    let bb = check_bb(trace);
    TraceReport { structural, weakly_decentralised: check_weak_decentralisation(trace), bb, passed: structural && bb.holds() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_matches_hand_values() {
        let (lo, hi) = wilson_interval(0, 10, Z95);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.27753).abs() < 1e-4);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.40383).abs() < 1e-4 && (hi - 0.59617).abs() < 1e-4);
    }

    #[test]
    fn general_is_honest_only_with_one_shared_value() {
        let one = |z| -> BTreeSet<Message> { [Message::general(z)].into() };
        assert_eq!(honest_general(&[one(1), one(1)]), Some(1));
        assert_eq!(honest_general(&[one(1), one(0)]), None);
        let both: BTreeSet<Message> = [Message::general(0), Message::general(1)].into();
        assert_eq!(honest_general(&[both.clone(), both]), None);
    }
}
