//! Exhaustive check of the stake-weighted broadcast protocol over every
//! delay-only adversary choice up to the decision slot.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{check_bb, HarnessError};
use crate::enumerate::{explore, DelayMenu};
use crate::message::{Bit, Identifier, Message};
use crate::permitter::{PermitterSpec, RandomnessMode};
use crate::protocols::{check_dagger_lemmas, BBConfig, PosBb};
use crate::resource::ResourcePool;
use crate::scheduler::{run_execution, Instance, ProcessorSpec, Role};
use crate::setting::{Regime, SettingFlags};

/// `n` processors; the first `stake.len()` are the stake holders.
#[derive(Clone, Debug, Serialize)]
pub struct ExhaustiveConfig {
    pub name: String,
    pub n: usize,
    pub stake: Vec<f64>,
    pub q: f64,
    pub delta: u64,
    pub budget: usize,
    /// Restricts the faulty sets; otherwise every q-bounded set.
    pub faulty: Option<Vec<BTreeSet<usize>>>,
    /// Restricts the stake holders' input values; otherwise every
    /// combination.
    pub inputs: Option<Vec<Vec<Vec<Bit>>>>,
}

impl ExhaustiveConfig {
    pub fn new(name: &str, n: usize, stake: &[f64], q: f64) -> Self {
        ExhaustiveConfig {
            name: name.into(),
            n,
            stake: stake.to_vec(),
            q,
            delta: 2,
            budget: 50_000_000,
            faulty: None,
            inputs: None,
        }
    }

    pub fn bb_config(&self) -> Result<BBConfig, HarnessError> {
        let ustar = self.stake.iter().enumerate().map(|(i, &b)| (id(i), b)).collect();
        BBConfig::new(self.delta, self.q, ustar).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    /// Every set of stake holders whose joint stake is within `q`.
    pub fn faulty_sets(&self) -> Vec<BTreeSet<usize>> {
        if let Some(f) = &self.faulty {
            return f.clone();
        }
        let total: f64 = self.stake.iter().sum();
        let m = self.stake.len();
        (0u32..1 << m)
            .map(|mask| (0..m).filter(|&i| mask >> i & 1 == 1).collect::<BTreeSet<usize>>())
            .filter(|set| set.iter().map(|&i| self.stake[i]).sum::<f64>() <= self.q * total + 1e-12)
            .collect()
    }

    /// Stake holders take `{0}`, `{1}` or `{0, 1}`; everyone else shares
    /// the value when the holders agree on one, and takes `{0}` otherwise.
    pub fn input_combinations(&self) -> Vec<Vec<BTreeSet<Message>>> {
        let options: [&[Bit]; 3] = [&[0], &[1], &[0, 1]];
        let m = self.stake.len();
        let holders: Vec<Vec<Vec<Bit>>> = match &self.inputs {
            Some(v) => v.clone(),
            None => (0..3usize.pow(m as u32))
                .map(|mut code| {
                    (0..m)
                        .map(|_| {
                            let pick = options[code % 3];
                            code /= 3;
                            pick.to_vec()
                        })
                        .collect()
                })
                .collect(),
        };
        holders
            .into_iter()
            .map(|values| {
                let mut inputs: Vec<BTreeSet<Message>> =
                    values.iter().map(|v| v.iter().map(|&z| Message::general(z)).collect()).collect();
                let shared = if inputs.windows(2).all(|w| w[0] == w[1]) && inputs[0].len() == 1 {
                    inputs[0].clone()
                } else {
                    [Message::general(0)].into()
                };
                inputs.resize(self.n, shared);
                inputs
            })
            .collect()
    }
}

fn id(i: usize) -> Identifier {
    Identifier::new(i as u32).unwrap()
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchFailure {
    pub faulty: BTreeSet<usize>,
    pub inputs: Vec<Vec<Bit>>,
    pub path: Vec<usize>,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExhaustiveReport {
    pub config: ExhaustiveConfig,
    pub k: usize,
    pub horizon: u64,
    pub branches: usize,
    pub agreement_failures: usize,
    pub validity_failures: usize,
    pub dagger_violations: usize,
    /// Up to ten failing branches.
    pub failures: Vec<BranchFailure>,
    pub seconds: f64,
}

impl ExhaustiveReport {
    pub fn passed(&self) -> bool {
        self.agreement_failures == 0 && self.validity_failures == 0 && self.dagger_violations == 0
    }
}

/// Runs every input combination and q-bounded faulty set through every
/// branch of the delay menu. Faulty processors may defer and delay per
/// receiver; honest batches get one delay each.
pub fn exhaustive_pos_bb(config: &ExhaustiveConfig) -> Result<ExhaustiveReport, HarnessError> {
    let start = Instant::now();
    let bb = config.bb_config()?;
    let horizon = bb.decision_slot();
    let regime = Regime::Synchronous { delta: config.delta };
    let protocol = Arc::new(PosBb { config: bb.clone() });
    let pool = ResourcePool::constant(config.stake.iter().enumerate().map(|(i, &b)| (id(i), b)));
    let mut report = ExhaustiveReport {
        config: config.clone(),
        k: bb.k,
        horizon,
        branches: 0,
        agreement_failures: 0,
        validity_failures: 0,
        dagger_violations: 0,
        failures: Vec::new(),
        seconds: 0.0,
    };
    for faulty in config.faulty_sets() {
        for inputs in config.input_combinations() {
            let instance = Instance {
                setting: SettingFlags::pos(regime),
                protocol: protocol.clone(),
                processors: inputs
                    .iter()
                    .enumerate()
                    .map(|(p, inp)| ProcessorSpec {
                        identifier: id(p),
                        inputs: inp.clone(),
                        role: if faulty.contains(&p) { Role::DelayFaulty } else { Role::Honest },
                    })
                    .collect(),
                pool: pool.clone(),
                permitter: PermitterSpec::Gate,
                randomness: RandomnessMode::FixedFunctionPerRun,
                seed: 0,
                record_state: false,
            };
            let values: Vec<Vec<Bit>> =
                inputs.iter().map(|s| s.iter().filter_map(Message::as_bit).collect()).collect();
            let mut failures: BTreeMap<&'static str, usize> = BTreeMap::new();
            let mut examples = Vec::new();
            let outcome = explore(config.budget, |tape| {
                let trace = {
                    let mut menu = DelayMenu::new(regime, horizon, &faulty, tape);
                    run_execution(&instance, &mut menu, horizon)?
                };
                let out = check_bb(&trace);
                let dagger = check_dagger_lemmas(&trace, &bb);
                let mut reasons = Vec::new();
                if !out.agreement {
                    *failures.entry("agreement").or_default() += 1;
                    reasons.push("agreement".to_string());
                }
                if !out.validity {
                    *failures.entry("validity").or_default() += 1;
                    reasons.push("validity".to_string());
                }
                if !dagger.is_empty() {
                    *failures.entry("dagger").or_default() += 1;
                    reasons.push(format!("{dagger:?}"));
                }
                if !reasons.is_empty() && examples.len() < 10 {
                    examples.push(BranchFailure {
                        faulty: faulty.clone(),
                        inputs: values.clone(),
                        path: tape.path(),
                        reason: reasons.join("; "),
                    });
                }
                Ok(())
            });
            let branches = match outcome {
                Ok(Ok(n)) => n,
                Ok(Err(error)) => return Err(HarnessError::Run { seed: 0, error }),
                Err(e) => return Err(HarnessError::Scenario(e.to_string())),
            };
            report.branches += branches;
            report.agreement_failures += failures.get("agreement").copied().unwrap_or(0);
            report.validity_failures += failures.get("validity").copied().unwrap_or(0);
            report.dagger_violations += failures.get("dagger").copied().unwrap_or(0);
            let room = 10usize.saturating_sub(report.failures.len());
            report.failures.extend(examples.into_iter().take(room));
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// The configurations used for the full check. The first three have
/// `k = 1` and cover every input combination and q-bounded faulty set; the
/// last has `k = 2` with both faulty holders and one split input.
pub fn standard_configs() -> Vec<ExhaustiveConfig> {
    let mut two_rounds = ExhaustiveConfig::new("three-holders-two-faulty", 3, &[1.0, 1.0, 1.0], 0.7);
    two_rounds.faulty = Some(vec![[0, 1].into()]);
    two_rounds.inputs = Some(vec![vec![vec![0], vec![1], vec![1]]]);
    vec![
        ExhaustiveConfig::new("four-processors-three-equal-holders", 4, &[1.0, 1.0, 1.0], 0.5),
        ExhaustiveConfig::new("three-processors-unequal-holders", 3, &[1.0, 3.0], 0.9),
        ExhaustiveConfig::new("three-processors-three-holders", 3, &[1.0, 1.0, 1.0], 0.4),
        two_rounds,
    ]
}

/// Limit on the total running time of the standard configurations.
pub const TIME_LIMIT: Duration = Duration::from_secs(300);
