//! One line per acceptance criterion. Runs without the libtest harness so
//! the lines are never captured; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

mod common;

use permsim::compliance::{
    build_full_chain, compute_partition, demonstrate_theorem_3_3, echo_decide_system, is_compliant, Breach, ChainBuilder,
    Deviation, DeviationSet, Expander,
};
use permsim::harness::attacks::{bitcoin_scenario, EclipseAttack, SimAttack};
use permsim::harness::exhaustive::{exhaustive_pos_bb, standard_configs, TIME_LIMIT};
use permsim::harness::{run_scenario, Named, Scenario, Seeds, Verdict};

const BUDGET: usize = 1_000_000;
const EPSILON: f64 = 0.1;

type Outcome = (bool, String);

fn summary(v: &Verdict) -> String {
    v.checks
        .iter()
        .map(|(name, c)| format!("{name} {}/{}{}", c.successes, c.trials, if c.passed { "" } else { " (failed)" }))
        .collect::<Vec<_>>()
        .join(", ")
}

fn exhaustive_broadcast() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut ok = true;
    for config in standard_configs() {
        match exhaustive_pos_bb(&config) {
            Ok(r) => {
                ok &= r.passed();
                details.push(format!(
                    "{} k={} branches={} agreement-fail={} validity-fail={} dagger={}",
                    config.name, r.k, r.branches, r.agreement_failures, r.validity_failures, r.dagger_violations
                ));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{}: {e}", config.name));
            }
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < TIME_LIMIT;
    details.push(format!("{:.0}s", elapsed.as_secs_f64()));
    (ok, details.join("; "))
}

fn compliance_chain() -> Outcome {
    let sys = echo_decide_system();
    let report = match demonstrate_theorem_3_3(&sys, 8, BUDGET) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let Some(k) = report.k else { return (false, "no decision bound".into()) };
    let part = compute_partition(&sys, k, BUDGET).unwrap();
    let broadcasters = part.broadcasters().len();
    let chain = build_full_chain(&part, sys.len()).unwrap();
    let mut ex = Expander::new(&sys, k);
    let compliant = is_compliant(&chain, &part, &mut ex).is_ok();
    let empty_start = chain[0].is_empty();
    let last = chain.last().unwrap();
    let all_inputs = (0..sys.len()).all(|p| last.contains(&Deviation::Input(p)));
    let contradiction = report.propagation_holds && matches!(report.breach, Some((_, Breach::Agreement | Breach::Validity)));

    let mut b = ChainBuilder::new(&part, DeviationSet::new());
    b.remove(3).unwrap();
    let golden: Vec<DeviationSet> = serde_json::from_str(include_str!("golden/last_broadcaster_chain.json")).unwrap();
    let golden_ok = b.seq == golden;

    let ok = k == 4 && broadcasters <= 2 && compliant && empty_start && all_inputs && contradiction && golden_ok;
    let detail = format!(
        "k={k} broadcasters={broadcasters} chain-length={} compliant={compliant} empty-start={empty_start} all-inputs-flipped={all_inputs} breach={:?} golden={golden_ok}",
        chain.len(),
        report.breach
    );
    (ok, detail)
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn verdict_outcome(v: Result<Verdict, permsim::harness::HarnessError>) -> Outcome {
    match v {
        Ok(v) => (v.passed, summary(&v)),
        Err(e) => (false, e.to_string()),
    }
}

fn bitcoin() -> Outcome {
    let mut single = bitcoin_scenario(0, 1000, 500);
    single.name = "single-miner".into();
    single.adversary = Named { name: "none".into(), params: serde_json::Value::Null };
    single.q = 0.0;
    single.checks = vec!["no-forks".into()];
    let (solo_ok, solo) = verdict_outcome(run_scenario(&single));

    let start = Instant::now();
    let (attack_ok, attack) = verdict_outcome(run_scenario(&bitcoin_scenario(3, 10_000, 500)));
    (solo_ok && attack_ok, format!("single miner: {solo}; q=0.25: {attack} in {:.0}s", start.elapsed().as_secs_f64()))
}

fn fuzz() -> Outcome {
    let mut ok = true;
    let mut details = Vec::new();
    for (name, run) in common::fuzz::all() {
        match run() {
            Ok(()) => details.push(format!("{name} ok")),
            Err(e) => {
                ok = false;
                details.push(format!("{name} FAILED: {e}"));
            }
        }
    }
    (ok, format!("{} cases each; {}", common::fuzz::CASES, details.join(", ")))
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    Scenario::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_dir(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario("pos-bb.json");
    s.seeds = Seeds::Count(50);
    s.trace_dir = Some(dir.path().to_string_lossy().into_owned());
    let first = run_scenario(&s).unwrap().to_json();
    let first_traces = read_dir(dir.path());
    let second = run_scenario(&s).unwrap().to_json();
    let second_traces = read_dir(dir.path());
    let scenario_ok = first == second && first_traces == second_traces && first_traces.len() == 50;

    let attack = |seed_list: &[u64]| EclipseAttack::app9().verdict("eclipse", seed_list, EPSILON).unwrap().to_json();
    let attack_ok = attack(&seeds(100)) == attack(&seeds(100));
    let btc = |_: ()| run_scenario(&bitcoin_scenario(3, 50, 300)).unwrap().to_json();
    let btc_ok = btc(()) == btc(());
    (
        scenario_ok && attack_ok && btc_ok,
        format!("verdicts and {} trace files identical: {scenario_ok}; eclipse rerun: {attack_ok}; mining rerun: {btc_ok}", first_traces.len()),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("exhaustive stake-weighted broadcast", exhaustive_broadcast),
        ("compliant chain", compliance_chain),
        ("permissioned simulation attack", || verdict_outcome(SimAttack::app7().verdict("app7-sim", &seeds(1000), EPSILON))),
        ("permissionless simulation attack", || verdict_outcome(SimAttack::app8().verdict("app8-sim", &seeds(1000), EPSILON))),
        ("eclipse attack", || verdict_outcome(EclipseAttack::app9().verdict("app9-eclipse", &seeds(1000), EPSILON))),
        ("longest-chain mining", bitcoin),
        ("fuzzing", fuzz),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = run();
        println!(
            "criterion {} ({name}): {} [{:.1}s] {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
