use std::collections::BTreeSet;

use permsim::compliance::*;

const BUDGET: usize = 1_000_000;

fn set(ds: &[Deviation]) -> DeviationSet {
    ds.iter().copied().collect()
}

#[test]
fn echo_decide_partition() {
    let sys = echo_decide_system();
    assert_eq!(find_decision_bound(&sys, 8, BUDGET).unwrap(), Some(4));
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    assert_eq!(part.by_slot[&1], BTreeSet::new());
    assert_eq!(part.by_slot[&2], [2].into());
    assert_eq!(part.by_slot[&3], [3].into());
    assert_eq!(part.never_zero, [0].into());
    assert_eq!(part.never_one, [1].into());
}

#[test]
fn idle_partition_and_chain() {
    let sys = idle_system();
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    assert!(part.broadcasters().is_empty());
    let chain = build_full_chain(&part, 2).unwrap();
    assert_eq!(
        chain,
        vec![set(&[]), set(&[Deviation::Input(0)]), set(&[Deviation::Input(0), Deviation::Input(1)])]
    );
    let mut ex = Expander::new(&sys, 4);
    assert!(is_compliant(&chain, &part, &mut ex).is_ok());
    // Flipping both inputs in one step changes both deciders' views.
    let direct = vec![set(&[]), set(&[Deviation::Input(0), Deviation::Input(1)])];
    assert!(is_compliant(&direct, &part, &mut ex).is_err());
}

#[test]
fn idle_protocol_never_decides() {
    let report = demonstrate_theorem_3_3(&idle_system(), 6, BUDGET).unwrap();
    assert_eq!(report.k, None);
    assert_eq!(report.breach, Some((0, Breach::OutputByK)));
}

#[test]
fn worked_chain_for_the_last_broadcaster_matches_golden() {
    let sys = echo_decide_system();
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    let mut b = ChainBuilder::new(&part, DeviationSet::new());
    b.remove(3).unwrap();
    let expected = vec![
        set(&[]),
        set(&[Deviation::Late(3, 0)]),
        set(&[Deviation::Late(3, 0), Deviation::Late(3, 1)]),
        set(&[Deviation::Defer(3, 4)]),
    ];
    assert_eq!(b.seq, expected);
    let golden: Vec<DeviationSet> =
        serde_json::from_str(include_str!("golden/last_broadcaster_chain.json")).expect("golden chain parses");
    assert_eq!(b.seq, golden);
    let mut ex = Expander::new(&sys, 4);
    assert_eq!(is_compliant(&b.seq, &part, &mut ex).unwrap(), vec![1, 0, 0]);
}

#[test]
fn two_deferring_processors_in_one_class_break_compliance() {
    // Processors 2 and 3 both broadcast at slot 2 here.
    let mut sys = echo_decide_system();
    let ids = sys.identifiers.clone();
    sys.pool = permsim::resource::ResourcePool::Table {
        entries: vec![
            permsim::resource::TableEntry { id: ids[2], slot: 1, messages: None, balance: 1.0 },
            permsim::resource::TableEntry { id: ids[3], slot: 1, messages: None, balance: 1.0 },
        ],
        fallback: Box::new(permsim::resource::ResourcePool::constant([])),
    };
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    assert_eq!(part.by_slot[&2], [2, 3].into());
    let chain = vec![set(&[Deviation::Defer(2, 3), Deviation::Defer(3, 3)])];
    let mut ex = Expander::new(&sys, 4);
    assert!(matches!(is_compliant(&chain, &part, &mut ex), Err(ComplianceError::NotCompliant { index: 0, .. })));
}

#[test]
fn removal_is_the_identity_for_non_broadcasters() {
    let sys = echo_decide_system();
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    let mut b = ChainBuilder::new(&part, set(&[Deviation::Input(1)]));
    b.remove(0).unwrap();
    b.add(1).unwrap();
    assert_eq!(b.seq.len(), 1);
}

#[test]
fn remove_rejects_a_broken_hypothesis() {
    let sys = echo_decide_system();
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    let mut b = ChainBuilder::new(&part, set(&[Deviation::Late(3, 0)]));
    assert!(matches!(b.remove(3), Err(ComplianceError::Precondition { procedure: "remove", .. })));
    let mut b = ChainBuilder::new(&part, DeviationSet::new());
    assert!(matches!(b.add(3), Err(ComplianceError::Precondition { procedure: "add", .. })));
}

#[test]
fn expansion_follows_the_deviations() {
    let sys = echo_decide_system();
    let t = expand_krun(&KRun { deviations: DeviationSet::new(), k: 4 }, &sys).unwrap();
    assert!(t.processors.iter().all(|p| p.inputs == [permsim::message::Message::general(0)].into()));
    let late = expand_krun(&KRun { deviations: set(&[Deviation::Late(2, 0)]), k: 4 }, &sys).unwrap();
    let sent: Vec<_> = (1..=4).filter(|&s| !late.record(s, 2).broadcast.is_empty()).collect();
    assert_eq!(sent, vec![2]);
    assert!(late.record(3, 0).received.is_empty());
    assert!(late.record(4, 0).received.iter().any(|r| r.from == 2 && r.sent == 2));
    assert_eq!(late.record(3, 1).received.len(), 1);
    let all: DeviationSet = (0..4).map(Deviation::Input).collect();
    let ones = expand_krun(&KRun { deviations: all, k: 4 }, &sys).unwrap();
    assert!(ones.processors.iter().all(|p| p.inputs == [permsim::message::Message::general(1)].into()));
    let bad = expand_krun(&KRun { deviations: set(&[Deviation::Defer(3, 2)]), k: 4 }, &sys);
    assert!(matches!(bad, Err(ComplianceError::BadDeferral { .. })));
}

#[test]
fn full_chain_and_contradiction() {
    let sys = echo_decide_system();
    let report = demonstrate_theorem_3_3(&sys, 8, BUDGET).unwrap();
    assert_eq!(report.k, Some(4));
    assert_eq!(report.chain[0], DeviationSet::new());
    let last = report.chain.last().unwrap();
    assert!((0..4).all(|p| last.contains(&Deviation::Input(p))));
    assert_eq!(report.outputs[0], (Some(0), Some(0)));
    assert_eq!(*report.outputs.last().unwrap(), (Some(1), Some(1)));
    assert!(report.propagation_holds);
    assert!(matches!(report.breach, Some((_, Breach::Agreement))), "{:?}", report.breach);
}

#[test]
fn add_undoes_remove() {
    let sys = echo_decide_system();
    let part = compute_partition(&sys, 4, BUDGET).unwrap();
    for start in [set(&[]), set(&[Deviation::Input(2)]), set(&[Deviation::Input(0), Deviation::Input(3)])] {
        for p in [2, 3] {
            let mut b = ChainBuilder::new(&part, start.clone());
            b.remove(p).unwrap();
            b.add(p).unwrap();
            assert_eq!(*b.last(), start);
            let mut ex = Expander::new(&sys, 4);
            assert!(is_compliant(&b.seq, &part, &mut ex).is_ok());
        }
    }
}

#[test]
fn pos_bb_is_declined() {
    use std::sync::Arc;
    let mut sys = echo_decide_system();
    let cfg = permsim::protocols::BBConfig::new(2, 0.5, sys.identifiers.iter().map(|&u| (u, 1.0)).collect()).unwrap();
    sys.protocol = Arc::new(permsim::protocols::PosBb { config: cfg });
    sys.setting = permsim::setting::SettingFlags::pos(permsim::setting::Regime::Synchronous { delta: 2 });
    sys.pool = permsim::resource::ResourcePool::constant(sys.identifiers.iter().map(|&u| (u, 1.0)));
    assert_eq!(demonstrate_theorem_3_3(&sys, 12, BUDGET).err(), Some(ComplianceError::NotWeaklyDecentralised));
}

mod brute_force {
    use std::collections::BTreeSet;
    use std::sync::Arc;

    use permsim::compliance::*;
    use permsim::message::{Identifier, Message, Timeslot};
    use permsim::network::TimingRule;
    use permsim::permitter::RandomnessMode;
    use permsim::protocols::EchoDecide;
    use permsim::resource::ResourcePool;
    use permsim::scheduler::{run_execution, Instance, ProcessorSpec, Role};
    use permsim::setting::Regime;

    /// Processor 1 holds resource at slot 1 and so broadcasts at slot 2.
    fn toy() -> KRunSystem {
        let ids: Vec<Identifier> = (0..2).map(|i| Identifier::new(i).unwrap()).collect();
        let base = echo_decide_system();
        KRunSystem {
            setting: base.setting,
            protocol: Arc::new(EchoDecide { decide_at: 4 }),
            pool: ResourcePool::SlotOwners { owners: [(1, ids[1])].into(), filler_base: 1000, balance: 1.0 },
            identifiers: ids,
            permitter: base.permitter,
        }
    }

    /// All choices fixed up front.
    struct Fixed {
        defer_to: Option<Timeslot>,
        delays: Vec<u64>,
    }

    impl TimingRule for Fixed {
        fn regime(&self) -> Regime {
            Regime::Synchronous { delta: 2 }
        }
        fn delivery(&mut self, _from: usize, _to: usize, _b: &[Message], sent: Timeslot) -> Timeslot {
            sent + self.delays[sent as usize]
        }
        fn defer(&mut self, _p: usize, instructed: Timeslot) -> Option<Timeslot> {
            self.defer_to.map(|d| d.max(instructed))
        }
    }

    /// Every run of the toy through `horizon`, with its ones-set.
    fn all_runs(horizon: Timeslot) -> Vec<(BTreeSet<usize>, permsim::trace::Trace)> {
        let sys = toy();
        let mut out = Vec::new();
        for mask in 0..4u32 {
            let ones: BTreeSet<usize> = (0..2).filter(|&p| mask >> p & 1 == 1).collect();
            let inst = Instance {
                setting: sys.setting,
                protocol: sys.protocol.clone(),
                processors: (0..2)
                    .map(|p| ProcessorSpec {
                        identifier: sys.identifiers[p],
                        inputs: [Message::general(u8::from(ones.contains(&p)))].into(),
                        role: Role::DelayFaulty,
                    })
                    .collect(),
                pool: sys.pool.clone(),
                permitter: sys.permitter.clone(),
                randomness: RandomnessMode::FixedFunctionPerRun,
                seed: 0,
                record_state: false,
            };
            let defers: Vec<Option<Timeslot>> = (1..=horizon).map(Some).chain([None]).collect();
            for &defer_to in &defers {
                for bits in 0..(1u32 << (horizon + 1)) {
                    let delays = (0..=horizon as u32).map(|s| 1 + u64::from(bits >> s & 1)).collect();
                    let mut timing = Fixed { defer_to, delays };
                    out.push((ones.clone(), run_execution(&inst, &mut timing, horizon).unwrap()));
                }
            }
        }
        out
    }

    #[test]
    fn t_specification_counts_match() {
        for t in 1..=4 {
            let oracle: BTreeSet<Vec<u8>> = all_runs(t).iter().map(|(o, tr)| t_projection(o, tr, t)).collect();
            assert_eq!(count_t_specifications(&toy(), t, 1_000_000).unwrap(), oracle.len(), "t = {t}");
        }
    }

    #[test]
    fn message_counts_match() {
        let part = compute_partition(&toy(), 4, 1_000_000).unwrap();
        let runs = all_runs(3);
        for t in 1..4u64 {
            let mut m = BTreeSet::new();
            for (_, tr) in &runs {
                for s in 1..=t {
                    for p in 0..2 {
                        m.extend(tr.record(s, p).instructed.iter().cloned());
                    }
                }
            }
            assert_eq!(part.messages[(t - 1) as usize], m.len(), "t = {t}");
        }
        assert_eq!(part.by_slot[&2], [1].into());
    }
}
