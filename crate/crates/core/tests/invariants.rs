//! Property tests over whole simulated runs.

use std::collections::HashMap;

use proptest::prelude::*;

use nakasim_core::engine::run_trial;
use nakasim_core::scenario::{ResolvedVariant, ScenarioDoc};
use nakasim_core::verify::check_consistency;
use nakasim_core::{BlockId, NodeId, Protocol, Round, RunTrace, TraceEvent};

#[derive(Clone, Debug)]
struct Small {
    protocol: &'static str,
    honest: u32,
    corrupt: u32,
    delta: Round,
    k: u64,
    p: f64,
    trigger_round: Round,
    depth_back: u64,
    seed: u64,
    trial: u64,
}

fn small() -> impl Strategy<Value = Small> {
    (
        prop_oneof![Just("nakamoto"), Just("stubborn")],
        2u32..6,
        0u32..16,
        1u64..3,
        2u64..5,
        prop_oneof![Just(0.02), Just(0.05), Just(0.1)],
        5u64..60,
        0u64..7,
        0u64..i64::MAX as u64,
        0u64..1000,
    )
        .prop_map(|(protocol, honest, corrupt, delta, k, p, trigger_round, depth_back, seed, trial)| Small {
            protocol,
            honest,
            corrupt,
            delta,
            k,
            p,
            trigger_round,
            depth_back,
            seed,
            trial,
        })
}

impl Small {
    fn variant(&self, record_network: bool) -> ResolvedVariant {
        let attack = if self.corrupt == 0 {
            String::new()
        } else {
            format!(
                "[[nodes]]\nrole = \"corrupt\"\npower = {}\n\n[adversary]\nstrategy = \"private_fork\"\n\
                 settle_rounds = 30\nrelease_deadline = 250\n\
                 trigger = {{ kind = \"at_round\", round = {}, depth_back = {}, observer = 0 }}\n",
                self.corrupt, self.trigger_round, self.depth_back
            )
        };
        let text = format!(
            "version = 1\nname = \"prop\"\nseed = {}\ntrials = 1\nprotocol = \"{}\"\np = {}\ndelta = {}\nk = {}\n\
             max_rounds = 300\nrecord_network = {record_network}\n\n[[nodes]]\ncount = {}\n\n\
             [[transactions]]\nround = 3\nissuer = 0\n\n{attack}",
            self.seed, self.protocol, self.p, self.delta, self.k, self.honest
        );
        ScenarioDoc::parse("prop", &text).unwrap().variants().unwrap().remove(0)
    }

    fn run(&self, record_network: bool) -> RunTrace {
        let v = self.variant(record_network);
        run_trial(&v.scenario, &v.label, self.trial).unwrap().trace
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn stubborn_is_consistent_under_any_fork_attack(mut s in small()) {
        s.protocol = "stubborn";
        let t = s.run(false);
        let v = check_consistency(&t);
        prop_assert!(v.pass, "{:?}", v.witness);
    }

    #[test]
    fn stubborn_finalizes_only_after_a_quiet_wait(mut s in small()) {
        s.protocol = "stubborn";
        let t = s.run(false);
        let wait = 2 * t.header.delta;
        let mut confirmed: HashMap<(NodeId, BlockId), Round> = HashMap::new();
        let mut halted: HashMap<NodeId, Round> = HashMap::new();
        for e in &t.events {
            match *e {
                TraceEvent::Confirm { round, node, block } => {
                    confirmed.entry((node, block)).or_insert(round);
                }
                TraceEvent::Halt { round, node } => {
                    halted.entry(node).or_insert(round);
                }
                TraceEvent::Finalize { round, node, block, height } if height > 0 => {
                    let c = confirmed.get(&(node, block)).copied();
                    prop_assert!(c.is_some_and(|c| c + wait <= round), "{node} finalized {block} at {round}, confirmed {c:?}");
                    prop_assert!(!halted.contains_key(&node), "{node} finalized {block} after halting");
                }
                _ => {}
            }
        }
    }

    #[test]
    fn finalized_logs_are_parent_linked(s in small()) {
        let t = s.run(false);
        let store = t.store().unwrap();
        let stubborn = t.header.protocol == Protocol::Stubborn;
        for snap in t.snapshots.iter().filter(|n| t.header.is_honest(n.node)) {
            for (h, pair) in snap.finalized.windows(2).enumerate() {
                prop_assert_eq!(store.height(pair[1]), h as u64 + 1);
                // A Nakamoto log may hold stale entries left by a deep reorg.
                if stubborn {
                    prop_assert_eq!(store.parent(pair[1]), Some(pair[0]));
                }
            }
        }
    }

    #[test]
    fn blocks_extend_their_parent_by_one(s in small()) {
        let t = s.run(false);
        let mut height: HashMap<BlockId, u64> = HashMap::new();
        for e in &t.events {
            if let TraceEvent::Mine { block, .. } = e {
                if let Some(p) = block.parent {
                    prop_assert_eq!(height.get(&p).map(|h| h + 1), Some(block.height));
                }
                height.insert(block.id, block.height);
            }
        }
    }

    #[test]
    fn honest_messages_arrive_within_delta(mut s in small()) {
        s.corrupt = 0;
        let t = s.run(true);
        let mut delivered = 0;
        for e in &t.events {
            if let TraceEvent::Deliver { round, envelope } = e {
                prop_assert_eq!(envelope.deliver_round, *round);
                prop_assert!(envelope.deliver_round - envelope.sent_round <= t.header.delta);
                delivered += 1;
            }
        }
        let sent = t.events.iter().any(|e| matches!(e, TraceEvent::Send { .. }));
        prop_assert!(delivered > 0 || !sent);
    }

    #[test]
    fn replays_are_identical_and_survive_jsonl(s in small()) {
        let a = s.run(false);
        let b = s.run(false);
        prop_assert_eq!(&a, &b);
        let text = a.to_jsonl();
        prop_assert_eq!(RunTrace::from_jsonl(&text).unwrap(), a);
    }
}
