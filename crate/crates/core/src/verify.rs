//! Post-hoc checkers over [`RunTrace`]s.
//!
//! Consistency and liveness are checked over `FINALIZE` events, so a checker
//! only needs the trace. The stochastic bounds compare convergence
//! opportunities and block counts in sampled windows against their
//! closed-form thresholds.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockStore, Miner, NodeId, Round, TxId};
use crate::error::Result;
use crate::trace::{RunTrace, TraceEvent, TraceHeader};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub nodes: Vec<NodeId>,
    pub rounds: Vec<Round>,
    pub blocks: Vec<BlockId>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    /// Number of individual obligations examined.
    pub checked: usize,
    pub violations: usize,
    pub witness: Option<Witness>,
}

impl Verdict {
    fn new(property: &str) -> Self {
        Verdict { property: property.into(), pass: true, checked: 0, violations: 0, witness: None }
    }

    fn fail(&mut self, w: impl FnOnce() -> Witness) {
        self.pass = false;
        self.violations += 1;
        if self.witness.is_none() {
            self.witness = Some(w());
        }
    }
}

/// Consistency: no two honest `FINALIZE` events commit different blocks at
/// the same height. Equivalent to prefix-comparability of every pair of
/// honest log snapshots, including a node against its own past.
pub fn check_consistency(trace: &RunTrace) -> Verdict {
    let mut v = Verdict::new("consistency");
    let mut first: HashMap<u64, (NodeId, Round, BlockId)> = HashMap::new();
    for e in &trace.events {
        let TraceEvent::Finalize { round, node, block, height } = *e else { continue };
        if !trace.header.is_honest(node) {
            continue;
        }
        v.checked += 1;
        match first.get(&height) {
            None => {
                first.insert(height, (node, round, block));
            }
            Some(&(n0, r0, b0)) if b0 != block => v.fail(|| Witness {
                nodes: vec![n0, node],
                rounds: vec![r0, round],
                blocks: vec![b0, block],
                note: format!("conflicting blocks finalized at height {height}"),
            }),
            Some(_) => {}
        }
    }
    v
}

/// Quadratic reference: snapshots every honest log after each `FINALIZE`
/// and compares all pairs for prefix-comparability. Only meant for small
/// traces. Logs start at the trace genesis; heights never finalized are
/// wildcards.
pub fn check_consistency_bruteforce(trace: &RunTrace) -> Verdict {
    let mut v = Verdict::new("consistency");
    let mut logs: BTreeMap<NodeId, Vec<Option<BlockId>>> = BTreeMap::new();
    let mut snaps: Vec<(NodeId, Round, Vec<Option<BlockId>>)> = Vec::new();
    for e in &trace.events {
        let TraceEvent::Finalize { round, node, block, height } = *e else { continue };
        if !trace.header.is_honest(node) {
            continue;
        }
        v.checked += 1;
        let log = logs.entry(node).or_insert_with(|| vec![Some(BlockId(0))]);
        let h = height as usize;
        if h >= log.len() {
            log.resize(h + 1, None);
        }
        log[h] = Some(block);
        snaps.push((node, round, log.clone()));
    }
    for (i, (na, ra, a)) in snaps.iter().enumerate() {
        for (nb, rb, b) in &snaps[i + 1..] {
            let clash = a.iter().zip(b).position(|(x, y)| matches!((x, y), (Some(x), Some(y)) if x != y));
            if let Some(h) = clash {
                v.fail(|| Witness {
                    nodes: vec![*na, *nb],
                    rounds: vec![*ra, *rb],
                    blocks: vec![a[h].unwrap(), b[h].unwrap()],
                    note: format!("logs disagree at height {h}"),
                });
            }
        }
    }
    v
}

/// Finalized logs replayed from events, with per-node transaction membership.
struct LogReplay<'a> {
    store: &'a BlockStore,
    logs: HashMap<NodeId, Vec<Option<BlockId>>>,
    txs: HashMap<NodeId, HashMap<TxId, u32>>,
}

impl<'a> LogReplay<'a> {
    fn new(store: &'a BlockStore) -> Self {
        LogReplay { store, logs: HashMap::new(), txs: HashMap::new() }
    }

    fn apply(&mut self, node: NodeId, block: BlockId, height: u64) {
        let log = self.logs.entry(node).or_default();
        let txs = self.txs.entry(node).or_default();
        let h = height as usize;
        if h >= log.len() {
            log.resize(h + 1, None);
        }
        if let Some(old) = log[h].replace(block) {
            for tx in &self.store.block(old).payload {
                if let Some(c) = txs.get_mut(tx) {
                    *c -= 1;
                }
            }
        }
        for tx in &self.store.block(block).payload {
            *txs.entry(*tx).or_default() += 1;
        }
    }

    fn has_tx(&self, node: NodeId, tx: TxId) -> bool {
        self.txs.get(&node).and_then(|t| t.get(&tx)).is_some_and(|c| *c > 0)
    }
}

fn present_throughout(header: &TraceHeader, node: NodeId, from: Round, to: Round) -> bool {
    header
        .nodes
        .get(node.0 as usize)
        .is_some_and(|n| n.role.is_honest() && n.join <= from && n.leave.is_none_or(|l| l > to))
}

/// T_conf-liveness for transactions issued at or after `since`: each must be
/// in the finalized log of every honest node present over `[t, t + t_conf]`
/// by round `t + t_conf`. A deadline past the end of the trace is a violation.
pub fn check_liveness(trace: &RunTrace, t_conf: Round, since: Round) -> Result<Verdict> {
    let store = trace.store()?;
    let mut v = Verdict::new("liveness");
    let header = &trace.header;
    let mut deadlines: Vec<(Round, TxId, Round)> = trace
        .events
        .iter()
        .filter_map(|e| match *e {
            TraceEvent::TxIssue { round, tx, node } if round >= since && header.is_honest(node) => {
                Some((round + t_conf, tx, round))
            }
            _ => None,
        })
        .collect();
    deadlines.sort();
    let mut replay = LogReplay::new(&store);
    let mut events = trace.events.iter().peekable();
    for (deadline, tx, issued) in deadlines {
        while let Some(e) = events.next_if(|e| e.round() <= deadline) {
            if let TraceEvent::Finalize { node, block, height, .. } = *e {
                replay.apply(node, block, height);
            }
        }
        for info in &header.nodes {
            if !present_throughout(header, info.id, issued, deadline) {
                continue;
            }
            v.checked += 1;
            if deadline > trace.end_round {
                v.fail(|| Witness {
                    nodes: vec![info.id],
                    rounds: vec![issued, deadline],
                    blocks: vec![],
                    note: format!("{tx}: deadline beyond trace end {}", trace.end_round),
                });
            } else if !replay.has_tx(info.id, tx) {
                v.fail(|| Witness {
                    nodes: vec![info.id],
                    rounds: vec![issued, deadline],
                    blocks: vec![],
                    note: format!("{tx} not finalized by {} at round {deadline}", info.id),
                });
            }
        }
    }
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxDelay {
    pub tx: TxId,
    pub issued: Round,
    /// Rounds until every required honest node finalized it, if it happened.
    pub delay: Option<Round>,
}

/// Per transaction issued at or after `since`, the delay until every honest
/// node present from issue to the end of the trace had it in its log.
pub fn tx_finalization_delays(trace: &RunTrace, since: Round) -> Result<Vec<TxDelay>> {
    let store = trace.store()?;
    let header = &trace.header;
    let mut pending: Vec<(TxId, Round, Vec<NodeId>)> = Vec::new();
    let mut done = Vec::new();
    let mut replay = LogReplay::new(&store);
    let mut i = 0;
    let events = &trace.events;
    while i < events.len() {
        let round = events[i].round();
        while i < events.len() && events[i].round() == round {
            match events[i] {
                TraceEvent::Finalize { node, block, height, .. } => replay.apply(node, block, height),
                TraceEvent::TxIssue { round, tx, node } if round >= since && header.is_honest(node) => {
                    let nodes = header
                        .nodes
                        .iter()
                        .filter(|n| present_throughout(header, n.id, round, trace.end_round))
                        .map(|n| n.id)
                        .collect();
                    pending.push((tx, round, nodes));
                }
                _ => {}
            }
            i += 1;
        }
        pending.retain(|(tx, issued, nodes)| {
            if nodes.iter().all(|n| replay.has_tx(*n, *tx)) {
                done.push(TxDelay { tx: *tx, issued: *issued, delay: Some(round - issued) });
                false
            } else {
                true
            }
        });
    }
    done.extend(pending.into_iter().map(|(tx, issued, _)| TxDelay { tx, issued, delay: None }));
    done.sort_by_key(|d| d.tx);
    Ok(done)
}

/// Blocks mined per round, split by honest and adversarial miners.
#[derive(Clone, Debug)]
pub struct MiningCounts {
    delta: Round,
    honest: Vec<u32>,
    adversarial: Vec<u32>,
    honest_prefix: Vec<u64>,
}

impl MiningCounts {
    pub fn from_trace(trace: &RunTrace) -> Self {
        let len = trace.end_round as usize + 1;
        let mut honest = vec![0u32; len];
        let mut adversarial = vec![0u32; len];
        for e in &trace.events {
            let TraceEvent::Mine { round, block } = e else { continue };
            match block.miner {
                Miner::Oracle => {}
                Miner::Node(n) if trace.header.is_honest(n) => honest[*round as usize] += 1,
                _ => adversarial[*round as usize] += 1,
            }
        }
        Self::new(trace.header.delta, honest, adversarial)
    }

    pub fn new(delta: Round, honest: Vec<u32>, adversarial: Vec<u32>) -> Self {
        let mut honest_prefix = Vec::with_capacity(honest.len() + 1);
        honest_prefix.push(0);
        let mut acc = 0u64;
        for c in &honest {
            acc += u64::from(*c);
            honest_prefix.push(acc);
        }
        MiningCounts { delta, honest, adversarial, honest_prefix }
    }

    /// Honest blocks in `[a, b]`, clamped to the recorded rounds.
    fn honest_in(&self, a: i64, b: i64) -> u64 {
        let n = self.honest.len() as i64;
        let (a, b) = (a.max(0), b.min(n - 1));
        if a > b {
            return 0;
        }
        self.honest_prefix[b as usize + 1] - self.honest_prefix[a as usize]
    }

    /// Rounds in `[t0, t1]` with exactly one honest block and none within Δ.
    pub fn convergence_opportunities(&self, t0: Round, t1: Round) -> u64 {
        let d = self.delta as i64;
        (t0..=t1.min(self.honest.len().saturating_sub(1) as Round))
            .filter(|&t| {
                let t = t as i64;
                self.honest[t as usize] == 1 && self.honest_in(t - d, t + d) == 1
            })
            .count() as u64
    }

    pub fn adversarial(&self, t0: Round, t1: Round) -> u64 {
        self.adversarial.iter().skip(t0 as usize).take((t1 - t0 + 1) as usize).map(|c| u64::from(*c)).sum()
    }

    pub fn total(&self, t0: Round, t1: Round) -> u64 {
        self.honest_in(t0 as i64, t1 as i64) + self.adversarial(t0, t1)
    }
}

pub fn count_convergence_opportunities(trace: &RunTrace, t0: Round, t1: Round) -> u64 {
    MiningCounts::from_trace(trace).convergence_opportunities(t0, t1)
}

pub fn count_adversarial_blocks(trace: &RunTrace, t0: Round, t1: Round) -> u64 {
    MiningCounts::from_trace(trace).adversarial(t0, t1)
}

/// ν < 1/2 and (1 − ρ)(1 − ν) ≥ (1 + φ)ρ with ν = 2pnΔ.
pub fn honest_majority_predicate(p: f64, n: u32, delta: Round, rho: f64, phi: f64) -> bool {
    let nu = 2.0 * p * f64::from(n) * delta as f64;
    nu < 0.5 && (1.0 - rho) * (1.0 - nu) >= (1.0 + phi) * rho
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub n_p: f64,
    pub k: u64,
    pub epsilon: f64,
}

impl BoundParams {
    pub fn from_header(h: &TraceHeader, epsilon: f64) -> Self {
        let n = f64::from(h.total_power());
        BoundParams {
            alpha: h.p * f64::from(h.honest_power()),
            beta: h.p * f64::from(h.adversary_power),
            nu: 2.0 * h.p * n * h.delta as f64,
            n_p: h.p * n,
            k: h.k,
            epsilon,
        }
    }

    pub fn lemma2_threshold(&self, t: f64) -> f64 {
        (1.0 - self.epsilon) * (1.0 - self.nu) * self.alpha * t
    }

    pub fn lemma3_threshold(&self, t: f64) -> f64 {
        (1.0 + self.epsilon) * self.beta * t
    }

    pub fn lemma4_threshold(&self, t: f64) -> f64 {
        (1.0 + self.epsilon) * self.n_p * t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundStat {
    pub checked: usize,
    pub violations: usize,
    pub rate: f64,
    /// Smallest observed (threshold − value) slack, signed so positive is safe.
    pub min_margin: Option<f64>,
}

impl BoundStat {
    fn record(&mut self, ok: bool, margin: f64) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
        }
        self.min_margin = Some(self.min_margin.map_or(margin, |m| m.min(margin)));
        self.rate = self.violations as f64 / self.checked as f64;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub window: Round,
    pub lemma2: BoundStat,
    pub lemma3: BoundStat,
    pub lemma4: BoundStat,
    pub notes: Vec<String>,
}

/// Samples `per_trace` windows of `window` rounds from each trace and checks
/// the three bounds. Windows shorter than a bound's minimum are skipped for
/// that bound with a note.
pub fn bound_report(traces: &[RunTrace], epsilon: f64, window: Round, per_trace: usize, seed: u64) -> BoundReport {
    let samples: Vec<MiningSample> = traces.iter().map(MiningSample::from_trace).collect();
    bound_report_samples(&samples, epsilon, window, per_trace, seed)
}

/// What the bound checks need from one trace.
#[derive(Clone, Debug)]
pub struct MiningSample {
    pub header: TraceHeader,
    pub counts: MiningCounts,
    pub end_round: Round,
}

impl MiningSample {
    pub fn from_trace(trace: &RunTrace) -> Self {
        let mut header = trace.header.clone();
        header.nodes.shrink_to_fit();
        MiningSample { header, counts: MiningCounts::from_trace(trace), end_round: trace.end_round }
    }
}

/// [`bound_report`] over pre-extracted mining counts.
pub fn bound_report_samples(
    traces: &[MiningSample],
    epsilon: f64,
    window: Round,
    per_trace: usize,
    seed: u64,
) -> BoundReport {
    let mut report = BoundReport { epsilon, window, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noted = HashSet::new();
    let mut note = |report: &mut BoundReport, msg: String| {
        if noted.insert(msg.clone()) {
            report.notes.push(msg);
        }
    };
    for trace in traces {
        let params = BoundParams::from_header(&trace.header, epsilon);
        let counts = &trace.counts;
        let d = trace.header.delta;
        if window == 0 || trace.end_round < window + 2 * d {
            note(&mut report, format!("trace {} shorter than the window", trace.header.trial));
            continue;
        }
        let t = window as f64;
        let k = params.k as f64;
        for _ in 0..per_trace {
            let t0 = rng.gen_range(d..=trace.end_round - d - window + 1);
            let t1 = t0 + window - 1;
            if params.alpha > 0.0 && t > k / params.alpha {
                let c = counts.convergence_opportunities(t0, t1) as f64;
                let thr = params.lemma2_threshold(t);
                report.lemma2.record(c > thr, c - thr);
            } else {
                note(&mut report, "lemma 2 skipped: window not longer than k/alpha".into());
            }
            if params.beta == 0.0 {
                let a = counts.adversarial(t0, t1) as f64;
                report.lemma3.record(a <= 0.0, -a);
            } else if t > k / params.beta {
                let a = counts.adversarial(t0, t1) as f64;
                let thr = params.lemma3_threshold(t);
                report.lemma3.record(a <= thr, thr - a);
            } else {
                note(&mut report, "lemma 3 skipped: window not longer than k/beta".into());
            }
            if params.n_p * t >= k {
                let total = counts.total(t0, t1) as f64;
                let thr = params.lemma4_threshold(t);
                report.lemma4.record(total <= thr, thr - total);
            } else {
                note(&mut report, "lemma 4 skipped: n*p*t below k".into());
            }
        }
    }
    report
}

/// The two recovery-consistency guarantees, checked at the end of a Stubborn
/// trace over honest nodes active at the end:
/// every honest-finalized block is first-confirmed in every such view, and a
/// block finalized by a node that never halted is finalized by all of them.
/// Finalizations in the last 2Δ rounds are exempt from the second part.
pub fn check_recovery_lemma(trace: &RunTrace) -> Verdict {
    let mut v = Verdict::new("recovery_lemma");
    let header = &trace.header;
    let views: Vec<_> = trace
        .snapshots
        .iter()
        .filter(|s| s.active && header.is_honest(s.node))
        .map(|s| {
            let fc: HashSet<BlockId> = s.first_confirmed.iter().copied().collect();
            let fin: HashSet<BlockId> = s.finalized.iter().copied().collect();
            (s.node, fc, fin)
        })
        .collect();
    let halted: HashSet<NodeId> = trace
        .events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::Halt { node, .. } => Some(*node),
            _ => None,
        })
        .collect();
    let horizon = trace.end_round.saturating_sub(2 * header.delta);
    let mut seen = HashSet::new();
    for e in &trace.events {
        let TraceEvent::Finalize { round, node, block, .. } = *e else { continue };
        if !header.is_honest(node) || !seen.insert((node, block)) {
            continue;
        }
        for (other, fc, fin) in &views {
            v.checked += 1;
            if !fc.contains(&block) {
                v.fail(|| Witness {
                    nodes: vec![node, *other],
                    rounds: vec![round],
                    blocks: vec![block],
                    note: format!("{block} finalized by {node} is not first-confirmed by {other}"),
                });
            }
            if !halted.contains(&node) && round <= horizon && !fin.contains(&block) {
                v.fail(|| Witness {
                    nodes: vec![node, *other],
                    rounds: vec![round],
                    blocks: vec![block],
                    note: format!("{block} finalized by never-halting {node} but not by {other}"),
                });
            }
        }
    }
    v
}

/// Whether some honest node finalized a block mined by the adversary.
pub fn adversary_block_finalized(trace: &RunTrace, store: &BlockStore) -> bool {
    trace.events.iter().any(|e| match *e {
        TraceEvent::Finalize { node, block, .. } => {
            trace.header.is_honest(node) && store.block(block).miner == Miner::Adversary
        }
        _ => false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Block;
    use crate::node::{Protocol, Role};
    use crate::trace::{NodeInfo, TRACE_VERSION};

    fn header(nodes: u32, delta: Round) -> TraceHeader {
        TraceHeader {
            version: TRACE_VERSION,
            scenario: "unit".into(),
            variant: "v".into(),
            seed: 0,
            trial: 0,
            protocol: Protocol::Nakamoto,
            p: 0.1,
            delta,
            k: 1,
            max_rounds: 100,
            adversary_power: 0,
            nodes: (0..nodes)
                .map(|i| NodeInfo { id: NodeId(i), role: Role::Honest, power: 1, join: 0, leave: None, k: 1 })
                .collect(),
        }
    }

    fn mine(id: u64, parent: Option<u64>, height: u64, miner: Miner, round: Round, txs: Vec<u64>) -> TraceEvent {
        TraceEvent::Mine {
            round,
            block: Block {
                id: BlockId(id),
                parent: parent.map(BlockId),
                height,
                miner,
                mined_round: round,
                payload: txs.into_iter().map(TxId).collect(),
            },
        }
    }

    fn fin(round: Round, node: u32, block: u64, height: u64) -> TraceEvent {
        TraceEvent::Finalize { round, node: NodeId(node), block: BlockId(block), height }
    }

    fn trace(header: TraceHeader, events: Vec<TraceEvent>, end: Round) -> RunTrace {
        RunTrace { header, events, snapshots: vec![], end_round: end }
    }

    fn fork_events() -> Vec<TraceEvent> {
        vec![
            mine(0, None, 0, Miner::Oracle, 0, vec![]),
            mine(1, Some(0), 1, Miner::Node(NodeId(0)), 1, vec![7]),
            mine(2, Some(0), 1, Miner::Node(NodeId(1)), 1, vec![]),
        ]
    }

    #[test]
    fn consistency_cases() {
        let mut ev = fork_events();
        ev.extend([fin(3, 0, 1, 1), fin(4, 1, 1, 1)]);
        let ok = trace(header(2, 1), ev.clone(), 10);
        assert!(check_consistency(&ok).pass);
        assert!(check_consistency_bruteforce(&ok).pass);

        ev.push(fin(5, 1, 2, 1));
        let bad = trace(header(2, 1), ev, 10);
        let v = check_consistency(&bad);
        assert!(!v.pass);
        let w = v.witness.unwrap();
        assert_eq!(w.blocks, vec![BlockId(1), BlockId(2)]);
        assert!(!check_consistency_bruteforce(&bad).pass);
    }

    #[test]
    fn corrupt_finalizations_are_ignored() {
        let mut h = header(2, 1);
        h.nodes[1].role = Role::Corrupt;
        let mut ev = fork_events();
        ev.extend([fin(3, 0, 1, 1), fin(4, 1, 2, 1)]);
        assert!(check_consistency(&trace(h, ev, 10)).pass);
    }

    #[test]
    fn liveness_cases() {
        let mut ev = vec![mine(0, None, 0, Miner::Oracle, 0, vec![])];
        let none = trace(header(2, 1), ev.clone(), 50);
        assert!(check_liveness(&none, 5, 0).unwrap().pass);

        ev.push(TraceEvent::TxIssue { round: 0, tx: TxId(7), node: NodeId(0) });
        ev.extend(fork_events().into_iter().skip(1).take(1));
        ev.extend([fin(3, 0, 1, 1), fin(6, 1, 1, 1)]);
        let t = trace(header(2, 1), ev, 50);
        assert!(check_liveness(&t, 6, 0).unwrap().pass);
        let late = check_liveness(&t, 5, 0).unwrap();
        assert!(!late.pass);
        assert_eq!(late.witness.unwrap().nodes, vec![NodeId(1)]);
        assert!(!check_liveness(&t, 60, 0).unwrap().pass, "deadline past the end");
        let delays = tx_finalization_delays(&t, 0).unwrap();
        assert_eq!(delays, vec![TxDelay { tx: TxId(7), issued: 0, delay: Some(6) }]);
    }

    #[test]
    fn convergence_examples() {
        let mut honest = vec![0u32; 21];
        for r in [5, 10, 11] {
            honest[r] = 1;
        }
        let c = MiningCounts::new(2, honest.clone(), vec![0; 21]);
        assert_eq!(c.convergence_opportunities(0, 20), 1);
        assert_eq!(MiningCounts::new(2, vec![0; 21], vec![0; 21]).convergence_opportunities(0, 20), 0);
        honest[5] = 2;
        assert_eq!(MiningCounts::new(2, honest, vec![0; 21]).convergence_opportunities(0, 20), 0);
        let adv = MiningCounts::new(2, vec![0; 5], vec![1, 0, 3, 0, 0]);
        assert_eq!(adv.adversarial(2, 2), 3);
        assert_eq!(adv.adversarial(0, 4), 4);
    }

    #[test]
    fn predicate_examples() {
        assert!(honest_majority_predicate(0.001, 100, 2, 0.3, 0.1));
        assert!(!honest_majority_predicate(0.001, 100, 2, 0.5, 0.1));
        assert!(honest_majority_predicate(0.001, 100, 2, 0.0, 0.9));
        assert!(!honest_majority_predicate(0.01, 100, 2, 0.0, 0.1), "nu above one half");
    }

    #[test]
    fn recovery_lemma_flags_missing_first_confirm() {
        use crate::trace::NodeSnapshot;
        let mut ev = fork_events();
        ev.push(fin(6, 0, 1, 1));
        let snap = |n: u32, fc: Vec<u64>, fin: Vec<u64>| NodeSnapshot {
            node: NodeId(n),
            active: true,
            halted: None,
            genesis: BlockId(0),
            tip: BlockId(1),
            finalized: fin.into_iter().map(BlockId).collect(),
            first_confirmed: fc.into_iter().map(BlockId).collect(),
            ignored: 0,
        };
        let mut t = trace(header(2, 1), ev, 20);
        t.snapshots = vec![snap(0, vec![0, 1], vec![0, 1]), snap(1, vec![0, 1], vec![0, 1])];
        assert!(check_recovery_lemma(&t).pass);
        t.snapshots[1] = snap(1, vec![0], vec![0]);
        let v = check_recovery_lemma(&t);
        assert_eq!(v.violations, 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zero_delta_counts_single_block_rounds(counts in prop::collection::vec(0u32..3, 1..60)) {
                let expected = counts.iter().filter(|c| **c == 1).count() as u64;
                let n = counts.len();
                let m = MiningCounts::new(0, counts, vec![0; n]);
                prop_assert_eq!(m.convergence_opportunities(0, n as Round - 1), expected);
            }

            #[test]
            fn predicate_monotone(p in 0.0001f64..0.01, n in 1u32..200, delta in 0u64..5, rho in 0.0f64..1.0, drho in 0.0f64..0.5, phi in 0.01f64..0.99) {
                if !honest_majority_predicate(p, n, delta, rho, phi) {
                    prop_assert!(!honest_majority_predicate(p, n, delta, (rho + drho).min(1.0), phi));
                    prop_assert!(!honest_majority_predicate(p, n, delta + 1, rho, phi));
                }
            }
        }
    }
}
