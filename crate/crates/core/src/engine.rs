//! The round loop.
//!
//! Round 0 is setup: the genesis block and every node joining at round 0.
//! Each later round runs, in order:
//!
//! 1. scheduled events: leaves, joins, recovery calls, transaction issuance;
//! 2. deliveries due this round, repeated until nothing new is due;
//! 3. the mining lottery, honest blocks first, then the adversary's;
//! 4. the adversary's trigger and release decisions;
//! 5. deliveries again, so zero-delay sends land this round;
//! 6. one protocol step per active honest node.
//!
//! Every decision a node makes is a function of its own [`NodeView`].

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use crate::adversary::{AdvCtx, Adversary, AttackPlan, AttackReport};
use crate::chain::{BlockId, BlockStore, Miner, NodeId, Round, TxId};
use crate::economics::{bribery_cost, rental_cost, CostReport};
use crate::error::{Error, Result};
use crate::mining::Lottery;
use crate::network::{Msg, NetParams, Network};
use crate::node::{NodeView, ProtocolParams, Receive, Role, ViewEvent};
use crate::recovery::{choose_node, recovery_chain, RecoveryEvent};
use crate::scenario::Scenario;
use crate::trace::{NodeInfo, NodeSnapshot, RunTrace, TraceEvent, TraceHeader, TRACE_VERSION};
use crate::verify::{honest_majority_predicate, tx_finalization_delays};

/// Trial indices used by calibration runs, far from experiment trials.
pub const CALIBRATION_TRIAL_OFFSET: u64 = 1_000_000;

/// Everything one trial produces.
#[derive(Clone, Debug)]
pub struct TrialOutput {
    pub trace: RunTrace,
    pub attack: AttackReport,
    pub cost: Option<CostReport>,
    pub recoveries: Vec<RecoveryEvent>,
}

pub struct Simulation {
    scenario: Scenario,
    header: TraceHeader,
    store: BlockStore,
    views: Vec<Option<NodeView>>,
    net: Network,
    lottery: Lottery,
    adversary: Adversary,
    events: Vec<TraceEvent>,
    unit_owner: Vec<NodeId>,
    adversary_units: u32,
    tx_issued: HashMap<TxId, Round>,
    tx_blocks: HashMap<TxId, Vec<BlockId>>,
    genesis_chain: Vec<BlockId>,
    recoveries: Vec<RecoveryEvent>,
    round: Round,
    done: bool,
}

impl Simulation {
    /// Builds the run and performs round-0 setup.
    pub fn new(scenario: &Scenario, variant: &str, trial: u64) -> Result<Self> {
        scenario.validate()?;
        let nodes = scenario.node_table();
        let header = TraceHeader {
            version: TRACE_VERSION,
            scenario: scenario.name.clone(),
            variant: variant.to_string(),
            seed: scenario.seed,
            trial,
            protocol: scenario.protocol,
            p: scenario.p,
            delta: scenario.delta,
            k: scenario.k,
            max_rounds: scenario.max_rounds,
            adversary_power: scenario.adversary_power(),
            nodes: nodes.clone(),
        };
        let (store, genesis) = BlockStore::with_genesis();
        let net = Network::new(NetParams { delta: scenario.delta }, nodes.iter().map(|n| n.role.is_honest()).collect())
            .with_schedule(scenario.network.rules.clone(), scenario.partition_windows())?;
        let mut unit_owner = Vec::new();
        for n in nodes.iter().filter(|n| n.role.is_honest()) {
            unit_owner.extend(std::iter::repeat_n(n.id, n.power as usize));
        }
        let adversary_units = header.adversary_power;
        let mut sim = Simulation {
            header,
            store,
            views: vec![None; nodes.len()],
            net,
            lottery: Lottery::new(scenario.seed, trial, scenario.p),
            adversary: Adversary::new(scenario.adversary.clone(), adversary_units, genesis),
            events: Vec::new(),
            unit_owner,
            adversary_units,
            tx_issued: HashMap::new(),
            tx_blocks: HashMap::new(),
            genesis_chain: vec![genesis],
            recoveries: Vec::new(),
            round: 0,
            done: false,
            scenario: scenario.clone(),
        };
        sim.net.record_sends(scenario.record_network);
        sim.events.push(TraceEvent::Mine { round: 0, block: sim.store.block(genesis).clone() });
        sim.scheduled(0)?;
        sim.deliver_all(0)?;
        sim.flush_sends(0);
        sim.done = scenario.max_rounds == 0;
        Ok(sim)
    }

    /// Last completed round.
    pub fn round(&self) -> Round {
        self.round
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn view(&self, node: NodeId) -> Option<&NodeView> {
        self.views.get(node.0 as usize).and_then(|v| v.as_ref())
    }

    /// Views of honest nodes that are currently online.
    pub fn active_honest_views(&self) -> Vec<&NodeView> {
        self.views.iter().flatten().filter(|v| self.net.is_active(v.id)).collect()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn adversary(&self) -> &Adversary {
        &self.adversary
    }

    pub fn step_round(&mut self) -> Result<()> {
        if self.done {
            return Ok(());
        }
        let round = self.round + 1;
        self.scheduled(round)?;
        self.deliver_all(round)?;
        let new_blocks = self.mine(round)?;
        {
            let mut ctx = AdvCtx {
                round,
                store: &mut self.store,
                views: &self.views,
                net: &mut self.net,
                events: &mut self.events,
                protocol: self.scenario.protocol,
                tx_issued: &self.tx_issued,
                new_blocks: &new_blocks,
            };
            self.adversary.step(&mut ctx)?;
        }
        self.deliver_all(round)?;
        self.flush_sends(round);
        let mut out = Vec::new();
        for i in 0..self.views.len() {
            let id = NodeId(i as u32);
            if !self.net.is_active(id) {
                continue;
            }
            if let Some(view) = self.views[i].as_mut() {
                view.step(round, &self.store, &mut out)?;
                emit(&mut self.events, &self.store, round, id, out.drain(..));
            }
        }
        self.round = round;
        self.done = round >= self.scenario.max_rounds || self.adversary.stop_after().is_some_and(|r| round >= r);
        Ok(())
    }

    /// Runs until `round` has completed or the run stops.
    pub fn run_until(&mut self, round: Round) -> Result<()> {
        while !self.done && self.round < round {
            self.step_round()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(Round::MAX)
    }

    fn scheduled(&mut self, round: Round) -> Result<()> {
        let nodes = self.header.nodes.clone();
        for n in nodes.iter().filter(|n| n.leave == Some(round)) {
            self.net.leave(n.id);
            self.events.push(TraceEvent::Leave { round, node: n.id });
        }
        for n in nodes.iter().filter(|n| n.join == round) {
            self.join(n, round)?;
        }
        if round > 0 && self.scenario.recovery.rounds.contains(&round) {
            self.invoke_recovery(round)?;
        }
        for (i, tx) in self.scenario.transactions.clone().iter().enumerate() {
            if tx.round != round {
                continue;
            }
            let id = TxId(i as u64);
            let view = self.views[tx.issuer.0 as usize]
                .as_mut()
                .ok_or_else(|| Error::config(format!("issuer {} has no view", tx.issuer)))?;
            view.receive_tx(id);
            self.tx_issued.insert(id, round);
            self.events.push(TraceEvent::TxIssue { round, tx: id, node: tx.issuer });
            self.net.broadcast(Msg::Tx(id), tx.issuer, round, &self.store)?;
        }
        Ok(())
    }

    fn join(&mut self, info: &NodeInfo, round: Round) -> Result<()> {
        self.events.push(TraceEvent::Join { round, node: info.id });
        if !info.role.is_honest() {
            return Ok(());
        }
        let params = ProtocolParams { k: info.k, delta: self.scenario.delta };
        let mut view = NodeView::new(info.id, self.scenario.protocol, params, self.genesis_chain[0]);
        let mut out = Vec::new();
        if self.genesis_chain.len() > 1 {
            view.install_genesis(&self.genesis_chain, round, &self.store, &mut out);
        }
        emit(&mut self.events, &self.store, round, info.id, out.drain(..));
        self.views[info.id.0 as usize] = Some(view);
        let inbox = self.net.join(info.id, round, &self.adversary.injections())?;
        for msg in inbox {
            self.receive(info.id, msg, round)?;
        }
        Ok(())
    }

    /// Calls the recovery oracle: picks an active honest node, mints a new
    /// genesis on its first-confirmed chain and installs it everywhere.
    pub fn invoke_recovery(&mut self, round: Round) -> Result<RecoveryEvent> {
        let candidates: Vec<NodeId> = self.active_honest_views().iter().map(|v| v.id).collect();
        let chosen = choose_node(self.scenario.recovery.seed, self.header.trial, round, &candidates)?;
        let view = self.view(chosen).expect("candidate has a view");
        let mut chain = recovery_chain(view, &self.store)?;
        let parent = *chain.last().expect("chain holds the original genesis");
        let genesis = self.store.make_block(Some(parent), Vec::new(), Miner::Oracle, round)?;
        chain.push(genesis);
        self.events.push(TraceEvent::Mine { round, block: self.store.block(genesis).clone() });
        self.events.push(TraceEvent::Recovery { round, chosen, genesis, parent });
        let mut out = Vec::new();
        for id in candidates {
            let view = self.views[id.0 as usize].as_mut().expect("candidate has a view");
            view.install_genesis(&chain, round, &self.store, &mut out);
            emit(&mut self.events, &self.store, round, id, out.drain(..));
        }
        self.genesis_chain = chain;
        let event = RecoveryEvent { round, chosen, genesis, parent };
        self.recoveries.push(event.clone());
        Ok(event)
    }

    fn receive(&mut self, node: NodeId, msg: Msg, round: Round) -> Result<()> {
        let view = self.views[node.0 as usize].as_mut().expect("recipient is honest");
        let fresh = match msg {
            Msg::Block(b) => {
                let mut out = Vec::new();
                let r = view.receive_block(b, round, &self.store, &mut out);
                emit(&mut self.events, &self.store, round, node, out.into_iter());
                r != Receive::Duplicate
            }
            Msg::Tx(t) => view.receive_tx(t),
        };
        if fresh {
            self.net.echo(node, msg, round, &self.store)?;
        }
        Ok(())
    }

    fn deliver_all(&mut self, round: Round) -> Result<()> {
        while self.net.has_due(round) {
            for (node, envs) in self.net.deliver(round) {
                for env in envs {
                    if self.scenario.record_network {
                        self.events.push(TraceEvent::Deliver { round, envelope: env });
                    }
                    self.receive(node, env.msg, round)?;
                }
            }
            self.flush_sends(round);
        }
        Ok(())
    }

    fn flush_sends(&mut self, round: Round) {
        for envelope in self.net.take_sent() {
            self.events.push(TraceEvent::Send { round, envelope });
        }
    }

    /// Runs the lottery and mints this round's blocks; returns the honest ones.
    fn mine(&mut self, round: Round) -> Result<Vec<BlockId>> {
        let honest_units = self.unit_owner.len() as u32;
        let wins = self.lottery.draw(round, honest_units + self.adversary_units);
        let bribed = self.adversary.takes_honest_units();
        let mut per_node: Vec<(NodeId, u32)> = Vec::new();
        let mut adversary_wins = 0;
        for w in wins {
            if w >= honest_units {
                adversary_wins += 1;
                continue;
            }
            let owner = self.unit_owner[w as usize];
            let miner_ok = self.net.is_active(owner) && self.view(owner).is_some_and(|v| !v.is_halted());
            if !miner_ok {
                continue;
            }
            if bribed {
                adversary_wins += 1;
                continue;
            }
            match per_node.last_mut() {
                Some((n, c)) if *n == owner => *c += 1,
                _ => per_node.push((owner, 1)),
            }
        }
        let mut new_blocks = Vec::new();
        for (node, count) in per_node {
            let view = self.views[node.0 as usize].as_ref().expect("miner has a view");
            let tip = view.tip();
            let payload = view.payload(tip, &self.store, &self.tx_blocks);
            for _ in 0..count {
                let id = self.store.make_block(Some(tip), payload.clone(), Miner::Node(node), round)?;
                for tx in &payload {
                    self.tx_blocks.entry(*tx).or_default().push(id);
                }
                self.events.push(TraceEvent::Mine { round, block: self.store.block(id).clone() });
                new_blocks.push(id);
                let view = self.views[node.0 as usize].as_mut().expect("miner has a view");
                let mut out = Vec::new();
                view.receive_block(id, round, &self.store, &mut out);
                emit(&mut self.events, &self.store, round, node, out.into_iter());
                self.net.broadcast(Msg::Block(id), node, round, &self.store)?;
            }
        }
        let mut ctx = AdvCtx {
            round,
            store: &mut self.store,
            views: &self.views,
            net: &mut self.net,
            events: &mut self.events,
            protocol: self.scenario.protocol,
            tx_issued: &self.tx_issued,
            new_blocks: &new_blocks,
        };
        self.adversary.mine(&mut ctx, adversary_wins);
        Ok(new_blocks)
    }

    /// Ends the run: snapshots every honest view and fills in the attack report.
    pub fn finish(mut self) -> Result<TrialOutput> {
        self.flush_sends(self.round);
        let snapshots: Vec<NodeSnapshot> = self
            .views
            .iter()
            .flatten()
            .map(|v| NodeSnapshot {
                node: v.id,
                active: self.net.is_active(v.id),
                halted: v.halted_at(),
                genesis: v.genesis(),
                tip: v.tip(),
                finalized: v.finalized().0.clone(),
                first_confirmed: v.first_confirmed_blocks(&self.store),
                ignored: v.ignored().len(),
            })
            .collect();
        let attack = self.attack_report();
        let cost = self.cost(&attack)?;
        let mut attack = attack;
        if let Some(c) = &cost {
            attack.usd_cost = Some(c.gross_cost);
            attack.usd_reward = Some(c.rewards_recouped);
            attack.net_cost = Some(c.net_cost);
        }
        let trace = RunTrace { header: self.header, events: self.events, snapshots, end_round: self.round };
        Ok(TrialOutput { trace, attack, cost, recoveries: self.recoveries })
    }

    fn attack_report(&self) -> AttackReport {
        let mut r = self.adversary.report();
        let is_adv = |b: BlockId| self.store.block(b).miner == Miner::Adversary;
        let mut finalized = BTreeSet::new();
        let mut halted = BTreeSet::new();
        let mut ignoring = BTreeSet::new();
        for e in &self.events {
            match *e {
                TraceEvent::Finalize { block, .. } if is_adv(block) => {
                    finalized.insert(block);
                }
                TraceEvent::Halt { node, .. } => {
                    halted.insert(node);
                }
                TraceEvent::Ignore { node, block, .. } if is_adv(block) => {
                    ignoring.insert(node);
                }
                _ => {}
            }
        }
        r.success = !finalized.is_empty();
        r.finalized_attack_blocks = finalized.len() as u64;
        r.halted_nodes = halted.into_iter().collect();
        r.ignoring_nodes = ignoring.into_iter().collect();
        let reference = self
            .active_honest_views()
            .into_iter()
            .find(|v| self.header.nodes[v.id.0 as usize].role == Role::Honest)
            .or_else(|| self.active_honest_views().into_iter().next());
        if let Some(v) = reference {
            if let Ok(chain) = self.store.chain_of(v.tip()) {
                r.blocks_in_consensus = chain.ids().iter().filter(|b| is_adv(**b)).count() as u64;
            }
        }
        r
    }

    fn cost(&self, r: &AttackReport) -> Result<Option<CostReport>> {
        let Some(econ) = &self.scenario.econ else { return Ok(None) };
        Ok(Some(match self.scenario.adversary {
            AttackPlan::None | AttackPlan::Partition(_) => return Ok(None),
            AttackPlan::Bribery(_) => bribery_cost(r.blocks_in_consensus, econ, self.scenario.response)?,
            _ => rental_cost(r.hashes, r.blocks_in_consensus, econ, self.scenario.response),
        }))
    }
}

fn emit(
    events: &mut Vec<TraceEvent>,
    store: &BlockStore,
    round: Round,
    node: NodeId,
    out: impl Iterator<Item = ViewEvent>,
) {
    for ev in out {
        events.push(match ev {
            ViewEvent::Confirm(block) => TraceEvent::Confirm { round, node, block },
            ViewEvent::Finalize(block) => TraceEvent::Finalize { round, node, block, height: store.height(block) },
            ViewEvent::Halt => TraceEvent::Halt { round, node },
            ViewEvent::Ignore(block) => TraceEvent::Ignore { round, node, block },
        });
    }
}

/// Runs one trial to completion.
pub fn run_trial(scenario: &Scenario, variant: &str, trial: u64) -> Result<TrialOutput> {
    let mut sim = Simulation::new(scenario, variant, trial)?;
    sim.run()?;
    sim.finish()
}

/// The scenario with the adversary, corrupt nodes and recovery removed.
pub fn honest_only(scenario: &Scenario) -> Scenario {
    let mut s = scenario.clone();
    s.adversary = AttackPlan::None;
    s.recovery = Default::default();
    s.network.partitions.clear();
    s.network.rules.clear();
    s.econ = None;
    for g in s.nodes.iter_mut().filter(|g| g.role == Role::Corrupt) {
        g.power = Some(0);
    }
    s
}

/// Empirical T_conf: the `quantile` of issue-to-universal-finalization delay
/// over honest-only calibration runs. An unfinalized transaction counts as
/// an infinite delay; the quantile is the ceiling order statistic.
pub fn calibrate_t_conf(scenario: &Scenario, quantile: f64, trials: u64, since: Round) -> Result<Round> {
    let s = honest_only(scenario);
    let n = s.honest_power();
    if !honest_majority_predicate(s.p, n, s.delta, 0.0, 0.1) {
        return Err(Error::Calibration(format!(
            "parameters fail the honest-majority predicate (2pnΔ = {} must be below 1/2)",
            2.0 * s.p * f64::from(n) * s.delta as f64
        )));
    }
    if !s.transactions.iter().any(|t| t.round >= since) {
        return Err(Error::Calibration("no transactions to calibrate on".into()));
    }
    if trials == 0 || !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Calibration("need at least one trial and a quantile in [0, 1]".into()));
    }
    let per_trial: Vec<Vec<Option<Round>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let out = run_trial(&s, "calibration", CALIBRATION_TRIAL_OFFSET + i)?;
            Ok(tx_finalization_delays(&out.trace, since)?.into_iter().map(|d| d.delay).collect())
        })
        .collect::<Result<_>>()?;
    let mut delays: Vec<Option<Round>> = per_trial.into_iter().flatten().collect();
    delays.sort_by_key(|d| d.unwrap_or(Round::MAX));
    let idx = ((quantile * delays.len() as f64).ceil() as usize).clamp(1, delays.len()) - 1;
    delays[idx].ok_or_else(|| {
        Error::Calibration(format!(
            "the {quantile} quantile of finalization delay is unbounded within {} rounds",
            s.max_rounds
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::node::Protocol;
    use crate::scenario::{NodeGroup, TxSpec};
    use crate::verify::check_consistency;

    fn solo(protocol: Protocol, rounds: Round) -> Scenario {
        Scenario {
            name: "solo".into(),
            protocol,
            p: 1.0,
            delta: 0,
            k: 1,
            max_rounds: rounds,
            nodes: vec![NodeGroup { count: 1, role: Role::Honest, power: Some(1), join: 0, leave: None, k: None }],
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_single_miner() {
        for protocol in [Protocol::Nakamoto, Protocol::Stubborn] {
            let out = run_trial(&solo(protocol, 10), "v", 0).unwrap();
            let s = &out.trace.snapshots[0];
            assert_eq!(out.trace.store().unwrap().height(s.tip), 10);
            assert_eq!(s.finalized.len(), 10, "{protocol:?}: heights 0..=9");
        }
    }

    #[test]
    fn replay_is_identical() {
        let mut s = solo(Protocol::Nakamoto, 200);
        s.p = 0.05;
        s.delta = 2;
        s.k = 3;
        s.nodes[0].count = 4;
        let a = run_trial(&s, "v", 7).unwrap().trace.to_jsonl();
        assert_eq!(a, run_trial(&s, "v", 7).unwrap().trace.to_jsonl());
        assert_ne!(a, run_trial(&s, "v", 8).unwrap().trace.to_jsonl());
        let t = RunTrace::from_jsonl(&a).unwrap();
        assert!(check_consistency(&t).pass);
    }

    #[test]
    fn calibration_examples() {
        let mut s = solo(Protocol::Nakamoto, 20);
        s.transactions = vec![TxSpec { round: 3, issuer: NodeId(0) }];
        assert_eq!(calibrate_t_conf(&s, 0.999, 3, 0).unwrap(), 1);
        s.transactions.clear();
        assert!(calibrate_t_conf(&s, 0.999, 3, 0).is_err());
    }

    #[test]
    fn network_events_recorded() {
        let mut s = solo(Protocol::Stubborn, 30);
        s.p = 0.2;
        s.delta = 1;
        s.nodes[0].count = 3;
        s.record_network = true;
        let t = run_trial(&s, "v", 0).unwrap().trace;
        let sends = t.events.iter().filter(|e| matches!(e, TraceEvent::Send { .. })).count();
        let delivers = t.events.iter().filter(|e| matches!(e, TraceEvent::Deliver { .. })).count();
        assert!(sends > 0 && delivers > 0 && delivers <= sends);
        RunTrace::from_jsonl(&t.to_jsonl()).unwrap();
    }
}
