//! Attack strategies.
//!
//! The adversary is one coordinated entity owning every corrupt mining unit.
//! It sees the whole block store (a rushing adversary), mines private chains,
//! and sends to honest nodes with arbitrary delay. Its wins within one round
//! extend its current chain one after another.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockStore, Miner, NodeId, Round, TxId};
use crate::economics::Usd;
use crate::error::{Error, Result};
use crate::network::{Msg, Network};
use crate::node::{NodeView, Protocol};
use crate::trace::TraceEvent;

/// When a fork attack starts and where it forks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    /// Once `merchant` finalizes `tx`; forks at the parent of the tx block.
    MerchantFinalized { merchant: NodeId, tx: TxId },
    /// As soon as `tx` is issued; forks at the merchant's tip at that time.
    TxIssued { merchant: NodeId, tx: TxId },
    /// At `round`; forks `depth_back` blocks below the observer's tip.
    AtRound { round: Round, depth_back: u64, observer: NodeId },
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Release {
    /// Release once the attack chain beats every honest tip by the margin.
    #[default]
    Longer,
    /// Additionally wait until every honest node has committed (confirmed
    /// under Stubborn, finalized under Nakamoto) a block conflicting with
    /// the attack chain.
    AllConfirmedConflict,
}

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForkParams {
    pub trigger: Trigger,
    /// Blocks by which the attack chain must exceed the best honest chain.
    #[serde(default = "one")]
    pub margin: u64,
    #[serde(default)]
    pub release: Release,
    /// Release whatever has been mined by this round.
    #[serde(default)]
    pub release_deadline: Option<Round>,
    /// Stop the run this many rounds after the release.
    #[serde(default)]
    pub settle_rounds: Option<Round>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitBrainParams {
    pub rho: f64,
    /// Round at which the isolated corrupt cohort starts communicating.
    pub isolation_end: Round,
}

impl SplitBrainParams {
    pub fn corrupt_per_honest(&self) -> u32 {
        (1.0 / self.rho).ceil() as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionParams {
    pub groups: Vec<Vec<NodeId>>,
    pub start: Round,
    pub end: Round,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AttackPlan {
    #[default]
    None,
    /// Mines a private chain from genesis and never publishes it.
    Silent,
    PrivateFork(ForkParams),
    HistoryRewrite(ForkParams),
    SplitBrain(SplitBrainParams),
    /// Bribed honest miners mine the attack chain while it is being built.
    Bribery(ForkParams),
    Partition(PartitionParams),
}

impl AttackPlan {
    pub fn kind(&self) -> &'static str {
        match self {
            AttackPlan::None => "none",
            AttackPlan::Silent => "silent",
            AttackPlan::PrivateFork(_) => "private_fork",
            AttackPlan::HistoryRewrite(_) => "history_rewrite",
            AttackPlan::SplitBrain(_) => "split_brain",
            AttackPlan::Bribery(_) => "bribery",
            AttackPlan::Partition(_) => "partition",
        }
    }

    fn fork(&self) -> Option<&ForkParams> {
        match self {
            AttackPlan::PrivateFork(f) | AttackPlan::HistoryRewrite(f) | AttackPlan::Bribery(f) => Some(f),
            _ => None,
        }
    }

    /// Checks plan parameters against the run's powers.
    pub fn validate(&self, honest_power: u32, adversary_power: u32, k: u64) -> Result<()> {
        match self {
            AttackPlan::HistoryRewrite(f) => match f.trigger {
                Trigger::AtRound { depth_back, .. } if depth_back >= k => Ok(()),
                Trigger::AtRound { .. } => Err(Error::config("history rewrite needs depth_back >= k")),
                _ => Err(Error::config("history rewrite uses the at_round trigger")),
            },
            AttackPlan::SplitBrain(s) => {
                if !(s.rho > 0.0 && s.rho < 1.0) {
                    return Err(Error::config("split brain rho must lie in (0, 1)"));
                }
                let want = s.corrupt_per_honest() * honest_power;
                if adversary_power != want {
                    return Err(Error::config(format!(
                        "split brain needs ceil(1/rho) = {} corrupt units per honest unit ({want} total), found {adversary_power}",
                        s.corrupt_per_honest()
                    )));
                }
                Ok(())
            }
            AttackPlan::Partition(p) if p.start > p.end => Err(Error::config("partition start after end")),
            _ => Ok(()),
        }
    }
}

/// Outcome of one run's attack. Money fields are filled when economic
/// parameters are configured.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: String,
    /// Some honest node finalized an adversary block.
    pub success: bool,
    /// Rounds during which the adversary mined.
    pub rounds: Round,
    pub hashes: u64,
    pub blocks: u64,
    pub usd_cost: Option<Usd>,
    pub usd_reward: Option<Usd>,
    pub net_cost: Option<Usd>,
    pub started: Option<Round>,
    pub released: Option<Round>,
    pub fork_base: Option<BlockId>,
    /// Attack blocks on the final consensus chain.
    pub blocks_in_consensus: u64,
    pub finalized_attack_blocks: u64,
    pub halted_nodes: Vec<NodeId>,
    /// Honest nodes that ignored at least one adversary block.
    pub ignoring_nodes: Vec<NodeId>,
}

/// What the adversary may inspect and do in one round.
pub struct AdvCtx<'a> {
    pub round: Round,
    pub store: &'a mut BlockStore,
    pub views: &'a [Option<NodeView>],
    pub net: &'a mut Network,
    pub events: &'a mut Vec<TraceEvent>,
    pub protocol: Protocol,
    pub tx_issued: &'a HashMap<TxId, Round>,
    /// Blocks minted by honest nodes this round.
    pub new_blocks: &'a [BlockId],
}

impl AdvCtx<'_> {
    fn active_honest(&self) -> impl Iterator<Item = &NodeView> {
        self.views.iter().flatten().filter(|v| self.net.is_active(v.id))
    }

    fn mint(&mut self, parent: BlockId) -> BlockId {
        let id = self
            .store
            .make_block(Some(parent), Vec::new(), Miner::Adversary, self.round)
            .expect("adversary extends known blocks");
        self.events.push(TraceEvent::Mine { round: self.round, block: self.store.block(id).clone() });
        id
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Phase {
    Idle,
    Mining,
    Released,
}

#[derive(Clone, Debug)]
pub struct Adversary {
    plan: AttackPlan,
    units: u32,
    genesis: BlockId,
    phase: Phase,
    tip: Option<BlockId>,
    base: Option<BlockId>,
    chain: Vec<BlockId>,
    started: Option<Round>,
    released: Option<Round>,
    mining_rounds: Round,
    blocks: u64,
}

impl Adversary {
    pub fn new(plan: AttackPlan, units: u32, genesis: BlockId) -> Self {
        let always_on = matches!(plan, AttackPlan::Silent | AttackPlan::SplitBrain(_));
        Adversary {
            phase: if always_on { Phase::Mining } else { Phase::Idle },
            tip: always_on.then_some(genesis),
            started: always_on.then_some(0),
            plan,
            units,
            genesis,
            base: None,
            chain: Vec::new(),
            released: None,
            mining_rounds: 0,
            blocks: 0,
        }
    }

    pub fn plan(&self) -> &AttackPlan {
        &self.plan
    }

    pub fn is_mining(&self) -> bool {
        self.phase == Phase::Mining
    }

    /// Bribed honest units work for the adversary while its chain is private.
    pub fn takes_honest_units(&self) -> bool {
        matches!(self.plan, AttackPlan::Bribery(_)) && self.phase == Phase::Mining && self.released.is_none()
    }

    pub fn released(&self) -> Option<Round> {
        self.released
    }

    /// Round after which the run may stop, if the plan has a settle time.
    pub fn stop_after(&self) -> Option<Round> {
        let settle = self.plan.fork()?.settle_rounds?;
        self.released.map(|r| r + settle)
    }

    /// Mining phase: `wins` successes this round, chained onto the current tip.
    pub fn mine(&mut self, ctx: &mut AdvCtx<'_>, wins: u32) {
        if self.phase != Phase::Mining && !self.split_brain_online(ctx.round) {
            return;
        }
        self.mining_rounds += 1;
        let Some(mut tip) = self.tip else { return };
        for _ in 0..wins {
            tip = ctx.mint(tip);
            self.chain.push(tip);
            self.blocks += 1;
            if self.released.is_some() {
                ctx.net.send_adversary(Msg::Block(tip), None, ctx.round, 0);
            }
        }
        self.tip = Some(tip);
    }

    fn split_brain_online(&self, round: Round) -> bool {
        matches!(&self.plan, AttackPlan::SplitBrain(s) if round >= s.isolation_end)
    }

    /// Trigger and release decisions after this round's mining.
    pub fn step(&mut self, ctx: &mut AdvCtx<'_>) -> Result<()> {
        match self.plan.clone() {
            AttackPlan::SplitBrain(s) => {
                if ctx.round >= s.isolation_end {
                    self.follow_longest(ctx);
                }
                if ctx.round == s.isolation_end || (ctx.round > s.isolation_end && self.released.is_none()) {
                    self.publish(ctx);
                }
                Ok(())
            }
            plan => {
                let Some(f) = plan.fork() else { return Ok(()) };
                match self.phase {
                    Phase::Idle => {
                        if let Some(base) = self.check_trigger(&f.trigger, ctx)? {
                            self.phase = Phase::Mining;
                            self.base = Some(base);
                            self.tip = Some(base);
                            self.started = Some(ctx.round);
                        }
                        Ok(())
                    }
                    Phase::Mining => {
                        let deadline = f.release_deadline.is_some_and(|d| ctx.round >= d);
                        if deadline || self.ready(f, ctx) {
                            self.publish(ctx);
                            self.phase = Phase::Released;
                        }
                        Ok(())
                    }
                    Phase::Released => Ok(()),
                }
            }
        }
    }

    /// After isolation ends, mine on the longest chain above the cohort's tip.
    fn follow_longest(&mut self, ctx: &AdvCtx<'_>) {
        let Some(tip) = self.tip else { return };
        let mut best = tip;
        for &b in ctx.new_blocks {
            if ctx.store.height(b) > ctx.store.height(best) && ctx.store.is_ancestor_or_self(tip, b) {
                best = b;
            }
        }
        self.tip = Some(best);
    }

    fn publish(&mut self, ctx: &mut AdvCtx<'_>) {
        for &b in &self.chain {
            ctx.net.send_adversary(Msg::Block(b), None, ctx.round, 0);
        }
        self.released.get_or_insert(ctx.round);
    }

    fn check_trigger(&self, trigger: &Trigger, ctx: &AdvCtx<'_>) -> Result<Option<BlockId>> {
        let view = |n: NodeId| {
            ctx.views
                .get(n.0 as usize)
                .and_then(|v| v.as_ref())
                .ok_or_else(|| Error::config(format!("trigger node {n} is not an honest node")))
        };
        match *trigger {
            Trigger::MerchantFinalized { merchant, tx } => {
                let v = view(merchant)?;
                if v.merchant_finalize_watch(tx).is_none() {
                    return Ok(None);
                }
                let block = v
                    .finalized()
                    .0
                    .iter()
                    .find(|b| ctx.store.block(**b).payload.contains(&tx))
                    .copied()
                    .expect("a finalized tx is in the log");
                Ok(ctx.store.parent(block))
            }
            Trigger::TxIssued { merchant, tx } => {
                if !ctx.tx_issued.contains_key(&tx) {
                    return Ok(None);
                }
                Ok(Some(view(merchant)?.tip()))
            }
            Trigger::AtRound { round, depth_back, observer } => {
                if ctx.round < round {
                    return Ok(None);
                }
                let v = view(observer)?;
                let tip = v.tip();
                let h = ctx.store.height(tip).saturating_sub(depth_back);
                Ok(Some(ctx.store.ancestor_at(tip, h.max(ctx.store.height(v.genesis()))).unwrap_or(self.genesis)))
            }
        }
    }

    fn ready(&self, f: &ForkParams, ctx: &AdvCtx<'_>) -> bool {
        let Some(tip) = self.tip else { return false };
        let height = ctx.store.height(tip);
        let honest_best = ctx.active_honest().map(|v| v.best_height()).max().unwrap_or(0);
        if height < honest_best + f.margin {
            return false;
        }
        match f.release {
            Release::Longer => true,
            Release::AllConfirmedConflict => {
                let base_h = ctx.store.height(self.base.expect("mining has a base"));
                let ours = ctx.store.ancestor_at(tip, base_h + 1);
                ctx.active_honest().all(|v| match ctx.protocol {
                    Protocol::Nakamoto => v.finalized().at(base_h + 1).is_some_and(|b| Some(b) != ours),
                    Protocol::Stubborn => v.confirmed_at(base_h + 1).iter().any(|(b, _)| Some(*b) != ours),
                })
            }
        }
    }

    /// Blocks handed to a late joiner at join time.
    pub fn injections(&self) -> Vec<Msg> {
        match self.plan {
            AttackPlan::SplitBrain(_) => self.chain.iter().map(|b| Msg::Block(*b)).collect(),
            _ => Vec::new(),
        }
    }

    /// Fills the structural fields of the report; money and node-level
    /// outcomes are added by the engine.
    pub fn report(&self) -> AttackReport {
        AttackReport {
            kind: self.plan.kind().into(),
            rounds: self.mining_rounds,
            hashes: u64::from(self.units) * self.mining_rounds,
            blocks: self.blocks,
            started: self.started,
            released: self.released,
            fork_base: self.base,
            ..Default::default()
        }
    }
}
