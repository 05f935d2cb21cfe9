//! Synchronous message delivery with bound Δ, late joiners and echoing.
//!
//! Messages are ids into the shared block store; the network only tracks who
//! learns what and when. Honest-to-honest envelopes take the scheduled delay
//! (default Δ) and are checked against the bound when queued. Adversary sends
//! bypass the bound. Envelopes are suppressed when the recipient already has
//! the message scheduled no later, which keeps echo traffic linear in practice
//! without changing any receipt time.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockStore, Miner, NodeId, Round, TxId};
use crate::error::{Error, Result};

/// Sender tag for messages originating from the coordinated adversary.
pub const ADVERSARY: NodeId = NodeId(u32::MAX);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum Msg {
    Block(BlockId),
    Tx(TxId),
}

impl std::fmt::Display for Msg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Msg::Block(b) => write!(f, "{b}"),
            Msg::Tx(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetParams {
    pub delta: Round,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub msg: Msg,
    pub sender: NodeId,
    pub sent_round: Round,
    pub recipient: NodeId,
    pub deliver_round: Round,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    All,
    MinedBy(NodeId),
    Transactions,
}

/// Adversary-chosen delay for honest-to-honest traffic; the first matching rule wins.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayRule {
    pub selector: Selector,
    #[serde(default)]
    pub recipient: Option<NodeId>,
    pub delay: Round,
}

/// Cross-group envelopes sent in `[start, end)` are held until `end`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionWindow {
    pub groups: Vec<Vec<NodeId>>,
    pub start: Round,
    pub end: Round,
}

impl PartitionWindow {
    fn group_of(&self, node: NodeId) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(&node))
    }

    fn separates(&self, a: NodeId, b: NodeId, round: Round) -> bool {
        if round < self.start || round >= self.end {
            return false;
        }
        matches!((self.group_of(a), self.group_of(b)), (Some(x), Some(y)) if x != y)
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    delta: Round,
    rules: Vec<DelayRule>,
    partitions: Vec<PartitionWindow>,
    honest: Vec<bool>,
    active: Vec<bool>,
    pending: BTreeMap<Round, Vec<Envelope>>,
    /// First honest broadcast of each message, replayed to late joiners.
    history: Vec<(Round, NodeId, Msg)>,
    in_history: HashSet<Msg>,
    /// Earliest round each node receives (or is scheduled to receive) a message.
    earliest: HashMap<Msg, Vec<Round>>,
    echoed: HashSet<(NodeId, Msg)>,
    record: bool,
    sent_log: Vec<Envelope>,
}

impl Network {
    /// `honest[i]` marks node `i` as honest; every node starts inactive.
    pub fn new(params: NetParams, honest: Vec<bool>) -> Self {
        let n = honest.len();
        Network {
            delta: params.delta,
            rules: Vec::new(),
            partitions: Vec::new(),
            honest,
            active: vec![false; n],
            pending: BTreeMap::new(),
            history: Vec::new(),
            in_history: HashSet::new(),
            earliest: HashMap::new(),
            echoed: HashSet::new(),
            record: false,
            sent_log: Vec::new(),
        }
    }

    pub fn with_schedule(mut self, rules: Vec<DelayRule>, partitions: Vec<PartitionWindow>) -> Result<Self> {
        for rule in &rules {
            if rule.delay > self.delta {
                return Err(Error::config(format!("delay rule {rule:?} exceeds delta {}", self.delta)));
            }
        }
        self.rules = rules;
        self.partitions = partitions;
        Ok(self)
    }

    /// Keep a log of queued envelopes for SEND trace events.
    pub fn record_sends(&mut self, on: bool) {
        self.record = on;
    }

    pub fn take_sent(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.sent_log)
    }

    pub fn delta(&self) -> Round {
        self.delta
    }

    pub fn is_active(&self, node: NodeId) -> bool {
        self.active.get(node.0 as usize).copied().unwrap_or(false)
    }

    pub fn activate(&mut self, node: NodeId) {
        self.active[node.0 as usize] = true;
    }

    pub fn leave(&mut self, node: NodeId) {
        self.active[node.0 as usize] = false;
    }

    pub fn has_due(&self, round: Round) -> bool {
        self.pending.range(..=round).next().is_some()
    }

    fn scheduled_delay(&self, msg: Msg, recipient: NodeId, store: &BlockStore) -> Round {
        for rule in &self.rules {
            if rule.recipient.is_some_and(|r| r != recipient) {
                continue;
            }
            let hit = match (&rule.selector, msg) {
                (Selector::All, _) => true,
                (Selector::Transactions, Msg::Tx(_)) => true,
                (Selector::MinedBy(n), Msg::Block(b)) => store.block(b).miner == Miner::Node(*n),
                _ => false,
            };
            if hit {
                return rule.delay;
            }
        }
        self.delta
    }

    fn queue(&mut self, env: Envelope) {
        let n = self.honest.len();
        let slot = &mut self.earliest.entry(env.msg).or_insert_with(|| vec![Round::MAX; n])[env.recipient.0 as usize];
        if *slot <= env.deliver_round {
            return;
        }
        *slot = env.deliver_round;
        if self.record {
            self.sent_log.push(env);
        }
        self.pending.entry(env.deliver_round).or_default().push(env);
    }

    /// Honest broadcast to every other active honest node.
    pub fn broadcast(&mut self, msg: Msg, sender: NodeId, round: Round, store: &BlockStore) -> Result<()> {
        if self.in_history.insert(msg) {
            self.history.push((round, sender, msg));
        }
        self.echoed.insert((sender, msg));
        for j in 0..self.honest.len() {
            let recipient = NodeId(j as u32);
            if recipient == sender || !self.honest[j] || !self.active[j] {
                continue;
            }
            let mut deliver = round + self.scheduled_delay(msg, recipient, store);
            let held = self.partitions.iter().filter(|w| w.separates(sender, recipient, round)).map(|w| w.end).max();
            match held {
                Some(end) => deliver = deliver.max(end),
                None if deliver > round + self.delta => {
                    return Err(Error::Synchrony {
                        msg: msg.to_string(),
                        sender,
                        recipient,
                        sent: round,
                        deliver,
                        delta: self.delta,
                    })
                }
                None => {}
            }
            self.queue(Envelope { msg, sender, sent_round: round, recipient, deliver_round: deliver });
        }
        Ok(())
    }

    /// Re-broadcast of a fresh message; at most once per (node, message).
    pub fn echo(&mut self, node: NodeId, msg: Msg, round: Round, store: &BlockStore) -> Result<()> {
        if self.echoed.contains(&(node, msg)) {
            return Ok(());
        }
        self.broadcast(msg, node, round, store)
    }

    /// Adversary send to the given honest recipients (all active honest nodes if `None`).
    pub fn send_adversary(&mut self, msg: Msg, recipients: Option<&[NodeId]>, round: Round, delay: Round) {
        let targets: Vec<NodeId> = match recipients {
            Some(r) => r.to_vec(),
            None => (0..self.honest.len() as u32).map(NodeId).collect(),
        };
        for recipient in targets {
            let j = recipient.0 as usize;
            if !self.honest[j] || !self.active[j] {
                continue;
            }
            self.queue(Envelope { msg, sender: ADVERSARY, sent_round: round, recipient, deliver_round: round + delay });
        }
    }

    /// Pops every envelope due by `round`, grouped per recipient in id order
    /// and sorted by (sender, message) within a recipient.
    pub fn deliver(&mut self, round: Round) -> Vec<(NodeId, Vec<Envelope>)> {
        let mut due = Vec::new();
        while let Some(entry) = self.pending.first_entry() {
            if *entry.key() > round {
                break;
            }
            due.extend(entry.remove());
        }
        let mut by_node: BTreeMap<NodeId, Vec<Envelope>> = BTreeMap::new();
        for env in due {
            if self.active[env.recipient.0 as usize] {
                by_node.entry(env.recipient).or_default().push(env);
            }
        }
        by_node
            .into_iter()
            .map(|(node, mut envs)| {
                envs.sort_by_key(|e| (e.sender, e.msg));
                (node, envs)
            })
            .collect()
    }

    /// Activates `node` at `round`. Returns the messages it holds at once:
    /// every honest broadcast from round `round − Δ` or earlier plus the
    /// adversary's injections. Later broadcasts arrive Δ after they were sent.
    pub fn join(&mut self, node: NodeId, round: Round, injections: &[Msg]) -> Result<Vec<Msg>> {
        let j = node.0 as usize;
        if self.active[j] {
            return Err(Error::AlreadyActive(node));
        }
        self.active[j] = true;
        let n = self.honest.len();
        let mut inbox = Vec::new();
        let history = std::mem::take(&mut self.history);
        for &(sent, sender, msg) in &history {
            let at = (sent + self.delta).max(round);
            if at == round {
                self.earliest.entry(msg).or_insert_with(|| vec![Round::MAX; n])[j] = round;
                inbox.push(msg);
            } else if sender != node {
                self.queue(Envelope { msg, sender, sent_round: sent, recipient: node, deliver_round: at });
            }
        }
        self.history = history;
        for &msg in injections {
            self.earliest.entry(msg).or_insert_with(|| vec![Round::MAX; n])[j] = round;
            inbox.push(msg);
        }
        inbox.sort();
        inbox.dedup();
        Ok(inbox)
    }
}
