//! Honest node state machines.
//!
//! A [`NodeView`] is everything one node has observed: blocks with receipt
//! rounds, confirm events, the finalized log and the halt flag. Nakamoto nodes
//! finalize the k-deep prefix of their longest chain. Stubborn nodes confirm,
//! wait 2Δ before finalizing, halt on conflicting confirms within 4Δ and
//! ignore conflicting blocks that arrive more than 4Δ after a confirm.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockStore, Log, NodeId, Round, TxId};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    #[default]
    Nakamoto,
    Stubborn,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Honest,
    /// Runs the protocol with zero mining power, e.g. a merchant.
    Observer,
    Corrupt,
}

impl Role {
    pub fn is_honest(self) -> bool {
        !matches!(self, Role::Corrupt)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub k: u64,
    pub delta: Round,
}

/// Observable consequences of a view update, turned into trace events by the engine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ViewEvent {
    Confirm(BlockId),
    Finalize(BlockId),
    Halt,
    Ignore(BlockId),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Receive {
    Accept,
    Ignore,
    /// Parent not yet known; the block is decided when the parent arrives.
    Orphan,
    Duplicate,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
enum Status {
    Accepted(Round),
    Ignored,
    Orphan,
    /// Accepted before a recovery but not descending from the new genesis.
    Stale,
}

#[derive(Clone, Debug)]
pub struct NodeView {
    pub id: NodeId,
    protocol: Protocol,
    params: ProtocolParams,
    genesis: BlockId,
    genesis_height: u64,
    status: HashMap<BlockId, Status>,
    orphans: HashMap<BlockId, Vec<BlockId>>,
    best_height: u64,
    best: Vec<BlockId>,
    confirmed: HashMap<BlockId, Round>,
    confirmed_at: BTreeMap<u64, Vec<(BlockId, Round)>>,
    finalized: Log,
    halted: Option<Round>,
    finalize_due: BTreeMap<Round, Vec<BlockId>>,
    known_txs: HashSet<TxId>,
    pending_txs: BTreeSet<TxId>,
    tx_finalized: BTreeMap<TxId, Round>,
    ignored: Vec<BlockId>,
    dirty: bool,
}

impl NodeView {
    /// A fresh view holding only the original genesis block.
    pub fn new(id: NodeId, protocol: Protocol, params: ProtocolParams, genesis: BlockId) -> Self {
        let mut view = NodeView {
            id,
            protocol,
            params,
            genesis,
            genesis_height: 0,
            status: HashMap::new(),
            orphans: HashMap::new(),
            best_height: 0,
            best: vec![genesis],
            confirmed: HashMap::new(),
            confirmed_at: BTreeMap::new(),
            finalized: Log::new(genesis),
            halted: None,
            finalize_due: BTreeMap::new(),
            known_txs: HashSet::new(),
            pending_txs: BTreeSet::new(),
            tx_finalized: BTreeMap::new(),
            ignored: Vec::new(),
            dirty: false,
        };
        view.status.insert(genesis, Status::Accepted(0));
        view.confirmed.insert(genesis, 0);
        view.confirmed_at.insert(0, vec![(genesis, 0)]);
        view
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    pub fn genesis(&self) -> BlockId {
        self.genesis
    }

    pub fn is_halted(&self) -> bool {
        self.halted.is_some()
    }

    pub fn halted_at(&self) -> Option<Round> {
        self.halted
    }

    pub fn finalized(&self) -> &Log {
        &self.finalized
    }

    pub fn knows(&self, id: BlockId) -> bool {
        self.status.contains_key(&id)
    }

    pub fn is_accepted(&self, id: BlockId) -> bool {
        matches!(self.status.get(&id), Some(Status::Accepted(_)))
    }

    pub fn is_ignored(&self, id: BlockId) -> bool {
        matches!(self.status.get(&id), Some(Status::Ignored))
    }

    pub fn ignored(&self) -> &[BlockId] {
        &self.ignored
    }

    pub fn receipt(&self, id: BlockId) -> Option<Round> {
        match self.status.get(&id) {
            Some(Status::Accepted(r)) => Some(*r),
            _ => None,
        }
    }

    pub fn confirm_round(&self, id: BlockId) -> Option<Round> {
        self.confirmed.get(&id).copied()
    }

    /// Confirmed blocks at `height` with their confirm rounds.
    pub fn confirmed_at(&self, height: u64) -> &[(BlockId, Round)] {
        self.confirmed_at.get(&height).map_or(&[], Vec::as_slice)
    }

    pub fn best_height(&self) -> u64 {
        self.best_height
    }

    /// All non-ignored tips of maximal height, ascending by id.
    pub fn longest_tips(&self) -> Vec<BlockId> {
        let mut tips = self.best.clone();
        tips.sort();
        tips
    }

    /// The mining target: earliest-received longest tip, then smallest id.
    pub fn tip(&self) -> BlockId {
        *self
            .best
            .iter()
            .min_by_key(|b| (self.receipt(**b).unwrap_or(Round::MAX), **b))
            .expect("a view always has a longest tip")
    }

    /// Receives a block at `round`. Parents arriving later release buffered children.
    pub fn receive_block(
        &mut self,
        id: BlockId,
        round: Round,
        store: &BlockStore,
        out: &mut Vec<ViewEvent>,
    ) -> Receive {
        if self.status.contains_key(&id) {
            return Receive::Duplicate;
        }
        let Some(parent) = store.parent(id) else {
            // A root other than the setup genesis cannot be part of any valid chain.
            self.mark_ignored(id, out);
            return Receive::Ignore;
        };
        match self.status.get(&parent) {
            None | Some(Status::Orphan) => {
                self.status.insert(id, Status::Orphan);
                self.orphans.entry(parent).or_default().push(id);
                Receive::Orphan
            }
            Some(_) => {
                let verdict = self.decide(id, round, store, out);
                let mut stack: Vec<BlockId> = self.orphans.remove(&id).unwrap_or_default();
                while let Some(child) = stack.pop() {
                    self.decide(child, round, store, out);
                    if let Some(more) = self.orphans.remove(&child) {
                        stack.extend(more);
                    }
                }
                verdict
            }
        }
    }

    fn mark_ignored(&mut self, id: BlockId, out: &mut Vec<ViewEvent>) {
        self.status.insert(id, Status::Ignored);
        self.ignored.push(id);
        out.push(ViewEvent::Ignore(id));
    }

    fn decide(&mut self, id: BlockId, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) -> Receive {
        let block = store.block(id);
        let parent = block.parent.expect("checked by caller");
        let parent_live = match self.status.get(&parent) {
            Some(Status::Accepted(_)) => store.height(parent) >= self.genesis_height,
            _ => false,
        };
        let ignore =
            !parent_live || (self.protocol == Protocol::Stubborn && self.late_conflict(id, block.height, round));
        if ignore {
            self.mark_ignored(id, out);
            return Receive::Ignore;
        }
        self.status.insert(id, Status::Accepted(round));
        if block.height > self.best_height {
            self.best_height = block.height;
            self.best.clear();
            self.best.push(id);
        } else if block.height == self.best_height {
            self.best.push(id);
        }
        self.dirty = true;
        Receive::Accept
    }

    /// A confirmed block at the same height was confirmed more than 4Δ ago.
    fn late_conflict(&self, id: BlockId, height: u64, round: Round) -> bool {
        let window = 4 * self.params.delta;
        self.confirmed_at(height).iter().any(|&(b, t)| b != id && round > t + window)
    }

    /// Returns true if the transaction is new to this node.
    pub fn receive_tx(&mut self, tx: TxId) -> bool {
        if !self.known_txs.insert(tx) {
            return false;
        }
        if !self.tx_finalized.contains_key(&tx) {
            self.pending_txs.insert(tx);
        }
        true
    }

    pub fn knows_tx(&self, tx: TxId) -> bool {
        self.known_txs.contains(&tx)
    }

    /// Pending transactions not already on the chain ending at `target`.
    pub fn payload(&self, target: BlockId, store: &BlockStore, tx_blocks: &HashMap<TxId, Vec<BlockId>>) -> Vec<TxId> {
        self.pending_txs
            .iter()
            .filter(|tx| !tx_blocks.get(tx).is_some_and(|bs| bs.iter().any(|b| store.is_ancestor_or_self(*b, target))))
            .copied()
            .collect()
    }

    /// First round at which a block carrying `tx` entered this node's finalized log.
    pub fn merchant_finalize_watch(&self, tx: TxId) -> Option<Round> {
        self.tx_finalized.get(&tx).copied()
    }

    fn commit(&mut self, id: BlockId, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) {
        let h = store.height(id) as usize;
        if h < self.finalized.0.len() {
            self.finalized.0[h] = id;
        } else {
            debug_assert_eq!(h, self.finalized.0.len());
            self.finalized.0.push(id);
        }
        for tx in &store.block(id).payload {
            self.tx_finalized.entry(*tx).or_insert(round);
            self.pending_txs.remove(tx);
        }
        out.push(ViewEvent::Finalize(id));
    }

    /// Per-round protocol step after all of the round's deliveries.
    pub fn step(&mut self, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) -> Result<()> {
        match self.protocol {
            Protocol::Nakamoto => {
                if std::mem::take(&mut self.dirty) {
                    self.nakamoto_finalize(round, store, out);
                }
                Ok(())
            }
            Protocol::Stubborn => {
                if std::mem::take(&mut self.dirty) {
                    self.stubborn_confirm(round, store, out);
                }
                self.stubborn_finalize(round, store, out)
            }
        }
    }

    /// Finalizes every block at least k deep in the tie-broken longest chain,
    /// overwriting heights where the chain now disagrees.
    fn nakamoto_finalize(&mut self, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) {
        let tip = self.tip();
        let tip_height = store.height(tip);
        let Some(target) = tip_height.checked_sub(self.params.k) else {
            return;
        };
        let mut cur = tip;
        while store.height(cur) > target {
            cur = store.parent(cur).expect("non-genesis block has a parent");
        }
        let mut fresh = Vec::new();
        loop {
            let h = store.height(cur);
            if self.finalized.at(h) == Some(cur) {
                break;
            }
            fresh.push(cur);
            match store.parent(cur) {
                Some(p) => cur = p,
                None => break,
            }
        }
        for id in fresh.into_iter().rev() {
            self.commit(id, round, store, out);
        }
    }

    /// Records a confirm event for every block newly k-deep in some longest chain.
    fn stubborn_confirm(&mut self, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) {
        let k = self.params.k;
        let mut fresh = BTreeSet::new();
        for &tip in &self.best {
            let tip_height = store.height(tip);
            if tip_height < k {
                continue;
            }
            let mut cur = tip;
            for _ in 0..k {
                cur = store.parent(cur).expect("tip is at least k high");
            }
            while !self.confirmed.contains_key(&cur) && fresh.insert((store.height(cur), cur)) {
                cur = store.parent(cur).expect("confirmed genesis bounds the walk");
            }
        }
        let window = 4 * self.params.delta;
        let mut halt = false;
        for (h, id) in fresh {
            let at = self.confirmed_at.entry(h).or_default();
            halt |= at.iter().any(|&(b, t)| b != id && round - t <= window);
            at.push((id, round));
            self.confirmed.insert(id, round);
            out.push(ViewEvent::Confirm(id));
            if self.halted.is_none() {
                self.finalize_due.entry(round + 2 * self.params.delta).or_default().push(id);
            }
        }
        if halt && self.halted.is_none() {
            self.halted = Some(round);
            self.finalize_due.clear();
            out.push(ViewEvent::Halt);
        }
    }

    /// Finalizes blocks confirmed 2Δ ago unless a conflicting block was ever confirmed.
    fn stubborn_finalize(&mut self, round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) -> Result<()> {
        if self.halted.is_some() {
            return Ok(());
        }
        let mut due = Vec::new();
        while let Some(entry) = self.finalize_due.first_entry() {
            if *entry.key() > round {
                break;
            }
            due.extend(entry.remove());
        }
        due.sort_by_key(|b| (store.height(*b), *b));
        for id in due {
            let h = store.height(id);
            if self.confirmed_at(h).iter().any(|&(b, _)| b != id) {
                continue;
            }
            if self.finalized.at(h) == Some(id) {
                continue;
            }
            if self.blocked_below(id, store) {
                continue;
            }
            if self.finalized.len() as u64 != h {
                return Err(Error::FinalizeGap { node: self.id, block: id, height: h });
            }
            self.commit(id, round, store, out);
        }
        Ok(())
    }

    /// True when an ancestor of `id` can never be finalized: it disagrees with
    /// the finalized log or has a conflicting confirmed block.
    fn blocked_below(&self, id: BlockId, store: &BlockStore) -> bool {
        let len = self.finalized.len() as u64;
        let mut cur = store.parent(id);
        while let Some(p) = cur {
            let h = store.height(p);
            if h < len {
                return self.finalized.at(h) != Some(p);
            }
            if self.confirmed_at(h).iter().any(|&(b, _)| b != p) {
                return true;
            }
            cur = store.parent(p);
        }
        false
    }

    /// Per height, the block confirmed strictly before every conflicting
    /// confirmed block; cut at the first height without one or whose block
    /// does not extend the previous entry.
    pub fn first_confirmed_blocks(&self, store: &BlockStore) -> Vec<BlockId> {
        let mut chain: Vec<BlockId> = Vec::new();
        for h in 0.. {
            let entries = self.confirmed_at(h);
            let Some(min_t) = entries.iter().map(|e| e.1).min() else {
                break;
            };
            let mut first = entries.iter().filter(|e| e.1 == min_t);
            let (Some(&(id, _)), None) = (first.next(), first.next()) else {
                break;
            };
            if h > 0 && store.parent(id) != chain.last().copied() {
                break;
            }
            chain.push(id);
        }
        chain
    }

    /// Adopts an oracle genesis: `chain` runs from the original genesis to the
    /// new genesis. Ancestors become confirmed and finalized as setup data,
    /// everything not descending from the new genesis is dropped, and a halted
    /// node wakes up.
    pub fn install_genesis(&mut self, chain: &[BlockId], round: Round, store: &BlockStore, out: &mut Vec<ViewEvent>) {
        let genesis = *chain.last().expect("non-empty genesis chain");
        let gh = store.height(genesis);
        let keep: HashSet<BlockId> = chain.iter().copied().collect();
        self.confirmed.retain(|b, _| keep.contains(b));
        for entries in self.confirmed_at.values_mut() {
            entries.retain(|(b, _)| keep.contains(b));
        }
        self.confirmed_at.retain(|_, v| !v.is_empty());
        for &id in chain {
            if let std::collections::hash_map::Entry::Vacant(e) = self.confirmed.entry(id) {
                e.insert(round);
                self.confirmed_at.entry(store.height(id)).or_default().push((id, round));
                out.push(ViewEvent::Confirm(id));
            }
        }
        for &id in chain {
            if self.finalized.at(store.height(id)) != Some(id) {
                self.commit(id, round, store, out);
            }
        }
        for (id, st) in self.status.iter_mut() {
            if matches!(st, Status::Accepted(_)) && store.height(*id) >= gh && !keep.contains(id) {
                *st = Status::Stale;
            }
        }
        for &id in chain {
            let st = self.status.entry(id).or_insert(Status::Accepted(round));
            if !matches!(st, Status::Accepted(_)) {
                *st = Status::Accepted(round);
            }
        }
        self.genesis = genesis;
        self.genesis_height = gh;
        self.best_height = gh;
        self.best = vec![genesis];
        self.halted = None;
        self.finalize_due.clear();
        self.dirty = true;
    }
}
