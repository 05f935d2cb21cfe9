//! Blocks, chains and finalized logs.
//!
//! Block identity is a simulator-assigned integer. Mining is modelled as a
//! lottery (see [`crate::mining`]), so there is no content addressing: a block
//! id is simply its index in the run's [`BlockStore`].

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discrete simulation time.
pub type Round = u64;

macro_rules! id_type {
    ($name:ident, $inner:ty, $prefix:literal) => {
        #[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(BlockId, u64, "b");
id_type!(TxId, u64, "tx");
id_type!(NodeId, u32, "n");

/// Who produced a block.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Miner {
    Node(NodeId),
    Adversary,
    /// Genesis blocks: the original setup and every recovery-oracle genesis.
    Oracle,
}

impl fmt::Display for Miner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Miner::Node(id) => write!(f, "{id}"),
            Miner::Adversary => f.write_str("adversary"),
            Miner::Oracle => f.write_str("oracle"),
        }
    }
}

impl Serialize for Miner {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Miner {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "adversary" => Ok(Miner::Adversary),
            "oracle" => Ok(Miner::Oracle),
            other => other
                .strip_prefix('n')
                .and_then(|n| n.parse().ok())
                .map(|n| Miner::Node(NodeId(n)))
                .ok_or_else(|| serde::de::Error::custom(format!("bad miner tag {other:?}"))),
        }
    }
}

/// A block record. Field order is the trace record order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parent: Option<BlockId>,
    pub height: u64,
    pub miner: Miner,
    pub mined_round: Round,
    pub payload: Vec<TxId>,
}

impl Block {
    pub fn is_genesis(&self) -> bool {
        self.miner == Miner::Oracle
    }
}

/// A transaction as issued to the network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub issued_round: Round,
    pub issuer: NodeId,
}

/// Every block minted during one run. Owned by the engine.
#[derive(Clone, Debug, Default)]
pub struct BlockStore {
    blocks: Vec<Block>,
}

impl BlockStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// A store holding only the original genesis (id 0, height 0).
    pub fn with_genesis() -> (Self, BlockId) {
        let mut store = Self::new();
        let g = store.make_block(None, Vec::new(), Miner::Oracle, 0).expect("genesis has no parent");
        (store, g)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Registers a new block. Height is derived from the parent.
    pub fn make_block(
        &mut self,
        parent: Option<BlockId>,
        payload: Vec<TxId>,
        miner: Miner,
        round: Round,
    ) -> Result<BlockId> {
        let height = match parent {
            Some(p) => self.get(p).ok_or(Error::UnknownParent(p))?.height + 1,
            None => 0,
        };
        let mut seen = HashSet::with_capacity(payload.len());
        for tx in &payload {
            if !seen.insert(*tx) {
                return Err(Error::DuplicatePayload(*tx));
            }
        }
        let id = BlockId(self.blocks.len() as u64);
        self.blocks.push(Block { id, parent, height, miner, mined_round: round, payload });
        Ok(id)
    }

    /// Re-inserts a block read back from a trace. Ids must arrive in order.
    pub fn insert_record(&mut self, block: Block) -> Result<()> {
        if block.id.0 != self.blocks.len() as u64 {
            return Err(Error::Trace(format!("block {} out of order (expected b{})", block.id, self.blocks.len())));
        }
        if let Some(p) = block.parent {
            let parent = self.get(p).ok_or(Error::UnknownParent(p))?;
            if parent.height + 1 != block.height {
                return Err(Error::BrokenChain(block.id));
            }
        } else if block.height != 0 && !block.is_genesis() {
            return Err(Error::BrokenChain(block.id));
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(id.0 as usize)
    }

    /// Panics on an unknown id; callers only hold ids minted by this store.
    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id.0 as usize]
    }

    pub fn height(&self, id: BlockId) -> u64 {
        self.block(id).height
    }

    pub fn parent(&self, id: BlockId) -> Option<BlockId> {
        self.block(id).parent
    }

    pub fn iter(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter()
    }

    /// The ancestor-or-self of `tip` at `height`, if `tip` is at least that high.
    pub fn ancestor_at(&self, tip: BlockId, height: u64) -> Option<BlockId> {
        let mut cur = self.get(tip)?;
        if cur.height < height {
            return None;
        }
        while cur.height > height {
            cur = self.get(cur.parent?)?;
        }
        Some(cur.id)
    }

    pub fn is_ancestor_or_self(&self, ancestor: BlockId, tip: BlockId) -> bool {
        match self.get(ancestor) {
            Some(a) => self.ancestor_at(tip, a.height) == Some(ancestor),
            None => false,
        }
    }

    /// Every block from the tip's root genesis to the tip, in height order.
    pub fn chain_of(&self, tip: BlockId) -> Result<Chain> {
        let mut cur = self.get(tip).ok_or(Error::UnknownBlock(tip))?;
        let mut ids = Vec::with_capacity(cur.height as usize + 1);
        ids.push(cur.id);
        while let Some(p) = cur.parent {
            let parent = self.get(p).ok_or(Error::BrokenChain(cur.id))?;
            if parent.height + 1 != cur.height {
                return Err(Error::BrokenChain(cur.id));
            }
            cur = parent;
            ids.push(cur.id);
        }
        ids.reverse();
        Ok(Chain { base_height: cur.height, ids })
    }

    /// `tip.height - block.height` if `block` is on `tip`'s chain.
    pub fn depth(&self, block: BlockId, tip: BlockId) -> Option<u64> {
        let b = self.get(block)?;
        let t = self.get(tip)?;
        (self.ancestor_at(tip, b.height) == Some(block)).then(|| t.height - b.height)
    }

    /// Distinct blocks of equal height can never share a chain.
    pub fn conflicts(&self, a: BlockId, b: BlockId) -> bool {
        a != b && self.height(a) == self.height(b)
    }
}

/// A parent-linked run of blocks from a genesis to a tip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Chain {
    base_height: u64,
    ids: Vec<BlockId>,
}

impl Chain {
    pub fn ids(&self) -> &[BlockId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tip(&self) -> BlockId {
        *self.ids.last().expect("chains are never empty")
    }

    pub fn root(&self) -> BlockId {
        self.ids[0]
    }

    pub fn at_height(&self, height: u64) -> Option<BlockId> {
        height.checked_sub(self.base_height).and_then(|i| self.ids.get(i as usize).copied())
    }

    pub fn contains(&self, id: BlockId, store: &BlockStore) -> bool {
        self.at_height(store.height(id)) == Some(id)
    }
}

/// A finalized ledger: entry `h` is the block committed at height `h`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Log(pub Vec<BlockId>);

impl Log {
    pub fn new(genesis: BlockId) -> Self {
        Log(vec![genesis])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn at(&self, height: u64) -> Option<BlockId> {
        self.0.get(height as usize).copied()
    }

    pub fn last(&self) -> Option<BlockId> {
        self.0.last().copied()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.0.contains(&id)
    }

    /// True when the entries form one parent-linked chain starting at height 0.
    pub fn is_chain(&self, store: &BlockStore) -> bool {
        self.0.iter().enumerate().all(|(h, id)| match store.get(*id) {
            Some(b) if b.height == h as u64 => h == 0 || b.parent == Some(self.0[h - 1]),
            _ => false,
        })
    }
}

/// Whether one log is a prefix of the other (agreement at every shared height).
pub fn prefix_comparable(a: &Log, b: &Log) -> bool {
    a.0.iter().zip(b.0.iter()).all(|(x, y)| x == y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extend(store: &mut BlockStore, parent: BlockId, n: usize, miner: u32) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut cur = parent;
        for r in 0..n {
            cur = store.make_block(Some(cur), vec![], Miner::Node(NodeId(miner)), r as Round).unwrap();
            out.push(cur);
        }
        out
    }

    #[test]
    fn genesis_and_extension() {
        let (mut store, g) = BlockStore::with_genesis();
        assert_eq!(store.height(g), 0);
        assert!(store.block(g).parent.is_none());
        let b = store.make_block(Some(g), vec![TxId(1)], Miner::Node(NodeId(3)), 17).unwrap();
        assert_eq!(store.height(b), 1);
        assert_eq!(store.parent(b), Some(g));
        let tip = *extend(&mut store, g, 5, 0).last().unwrap();
        assert_eq!(store.height(tip), 5);
    }

    #[test]
    fn make_block_errors() {
        let (mut store, g) = BlockStore::with_genesis();
        assert!(matches!(
            store.make_block(Some(BlockId(99)), vec![], Miner::Adversary, 0),
            Err(Error::UnknownParent(BlockId(99)))
        ));
        assert!(matches!(
            store.make_block(Some(g), vec![TxId(1), TxId(1)], Miner::Adversary, 0),
            Err(Error::DuplicatePayload(TxId(1)))
        ));
    }

    #[test]
    fn chain_of_and_fork_prefixes() {
        let (mut store, g) = BlockStore::with_genesis();
        assert_eq!(store.chain_of(g).unwrap().ids(), &[g]);
        let main = extend(&mut store, g, 3, 0);
        let chain = store.chain_of(main[2]).unwrap();
        assert_eq!(chain.len(), 4);
        assert_eq!(chain.ids(), &[g, main[0], main[1], main[2]]);

        // Second branch off height 1.
        let side = extend(&mut store, main[0], 2, 1);
        let a = store.chain_of(main[2]).unwrap();
        let b = store.chain_of(side[1]).unwrap();
        assert_eq!(a.ids()[..2], b.ids()[..2]);
        assert_ne!(a.ids()[2], b.ids()[2]);
    }

    #[test]
    fn depth_cases() {
        let (mut store, g) = BlockStore::with_genesis();
        let main = extend(&mut store, g, 8, 0);
        let tip = main[7];
        assert_eq!(store.depth(tip, tip), Some(0));
        // block at height n-k under tip at height n is k-deep
        assert_eq!(store.depth(main[7 - 3], tip), Some(3));
        let side = extend(&mut store, main[1], 1, 1);
        assert_eq!(store.depth(side[0], tip), None);
    }

    #[test]
    fn conflict_cases() {
        let (mut store, g) = BlockStore::with_genesis();
        let a = extend(&mut store, g, 7, 0);
        let b = extend(&mut store, g, 7, 1);
        assert!(!store.conflicts(a[6], a[6]));
        assert!(store.conflicts(a[6], b[6]));
        assert!(!store.conflicts(a[5], b[6]));
    }

    #[test]
    fn prefix_comparable_cases() {
        let (mut store, g) = BlockStore::with_genesis();
        let a = extend(&mut store, g, 2, 0);
        let b = extend(&mut store, g, 1, 1);
        let long = Log(vec![g, a[0], a[1]]);
        let short = Log(vec![g, a[0]]);
        let other = Log(vec![g, b[0]]);
        assert!(prefix_comparable(&long, &short));
        assert!(!prefix_comparable(&short, &other));
        assert!(prefix_comparable(&Log::new(g), &other));
        assert!(long.is_chain(&store));
        assert!(!Log(vec![g, a[1]]).is_chain(&store));
    }

    #[test]
    fn miner_tag_roundtrip() {
        for m in [Miner::Node(NodeId(7)), Miner::Adversary, Miner::Oracle] {
            let s = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Miner>(&s).unwrap(), m);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random tree: block i+1 picks an existing block as parent.
        fn tree(parents: &[usize]) -> BlockStore {
            let (mut store, _) = BlockStore::with_genesis();
            for (i, p) in parents.iter().enumerate() {
                let parent = BlockId((*p % (i + 1)) as u64);
                store.make_block(Some(parent), vec![], Miner::Node(NodeId(0)), i as Round).unwrap();
            }
            store
        }

        proptest! {
            #[test]
            fn parent_walk_terminates_in_height_steps(parents in prop::collection::vec(0usize..64, 1..40)) {
                let store = tree(&parents);
                for b in store.iter() {
                    let chain = store.chain_of(b.id).unwrap();
                    prop_assert_eq!(chain.len() as u64, b.height + 1);
                    prop_assert_eq!(chain.root(), BlockId(0));
                }
            }

            #[test]
            fn depth_locates_block_in_chain(parents in prop::collection::vec(0usize..64, 1..40)) {
                let store = tree(&parents);
                for tip in store.iter() {
                    let chain = store.chain_of(tip.id).unwrap();
                    for b in store.iter() {
                        if let Some(d) = store.depth(b.id, tip.id) {
                            prop_assert_eq!(chain.ids()[(tip.height - d) as usize], b.id);
                        } else {
                            prop_assert!(!chain.contains(b.id, &store));
                        }
                    }
                }
            }

            #[test]
            fn conflicts_symmetric_irreflexive(parents in prop::collection::vec(0usize..64, 1..30)) {
                let store = tree(&parents);
                for a in store.iter() {
                    prop_assert!(!store.conflicts(a.id, a.id));
                    for b in store.iter() {
                        prop_assert_eq!(store.conflicts(a.id, b.id), store.conflicts(b.id, a.id));
                    }
                }
            }

            #[test]
            fn prefix_comparable_iff_no_conflict(parents in prop::collection::vec(0usize..64, 1..30)) {
                let store = tree(&parents);
                let logs: Vec<Log> = store.iter().map(|b| Log(store.chain_of(b.id).unwrap().ids().to_vec())).collect();
                for a in &logs {
                    prop_assert!(prefix_comparable(a, a));
                    for b in &logs {
                        let conflict = a.0.iter().any(|x| b.0.iter().any(|y| store.conflicts(*x, *y)));
                        prop_assert_eq!(prefix_comparable(a, b), !conflict);
                        prop_assert_eq!(prefix_comparable(a, b), prefix_comparable(b, a));
                    }
                }
            }
        }
    }
}
