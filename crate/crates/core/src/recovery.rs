//! The recovery oracle: a trusted setup event that mints a new genesis on
//! top of one honest node's first-confirmed chain and wakes halted nodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockStore, NodeId, Round};
use crate::error::{Error, Result};
use crate::node::NodeView;
use crate::verify::{Verdict, Witness};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub round: Round,
    pub chosen: NodeId,
    pub genesis: BlockId,
    pub parent: BlockId,
}

/// The chain a recovery would extend if `view`'s node were chosen: its
/// first-confirmed blocks from the original genesis. The node's own
/// finalized log must be a prefix of it.
pub fn recovery_chain(view: &NodeView, store: &BlockStore) -> Result<Vec<BlockId>> {
    let chain = view.first_confirmed_blocks(store);
    let log = &view.finalized().0;
    if log.len() > chain.len() || chain[..log.len()] != log[..] {
        return Err(Error::Recovery(format!(
            "finalized log of {} is not a prefix of its first-confirmed chain",
            view.id
        )));
    }
    Ok(chain)
}

/// Seeded uniform pick among `candidates`, fixed per (seed, trial, round).
pub fn choose_node(seed: u64, trial: u64, round: Round, candidates: &[NodeId]) -> Result<NodeId> {
    if candidates.is_empty() {
        return Err(Error::Recovery("no active honest node to choose".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng.set_word_pos(u128::from(round) << 4);
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// For every possible choice of node, every block finalized by any of the
/// given views lies on the chain the oracle would extend.
pub fn oracle_choice_independence(views: &[&NodeView], store: &BlockStore) -> Verdict {
    let mut v =
        Verdict { property: "oracle_choice_independence".into(), pass: true, checked: 0, violations: 0, witness: None };
    for chosen in views {
        let chain = match recovery_chain(chosen, store) {
            Ok(c) => c,
            Err(e) => {
                v.pass = false;
                v.violations += 1;
                v.witness.get_or_insert(Witness { nodes: vec![chosen.id], note: e.to_string(), ..Default::default() });
                continue;
            }
        };
        for other in views {
            for &b in &other.finalized().0 {
                v.checked += 1;
                let h = store.height(b) as usize;
                if chain.get(h) != Some(&b) {
                    v.pass = false;
                    v.violations += 1;
                    v.witness.get_or_insert(Witness {
                        nodes: vec![chosen.id, other.id],
                        blocks: vec![b],
                        rounds: vec![],
                        note: format!("{b} finalized by {} is off the chain chosen via {}", other.id, chosen.id),
                    });
                }
            }
        }
    }
    v
}
