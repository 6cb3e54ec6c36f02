//! The throughput closure: weak-reference augmentation and woven delivery.
//!
//! The closure runs on top of a base protocol. When the local process mines
//! a base block, the closure adds weak references to the leaves of the
//! block's *abandoned set*: every known closure-valid block that is neither
//! reachable from the new block nor compatible with it (for chain bases,
//! every non-ancestor). When the base protocol delivers a block, the closure
//! delivers all not-yet-delivered blocks reachable from it, in a fixed
//! topological order, immediately before it. Abandoned blocks are thereby
//! woven back into the total order instead of being lost.
//!
//! The topological order sorts by `(depth, id)` where depth is the longest
//! strong+weak path from genesis; every reference target sorts strictly
//! before its referrer, and any two processes holding the same blocks agree
//! on the order.

use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::config::ClosureMode;
use crate::dag::{Block, BlockId, DagStore, ProcessId, TxId};
use crate::protocol::valid_block;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClosureError {
    #[error("unresolved ancestry: reference {0} not in local view")]
    UnresolvedAncestry(BlockId),
    #[error("delivered block {0} has no accepted twin in the local view")]
    MissingTwin(BlockId),
}

/// Deterministic topological order: ascending `(depth, id)`.
///
/// Returns a linear extension of the sub-DAG induced by `ids`: for every
/// reference edge inside the set, the target precedes the referrer.
pub fn topo_order(view: &DagStore, ids: &BTreeSet<BlockId>) -> Vec<BlockId> {
    let mut out: Vec<BlockId> = ids.iter().copied().collect();
    out.sort_by_key(|id| (view.depth(*id).expect("block in view"), *id));
    out
}

/// Per-process closure overlay over the shared block view.
#[derive(Debug, Clone)]
pub struct ClosureState {
    mode: ClosureMode,
    /// Blocks accepted as closure-valid: own mined blocks plus foreign
    /// blocks that passed validity at receipt.
    accepted: BTreeSet<BlockId>,
    pub delivered_seq: Vec<BlockId>,
    pub delivered: BTreeSet<BlockId>,
    delivered_txs: BTreeSet<TxId>,
    /// Most recent base-delivered block.
    last_delivered: Option<BlockId>,
    /// Union of the reachable sets of all base-delivered blocks so far;
    /// everything in it has already been considered for delivery.
    covered: HashSet<BlockId>,
}

impl ClosureState {
    pub fn new(mode: ClosureMode) -> Self {
        assert!(mode != ClosureMode::Off, "closure state for off mode");
        ClosureState {
            mode,
            accepted: BTreeSet::new(),
            delivered_seq: Vec::new(),
            delivered: BTreeSet::new(),
            delivered_txs: BTreeSet::new(),
            last_delivered: None,
            covered: HashSet::new(),
        }
    }

    pub fn mode(&self) -> ClosureMode {
        self.mode
    }

    pub fn last_delivered(&self) -> Option<BlockId> {
        self.last_delivered
    }

    pub fn is_accepted(&self, id: BlockId) -> bool {
        self.accepted.contains(&id)
    }

    /// Everything reachable from `block`'s references over strong and weak
    /// edges. The block itself need not be stored yet.
    fn reachable_from_refs(
        &self,
        view: &DagStore,
        block: &Block,
    ) -> Result<HashSet<BlockId>, ClosureError> {
        let mut reach = HashSet::new();
        let mut stack: Vec<BlockId> = Vec::new();
        for r in block.references() {
            if !view.contains(r) {
                return Err(ClosureError::UnresolvedAncestry(r));
            }
            stack.push(r);
        }
        while let Some(cur) = stack.pop() {
            if !reach.insert(cur) {
                continue;
            }
            stack.extend(view.get(cur).expect("reference in view").references());
        }
        Ok(reach)
    }

    /// The abandoned set of `block`: accepted blocks that are not reachable
    /// from it and not compatible with it. For chain base protocols a block
    /// is incompatible with every non-ancestor, so the predicate hook is
    /// constant true; DAG bases can narrow it.
    pub fn abandoned_set(
        &self,
        view: &DagStore,
        block: &Block,
    ) -> Result<BTreeSet<BlockId>, ClosureError> {
        self.abandoned_set_with(view, block, |_| true)
    }

    pub fn abandoned_set_with(
        &self,
        view: &DagStore,
        block: &Block,
        incompatible: impl Fn(BlockId) -> bool,
    ) -> Result<BTreeSet<BlockId>, ClosureError> {
        let reach = self.reachable_from_refs(view, block)?;
        Ok(self
            .accepted
            .iter()
            .copied()
            .filter(|id| *id != block.id && !reach.contains(id) && incompatible(*id))
            .collect())
    }

    /// Weak references for the greedy variant: leaves of everything accepted
    /// that is not already in the block's ancestry. For chain bases this
    /// coincides with the leaves of the abandoned set; it skips the
    /// compatibility predicate, which is what may add redundant references
    /// for DAG bases.
    pub fn greedy_weak_refs(
        &self,
        view: &DagStore,
        block: &Block,
    ) -> Result<Vec<BlockId>, ClosureError> {
        let reach = self.reachable_from_refs(view, block)?;
        let candidates: BTreeSet<BlockId> = self
            .accepted
            .iter()
            .copied()
            .filter(|id| *id != block.id && !reach.contains(id))
            .collect();
        let leaves = view.leaves(&candidates).expect("accepted blocks in view");
        Ok(topo_order(view, &leaves))
    }

    /// Handles a local base-mine event: augments the freshly mined block
    /// with weak references and accepts it. Returns `None` for foreign mine
    /// events, whose blocks arrive through [`ClosureState::on_foreign_mined`].
    pub fn on_base_mined(
        &mut self,
        view: &DagStore,
        block: Block,
        me: ProcessId,
    ) -> Result<Option<Block>, ClosureError> {
        if block.miner != Some(me) {
            return Ok(None);
        }
        let weak = match self.mode {
            ClosureMode::Closure => {
                let abandoned = self.abandoned_set(view, &block)?;
                let leaves = view.leaves(&abandoned).expect("accepted blocks in view");
                topo_order(view, &leaves)
            }
            ClosureMode::Greedy => self.greedy_weak_refs(view, &block)?,
            ClosureMode::Off => unreachable!("closure state never runs in off mode"),
        };
        let augmented = block.with_weak_refs(weak);
        self.accepted.insert(augmented.id);
        Ok(Some(augmented))
    }

    /// Closure validity: base validity plus at least one transaction not yet
    /// closure-delivered here.
    pub fn closure_valid(&self, block: &Block, block_capacity: usize) -> bool {
        valid_block(block, block_capacity)
            && block.txs.iter().any(|tx| !self.delivered_txs.contains(&tx.id))
    }

    /// Handles receipt of a foreign block: accepted iff closure-valid.
    /// Returns whether it was accepted. Invalid blocks are dropped silently;
    /// the base protocol may still use them.
    pub fn on_foreign_mined(&mut self, block: &Block, block_capacity: usize) -> bool {
        if self.closure_valid(block, block_capacity) {
            self.accepted.insert(block.id);
            true
        } else {
            false
        }
    }

    /// Handles a base delivery: delivers, in topological order, every
    /// accepted block reachable from `block` (itself included) that was not
    /// covered by an earlier base delivery and not delivered before.
    /// Blocks that lost closure validity in the meantime are skipped; a
    /// block can only lose validity over time, so dropping it from future
    /// consideration never changes the output. The delivered base block
    /// sorts last, so woven blocks land immediately before it.
    pub fn on_base_deliver(
        &mut self,
        view: &DagStore,
        block: &Block,
        block_capacity: usize,
    ) -> Result<Vec<Block>, ClosureError> {
        if !view.contains(block.id) {
            return Err(ClosureError::MissingTwin(block.id));
        }
        // Walk only the part of the ancestry that earlier deliveries have
        // not covered yet; the covered set fences the search off.
        let mut fresh = HashSet::new();
        let mut stack = vec![block.id];
        while let Some(cur) = stack.pop() {
            if self.covered.contains(&cur) || !fresh.insert(cur) {
                continue;
            }
            let b = view.get(cur).expect("reachable block in view");
            stack.extend(b.references());
        }

        let ready: BTreeSet<BlockId> = fresh
            .iter()
            .copied()
            .filter(|id| self.accepted.contains(id) && !self.delivered.contains(id))
            .collect();

        let mut out = Vec::new();
        for id in topo_order(view, &ready) {
            let candidate = view.get(id).expect("ready block in view");
            if !self.closure_valid(candidate, block_capacity) {
                continue;
            }
            self.delivered.insert(id);
            self.delivered_seq.push(id);
            self.delivered_txs.extend(candidate.txs.iter().map(|t| t.id));
            out.push(candidate.clone());
        }

        self.last_delivered = Some(block.id);
        self.covered.extend(fresh);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::Transaction;

    fn tx(n: u64) -> Transaction {
        Transaction::new(TxId(n), 0)
    }

    fn mined(parent: BlockId, n: u64, p: u32, round: u64) -> Block {
        Block::new(vec![parent], vec![], vec![tx(n)], Some(ProcessId(p)), round)
    }

    struct Rig {
        view: DagStore,
        closure: ClosureState,
    }

    impl Rig {
        fn new(mode: ClosureMode) -> Self {
            Rig {
                view: DagStore::with_genesis(),
                closure: ClosureState::new(mode),
            }
        }

        /// Mines locally as P0: closure augmentation plus view insert.
        fn mine(&mut self, parent: BlockId, n: u64, round: u64) -> Block {
            let raw = mined(parent, n, 0, round);
            let augmented = self
                .closure
                .on_base_mined(&self.view, raw, ProcessId(0))
                .unwrap()
                .unwrap();
            self.view.insert(augmented.clone()).unwrap();
            augmented
        }

        /// Receives a foreign block: closure acceptance plus view insert.
        fn receive(&mut self, block: Block) -> bool {
            let accepted = self.closure.on_foreign_mined(&block, 16);
            self.view.insert(block).unwrap();
            accepted
        }
    }

    #[test]
    fn genesis_only_abandoned_set_is_empty() {
        let rig = Rig::new(ClosureMode::Closure);
        let candidate = mined(rig.view.genesis_id(), 1, 0, 1);
        assert!(rig
            .closure
            .abandoned_set(&rig.view, &candidate)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn fork_free_mining_adds_no_weak_refs() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        assert!(a.weak_refs.is_empty());
        let b = rig.mine(a.id, 2, 2);
        assert!(b.weak_refs.is_empty());
    }

    #[test]
    fn mining_references_leaves_of_abandoned_branch() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        // Foreign fork: f1 extends genesis, f2 extends f1.
        let f1 = mined(g, 10, 1, 1);
        let f2 = mined(f1.id, 11, 2, 2);
        assert!(rig.receive(f1.clone()));
        assert!(rig.receive(f2.clone()));
        // Next local block on top of `a` must weakly reference only the
        // abandoned leaf f2 (f1 is covered through it).
        let b = rig.mine(a.id, 3, 3);
        assert_eq!(b.weak_refs, vec![f2.id]);
    }

    #[test]
    fn greedy_and_abandoned_leaves_agree_on_chains() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        let f1 = mined(g, 10, 1, 1);
        rig.receive(f1.clone());
        let candidate = mined(a.id, 2, 0, 2);
        let abandoned = rig.closure.abandoned_set(&rig.view, &candidate).unwrap();
        let via_abandoned = topo_order(
            &rig.view,
            &rig.view.leaves(&abandoned).unwrap(),
        );
        let via_greedy = rig
            .closure
            .greedy_weak_refs(&rig.view, &candidate)
            .unwrap();
        assert_eq!(via_abandoned, via_greedy);
        assert_eq!(via_greedy, vec![f1.id]);
    }

    #[test]
    fn foreign_block_with_spent_payload_rejected() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        let b = rig.mine(a.id, 2, 2);
        // Deliver a: its tx 1 becomes closure-delivered.
        rig.closure.on_base_deliver(&rig.view, &a, 16).unwrap();
        // A foreign block whose only tx is the already delivered tx 1.
        let stale = Block::new(vec![b.id], vec![], vec![tx(1)], Some(ProcessId(3)), 3);
        assert!(!rig.closure.on_foreign_mined(&stale, 16));
        // Fresh payload is accepted.
        let fresh = Block::new(vec![b.id], vec![], vec![tx(9)], Some(ProcessId(3)), 3);
        assert!(rig.closure.on_foreign_mined(&fresh, 16));
    }

    #[test]
    fn empty_payload_never_closure_valid() {
        let rig = Rig::new(ClosureMode::Closure);
        let empty = Block::new(
            vec![rig.view.genesis_id()],
            vec![],
            vec![],
            Some(ProcessId(1)),
            1,
        );
        assert!(!rig.closure.closure_valid(&empty, 16));
    }

    #[test]
    fn first_delivery_emits_the_block_alone() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        let out = rig.closure.on_base_deliver(&rig.view, &a, 16).unwrap();
        assert_eq!(out.iter().map(|b| b.id).collect::<Vec<_>>(), vec![a.id]);
        assert_eq!(rig.closure.last_delivered(), Some(a.id));
    }

    #[test]
    fn woven_blocks_precede_their_deliverer_and_never_repeat() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let g = rig.view.genesis_id();
        let a = rig.mine(g, 1, 1);
        let f1 = mined(g, 10, 1, 1);
        rig.receive(f1.clone());
        let b = rig.mine(a.id, 2, 2); // weakly references f1
        assert_eq!(b.weak_refs, vec![f1.id]);
        let c = rig.mine(b.id, 3, 3);

        rig.closure.on_base_deliver(&rig.view, &a, 16).unwrap();
        let batch = rig.closure.on_base_deliver(&rig.view, &b, 16).unwrap();
        assert_eq!(
            batch.iter().map(|x| x.id).collect::<Vec<_>>(),
            vec![f1.id, b.id],
            "woven block lands immediately before its deliverer"
        );
        // Delivering c must not repeat f1 or b even though both are
        // reachable from c.
        let batch = rig.closure.on_base_deliver(&rig.view, &c, 16).unwrap();
        assert_eq!(batch.iter().map(|x| x.id).collect::<Vec<_>>(), vec![c.id]);
        let all = &rig.closure.delivered_seq;
        let unique: BTreeSet<_> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
    }

    #[test]
    fn missing_twin_is_an_error() {
        let mut rig = Rig::new(ClosureMode::Closure);
        let stranger = mined(rig.view.genesis_id(), 5, 4, 1);
        assert_eq!(
            rig.closure.on_base_deliver(&rig.view, &stranger, 16),
            Err(ClosureError::MissingTwin(stranger.id))
        );
    }

    #[test]
    fn topo_order_is_empty_for_empty_input() {
        let view = DagStore::with_genesis();
        assert!(topo_order(&view, &BTreeSet::new()).is_empty());
    }

    #[test]
    fn topo_order_breaks_depth_ties_by_id() {
        let mut view = DagStore::with_genesis();
        let g = view.genesis_id();
        let a = mined(g, 1, 0, 1);
        let b = mined(g, 2, 1, 1);
        view.insert(a.clone()).unwrap();
        view.insert(b.clone()).unwrap();
        let ids: BTreeSet<_> = [a.id, b.id].into_iter().collect();
        assert_eq!(topo_order(&view, &ids), vec![a.id.min(b.id), a.id.max(b.id)]);
    }
}
