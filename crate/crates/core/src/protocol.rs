//! Base chain protocols: mining lottery, tip selection, k-deep delivery.
//!
//! Mining is a per-round Bernoulli lottery per process, drawn from a ChaCha
//! stream keyed by `(seed, round, process)`. A round in which two distinct
//! honest processes both win is a forked round; forked rounds are what
//! produce abandoned blocks under a chain protocol.
//!
//! Two delivery rules are provided: Nakamoto longest-chain (deepest
//! strong-edge leaf, ties to the smaller id) and GHOST (greedy
//! heaviest-subtree walk from genesis). Both deliver the chain blocks that
//! are at least `k` strong edges below the selected tip, in chain order.
//! Tip selection only ever looks at strong edges, so the base protocol is
//! oblivious to any weak references the closure adds.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::closure::ClosureState;
use crate::config::{BaseProtocol, ClosureMode};
use crate::dag::{fmix64, Block, BlockId, DagStore, ProcessId, Round, Transaction, TxId};
use crate::trace::{ExecutionTrace, TraceEvent};

/// Stream domains for the crate's keyed randomness.
pub const DOMAIN_MINE: u64 = 1;
pub const DOMAIN_TX: u64 = 2;
pub const DOMAIN_ADVERSARY: u64 = 3;
const DOMAIN_STAMP: u64 = 4;

/// The miner stamp: a transaction every mined block carries, unique per
/// `(miner, round)`. It plays the role of a coinbase entry: concurrently
/// mined blocks always differ in payload, and a block therefore always holds
/// at least one transaction that no other block delivers. Stamps are never
/// broadcast, so transaction-level metrics ignore them.
pub fn stamp_tx(miner: ProcessId, round: Round) -> Transaction {
    let mut buf = [0u8; 24];
    buf[0..8].copy_from_slice(&DOMAIN_STAMP.to_le_bytes());
    buf[8..16].copy_from_slice(&u64::from(miner.0).to_le_bytes());
    buf[16..24].copy_from_slice(&round.to_le_bytes());
    Transaction::new(TxId(crate::dag::digest64(&buf)), round)
}

/// Deterministic ChaCha stream for `(seed, domain, round, process)`. Each
/// coordinate is folded through a bijective mixer, so distinct coordinates
/// yield distinct keys.
pub fn stream_rng(seed: u64, domain: u64, round: Round, process: u64) -> ChaCha8Rng {
    let h1 = fmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h2 = fmix64(h1 ^ domain);
    let h3 = fmix64(h2 ^ round);
    let h4 = fmix64(h3 ^ process);
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&h1.to_le_bytes());
    key[8..16].copy_from_slice(&h2.to_le_bytes());
    key[16..24].copy_from_slice(&h3.to_le_bytes());
    key[24..32].copy_from_slice(&h4.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Per-process per-round Bernoulli mining lottery.
#[derive(Debug, Clone)]
pub struct MiningLottery {
    seed: u64,
    threshold: u64,
    q: f64,
}

impl MiningLottery {
    pub fn new(seed: u64, q: f64) -> Self {
        assert!((0.0..=1.0).contains(&q), "q out of range");
        // Compare a uniform u64 draw against q scaled to the 64-bit range.
        let threshold = (q * (u64::MAX as f64)) as u64;
        MiningLottery { seed, threshold, q }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Whether `process` wins the lottery in `round`. Independent across
    /// `(round, process)` pairs and independent of any protocol state, so
    /// runs with and without the closure share one mining schedule.
    pub fn success(&self, round: Round, process: ProcessId) -> bool {
        stream_rng(self.seed, DOMAIN_MINE, round, u64::from(process.0)).next_u64()
            < self.threshold
    }
}

/// Probability that a round is forked (two or more honest winners) when all
/// `n` processes mine honestly: `1 - (1-q)^n - n q (1-q)^(n-1)`.
pub fn forked_round_probability(q: f64, n: u32) -> f64 {
    let n_f = f64::from(n);
    1.0 - (1.0 - q).powi(n as i32) - n_f * q * (1.0 - q).powi(n as i32 - 1)
}

/// Delivery criterion: rule kind plus confirmation depth `k >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRule {
    pub kind: BaseProtocol,
    pub confirmation_depth: u64,
}

impl DeliveryRule {
    pub fn new(kind: BaseProtocol, confirmation_depth: u64) -> Self {
        assert!(confirmation_depth >= 1, "confirmation depth must be >= 1");
        DeliveryRule {
            kind,
            confirmation_depth,
        }
    }

    pub fn select_tip(&self, view: &DagStore) -> BlockId {
        match self.kind {
            BaseProtocol::Nakamoto => tip_selection_longest(view),
            BaseProtocol::Ghost => tip_selection_ghost(view),
        }
    }
}

/// Deepest strong-edge leaf; ties broken by the smaller id so that processes
/// with identical views agree.
pub fn tip_selection_longest(view: &DagStore) -> BlockId {
    view.deepest_strong_leaf()
}

/// Greedy heaviest-subtree walk: from genesis, repeatedly descend into the
/// strong child with the largest strong-edge subtree (ties to the smaller
/// id); the final childless block is the tip.
pub fn tip_selection_ghost(view: &DagStore) -> BlockId {
    let sizes = strong_subtree_sizes(view);
    let mut cur = view.genesis_id();
    loop {
        let next = view
            .strong_children(cur)
            .max_by_key(|c| (sizes[c], std::cmp::Reverse(*c)));
        match next {
            Some(c) => cur = c,
            None => return cur,
        }
    }
}

/// Strong-edge subtree block counts for every block, in one bottom-up pass.
pub fn strong_subtree_sizes(view: &DagStore) -> BTreeMap<BlockId, usize> {
    let mut sizes = BTreeMap::new();
    // Post-order over the strong-child tree rooted at genesis.
    let mut stack = vec![(view.genesis_id(), false)];
    while let Some((id, expanded)) = stack.pop() {
        if expanded {
            let total: usize = 1 + view.strong_children(id).map(|c| sizes[&c]).sum::<usize>();
            sizes.insert(id, total);
        } else {
            stack.push((id, true));
            for c in view.strong_children(id) {
                stack.push((c, false));
            }
        }
    }
    sizes
}

/// True when at least two distinct honest processes mined in round `r`.
pub fn detect_forked_round(trace: &ExecutionTrace, r: Round) -> bool {
    let mut honest_miners = BTreeSet::new();
    for ev in &trace.events {
        if let TraceEvent::Mine { round, miner, .. } = ev {
            if *round == r && trace.meta.is_honest(*miner) {
                honest_miners.insert(*miner);
            }
        }
    }
    honest_miners.len() >= 2
}

/// Base block validity: structural well-formedness for a chain protocol.
/// Reference resolution is the store's concern; this checks shape.
pub fn valid_block(block: &Block, block_capacity: usize) -> bool {
    if block.is_genesis() {
        return block.weak_refs.is_empty() && block.txs.is_empty();
    }
    if block.parents.len() != 1 {
        return false;
    }
    if block.txs.len() > block_capacity {
        return false;
    }
    let mut tx_ids: Vec<TxId> = block.txs.iter().map(|t| t.id).collect();
    tx_ids.sort_unstable();
    tx_ids.dedup();
    if tx_ids.len() != block.txs.len() {
        return false;
    }
    let weak: BTreeSet<BlockId> = block.weak_refs.iter().copied().collect();
    if weak.len() != block.weak_refs.len() {
        return false;
    }
    !block.parents.iter().any(|p| weak.contains(p))
}

/// Transaction validity hook. Ids are unique by construction; nothing else
/// is modeled, so every well-formed transaction is valid.
pub fn valid_transaction(_tx: &Transaction) -> bool {
    true
}

/// One process's local state: DAG view, buffered out-of-order blocks,
/// mempool, base-delivery bookkeeping and (optionally) the closure overlay.
#[derive(Debug, Clone)]
pub struct ProcessState {
    pub id: ProcessId,
    pub view: DagStore,
    /// Blocks waiting for a missing reference, keyed by that reference.
    pending: BTreeMap<BlockId, Vec<Block>>,
    pending_ids: BTreeSet<BlockId>,
    /// Received, not-yet-mined-out transactions, oldest first.
    mempool: BTreeMap<(Round, TxId), Transaction>,
    known_txs: BTreeSet<TxId>,
    pub delivered_seq: Vec<BlockId>,
    pub delivered: BTreeSet<BlockId>,
    /// Tip whose chain payload is currently reflected in `chain_txs`.
    tracked_tip: BlockId,
    /// Multiset of transaction ids on the tracked tip's chain.
    chain_txs: HashMap<TxId, u32>,
    pub closure: Option<ClosureState>,
}

impl ProcessState {
    pub fn new(id: ProcessId, closure_mode: ClosureMode) -> Self {
        let view = DagStore::with_genesis();
        let genesis = view.genesis_id();
        ProcessState {
            id,
            view,
            pending: BTreeMap::new(),
            pending_ids: BTreeSet::new(),
            mempool: BTreeMap::new(),
            known_txs: BTreeSet::new(),
            delivered_seq: Vec::new(),
            delivered: BTreeSet::new(),
            tracked_tip: genesis,
            chain_txs: HashMap::new(),
            closure: match closure_mode {
                ClosureMode::Off => None,
                mode => Some(ClosureState::new(mode)),
            },
        }
    }

    /// Accepts a block into the view, flushing any buffered blocks that were
    /// waiting on it. Returns the ids actually inserted, in insertion order.
    /// Invalid blocks are dropped; unknown-reference blocks are buffered.
    pub fn integrate_block(&mut self, block: Block, block_capacity: usize) -> Vec<BlockId> {
        let mut inserted = Vec::new();
        let mut queue = vec![block];
        while let Some(b) = queue.pop() {
            if self.view.contains(b.id) {
                continue;
            }
            if !valid_block(&b, block_capacity) {
                continue;
            }
            let missing = b.references().find(|r| !self.view.contains(*r));
            match missing {
                Some(missing) => {
                    if self.pending_ids.insert(b.id) {
                        self.pending.entry(missing).or_default().push(b);
                    }
                }
                None => {
                    let id = b.id;
                    self.view.insert(b).expect("references checked");
                    self.pending_ids.remove(&id);
                    inserted.push(id);
                    if let Some(waiters) = self.pending.remove(&id) {
                        for w in waiters {
                            self.pending_ids.remove(&w.id);
                            queue.push(w);
                        }
                    }
                }
            }
        }
        inserted
    }

    pub fn integrate_tx(&mut self, tx: Transaction) {
        if self.known_txs.insert(tx.id) {
            self.mempool.insert((tx.broadcast_round, tx.id), tx);
        }
    }

    /// Applies the delivery criterion once: every undelivered chain block at
    /// least `k` strong edges below the selected tip is delivered, in chain
    /// order. Returns the newly delivered blocks.
    pub fn deliver_step(&mut self, rule: &DeliveryRule) -> Vec<Block> {
        let tip = rule.select_tip(&self.view);
        let tip_depth = self.view.strong_depth(tip).expect("tip stored");
        if tip_depth < rule.confirmation_depth {
            return Vec::new();
        }
        let frontier = tip_depth - rule.confirmation_depth;
        let genesis = self.view.genesis_id();

        let mut cur = tip;
        while self.view.strong_depth(cur).expect("chain block") > frontier {
            cur = self.parent_of(cur);
        }
        let mut batch = Vec::new();
        while cur != genesis && !self.delivered.contains(&cur) {
            batch.push(cur);
            cur = self.parent_of(cur);
        }
        batch.reverse();

        let mut out = Vec::with_capacity(batch.len());
        for id in batch {
            self.delivered.insert(id);
            self.delivered_seq.push(id);
            let block = self.view.get(id).expect("delivered block stored").clone();
            // Delivered payload is final; it will never be mined again.
            for tx in &block.txs {
                self.mempool.remove(&(tx.broadcast_round, tx.id));
            }
            out.push(block);
        }
        out
    }

    /// Runs the mining lottery for `round` and, on success, builds this
    /// process's block.
    pub fn mine_attempt(
        &mut self,
        lottery: &MiningLottery,
        rule: &DeliveryRule,
        round: Round,
        block_capacity: usize,
    ) -> Option<Block> {
        lottery
            .success(round, self.id)
            .then(|| self.mine_block(rule, round, block_capacity))
    }

    /// Builds this process's block for a lottery win in `round`: single
    /// strong parent from tip selection, the oldest valid transactions not
    /// already on the selected chain, and the miner stamp. Weak references
    /// are the closure's business and are added afterwards.
    pub fn mine_block(&mut self, rule: &DeliveryRule, round: Round, block_capacity: usize) -> Block {
        let tip = rule.select_tip(&self.view);
        self.retarget_chain_txs(tip);
        let mut txs: Vec<Transaction> = self
            .mempool
            .values()
            .filter(|tx| !self.chain_txs.contains_key(&tx.id) && valid_transaction(tx))
            .take(block_capacity.saturating_sub(1))
            .cloned()
            .collect();
        txs.push(stamp_tx(self.id, round));
        Block::new(vec![tip], Vec::new(), txs, Some(self.id), round)
    }

    fn parent_of(&self, id: BlockId) -> BlockId {
        self.view.get(id).expect("block stored").parents[0]
    }

    /// Moves the chain-payload tracker from the previously tracked tip to
    /// `new_tip` by walking both down to their common ancestor.
    fn retarget_chain_txs(&mut self, new_tip: BlockId) {
        if self.tracked_tip == new_tip {
            return;
        }
        let mut removals = Vec::new();
        let mut additions = Vec::new();
        let mut a = self.tracked_tip;
        let mut b = new_tip;
        let depth = |s: &DagStore, id: BlockId| s.strong_depth(id).expect("chain block");
        while depth(&self.view, a) > depth(&self.view, b) {
            removals.push(a);
            a = self.parent_of(a);
        }
        while depth(&self.view, b) > depth(&self.view, a) {
            additions.push(b);
            b = self.parent_of(b);
        }
        while a != b {
            removals.push(a);
            additions.push(b);
            a = self.parent_of(a);
            b = self.parent_of(b);
        }
        for id in removals {
            let block = self.view.get(id).expect("stored");
            for tx in &block.txs {
                if let Some(count) = self.chain_txs.get_mut(&tx.id) {
                    *count -= 1;
                    if *count == 0 {
                        self.chain_txs.remove(&tx.id);
                    }
                }
            }
        }
        for id in additions {
            let block = self.view.get(id).expect("stored");
            for tx in &block.txs {
                *self.chain_txs.entry(tx.id).or_insert(0) += 1;
            }
        }
        self.tracked_tip = new_tip;
    }

    /// Number of transactions waiting in the mempool.
    pub fn mempool_len(&self) -> usize {
        self.mempool.len()
    }
}
