//! Content-addressed blocks and the append-only DAG store.
//!
//! Blocks carry two kinds of references: *strong* parent references (the base
//! protocol's edges, exactly one per non-genesis block under a chain
//! protocol) and *weak* references (the extra edges added by the throughput
//! closure). The store keeps every accepted block, is closed under both
//! reference kinds, and answers the reachability queries the rest of the
//! crate is built on: ancestor sets per edge set, leaves of a subset, and
//! longest-path depth from genesis.
//!
//! Depth is the *longest* path from genesis over strong and weak edges
//! together. Every reference target of a block therefore has strictly
//! smaller depth, which makes the `(depth, id)` order used for closure
//! delivery a linear extension of the DAG.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Round counter. Round 0 is the pre-execution round holding genesis.
pub type Round = u64;

/// Index of a process in the static set `P_0 .. P_{n-1}`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ProcessId(pub u32);

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// 64-bit transaction digest, unique within an execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(pub u64);

/// 64-bit block digest over the canonical block encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

// Ids are serialized as fixed-width hex strings: JSON numbers lose precision
// above 2^53 and fixed-width hex sorts the same way as the integers.
macro_rules! hex_id_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(&format_args!("{:016x}", self.0))
            }
        }
        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = <std::borrow::Cow<'_, str>>::deserialize(d)?;
                u64::from_str_radix(&raw, 16)
                    .map($ty)
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}
hex_id_serde!(BlockId);
hex_id_serde!(TxId);

/// An opaque transaction: an id, an abstract payload size, and the round it
/// was broadcast. Validity reduces to id freshness; no ledger semantics are
/// modeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxId,
    pub payload_size: u32,
    pub broadcast_round: Round,
}

impl Transaction {
    pub fn new(id: TxId, broadcast_round: Round) -> Self {
        Transaction {
            id,
            payload_size: 1,
            broadcast_round,
        }
    }
}

/// Which edges a reachability query follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSet {
    /// Strong parent references only.
    Strong,
    /// Strong parents plus weak references.
    All,
}

/// A block: strong parents, weak references, transaction payload, miner and
/// the round it was mined in. The id is a digest of all of that, so two
/// blocks differing in any field (weak references included) have distinct
/// ids except with negligible probability.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub parents: Vec<BlockId>,
    pub weak_refs: Vec<BlockId>,
    pub txs: Vec<Transaction>,
    /// `None` exactly for genesis.
    pub miner: Option<ProcessId>,
    pub mined_round: Round,
}

impl Block {
    /// Builds a block and computes its content digest.
    pub fn new(
        parents: Vec<BlockId>,
        weak_refs: Vec<BlockId>,
        txs: Vec<Transaction>,
        miner: Option<ProcessId>,
        mined_round: Round,
    ) -> Self {
        let id = block_digest(&parents, &weak_refs, &txs, miner, mined_round);
        Block {
            id,
            parents,
            weak_refs,
            txs,
            miner,
            mined_round,
        }
    }

    /// The hard-coded initial block: no references, no payload, no miner.
    pub fn genesis() -> Self {
        Block::new(Vec::new(), Vec::new(), Vec::new(), None, 0)
    }

    /// Copy of this block with the given weak references, id recomputed.
    pub fn with_weak_refs(&self, weak_refs: Vec<BlockId>) -> Block {
        Block::new(
            self.parents.clone(),
            weak_refs,
            self.txs.clone(),
            self.miner,
            self.mined_round,
        )
    }

    /// Copy of this block with weak references removed, id left untouched so
    /// that references into the surrounding graph stay valid.
    pub fn stripped_keep_id(&self) -> Block {
        let mut b = self.clone();
        b.weak_refs.clear();
        b
    }

    pub fn is_genesis(&self) -> bool {
        self.parents.is_empty()
    }

    /// All referenced ids, strong before weak.
    pub fn references(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.parents.iter().chain(self.weak_refs.iter()).copied()
    }
}

/// 64-bit digest: FNV-1a over the bytes followed by a 64-bit avalanche
/// finalizer. Stable across platforms; not cryptographic, which is fine at
/// simulation scale.
pub fn digest64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    fmix64(h)
}

/// Final avalanche mix (the 64-bit finalizer from MurmurHash3).
pub fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Canonical length-prefixed encoding of the identity-relevant block fields.
fn block_digest(
    parents: &[BlockId],
    weak_refs: &[BlockId],
    txs: &[Transaction],
    miner: Option<ProcessId>,
    mined_round: Round,
) -> BlockId {
    let mut buf = Vec::with_capacity(8 * (3 + parents.len() + weak_refs.len() + txs.len()));
    let push = |buf: &mut Vec<u8>, v: u64| buf.extend_from_slice(&v.to_le_bytes());
    push(&mut buf, parents.len() as u64);
    for p in parents {
        push(&mut buf, p.0);
    }
    push(&mut buf, weak_refs.len() as u64);
    for w in weak_refs {
        push(&mut buf, w.0);
    }
    push(&mut buf, txs.len() as u64);
    for tx in txs {
        push(&mut buf, tx.id.0);
    }
    push(&mut buf, miner.map_or(u64::MAX, |p| u64::from(p.0)));
    push(&mut buf, mined_round);
    BlockId(digest64(&buf))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DagError {
    /// A referenced id is unknown. Signals out-of-order receipt; callers
    /// buffer the block and retry once the reference arrives.
    #[error("dangling reference to {0}")]
    DanglingReference(BlockId),
    #[error("duplicate block {0}")]
    DuplicateBlock(BlockId),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("malformed block {id}: {reason}")]
    MalformedBlock { id: BlockId, reason: String },
}

/// Append-only set of blocks, closed under references, acyclic by
/// construction (a block can only be inserted after everything it points
/// to). Cheap to clone; one store per simulated process view.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DagStore {
    blocks: BTreeMap<BlockId, Block>,
    strong_children: BTreeMap<BlockId, BTreeSet<BlockId>>,
    weak_children: BTreeMap<BlockId, BTreeSet<BlockId>>,
    /// Longest strong-only path from genesis; chain length for chain blocks.
    strong_depth: BTreeMap<BlockId, u64>,
    /// Longest path from genesis over strong and weak edges.
    full_depth: BTreeMap<BlockId, u64>,
    /// Blocks with no strong children, keyed by `(strong depth, id)`.
    strong_leaves: BTreeSet<(u64, BlockId)>,
    genesis: Option<BlockId>,
}

impl DagStore {
    /// An empty store. Genesis must be the first insert.
    pub fn empty() -> Self {
        DagStore::default()
    }

    /// A store seeded with the genesis block.
    pub fn with_genesis() -> Self {
        let mut store = DagStore::empty();
        store
            .insert(Block::genesis())
            .expect("genesis insert cannot fail");
        store
    }

    pub fn genesis_id(&self) -> BlockId {
        self.genesis.expect("store has no genesis")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.keys().copied()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.values()
    }

    /// Inserts a block whose references all resolve.
    ///
    /// Genesis (no parents) is only accepted into an empty store, which makes
    /// it unique. Any unknown reference yields [`DagError::DanglingReference`]
    /// and leaves the store untouched.
    pub fn insert(&mut self, block: Block) -> Result<(), DagError> {
        if self.blocks.contains_key(&block.id) {
            return Err(DagError::DuplicateBlock(block.id));
        }
        if block.parents.is_empty() {
            if !block.weak_refs.is_empty() {
                return Err(DagError::MalformedBlock {
                    id: block.id,
                    reason: "genesis cannot carry weak references".into(),
                });
            }
            if !self.blocks.is_empty() {
                return Err(DagError::MalformedBlock {
                    id: block.id,
                    reason: "only genesis may have no parents".into(),
                });
            }
        }
        let parent_set: BTreeSet<BlockId> = block.parents.iter().copied().collect();
        if parent_set.len() != block.parents.len() {
            return Err(DagError::MalformedBlock {
                id: block.id,
                reason: "duplicate parent reference".into(),
            });
        }
        let weak_set: BTreeSet<BlockId> = block.weak_refs.iter().copied().collect();
        if weak_set.len() != block.weak_refs.len() {
            return Err(DagError::MalformedBlock {
                id: block.id,
                reason: "duplicate weak reference".into(),
            });
        }
        if parent_set.intersection(&weak_set).next().is_some() {
            return Err(DagError::MalformedBlock {
                id: block.id,
                reason: "id appears as both parent and weak reference".into(),
            });
        }
        for r in block.references() {
            if !self.blocks.contains_key(&r) {
                return Err(DagError::DanglingReference(r));
            }
        }

        let strong_depth = block
            .parents
            .iter()
            .map(|p| self.strong_depth[p] + 1)
            .max()
            .unwrap_or(0);
        let full_depth = block
            .references()
            .map(|r| self.full_depth[&r] + 1)
            .max()
            .unwrap_or(0);

        for p in &block.parents {
            self.strong_children.entry(*p).or_default().insert(block.id);
            self.strong_leaves.remove(&(self.strong_depth[p], *p));
        }
        for w in &block.weak_refs {
            self.weak_children.entry(*w).or_default().insert(block.id);
        }
        self.strong_depth.insert(block.id, strong_depth);
        self.full_depth.insert(block.id, full_depth);
        self.strong_leaves.insert((strong_depth, block.id));
        if block.parents.is_empty() {
            self.genesis = Some(block.id);
        }
        self.blocks.insert(block.id, block);
        Ok(())
    }

    /// Transitive predecessors of `id` along the chosen edge set, excluding
    /// `id` itself.
    pub fn ancestors(&self, id: BlockId, edges: EdgeSet) -> Result<BTreeSet<BlockId>, DagError> {
        let start = self.get(id).ok_or(DagError::UnknownBlock(id))?;
        let mut seen = BTreeSet::new();
        let mut stack: Vec<BlockId> = match edges {
            EdgeSet::Strong => start.parents.clone(),
            EdgeSet::All => start.references().collect(),
        };
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            let b = &self.blocks[&cur];
            match edges {
                EdgeSet::Strong => stack.extend(b.parents.iter().copied()),
                EdgeSet::All => stack.extend(b.references()),
            }
        }
        Ok(seen)
    }

    /// Members of `subset` with no descendant (via strong or weak edges)
    /// inside `subset`.
    pub fn leaves(&self, subset: &BTreeSet<BlockId>) -> Result<BTreeSet<BlockId>, DagError> {
        for id in subset {
            if !self.contains(*id) {
                return Err(DagError::UnknownBlock(*id));
            }
        }
        let mut out = subset.clone();
        for id in subset {
            for anc in self.ancestors(*id, EdgeSet::All)? {
                if anc != *id {
                    out.remove(&anc);
                }
            }
        }
        Ok(out)
    }

    /// Longest strong+weak path from genesis. `depth(genesis) == 0`.
    pub fn depth(&self, id: BlockId) -> Result<u64, DagError> {
        self.full_depth
            .get(&id)
            .copied()
            .ok_or(DagError::UnknownBlock(id))
    }

    /// Longest strong-only path from genesis; for chain-protocol blocks this
    /// is the chain length. Weak references never influence it, so the base
    /// protocol behaves identically with and without the closure.
    pub fn strong_depth(&self, id: BlockId) -> Result<u64, DagError> {
        self.strong_depth
            .get(&id)
            .copied()
            .ok_or(DagError::UnknownBlock(id))
    }

    /// Blocks without strong children.
    pub fn strong_leaves(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.strong_leaves.iter().map(|(_, id)| *id)
    }

    /// The deepest strong leaf, smallest id on ties. This is the
    /// longest-chain tip.
    pub fn deepest_strong_leaf(&self) -> BlockId {
        let (max_depth, _) = *self
            .strong_leaves
            .iter()
            .next_back()
            .expect("store contains at least genesis");
        self.strong_leaves
            .range((max_depth, BlockId(0))..)
            .next()
            .expect("depth group nonempty")
            .1
    }

    pub fn strong_children(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.strong_children
            .get(&id)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    pub fn weak_children(&self, id: BlockId) -> impl Iterator<Item = BlockId> + '_ {
        self.weak_children
            .get(&id)
            .into_iter()
            .flat_map(|s| s.iter().copied())
    }

    /// Number of blocks in the strong-edge subtree rooted at `id`, counting
    /// `id` itself. The GHOST weight of a branch.
    pub fn strong_subtree_size(&self, id: BlockId) -> Result<usize, DagError> {
        if !self.contains(id) {
            return Err(DagError::UnknownBlock(id));
        }
        let mut count = 0usize;
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            count += 1;
            stack.extend(self.strong_children(cur));
        }
        Ok(count)
    }
}
