#![allow(dead_code)] // each test binary uses its own subset of oracles

//! Independent oracles for the integration suites. Everything here derives
//! expected values from first principles (plain DFS, memoized longest path,
//! pairwise reachability, an event-replay reconstruction) and never calls
//! into the store's cached indexes or the closure state machine it checks.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use babsim_core::dag::{Block, BlockId, ProcessId, TxId};
use babsim_core::trace::{ExecutionTrace, ReceiptKind, TraceEvent};

pub type Blocks = BTreeMap<BlockId, Block>;

/// Kahn's algorithm over parents plus weak references: true iff every block
/// can be scheduled, i.e. the graph is acyclic and closed.
pub fn kahn_is_acyclic(blocks: &Blocks) -> bool {
    let mut indegree: BTreeMap<BlockId, usize> = blocks.keys().map(|id| (*id, 0)).collect();
    for b in blocks.values() {
        for r in b.references() {
            if !blocks.contains_key(&r) {
                return false;
            }
        }
        *indegree.get_mut(&b.id).unwrap() = b.references().count();
    }
    let mut queue: Vec<BlockId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut scheduled = 0usize;
    let mut dependents: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for b in blocks.values() {
        for r in b.references() {
            dependents.entry(r).or_default().push(b.id);
        }
    }
    while let Some(id) = queue.pop() {
        scheduled += 1;
        for dep in dependents.get(&id).cloned().unwrap_or_default() {
            let d = indegree.get_mut(&dep).unwrap();
            *d -= 1;
            if *d == 0 {
                queue.push(dep);
            }
        }
    }
    scheduled == blocks.len()
}

/// Plain DFS ancestor set, excluding the start block.
pub fn dfs_ancestors(blocks: &Blocks, id: BlockId, strong_only: bool) -> BTreeSet<BlockId> {
    let mut seen = BTreeSet::new();
    let mut stack: Vec<BlockId> = refs_of(&blocks[&id], strong_only);
    while let Some(cur) = stack.pop() {
        if seen.insert(cur) {
            stack.extend(refs_of(&blocks[&cur], strong_only));
        }
    }
    seen
}

fn refs_of(b: &Block, strong_only: bool) -> Vec<BlockId> {
    if strong_only {
        b.parents.clone()
    } else {
        b.references().collect()
    }
}

/// Memoized longest-path distance from genesis over all references.
pub fn longest_path_depth(blocks: &Blocks, id: BlockId) -> u64 {
    fn go(blocks: &Blocks, id: BlockId, memo: &mut HashMap<BlockId, u64>) -> u64 {
        if let Some(d) = memo.get(&id) {
            return *d;
        }
        let depth = blocks[&id]
            .references()
            .map(|r| go(blocks, r, memo) + 1)
            .max()
            .unwrap_or(0);
        memo.insert(id, depth);
        depth
    }
    go(blocks, id, &mut HashMap::new())
}

/// Leaves of a subset by pairwise reachability: a member is a leaf iff no
/// other member can reach it through references.
pub fn oracle_leaves(blocks: &Blocks, subset: &BTreeSet<BlockId>) -> BTreeSet<BlockId> {
    subset
        .iter()
        .copied()
        .filter(|candidate| {
            !subset
                .iter()
                .filter(|other| *other != candidate)
                .any(|other| dfs_ancestors(blocks, *other, false).contains(candidate))
        })
        .collect()
}

/// True iff `order` lists every element of its set after all in-set blocks
/// it references, directly or transitively.
pub fn is_linear_extension(blocks: &Blocks, order: &[BlockId]) -> bool {
    let position: BTreeMap<BlockId, usize> =
        order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    order.iter().all(|id| {
        dfs_ancestors(blocks, *id, false)
            .iter()
            .filter_map(|anc| position.get(anc))
            .all(|p| p < &position[id])
    })
}

/// Reconstructs the closure delivery sequence of one observer straight from
/// the trace events: blocks become known at their receive (or own-mine)
/// event and are accepted if they hold a not-yet-woven transaction; each
/// base delivery then emits, in `(depth, id)` order, every accepted block
/// reachable from the delivered block that earlier deliveries did not
/// already cover, re-checking payload freshness at emission.
pub fn replay_closure_oracle(trace: &ExecutionTrace, observer: ProcessId) -> Vec<BlockId> {
    let mut blocks = trace.mined_blocks().expect("trace parses");
    let genesis = Block::genesis();
    blocks.insert(genesis.id, genesis);
    let capacity = trace.meta.block_capacity;
    let mut accepted: BTreeSet<BlockId> = BTreeSet::new();
    let mut woven_txs: BTreeSet<TxId> = BTreeSet::new();
    let mut covered: BTreeSet<BlockId> = BTreeSet::new();
    let mut emitted: Vec<BlockId> = Vec::new();
    let mut emitted_set: BTreeSet<BlockId> = BTreeSet::new();

    let structurally_valid = |b: &Block| {
        b.parents.len() == 1
            && b.txs.len() <= capacity
            && b.txs
                .iter()
                .map(|t| t.id)
                .collect::<BTreeSet<_>>()
                .len()
                == b.txs.len()
    };

    for ev in &trace.events {
        match ev {
            TraceEvent::Receive {
                process,
                kind: ReceiptKind::Block,
                id,
                ..
            } if *process == observer => {
                let id = BlockId(*id);
                if accepted.contains(&id) {
                    continue;
                }
                let b = &blocks[&id];
                if structurally_valid(b) && b.txs.iter().any(|t| !woven_txs.contains(&t.id)) {
                    accepted.insert(id);
                }
            }
            TraceEvent::Mine { miner, block, .. } if *miner == observer => {
                accepted.insert(block.id);
            }
            TraceEvent::Deliver { process, block, .. } if *process == observer => {
                let mut reach = dfs_ancestors(&blocks, *block, false);
                reach.insert(*block);
                let mut batch: Vec<BlockId> = reach
                    .iter()
                    .copied()
                    .filter(|id| {
                        accepted.contains(id)
                            && !covered.contains(id)
                            && !emitted_set.contains(id)
                    })
                    .collect();
                batch.sort_by_key(|id| (longest_path_depth(&blocks, *id), *id));
                for id in batch {
                    let b = &blocks[&id];
                    if b.txs.iter().any(|t| !woven_txs.contains(&t.id)) {
                        emitted.push(id);
                        emitted_set.insert(id);
                        woven_txs.extend(b.txs.iter().map(|t| t.id));
                    }
                }
                covered.extend(reach);
            }
            _ => {}
        }
    }
    emitted
}

/// Minimal DOT well-formedness check: one `digraph <name> {` header, then
/// node statements, edge statements or attribute lines, then one closing
/// brace. Quotes must balance and edge endpoints must be quoted ids.
pub fn dot_parses(text: &str) -> bool {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let Some(header) = lines.next() else {
        return false;
    };
    if !(header.starts_with("digraph") && header.ends_with('{')) {
        return false;
    }
    let mut closed = false;
    for line in lines {
        if closed {
            return false; // content after the closing brace
        }
        if line == "}" {
            closed = true;
            continue;
        }
        if !line.ends_with(';') {
            return false;
        }
        let stmt = &line[..line.len() - 1];
        if stmt.matches('"').count() % 2 != 0 {
            return false;
        }
        let ok_edge = stmt.contains("->")
            && stmt.split("->").count() == 2
            && stmt.split("->").all(|part| part.trim().starts_with('"'));
        let ok_node = stmt.starts_with('"');
        let ok_attr = stmt
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic());
        if !(ok_edge || ok_node || ok_attr) {
            return false;
        }
    }
    closed
}
