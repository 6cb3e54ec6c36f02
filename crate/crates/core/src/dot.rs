//! Graphviz DOT export of block DAGs and of per-round observer views.
//!
//! Strong parent edges are solid, weak references are dashed and blue,
//! delivered blocks are filled. Edges point from a block to what it
//! references.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dag::{BlockId, DagStore, ProcessId, Round};
use crate::trace::{ExecutionTrace, ReceiptKind, TraceEvent};

#[derive(Debug, Error)]
pub enum DotError {
    #[error("unknown round {round}: trace has {rounds}")]
    UnknownRound { round: Round, rounds: Round },
    #[error("unknown process {0}")]
    UnknownProcess(ProcessId),
    #[error("malformed trace: {0}")]
    Malformed(String),
}

/// Renders a store as DOT. `delivered` blocks are filled; `labels` may
/// replace the default short-hex node captions.
pub fn dag_to_dot(
    store: &DagStore,
    delivered: &BTreeSet<BlockId>,
    labels: &BTreeMap<BlockId, String>,
) -> String {
    let mut out = String::from("digraph blockdag {\n  rankdir=RL;\n  node [shape=box];\n");
    for block in store.blocks() {
        let id = block.id;
        let caption = labels
            .get(&id)
            .cloned()
            .unwrap_or_else(|| format!("{:.8}", id.to_string()));
        let style = if delivered.contains(&id) {
            ", style=filled, fillcolor=lightsteelblue"
        } else if block.is_genesis() {
            ", style=filled, fillcolor=lightgrey"
        } else {
            ""
        };
        out.push_str(&format!("  \"{id}\" [label=\"{caption}\"{style}];\n"));
    }
    for block in store.blocks() {
        for parent in &block.parents {
            out.push_str(&format!("  \"{}\" -> \"{parent}\";\n", block.id));
        }
        for weak in &block.weak_refs {
            out.push_str(&format!(
                "  \"{}\" -> \"{weak}\" [style=dashed, color=blue];\n",
                block.id
            ));
        }
    }
    out.push_str("}\n");
    out
}

/// Reconstructs one observer's view at the end of `round`: genesis, every
/// block the observer received by then, and its own mined blocks.
pub fn view_at(
    trace: &ExecutionTrace,
    round: Round,
    observer: ProcessId,
) -> Result<(DagStore, BTreeSet<BlockId>), DotError> {
    if round > trace.meta.rounds {
        return Err(DotError::UnknownRound {
            round,
            rounds: trace.meta.rounds,
        });
    }
    if observer.0 >= trace.meta.processes {
        return Err(DotError::UnknownProcess(observer));
    }
    let mined = trace
        .mined_blocks()
        .map_err(|e| DotError::Malformed(e.to_string()))?;
    let mut known: BTreeSet<BlockId> = BTreeSet::new();
    let mut delivered: BTreeSet<BlockId> = BTreeSet::new();
    for ev in &trace.events {
        if ev.round() > round {
            continue;
        }
        match ev {
            TraceEvent::Receive {
                process,
                kind: ReceiptKind::Block,
                id,
                ..
            } if *process == observer => {
                known.insert(BlockId(*id));
            }
            TraceEvent::Mine { miner, block, .. } if *miner == observer => {
                known.insert(block.id);
            }
            TraceEvent::Deliver { process, block, .. }
            | TraceEvent::ClosureDeliver { process, block, .. }
                if *process == observer =>
            {
                delivered.insert(*block);
            }
            _ => {}
        }
    }

    let mut store = DagStore::with_genesis();
    // Insert in creation order; everything a known block references is
    // known too, by the diffusion guarantees.
    for ev in &trace.events {
        if let TraceEvent::Mine { block, .. } = ev {
            if known.contains(&block.id) {
                let b = mined
                    .get(&block.id)
                    .ok_or_else(|| DotError::Malformed(format!("unmined {}", block.id)))?;
                store
                    .insert(b.clone())
                    .map_err(|e| DotError::Malformed(e.to_string()))?;
            }
        }
    }
    Ok((store, delivered))
}

/// DOT text of one observer's view at the end of `round`.
pub fn export_dot(
    trace: &ExecutionTrace,
    round: Round,
    observer: ProcessId,
) -> Result<String, DotError> {
    let (store, delivered) = view_at(trace, round, observer)?;
    Ok(dag_to_dot(&store, &delivered, &BTreeMap::new()))
}
