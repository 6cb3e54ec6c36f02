//! A hand-scripted golden execution: a double fork and a late fork on a
//! Nakamoto chain, exercising weak-reference augmentation and woven
//! delivery end to end.
//!
//! The schedule (round: blocks, `<-` is the strong parent):
//!
//! ```text
//! r1: b1 <- genesis          r6: b7 <- b4, b8 <- b4   (stale race)
//! r2: b2 <- b1               r7: b9 <- b6, b10 <- b6  (forked round)
//! r3: b3 <- b2               r8: b11 <- b10
//! r4: b5 <- b3               r9: b12 <- b11
//! r5: b4 <- b3, b6 <- b5     r10: settle
//! ```
//!
//! The main chain is `b1 b2 b3 b5 b6 b10 b11`; blocks `b4 b7 b8 b9` are
//! abandoned by the base protocol. At mine time `b9` and `b10` weakly
//! reference the abandoned leaves `{b7, b8}` (which covers `b4`), and `b11`
//! weakly references `b9`, so with confirmation depth 1 the closure delivers
//! all eleven blocks, weaving `b9` in immediately before `b11`.
//!
//! Mining is scripted, not simulated: `b4`, `b7` and `b8` are mined on stale
//! parents to reproduce the propagation race that a strictly synchronous
//! engine cannot exhibit on its own, and depth ties are steered towards the
//! main chain by grinding transaction ids. Everything downstream of the
//! schedule (weak references, deliveries, woven order) is computed by the
//! regular protocol and closure code.

use std::collections::BTreeMap;

use crate::closure::ClosureState;
use crate::config::{AdversarySpec, BaseProtocol, ClosureMode, ExperimentConfig, SeedSpec};
use crate::dag::{Block, BlockId, DagStore, ProcessId, Round, Transaction, TxId};
use crate::protocol::{DeliveryRule, ProcessState};
use crate::trace::{ExecutionTrace, ReceiptKind, TraceEvent, TraceMeta};

/// The golden execution plus a label map for its blocks.
#[derive(Debug, Clone)]
pub struct ScriptedExecution {
    pub closure_trace: ExecutionTrace,
    /// The embedded base execution (weak references stripped).
    pub base_trace: ExecutionTrace,
    /// `"genesis"`, `"b1"` .. `"b12"` to block ids as they appear on the wire.
    pub labels: BTreeMap<String, BlockId>,
}

impl ScriptedExecution {
    pub fn id(&self, label: &str) -> BlockId {
        self.labels[label]
    }

    pub fn block(&self, label: &str) -> Block {
        self.closure_trace.mined_blocks().expect("fixture parses")[&self.id(label)].clone()
    }

    /// View and closure state as they stood at the start of `round`:
    /// every block mined earlier is present and accepted.
    pub fn state_before(&self, round: Round) -> (DagStore, ClosureState) {
        let mut view = DagStore::with_genesis();
        let mut closure = ClosureState::new(ClosureMode::Closure);
        for ev in &self.closure_trace.events {
            if let TraceEvent::Mine { round: r, block, .. } = ev {
                if *r < round {
                    closure.on_foreign_mined(block, self.closure_trace.meta.block_capacity);
                    view.insert(block.clone()).expect("script order resolves");
                }
            }
        }
        (view, closure)
    }
}

fn fixture_config() -> ExperimentConfig {
    ExperimentConfig {
        processes: 10,
        rounds: 10,
        mining_probability: 0.5,
        block_capacity: 2,
        confirmation_depth: 1,
        tx_rate: 0,
        base_protocol: BaseProtocol::Nakamoto,
        closure_mode: ClosureMode::Closure,
        adversary: AdversarySpec::Honest,
        seeds: SeedSpec::List(vec![0]),
        output_dir: None,
    }
}

/// One scripted mine: who, what, on which parent, seeing which blocks.
struct Mint {
    round: Round,
    miner: u32,
    label: &'static str,
    parent: &'static str,
    /// Labels visible to the miner; `None` means everything mined earlier.
    /// Race blocks see a stale cut.
    visible: Option<&'static [&'static str]>,
    /// Labels whose ids the fresh block's id must stay above, to steer
    /// depth ties towards the main chain deterministically.
    id_above: &'static [&'static str],
}

const SCRIPT: &[Mint] = &[
    Mint { round: 1, miner: 0, label: "b1", parent: "genesis", visible: None, id_above: &[] },
    Mint { round: 2, miner: 1, label: "b2", parent: "b1", visible: None, id_above: &[] },
    Mint { round: 3, miner: 2, label: "b3", parent: "b2", visible: None, id_above: &[] },
    Mint { round: 4, miner: 4, label: "b5", parent: "b3", visible: None, id_above: &[] },
    Mint {
        round: 5,
        miner: 3,
        label: "b4",
        parent: "b3",
        visible: Some(&["b1", "b2", "b3"]),
        id_above: &[],
    },
    Mint { round: 5, miner: 5, label: "b6", parent: "b5", visible: None, id_above: &[] },
    Mint {
        round: 6,
        miner: 6,
        label: "b7",
        parent: "b4",
        visible: Some(&["b1", "b2", "b3", "b4"]),
        id_above: &["b6"],
    },
    Mint {
        round: 6,
        miner: 7,
        label: "b8",
        parent: "b4",
        visible: Some(&["b1", "b2", "b3", "b4"]),
        id_above: &["b6"],
    },
    Mint { round: 7, miner: 8, label: "b9", parent: "b6", visible: None, id_above: &[] },
    Mint { round: 7, miner: 9, label: "b10", parent: "b6", visible: None, id_above: &[] },
    Mint { round: 8, miner: 0, label: "b11", parent: "b10", visible: None, id_above: &["b9_inv"] },
    Mint { round: 9, miner: 1, label: "b12", parent: "b11", visible: None, id_above: &[] },
];

/// Builds the golden execution. Deterministic: the grind loops always find
/// the same transaction ids.
pub fn double_fork_fixture() -> ScriptedExecution {
    let config = fixture_config();
    let meta = TraceMeta::from_config(&config, 0, Default::default());
    let rule = DeliveryRule::new(config.base_protocol, config.confirmation_depth);
    let n = config.processes;

    let mut labels: BTreeMap<String, BlockId> = BTreeMap::new();
    let mut blocks: BTreeMap<&'static str, Block> = BTreeMap::new();
    let genesis = Block::genesis();
    labels.insert("genesis".into(), genesis.id);

    // Mint all blocks in schedule order, grinding tx ids where a depth tie
    // must break towards the main chain. "b9_inv" inverts the comparison:
    // the new block's id must be *below* b9's.
    let mut minted_in_order: Vec<(Round, Block)> = Vec::new();
    for (idx, mint) in SCRIPT.iter().enumerate() {
        let parent = if mint.parent == "genesis" {
            genesis.id
        } else {
            blocks[mint.parent].id
        };
        // The miner's view: scripted stale cut or everything mined earlier.
        let mut view = DagStore::with_genesis();
        let mut closure = ClosureState::new(ClosureMode::Closure);
        match mint.visible {
            Some(cut) => {
                for label in cut {
                    let b = blocks[label].clone();
                    closure.on_foreign_mined(&b, config.block_capacity);
                    view.insert(b).expect("cut respects parent order");
                }
            }
            None => {
                for (r, b) in &minted_in_order {
                    if *r < mint.round {
                        closure.on_foreign_mined(b, config.block_capacity);
                        view.insert(b.clone()).expect("schedule respects parent order");
                    }
                }
            }
        }
        let mut grind = (idx as u64 + 1) * 1000;
        let augmented = loop {
            let raw = Block::new(
                vec![parent],
                Vec::new(),
                vec![Transaction::new(TxId(grind), 0)],
                Some(ProcessId(mint.miner)),
                mint.round,
            );
            let candidate = closure
                .clone()
                .on_base_mined(&view, raw, ProcessId(mint.miner))
                .expect("ancestry in view")
                .expect("own mine");
            let ok = mint.id_above.iter().all(|constraint| {
                if let Some(target) = constraint.strip_suffix("_inv") {
                    candidate.id < blocks[target].id
                } else {
                    candidate.id > blocks[constraint].id
                }
            });
            if ok {
                break candidate;
            }
            grind += 1;
        };
        labels.insert(mint.label.into(), augmented.id);
        blocks.insert(mint.label, augmented.clone());
        minted_in_order.push((mint.round, augmented));
    }

    // Emit the trace: transactions at round 0, then per round receives,
    // deliveries (identical at every process), mines and broadcasts.
    let mut events: Vec<TraceEvent> = Vec::new();
    for (idx, mint) in SCRIPT.iter().enumerate() {
        events.push(TraceEvent::TxBroadcast {
            round: 0,
            origin: ProcessId(idx as u32 % n),
            tx: blocks[mint.label].txs[0].clone(),
        });
    }

    let mut canon = ProcessState::new(ProcessId(0), ClosureMode::Off);
    let mut weaver = ClosureState::new(ClosureMode::Closure);
    let mut deliver_seq = 0u64;
    let mut closure_seq = 0u64;
    for round in 1..=config.rounds {
        // Receives: everything mined last round, plus the round-0
        // transactions arriving at round 1.
        for p in (0..n).map(ProcessId) {
            if round == 1 {
                for mint in SCRIPT {
                    events.push(TraceEvent::Receive {
                        round,
                        process: p,
                        kind: ReceiptKind::Tx,
                        id: blocks[mint.label].txs[0].id.0,
                    });
                }
            }
            for (r, b) in &minted_in_order {
                if *r + 1 == round {
                    events.push(TraceEvent::Receive {
                        round,
                        process: p,
                        kind: ReceiptKind::Block,
                        id: b.id.0,
                    });
                }
            }
        }

        // Shared-view delivery, replicated at every process.
        let delivered = canon.deliver_step(&rule);
        for block in &delivered {
            for p in (0..n).map(ProcessId) {
                events.push(TraceEvent::Deliver {
                    round,
                    process: p,
                    block: block.id,
                    seq: deliver_seq,
                });
            }
            deliver_seq += 1;
            let woven = weaver
                .on_base_deliver(&canon.view, block, config.block_capacity)
                .expect("delivered block in view");
            for w in woven {
                for p in (0..n).map(ProcessId) {
                    events.push(TraceEvent::ClosureDeliver {
                        round,
                        process: p,
                        block: w.id,
                        seq: closure_seq,
                    });
                }
                closure_seq += 1;
            }
        }

        // Scripted mines of this round.
        let mut miners: BTreeMap<ProcessId, Vec<BlockId>> = BTreeMap::new();
        for (r, b) in &minted_in_order {
            if *r == round {
                let miner = b.miner.expect("scripted block has a miner");
                events.push(TraceEvent::Mine {
                    round,
                    miner,
                    block: b.clone(),
                });
                miners.entry(miner).or_default().push(b.id);
                canon.integrate_block(b.clone(), config.block_capacity);
                weaver.on_foreign_mined(b, config.block_capacity);
            }
        }
        for p in (0..n).map(ProcessId) {
            events.push(TraceEvent::Broadcast {
                round,
                process: p,
                blocks: miners.get(&p).cloned().unwrap_or_default(),
            });
        }
    }

    let closure_trace = ExecutionTrace { meta, events };
    let base_trace = crate::adversary::strip_to_equivalent(&closure_trace)
        .expect("fixture is a closure trace");
    ScriptedExecution {
        closure_trace,
        base_trace,
        labels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::EdgeSet;
    use crate::metrics::{abandoned_blocks, delivered_count, throughput_of};
    use std::collections::BTreeSet;

    fn seq_labels(fx: &ScriptedExecution, seq: &[(Round, BlockId)]) -> Vec<String> {
        let inverse: BTreeMap<BlockId, String> =
            fx.labels.iter().map(|(l, id)| (*id, l.clone())).collect();
        seq.iter().map(|(_, id)| inverse[id].clone()).collect()
    }

    #[test]
    fn fixture_is_deterministic() {
        let a = double_fork_fixture();
        let b = double_fork_fixture();
        assert_eq!(a.closure_trace.to_ldjson(), b.closure_trace.to_ldjson());
        assert_eq!(a.base_trace.to_ldjson(), b.base_trace.to_ldjson());
    }

    #[test]
    fn weak_references_match_the_construction() {
        let fx = double_fork_fixture();
        let abandoned_leaves: Vec<BlockId> = {
            let mut pair = vec![fx.id("b7"), fx.id("b8")];
            pair.sort();
            pair
        };
        assert_eq!(fx.block("b9").weak_refs, abandoned_leaves);
        assert_eq!(fx.block("b10").weak_refs, abandoned_leaves);
        assert_eq!(fx.block("b11").weak_refs, vec![fx.id("b9")]);
        for plain in ["b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b12"] {
            assert!(fx.block(plain).weak_refs.is_empty(), "{plain}");
        }
    }

    #[test]
    fn abandoned_sets_at_mine_time() {
        let fx = double_fork_fixture();
        // At b10's mine the abandoned set is the whole stale branch.
        let (view, closure) = fx.state_before(7);
        let raw_b10 = fx.block("b10").with_weak_refs(vec![]);
        let abandoned = closure.abandoned_set(&view, &raw_b10).unwrap();
        let expected: BTreeSet<BlockId> = ["b4", "b7", "b8"].iter().map(|l| fx.id(l)).collect();
        assert_eq!(abandoned, expected);
        assert_eq!(
            view.leaves(&abandoned).unwrap(),
            ["b7", "b8"].iter().map(|l| fx.id(l)).collect()
        );
        // At b11's mine only b9 is left: b10 already references the rest.
        let (view, closure) = fx.state_before(8);
        let raw_b11 = fx.block("b11").with_weak_refs(vec![]);
        let abandoned = closure.abandoned_set(&view, &raw_b11).unwrap();
        assert_eq!(abandoned, [fx.id("b9")].into_iter().collect());
    }

    #[test]
    fn base_delivery_is_the_main_chain() {
        let fx = double_fork_fixture();
        let seq = fx.base_trace.delivered_sequence(ProcessId(0));
        assert_eq!(
            seq_labels(&fx, &seq),
            vec!["b1", "b2", "b3", "b5", "b6", "b10", "b11"]
        );
        // Every process agrees.
        for p in fx.base_trace.honest_observers() {
            assert_eq!(fx.base_trace.delivered_sequence(p), seq);
        }
    }

    #[test]
    fn closure_delivery_weaves_all_eleven_blocks() {
        let fx = double_fork_fixture();
        let seq = fx.closure_trace.delivered_sequence(ProcessId(0));
        let labels = seq_labels(&fx, &seq);
        let (b7, b8) = if fx.id("b7") < fx.id("b8") {
            ("b7", "b8")
        } else {
            ("b8", "b7")
        };
        assert_eq!(
            labels,
            vec!["b1", "b2", "b3", "b5", "b6", "b4", b7, b8, "b10", "b9", "b11"]
        );
        // b9 lands immediately before b11 and after b10.
        let pos = |l: &str| labels.iter().position(|x| x == l).unwrap();
        assert_eq!(pos("b9") + 1, pos("b11"));
        assert_eq!(pos("b10") + 1, pos("b9"));
    }

    #[test]
    fn base_abandons_exactly_the_stale_branch_and_b9() {
        let fx = double_fork_fixture();
        let abandoned = abandoned_blocks(&fx.base_trace).unwrap();
        let expected: BTreeSet<BlockId> = ["b4", "b7", "b8", "b9"]
            .iter()
            .map(|l| fx.id(l))
            .collect();
        assert_eq!(abandoned, expected);
        // The closure leaves nothing behind.
        assert!(abandoned_blocks(&fx.closure_trace).unwrap().is_empty());
    }

    #[test]
    fn throughput_ratio_is_eleven_over_seven() {
        let fx = double_fork_fixture();
        let observer = ProcessId(0);
        assert_eq!(delivered_count(&fx.base_trace, observer), 7);
        assert_eq!(delivered_count(&fx.closure_trace, observer), 11);
        let ratio = throughput_of(&fx.closure_trace, observer).unwrap()
            / throughput_of(&fx.base_trace, observer).unwrap();
        assert!((ratio - 11.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn ancestries_follow_the_figure() {
        let fx = double_fork_fixture();
        let graph = crate::metrics::block_graph(&fx.closure_trace).unwrap();
        let strong = graph.ancestors(fx.id("b11"), EdgeSet::Strong).unwrap();
        let expected: BTreeSet<BlockId> = ["genesis", "b1", "b2", "b3", "b5", "b6", "b10"]
            .iter()
            .map(|l| fx.id(l))
            .collect();
        assert_eq!(strong, expected);
        let full = graph.ancestors(fx.id("b11"), EdgeSet::All).unwrap();
        assert!(full.contains(&fx.id("b9")));
        assert!(full.contains(&fx.id("b4")));
        // Frozen longest-path depths, confirmed by the independent oracle in
        // the integration suite.
        assert_eq!(graph.depth(fx.id("b9")).unwrap(), 6);
        assert_eq!(graph.depth(fx.id("b11")).unwrap(), 7);
        assert_eq!(graph.strong_depth(fx.id("b11")).unwrap(), 7);
    }

    #[test]
    fn replaying_the_script_fills_the_store() {
        let fx = double_fork_fixture();
        let graph = crate::metrics::block_graph(&fx.closure_trace).unwrap();
        assert_eq!(graph.len(), 13); // genesis + b1..b12
    }
}
