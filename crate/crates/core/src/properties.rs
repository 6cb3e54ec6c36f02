//! Runtime checkers for the atomic-broadcast properties over finished
//! traces.
//!
//! Finite traces can only witness finite prefixes of "eventually", so the
//! liveness-flavoured checks carry a tail allowance: deliveries and
//! transactions younger than the allowance are exempt from the
//! everyone-delivers-by-the-end requirement. Everything else is exact.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::ClosureMode;
use crate::dag::{BlockId, ProcessId, Round, TxId};
use crate::metrics::MetricsError;
use crate::protocol::valid_block;
use crate::trace::{ExecutionTrace, ReceiptKind, TraceEvent};

/// Rounds at the end of a trace within which pending deliveries and
/// transactions are not yet required to have landed.
pub const TAIL_ALLOWANCE: Round = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    NoDuplication,
    Integrity,
    Agreement,
    TotalOrder,
    Validity,
    ExternalValidity,
}

impl PropertyKind {
    pub const ALL: [PropertyKind; 6] = [
        PropertyKind::NoDuplication,
        PropertyKind::Integrity,
        PropertyKind::Agreement,
        PropertyKind::TotalOrder,
        PropertyKind::Validity,
        PropertyKind::ExternalValidity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PropertyKind::NoDuplication => "no_duplication",
            PropertyKind::Integrity => "integrity",
            PropertyKind::Agreement => "agreement",
            PropertyKind::TotalOrder => "total_order",
            PropertyKind::Validity => "validity",
            PropertyKind::ExternalValidity => "external_validity",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub property: PropertyKind,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyReport {
    pub violations: Vec<Violation>,
    pub tail_allowance: Round,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: PropertyKind) -> usize {
        self.violations.iter().filter(|v| v.property == kind).count()
    }

    /// One `PASS`/`FAIL` line per property.
    pub fn lines(&self) -> Vec<String> {
        PropertyKind::ALL
            .iter()
            .map(|kind| {
                let n = self.count(*kind);
                if n == 0 {
                    format!("PASS {}", kind.name())
                } else {
                    format!("FAIL {} ({n} violations)", kind.name())
                }
            })
            .collect()
    }
}

/// Evaluates the full property suite on one trace.
pub fn check_properties(trace: &ExecutionTrace) -> Result<PropertyReport, MetricsError> {
    let mut violations = Vec::new();
    let mined = trace.mined_blocks()?;
    let observers = trace.honest_observers();
    let rounds = trace.meta.rounds;
    let sequences: BTreeMap<ProcessId, Vec<(Round, BlockId)>> = observers
        .iter()
        .map(|p| (*p, trace.delivered_sequence(*p)))
        .collect();

    // No duplication: no observer delivers a block twice.
    for (p, seq) in &sequences {
        let mut seen = BTreeSet::new();
        for (_, id) in seq {
            if !seen.insert(*id) {
                violations.push(Violation {
                    property: PropertyKind::NoDuplication,
                    detail: format!("{p} delivered {id} more than once"),
                });
            }
        }
    }

    // Integrity: every delivered block was mined (exactly once; duplicate
    // mine events already fail trace parsing) and mined before delivery.
    for (p, seq) in &sequences {
        for (round, id) in seq {
            match mined.get(id) {
                None => violations.push(Violation {
                    property: PropertyKind::Integrity,
                    detail: format!("{p} delivered unmined block {id}"),
                }),
                Some(block) => {
                    if block.mined_round >= *round {
                        violations.push(Violation {
                            property: PropertyKind::Integrity,
                            detail: format!(
                                "{p} delivered {id} at round {round}, mined at {}",
                                block.mined_round
                            ),
                        });
                    }
                }
            }
        }
    }

    // Agreement, receipt half: honest broadcasts arrive everywhere the next
    // round; selective injections are echoed within two rounds.
    let mut first_receipt: BTreeMap<(ProcessId, u64), Round> = BTreeMap::new();
    for ev in &trace.events {
        if let TraceEvent::Receive {
            round,
            process,
            kind: ReceiptKind::Block,
            id,
        } = ev
        {
            first_receipt.entry((*process, *id)).or_insert(*round);
        }
    }
    let mut receipt_deadline: BTreeMap<BlockId, Round> = BTreeMap::new();
    for ev in &trace.events {
        match ev {
            TraceEvent::Mine {
                round,
                miner,
                block,
            } if trace.meta.is_honest(*miner) => {
                receipt_deadline.insert(block.id, round + 1);
            }
            TraceEvent::Inject {
                round, block, ..
            } => {
                let deadline = receipt_deadline.entry(*block).or_insert(round + 2);
                *deadline = (*deadline).min(round + 2);
            }
            _ => {}
        }
    }
    for (id, deadline) in &receipt_deadline {
        if *deadline > rounds {
            continue; // the trace ends before the bound is due
        }
        for p in &observers {
            let held = first_receipt.get(&(*p, id.0)).copied();
            let mined_here = mined.get(id).is_some_and(|b| b.miner == Some(*p));
            if mined_here {
                continue; // own block, never received over the wire
            }
            match held {
                Some(r) if r <= *deadline => {}
                Some(r) => violations.push(Violation {
                    property: PropertyKind::Agreement,
                    detail: format!("{p} received {id} at {r}, bound was {deadline}"),
                }),
                None => violations.push(Violation {
                    property: PropertyKind::Agreement,
                    detail: format!("{p} never received {id}, bound was {deadline}"),
                }),
            }
        }
    }

    // Agreement, delivery half: anything one observer delivered outside the
    // tail is delivered by all observers by trace end.
    let delivered_sets: BTreeMap<ProcessId, BTreeSet<BlockId>> = sequences
        .iter()
        .map(|(p, seq)| (*p, seq.iter().map(|(_, id)| *id).collect()))
        .collect();
    for (p, seq) in &sequences {
        for (round, id) in seq {
            if round + TAIL_ALLOWANCE > rounds {
                continue;
            }
            for q in &observers {
                if !delivered_sets[q].contains(id) {
                    violations.push(Violation {
                        property: PropertyKind::Agreement,
                        detail: format!("{p} delivered {id} at {round} but {q} never did"),
                    });
                }
            }
        }
    }

    // Total order: delivered sequences are pairwise prefix-consistent.
    // Sequences only ever grow, so prefix consistency of the final
    // sequences implies it at every round.
    let plain: BTreeMap<ProcessId, Vec<BlockId>> = sequences
        .iter()
        .map(|(p, seq)| (*p, seq.iter().map(|(_, id)| *id).collect()))
        .collect();
    for (i, p) in observers.iter().enumerate() {
        for q in observers.iter().skip(i + 1) {
            let (a, b) = (&plain[p], &plain[q]);
            let n = a.len().min(b.len());
            if a[..n] != b[..n] {
                let at = (0..n).find(|i| a[*i] != b[*i]).unwrap_or(0);
                violations.push(Violation {
                    property: PropertyKind::TotalOrder,
                    detail: format!(
                        "{p} and {q} diverge at position {at}: {} vs {}",
                        a[at], b[at]
                    ),
                });
            }
        }
    }

    // Validity: every honest transaction broadcast before the tail is in
    // some delivered block at every observer.
    let delivered_txs: BTreeMap<ProcessId, BTreeSet<TxId>> = sequences
        .iter()
        .map(|(p, seq)| {
            let txs = seq
                .iter()
                .filter_map(|(_, id)| mined.get(id))
                .flat_map(|b| b.txs.iter().map(|t| t.id))
                .collect();
            (*p, txs)
        })
        .collect();
    for ev in &trace.events {
        if let TraceEvent::TxBroadcast { round, origin, tx } = ev {
            if !trace.meta.is_honest(*origin) || round + TAIL_ALLOWANCE >= rounds {
                continue;
            }
            for p in &observers {
                if !delivered_txs[p].contains(&tx.id) {
                    violations.push(Violation {
                        property: PropertyKind::Validity,
                        detail: format!(
                            "tx {} broadcast at {round} never delivered at {p}",
                            tx.id
                        ),
                    });
                }
            }
        }
    }

    // External validity: every delivered block is valid at its delivery
    // point. Under the closure that includes holding at least one
    // transaction not previously closure-delivered by this observer.
    let closure_on = trace.meta.closure_mode != ClosureMode::Off;
    for (p, seq) in &sequences {
        let mut spent: BTreeSet<TxId> = BTreeSet::new();
        for (_, id) in seq {
            let Some(block) = mined.get(id) else { continue };
            if !valid_block(block, trace.meta.block_capacity) {
                violations.push(Violation {
                    property: PropertyKind::ExternalValidity,
                    detail: format!("{p} delivered structurally invalid block {id}"),
                });
            }
            if closure_on {
                if !block.txs.iter().any(|t| !spent.contains(&t.id)) {
                    violations.push(Violation {
                        property: PropertyKind::ExternalValidity,
                        detail: format!("{p} delivered {id} with fully spent payload"),
                    });
                }
                spent.extend(block.txs.iter().map(|t| t.id));
            }
        }
    }

    Ok(PropertyReport {
        violations,
        tail_allowance: TAIL_ALLOWANCE,
    })
}
