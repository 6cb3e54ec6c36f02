//! Execution traces: one structured record per event, serialized as
//! line-delimited JSON.
//!
//! A trace is the complete history of one execution (transaction
//! broadcasts, block mining, message receipt, injections, deliveries) and
//! is the sole input to the metrics and property checkers. The first
//! line is the metadata record (configuration echo, seed, adversary,
//! corrupted set); every following line is an event.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AdversarySpec, BaseProtocol, ClosureMode, ExperimentConfig};
use crate::dag::{digest64, Block, BlockId, ProcessId, Round, Transaction, TxId};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Configuration echo at the head of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub schema: u32,
    pub seed: u64,
    pub processes: u32,
    pub rounds: Round,
    pub mining_probability: f64,
    pub block_capacity: usize,
    pub confirmation_depth: u64,
    pub tx_rate: u32,
    pub base_protocol: BaseProtocol,
    pub closure_mode: ClosureMode,
    pub adversary: AdversarySpec,
    pub corrupted: BTreeSet<ProcessId>,
}

impl TraceMeta {
    pub fn from_config(config: &ExperimentConfig, seed: u64, corrupted: BTreeSet<ProcessId>) -> Self {
        TraceMeta {
            schema: 1,
            seed,
            processes: config.processes,
            rounds: config.rounds,
            mining_probability: config.mining_probability,
            block_capacity: config.block_capacity,
            confirmation_depth: config.confirmation_depth,
            tx_rate: config.tx_rate,
            base_protocol: config.base_protocol,
            closure_mode: config.closure_mode,
            adversary: config.adversary.clone(),
            corrupted,
        }
    }

    pub fn is_honest(&self, p: ProcessId) -> bool {
        !self.corrupted.contains(&p)
    }
}

/// What a process received, by payload identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiptKind {
    Block,
    Tx,
}

/// One event record. `ev` tags the variant on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum TraceEvent {
    /// A transaction enters the system, broadcast by an honest process.
    TxBroadcast {
        round: Round,
        origin: ProcessId,
        tx: Transaction,
    },
    /// A block is created. For corrupted miners this records creation, not
    /// release; release happens via `Broadcast` or `Inject`.
    Mine {
        round: Round,
        miner: ProcessId,
        block: Block,
    },
    /// A process hands messages to the diffusion functionality and completes
    /// its round.
    Broadcast {
        round: Round,
        process: ProcessId,
        blocks: Vec<BlockId>,
    },
    /// The adversary writes a message directly into one receive string.
    Inject {
        round: Round,
        target: ProcessId,
        block: BlockId,
    },
    /// First receipt of a payload by a process.
    Receive {
        round: Round,
        process: ProcessId,
        kind: ReceiptKind,
        id: u64,
    },
    /// Base-protocol delivery.
    Deliver {
        round: Round,
        process: ProcessId,
        block: BlockId,
        seq: u64,
    },
    /// Closure delivery (only present when the closure is enabled).
    ClosureDeliver {
        round: Round,
        process: ProcessId,
        block: BlockId,
        seq: u64,
    },
}

impl TraceEvent {
    pub fn round(&self) -> Round {
        match *self {
            TraceEvent::TxBroadcast { round, .. }
            | TraceEvent::Mine { round, .. }
            | TraceEvent::Broadcast { round, .. }
            | TraceEvent::Inject { round, .. }
            | TraceEvent::Receive { round, .. }
            | TraceEvent::Deliver { round, .. }
            | TraceEvent::ClosureDeliver { round, .. } => round,
        }
    }
}

/// A full execution history.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub meta: TraceMeta,
    pub events: Vec<TraceEvent>,
}

impl ExecutionTrace {
    /// Serializes as line-delimited JSON: meta line, then one event per line.
    pub fn to_ldjson(&self) -> String {
        let mut out = String::new();
        out.push_str(&serde_json::to_string(&self.meta).expect("meta serializes"));
        out.push('\n');
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_ldjson(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head = lines
            .next()
            .ok_or_else(|| TraceError::Malformed("empty trace".into()))?;
        let meta: TraceMeta = serde_json::from_str(head)?;
        let mut events = Vec::new();
        for line in lines {
            events.push(serde_json::from_str(line)?);
        }
        Ok(ExecutionTrace { meta, events })
    }

    /// Stable digest of the serialized trace; equal digests mean
    /// byte-identical files.
    pub fn digest(&self) -> u64 {
        digest64(self.to_ldjson().as_bytes())
    }

    /// All mined blocks keyed by id. Errors on duplicate mine events for one
    /// id, which would make the history ambiguous.
    pub fn mined_blocks(&self) -> Result<BTreeMap<BlockId, Block>, TraceError> {
        let mut out = BTreeMap::new();
        for ev in &self.events {
            if let TraceEvent::Mine { block, .. } = ev {
                if out.insert(block.id, block.clone()).is_some() {
                    return Err(TraceError::Malformed(format!(
                        "block {} mined twice",
                        block.id
                    )));
                }
            }
        }
        Ok(out)
    }

    /// Rounds in which at least two distinct honest processes mined.
    pub fn forked_rounds(&self) -> BTreeSet<Round> {
        let mut honest_miners: BTreeMap<Round, BTreeSet<ProcessId>> = BTreeMap::new();
        for ev in &self.events {
            if let TraceEvent::Mine { round, miner, .. } = ev {
                if self.meta.is_honest(*miner) {
                    honest_miners.entry(*round).or_default().insert(*miner);
                }
            }
        }
        honest_miners
            .into_iter()
            .filter(|(_, miners)| miners.len() >= 2)
            .map(|(r, _)| r)
            .collect()
    }

    /// Delivery sequence of one process at the protocol level the trace was
    /// recorded at: closure deliveries when the closure ran, base deliveries
    /// otherwise.
    pub fn delivered_sequence(&self, observer: ProcessId) -> Vec<(Round, BlockId)> {
        match self.meta.closure_mode {
            ClosureMode::Off => self.base_delivered_sequence(observer),
            _ => self.closure_delivered_sequence(observer),
        }
    }

    pub fn base_delivered_sequence(&self, observer: ProcessId) -> Vec<(Round, BlockId)> {
        self.events
            .iter()
            .filter_map(|ev| match ev {
                TraceEvent::Deliver { round, process, block, .. } if *process == observer => {
                    Some((*round, *block))
                }
                _ => None,
            })
            .collect()
    }

    pub fn closure_delivered_sequence(&self, observer: ProcessId) -> Vec<(Round, BlockId)> {
        self.events
            .iter()
            .filter_map(|ev| match ev {
                TraceEvent::ClosureDeliver { round, process, block, .. }
                    if *process == observer =>
                {
                    Some((*round, *block))
                }
                _ => None,
            })
            .collect()
    }

    /// Transaction broadcast rounds keyed by id.
    pub fn tx_broadcasts(&self) -> BTreeMap<TxId, Round> {
        self.events
            .iter()
            .filter_map(|ev| match ev {
                TraceEvent::TxBroadcast { round, tx, .. } => Some((tx.id, *round)),
                _ => None,
            })
            .collect()
    }

    pub fn honest_observers(&self) -> Vec<ProcessId> {
        (0..self.meta.processes)
            .map(ProcessId)
            .filter(|p| self.meta.is_honest(*p))
            .collect()
    }

    /// Lowest-indexed honest process; the designated observer for reports.
    pub fn designated_observer(&self) -> ProcessId {
        self.honest_observers()
            .first()
            .copied()
            .expect("at least one honest process")
    }
}
