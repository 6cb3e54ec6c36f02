//! Synchronous-round diffusion with a rushing adversary.
//!
//! The functionality keeps one receive string per process and makes it
//! available at the start of every round. Honest broadcasts in round `r`
//! appear in every receive string at round `r + 1`. The adversary may read
//! any receive string and any pending broadcast at any time, and may inject
//! a message selectively so that only the target sees it at `r + 1`; the
//! functionality itself echoes every injection to the remaining honest
//! processes at `r + 2`, which is what bounds selective delivery.
//!
//! Message order inside a receive string is fixed so executions replay
//! bit-identically: adversary injections first (in the order the adversary
//! issued them), then honest broadcasts sorted by `(origin, payload id)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{Block, BlockId, ProcessId, Round, Transaction, TxId};

/// Sender of a message as seen by the functionality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Process(ProcessId),
    Adversary,
}

/// Payload of a network message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    BlockAnnounce(Block),
    TxAnnounce(Transaction),
}

impl Payload {
    /// Identity used for receive-side deduplication and honest ordering.
    pub fn key(&self) -> PayloadKey {
        match self {
            Payload::BlockAnnounce(b) => PayloadKey::Block(b.id),
            Payload::TxAnnounce(tx) => PayloadKey::Tx(tx.id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PayloadKey {
    Block(BlockId),
    Tx(TxId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub origin: Origin,
    pub payload: Payload,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffusionError {
    #[error("{0} already read its receive string this round")]
    AlreadyRead(ProcessId),
    #[error("{0} already completed its round")]
    AlreadyCompleted(ProcessId),
    #[error("round {round} incomplete: {missing} honest processes still active")]
    IncompleteRound { round: Round, missing: usize },
}

/// Per-round mailbox state for all processes.
#[derive(Debug, Clone)]
pub struct RoundMailbox {
    n: u32,
    corrupted: BTreeSet<ProcessId>,
    round: Round,
    /// Receive strings for the current round.
    receive: BTreeMap<ProcessId, Vec<Message>>,
    /// Injections already destined for a future round start, in issue order.
    injected: BTreeMap<Round, BTreeMap<ProcessId, Vec<Message>>>,
    /// Honest broadcasts of the current round, awaiting aggregation.
    pending_broadcasts: Vec<Message>,
    begun: BTreeSet<ProcessId>,
    completed: BTreeSet<ProcessId>,
    /// Payloads each process has already had delivered, for deduplication.
    seen: BTreeMap<ProcessId, BTreeSet<PayloadKey>>,
}

impl RoundMailbox {
    pub fn new(n: u32, corrupted: BTreeSet<ProcessId>, first_round: Round) -> Self {
        RoundMailbox {
            n,
            corrupted,
            round: first_round,
            receive: (0..n).map(|i| (ProcessId(i), Vec::new())).collect(),
            injected: BTreeMap::new(),
            pending_broadcasts: Vec::new(),
            begun: BTreeSet::new(),
            completed: BTreeSet::new(),
            seen: (0..n).map(|i| (ProcessId(i), BTreeSet::new())).collect(),
        }
    }

    pub fn round(&self) -> Round {
        self.round
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (0..self.n).map(ProcessId)
    }

    pub fn honest_processes(&self) -> impl Iterator<Item = ProcessId> + '_ {
        (0..self.n)
            .map(ProcessId)
            .filter(move |p| !self.corrupted.contains(p))
    }

    pub fn is_corrupted(&self, p: ProcessId) -> bool {
        self.corrupted.contains(&p)
    }

    /// Drains and returns `RECEIVE_p` for the current round.
    pub fn begin_round(&mut self, p: ProcessId) -> Result<Vec<Message>, DiffusionError> {
        if !self.begun.insert(p) {
            return Err(DiffusionError::AlreadyRead(p));
        }
        Ok(std::mem::take(self.receive.entry(p).or_default()))
    }

    /// Adversarial read access to a receive string, without draining it.
    pub fn peek(&self, p: ProcessId) -> &[Message] {
        self.receive.get(&p).map_or(&[], Vec::as_slice)
    }

    /// Adversarial read access to what has been broadcast so far this round.
    pub fn peek_pending_broadcasts(&self) -> &[Message] {
        &self.pending_broadcasts
    }

    /// Queues `msgs` for delivery to everyone at the next round and marks `p`
    /// as having completed its round.
    pub fn broadcast(&mut self, p: ProcessId, msgs: Vec<Message>) -> Result<(), DiffusionError> {
        if !self.completed.insert(p) {
            return Err(DiffusionError::AlreadyCompleted(p));
        }
        self.pending_broadcasts.extend(msgs);
        Ok(())
    }

    /// Inserts `msg` into the target's receive string for the next round and
    /// schedules the echo that reaches every other honest process one round
    /// later.
    pub fn adversary_inject(&mut self, target: ProcessId, msg: Message) {
        self.injected
            .entry(self.round + 1)
            .or_default()
            .entry(target)
            .or_default()
            .push(msg.clone());
        let echo_round = self.round + 2;
        for p in (0..self.n).map(ProcessId) {
            if p != target && !self.corrupted.contains(&p) {
                self.injected
                    .entry(echo_round)
                    .or_default()
                    .entry(p)
                    .or_default()
                    .push(msg.clone());
            }
        }
    }

    /// Aggregates the round: next-round receive strings are the scheduled
    /// injections (issue order) followed by this round's honest broadcasts
    /// sorted by `(origin, payload id)`, deduplicated per receiver.
    pub fn end_round(&mut self) -> Result<(), DiffusionError> {
        let missing = self
            .honest_processes()
            .filter(|p| !self.completed.contains(p))
            .count();
        if missing > 0 {
            return Err(DiffusionError::IncompleteRound {
                round: self.round,
                missing,
            });
        }

        let mut broadcasts = std::mem::take(&mut self.pending_broadcasts);
        broadcasts.sort_by_key(|m| (m.origin, m.payload.key()));

        let next_round = self.round + 1;
        let mut injected = self.injected.remove(&next_round).unwrap_or_default();
        for p in (0..self.n).map(ProcessId) {
            let seen = self.seen.entry(p).or_default();
            let slot = self.receive.entry(p).or_default();
            debug_assert!(slot.is_empty() || !self.begun.contains(&p));
            for msg in injected
                .remove(&p)
                .unwrap_or_default()
                .into_iter()
                .chain(broadcasts.iter().cloned())
            {
                if seen.insert(msg.payload.key()) {
                    slot.push(msg);
                }
            }
        }
        self.round = next_round;
        self.begun.clear();
        self.completed.clear();
        Ok(())
    }
}
