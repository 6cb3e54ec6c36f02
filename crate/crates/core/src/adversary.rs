//! Adversary programs and the equivalent-execution mapping.
//!
//! An adversary corrupts a fixed set of processes at round 0 and is invoked
//! once per round, before the honest processes take their turns. It sees the
//! global block graph (including blocks it has withheld), learns which of
//! its corrupted processes won this round's mining lottery, and answers with
//! actions: blocks it creates and selective injections into individual
//! receive strings. The diffusion functionality echoes every injection to
//! the remaining honest processes one round later, so nothing stays
//! selective for more than two rounds.
//!
//! The same adversary programs drive runs with and without the closure; an
//! adversary for the base protocol is an adversary for the closure as-is.
//! [`strip_to_equivalent`] maps a closure trace to the base trace embedded
//! in it by emptying weak references and dropping closure deliveries.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::config::AdversarySpec;
use crate::dag::{Block, BlockId, DagStore, ProcessId, Round};
use crate::protocol::{stamp_tx, tip_selection_longest, DeliveryRule};
use crate::trace::{ExecutionTrace, TraceEvent};

/// What the adversary learns at the start of its turn.
pub struct AdversaryView<'a> {
    pub round: Round,
    pub n: u32,
    /// Corrupted processes that won the mining lottery this round.
    pub corrupted_wins: &'a [ProcessId],
    /// Every block created so far, released or not.
    pub global: &'a DagStore,
    pub rule: &'a DeliveryRule,
}

impl AdversaryView<'_> {
    pub fn honest_processes(
        &self,
        corrupted: &BTreeSet<ProcessId>,
    ) -> impl Iterator<Item = ProcessId> + '_ {
        let corrupted = corrupted.clone();
        (0..self.n)
            .map(ProcessId)
            .filter(move |p| !corrupted.contains(p))
    }
}

/// An action the adversary hands back to the round engine.
#[derive(Debug, Clone)]
pub enum AdversaryAction {
    /// Record creation of a block by a corrupted miner. Creation alone
    /// releases nothing.
    Mine(Block),
    /// Write a block into one process's receive string for the next round.
    Inject { target: ProcessId, block: Block },
}

/// A per-execution adversary program. Implementations must be deterministic
/// in `(seed, view)`; the engine derives any randomness they need from a
/// dedicated stream so honest and adversarial draws never interleave.
pub trait Adversary: std::fmt::Debug + Send {
    fn name(&self) -> &'static str;
    /// Corruption set, fixed before round 1 and immutable afterwards.
    fn corrupted(&self, n: u32) -> BTreeSet<ProcessId>;
    fn on_round(&mut self, view: &AdversaryView<'_>) -> Vec<AdversaryAction>;
}

/// Builds the adversary program named by `spec`.
pub fn build_adversary(spec: &AdversarySpec) -> Box<dyn Adversary> {
    match *spec {
        AdversarySpec::Honest => Box::new(HonestAdversary),
        AdversarySpec::ForkAmplifier { corrupted } => Box::new(ForkAmplifier { f: corrupted }),
        AdversarySpec::SelectiveRelease {
            corrupted,
            withhold_rounds,
        } => Box::new(SelectiveRelease {
            f: corrupted,
            withhold_rounds,
            withheld: Vec::new(),
        }),
    }
}

/// Follows the protocol: corrupts nobody, injects nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct HonestAdversary;

impl Adversary for HonestAdversary {
    fn name(&self) -> &'static str {
        "honest"
    }

    fn corrupted(&self, _n: u32) -> BTreeSet<ProcessId> {
        BTreeSet::new()
    }

    fn on_round(&mut self, _view: &AdversaryView<'_>) -> Vec<AdversaryAction> {
        Vec::new()
    }
}

/// Corrupted miners extend the second-best tip (or fork the best tip when
/// the chain has a single leaf) and release each block selectively to half
/// the honest processes, splitting honest views for a round.
#[derive(Debug, Clone, Copy)]
pub struct ForkAmplifier {
    f: u32,
}

impl ForkAmplifier {
    /// Deepest and second-deepest strong leaves under the longest-chain
    /// order. Falls back to forking below the best tip when no second leaf
    /// exists.
    fn fork_parent(global: &DagStore) -> BlockId {
        let best = tip_selection_longest(global);
        let second = global
            .strong_leaves()
            .filter(|id| *id != best)
            .max_by_key(|id| {
                (
                    global.strong_depth(*id).expect("leaf stored"),
                    std::cmp::Reverse(*id),
                )
            });
        match second {
            Some(leaf) => leaf,
            None => global
                .get(best)
                .expect("tip stored")
                .parents
                .first()
                .copied()
                .unwrap_or(best),
        }
    }
}

impl Adversary for ForkAmplifier {
    fn name(&self) -> &'static str {
        "fork_amplifier"
    }

    fn corrupted(&self, n: u32) -> BTreeSet<ProcessId> {
        (0..self.f.min(n)).map(ProcessId).collect()
    }

    fn on_round(&mut self, view: &AdversaryView<'_>) -> Vec<AdversaryAction> {
        let corrupted = self.corrupted(view.n);
        let mut actions = Vec::new();
        for (i, &miner) in view.corrupted_wins.iter().enumerate() {
            let parent = Self::fork_parent(view.global);
            let block = Block::new(
                vec![parent],
                Vec::new(),
                vec![stamp_tx(miner, view.round)],
                Some(miner),
                view.round,
            );
            actions.push(AdversaryAction::Mine(block.clone()));
            // Split release: alternate halves of the honest set, shifted by
            // round so no process is starved permanently.
            for (j, target) in view.honest_processes(&corrupted).enumerate() {
                if (j as u64 + view.round + i as u64).is_multiple_of(2) {
                    actions.push(AdversaryAction::Inject {
                        target,
                        block: block.clone(),
                    });
                }
            }
        }
        actions
    }
}

/// Corrupted miners mine on the best tip but sit on their blocks for a fixed
/// number of rounds before releasing them to half the honest processes.
#[derive(Debug, Clone)]
pub struct SelectiveRelease {
    f: u32,
    withhold_rounds: u64,
    withheld: Vec<(Round, Block)>,
}

impl Adversary for SelectiveRelease {
    fn name(&self) -> &'static str {
        "selective_release"
    }

    fn corrupted(&self, n: u32) -> BTreeSet<ProcessId> {
        (0..self.f.min(n)).map(ProcessId).collect()
    }

    fn on_round(&mut self, view: &AdversaryView<'_>) -> Vec<AdversaryAction> {
        let corrupted = self.corrupted(view.n);
        let mut actions = Vec::new();
        for &miner in view.corrupted_wins {
            let parent = tip_selection_longest(view.global);
            let block = Block::new(
                vec![parent],
                Vec::new(),
                vec![stamp_tx(miner, view.round)],
                Some(miner),
                view.round,
            );
            actions.push(AdversaryAction::Mine(block.clone()));
            self.withheld.push((view.round, block));
        }
        let due: Vec<Block> = {
            let withhold = self.withhold_rounds;
            let (ready, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.withheld)
                .into_iter()
                .partition(|(mined, _)| view.round >= mined + withhold);
            self.withheld = keep;
            ready.into_iter().map(|(_, b)| b).collect()
        };
        for block in due {
            for (j, target) in view.honest_processes(&corrupted).enumerate() {
                if (j as u64 + view.round).is_multiple_of(2) {
                    actions.push(AdversaryAction::Inject {
                        target,
                        block: block.clone(),
                    });
                }
            }
        }
        actions
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StripError {
    #[error("not a closure trace: {0}")]
    NotAClosureTrace(String),
}

/// Maps a closure trace to the base execution embedded in it: every mined
/// block loses its weak references (ids stay, so references keep resolving)
/// and closure deliveries disappear; base deliveries were recorded by the
/// base protocol all along and stay untouched. Applying it to a base trace
/// is the identity, so the map is idempotent.
pub fn strip_to_equivalent(trace: &ExecutionTrace) -> Result<ExecutionTrace, StripError> {
    use crate::config::ClosureMode;

    if trace.meta.closure_mode == ClosureMode::Off {
        // Already a base trace; verify it looks like one.
        for ev in &trace.events {
            match ev {
                TraceEvent::ClosureDeliver { .. } => {
                    return Err(StripError::NotAClosureTrace(
                        "base trace contains closure deliveries".into(),
                    ))
                }
                TraceEvent::Mine { block, .. } if !block.weak_refs.is_empty() => {
                    return Err(StripError::NotAClosureTrace(format!(
                        "base trace block {} carries weak references",
                        block.id
                    )))
                }
                _ => {}
            }
        }
        return Ok(trace.clone());
    }

    let mut meta = trace.meta.clone();
    meta.closure_mode = ClosureMode::Off;
    let events = trace
        .events
        .iter()
        .filter_map(|ev| match ev {
            TraceEvent::ClosureDeliver { .. } => None,
            TraceEvent::Mine {
                round,
                miner,
                block,
            } => Some(TraceEvent::Mine {
                round: *round,
                miner: *miner,
                block: block.stripped_keep_id(),
            }),
            other => Some(other.clone()),
        })
        .collect();
    Ok(ExecutionTrace { meta, events })
}
