//! Deterministic, seedable simulator and protocol library for block-based
//! atomic broadcast (BAB) over synchronous rounds.
//!
//! The crate models forkable chain protocols (Nakamoto longest-chain and
//! GHOST) driven by a per-round mining lottery, together with the *throughput
//! closure*: a transformation that augments every mined block with weak
//! references to the leaves of its abandoned set, so that abandoned blocks
//! are woven back into the delivered order instead of being lost.
//!
//! The main pieces:
//!
//! * [`dag`]: content-addressed blocks and the append-only DAG store with
//!   reachability queries (ancestors, leaves, depth).
//! * [`diffusion`]: the synchronous-round message functionality with a
//!   rushing adversary, per-process receive strings, round completion, and
//!   selective injection with an automatic two-round echo.
//! * [`protocol`]: the base chain protocols. Mining lottery, tip selection,
//!   k-deep delivery, fork detection.
//! * [`closure`]: weak-reference augmentation at mine time, abandoned-set
//!   computation, and topologically ordered closure delivery.
//! * [`adversary`]: pluggable adversary programs and the weak-reference
//!   stripping map that turns a closure trace into its equivalent base trace.
//! * [`engine`]: the round engine tying the above into one execution.
//! * [`trace`] / [`metrics`] / [`properties`]: execution traces as
//!   line-delimited JSON, throughput/goodput/latency accounting, and the
//!   runtime checkers for the atomic-broadcast properties.
//! * [`fixture`]: a hand-scripted golden execution exercising a double fork
//!   and its closure recovery.
//!
//! Everything is deterministic: the same configuration and seed produce
//! byte-identical traces. Randomness comes from ChaCha streams keyed by
//! `(seed, domain, round, process)` so that runs with and without the closure
//! share one mining schedule.

pub mod adversary;
pub mod closure;
pub mod config;
pub mod dag;
pub mod diffusion;
pub mod dot;
pub mod engine;
pub mod fixture;
pub mod metrics;
pub mod properties;
pub mod protocol;
pub mod trace;

pub use config::{AdversarySpec, BaseProtocol, ClosureMode, ExperimentConfig};
pub use dag::{Block, BlockId, DagError, DagStore, EdgeSet, ProcessId, Round, Transaction, TxId};
pub use engine::Simulation;
pub use trace::{ExecutionTrace, TraceEvent, TraceMeta};
