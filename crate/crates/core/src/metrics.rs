//! Throughput, goodput, latency and abandoned-block accounting over traces,
//! plus the paired comparator for closure-versus-base executions.
//!
//! Throughput is delivered blocks per round for one observer. Latency is
//! the mean, over broadcast transactions, of the gap between broadcast and
//! the first delivery of a block containing the transaction; transactions
//! still undelivered at trace end are reported separately instead of biasing
//! the mean. Abandonment is witnessed at trace scale: a block counts as
//! abandoned once it is honest-mined, undelivered, and incompatible with the
//! delivered prefix (neither on the delivered chain nor a descendant of the
//! delivered tip), which is exactly when no extension of the trace could
//! still deliver it.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::adversary::strip_to_equivalent;
use crate::config::ClosureMode;
use crate::dag::{BlockId, DagStore, EdgeSet, ProcessId, Round, TxId};
use crate::trace::{ExecutionTrace, TraceError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty trace: no rounds")]
    EmptyTrace,
    #[error("unpaired traces: {0}")]
    UnpairedTraces(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

impl From<TraceError> for MetricsError {
    fn from(e: TraceError) -> Self {
        MetricsError::MalformedTrace(e.to_string())
    }
}

/// Distinct blocks the observer delivered at the trace's protocol level.
pub fn delivered_count(trace: &ExecutionTrace, observer: ProcessId) -> usize {
    trace
        .delivered_sequence(observer)
        .iter()
        .map(|(_, id)| *id)
        .collect::<BTreeSet<_>>()
        .len()
}

/// Average delivered blocks per round for one observer.
pub fn throughput_of(trace: &ExecutionTrace, observer: ProcessId) -> Result<f64, MetricsError> {
    if trace.meta.rounds == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(delivered_count(trace, observer) as f64 / trace.meta.rounds as f64)
}

/// Per-transaction latency outcome for one observer.
#[derive(Debug, Clone, Default)]
pub struct LatencyReport {
    /// First-delivery latency per broadcast transaction that was delivered.
    pub per_tx: BTreeMap<TxId, u64>,
    /// Broadcast transactions with no delivered containing block.
    pub unresolved: usize,
}

impl LatencyReport {
    pub fn mean(&self) -> Option<f64> {
        if self.per_tx.is_empty() {
            return None;
        }
        Some(self.per_tx.values().map(|v| *v as f64).sum::<f64>() / self.per_tx.len() as f64)
    }
}

/// Rounds from broadcast until the first delivered block containing each
/// transaction. Only broadcast transactions count; miner stamps never appear
/// here because they are never broadcast.
pub fn latency_of(
    trace: &ExecutionTrace,
    observer: ProcessId,
) -> Result<LatencyReport, MetricsError> {
    if trace.meta.rounds == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    let mined = trace.mined_blocks()?;
    let broadcasts = trace.tx_broadcasts();
    let mut first_delivery: BTreeMap<TxId, Round> = BTreeMap::new();
    for (round, id) in trace.delivered_sequence(observer) {
        let block = mined
            .get(&id)
            .ok_or_else(|| MetricsError::MalformedTrace(format!("delivered unmined {id}")))?;
        for tx in &block.txs {
            first_delivery.entry(tx.id).or_insert(round);
        }
    }
    let mut report = LatencyReport::default();
    for (tx, broadcast_round) in &broadcasts {
        match first_delivery.get(tx) {
            Some(delivered_round) => {
                report
                    .per_tx
                    .insert(*tx, delivered_round.saturating_sub(*broadcast_round));
            }
            None => report.unresolved += 1,
        }
    }
    Ok(report)
}

/// Rebuilds the global block graph of a trace.
pub fn block_graph(trace: &ExecutionTrace) -> Result<DagStore, MetricsError> {
    let mut store = DagStore::with_genesis();
    // Mine events appear in creation order, so references always resolve.
    for ev in &trace.events {
        if let crate::trace::TraceEvent::Mine { block, .. } = ev {
            store
                .insert(block.clone())
                .map_err(|e| MetricsError::MalformedTrace(e.to_string()))?;
        }
    }
    Ok(store)
}

/// Honest-mined blocks whose abandonment the trace witnesses: never
/// delivered by the designated observer and incompatible with its delivered
/// prefix. Blocks still above the delivered tip are merely unconfirmed, not
/// abandoned; finite traces can only witness abandonment that has been
/// sealed by a delivered block.
pub fn abandoned_blocks(trace: &ExecutionTrace) -> Result<BTreeSet<BlockId>, MetricsError> {
    let observer = trace.designated_observer();
    let graph = block_graph(trace)?;
    let delivered: BTreeSet<BlockId> = trace
        .delivered_sequence(observer)
        .iter()
        .map(|(_, id)| *id)
        .collect();
    let base_seq = trace.base_delivered_sequence(observer);
    let Some((_, tip)) = base_seq.last() else {
        return Ok(BTreeSet::new());
    };

    // Still-deliverable blocks: the delivered chain itself plus everything
    // above the delivered tip.
    let mut deliverable = graph
        .ancestors(*tip, EdgeSet::Strong)
        .map_err(|e| MetricsError::MalformedTrace(e.to_string()))?;
    deliverable.insert(*tip);
    let mut stack = vec![*tip];
    while let Some(cur) = stack.pop() {
        for child in graph.strong_children(cur) {
            if deliverable.insert(child) {
                stack.push(child);
            }
        }
    }

    let mut out = BTreeSet::new();
    for block in graph.blocks() {
        let Some(miner) = block.miner else { continue };
        if trace.meta.is_honest(miner)
            && !delivered.contains(&block.id)
            && !deliverable.contains(&block.id)
        {
            out.insert(block.id);
        }
    }
    Ok(out)
}

/// Outcome of comparing a closure execution against its embedded base
/// execution.
#[derive(Debug, Clone, Serialize)]
pub struct PairedComparison {
    pub observer: ProcessId,
    pub base_delivered: usize,
    pub closure_delivered: usize,
    /// closure minus base delivered-block counts.
    pub delivered_delta: i64,
    /// closure minus base latency per transaction delivered in both.
    pub latency_deltas: BTreeMap<TxId, i64>,
    /// Transactions whose closure latency exceeded the base latency.
    pub latency_violations: Vec<TxId>,
    /// Witnessed-abandoned honest blocks of the base execution.
    pub base_abandoned: BTreeSet<BlockId>,
    pub forked_rounds: usize,
    /// Blocks the closure delivered that the base protocol never did.
    pub closure_only_delivered: usize,
}

impl PairedComparison {
    /// Latency dominance: no transaction got slower under the closure.
    pub fn latency_dominates(&self) -> bool {
        self.latency_violations.is_empty()
    }

    /// Throughput dominance: the closure never delivers fewer blocks.
    pub fn throughput_dominates(&self) -> bool {
        self.delivered_delta >= 0
    }
}

/// Compares a paired `(base, closure)` execution. The base trace must be
/// exactly the closure trace with weak references stripped (the embedded
/// base execution), which the caller obtains from
/// [`strip_to_equivalent`](crate::adversary::strip_to_equivalent).
pub fn compare_paired(
    base: &ExecutionTrace,
    closure: &ExecutionTrace,
) -> Result<PairedComparison, MetricsError> {
    if closure.meta.closure_mode == ClosureMode::Off {
        return Err(MetricsError::UnpairedTraces(
            "second trace does not run the closure".into(),
        ));
    }
    let expected = strip_to_equivalent(closure)
        .map_err(|e| MetricsError::UnpairedTraces(e.to_string()))?;
    if &expected != base {
        return Err(MetricsError::UnpairedTraces(
            "base trace is not the stripped equivalent of the closure trace".into(),
        ));
    }

    let observer = closure.designated_observer();
    let base_latency = latency_of(base, observer)?;
    let closure_latency = latency_of(closure, observer)?;
    let mut latency_deltas = BTreeMap::new();
    let mut latency_violations = Vec::new();
    for (tx, closure_rounds) in &closure_latency.per_tx {
        if let Some(base_rounds) = base_latency.per_tx.get(tx) {
            let delta = *closure_rounds as i64 - *base_rounds as i64;
            latency_deltas.insert(*tx, delta);
            if delta > 0 {
                latency_violations.push(*tx);
            }
        }
    }

    let base_set: BTreeSet<BlockId> = base
        .delivered_sequence(observer)
        .iter()
        .map(|(_, id)| *id)
        .collect();
    let closure_set: BTreeSet<BlockId> = closure
        .delivered_sequence(observer)
        .iter()
        .map(|(_, id)| *id)
        .collect();

    Ok(PairedComparison {
        observer,
        base_delivered: base_set.len(),
        closure_delivered: closure_set.len(),
        delivered_delta: closure_set.len() as i64 - base_set.len() as i64,
        latency_deltas,
        latency_violations,
        base_abandoned: abandoned_blocks(base)?,
        forked_rounds: base.forked_rounds().len(),
        closure_only_delivered: closure_set.difference(&base_set).count(),
    })
}

/// Per-observer spread of a metric across honest observers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ObserverStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

pub fn observer_stats(values: &[f64]) -> ObserverStats {
    assert!(!values.is_empty());
    let sum: f64 = values.iter().sum();
    ObserverStats {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        mean: sum / values.len() as f64,
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// One report row: a single execution seen at one protocol level.
#[derive(Debug, Clone, Serialize)]
pub struct SeedRow {
    pub seed: u64,
    pub adversary: String,
    pub protocol: String,
    pub rounds: Round,
    pub mined: usize,
    pub honest_mined: usize,
    pub forked_rounds: usize,
    pub delivered: usize,
    pub throughput: f64,
    pub throughput_min: f64,
    pub throughput_max: f64,
    /// Delivered broadcast transactions per round, the secondary metric.
    pub tx_throughput: f64,
    pub latency_min: Option<f64>,
    pub latency_mean: Option<f64>,
    pub latency_max: Option<f64>,
    pub unresolved_txs: usize,
    pub abandoned: usize,
    pub weak_refs_total: usize,
}

/// Computes the row for one trace.
pub fn seed_row(trace: &ExecutionTrace) -> Result<SeedRow, MetricsError> {
    let observer = trace.designated_observer();
    let observers = trace.honest_observers();
    let throughputs: Vec<f64> = observers
        .iter()
        .map(|p| throughput_of(trace, *p))
        .collect::<Result<_, _>>()?;
    let stats = observer_stats(&throughputs);
    let latency = latency_of(trace, observer)?;
    let latency_means: Vec<f64> = observers
        .iter()
        .map(|p| latency_of(trace, *p).map(|l| l.mean()))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let latency_stats = (!latency_means.is_empty()).then(|| observer_stats(&latency_means));
    let mined = trace.mined_blocks()?;
    let honest_mined = mined
        .values()
        .filter(|b| b.miner.is_some_and(|m| trace.meta.is_honest(m)))
        .count();
    let weak_refs_total: usize = mined.values().map(|b| b.weak_refs.len()).sum();
    let delivered_tx_count = latency.per_tx.len();
    let protocol = match trace.meta.closure_mode {
        ClosureMode::Off => "base",
        ClosureMode::Closure => "closure",
        ClosureMode::Greedy => "greedy",
    };
    Ok(SeedRow {
        seed: trace.meta.seed,
        adversary: trace.meta.adversary.label().to_string(),
        protocol: protocol.to_string(),
        rounds: trace.meta.rounds,
        mined: mined.len(),
        honest_mined,
        forked_rounds: trace.forked_rounds().len(),
        delivered: delivered_count(trace, observer),
        throughput: stats.mean,
        throughput_min: stats.min,
        throughput_max: stats.max,
        tx_throughput: delivered_tx_count as f64 / trace.meta.rounds as f64,
        latency_min: latency_stats.map(|s| s.min),
        latency_mean: latency_stats.map(|s| s.mean),
        latency_max: latency_stats.map(|s| s.max),
        unresolved_txs: latency.unresolved,
        abandoned: abandoned_blocks(trace)?.len(),
        weak_refs_total,
    })
}

/// Mean with a 95% normal-approximation confidence half-width. These are
/// estimates over the configured seed set and adversary menu, never the
/// worst case over all adversaries.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub ci95: f64,
    pub count: usize,
}

pub fn mean_ci(values: &[f64]) -> Option<MeanCi> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1.0);
    Some(MeanCi {
        mean,
        ci95: 1.96 * (var / n).sqrt(),
        count: values.len(),
    })
}

/// Aggregate over rows sharing an adversary and protocol level.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub adversary: String,
    pub protocol: String,
    pub seeds: usize,
    pub throughput: MeanCi,
    pub tx_throughput: MeanCi,
    pub latency: Option<MeanCi>,
    pub abandoned_total: usize,
    pub forked_seeds: usize,
}

pub fn summarize(rows: &[SeedRow]) -> Vec<SummaryEntry> {
    let mut groups: BTreeMap<(String, String), Vec<&SeedRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.adversary.clone(), row.protocol.clone()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((adversary, protocol), rows)| {
            let throughputs: Vec<f64> = rows.iter().map(|r| r.throughput).collect();
            let tx_throughputs: Vec<f64> = rows.iter().map(|r| r.tx_throughput).collect();
            let latencies: Vec<f64> = rows.iter().filter_map(|r| r.latency_mean).collect();
            SummaryEntry {
                adversary,
                protocol,
                seeds: rows.len(),
                throughput: mean_ci(&throughputs).expect("nonempty group"),
                tx_throughput: mean_ci(&tx_throughputs).expect("nonempty group"),
                latency: mean_ci(&latencies),
                abandoned_total: rows.iter().map(|r| r.abandoned).sum(),
                forked_seeds: rows.iter().filter(|r| r.forked_rounds > 0).count(),
            }
        })
        .collect()
}
