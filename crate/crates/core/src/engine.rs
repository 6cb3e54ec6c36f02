//! The round engine: one deterministic execution of a configuration and
//! seed.
//!
//! Round structure, strictly sequential: the adversary takes its turn first
//! (it has seen everything broadcast in earlier rounds), then each honest
//! process in index order reads its receive string, updates its view,
//! applies the delivery rule, mines on lottery success and broadcasts; the
//! round ends by aggregating all honest broadcasts into the next round's
//! receive strings.
//!
//! Every source of randomness is a ChaCha stream keyed by
//! `(seed, domain, round, process)`, so the mining schedule is a pure
//! function of the seed: executions with the closure on and off mine the
//! same blocks in the same rounds, which is what makes their traces
//! comparable pair-wise.

use std::collections::BTreeMap;

use crate::adversary::{build_adversary, Adversary, AdversaryAction, AdversaryView};
use crate::config::{ConfigError, ExperimentConfig};
use crate::dag::{fmix64, DagStore, ProcessId, Round, Transaction, TxId};
use crate::diffusion::{Message, Origin, Payload, RoundMailbox};
use crate::protocol::{DeliveryRule, MiningLottery, ProcessState, DOMAIN_TX};
use crate::trace::{ExecutionTrace, ReceiptKind, TraceEvent, TraceMeta};

/// One in-flight execution.
pub struct Simulation {
    config: ExperimentConfig,
    seed: u64,
    rule: DeliveryRule,
    lottery: MiningLottery,
    adversary: Box<dyn Adversary>,
    mailbox: RoundMailbox,
    /// Honest process states, in index order.
    honest: BTreeMap<ProcessId, ProcessState>,
    /// Every block created by anyone, released or not.
    global: DagStore,
    events: Vec<TraceEvent>,
    meta: TraceMeta,
    tx_counter: u64,
    /// Per-process base-delivery sequence counters.
    deliver_seq: BTreeMap<ProcessId, u64>,
    closure_seq: BTreeMap<ProcessId, u64>,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let adversary = build_adversary(&config.adversary);
        let corrupted = adversary.corrupted(config.processes);
        let meta = TraceMeta::from_config(config, seed, corrupted.clone());
        let honest = (0..config.processes)
            .map(ProcessId)
            .filter(|p| !corrupted.contains(p))
            .map(|p| (p, ProcessState::new(p, config.closure_mode)))
            .collect();
        Ok(Simulation {
            rule: DeliveryRule::new(config.base_protocol, config.confirmation_depth),
            lottery: MiningLottery::new(seed, config.mining_probability),
            mailbox: RoundMailbox::new(config.processes, corrupted, 1),
            honest,
            global: DagStore::with_genesis(),
            events: Vec::new(),
            meta,
            tx_counter: 0,
            deliver_seq: BTreeMap::new(),
            closure_seq: BTreeMap::new(),
            adversary,
            config: config.clone(),
            seed,
        })
    }

    /// Runs the configured number of rounds and returns the trace.
    pub fn run(mut self) -> ExecutionTrace {
        for round in 1..=self.config.rounds {
            self.step(round);
        }
        ExecutionTrace {
            meta: self.meta,
            events: self.events,
        }
    }

    fn step(&mut self, round: Round) {
        debug_assert_eq!(self.mailbox.round(), round);
        let fresh_txs = self.generate_txs(round);
        self.adversary_turn(round);
        let honest_ids: Vec<ProcessId> = self.honest.keys().copied().collect();
        for p in honest_ids {
            self.honest_turn(round, p, &fresh_txs);
        }
        self.mailbox.end_round().expect("all honest completed");
    }

    /// Deterministic transaction arrivals: `tx_rate` fresh transactions per
    /// round, broadcast by honest processes round-robin. Returned as
    /// (origin, tx) pairs handed to their origins' broadcasts this round.
    fn generate_txs(&mut self, round: Round) -> Vec<(ProcessId, Transaction)> {
        let observers: Vec<ProcessId> = self.honest.keys().copied().collect();
        let mut out = Vec::new();
        for _ in 0..self.config.tx_rate {
            let origin = observers[(self.tx_counter % observers.len() as u64) as usize];
            let id = TxId(fmix64(
                fmix64(self.seed ^ DOMAIN_TX.wrapping_mul(0x9e37_79b9_7f4a_7c15))
                    ^ self.tx_counter,
            ));
            let tx = Transaction::new(id, round);
            self.events.push(TraceEvent::TxBroadcast {
                round,
                origin,
                tx: tx.clone(),
            });
            out.push((origin, tx));
            self.tx_counter += 1;
        }
        out
    }

    fn adversary_turn(&mut self, round: Round) {
        let corrupted_wins: Vec<ProcessId> = (0..self.config.processes)
            .map(ProcessId)
            .filter(|p| self.mailbox.is_corrupted(*p) && self.lottery.success(round, *p))
            .collect();
        let actions = {
            let view = AdversaryView {
                round,
                n: self.config.processes,
                corrupted_wins: &corrupted_wins,
                global: &self.global,
                rule: &self.rule,
            };
            self.adversary.on_round(&view)
        };
        for action in actions {
            match action {
                AdversaryAction::Mine(block) => {
                    let miner = block.miner.expect("adversarial block has a miner");
                    self.global
                        .insert(block.clone())
                        .expect("adversarial block references known blocks");
                    self.events.push(TraceEvent::Mine {
                        round,
                        miner,
                        block,
                    });
                }
                AdversaryAction::Inject { target, block } => {
                    self.events.push(TraceEvent::Inject {
                        round,
                        target,
                        block: block.id,
                    });
                    self.mailbox.adversary_inject(
                        target,
                        Message {
                            origin: Origin::Adversary,
                            payload: Payload::BlockAnnounce(block),
                        },
                    );
                }
            }
        }
    }

    fn honest_turn(&mut self, round: Round, p: ProcessId, fresh_txs: &[(ProcessId, Transaction)]) {
        let capacity = self.config.block_capacity;
        let messages = self.mailbox.begin_round(p).expect("one turn per round");

        // Read and integrate the receive string.
        let state = self.honest.get_mut(&p).expect("honest process");
        for msg in messages {
            match msg.payload {
                Payload::BlockAnnounce(block) => {
                    self.events.push(TraceEvent::Receive {
                        round,
                        process: p,
                        kind: ReceiptKind::Block,
                        id: block.id.0,
                    });
                    for inserted in state.integrate_block(block, capacity) {
                        if let Some(closure) = state.closure.as_mut() {
                            let b = state.view.get(inserted).expect("just inserted").clone();
                            closure.on_foreign_mined(&b, capacity);
                        }
                    }
                }
                Payload::TxAnnounce(tx) => {
                    self.events.push(TraceEvent::Receive {
                        round,
                        process: p,
                        kind: ReceiptKind::Tx,
                        id: tx.id.0,
                    });
                    state.integrate_tx(tx);
                }
            }
        }

        // Apply the delivery criterion; the closure weaves on top of it.
        let delivered = state.deliver_step(&self.rule);
        for block in &delivered {
            let seq = self.deliver_seq.entry(p).or_insert(0);
            self.events.push(TraceEvent::Deliver {
                round,
                process: p,
                block: block.id,
                seq: *seq,
            });
            *seq += 1;
            if let Some(closure) = state.closure.as_mut() {
                let woven = closure
                    .on_base_deliver(&state.view, block, capacity)
                    .expect("delivered block is in the local view");
                for w in woven {
                    let seq = self.closure_seq.entry(p).or_insert(0);
                    self.events.push(TraceEvent::ClosureDeliver {
                        round,
                        process: p,
                        block: w.id,
                        seq: *seq,
                    });
                    *seq += 1;
                }
            }
        }

        // Mine on lottery success.
        let mut outbox: Vec<Message> = Vec::new();
        let mut mined_ids = Vec::new();
        if let Some(raw) = state.mine_attempt(&self.lottery, &self.rule, round, capacity) {
            let block = match state.closure.as_mut() {
                Some(closure) => closure
                    .on_base_mined(&state.view, raw, p)
                    .expect("mined block ancestry is local")
                    .expect("own mine event yields an augmented block"),
                None => raw,
            };
            let inserted = state.integrate_block(block.clone(), capacity);
            debug_assert_eq!(inserted, vec![block.id]);
            self.global
                .insert(block.clone())
                .expect("honest block extends known blocks");
            self.events.push(TraceEvent::Mine {
                round,
                miner: p,
                block: block.clone(),
            });
            mined_ids.push(block.id);
            outbox.push(Message {
                origin: Origin::Process(p),
                payload: Payload::BlockAnnounce(block),
            });
        }

        // Broadcast this round's fresh transactions assigned to p.
        for (origin, tx) in fresh_txs {
            if *origin == p {
                outbox.push(Message {
                    origin: Origin::Process(p),
                    payload: Payload::TxAnnounce(tx.clone()),
                });
            }
        }

        self.events.push(TraceEvent::Broadcast {
            round,
            process: p,
            blocks: mined_ids,
        });
        self.mailbox.broadcast(p, outbox).expect("single completion");
    }
}

/// Convenience wrapper: build and run one execution.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<ExecutionTrace, ConfigError> {
    Ok(Simulation::new(config, seed)?.run())
}
