//! Experiment configuration: run parameters, seed ranges, validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::Round;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BaseProtocol {
    /// Longest chain, deepest strong-edge leaf wins, ties to smaller id.
    #[default]
    Nakamoto,
    /// Greedy heaviest-subtree walk from genesis.
    Ghost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClosureMode {
    /// Base protocol only.
    Off,
    /// Weak references to the leaves of the miner's abandoned set.
    #[default]
    Closure,
    /// Weak references to all leaves not already in the block's ancestry.
    Greedy,
}

/// Adversary selection plus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AdversarySpec {
    /// Follows the protocol: corrupts nobody, injects nothing.
    #[default]
    Honest,
    /// Corrupted miners extend the second-best tip and release their blocks
    /// selectively to split honest views.
    ForkAmplifier { corrupted: u32 },
    /// Corrupted miners withhold mined blocks for a fixed number of rounds,
    /// then release them selectively to half the honest processes.
    SelectiveRelease { corrupted: u32, withhold_rounds: u64 },
}

impl AdversarySpec {
    pub fn corrupted_count(&self) -> u32 {
        match *self {
            AdversarySpec::Honest => 0,
            AdversarySpec::ForkAmplifier { corrupted }
            | AdversarySpec::SelectiveRelease { corrupted, .. } => corrupted,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AdversarySpec::Honest => "honest",
            AdversarySpec::ForkAmplifier { .. } => "fork_amplifier",
            AdversarySpec::SelectiveRelease { .. } => "selective_release",
        }
    }
}

/// Which seeds a sweep covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range { start: u64, count: u64 },
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Range { start: 1, count: 100 }
    }
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

/// All knobs of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Number of processes `n`.
    pub processes: u32,
    /// Rounds per execution.
    pub rounds: Round,
    /// Per-process per-round mining success probability `q`.
    pub mining_probability: f64,
    /// Max transactions per block `m`.
    pub block_capacity: usize,
    /// Delivery confirmation depth `k`.
    pub confirmation_depth: u64,
    /// Fresh transactions broadcast per round.
    pub tx_rate: u32,
    pub base_protocol: BaseProtocol,
    pub closure_mode: ClosureMode,
    pub adversary: AdversarySpec,
    pub seeds: SeedSpec,
    /// Where the CLI writes traces and reports.
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            processes: 10,
            rounds: 2000,
            mining_probability: 0.02,
            block_capacity: 10,
            confirmation_depth: 6,
            tx_rate: 1,
            base_protocol: BaseProtocol::Nakamoto,
            closure_mode: ClosureMode::Closure,
            adversary: AdversarySpec::Honest,
            seeds: SeedSpec::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let f = self.adversary.corrupted_count();
        if self.processes == 0 {
            return Err(ConfigError::Invalid("processes must be positive".into()));
        }
        if f >= self.processes {
            return Err(ConfigError::Invalid(format!(
                "corrupted count {f} must be below processes {}",
                self.processes
            )));
        }
        if !(self.mining_probability > 0.0 && self.mining_probability < 1.0) {
            return Err(ConfigError::Invalid(
                "mining_probability must lie strictly between 0 and 1".into(),
            ));
        }
        if self.rounds == 0 {
            return Err(ConfigError::Invalid("rounds must be at least 1".into()));
        }
        if self.confirmation_depth == 0 {
            return Err(ConfigError::Invalid(
                "confirmation_depth must be at least 1".into(),
            ));
        }
        if self.block_capacity == 0 {
            return Err(ConfigError::Invalid(
                "block_capacity must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
