//! Experiment configuration: JSON with strict keys and reference defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fedchip_core::fedsim::{Strategy, TrainingConfig, DEFAULT_RETRANSMISSION_CAP};
use fedchip_core::model::{AnsatzSpec, ShiftMode};
use fedchip_core::EstimationMode;

use crate::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyName {
    FedSgd,
    FedAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftModeName {
    Single,
    Multi,
    Indexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationName {
    Exact,
    Shots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnsatzSection {
    pub num_qubits: usize,
    pub num_layers: usize,
}

impl Default for AnsatzSection {
    fn default() -> Self {
        Self {
            num_qubits: 2,
            num_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientsSection {
    pub count: usize,
    pub examples_per_client: usize,
    pub data_seed: u64,
}

impl Default for ClientsSection {
    fn default() -> Self {
        Self {
            count: 3,
            examples_per_client: 4,
            data_seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub rounds: usize,
    pub learning_rate: f64,
    pub strategy: StrategyName,
    pub shift_mode: ShiftModeName,
    pub shift_size: f64,
    pub partial_fraction: f64,
    pub retransmission_cap: u32,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            rounds: 200,
            learning_rate: 0.05,
            strategy: StrategyName::FedSgd,
            shift_mode: ShiftModeName::Single,
            shift_size: std::f64::consts::PI,
            partial_fraction: 1.0,
            retransmission_cap: DEFAULT_RETRANSMISSION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub mode: EstimationName,
    pub shots: u64,
    pub seed: u64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        Self {
            mode: EstimationName::Exact,
            shots: 100_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<MetricsFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: "out".to_string(),
            formats: vec![MetricsFormat::Jsonl, MetricsFormat::Csv],
        }
    }
}

/// Full experiment description. Every field has a reference default, and
/// unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub ansatz: AnsatzSection,
    pub clients: ClientsSection,
    pub training: TrainingSection,
    pub estimation: EstimationSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| AppError::Usage(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let fail = |msg: &str| Err(AppError::Usage(format!("invalid config: {msg}")));
        if self.ansatz.num_qubits == 0 || self.ansatz.num_layers == 0 {
            return fail("ansatz.num_qubits and ansatz.num_layers must be positive");
        }
        if self.clients.count == 0 || self.clients.examples_per_client == 0 {
            return fail("clients.count and clients.examples_per_client must be positive");
        }
        if !(self.training.learning_rate > 0.0 && self.training.learning_rate.is_finite()) {
            return fail("training.learning_rate must be positive and finite");
        }
        if !(self.training.shift_size > 0.0 && self.training.shift_size < std::f64::consts::TAU) {
            return fail("training.shift_size must lie in (0, 2*pi)");
        }
        if !(self.training.partial_fraction > 0.0 && self.training.partial_fraction <= 1.0) {
            return fail("training.partial_fraction must lie in (0, 1]");
        }
        if self.training.retransmission_cap == 0 {
            return fail("training.retransmission_cap must be positive");
        }
        if self.estimation.shots == 0 {
            return fail("estimation.shots must be positive");
        }
        if self.output.formats.is_empty() {
            return fail("output.formats must name at least one format");
        }
        if self.output.directory.is_empty() {
            return fail("output.directory must not be empty");
        }
        Ok(())
    }

    pub fn estimation_mode(&self) -> EstimationMode {
        match self.estimation.mode {
            EstimationName::Exact => EstimationMode::Exact,
            EstimationName::Shots => EstimationMode::Shots(self.estimation.shots),
        }
    }

    /// Lowers the config into the simulator's training configuration;
    /// `seed_override` replaces the master seed from the command line.
    pub fn to_training_config(&self, seed_override: Option<u64>) -> TrainingConfig<f64> {
        TrainingConfig {
            ansatz: AnsatzSpec::new(self.ansatz.num_qubits, self.ansatz.num_layers),
            num_clients: self.clients.count,
            examples_per_client: self.clients.examples_per_client,
            data_seed: self.clients.data_seed,
            rounds: self.training.rounds,
            learning_rate: self.training.learning_rate,
            strategy: match self.training.strategy {
                StrategyName::FedSgd => Strategy::FedSgd,
                StrategyName::FedAvg => Strategy::FedAvg,
            },
            shift_mode: match self.training.shift_mode {
                ShiftModeName::Single => ShiftMode::Single,
                ShiftModeName::Multi => ShiftMode::Multi,
                ShiftModeName::Indexed => ShiftMode::Indexed,
            },
            shift: self.training.shift_size,
            partial_fraction: self.training.partial_fraction,
            estimation: self.estimation_mode(),
            master_seed: seed_override.unwrap_or(self.estimation.seed),
            retransmission_cap: self.training.retransmission_cap,
        }
    }
}
