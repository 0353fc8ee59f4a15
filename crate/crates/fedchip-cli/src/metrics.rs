//! Per-round metrics emission: JSONL and CSV with identical column order,
//! plus the final ledger summary document.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fedchip_core::fedsim::{LedgerReport, RoundRecord};

use crate::AppError;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One metrics line per round. `wall_time_ms` is fixed at zero in emitted
/// files so reruns of the same configuration are byte-identical; measured
/// timing goes to stderr instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub round: usize,
    pub mean_loss: f64,
    pub per_client_loss: Vec<f64>,
    pub theta_norm: f64,
    pub qubits_downlink_cum: u64,
    pub retransmissions_cum: u64,
    pub wall_time_ms: u64,
}

impl MetricsRecord {
    pub fn from_round(record: &RoundRecord<f64>) -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            round: record.round,
            mean_loss: record.mean_loss,
            per_client_loss: record.per_client_loss.clone(),
            theta_norm: record.theta_after.norm(),
            qubits_downlink_cum: record.ledger_totals.qubits_downlink,
            retransmissions_cum: record.ledger_totals.retransmissions,
            wall_time_ms: 0,
        }
    }

    pub const CSV_HEADER: &'static str = "schema_version,round,mean_loss,per_client_loss,theta_norm,qubits_downlink_cum,retransmissions_cum,wall_time_ms";

    pub fn csv_line(&self) -> String {
        let per_client = self
            .per_client_loss
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{},{},{},{},{}",
            self.schema_version,
            self.round,
            self.mean_loss,
            per_client,
            self.theta_norm,
            self.qubits_downlink_cum,
            self.retransmissions_cum,
            self.wall_time_ms
        )
    }
}

pub fn write_jsonl(path: &Path, records: &[MetricsRecord]) -> Result<(), AppError> {
    let mut out = Vec::new();
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| AppError::Runtime(format!("serializing metrics: {e}")))?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn write_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), AppError> {
    let mut out = String::new();
    out.push_str(MetricsRecord::CSV_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&record.csv_line());
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                AppError::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    file.write_all(bytes)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Serializable mirror of the core ledger report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerSummary {
    pub total_qubits_downlink: u64,
    pub total_qubits_uplink: u64,
    pub total_classical_bits: u64,
    pub total_retransmissions: u64,
    pub total_states_prepared: u64,
    pub total_classical_equivalent_bits: u64,
    pub qubits_per_state: f64,
    pub matrix_bits_per_state: u64,
    pub theta_bits: u64,
    pub matrix_to_qubit_ratio: f64,
    pub theta_to_qubit_ratio: f64,
}

impl From<LedgerReport> for LedgerSummary {
    fn from(report: LedgerReport) -> Self {
        Self {
            total_qubits_downlink: report.total_qubits_downlink,
            total_qubits_uplink: report.total_qubits_uplink,
            total_classical_bits: report.total_classical_bits,
            total_retransmissions: report.total_retransmissions,
            total_states_prepared: report.total_states_prepared,
            total_classical_equivalent_bits: report.total_classical_equivalent_bits,
            qubits_per_state: report.qubits_per_state,
            matrix_bits_per_state: report.matrix_bits_per_state,
            theta_bits: report.theta_bits,
            matrix_to_qubit_ratio: report.matrix_to_qubit_ratio,
            theta_to_qubit_ratio: report.theta_to_qubit_ratio,
        }
    }
}

/// Final document written after training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub rounds: usize,
    pub initial_mean_loss: Option<f64>,
    pub final_mean_loss: Option<f64>,
    pub loss_gap_ratio: Option<f64>,
    pub dropped_client_rounds: u64,
    pub ledger: LedgerSummary,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_record() -> MetricsRecord {
        MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            round: 3,
            mean_loss: -0.25,
            per_client_loss: vec![-0.2, -0.3],
            theta_norm: 1.5,
            qubits_downlink_cum: 96,
            retransmissions_cum: 0,
            wall_time_ms: 0,
        }
    }

    #[test]
    fn csv_column_order_matches_json_key_order() {
        // Key order in the emitted JSONL line is the struct field order.
        let text = serde_json::to_string(&sample_record()).unwrap();
        let keys: Vec<&str> = text
            .split('"')
            .skip(1)
            .step_by(2)
            .filter(|k| !k.is_empty())
            .collect();
        let header: Vec<&str> = MetricsRecord::CSV_HEADER.split(',').collect();
        assert_eq!(keys, header);
    }

    #[test]
    fn csv_line_embeds_per_client_losses() {
        let line = sample_record().csv_line();
        assert_eq!(line, "1,3,-0.25,-0.2;-0.3,1.5,96,0,0");
    }
}
