//! The four verification pipelines behind the subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use fedchip_core::chip::{chip_apply, permuted_block_decompose, success_probability};
use fedchip_core::fedsim::{
    self, estimate_from_shift_state, ledger_report, make_realizable_task, run_training, FedError,
};
use fedchip_core::model::{
    exact_gradient, loss, prepare_indexed_shift_state, prepare_multi_shift_state,
    prepare_shift_state, LabeledExample, ParamVector,
};
use fedchip_core::EstimationMode;

use crate::config::{EstimationName, ExperimentConfig, MetricsFormat};
use crate::matio;
use crate::metrics::{self, LedgerSummary, MetricsRecord, TrainSummary, METRICS_SCHEMA_VERSION};
use crate::AppError;

fn fed_error(err: FedError) -> AppError {
    match err {
        FedError::InvalidConfig(msg) => AppError::Usage(format!("invalid config: {msg}")),
        other => AppError::Runtime(other.to_string()),
    }
}

/// Fidelity |⟨a|b⟩|² / (‖a‖²·‖b‖²) between two unnormalized real vectors.
fn fidelity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot * dot) / (na * nb)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmulateReport {
    pub dim: usize,
    pub emulated: Vec<f64>,
    pub oracle: Vec<f64>,
    pub fidelity: f64,
    pub success_prob: f64,
    pub success_prob_formula: f64,
    pub scale: f64,
}

/// Emulates O|ψ⟩ through the chip and cross-checks the dense product and the
/// closed-form success probability.
pub fn cmd_emulate(
    matrix_path: &Path,
    state_path: &Path,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let operator = matio::read_matrix(matrix_path)?;
    let state = matio::read_state(state_path)?;
    if state.dim() != operator.dim() {
        return Err(AppError::Usage(format!(
            "state has dimension {}, matrix is {}x{}",
            state.dim(),
            operator.dim(),
            operator.dim()
        )));
    }
    let encoded = operator
        .vec_encode()
        .map_err(|e| AppError::Usage(format!("{}: {e}", matrix_path.display())))?;
    let output = chip_apply(&encoded, &state)
        .map_err(|e| AppError::Runtime(format!("chip emulation failed: {e}")))?;
    let oracle: Vec<f64> = operator
        .apply(state.amplitudes())
        .map_err(|e| AppError::Runtime(e.to_string()))?
        .iter()
        .map(|a| a.re)
        .collect();
    let emulated: Vec<f64> = output
        .extracted
        .iter()
        .map(|a| (a / output.scale).re)
        .collect();
    let report = EmulateReport {
        dim: operator.dim(),
        fidelity: fidelity(&emulated, &oracle),
        success_prob: output.success_prob,
        success_prob_formula: success_probability(&operator, &state)
            .map_err(|e| AppError::Runtime(e.to_string()))?,
        scale: output.scale,
        emulated,
        oracle,
    };

    println!("chip emulation of a {0}x{0} operator", report.dim);
    println!("  emulated O|psi>: {:?}", report.emulated);
    println!("  dense product  : {:?}", report.oracle);
    println!("  fidelity       : {:.17}", report.fidelity);
    println!(
        "  success prob   : {:.17} (formula {:.17})",
        report.success_prob, report.success_prob_formula
    );
    if let Some(dir) = out {
        let path = dir.join("emulate.json");
        metrics::write_file(&path, &to_json_pretty(&report)?)?;
        println!("  report written : {}", path.display());
    }

    if report.fidelity < 1.0 - 1e-9 {
        return Err(AppError::Tolerance(format!(
            "fidelity {} below 1 - 1e-9",
            report.fidelity
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub mode: String,
    pub tolerance: f64,
    pub exact: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub single_recovered: Vec<f64>,
    pub indexed_recovered: Option<Vec<f64>>,
    pub multi_sum: f64,
    pub exact_sum: f64,
    pub max_discrepancy: f64,
    pub violations: usize,
}

/// Tabulates exact gradients, shift-state recoveries (all three modes), and
/// central finite differences at the configured probe instance.
pub fn cmd_gradcheck(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let tc = config.to_training_config(seed_override);
    tc.validate().map_err(fed_error)?;
    let estimation = tc.estimation;
    let (clients, _, theta) = make_realizable_task::<f64>(
        &tc.ansatz,
        tc.num_clients,
        tc.examples_per_client,
        tc.data_seed,
        estimation,
    )
    .map_err(fed_error)?;
    let example = &clients[0].dataset[0];
    let ansatz = tc.ansatz;
    let m = ansatz.param_count();
    let shift = tc.shift;

    let exact = exact_gradient(&ansatz, &theta, example).map_err(|e| fed_error(e.into()))?;
    let finite_difference = probe_finite_difference(&ansatz, &theta, example, 1e-5)?;

    let mut single_recovered = Vec::with_capacity(m);
    let mut single_sigmas = Vec::with_capacity(m);
    for index in 0..m {
        let (state, spec) =
            prepare_shift_state(&ansatz, &theta, index, shift).map_err(|e| fed_error(e.into()))?;
        let estimate = estimate_from_shift_state(
            &fedsim::PreparedShift { state, spec },
            example,
            estimation,
            tc.master_seed.wrapping_add(1_000 + index as u64),
        )
        .map_err(fed_error)?;
        single_recovered.push(estimate.recovered[0]);
        single_sigmas.push(estimate.std_errors[0]);
    }

    let all_indices: Vec<usize> = (0..m).collect();
    let (indexed_recovered, indexed_sigmas) = if m >= 2 {
        let (state, spec) = prepare_indexed_shift_state(&ansatz, &theta, &all_indices, shift)
            .map_err(|e| fed_error(e.into()))?;
        let estimate = estimate_from_shift_state(
            &fedsim::PreparedShift { state, spec },
            example,
            estimation,
            tc.master_seed.wrapping_add(2_000),
        )
        .map_err(fed_error)?;
        (Some(estimate.recovered), Some(estimate.std_errors))
    } else {
        (None, None)
    };

    let (multi_state, multi_spec) = prepare_multi_shift_state(&ansatz, &theta, &all_indices, shift)
        .map_err(|e| fed_error(e.into()))?;
    let multi_estimate = estimate_from_shift_state(
        &fedsim::PreparedShift {
            state: multi_state,
            spec: multi_spec,
        },
        example,
        estimation,
        tc.master_seed.wrapping_add(3_000),
    )
    .map_err(fed_error)?;
    let multi_sum = multi_estimate.recovered[0];
    let exact_sum: f64 = exact.iter().sum();

    // Exact mode pins the 1e-6 gate; shot mode widens each comparison to 4σ.
    let tolerance = 1e-6f64;
    let bound = |sigma: f64| match estimation {
        EstimationMode::Exact => tolerance,
        EstimationMode::Shots(_) => tolerance.max(4.0 * sigma),
    };

    let mut violations = 0usize;
    let mut max_discrepancy = 0.0f64;
    println!(
        "gradient check over {m} parameters (mode: {:?})",
        estimation
    );
    println!(
        "{:>5} {:>14} {:>14} {:>14} {:>14}  flag",
        "param", "exact", "fin-diff", "single", "indexed"
    );
    for i in 0..m {
        let mut flagged = false;
        let fd_gap = (finite_difference[i] - exact[i]).abs();
        max_discrepancy = max_discrepancy.max(fd_gap);
        if fd_gap > tolerance {
            flagged = true;
        }
        let single_gap = (single_recovered[i] - exact[i]).abs();
        max_discrepancy = max_discrepancy.max(single_gap);
        if single_gap > bound(single_sigmas[i]) {
            flagged = true;
        }
        let indexed_str = match &indexed_recovered {
            Some(values) => {
                let gap = (values[i] - exact[i]).abs();
                max_discrepancy = max_discrepancy.max(gap);
                if gap > bound(indexed_sigmas.as_ref().unwrap()[i]) {
                    flagged = true;
                }
                format!("{:>14.9}", values[i])
            }
            None => format!("{:>14}", "-"),
        };
        if flagged {
            violations += 1;
        }
        println!(
            "{i:>5} {:>14.9} {:>14.9} {:>14.9} {indexed_str}  {}",
            exact[i],
            finite_difference[i],
            single_recovered[i],
            if flagged { "VIOLATION" } else { "ok" }
        );
    }
    let multi_gap = (multi_sum - exact_sum).abs();
    max_discrepancy = max_discrepancy.max(multi_gap);
    let multi_ok = multi_gap <= bound(multi_estimate.std_errors[0]);
    if !multi_ok {
        violations += 1;
    }
    println!(
        "multi-shift sum: recovered {multi_sum:.9}, exact {exact_sum:.9}  {}",
        if multi_ok { "ok" } else { "VIOLATION" }
    );
    println!("max discrepancy: {max_discrepancy:.3e}");

    let report = GradcheckReport {
        mode: match config.estimation.mode {
            EstimationName::Exact => "exact".to_string(),
            EstimationName::Shots => "shots".to_string(),
        },
        tolerance,
        exact,
        finite_difference,
        single_recovered,
        indexed_recovered,
        multi_sum,
        exact_sum,
        max_discrepancy,
        violations,
    };
    if let Some(dir) = out {
        let path = dir.join("gradcheck.json");
        metrics::write_file(&path, &to_json_pretty(&report)?)?;
        println!("report written: {}", path.display());
    }
    if violations > 0 {
        return Err(AppError::Tolerance(format!(
            "{violations} gradient comparisons outside bounds (max discrepancy {max_discrepancy:.3e})"
        )));
    }
    Ok(())
}

fn probe_finite_difference(
    ansatz: &fedchip_core::model::AnsatzSpec,
    theta: &ParamVector<f64>,
    example: &LabeledExample<f64>,
    h: f64,
) -> Result<Vec<f64>, AppError> {
    (0..theta.len())
        .map(|i| {
            let plus =
                loss(ansatz, &theta.shifted(i, h), example).map_err(|e| fed_error(e.into()))?;
            let minus =
                loss(ansatz, &theta.shifted(i, -h), example).map_err(|e| fed_error(e.into()))?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Runs training and writes one metrics line per round plus the ledger
/// summary. Outputs are deterministic for a fixed configuration.
pub fn cmd_train(
    config: &ExperimentConfig,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
    format_override: Option<MetricsFormat>,
) -> Result<(), AppError> {
    let tc = config.to_training_config(seed_override);
    tc.validate().map_err(fed_error)?;
    let started = Instant::now();
    let run = run_training(&tc).map_err(fed_error)?;
    let elapsed = started.elapsed();

    let records: Vec<MetricsRecord> = run.records.iter().map(MetricsRecord::from_round).collect();
    let dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output.directory));
    let formats: Vec<MetricsFormat> = match format_override {
        Some(format) => vec![format],
        None => config.output.formats.clone(),
    };
    for format in &formats {
        match format {
            MetricsFormat::Jsonl => metrics::write_jsonl(&dir.join("metrics.jsonl"), &records)?,
            MetricsFormat::Csv => metrics::write_csv(&dir.join("metrics.csv"), &records)?,
        }
    }

    let initial_mean_loss = run.records.first().map(|r| r.mean_loss);
    let final_mean_loss = if run.records.is_empty() {
        None
    } else {
        let (mean, _) = fedsim::mean_loss_over(&tc.ansatz, &run.final_theta, &run.clients)
            .map_err(fed_error)?;
        Some(mean)
    };
    // Gap to the attainable optimum: this operator family is closed under
    // negation, so loss descends toward -1 on the realizable task.
    let loss_gap_ratio = match (initial_mean_loss, final_mean_loss) {
        (Some(initial), Some(final_loss)) if (1.0 + initial).abs() > 1e-12 => {
            Some((1.0 + final_loss) / (1.0 + initial))
        }
        _ => None,
    };
    let summary = TrainSummary {
        schema_version: METRICS_SCHEMA_VERSION,
        rounds: run.records.len(),
        initial_mean_loss,
        final_mean_loss,
        loss_gap_ratio,
        dropped_client_rounds: run
            .records
            .iter()
            .map(|r| r.dropped_clients.len() as u64)
            .sum(),
        ledger: LedgerSummary::from(ledger_report(
            &run.ledger,
            tc.ansatz.dim(),
            tc.ansatz.param_count(),
        )),
    };
    metrics::write_file(&dir.join("summary.json"), &to_json_pretty(&summary)?)?;

    println!(
        "train: {} rounds, mean loss {} -> {}, metrics in {}",
        summary.rounds,
        summary
            .initial_mean_loss
            .map_or("n/a".to_string(), |v| format!("{v:.6}")),
        summary
            .final_mean_loss
            .map_or("n/a".to_string(), |v| format!("{v:.6}")),
        dir.display()
    );
    eprintln!("train: wall time {} ms", elapsed.as_millis());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecompositionTermDoc {
    pub permutation_bits: Vec<u8>,
    /// The N/2 diagonal 2×2 blocks, row-major.
    pub blocks: Vec<[[f64; 2]; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecompositionDoc {
    pub dim: usize,
    pub reconstruction_error: f64,
    pub terms: Vec<DecompositionTermDoc>,
}

/// Writes the permuted block-diagonal decomposition and its reconstruction
/// error.
pub fn cmd_decompose(matrix_path: &Path, out: Option<&Path>) -> Result<(), AppError> {
    let operator = matio::read_matrix(matrix_path)?;
    let decomposition = permuted_block_decompose(&operator);
    let rebuilt = decomposition
        .reconstruct()
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let mut reconstruction_error = 0.0f64;
    for r in 0..operator.dim() {
        for c in 0..operator.dim() {
            reconstruction_error =
                reconstruction_error.max((rebuilt.entry(r, c) - operator.entry(r, c)).abs());
        }
    }

    let terms = decomposition
        .terms()
        .iter()
        .map(|term| {
            let diag = term.block_diagonal();
            let blocks = (0..operator.dim() / 2)
                .map(|j| {
                    [
                        [diag.entry(2 * j, 2 * j), diag.entry(2 * j, 2 * j + 1)],
                        [
                            diag.entry(2 * j + 1, 2 * j),
                            diag.entry(2 * j + 1, 2 * j + 1),
                        ],
                    ]
                })
                .collect();
            DecompositionTermDoc {
                permutation_bits: term.permutation_bits().to_vec(),
                blocks,
            }
        })
        .collect();
    let doc = DecompositionDoc {
        dim: operator.dim(),
        reconstruction_error,
        terms,
    };

    println!(
        "decomposed {0}x{0} matrix into {1} permuted block-diagonal terms",
        doc.dim,
        doc.terms.len()
    );
    println!("reconstruction error: {reconstruction_error:.3e}");
    if let Some(dir) = out {
        let path = dir.join("decomposition.json");
        metrics::write_file(&path, &to_json_pretty(&doc)?)?;
        println!("decomposition written: {}", path.display());
    } else {
        println!("{}", String::from_utf8_lossy(&to_json_pretty(&doc)?));
    }

    if reconstruction_error >= 1e-12 {
        return Err(AppError::Tolerance(format!(
            "reconstruction error {reconstruction_error:.3e} at or above 1e-12"
        )));
    }
    Ok(())
}

fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, AppError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| AppError::Runtime(format!("serializing report: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}
