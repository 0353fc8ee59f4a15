//! Regenerates tests/golden/reference_mean_loss.json:
//!
//!   cargo run -p fedchip-core --example golden_trace \
//!     > crates/fedchip-core/tests/golden/reference_mean_loss.json

use fedchip_core::fedsim::{mean_loss_over, run_training, TrainingConfig};

fn main() {
    let config = TrainingConfig::reference();
    let run = run_training(&config).unwrap();
    let trace: Vec<f64> = run.records.iter().map(|r| r.mean_loss).collect();
    let (final_loss, _) = mean_loss_over(&config.ansatz, &run.final_theta, &run.clients).unwrap();
    let doc = serde_json::json!({
        "mean_loss": trace,
        "final_mean_loss": final_loss,
    });
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
}
