//! Payload and watermark length across lambda at a fixed token budget.
//!
//! `cargo run --release --example ablation_sweep -- 50` runs 50 trials per cell.

use segmark::cli::BUNDLED_CORPUS;
use segmark::metrics::{sweep, SweepConfig, SweepGrid};
use segmark::providers::NgramModel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let trials = std::env::args().nth(1).map_or(Ok(20), |a| a.parse())?;
    let model = NgramModel::train(BUNDLED_CORPUS, 3, 0.0)?;
    let docs: Vec<&str> = BUNDLED_CORPUS.lines().collect();

    // Messages longer than the budget, so WL is what fits in 256 tokens.
    let config = SweepConfig {
        trials,
        message_bits: (4096, 4096),
        max_tokens: 256,
        ..SweepConfig::default()
    };
    let grid = SweepGrid {
        epsilon: vec![20, 16, 12, 8],
        ..SweepGrid::default()
    };
    let report = sweep(&grid, &docs, &model, &config)?;
    print!("{}", report.to_csv()?);
    Ok(())
}
