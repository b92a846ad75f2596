//! Generates a small benchmark, trains the desk-scale encoder on it and
//! compares test-split metrics with the untrained encoder.
//!
//! cargo run --release --example train_benchmark -- [seed]

use std::time::Instant;

use saved::experiment::run_reference;

fn main() -> saved::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = Instant::now();
    let report = run_reference(seed)?;
    println!(
        "{} epochs, best epoch {}",
        report.outcome.history.len(),
        report.outcome.best_epoch
    );
    println!("untrained: {}", report.baseline.summary_line());
    println!("trained:   {}", report.trained.summary_line());
    print!("{}", report.trained.to_csv());
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
