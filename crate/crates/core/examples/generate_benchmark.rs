//! Writes a synthetic benchmark of seed tables, derived versions and a
//! ground-truth manifest.
//!
//! cargo run --example generate_benchmark -- [out_dir]

use saved::benchgen::{generate_benchmark, BenchConfig, Provenance};

fn main() -> saved::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "bench".into());
    let bench = generate_benchmark(&BenchConfig {
        families: 3,
        versions_per_seed: 4,
        decoys_per_family: 1,
        seed: 11,
        ..BenchConfig::default()
    })?;
    for record in &bench.manifest.tables {
        match &record.provenance {
            Provenance::Seed => println!("{:<12} seed", record.id),
            Provenance::Decoy => println!("{:<12} decoy (same schema, unrelated data)", record.id),
            Provenance::Derived { parent, spec } => println!("{:<12} <- {parent}: {spec}", record.id),
        }
    }
    bench.write(&out)?;
    println!(
        "{} tables, {} version pairs written to {out}",
        bench.tables.len(),
        bench.manifest.version_pairs.len()
    );
    Ok(())
}
