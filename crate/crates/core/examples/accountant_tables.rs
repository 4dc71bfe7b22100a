//! Privacy spend for a few DP-FedAvg configurations, computed directly
//! with the RDP accountant and again through the CLI row builder.
//!
//! ```text
//! cargo run --example accountant_tables
//! ```

use fedgen::cli::accountant::rows_to_table;
use fedgen::cli::{accountant_rows, AccountantArgs, DeltaPreset};
use fedgen::dp::{compose_rounds, default_orders, privacy_spend, rdp_subsampled_gaussian, rdp_to_eps};

fn main() -> fedgen::Result<()> {
    // One large-population setting, built up step by step.
    let (cohort, population, z, rounds, delta) = (1000usize, 250_000usize, 1.0, 1000u64, 4e-8);
    let q = cohort as f64 / population as f64;
    let per_round = rdp_subsampled_gaussian(q, z, &default_orders())?;
    let total = compose_rounds(&per_round, rounds);
    let coarse = rdp_to_eps(&total, delta)?;
    let refined = privacy_spend(q, z, rounds, delta)?;
    println!("q={q} z={z} T={rounds} delta={delta:e}");
    println!("  default order grid: eps={:.4} at alpha={}", coarse.epsilon, coarse.order);
    println!("  refined order grid: eps={:.4} at alpha={}", refined.epsilon, refined.order);

    // Several rows at once; scalar arguments broadcast over the lists.
    let rows = accountant_rows(&AccountantArgs {
        cohort_size: vec![100, 1000, 5000],
        population: vec![2_000_000],
        noise_multiplier: vec![1.0],
        clip: vec![],
        rounds: vec![2000],
        delta: vec![],
        delta_preset: Some(DeltaPreset::InvN),
    })?;
    print!("\n{}", rows_to_table(&rows));
    Ok(())
}
