//! Debugging a pixel-inversion bug with federated GANs, end to end.
//!
//! A quarter of the writers have their images inverted. A reference
//! classifier splits users by accuracy, one DP-FedAvg GAN is trained per
//! side, and the generated grids show which side holds the bug. The
//! bundled scenario is shrunk here so it finishes in seconds.

use fedgen::cli::scenario::{bundled_scenario, DatasetBlock};
use fedgen::cli::run_scenario;

fn main() -> fedgen::Result<()> {
    let mut cfg = bundled_scenario("gan-inversion-50")?;
    cfg.name = "gan-inversion-demo".into();
    if let DatasetBlock::Glyphs { users, .. } = &mut cfg.dataset {
        *users = 160;
    }
    cfg.fed.rounds = 40;
    if let Some(bug) = cfg.bug.as_mut() {
        bug.fraction = 0.25;
    }

    let out = std::env::temp_dir().join(format!("fedgen-{}-{}", cfg.name, std::process::id()));
    let manifest = run_scenario(&cfg, &out)?;
    println!("run {} in {}", manifest.run_id, out.display());
    for m in &manifest.models {
        match (&m.skipped, m.epsilon) {
            (Some(why), _) => println!("  {:<10} skipped: {why}", m.name),
            (None, eps) => println!("  {:<10} N={:<4} eps={:?}", m.name, m.population, eps),
        }
    }
    let s = &manifest.summary;
    for key in ["low_bugged_members", "high_bugged_members", "gan-low_mean_intensity", "gan-high_mean_intensity"] {
        println!("  {key} = {}", s[key]);
    }
    for path in manifest.files.keys().filter(|p| p.ends_with(".pgm")) {
        println!("  grid: {}", out.join(path).display());
    }
    Ok(())
}
