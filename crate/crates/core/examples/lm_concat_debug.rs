//! Debugging a token-concatenation bug with federated language models.
//!
//! A fraction of sentences lose the space between their first two words.
//! The word LM then over-generates OOV at the first position, and the
//! character LM trained on OOV words surfaces the glued pairs directly.

use fedgen::cli::scenario::{bundled_scenario, DatasetBlock};
use fedgen::cli::run_scenario;

fn main() -> fedgen::Result<()> {
    let mut cfg = bundled_scenario("lm-concat-100")?;
    cfg.name = "lm-concat-demo".into();
    if let DatasetBlock::Text { users, .. } = &mut cfg.dataset {
        *users = 120;
    }
    cfg.fed.rounds = 60;
    cfg.report.lm_samples = 4000;

    let out = std::env::temp_dir().join(format!("fedgen-{}-{}", cfg.name, std::process::id()));
    let manifest = run_scenario(&cfg, &out)?;
    let s = &manifest.summary;
    let f = |k: &str| s[k].as_f64().unwrap_or(f64::NAN);
    println!("run {} in {}", manifest.run_id, out.display());
    println!("corpus OOV rate: clean {:.4}, bugged {:.4}", f("clean_oov_rate"), f("overall_oov_rate"));
    println!("word LM first-position OOV over later positions: {:.2}", f("word_lm_head_ratio"));
    println!("char LM top words with a space: {}", s["char_lm_top_with_space"]);
    if let Some(words) = s["char_lm_top_words"].as_array() {
        for w in words.iter().take(10) {
            println!("  {w}");
        }
    }
    Ok(())
}
