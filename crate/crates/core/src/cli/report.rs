use std::fs;
use std::path::{Path, PathBuf};

use super::run::{generator_samples, glyph_populations, read_checkpoint, read_manifest, GanCheckpoint, RunManifest};
use crate::error::{Error, Result};
use crate::models::{CharLm, ClassifierNet, WordLm};
use crate::reports::{accuracy_histogram, image_grid_pgm, oov_rate_by_position, top_oov_words};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportKind {
    Grid,
    OovProfile,
    TopOov,
    Histogram,
}

impl ReportKind {
    pub fn parse(s: &str) -> Result<Self> {
        <Self as clap::ValueEnum>::from_str(s, false).map_err(|_| Error::Config(format!("unknown report kind `{s}`")))
    }
}

/// Overrides for regenerated reports; `None` reuses the run's settings.
#[derive(Clone, Debug, Default)]
pub struct ReportOptions {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub model: Option<String>,
}

fn is_within(child: &Path, parent: &Path) -> bool {
    let canon = |p: &Path| {
        let mut p = p.to_path_buf();
        let mut tail = Vec::new();
        while !p.exists() {
            match (p.file_name().map(|n| n.to_os_string()), p.parent()) {
                (Some(name), Some(up)) => {
                    tail.push(name);
                    p = up.to_path_buf();
                }
                _ => break,
            }
        }
        let mut base = fs::canonicalize(if p.as_os_str().is_empty() { Path::new(".") } else { &p })
            .unwrap_or(p);
        base.extend(tail.into_iter().rev());
        base
    };
    canon(child).starts_with(canon(parent))
}

/// Regenerates one report kind from the checkpoints in `run_dir`, writing
/// into `out`. Never writes inside `run_dir`.
pub fn regenerate(run_dir: &Path, kind: ReportKind, out: &Path, opts: &ReportOptions) -> Result<Vec<PathBuf>> {
    if is_within(out, run_dir) {
        return Err(Error::Config(format!(
            "report output {} lies inside the run directory {}",
            out.display(),
            run_dir.display()
        )));
    }
    let m = read_manifest(run_dir)?;
    let r = &m.scenario.report;
    let trained = |prefix: &str| -> Vec<String> {
        m.models
            .iter()
            .filter(|x| x.checkpoint.is_some() && x.name.starts_with(prefix))
            .filter(|x| opts.model.as_deref().is_none_or(|want| want == x.name))
            .map(|x| x.name.clone())
            .collect()
    };
    let mut outputs: Vec<(String, Vec<u8>)> = Vec::new();
    match kind {
        ReportKind::Grid => {
            let names = trained("gan-");
            require(&m, &names, "a GAN")?;
            for name in names {
                let ck: GanCheckpoint = read_checkpoint(run_dir, &name)?;
                let n = r.grid_rows * r.grid_cols;
                let samples = generator_samples(&ck.generator, n, opts.seed.unwrap_or(m.seeds.grid))?;
                let side = (ck.generator.arch.output as f64).sqrt() as usize;
                let pgm = image_grid_pgm(&samples, side, r.grid_rows, r.grid_cols, &m.run_id)?;
                outputs.push((format!("{}.grid-{name}.pgm", m.run_id), pgm));
            }
        }
        ReportKind::OovProfile => {
            require(&m, &trained("word-lm"), "a word LM")?;
            let lm: WordLm = read_checkpoint(run_dir, "word-lm")?;
            let samples = opts.samples.unwrap_or(r.lm_samples);
            let p = oov_rate_by_position(&lm, samples, r.sample_max_len, opts.seed.unwrap_or(m.seeds.sampling))?;
            outputs.push((format!("{}.oov-by-position.csv", m.run_id), p.to_csv(&m.run_id).into_bytes()));
        }
        ReportKind::TopOov => {
            require(&m, &trained("char-lm"), "a char LM")?;
            let lm: CharLm = read_checkpoint(run_dir, "char-lm")?;
            let samples = opts.samples.unwrap_or(r.lm_samples);
            let top = top_oov_words(&lm, r.top_k, samples, r.sample_max_len, opts.seed.unwrap_or(m.seeds.sampling))?;
            outputs.push((format!("{}.top-oov-words.csv", m.run_id), top.to_csv(&m.run_id).into_bytes()));
        }
        ReportKind::Histogram => {
            let net: ClassifierNet = read_checkpoint(run_dir, "classifier")?;
            let (_, bugged, _) = glyph_populations(&m.scenario)?;
            let h = accuracy_histogram(&bugged, &net, r.histogram_bins)?;
            outputs.push((format!("{}.accuracy-histogram.csv", m.run_id), h.to_csv(&m.run_id).into_bytes()));
        }
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (name, bytes) in outputs {
        let path = out.join(name);
        fs::write(&path, bytes)?;
        written.push(path);
    }
    Ok(written)
}

fn require(m: &RunManifest, names: &[String], what: &str) -> Result<()> {
    if names.is_empty() {
        return Err(Error::MissingCheckpoint(PathBuf::from(format!(
            "run {} has no trained {what} checkpoint",
            m.run_id
        ))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_kebab_case() {
        assert_eq!(ReportKind::parse("oov-profile").unwrap(), ReportKind::OovProfile);
        assert_eq!(ReportKind::parse("top-oov").unwrap(), ReportKind::TopOov);
        assert!(matches!(ReportKind::parse("bogus"), Err(Error::Config(_))));
    }

    #[test]
    fn nested_output_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        fs::create_dir_all(&run).unwrap();
        assert!(is_within(&run.join("reports/new"), &run));
        assert!(is_within(&run.join("../run/x"), &run));
        assert!(!is_within(&dir.path().join("elsewhere"), &run));
    }

    #[test]
    fn missing_run_is_a_missing_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let err = regenerate(&dir.path().join("nope"), ReportKind::Grid, &dir.path().join("out"), &Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
    }
}
