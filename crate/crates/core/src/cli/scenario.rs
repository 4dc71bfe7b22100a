use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{BugKind, BugSpec};
use crate::dp::DpSpec;
use crate::error::{Error, Result};
use crate::fed_sim::FedConfig;
use crate::models::DenseArch;
use crate::selection::{FixtureSpec, Thresholds};

pub const SCHEMA_VERSION: u32 = 1;

/// One reproducible experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetBlock,
    #[serde(default)]
    pub bug: Option<BugSpec>,
    pub model: ModelBlock,
    pub fed: FedBlock,
    #[serde(default)]
    pub classifier: Option<FixtureSpec>,
    #[serde(default)]
    pub selection: Option<SelectionBlock>,
    #[serde(default)]
    pub report: ReportBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetBlock {
    Glyphs {
        users: usize,
        examples_per_user: (usize, usize),
        classes: usize,
        side: usize,
        seed: u64,
    },
    Text {
        users: usize,
        sentences_per_user: usize,
        vocab_size: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelBlock {
    Gan {
        generator: DenseArch,
        discriminator: DenseArch,
    },
    Lm {
        #[serde(default)]
        word: Option<LmSize>,
        #[serde(default)]
        char: Option<LmSize>,
        /// Longest training sequence, end marker included.
        max_steps: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSize {
    pub embed: usize,
    pub hidden: usize,
    /// Overrides `fed.clip` for this model.
    #[serde(default)]
    pub clip: Option<f64>,
}

/// How `δ` is chosen for a population of `N` users.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum DeltaPreset {
    #[serde(rename = "inv-n")]
    #[value(name = "inv-n")]
    InvN,
    #[serde(rename = "inv-100n")]
    #[value(name = "inv-100n")]
    Inv100N,
    #[serde(rename = "explicit")]
    #[value(name = "explicit")]
    Explicit,
}

impl DeltaPreset {
    pub fn resolve(self, population: usize, explicit: Option<f64>) -> Result<f64> {
        match (self, explicit) {
            (DeltaPreset::InvN, None) => Ok(1.0 / population as f64),
            (DeltaPreset::Inv100N, None) => Ok(1.0 / (100.0 * population as f64)),
            (DeltaPreset::Explicit, Some(d)) => Ok(d),
            (DeltaPreset::Explicit, None) => Err(Error::Config("explicit delta preset needs a delta value".into())),
            (_, Some(_)) => Err(Error::Config("a delta value is only allowed with the explicit preset".into())),
        }
    }
}

fn default_delta_preset() -> DeltaPreset {
    DeltaPreset::InvN
}

fn one() -> usize {
    1
}

/// Federated hyperparameters; the population size is filled in per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedBlock {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub local_lr: f64,
    #[serde(default)]
    pub gan_steps: usize,
    #[serde(default)]
    pub disc_lr: f64,
    #[serde(default)]
    pub gen_lr: f64,
    #[serde(default)]
    pub gp_lambda: f64,
    #[serde(default = "one")]
    pub gen_updates_per_round: usize,
    pub server_lr: f64,
    #[serde(default)]
    pub momentum: f64,
    pub clip: f64,
    pub noise_multiplier: f64,
    pub cohort_size: usize,
    pub rounds: u64,
    #[serde(default = "default_delta_preset")]
    pub delta_preset: DeltaPreset,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl FedBlock {
    pub fn config(&self, population: usize, clip: Option<f64>) -> Result<FedConfig> {
        let cfg = FedConfig {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            local_lr: self.local_lr,
            gan_steps: self.gan_steps,
            disc_lr: self.disc_lr,
            gen_lr: self.gen_lr,
            gp_lambda: self.gp_lambda,
            gen_updates_per_round: self.gen_updates_per_round,
            server_lr: self.server_lr,
            momentum: self.momentum,
            dp: DpSpec {
                clip: clip.unwrap_or(self.clip),
                noise_multiplier: self.noise_multiplier,
                cohort_size: self.cohort_size,
                population,
                rounds: self.rounds,
                delta: self.delta_preset.resolve(population.max(1), self.delta)?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Which pair of subpopulations the GANs are trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectionBlock {
    /// Low- and high-accuracy users. Thresholds default to the clean-population percentiles.
    ByUserAccuracy {
        #[serde(default)]
        thresholds: Option<Thresholds>,
    },
    /// Misclassified and correctly classified examples.
    ByExample { min_examples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportBlock {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub histogram_bins: usize,
    pub lm_samples: usize,
    pub sample_max_len: usize,
    pub top_k: usize,
    pub text_samples: usize,
}

impl Default for ReportBlock {
    fn default() -> Self {
        ReportBlock {
            grid_rows: 8,
            grid_cols: 8,
            histogram_bins: 20,
            lm_samples: 10_000,
            sample_max_len: 16,
            top_k: 10,
            text_samples: 20,
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file, or a bundled scenario when `path` names one.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Self::from_json(&text),
            Err(e) => match path.to_str().and_then(bundled) {
                Some(text) if !path.exists() => Self::from_json(text),
                _ => Err(Error::Config(format!("cannot read scenario {}: {e}", path.display()))),
            },
        }
    }

    /// Checks every block and their consistency. Performs no I/O.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return bad(format!("scenario name {:?} must be nonempty [A-Za-z0-9_-]", self.name));
        }
        if let Some(b) = &self.bug {
            b.validate().map_err(config_err)?;
        }
        let r = &self.report;
        if r.grid_rows == 0 || r.grid_cols == 0 || r.histogram_bins == 0 || r.lm_samples == 0 || r.top_k == 0 {
            return bad("report sizes must be >= 1".into());
        }
        if r.sample_max_len < 10 {
            return bad("report.sample_max_len must be >= 10".into());
        }
        if self.fed.cohort_size == 0 || self.fed.rounds == 0 {
            return bad("fed.cohort_size and fed.rounds must be >= 1".into());
        }
        self.fed.config(self.fed.cohort_size.max(1), None).map_err(config_err)?;
        match (&self.dataset, &self.model) {
            (
                DatasetBlock::Glyphs {
                    users,
                    examples_per_user: (lo, hi),
                    classes,
                    side,
                    ..
                },
                ModelBlock::Gan {
                    generator,
                    discriminator,
                },
            ) => {
                if *users == 0 || *lo == 0 || lo > hi || !(2..=10).contains(classes) || *side < 8 {
                    return bad("glyph dataset needs users >= 1, 1 <= lo <= hi, 2..=10 classes, side >= 8".into());
                }
                let pixels = side * side;
                if generator.output != pixels || discriminator.input != pixels || discriminator.output != 1 {
                    return bad(format!(
                        "GAN shapes must be generator -> {pixels}, {pixels} -> discriminator -> 1"
                    ));
                }
                if generator.input == 0 {
                    return bad("generator needs a noise input".into());
                }
                if self.fed.gan_steps == 0 {
                    return bad("GAN training needs fed.gan_steps >= 1".into());
                }
                if matches!(&self.bug, Some(b) if b.kind != BugKind::PixelInversion) {
                    return bad("image datasets support only the pixel-inversion bug".into());
                }
                match (&self.selection, &self.classifier) {
                    (Some(_), None) => return bad("selection needs a classifier block".into()),
                    (None, Some(_)) => return bad("classifier block given without selection".into()),
                    (Some(_), Some(c)) if c.arch.input != pixels || c.arch.output != *classes => {
                        return bad(format!("classifier must map {pixels} pixels to {classes} classes"));
                    }
                    (Some(_), Some(c)) if c.epochs == 0 || c.batch_size == 0 || !(c.lr > 0.0) => {
                        return bad("classifier needs epochs, batch_size >= 1 and lr > 0".into());
                    }
                    _ => {}
                }
                match &self.selection {
                    Some(SelectionBlock::ByExample { min_examples: 0 }) => {
                        return bad("selection.min_examples must be >= 1".into())
                    }
                    Some(SelectionBlock::ByUserAccuracy { thresholds: Some(t) }) => {
                        t.validate().map_err(config_err)?
                    }
                    _ => {}
                }
                if self.fed.cohort_size > *users {
                    return bad(format!("cohort of {} exceeds {users} users", self.fed.cohort_size));
                }
            }
            (
                DatasetBlock::Text {
                    users,
                    sentences_per_user,
                    vocab_size,
                    ..
                },
                ModelBlock::Lm { word, char, max_steps },
            ) => {
                if *users == 0 || *sentences_per_user == 0 || *vocab_size == 0 {
                    return bad("text dataset needs users, sentences_per_user and vocab_size >= 1".into());
                }
                if word.is_none() && char.is_none() {
                    return bad("an LM scenario needs a word or char model".into());
                }
                for m in word.iter().chain(char.iter()) {
                    if m.embed == 0 || m.hidden == 0 || matches!(m.clip, Some(c) if !(c > 0.0)) {
                        return bad("LM sizes must be >= 1 and clip overrides > 0".into());
                    }
                }
                if *max_steps < 2 {
                    return bad("model.max_steps must be >= 2".into());
                }
                if matches!(&self.bug, Some(b) if b.kind != BugKind::TokenConcatenation) {
                    return bad("text datasets support only the token-concatenation bug".into());
                }
                if self.selection.is_some() || self.classifier.is_some() {
                    return bad("selection and classifier apply to image scenarios only".into());
                }
                if self.fed.cohort_size > *users {
                    return bad(format!("cohort of {} exceeds {users} users", self.fed.cohort_size));
                }
            }
            _ => return bad("GAN models need a glyph dataset and LMs a text dataset".into()),
        }
        Ok(())
    }

    /// Hash of the scenario with the output location removed; names every report.
    pub fn run_id(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }
}

const BUNDLED: &[(&str, &str)] = &[
    ("gan-inversion-50", include_str!("../../scenarios/gan-inversion-50.json")),
    ("gan-no-bug", include_str!("../../scenarios/gan-no-bug.json")),
    ("gan-by-example-50", include_str!("../../scenarios/gan-by-example-50.json")),
    ("gan-by-example-no-bug", include_str!("../../scenarios/gan-by-example-no-bug.json")),
    ("lm-concat-0", include_str!("../../scenarios/lm-concat-0.json")),
    ("lm-concat-1", include_str!("../../scenarios/lm-concat-1.json")),
    ("lm-concat-10", include_str!("../../scenarios/lm-concat-10.json")),
    ("lm-concat-100", include_str!("../../scenarios/lm-concat-100.json")),
];

/// Names of the scenarios compiled into the binary.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// JSON text of a bundled scenario.
pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn bundled_scenario(name: &str) -> Result<ScenarioConfig> {
    ScenarioConfig::from_json(bundled(name).ok_or_else(|| Error::Config(format!("no bundled scenario {name:?}")))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_validate() {
        for name in bundled_names() {
            let s = bundled_scenario(name).unwrap();
            assert_eq!(s.name, name);
        }
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let text = bundled("gan-inversion-50").unwrap();
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["fed"]["noise"] = 1.0.into();
        assert!(matches!(ScenarioConfig::from_json(&v.to_string()), Err(Error::Config(_))));
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["dataset"]["colour"] = 1.into();
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
        v["schema_version"] = 2.into();
        assert!(ScenarioConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn inconsistent_blocks_are_rejected() {
        let gan = bundled_scenario("gan-inversion-50").unwrap();
        let lm = bundled_scenario("lm-concat-10").unwrap();
        let mut s = gan.clone();
        s.dataset = lm.dataset.clone();
        assert!(s.validate().is_err());
        let mut s = gan.clone();
        s.bug = lm.bug.clone();
        assert!(s.validate().is_err());
        let mut s = gan.clone();
        s.classifier = None;
        assert!(s.validate().is_err());
        let mut s = gan.clone();
        s.fed.noise_multiplier = -1.0;
        assert!(s.validate().is_err());
        let mut s = lm.clone();
        s.model = ModelBlock::Lm {
            word: None,
            char: None,
            max_steps: 16,
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn delta_presets() {
        assert_eq!(DeltaPreset::InvN.resolve(250_000, None).unwrap(), 4e-6);
        assert_eq!(DeltaPreset::Inv100N.resolve(250_000, None).unwrap(), 4e-8);
        assert_eq!(DeltaPreset::Explicit.resolve(7, Some(1e-3)).unwrap(), 1e-3);
        assert!(DeltaPreset::Explicit.resolve(7, None).is_err());
        assert!(DeltaPreset::InvN.resolve(7, Some(1e-3)).is_err());
    }

    #[test]
    fn run_id_ignores_output_dir_only() {
        let a = bundled_scenario("lm-concat-1").unwrap();
        let mut b = a.clone();
        b.output_dir = Some("/tmp/elsewhere".into());
        assert_eq!(a.run_id(), b.run_id());
        b.seed += 1;
        assert_ne!(a.run_id(), b.run_id());
    }
}
