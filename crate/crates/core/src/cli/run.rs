use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::scenario::{DatasetBlock, ModelBlock, ScenarioConfig, SelectionBlock};
use crate::datasets::{
    apply_concat_bug, apply_pixel_inversion, make_glyph_population, make_text_population, overall_oov_rate,
    CharVocab, ClientDataset, Image, ImagePopulation, Style, TextPopulation, Vocabulary,
};
use crate::dp::PrivacySpend;
use crate::error::{Error, Result};
use crate::fed_sim::{dp_fedavg_gan_round, dp_fedavg_round, FedConfig, GanTrainer, LmObjective, RoundReport, ServerState};
use crate::models::{CharLm, DenseArch, DiscriminatorNet, GeneratorNet, LmArch, RecurrentLm, WordLm};
use crate::reports::{
    accuracy_histogram, bright_fraction, image_grid_pgm, mean_intensity, oov_rate_by_position, quantize,
    top_oov_words,
};
use crate::rng::{self, purpose};
use crate::selection::{
    calibrate_thresholds, pooled_accuracy, select_by_example, select_by_user, train_fixture_classifier,
    AccuracySide, ExampleKind, Subpopulation, Thresholds,
};

pub const MANIFEST: &str = "manifest.json";

/// Everything needed to trace and regenerate a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub scenario: ScenarioConfig,
    pub seeds: Seeds,
    pub models: Vec<ModelRecord>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    pub summary: serde_json::Value,
    /// SHA-256 of every file written, keyed by path relative to the run directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    pub dataset: u64,
    pub bug: Option<u64>,
    pub grid: u64,
    pub sampling: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRecord {
    pub name: String,
    /// Users the model was trained on (`N`).
    pub population: usize,
    pub checkpoint: Option<String>,
    pub config: Option<FedConfig>,
    /// Final `ε`; `None` when training added no noise or was skipped.
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub order: Option<f64>,
    pub skipped: Option<String>,
}

/// Checkpoint of one trained GAN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanCheckpoint {
    pub generator: GeneratorNet,
    pub discriminator: ServerState,
}

/// Output files of a run, relative paths.
pub fn report_path(run_id: &str, kind: &str, ext: &str) -> String {
    format!("reports/{run_id}.{kind}.{ext}")
}

pub fn checkpoint_path(model: &str) -> String {
    format!("checkpoints/{model}.json")
}

struct RunWriter {
    dir: PathBuf,
    files: BTreeMap<String, String>,
    rounds: String,
    privacy: String,
}

impl RunWriter {
    fn new(dir: &Path) -> Result<Self> {
        if dir.exists() && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::Config(format!("output directory {} is not empty", dir.display())));
        }
        fs::create_dir_all(dir.join("reports"))?;
        fs::create_dir_all(dir.join("checkpoints"))?;
        Ok(RunWriter {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
            rounds: "model,round,cohort_size,mean_loss,gen_loss,clip_fraction,mean_pre_clip_norm,sigma,epsilon\n".into(),
            privacy: "model,round,population,cohort_size,noise_multiplier,delta,epsilon,order\n".into(),
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(rel), bytes)?;
        self.files.insert(rel.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn log_round(&mut self, model: &str, cfg: &FedConfig, r: &RoundReport) {
        let norms = r.pre_clip_norms.iter().sum::<f64>() / r.pre_clip_norms.len().max(1) as f64;
        let gen = r.gen_loss.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            self.rounds,
            "{model},{},{},{},{gen},{},{norms},{},{}",
            r.round + 1,
            r.cohort.len(),
            r.mean_loss,
            r.clip_fraction,
            r.sigma,
            r.spend.epsilon
        )
        .unwrap();
        writeln!(
            self.privacy,
            "{model},{},{},{},{},{},{},{}",
            r.round + 1,
            cfg.dp.population,
            cfg.dp.cohort_size,
            cfg.dp.noise_multiplier,
            r.spend.delta,
            r.spend.epsilon,
            r.spend.order
        )
        .unwrap();
    }
}

fn record(name: &str, cfg: &FedConfig, spend: PrivacySpend) -> ModelRecord {
    let finite = spend.epsilon.is_finite();
    ModelRecord {
        name: name.into(),
        population: cfg.dp.population,
        checkpoint: Some(checkpoint_path(name)),
        config: Some(cfg.clone()),
        epsilon: finite.then_some(spend.epsilon),
        delta: Some(spend.delta),
        order: finite.then_some(spend.order),
        skipped: None,
    }
}

fn skipped(name: &str, population: usize, reason: String) -> ModelRecord {
    ModelRecord {
        name: name.into(),
        population,
        checkpoint: None,
        config: None,
        epsilon: None,
        delta: None,
        order: None,
        skipped: Some(reason),
    }
}

/// Runs a validated scenario into `dir`, which must be absent or empty.
pub fn run_scenario(cfg: &ScenarioConfig, dir: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut w = RunWriter::new(dir)?;
    let run_id = cfg.run_id();
    let master = cfg.seed;
    let seeds = Seeds {
        master,
        dataset: match cfg.dataset {
            DatasetBlock::Glyphs { seed, .. } | DatasetBlock::Text { seed, .. } => seed,
        },
        bug: cfg.bug.as_ref().map(|b| b.seed),
        grid: rng::derive_seed(master, &[purpose::GENERATOR, u64::MAX]),
        sampling: rng::derive_seed(master, &[purpose::SAMPLING, u64::MAX]),
    };
    let mut manifest = RunManifest {
        schema_version: super::scenario::SCHEMA_VERSION,
        run_id: run_id.clone(),
        scenario: ScenarioConfig {
            output_dir: None,
            ..cfg.clone()
        },
        seeds,
        models: Vec::new(),
        thresholds: None,
        summary: serde_json::Value::Null,
        files: BTreeMap::new(),
    };
    match &cfg.model {
        ModelBlock::Gan { .. } => run_gan(cfg, &mut w, &mut manifest)?,
        ModelBlock::Lm { .. } => run_lm(cfg, &mut w, &mut manifest)?,
    }
    let (rounds, privacy) = (std::mem::take(&mut w.rounds), std::mem::take(&mut w.privacy));
    w.write("rounds.csv", rounds.as_bytes())?;
    w.write("privacy.csv", privacy.as_bytes())?;
    let summary = manifest.summary.clone();
    w.write_json(&report_path(&run_id, "summary", "json"), &summary)?;
    manifest.files = w.files.clone();
    w.write_json(MANIFEST, &manifest)?;
    Ok(manifest)
}

/// The clean and (possibly) bugged image populations of a scenario.
pub fn glyph_populations(cfg: &ScenarioConfig) -> Result<(ImagePopulation, ImagePopulation, Vec<u64>)> {
    let DatasetBlock::Glyphs {
        users,
        examples_per_user,
        classes,
        side,
        seed,
    } = cfg.dataset
    else {
        return Err(Error::Config("not an image scenario".into()));
    };
    let clean = make_glyph_population(users, examples_per_user, classes, side, seed)?;
    let (bugged, affected) = match &cfg.bug {
        Some(b) => apply_pixel_inversion(&clean, b.fraction, b.seed)?,
        None => (clean.clone(), Vec::new()),
    };
    Ok((clean, bugged, affected))
}

/// The clean and (possibly) bugged text populations and the clean vocabulary.
pub fn text_populations(cfg: &ScenarioConfig) -> Result<(TextPopulation, TextPopulation, Vocabulary, usize)> {
    let DatasetBlock::Text {
        users,
        sentences_per_user,
        vocab_size,
        seed,
    } = cfg.dataset
    else {
        return Err(Error::Config("not a text scenario".into()));
    };
    let clean = make_text_population(users, sentences_per_user, seed)?;
    let vocab = clean.vocabulary(vocab_size);
    let (bugged, affected) = match &cfg.bug {
        Some(b) => {
            let (p, stats) = apply_concat_bug(&clean, b.fraction, b.seed)?;
            (p, stats.affected)
        }
        None => (clean.clone(), 0),
    };
    Ok((clean, bugged, vocab, affected))
}

/// 8-bit samples of a generator on the run's fixed grid noise.
pub fn generator_samples(gen: &GeneratorNet, n: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    let out = gen.generate(&gen.sample_noise(n, seed))?;
    Ok(out.data().chunks(gen.arch.output).map(quantize).collect())
}

fn run_gan(cfg: &ScenarioConfig, w: &mut RunWriter, m: &mut RunManifest) -> Result<()> {
    let ModelBlock::Gan {
        generator,
        discriminator,
    } = &cfg.model
    else {
        unreachable!("checked by caller")
    };
    let run_id = m.run_id.clone();
    let (clean, bugged, affected) = glyph_populations(cfg)?;
    let mut summary = serde_json::Map::new();
    summary.insert("users".into(), bugged.clients.len().into());
    summary.insert("bugged_users".into(), affected.len().into());

    let mut subpops: Vec<(String, Vec<ClientDataset<Image>>)> = Vec::new();
    if let (Some(sel), Some(spec)) = (&cfg.selection, &cfg.classifier) {
        let net = train_fixture_classifier(&clean, spec)?;
        w.write_json(&checkpoint_path("classifier"), &net)?;
        summary.insert("classifier_clean_accuracy".into(), pooled_accuracy(&net, &clean)?.into());
        summary.insert("classifier_accuracy".into(), pooled_accuracy(&net, &bugged)?.into());
        let hist = accuracy_histogram(&bugged, &net, cfg.report.histogram_bins)?;
        w.write(&report_path(&run_id, "accuracy-histogram", "csv"), hist.to_csv(&run_id).as_bytes())?;
        let chosen: Vec<(&str, Subpopulation)> = match sel {
            SelectionBlock::ByUserAccuracy { thresholds } => {
                let t = match thresholds {
                    Some(t) => *t,
                    None => calibrate_thresholds(&clean, &net)?,
                };
                m.thresholds = Some(t);
                vec![
                    ("low", select_by_user(&bugged, &net, AccuracySide::Low, t)?),
                    ("high", select_by_user(&bugged, &net, AccuracySide::High, t)?),
                ]
            }
            SelectionBlock::ByExample { min_examples } => vec![
                (
                    "misclassified",
                    select_by_example(&bugged, &net, ExampleKind::Misclassified, *min_examples)?,
                ),
                ("correct", select_by_example(&bugged, &net, ExampleKind::Correct, *min_examples)?),
            ],
        };
        for (name, sub) in chosen {
            w.write_json(&report_path(&run_id, &format!("subpopulation-{name}"), "json"), &sub)?;
            let share = sub.len() as f64 / bugged.clients.len() as f64;
            summary.insert(format!("{name}_fraction"), share.into());
            let bugged_members = sub.members.iter().filter(|id| affected.binary_search(id).is_ok()).count();
            summary.insert(format!("{name}_bugged_members"), bugged_members.into());
            subpops.push((name.to_string(), sub.extract(&bugged)?));
        }
    } else {
        subpops.push(("all".into(), bugged.clients.clone()));
    }

    for (k, (name, clients)) in subpops.iter().enumerate() {
        let model = format!("gan-{name}");
        if clients.len() < cfg.fed.cohort_size {
            let reason = format!("{} users selected, fewer than the cohort size {}", clients.len(), cfg.fed.cohort_size);
            m.models.push(skipped(&model, clients.len(), reason));
            continue;
        }
        let fed = cfg.fed.config(clients.len(), None)?;
        let (gen, state) = train_gan(generator, discriminator, clients, &fed, master_for(m.seeds.master, k), |r| {
            w.log_round(&model, &fed, r)
        })?;
        let samples = generator_samples(&gen, cfg.report.grid_rows * cfg.report.grid_cols, m.seeds.grid)?;
        let side = (generator.output as f64).sqrt() as usize;
        let grid = image_grid_pgm(&samples, side, cfg.report.grid_rows, cfg.report.grid_cols, &run_id)?;
        w.write(&report_path(&run_id, &format!("grid-{model}"), "pgm"), &grid)?;
        summary.insert(format!("{model}_mean_intensity"), mean_intensity(&samples).into());
        summary.insert(format!("{model}_bright_fraction"), bright_fraction(&samples).into());
        let data: Vec<Vec<u8>> = clients.iter().flat_map(|c| c.examples.iter().map(|i| i.pixels.clone())).collect();
        summary.insert(format!("{model}_data_mean_intensity"), mean_intensity(&data).into());
        let spend = state.spend(fed.dp.delta)?;
        w.write_json(
            &checkpoint_path(&model),
            &GanCheckpoint {
                generator: gen,
                discriminator: state,
            },
        )?;
        m.models.push(record(&model, &fed, spend));
    }
    m.summary = summary.into();
    Ok(())
}

fn master_for(master: u64, model: usize) -> u64 {
    rng::derive_seed(master, &[model as u64])
}

/// Trains one GAN from the scenario's initial weights.
pub fn train_gan(
    gen_arch: &DenseArch,
    disc_arch: &DenseArch,
    clients: &[ClientDataset<Image>],
    fed: &FedConfig,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<(GeneratorNet, ServerState)> {
    let trainer = GanTrainer::new(gen_arch.clone(), disc_arch.clone(), fed.gp_lambda)?;
    let mut gen = GeneratorNet::new(gen_arch.clone(), rng::derive_seed(seed, &[purpose::INIT, 0]));
    let disc = DiscriminatorNet::new(disc_arch.clone(), rng::derive_seed(seed, &[purpose::INIT, 1]))?;
    let mut state = ServerState::new(disc.params, fed)?;
    for _ in 0..fed.dp.rounds {
        let (s, g, report) = dp_fedavg_gan_round(&state, &gen, clients, fed, &trainer, seed)?;
        on_round(&report);
        state = s;
        gen = g;
    }
    Ok((gen, state))
}

/// Trains a recurrent LM with DP-FedAvg on encoded sequences.
pub fn train_lm(
    lm: RecurrentLm,
    clients: &[ClientDataset<Vec<usize>>],
    fed: &FedConfig,
    max_steps: usize,
    seed: u64,
    mut on_round: impl FnMut(&RoundReport),
) -> Result<(RecurrentLm, ServerState)> {
    let objective = LmObjective::new(lm.arch, max_steps);
    let mut state = ServerState::new(lm.params.clone(), fed)?;
    for _ in 0..fed.dp.rounds {
        let (s, report) = dp_fedavg_round(&state, clients, fed, &objective, seed)?;
        on_round(&report);
        state = s;
    }
    let lm = RecurrentLm {
        params: state.model.clone(),
        ..lm
    };
    Ok((lm, state))
}

/// Each user's out-of-vocabulary word occurrences, spelled out in characters.
/// Users without any are left out.
pub fn oov_word_clients(
    pop: &TextPopulation,
    vocab: &Vocabulary,
    chars: &CharVocab,
) -> Result<Vec<ClientDataset<Vec<usize>>>> {
    let mut out = Vec::new();
    for c in &pop.clients {
        let words = c
            .examples
            .iter()
            .flatten()
            .filter(|w| !vocab.contains(w))
            .map(|w| chars.encode(w))
            .collect::<Result<Vec<_>>>()?;
        if !words.is_empty() {
            out.push(ClientDataset {
                id: c.id,
                style: Style::None,
                examples: words,
            });
        }
    }
    Ok(out)
}

fn run_lm(cfg: &ScenarioConfig, w: &mut RunWriter, m: &mut RunManifest) -> Result<()> {
    let ModelBlock::Lm { word, char, max_steps } = &cfg.model else {
        unreachable!("checked by caller")
    };
    let run_id = m.run_id.clone();
    let r = &cfg.report;
    let (clean, bugged, vocab, affected) = text_populations(cfg)?;
    let mut summary = serde_json::Map::new();
    summary.insert("clean_oov_rate".into(), overall_oov_rate(&clean, &vocab)?.into());
    summary.insert("overall_oov_rate".into(), overall_oov_rate(&bugged, &vocab)?.into());
    summary.insert("affected_sentences".into(), affected.into());
    summary.insert("vocab_size".into(), vocab.len().into());

    if let Some(size) = word {
        let clients: Vec<ClientDataset<Vec<usize>>> = bugged
            .clients
            .iter()
            .map(|c| ClientDataset {
                id: c.id,
                style: Style::None,
                examples: c.examples.iter().map(|s| vocab.encode(s)).collect(),
            })
            .collect();
        let fed = cfg.fed.config(clients.len(), size.clip)?;
        let init = WordLm::new(vocab.clone(), size.embed, size.hidden, rng::derive_seed(m.seeds.master, &[purpose::INIT, 0]));
        let (lm, state) = train_lm(init.lm, &clients, &fed, *max_steps, master_for(m.seeds.master, 0), |rep| {
            w.log_round("word-lm", &fed, rep)
        })?;
        let wlm = WordLm {
            vocab: vocab.clone(),
            lm,
        };
        let profile = oov_rate_by_position(&wlm, r.lm_samples, r.sample_max_len, m.seeds.sampling)?;
        w.write(&report_path(&run_id, "oov-by-position", "csv"), profile.to_csv(&run_id).as_bytes())?;
        summary.insert("word_lm_head_ratio".into(), profile.head_ratio(9).into());
        summary.insert("word_lm_oov_fractions".into(), serde_json::to_value(&profile.fractions)?);
        let mut text = format!("# run={run_id}\n");
        for i in 0..r.text_samples {
            let ids = wlm.lm.sample(rng::derive_seed(m.seeds.sampling, &[1, i as u64]), r.sample_max_len);
            let words: Vec<&str> = ids
                .iter()
                .take_while(|&&t| t != crate::datasets::END)
                .map(|&t| if t == crate::datasets::OOV { "<oov>" } else { wlm.vocab.word(t).unwrap_or("?") })
                .collect();
            writeln!(text, "{}", words.join(" ")).unwrap();
        }
        w.write(&report_path(&run_id, "word-samples", "txt"), text.as_bytes())?;
        let spend = state.spend(fed.dp.delta)?;
        w.write_json(&checkpoint_path("word-lm"), &wlm)?;
        m.models.push(record("word-lm", &fed, spend));
    }

    if let Some(size) = char {
        let chars = CharVocab::ascii_lower();
        let clients = oov_word_clients(&bugged, &vocab, &chars)?;
        if clients.len() < cfg.fed.cohort_size {
            let reason = format!("{} users have OOV words, fewer than the cohort size {}", clients.len(), cfg.fed.cohort_size);
            m.models.push(skipped("char-lm", clients.len(), reason));
        } else {
            let fed = cfg.fed.config(clients.len(), size.clip)?;
            let arch = LmArch {
                vocab: chars.len(),
                embed: size.embed,
                hidden: size.hidden,
            };
            let init = RecurrentLm::new(arch, rng::derive_seed(m.seeds.master, &[purpose::INIT, 1]));
            let (lm, state) = train_lm(init, &clients, &fed, *max_steps, master_for(m.seeds.master, 1), |rep| {
                w.log_round("char-lm", &fed, rep)
            })?;
            let clm = CharLm { vocab: chars, lm };
            let top = top_oov_words(&clm, r.top_k, r.lm_samples, r.sample_max_len, m.seeds.sampling)?;
            w.write(&report_path(&run_id, "top-oov-words", "csv"), top.to_csv(&run_id).as_bytes())?;
            summary.insert("char_lm_top_with_space".into(), top.with_space().into());
            summary.insert(
                "char_lm_top_words".into(),
                top.entries.iter().map(|e| serde_json::Value::from(e.word.clone())).collect(),
            );
            let spend = state.spend(fed.dp.delta)?;
            w.write_json(&checkpoint_path("char-lm"), &clm)?;
            m.models.push(record("char-lm", &fed, spend));
        }
    }
    m.summary = summary.into();
    Ok(())
}

/// Reads `manifest.json` from a run directory.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|_| Error::MissingCheckpoint(path.clone()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn read_checkpoint<T: for<'de> Deserialize<'de>>(dir: &Path, model: &str) -> Result<T> {
    let path = dir.join(checkpoint_path(model));
    let bytes = fs::read(&path).map_err(|_| Error::MissingCheckpoint(path.clone()))?;
    Ok(serde_json::from_slice(&bytes)?)
}
