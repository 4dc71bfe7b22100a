//! Accuracy-driven selection of the users or examples an auxiliary
//! generative model is trained on.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{image_batch, ClientDataset, ClientId, Image, ImagePopulation};
use crate::error::{Error, Result};
use crate::fed_sim::{centralized_sgd, ClassifierObjective};
use crate::models::{ClassifierNet, DenseArch};

/// Anything that labels a batch of images.
pub trait Predictor: Sync {
    fn predict(&self, images: &[Image]) -> Result<Vec<usize>>;

    /// Stable identifier recorded in subpopulation provenance.
    fn id(&self) -> String;
}

impl Predictor for ClassifierNet {
    fn predict(&self, images: &[Image]) -> Result<Vec<usize>> {
        let logits = self.logits(&image_batch(images)?)?;
        let k = self.arch.output;
        Ok(logits
            .data()
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect())
    }

    fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.params.layout().as_bytes());
        for v in self.params.values() {
            h.update(v.to_le_bytes());
        }
        format!("clf-{}", &hex::encode(h.finalize())[..16])
    }
}

/// Per-example correctness of `model` on one client.
pub fn correctness<P: Predictor + ?Sized>(model: &P, client: &ClientDataset<Image>) -> Result<Vec<bool>> {
    if client.is_empty() {
        return Err(Error::EmptyClient(client.id));
    }
    let pred = model.predict(&client.examples)?;
    Ok(pred
        .iter()
        .zip(&client.examples)
        .map(|(p, im)| *p == im.label as usize)
        .collect())
}

/// Fraction of the client's examples that `model` labels correctly.
pub fn user_accuracy<P: Predictor + ?Sized>(model: &P, client: &ClientDataset<Image>) -> Result<f64> {
    let c = correctness(model, client)?;
    Ok(c.iter().filter(|b| **b).count() as f64 / c.len() as f64)
}

/// Per-user accuracies in population order.
pub fn user_accuracies<P: Predictor + ?Sized>(model: &P, pop: &ImagePopulation) -> Result<Vec<(ClientId, f64)>> {
    pop.clients
        .par_iter()
        .map(|c| Ok((c.id, user_accuracy(model, c)?)))
        .collect()
}

/// Nearest-rank percentile: the smallest value with at least `p`% of the
/// sample at or below it.
pub fn nearest_rank(values: &[f64], p: u32) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if p == 0 || p > 100 {
        return Err(Error::invalid(format!("percentile must be in 1..=100, got {p}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = (p as usize * n).div_ceil(100);
    Ok(v[rank - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub low_cut: f64,
    pub high_cut: f64,
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_cut && self.low_cut <= self.high_cut && self.high_cut <= 1.0) {
            return Err(Error::invalid(format!(
                "thresholds need 0 <= low <= high <= 1, got ({}, {})",
                self.low_cut, self.high_cut
            )));
        }
        Ok(())
    }

    pub fn from_accuracies(acc: &[f64]) -> Result<Self> {
        Ok(Thresholds {
            low_cut: nearest_rank(acc, 25)?,
            high_cut: nearest_rank(acc, 75)?,
        })
    }
}

/// 25th and 75th percentile of per-user accuracy. Call on the clean
/// population and keep the result fixed for bugged runs.
pub fn calibrate_thresholds<P: Predictor + ?Sized>(pop: &ImagePopulation, model: &P) -> Result<Thresholds> {
    if pop.clients.is_empty() {
        return Err(Error::invalid("cannot calibrate on an empty population"));
    }
    let acc: Vec<f64> = user_accuracies(model, pop)?.into_iter().map(|(_, a)| a).collect();
    Thresholds::from_accuracies(&acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccuracySide {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleKind {
    Correct,
    Misclassified,
}

/// A selection rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SelectionCriteria {
    ByUserAccuracy { side: AccuracySide, thresholds: Thresholds },
    ByExample { keep: ExampleKind, min_examples: usize },
}

impl SelectionCriteria {
    pub fn validate(&self) -> Result<()> {
        match self {
            SelectionCriteria::ByUserAccuracy { thresholds, .. } => thresholds.validate(),
            SelectionCriteria::ByExample { min_examples, .. } if *min_examples == 0 => {
                Err(Error::invalid("min_examples must be >= 1"))
            }
            SelectionCriteria::ByExample { .. } => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub criteria: SelectionCriteria,
    pub classifier: String,
    pub population_hash: String,
    pub population_size: usize,
}

/// Users (and optionally, per user, example indices) meeting a criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subpopulation {
    pub members: Vec<ClientId>,
    /// Retained example indices per member; absent means all examples.
    pub filters: Option<BTreeMap<ClientId, Vec<usize>>>,
    pub provenance: Provenance,
}

impl Subpopulation {
    /// Subpopulation size `N`.
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Materializes member datasets from the population they were chosen from.
    pub fn extract(&self, pop: &ImagePopulation) -> Result<Vec<ClientDataset<Image>>> {
        let hash = population_hash(pop);
        if hash != self.provenance.population_hash {
            return Err(Error::invalid("population does not match the subpopulation provenance"));
        }
        self.members
            .iter()
            .map(|&id| {
                let c = pop.client(id).ok_or(Error::EmptyClient(id))?;
                let examples = match self.filters.as_ref().and_then(|f| f.get(&id)) {
                    Some(idx) => idx.iter().map(|&i| c.examples[i].clone()).collect(),
                    None => c.examples.clone(),
                };
                Ok(ClientDataset {
                    id,
                    style: c.style.clone(),
                    examples,
                })
            })
            .collect()
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn read_manifest(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// SHA-256 over ids, labels and pixels, hex encoded.
pub fn population_hash(pop: &ImagePopulation) -> String {
    let mut h = Sha256::new();
    h.update((pop.side as u64).to_le_bytes());
    h.update((pop.classes as u64).to_le_bytes());
    for c in &pop.clients {
        h.update(c.id.to_le_bytes());
        h.update((c.examples.len() as u64).to_le_bytes());
        for im in &c.examples {
            h.update([im.label]);
            h.update(&im.pixels);
        }
    }
    hex::encode(h.finalize())
}

fn provenance<P: Predictor + ?Sized>(criteria: SelectionCriteria, pop: &ImagePopulation, model: &P) -> Provenance {
    Provenance {
        criteria,
        classifier: model.id(),
        population_hash: population_hash(pop),
        population_size: pop.clients.len(),
    }
}

/// Users at or below `low_cut` (low side) or at or above `high_cut` (high side).
/// An empty result is returned as such; callers decide whether to train.
pub fn select_by_user<P: Predictor + ?Sized>(
    pop: &ImagePopulation,
    model: &P,
    side: AccuracySide,
    thresholds: Thresholds,
) -> Result<Subpopulation> {
    thresholds.validate()?;
    let members = user_accuracies(model, pop)?
        .into_iter()
        .filter(|(_, a)| match side {
            AccuracySide::Low => *a <= thresholds.low_cut,
            AccuracySide::High => *a >= thresholds.high_cut,
        })
        .map(|(id, _)| id)
        .collect();
    Ok(Subpopulation {
        members,
        filters: None,
        provenance: provenance(SelectionCriteria::ByUserAccuracy { side, thresholds }, pop, model),
    })
}

/// Keeps each user's correctly classified (or misclassified) examples and
/// drops users left with fewer than `min_examples`.
pub fn select_by_example<P: Predictor + ?Sized>(
    pop: &ImagePopulation,
    model: &P,
    keep: ExampleKind,
    min_examples: usize,
) -> Result<Subpopulation> {
    let criteria = SelectionCriteria::ByExample { keep, min_examples };
    criteria.validate()?;
    let kept: Vec<(ClientId, Vec<usize>)> = pop
        .clients
        .par_iter()
        .map(|c| {
            let idx = correctness(model, c)?
                .into_iter()
                .enumerate()
                .filter(|(_, ok)| *ok == (keep == ExampleKind::Correct))
                .map(|(i, _)| i)
                .collect::<Vec<_>>();
            Ok((c.id, idx))
        })
        .collect::<Result<_>>()?;
    let filters: BTreeMap<ClientId, Vec<usize>> =
        kept.into_iter().filter(|(_, idx)| idx.len() >= min_examples).collect();
    Ok(Subpopulation {
        members: pop.clients.iter().map(|c| c.id).filter(|id| filters.contains_key(id)).collect(),
        filters: Some(filters),
        provenance: provenance(criteria, pop, model),
    })
}

/// Hyperparameters of the reference classifier trained on clean data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub arch: DenseArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Centralized SGD on the pooled examples of `pop`.
pub fn train_fixture_classifier(pop: &ImagePopulation, spec: &FixtureSpec) -> Result<ClassifierNet> {
    if spec.arch.input != pop.pixels() || spec.arch.output != pop.classes {
        return Err(Error::invalid(format!(
            "classifier maps {} -> {} but population has {} pixels and {} classes",
            spec.arch.input,
            spec.arch.output,
            pop.pixels(),
            pop.classes
        )));
    }
    let examples: Vec<Image> = pop.clients.iter().flat_map(|c| c.examples.iter().cloned()).collect();
    let net = ClassifierNet::new(spec.arch.clone(), spec.seed);
    let objective = ClassifierObjective::new(&spec.arch);
    let params = centralized_sgd(&objective, &net.params, &examples, spec.epochs, spec.batch_size, spec.lr, spec.seed)?;
    Ok(ClassifierNet { params, ..net })
}

/// Accuracy over all pooled examples.
pub fn pooled_accuracy<P: Predictor + ?Sized>(model: &P, pop: &ImagePopulation) -> Result<f64> {
    let (mut ok, mut n) = (0usize, 0usize);
    for c in &pop.clients {
        let v = correctness(model, c)?;
        ok += v.iter().filter(|b| **b).count();
        n += v.len();
    }
    Ok(ok as f64 / n.max(1) as f64)
}
