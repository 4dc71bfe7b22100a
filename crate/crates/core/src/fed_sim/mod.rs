//! DP-FedAvg and DP-FedAvg-GAN orchestration over simulated populations.
//!
//! Client work inside a round is pure and runs on the ambient rayon pool;
//! results are reduced in ascending client id order, so the outcome does
//! not depend on the number of threads.

mod gan;
mod objective;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use gan::{dp_fedavg_gan_round, gen_update, user_disc_update, GanTrainer};
pub use objective::{ClassifierObjective, LmObjective, LocalObjective};

use crate::datasets::{ClientDataset, ClientId};
use crate::dp::{
    clip_update, compose_rounds, gaussianize, rdp_subsampled_gaussian, rdp_to_eps, refined_orders, DpSpec,
    ParamVector, PrivacySpend, RdpCurve,
};
use crate::error::{Error, Result};
use crate::rng::{self, purpose};

/// Local and server hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    /// Local epochs `E`.
    pub local_epochs: usize,
    /// Local batch size `B`.
    pub batch_size: usize,
    /// Local learning rate `η`.
    pub local_lr: f64,
    /// GAN steps `n` per client (discriminator) and per server update (generator).
    #[serde(default)]
    pub gan_steps: usize,
    #[serde(default)]
    pub disc_lr: f64,
    #[serde(default)]
    pub gen_lr: f64,
    /// Gradient-penalty weight of the critic loss.
    #[serde(default)]
    pub gp_lambda: f64,
    /// Generator updates per discriminator round.
    #[serde(default = "one")]
    pub gen_updates_per_round: usize,
    pub server_lr: f64,
    /// Nesterov momentum coefficient; 0 disables momentum.
    #[serde(default)]
    pub momentum: f64,
    pub dp: DpSpec,
}

fn one() -> usize {
    1
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        self.dp.validate()?;
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("local epochs and batch size must be >= 1"));
        }
        for (name, v) in [
            ("local_lr", self.local_lr),
            ("disc_lr", self.disc_lr),
            ("gen_lr", self.gen_lr),
            ("gp_lambda", self.gp_lambda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.server_lr > 0.0) {
            return Err(Error::invalid("server_lr must be > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Server-side model, optimizer buffer and privacy ledger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub model: ParamVector,
    pub momentum: Option<ParamVector>,
    /// Rounds completed.
    pub round: u64,
    /// RDP of a single round; `None` when no noise is added.
    pub round_curve: Option<RdpCurve>,
}

impl ServerState {
    pub fn new(model: ParamVector, cfg: &FedConfig) -> Result<Self> {
        let dp = &cfg.dp;
        let round_curve = if dp.noise_multiplier > 0.0 {
            let q = dp.sampling_rate();
            let orders = refined_orders(q, dp.noise_multiplier, dp.rounds, dp.delta)?;
            Some(rdp_subsampled_gaussian(q, dp.noise_multiplier, &orders)?)
        } else {
            None
        };
        let momentum = (cfg.momentum > 0.0).then(|| ParamVector::zeros_like(&model));
        Ok(ServerState {
            model,
            momentum,
            round: 0,
            round_curve,
        })
    }

    /// Accumulated RDP: `round × single-round curve`.
    pub fn rdp(&self) -> Option<RdpCurve> {
        self.round_curve.as_ref().map(|c| compose_rounds(c, self.round))
    }

    pub fn spend(&self, delta: f64) -> Result<PrivacySpend> {
        match self.rdp() {
            Some(c) if self.round > 0 => rdp_to_eps(&c, delta),
            Some(_) => Ok(PrivacySpend {
                epsilon: 0.0,
                delta,
                order: f64::NAN,
            }),
            None => Ok(PrivacySpend {
                epsilon: f64::INFINITY,
                delta,
                order: f64::INFINITY,
            }),
        }
    }
}

/// Per-round bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    pub cohort: Vec<ClientId>,
    pub pre_clip_norms: Vec<f64>,
    pub clip_fraction: f64,
    pub sigma: f64,
    pub mean_loss: f64,
    /// Mean generator loss for GAN rounds.
    pub gen_loss: Option<f64>,
    pub spend: PrivacySpend,
}

/// One client's clipped contribution.
#[derive(Clone, Debug)]
pub struct ClientUpdate {
    pub delta: ParamVector,
    pub pre_clip_norm: f64,
    pub mean_loss: f64,
}

/// Draws `qN` distinct ids uniformly, returned in ascending order.
pub fn sample_cohort(population: &[ClientId], cohort_size: usize, seed: u64) -> Result<Vec<ClientId>> {
    if cohort_size > population.len() {
        return Err(Error::invalid(format!(
            "cohort size {cohort_size} exceeds population {}",
            population.len()
        )));
    }
    let mut r = rng::stream(seed);
    let mut ids: Vec<ClientId> = index::sample(&mut r, population.len(), cohort_size)
        .into_iter()
        .map(|i| population[i])
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

fn clipped(start: &ParamVector, end: &ParamVector, clip: f64, mean_loss: f64) -> Result<ClientUpdate> {
    let raw = end.sub(start)?;
    let pre_clip_norm = raw.norm();
    Ok(ClientUpdate {
        delta: clip_update(&raw, clip)?,
        pre_clip_norm,
        mean_loss,
    })
}

/// `E` epochs of in-order minibatch SGD, then the clipped model delta.
pub fn user_update<O: LocalObjective>(
    client: &ClientDataset<O::Example>,
    start: &ParamVector,
    cfg: &FedConfig,
    objective: &O,
) -> Result<ClientUpdate> {
    if client.examples.is_empty() {
        return Err(Error::EmptyClient(client.id));
    }
    let mut theta = start.clone();
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for _ in 0..cfg.local_epochs {
        for batch in client.examples.chunks(cfg.batch_size) {
            let (loss, grad) = objective.loss_and_grad(&theta, batch)?;
            if cfg.local_lr != 0.0 {
                theta.axpy(-cfg.local_lr, &grad)?;
            }
            loss_sum += loss;
            steps += 1;
        }
    }
    clipped(start, &theta, cfg.dp.clip, loss_sum / steps as f64)
}

/// Shared server half of a DP round: sample, run clients, average over
/// `qN`, add noise, step the optimizer and tick the accountant.
pub fn dp_aggregate_round<F>(
    state: &ServerState,
    population: &[ClientId],
    cfg: &FedConfig,
    master_seed: u64,
    client_work: F,
) -> Result<(ServerState, RoundReport)>
where
    F: Fn(ClientId, u64) -> Result<ClientUpdate> + Sync,
{
    let t = state.round;
    let wrap = |e: Error| match e {
        e if e.is_numerical() && !matches!(e, Error::Numerical { .. }) => Error::Numerical {
            round: t,
            source: Box::new(e),
        },
        e => e,
    };
    let qn = cfg.dp.cohort_size;
    let cohort = sample_cohort(population, qn, rng::derive_seed(master_seed, &[purpose::COHORT, t]))?;
    let updates: Vec<ClientUpdate> = cohort
        .par_iter()
        .map(|&k| client_work(k, rng::derive_seed(master_seed, &[purpose::CLIENT, t, k])))
        .collect::<Result<_>>()
        .map_err(wrap)?;

    let mut sum = ParamVector::zeros_like(&state.model);
    for u in &updates {
        sum.axpy(1.0, &u.delta)?;
    }
    let avg = sum.scaled(1.0 / qn as f64);
    let sigma = cfg.dp.noise_stddev();
    let noisy = gaussianize(&avg, sigma, rng::derive_seed(master_seed, &[purpose::SERVER_NOISE, t]))?;

    let mut next = state.clone();
    match next.momentum.as_mut() {
        Some(m) => {
            // Nesterov on the pseudo-gradient -Δ.
            *m = m.scaled(cfg.momentum);
            m.axpy(1.0, &noisy)?;
            let mut step = m.scaled(cfg.momentum);
            step.axpy(1.0, &noisy)?;
            next.model.axpy(cfg.server_lr, &step)?;
        }
        None => next.model.axpy(cfg.server_lr, &noisy)?,
    }
    if !next.model.is_finite() {
        return Err(Error::Numerical {
            round: t,
            source: Box::new(Error::NonFinite {
                node: 0,
                op: "server_update",
            }),
        });
    }
    next.round = t + 1;

    let clipped_count = updates.iter().filter(|u| u.pre_clip_norm > cfg.dp.clip).count();
    let report = RoundReport {
        round: t,
        cohort,
        pre_clip_norms: updates.iter().map(|u| u.pre_clip_norm).collect(),
        clip_fraction: clipped_count as f64 / qn as f64,
        sigma,
        mean_loss: updates.iter().map(|u| u.mean_loss).sum::<f64>() / qn as f64,
        gen_loss: None,
        spend: next.spend(cfg.dp.delta)?,
    };
    Ok((next, report))
}

/// One round of DP-FedAvg over a population with ids in ascending order.
pub fn dp_fedavg_round<O: LocalObjective>(
    state: &ServerState,
    clients: &[ClientDataset<O::Example>],
    cfg: &FedConfig,
    objective: &O,
    master_seed: u64,
) -> Result<(ServerState, RoundReport)> {
    let ids: Vec<ClientId> = clients.iter().map(|c| c.id).collect();
    dp_aggregate_round(state, &ids, cfg, master_seed, |k, _seed| {
        let client = find(clients, k)?;
        user_update(client, &state.model, cfg, objective)
    })
}

fn find<E>(clients: &[ClientDataset<E>], k: ClientId) -> Result<&ClientDataset<E>> {
    clients
        .binary_search_by_key(&k, |c| c.id)
        .map(|i| &clients[i])
        .or_else(|_| clients.iter().find(|c| c.id == k).ok_or(Error::EmptyClient(k)))
}

/// Plain shuffled minibatch SGD over pooled examples.
pub fn centralized_sgd<O: LocalObjective>(
    objective: &O,
    start: &ParamVector,
    examples: &[O::Example],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<ParamVector>
where
    O::Example: Clone,
{
    use rand::seq::SliceRandom;
    let mut theta = start.clone();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut r = rng::stream(seed);
    for _ in 0..epochs {
        order.shuffle(&mut r);
        for idx in order.chunks(batch_size) {
            let batch: Vec<O::Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let (_, g) = objective.loss_and_grad(&theta, &batch)?;
            theta.axpy(-lr, &g)?;
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests;
