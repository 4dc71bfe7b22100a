use super::{clipped, dp_aggregate_round, find, ClientUpdate, FedConfig, RoundReport, ServerState};
use crate::datasets::{image_batch, ClientDataset, ClientId, Image};
use crate::dp::ParamVector;
use crate::error::{Error, Result};
use crate::models::{
    disc_batch, disc_loss_graph, gen_batch, gen_loss_graph, mix_coefficients, CompiledLoss, DenseArch,
    DiscriminatorNet, GeneratorNet,
};
use crate::rng::{self, purpose};

/// Compiled critic and generator losses for one pair of architectures.
pub struct GanTrainer {
    pub gen_arch: DenseArch,
    pub disc_arch: DenseArch,
    pub(crate) disc_loss: CompiledLoss,
    pub(crate) gen_loss: CompiledLoss,
}

impl GanTrainer {
    pub fn new(gen_arch: DenseArch, disc_arch: DenseArch, gp_lambda: f64) -> Result<Self> {
        if gen_arch.output != disc_arch.input {
            return Err(Error::invalid(format!(
                "generator emits {} pixels but discriminator reads {}",
                gen_arch.output, disc_arch.input
            )));
        }
        Ok(GanTrainer {
            disc_loss: disc_loss_graph(&disc_arch, gp_lambda),
            gen_loss: gen_loss_graph(&gen_arch, &disc_arch),
            gen_arch,
            disc_arch,
        })
    }

    fn disc(&self, params: &ParamVector) -> DiscriminatorNet {
        DiscriminatorNet {
            arch: self.disc_arch.clone(),
            params: params.clone(),
        }
    }
}

/// Up to `n` critic steps on the client's data in order, each against a
/// freshly generated fake batch of the same size.
pub fn user_disc_update(
    client: &ClientDataset<Image>,
    disc_start: &ParamVector,
    gen: &GeneratorNet,
    cfg: &FedConfig,
    trainer: &GanTrainer,
    seed: u64,
) -> Result<ClientUpdate> {
    if client.examples.is_empty() {
        return Err(Error::EmptyClient(client.id));
    }
    let mut theta = disc_start.clone();
    let (mut loss_sum, mut steps) = (0.0, 0usize);
    for (i, batch) in client.examples.chunks(cfg.batch_size).take(cfg.gan_steps).enumerate() {
        let i = i as u64;
        let noise = gen.sample_noise(batch.len(), rng::derive_seed(seed, &[purpose::GENERATOR, i]));
        let fake = gen.generate(&noise)?;
        let mix = mix_coefficients(batch.len(), rng::derive_seed(seed, &[purpose::SAMPLING, i]));
        let b = disc_batch(image_batch(batch)?, fake, mix);
        let (loss, grad) = trainer.disc_loss.loss_and_grad(&theta, b)?;
        if cfg.disc_lr != 0.0 {
            theta.axpy(-cfg.disc_lr, &grad)?;
        }
        loss_sum += loss;
        steps += 1;
    }
    clipped(disc_start, &theta, cfg.dp.clip, loss_sum / steps.max(1) as f64)
}

/// `n` generator steps against a fixed critic. Sees no client data.
pub fn gen_update(
    disc: &ParamVector,
    gen_start: &GeneratorNet,
    cfg: &FedConfig,
    trainer: &GanTrainer,
    seed: u64,
) -> Result<(GeneratorNet, f64)> {
    let d = trainer.disc(disc);
    let mut gen = gen_start.clone();
    let mut loss_sum = 0.0;
    for i in 0..cfg.gan_steps {
        let noise = gen.sample_noise(cfg.batch_size, rng::derive_seed(seed, &[i as u64]));
        let (loss, grad) = trainer.gen_loss.loss_and_grad(&gen.params, gen_batch(&d, noise)?)?;
        if cfg.gen_lr != 0.0 {
            gen.params.axpy(-cfg.gen_lr, &grad)?;
        }
        loss_sum += loss;
    }
    Ok((gen, loss_sum / cfg.gan_steps.max(1) as f64))
}

/// Critic round under DP-FedAvg followed by server-side generator updates.
pub fn dp_fedavg_gan_round(
    disc_state: &ServerState,
    gen: &GeneratorNet,
    clients: &[ClientDataset<Image>],
    cfg: &FedConfig,
    trainer: &GanTrainer,
    master_seed: u64,
) -> Result<(ServerState, GeneratorNet, RoundReport)> {
    let ids: Vec<ClientId> = clients.iter().map(|c| c.id).collect();
    let (next, mut report) = dp_aggregate_round(disc_state, &ids, cfg, master_seed, |k, seed| {
        user_disc_update(find(clients, k)?, &disc_state.model, gen, cfg, trainer, seed)
    })?;
    let mut g = gen.clone();
    let mut gen_losses = Vec::new();
    for j in 0..cfg.gen_updates_per_round as u64 {
        let seed = rng::derive_seed(master_seed, &[purpose::GENERATOR, disc_state.round, j]);
        let (ng, loss) = gen_update(&next.model, &g, cfg, trainer, seed).map_err(|e| {
            if e.is_numerical() {
                Error::Numerical {
                    round: disc_state.round,
                    source: Box::new(e),
                }
            } else {
                e
            }
        })?;
        g = ng;
        gen_losses.push(loss);
    }
    if !gen_losses.is_empty() {
        report.gen_loss = Some(gen_losses.iter().sum::<f64>() / gen_losses.len() as f64);
    }
    Ok((next, g, report))
}
