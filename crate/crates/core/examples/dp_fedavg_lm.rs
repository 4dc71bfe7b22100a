//! Trains a word-level recurrent LM with DP-FedAvg on a synthetic text
//! population and tracks loss, clipping and the running privacy spend.

use fedgen::cli::run::train_lm;
use fedgen::datasets::{make_text_population, ClientDataset, Style};
use fedgen::dp::DpSpec;
use fedgen::fed_sim::FedConfig;
use fedgen::models::{lm_joint_prob, WordLm};

fn main() -> fedgen::Result<()> {
    let pop = make_text_population(120, 8, 11)?;
    let vocab = pop.vocabulary(60);
    let clients: Vec<ClientDataset<Vec<usize>>> = pop
        .clients
        .iter()
        .map(|c| ClientDataset {
            id: c.id,
            style: Style::None,
            examples: c.examples.iter().map(|s| vocab.encode(s)).collect(),
        })
        .collect();

    let fed = FedConfig {
        local_epochs: 1,
        batch_size: 8,
        local_lr: 0.5,
        gan_steps: 0,
        disc_lr: 0.0,
        gen_lr: 0.0,
        gp_lambda: 0.0,
        gen_updates_per_round: 1,
        server_lr: 1.0,
        momentum: 0.9,
        dp: DpSpec {
            clip: 0.2,
            noise_multiplier: 0.5,
            cohort_size: 20,
            population: clients.len(),
            rounds: 40,
            delta: 1.0 / clients.len() as f64,
        },
    };
    let init = WordLm::new(vocab.clone(), 16, 32, 1);
    let (lm, state) = train_lm(init.lm, &clients, &fed, 24, 5, |rep| {
        if rep.round % 10 == 9 {
            println!(
                "round {:>3}  loss {:.3}  clipped {:>4.0}%  sigma {:.2e}  eps {:.3}",
                rep.round + 1,
                rep.mean_loss,
                100.0 * rep.clip_fraction,
                rep.sigma,
                rep.spend.epsilon
            );
        }
    })?;
    let spend = state.spend(fed.dp.delta)?;
    println!("final ({:.3}, {:.1e})-DP at order {}", spend.epsilon, spend.delta, spend.order);

    let wlm = WordLm { vocab, lm };
    let first = &clients[0].examples[0];
    println!("P(first training sentence) = {:.3e}", lm_joint_prob(&wlm, first)?);
    Ok(())
}
