use super::*;
use crate::datasets::{make_glyph_population, Image, Style};
use crate::dp::{compose_rounds, DpSpec};
use crate::models::{ClassifierNet, DenseArch, DiscriminatorNet, GeneratorNet, LmArch, RecurrentLm};

fn cfg(qn: usize, n: usize, z: f64, clip: f64) -> FedConfig {
    FedConfig {
        local_epochs: 1,
        batch_size: 4,
        local_lr: 0.1,
        gan_steps: 2,
        disc_lr: 0.01,
        gen_lr: 0.01,
        gp_lambda: 10.0,
        gen_updates_per_round: 1,
        server_lr: 1.0,
        momentum: 0.0,
        dp: DpSpec {
            clip,
            noise_multiplier: z,
            cohort_size: qn,
            population: n,
            rounds: 10,
            delta: 1e-3,
        },
    }
}

fn clf_arch() -> DenseArch {
    DenseArch {
        input: 64,
        hidden: vec![8],
        output: 4,
    }
}

fn glyph_clients(n: usize, seed: u64) -> Vec<ClientDataset<Image>> {
    make_glyph_population(n, (3, 9), 4, 8, seed).unwrap().clients
}

#[test]
fn full_cohort_and_determinism() {
    let pop: Vec<ClientId> = (0..10).collect();
    assert_eq!(sample_cohort(&pop, 10, 1).unwrap(), pop);
    assert_eq!(sample_cohort(&pop, 4, 7).unwrap(), sample_cohort(&pop, 4, 7).unwrap());
    assert!(sample_cohort(&pop, 11, 7).is_err());
    let c = sample_cohort(&pop, 5, 3).unwrap();
    assert!(c.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn single_draw_is_uniform() {
    let pop: Vec<ClientId> = vec![3, 5, 8, 13];
    let mut counts = [0usize; 4];
    let trials = 100_000;
    for t in 0..trials {
        let c = sample_cohort(&pop, 1, rng::derive_seed(11, &[t])).unwrap();
        counts[pop.iter().position(|&p| p == c[0]).unwrap()] += 1;
    }
    for k in counts {
        assert!((k as f64 / trials as f64 - 0.25).abs() < 0.01, "{counts:?}");
    }
}

#[test]
fn zero_lr_gives_zero_update() {
    let clients = glyph_clients(2, 1);
    let net = ClassifierNet::new(clf_arch(), 2);
    let obj = ClassifierObjective::new(&clf_arch());
    let mut c = cfg(1, 2, 0.0, 1.0);
    c.local_lr = 0.0;
    let u = user_update(&clients[0], &net.params, &c, &obj).unwrap();
    assert!(u.delta.values().iter().all(|v| *v == 0.0));
}

#[test]
fn one_example_one_step() {
    let clients = glyph_clients(1, 1);
    let mut client = clients[0].clone();
    client.examples.truncate(1);
    let net = ClassifierNet::new(clf_arch(), 2);
    let obj = ClassifierObjective::new(&clf_arch());
    let mut c = cfg(1, 1, 0.0, 1e300);
    c.batch_size = 1;
    let u = user_update(&client, &net.params, &c, &obj).unwrap();
    let (_, g) = obj.loss_and_grad(&net.params, &client.examples).unwrap();
    let want = g.scaled(-c.local_lr);
    for (a, b) in u.delta.values().iter().zip(want.values()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn updates_are_clipped_and_empty_clients_rejected() {
    let clients = glyph_clients(3, 2);
    let net = ClassifierNet::new(clf_arch(), 2);
    let obj = ClassifierObjective::new(&clf_arch());
    let mut c = cfg(1, 3, 0.0, 1e-3);
    c.local_lr = 1.0;
    for cl in &clients {
        let u = user_update(cl, &net.params, &c, &obj).unwrap();
        assert!(u.delta.norm() <= 1e-3 * (1.0 + 1e-12));
        assert!(u.pre_clip_norm > 1e-3);
    }
    let empty = ClientDataset::<Image> {
        id: 9,
        style: Style::None,
        examples: vec![],
    };
    assert!(matches!(user_update(&empty, &net.params, &c, &obj), Err(Error::EmptyClient(9))));
}

#[test]
fn single_client_round_equals_local_sgd() {
    let clients = glyph_clients(1, 3);
    let net = ClassifierNet::new(clf_arch(), 4);
    let obj = ClassifierObjective::new(&clf_arch());
    let mut c = cfg(1, 1, 0.0, 1e300);
    c.local_epochs = 3;
    let state = ServerState::new(net.params.clone(), &c).unwrap();
    let (next, report) = dp_fedavg_round(&state, &clients, &c, &obj, 5).unwrap();
    let mut theta = net.params.clone();
    for _ in 0..3 {
        for b in clients[0].examples.chunks(4) {
            let (_, g) = obj.loss_and_grad(&theta, b).unwrap();
            theta.axpy(-0.1, &g).unwrap();
        }
    }
    assert!(next.model.sub(&theta).unwrap().norm() < 1e-10);
    assert_eq!(next.round, 1);
    assert_eq!(report.cohort, vec![0]);
    assert_eq!(report.clip_fraction, 0.0);
}

#[test]
fn zero_updates_leave_model_unchanged() {
    let clients = glyph_clients(6, 3);
    let net = ClassifierNet::new(clf_arch(), 4);
    let obj = ClassifierObjective::new(&clf_arch());
    let mut c = cfg(3, 6, 0.0, 1.0);
    c.local_lr = 0.0;
    c.momentum = 0.9;
    let state = ServerState::new(net.params.clone(), &c).unwrap();
    let (next, _) = dp_fedavg_round(&state, &clients, &c, &obj, 5).unwrap();
    assert_eq!(next.model, net.params);
}

#[test]
fn noise_matches_sigma() {
    let arch = DenseArch {
        input: 64,
        hidden: vec![1024],
        output: 32,
    };
    let clients = glyph_clients(4, 3);
    let net = ClassifierNet::new(arch.clone(), 4);
    let obj = ClassifierObjective::new(&arch);
    let mut c = cfg(2, 4, 1.0, 0.2);
    c.local_lr = 0.0;
    let sigma = c.dp.noise_stddev();
    let state = ServerState::new(net.params.clone(), &c).unwrap();
    let (next, report) = dp_fedavg_round(&state, &clients, &c, &obj, 5).unwrap();
    assert_eq!(report.sigma, sigma);
    let d = next.model.sub(&net.params).unwrap();
    let n = d.len() as f64;
    let mean = d.values().iter().sum::<f64>() / n;
    let sd = (d.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(n > 90_000.0);
    assert!((sd / sigma - 1.0).abs() < 0.01, "{sd} vs {sigma}");
}

#[test]
fn spend_is_linear_in_rounds() {
    let clients = glyph_clients(5, 3);
    let net = ClassifierNet::new(clf_arch(), 4);
    let obj = ClassifierObjective::new(&clf_arch());
    let c = cfg(2, 5, 1.0, 0.5);
    let mut state = ServerState::new(net.params.clone(), &c).unwrap();
    let mut last = 0.0;
    for _ in 0..4 {
        let (s, r) = dp_fedavg_round(&state, &clients, &c, &obj, 9).unwrap();
        assert!(r.spend.epsilon >= last);
        assert_eq!(r.cohort.len(), 2);
        assert!((0.0..=1.0).contains(&r.clip_fraction));
        last = r.spend.epsilon;
        state = s;
    }
    let single = state.round_curve.clone().unwrap();
    assert_eq!(state.rdp().unwrap(), compose_rounds(&single, 4));
    let z0 = ServerState::new(net.params.clone(), &cfg(2, 5, 0.0, 0.5)).unwrap();
    assert!(z0.spend(1e-3).unwrap().epsilon.is_infinite());
}

#[test]
fn user_level_sensitivity_bound() {
    let obj = ClassifierObjective::new(&clf_arch());
    for trial in 0..20u64 {
        let clients = glyph_clients(6, 100 + trial);
        let mut other = clients.clone();
        let victim = (trial % 6) as usize;
        other[victim].examples = glyph_clients(1, 999 + trial)[0].examples.clone();
        let net = ClassifierNet::new(clf_arch(), trial);
        let mut c = cfg(3, 6, 0.0, 0.05);
        c.local_lr = 0.5;
        let state = ServerState::new(net.params.clone(), &c).unwrap();
        let (a, _) = dp_fedavg_round(&state, &clients, &c, &obj, trial).unwrap();
        let (b, _) = dp_fedavg_round(&state, &other, &c, &obj, trial).unwrap();
        let diff = a.model.sub(&b.model).unwrap().norm();
        assert!(diff <= 2.0 * 0.05 / 3.0 * (1.0 + 1e-9), "{diff}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let clients = glyph_clients(8, 3);
    let net = ClassifierNet::new(clf_arch(), 4);
    let obj = ClassifierObjective::new(&clf_arch());
    let c = cfg(4, 8, 1.0, 0.5);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut s = ServerState::new(net.params.clone(), &c).unwrap();
            for _ in 0..3 {
                s = dp_fedavg_round(&s, &clients, &c, &obj, 1).unwrap().0;
            }
            s
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn lm_round_runs() {
    let arch = LmArch {
        vocab: 5,
        embed: 3,
        hidden: 4,
    };
    let clients: Vec<ClientDataset<Vec<usize>>> = (0..3)
        .map(|id| ClientDataset {
            id,
            style: Style::None,
            examples: vec![vec![1, 2, 0], vec![3, 0], vec![4, 4, 4, 4, 4, 4, 4, 0]],
        })
        .collect();
    let obj = LmObjective::new(arch, 5);
    let lm = RecurrentLm::new(arch, 1);
    let c = cfg(2, 3, 0.0, 10.0);
    let s = ServerState::new(lm.params.clone(), &c).unwrap();
    let (next, r) = dp_fedavg_round(&s, &clients, &c, &obj, 1).unwrap();
    assert!(r.mean_loss > 0.0);
    assert_ne!(next.model, lm.params);
}

fn gan_setup() -> (GeneratorNet, DiscriminatorNet, GanTrainer) {
    let g_arch = DenseArch {
        input: 6,
        hidden: vec![8],
        output: 64,
    };
    let d_arch = DenseArch {
        input: 64,
        hidden: vec![8, 4],
        output: 1,
    };
    (
        GeneratorNet::new(g_arch.clone(), 1),
        DiscriminatorNet::new(d_arch.clone(), 2).unwrap(),
        GanTrainer::new(g_arch, d_arch, 10.0).unwrap(),
    )
}

#[test]
fn disc_update_edge_cases() {
    let (g, d, tr) = gan_setup();
    let client = glyph_clients(1, 1)[0].clone();
    let mut c = cfg(1, 1, 0.0, 1e300);
    c.disc_lr = 0.0;
    let u = user_disc_update(&client, &d.params, &g, &c, &tr, 3).unwrap();
    assert!(u.delta.values().iter().all(|v| *v == 0.0));

    // three examples, B = 32, n = 6: one step on a batch of three
    let mut small = client.clone();
    small.examples.truncate(3);
    let mut c = cfg(1, 1, 0.0, 1e300);
    c.batch_size = 32;
    c.gan_steps = 6;
    let u = user_disc_update(&small, &d.params, &g, &c, &tr, 3).unwrap();
    let noise = g.sample_noise(3, rng::derive_seed(3, &[purpose::GENERATOR, 0]));
    let mix = crate::models::mix_coefficients(3, rng::derive_seed(3, &[purpose::SAMPLING, 0]));
    let b = crate::models::disc_batch(
        crate::datasets::image_batch(&small.examples).unwrap(),
        g.generate(&noise).unwrap(),
        mix,
    );
    let (_, grad) = tr.disc_loss.loss_and_grad(&d.params, b).unwrap();
    let want = grad.scaled(-c.disc_lr);
    assert!(u.delta.sub(&want).unwrap().norm() < 1e-15);

    c.dp.clip = 1e-4;
    c.disc_lr = 1.0;
    assert!(user_disc_update(&client, &d.params, &g, &c, &tr, 3).unwrap().delta.norm() <= 1e-4 * (1.0 + 1e-12));
}

#[test]
fn gen_update_edge_cases() {
    let (g, d, tr) = gan_setup();
    let mut c = cfg(1, 1, 0.0, 1.0);
    c.gan_steps = 0;
    assert_eq!(gen_update(&d.params, &g, &c, &tr, 1).unwrap().0, g);
    c.gan_steps = 3;
    c.gen_lr = 0.0;
    assert_eq!(gen_update(&d.params, &g, &c, &tr, 1).unwrap().0, g);
    c.gen_lr = 0.1;
    let flat = ParamVector::zeros_like(&d.params);
    assert_eq!(gen_update(&flat, &g, &c, &tr, 1).unwrap().0, g);
    assert_ne!(gen_update(&d.params, &g, &c, &tr, 1).unwrap().0, g);
    assert_eq!(gen_update(&d.params, &g, &c, &tr, 1).unwrap(), gen_update(&d.params, &g, &c, &tr, 1).unwrap());
}

#[test]
fn gan_round_composes_local_and_server_steps() {
    let (g, d, tr) = gan_setup();
    let clients = glyph_clients(1, 4);
    let mut c = cfg(1, 1, 0.0, 1e300);
    c.gan_steps = 1;
    let state = ServerState::new(d.params.clone(), &c).unwrap();
    let (next, g2, report) = dp_fedavg_gan_round(&state, &g, &clients, &c, &tr, 7).unwrap();
    let seed = rng::derive_seed(7, &[purpose::CLIENT, 0, clients[0].id]);
    let local = user_disc_update(&clients[0], &d.params, &g, &c, &tr, seed).unwrap();
    assert!(next.model.sub(&d.params.add(&local.delta).unwrap()).unwrap().norm() < 1e-12);
    let gseed = rng::derive_seed(7, &[purpose::GENERATOR, 0, 0]);
    let (want, _) = gen_update(&next.model, &g, &c, &tr, gseed).unwrap();
    assert_eq!(g2, want);
    assert!(report.gen_loss.is_some());
}

#[test]
fn centralized_sgd_reduces_loss() {
    let clients = glyph_clients(10, 5);
    let examples: Vec<Image> = clients.iter().flat_map(|c| c.examples.clone()).collect();
    let net = ClassifierNet::new(clf_arch(), 4);
    let obj = ClassifierObjective::new(&clf_arch());
    let before = obj.loss_and_grad(&net.params, &examples).unwrap().0;
    let trained = centralized_sgd(&obj, &net.params, &examples, 5, 8, 0.1, 1).unwrap();
    let after = obj.loss_and_grad(&trained, &examples).unwrap().0;
    assert!(after < before, "{after} vs {before}");
}
