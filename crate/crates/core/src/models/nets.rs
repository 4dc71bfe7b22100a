use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::layout::{CompiledLoss, Init, Layout};
use crate::dp::ParamVector;
use crate::error::{Error, Result};
use crate::grad::{Bindings, ComputeGraph, NodeId, Tensor};
use crate::rng;

const LEAK: f64 = 0.2;

/// Fully connected stack: `input -> hidden.. -> output`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArch {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl DenseArch {
    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input];
        w.extend(&self.hidden);
        w.push(self.output);
        w
    }

    fn layout(&self, prefix: &str) -> Layout {
        let w = self.widths();
        let tag = format!(
            "{prefix}:{}",
            w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("-")
        );
        let mut l = Layout::new(tag);
        for i in 0..w.len() - 1 {
            l.push(format!("{prefix}.w{i}"), w[i], w[i + 1], Init::Glorot);
            l.push(format!("{prefix}.b{i}"), 1, w[i + 1], Init::Zeros);
        }
        l
    }
}

/// Applies the stack with leaky-relu between layers and no output nonlinearity.
fn dense(g: &mut ComputeGraph, x: NodeId, params: &[NodeId]) -> NodeId {
    let layers = params.len() / 2;
    let mut h = x;
    for i in 0..layers {
        h = g.affine(h, params[2 * i], params[2 * i + 1]);
        if i + 1 < layers {
            h = g.leaky_relu(h, LEAK);
        }
    }
    h
}

fn dense_forward(layout: &Layout, params: &ParamVector, x: &Tensor, arch: &DenseArch) -> Result<Tensor> {
    layout.check(params)?;
    let w = arch.widths();
    let mut h = x.clone();
    let prefix = layout.tag().split(':').next().unwrap_or_default().to_string();
    for i in 0..w.len() - 1 {
        let wt = Tensor::matrix(w[i], w[i + 1], layout.block(params, &format!("{prefix}.w{i}")).to_vec())?;
        let b = layout.block(params, &format!("{prefix}.b{i}"));
        if h.cols() != w[i] {
            return Err(Error::Shape {
                node: 0,
                op: "dense",
                detail: format!("input width {} but layer expects {}", h.cols(), w[i]),
            });
        }
        let mut y = h.matmul(&wt);
        let c = y.cols();
        let last = i + 2 == w.len();
        for row in y.data_mut().chunks_mut(c) {
            for (o, bb) in row.iter_mut().zip(b) {
                *o += bb;
                if !last && *o < 0.0 {
                    *o *= LEAK;
                }
            }
        }
        h = y;
    }
    Ok(h)
}

/// Maps latent noise to pixel intensities in (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    pub arch: DenseArch,
    pub params: ParamVector,
}

impl GeneratorNet {
    pub fn new(arch: DenseArch, seed: u64) -> Self {
        let params = arch.layout("gen").init(seed);
        GeneratorNet { arch, params }
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout("gen")
    }

    pub fn noise_dim(&self) -> usize {
        self.arch.input
    }

    /// Generates one image per row of `noise`.
    pub fn generate(&self, noise: &Tensor) -> Result<Tensor> {
        let logits = dense_forward(&self.layout(), &self.params, noise, &self.arch)?;
        Ok(logits.map(|v| 1.0 / (1.0 + (-v).exp())))
    }

    /// Draws `n` latent vectors uniformly from [-1, 1].
    pub fn sample_noise(&self, n: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed);
        let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let data = (0..n * self.arch.input).map(|_| u.sample(&mut r)).collect();
        Tensor::matrix(n, self.arch.input, data).expect("positive extents")
    }
}

fn generator_graph(g: &mut ComputeGraph, u: NodeId, params: &[NodeId]) -> NodeId {
    let logits = dense(g, u, params);
    g.sigmoid(logits)
}

/// Scores images; higher means "more real". Output is a single unbounded logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorNet {
    pub arch: DenseArch,
    pub params: ParamVector,
}

impl DiscriminatorNet {
    pub fn new(arch: DenseArch, seed: u64) -> Result<Self> {
        if arch.output != 1 {
            return Err(Error::invalid("discriminator output width must be 1"));
        }
        let params = arch.layout("disc").init(seed);
        Ok(DiscriminatorNet { arch, params })
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout("disc")
    }

    pub fn score(&self, images: &Tensor) -> Result<Tensor> {
        dense_forward(&self.layout(), &self.params, images, &self.arch)
    }
}

/// Wasserstein critic loss with gradient penalty,
/// `mean D(fake) - mean D(real) + λ·mean((‖∇D(x̂)‖ - 1)²)`
/// where `x̂ = ε·real + (1-ε)·fake` row by row.
///
/// Inputs: `real`, `fake` `[B, pixels]` and `mix` `[B, 1]`.
pub fn disc_loss_graph(arch: &DenseArch, lambda: f64) -> CompiledLoss {
    let layout = arch.layout("disc");
    let mut g = ComputeGraph::new();
    let params = layout.declare(&mut g, true);
    let real = g.input("real");
    let fake = g.input("fake");
    let d_real = dense(&mut g, real, &params);
    let d_fake = dense(&mut g, fake, &params);
    let m_real = g.mean(d_real);
    let m_fake = g.mean(d_fake);
    let mut loss = g.sub(m_fake, m_real);
    if lambda != 0.0 {
        let mix = g.input("mix");
        let mix_b = g.broadcast_like(mix, real);
        let keep = g.one_minus(mix_b);
        let a = g.mul(mix_b, real);
        let b = g.mul(keep, fake);
        let x_hat = g.add(a, b);
        let d_hat = dense(&mut g, x_hat, &params);
        let total = g.sum(d_hat);
        let grad = g.gradients(total, &[x_hat])[0];
        let norm = g.l2_norm(grad);
        let gap = g.add_scalar(norm, -1.0);
        let sq = g.pow(gap, 2.0);
        let pen = g.mean(sq);
        let pen = g.scale(pen, lambda);
        loss = g.add(loss, pen);
    }
    g.set_name(loss, "disc_loss");
    CompiledLoss::new(g, loss, &params, layout)
}

/// Draws per-example interpolation coefficients uniformly from [0, 1).
pub fn mix_coefficients(batch: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed);
    let u = Uniform::new(0.0, 1.0).expect("valid range");
    Tensor::matrix(batch, 1, (0..batch).map(|_| u.sample(&mut r)).collect()).expect("positive extents")
}

/// Bindings for [`disc_loss_graph`].
pub fn disc_batch(real: Tensor, fake: Tensor, mix: Tensor) -> Bindings {
    let mut b = Bindings::new();
    b.insert("real".into(), real);
    b.insert("fake".into(), fake);
    b.insert("mix".into(), mix);
    b
}

/// Generator loss `-mean D(G(u))` with the discriminator held fixed.
///
/// The discriminator blocks are graph inputs; bind them with
/// [`gen_batch`].
pub fn gen_loss_graph(gen: &DenseArch, disc: &DenseArch) -> CompiledLoss {
    let g_layout = gen.layout("gen");
    let d_layout = disc.layout("disc");
    let mut g = ComputeGraph::new();
    let gp = g_layout.declare(&mut g, true);
    let dp = d_layout.declare(&mut g, false);
    let u = g.input("noise");
    let fake = generator_graph(&mut g, u, &gp);
    let score = dense(&mut g, fake, &dp);
    let m = g.mean(score);
    let loss = g.scale(m, -1.0);
    g.set_name(loss, "gen_loss");
    CompiledLoss::new(g, loss, &gp, g_layout)
}

pub fn gen_batch(disc: &DiscriminatorNet, noise: Tensor) -> Result<Bindings> {
    let mut b = Bindings::new();
    disc.layout().bind(&disc.params, &mut b)?;
    b.insert("noise".into(), noise);
    Ok(b)
}

/// Softmax classifier over flattened images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierNet {
    pub arch: DenseArch,
    pub params: ParamVector,
}

impl ClassifierNet {
    pub fn new(arch: DenseArch, seed: u64) -> Self {
        let params = arch.layout("clf").init(seed);
        ClassifierNet { arch, params }
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout("clf")
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        dense_forward(&self.layout(), &self.params, images, &self.arch)
    }
}

/// Predicted label (lowest index among ties) and the logits of one image.
pub fn classify(net: &ClassifierNet, image: &[f64]) -> Result<(usize, Vec<f64>)> {
    let x = Tensor::row(image.to_vec());
    let logits = net.logits(&x)?.into_data();
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok((best, logits))
}

/// Mean cross-entropy. Inputs: `x` `[B, pixels]`, `y` one-hot `[B, classes]`.
pub fn classifier_loss_graph(arch: &DenseArch) -> CompiledLoss {
    let layout = arch.layout("clf");
    let mut g = ComputeGraph::new();
    let params = layout.declare(&mut g, true);
    let x = g.input("x");
    let y = g.input("y");
    let logits = dense(&mut g, x, &params);
    let ls = g.log_softmax(logits);
    let picked = g.mul(ls, y);
    let per_row = g.sum_cols(picked);
    let m = g.mean(per_row);
    let loss = g.scale(m, -1.0);
    g.set_name(loss, "xent");
    CompiledLoss::new(g, loss, &params, layout)
}

pub fn classifier_batch(images: Tensor, labels: &[usize], classes: usize) -> Result<Bindings> {
    if labels.len() != images.rows() {
        return Err(Error::invalid("one label per image row"));
    }
    let mut y = Tensor::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::invalid(format!("label {l} out of range 0..{classes}")));
        }
        y.data_mut()[i * classes + l] = 1.0;
    }
    let mut b = Bindings::new();
    b.insert("x".into(), images);
    b.insert("y".into(), y);
    Ok(b)
}

/// Gaussian noise tensor, used by tests and examples as random input.
pub fn gaussian_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
    Tensor::matrix(rows, cols, data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::finite_diff_check;

    fn linear_disc(w: &[f64]) -> DiscriminatorNet {
        let arch = DenseArch {
            input: w.len(),
            hidden: vec![],
            output: 1,
        };
        let mut d = DiscriminatorNet::new(arch, 0).unwrap();
        let l = d.layout();
        l.block_mut(&mut d.params, "disc.w0").copy_from_slice(w);
        d
    }

    #[test]
    fn penalty_of_linear_critic() {
        // ‖w‖ = 3, identical batches: Wasserstein term cancels, penalty is λ(3-1)².
        let d = linear_disc(&[1.0, 2.0, 2.0]);
        let loss = disc_loss_graph(&d.arch, 10.0);
        let x = gaussian_tensor(4, 3, 1);
        let v = loss
            .loss_value(&d.params, disc_batch(x.clone(), x, mix_coefficients(4, 2)))
            .unwrap();
        assert!((v - 40.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn constant_critic_has_zero_loss() {
        let d = linear_disc(&[0.0, 0.0]);
        let loss = disc_loss_graph(&d.arch, 0.0);
        let b = disc_batch(gaussian_tensor(3, 2, 1), gaussian_tensor(3, 2, 2), mix_coefficients(3, 3));
        assert_eq!(loss.loss_value(&d.params, b).unwrap(), 0.0);
    }

    fn small_disc() -> DiscriminatorNet {
        DiscriminatorNet::new(
            DenseArch {
                input: 5,
                hidden: vec![4, 3],
                output: 1,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn disc_loss_invariant_to_joint_permutation() {
        let d = small_disc();
        let loss = disc_loss_graph(&d.arch, 10.0);
        let (real, fake, mix) = (gaussian_tensor(4, 5, 1), gaussian_tensor(4, 5, 2), mix_coefficients(4, 3));
        let perm = [2, 0, 3, 1];
        let p = |t: &Tensor| {
            let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row_slice(i).to_vec()).collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let a = loss
            .loss_value(&d.params, disc_batch(real.clone(), fake.clone(), mix.clone()))
            .unwrap();
        let b = loss.loss_value(&d.params, disc_batch(p(&real), p(&fake), p(&mix))).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn disc_loss_gradient_matches_finite_differences() {
        let d = small_disc();
        let loss = disc_loss_graph(&d.arch, 10.0);
        let mut b = disc_batch(gaussian_tensor(3, 5, 1), gaussian_tensor(3, 5, 2), mix_coefficients(3, 3));
        d.layout().bind(&d.params, &mut b).unwrap();
        let err = finite_diff_check(&loss.graph, &b, loss.loss, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn gen_loss_gradient_matches_finite_differences() {
        let gen = GeneratorNet::new(
            DenseArch {
                input: 3,
                hidden: vec![4],
                output: 5,
            },
            1,
        );
        let d = small_disc();
        let loss = gen_loss_graph(&gen.arch, &d.arch);
        let mut b = gen_batch(&d, gen.sample_noise(4, 9)).unwrap();
        gen.layout().bind(&gen.params, &mut b).unwrap();
        let err = finite_diff_check(&loss.graph, &b, loss.loss, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
        // only generator blocks are trainable
        assert!(loss.graph.params().iter().all(|(_, n)| n.starts_with("gen.")));
    }

    #[test]
    fn graph_and_direct_forward_agree() {
        let gen = GeneratorNet::new(
            DenseArch {
                input: 3,
                hidden: vec![6],
                output: 5,
            },
            4,
        );
        let d = small_disc();
        let noise = gen.sample_noise(4, 5);
        let fake = gen.generate(&noise).unwrap();
        assert!(fake.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        let direct = -d.score(&fake).unwrap().sum() / 4.0;
        let loss = gen_loss_graph(&gen.arch, &d.arch);
        let g = loss.loss_value(&gen.params, gen_batch(&d, noise).unwrap()).unwrap();
        assert!((direct - g).abs() < 1e-12);
    }

    #[test]
    fn classifier_loss_and_classify() {
        let net = ClassifierNet::new(
            DenseArch {
                input: 4,
                hidden: vec![5],
                output: 3,
            },
            2,
        );
        let x = gaussian_tensor(6, 4, 8);
        let labels = [0, 1, 2, 2, 1, 0];
        let loss = classifier_loss_graph(&net.arch);
        let mut b = classifier_batch(x.clone(), &labels, 3).unwrap();
        let (v, grad) = loss.loss_and_grad(&net.params, b.clone()).unwrap();
        assert!(v > 0.0);
        assert_eq!(grad.len(), net.params.len());
        net.layout().bind(&net.params, &mut b).unwrap();
        assert!(finite_diff_check(&loss.graph, &b, loss.loss, 1e-5).unwrap() < 1e-4);

        let (label, logits) = classify(&net, x.row_slice(0)).unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(logits[label], max);
        assert!(classifier_batch(x, &[0, 1, 2, 3, 0, 0], 3).is_err());
    }

    #[test]
    fn classify_breaks_ties_low() {
        let net = ClassifierNet {
            arch: DenseArch {
                input: 2,
                hidden: vec![],
                output: 3,
            },
            params: ParamVector::zeros("clf:2-3", 9),
        };
        assert_eq!(classify(&net, &[0.5, 0.5]).unwrap().0, 0);
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let d = small_disc();
        let loss = disc_loss_graph(&d.arch, 1.0);
        let bad = ParamVector::zeros("gen:1-1", 2);
        let b = disc_batch(gaussian_tensor(2, 5, 1), gaussian_tensor(2, 5, 2), mix_coefficients(2, 3));
        assert!(matches!(loss.loss_value(&bad, b), Err(Error::Layout { .. })));
    }
}
