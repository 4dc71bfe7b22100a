//! Builds small loss graphs by hand and through the model builders, then
//! compares reverse-mode gradients with central finite differences.

use fedgen::grad::{backward, finite_diff_check, Bindings, ComputeGraph, Tensor};
use fedgen::models::{classifier_batch, classifier_loss_graph, gaussian_tensor, ClassifierNet, DenseArch};

fn main() -> fedgen::Result<()> {
    // loss = sum(tanh(x W)^2)
    let mut g = ComputeGraph::new();
    let x = g.input("x");
    let w = g.param("w");
    let h = g.matmul(x, w);
    let t = g.tanh(h);
    let sq = g.pow(t, 2.0);
    let loss = g.sum(sq);

    let mut b = Bindings::new();
    b.insert("x".into(), Tensor::matrix(2, 3, vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.75])?);
    b.insert("w".into(), Tensor::matrix(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6])?);
    let grads = backward(&g, &b, loss)?;
    println!("d loss / d w = {:?}", grads["w"].data());
    println!("hand-built graph: max rel err {:.2e}", finite_diff_check(&g, &b, loss, 1e-5)?);

    // Cross-entropy of a small dense classifier.
    let arch = DenseArch {
        input: 6,
        hidden: vec![5],
        output: 3,
    };
    let net = ClassifierNet::new(arch.clone(), 7);
    let compiled = classifier_loss_graph(&arch);
    let mut b = classifier_batch(gaussian_tensor(4, arch.input, 8), &[0, 2, 1, 2], arch.output)?;
    net.layout().bind(&net.params, &mut b)?;
    let err = finite_diff_check(&compiled.graph, &b, compiled.loss, 1e-5)?;
    println!("classifier loss:  max rel err {err:.2e}");
    Ok(())
}
