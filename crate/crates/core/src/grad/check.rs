use super::autodiff::{backward, evaluate_scalar};
use super::eval::Bindings;
use super::graph::{ComputeGraph, NodeId};
use crate::error::{Error, Result};

pub const DENOM_FLOOR: f64 = 1e-6;

/// Largest relative disagreement between reverse-mode gradients and central
/// differences, over every coordinate of every trainable leaf:
/// `|analytic - numeric| / max(|analytic| + |numeric|, DENOM_FLOOR)`.
///
/// The floor keeps exactly-zero gradients (e.g. a critic's output bias, which
/// cancels between real and fake terms) from turning roundoff into a ratio
/// near 1; such coordinates must instead agree to `1e-4 * DENOM_FLOOR`.
pub fn finite_diff_check(
    graph: &ComputeGraph,
    bindings: &Bindings,
    output: NodeId,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::invalid(format!("finite-difference step {eps} outside (0, 1e-2]")));
    }
    let analytic = backward(graph, bindings, output)?;
    let mut probe = bindings.clone();
    let mut worst = 0.0f64;
    for (name, grad) in &analytic {
        let n = probe
            .get(name)
            .ok_or_else(|| Error::Unbound(name.clone()))?
            .len();
        for i in 0..n {
            let orig = probe[name].data()[i];
            probe.get_mut(name).expect("bound").data_mut()[i] = orig + eps;
            let up = evaluate_scalar(graph, &probe, output)?;
            probe.get_mut(name).expect("bound").data_mut()[i] = orig - eps;
            let down = evaluate_scalar(graph, &probe, output)?;
            probe.get_mut(name).expect("bound").data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
