//! Reverse-mode differentiation as graph rewriting.
//!
//! Gradients are appended to the graph as ordinary nodes, so a gradient can
//! itself be differentiated (the WGAN gradient penalty needs this).

use std::collections::BTreeMap;

use super::eval::Bindings;
use super::graph::{ComputeGraph, NodeId, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

impl ComputeGraph {
    /// Appends nodes computing d`output`/d`wrt[i]` for every `wrt` node and
    /// returns their ids. `output` must evaluate to a scalar. A `wrt` node that
    /// `output` does not depend on gets an all-zero gradient.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId]) -> Vec<NodeId> {
        let n = output.0 + 1;
        // Nodes downstream of some wrt node.
        let mut depends = vec![false; n];
        for w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].args().iter().any(|a| depends[a.0]) {
                depends[i] = true;
            }
        }
        // Nodes upstream of the output.
        let mut feeds = vec![false; n];
        feeds[output.0] = true;
        for i in (0..n).rev() {
            if feeds[i] {
                for a in self.nodes[i].args() {
                    feeds[a.0] = true;
                }
            }
        }
        let relevant: Vec<bool> = depends.iter().zip(&feeds).map(|(d, f)| *d && *f).collect();

        let mut adjoint: Vec<Option<NodeId>> = vec![None; n];
        if relevant[output.0] {
            adjoint[output.0] = Some(self.scalar_seed(output));
        }
        for i in (0..n).rev() {
            let Some(g) = adjoint[i] else { continue };
            let op = self.nodes[i].clone();
            let y = NodeId(i);
            let mut contribs: Vec<(NodeId, NodeId)> = Vec::new();
            match op {
                Op::Input(_) | Op::Param(_) | Op::Const(_) => {}
                Op::Add(a, b) => {
                    contribs.push((a, g));
                    contribs.push((b, g));
                }
                Op::Sub(a, b) => {
                    contribs.push((a, g));
                    if relevant[b.0] {
                        contribs.push((b, self.scale(g, -1.0)));
                    }
                }
                Op::Mul(a, b) => {
                    if relevant[a.0] {
                        contribs.push((a, self.mul(g, b)));
                    }
                    if relevant[b.0] {
                        contribs.push((b, self.mul(g, a)));
                    }
                }
                Op::MatMul(a, b) => {
                    if relevant[a.0] {
                        let bt = self.transpose(b);
                        contribs.push((a, self.matmul(g, bt)));
                    }
                    if relevant[b.0] {
                        let at = self.transpose(a);
                        contribs.push((b, self.matmul(at, g)));
                    }
                }
                Op::Affine(x, w, b) => {
                    if relevant[x.0] {
                        let wt = self.transpose(w);
                        contribs.push((x, self.matmul(g, wt)));
                    }
                    if relevant[w.0] {
                        let xt = self.transpose(x);
                        contribs.push((w, self.matmul(xt, g)));
                    }
                    if relevant[b.0] {
                        contribs.push((b, self.sum_rows(g)));
                    }
                }
                Op::Relu(x) => {
                    let m = self.step(x);
                    contribs.push((x, self.mul(g, m)));
                }
                Op::LeakyRelu(x, s) => {
                    let m = self.leaky_slope(x, s);
                    contribs.push((x, self.mul(g, m)));
                }
                Op::Sigmoid(x) => {
                    let yy = self.mul(y, y);
                    let d = self.sub(y, yy);
                    contribs.push((x, self.mul(g, d)));
                }
                Op::Tanh(x) => {
                    let yy = self.mul(y, y);
                    let d = self.one_minus(yy);
                    contribs.push((x, self.mul(g, d)));
                }
                Op::Softmax(x) => {
                    let gy = self.mul(g, y);
                    let s = self.sum_cols(gy);
                    let sb = self.broadcast_like(s, g);
                    let diff = self.sub(g, sb);
                    contribs.push((x, self.mul(y, diff)));
                }
                Op::LogSoftmax(x) => {
                    let p = self.softmax(x);
                    let s = self.sum_cols(g);
                    let sb = self.broadcast_like(s, g);
                    let ps = self.mul(p, sb);
                    contribs.push((x, self.sub(g, ps)));
                }
                Op::Log(x) => {
                    let inv = self.pow(x, -1.0);
                    contribs.push((x, self.mul(g, inv)));
                }
                Op::Exp(x) => contribs.push((x, self.mul(g, y))),
                Op::Mean(x) => {
                    let b = self.broadcast_like(g, x);
                    contribs.push((x, self.div_by_len(b, x)));
                }
                Op::Sum(x) | Op::SumRows(x) | Op::SumCols(x) => {
                    contribs.push((x, self.broadcast_like(g, x)));
                }
                Op::L2Norm(x) => {
                    let inv = self.pow(y, -1.0);
                    let gn = self.mul(g, inv);
                    let b = self.broadcast_like(gn, x);
                    contribs.push((x, self.mul(b, x)));
                }
                Op::ConcatCols(parts, widths) => {
                    let mut start = 0;
                    for (p, w) in parts.iter().zip(&widths) {
                        if relevant[p.0] {
                            contribs.push((*p, self.slice_cols(g, start, *w)));
                        }
                        start += w;
                    }
                }
                Op::SliceCols { x, start, width } => {
                    contribs.push((x, self.scatter_cols(g, x, start, width)));
                }
                Op::ScatterCols { x, start, width, .. } => {
                    contribs.push((x, self.slice_cols(g, start, width)));
                }
                Op::Pow(x, p) => {
                    let xp = self.pow(x, p - 1.0);
                    let d = self.scale(xp, p);
                    contribs.push((x, self.mul(g, d)));
                }
                Op::Scale(x, c) => contribs.push((x, self.scale(g, c))),
                Op::AddScalar(x, _) => contribs.push((x, g)),
                Op::Transpose(x) => contribs.push((x, self.transpose(g))),
                Op::BroadcastLike(a, _) => contribs.push((a, self.sum_to_like(g, a))),
                Op::SumToLike(a, _) => contribs.push((a, self.broadcast_like(g, a))),
                Op::DivByLen(a, r) => contribs.push((a, self.div_by_len(g, r))),
                Op::Step(_) | Op::LeakySlope(..) | Op::ZerosLike(_) | Op::ScalarSeed(_) => {}
            }
            for (target, c) in contribs {
                if !relevant[target.0] {
                    continue;
                }
                adjoint[target.0] = Some(match adjoint[target.0] {
                    Some(prev) => self.add(prev, c),
                    None => c,
                });
            }
        }
        wrt.iter()
            .map(|w| match adjoint.get(w.0).copied().flatten() {
                Some(g) => g,
                None => self.zeros_like(*w),
            })
            .collect()
    }
}

/// Gradient of the scalar node `output` with respect to every trainable leaf,
/// keyed by parameter name. Disconnected leaves get zero gradients.
pub fn backward(
    graph: &ComputeGraph,
    bindings: &Bindings,
    output: NodeId,
) -> Result<BTreeMap<String, Tensor>> {
    let mut g = graph.clone();
    let params: Vec<(NodeId, String)> = g
        .params()
        .into_iter()
        .map(|(id, name)| (id, name.to_string()))
        .collect();
    let ids: Vec<NodeId> = params.iter().map(|(id, _)| *id).collect();
    let grads = g.gradients(output, &ids);
    let vals = g.evaluate(bindings, &grads)?;
    Ok(params.into_iter().map(|(_, name)| name).zip(vals).collect())
}

/// Evaluates a scalar node.
pub fn evaluate_scalar(graph: &ComputeGraph, bindings: &Bindings, output: NodeId) -> Result<f64> {
    let v = graph.evaluate(bindings, &[output])?.remove(0);
    if !v.is_scalar() {
        return Err(Error::NotScalar {
            node: output.0,
            shape: v.shape().to_vec(),
        });
    }
    Ok(v.item())
}
