use std::collections::{BTreeMap, HashMap};

use super::graph::{ComputeGraph, NodeId, Op, NORM_SMOOTHING};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Name → tensor bindings for `Input` and `Param` leaves.
pub type Bindings = HashMap<String, Tensor>;

fn shape_err(node: usize, op: &Op, detail: String) -> Error {
    Error::Shape {
        node,
        op: op.name(),
        detail,
    }
}

fn require_matrix(node: usize, op: &Op, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(shape_err(node, op, format!("expected a matrix, got {:?}", t.shape())))
    }
}

fn same_shape(node: usize, op: &Op, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(shape_err(
            node,
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn broadcast_to(node: usize, op: &Op, a: &Tensor, target: &[usize]) -> Result<Tensor> {
    let (tr, tc) = (target[0], target[1..].iter().product::<usize>());
    let (ar, ac) = (a.rows(), a.cols());
    if (ar != 1 && ar != tr) || (ac != 1 && ac != tc) {
        return Err(shape_err(
            node,
            op,
            format!("cannot broadcast {:?} to {:?}", a.shape(), target),
        ));
    }
    let mut out = Vec::with_capacity(tr * tc);
    for i in 0..tr {
        let r = if ar == 1 { 0 } else { i };
        for j in 0..tc {
            let c = if ac == 1 { 0 } else { j };
            out.push(a.data()[r * ac + c]);
        }
    }
    Tensor::new(target.to_vec(), out)
}

fn sum_to(node: usize, op: &Op, a: &Tensor, target: &[usize]) -> Result<Tensor> {
    let (tr, tc) = (target[0], target[1..].iter().product::<usize>());
    let (ar, ac) = (a.rows(), a.cols());
    if (tr != 1 && tr != ar) || (tc != 1 && tc != ac) {
        return Err(shape_err(
            node,
            op,
            format!("cannot reduce {:?} to {:?}", a.shape(), target),
        ));
    }
    let mut out = vec![0.0; tr * tc];
    for i in 0..ar {
        let r = if tr == 1 { 0 } else { i };
        for j in 0..ac {
            let c = if tc == 1 { 0 } else { j };
            out[r * tc + c] += a.data()[i * ac + j];
        }
    }
    Tensor::new(target.to_vec(), out)
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

impl ComputeGraph {
    fn eval_node(&self, idx: usize, vals: &[Option<Tensor>], bindings: &Bindings) -> Result<Tensor> {
        let op = &self.nodes[idx];
        let v = |id: &NodeId| -> &Tensor { vals[id.0].as_ref().expect("argument evaluated first") };
        let out = match op {
            Op::Input(name) | Op::Param(name) => {
                let t = bindings
                    .get(name)
                    .ok_or_else(|| Error::Unbound(name.clone()))?;
                require_matrix(idx, op, t)?;
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::Add(a, b) => {
                same_shape(idx, op, v(a), v(b))?;
                v(a).zip_map(v(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same_shape(idx, op, v(a), v(b))?;
                v(a).zip_map(v(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same_shape(idx, op, v(a), v(b))?;
                v(a).zip_map(v(b), |x, y| x * y)
            }
            Op::MatMul(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.cols() != b.rows() {
                    return Err(shape_err(idx, op, format!("{:?} · {:?}", a.shape(), b.shape())));
                }
                a.matmul(b)
            }
            Op::Affine(x, w, b) => {
                let (x, w, b) = (v(x), v(w), v(b));
                if x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols() {
                    return Err(shape_err(
                        idx,
                        op,
                        format!("{:?} · {:?} + {:?}", x.shape(), w.shape(), b.shape()),
                    ));
                }
                let mut y = x.matmul(w);
                let c = y.cols();
                for row in y.data_mut().chunks_mut(c) {
                    for (o, bb) in row.iter_mut().zip(b.data()) {
                        *o += bb;
                    }
                }
                y
            }
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::LeakyRelu(a, s) => v(a).map(|x| if x > 0.0 { x } else { s * x }),
            Op::Sigmoid(a) => v(a).map(|x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }),
            Op::Tanh(a) => v(a).map(f64::tanh),
            Op::Softmax(a) => softmax_rows(v(a)),
            Op::LogSoftmax(a) => log_softmax_rows(v(a)),
            Op::Log(a) => v(a).map(f64::ln),
            Op::Exp(a) => v(a).map(f64::exp),
            Op::Mean(a) => Tensor::scalar(v(a).sum() / v(a).len() as f64),
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::SumRows(a) => sum_to(idx, op, v(a), &[1, v(a).cols()])?,
            Op::SumCols(a) => sum_to(idx, op, v(a), &[v(a).rows(), 1])?,
            Op::L2Norm(a) => {
                let a = v(a);
                let sq = sum_to(idx, op, &a.map(|x| x * x), &[a.rows(), 1])?;
                sq.map(|s| (s + NORM_SMOOTHING).sqrt())
            }
            Op::ConcatCols(parts, widths) => {
                let rows = v(&parts[0]).rows();
                for (p, &w) in parts.iter().zip(widths) {
                    let t = v(p);
                    if t.rows() != rows || t.cols() != w {
                        return Err(shape_err(
                            idx,
                            op,
                            format!("part {:?} expected [{rows}, {w}]", t.shape()),
                        ));
                    }
                }
                let total: usize = widths.iter().sum();
                let mut out = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in parts {
                        out.extend_from_slice(v(p).row_slice(r));
                    }
                }
                Tensor::matrix(rows, total, out)?
            }
            Op::SliceCols { x, start, width } => {
                let t = v(x);
                if start + width > t.cols() {
                    return Err(shape_err(
                        idx,
                        op,
                        format!("columns {start}..{} of {:?}", start + width, t.shape()),
                    ));
                }
                let mut out = Vec::with_capacity(t.rows() * width);
                for r in 0..t.rows() {
                    out.extend_from_slice(&t.row_slice(r)[*start..start + width]);
                }
                Tensor::matrix(t.rows(), *width, out)?
            }
            Op::ScatterCols {
                x,
                like,
                start,
                width,
            } => {
                let (t, like) = (v(x), v(like));
                let total = like.cols();
                if t.cols() != *width || t.rows() != like.rows() || start + width > total {
                    return Err(shape_err(
                        idx,
                        op,
                        format!("{:?} into columns {start}.. of {:?}", t.shape(), like.shape()),
                    ));
                }
                let mut out = vec![0.0; t.rows() * total];
                for r in 0..t.rows() {
                    out[r * total + start..r * total + start + width]
                        .copy_from_slice(t.row_slice(r));
                }
                Tensor::matrix(t.rows(), total, out)?
            }
            Op::Pow(a, p) => v(a).map(|x| x.powf(*p)),
            Op::Scale(a, c) => v(a).map(|x| x * c),
            Op::AddScalar(a, c) => v(a).map(|x| x + c),
            Op::Transpose(a) => v(a).transpose(),
            Op::BroadcastLike(a, r) => broadcast_to(idx, op, v(a), v(r).shape())?,
            Op::SumToLike(a, r) => sum_to(idx, op, v(a), v(r).shape())?,
            Op::DivByLen(a, r) => {
                let n = v(r).len() as f64;
                v(a).map(|x| x / n)
            }
            Op::Step(a) => v(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
            Op::LeakySlope(a, s) => v(a).map(|x| if x > 0.0 { 1.0 } else { *s }),
            Op::ZerosLike(a) => v(a).map(|_| 0.0),
            Op::ScalarSeed(a) => {
                if !v(a).is_scalar() {
                    return Err(Error::NotScalar {
                        node: a.0,
                        shape: v(a).shape().to_vec(),
                    });
                }
                Tensor::scalar(1.0)
            }
        };
        if !out.all_finite() {
            return Err(Error::NonFinite {
                node: idx,
                op: op.name(),
            });
        }
        Ok(out)
    }

    /// Evaluates the requested nodes and everything they depend on.
    ///
    /// Evaluation is single-threaded in node order, so identical bindings give
    /// bit-identical results.
    pub fn evaluate(&self, bindings: &Bindings, outputs: &[NodeId]) -> Result<Vec<Tensor>> {
        let mut needed = vec![false; self.nodes.len()];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for a in self.nodes[i].args() {
                    needed[a.0] = true;
                }
            }
        }
        let mut vals: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for i in 0..self.nodes.len() {
            if needed[i] {
                vals[i] = Some(self.eval_node(i, &vals, bindings)?);
            }
        }
        Ok(outputs
            .iter()
            .map(|o| vals[o.0].clone().expect("evaluated"))
            .collect())
    }

    /// Evaluates nodes registered with [`ComputeGraph::set_name`].
    pub fn evaluate_named(
        &self,
        bindings: &Bindings,
        names: &[&str],
    ) -> Result<BTreeMap<String, Tensor>> {
        let ids = names
            .iter()
            .map(|n| {
                self.named(n)
                    .ok_or_else(|| Error::invalid(format!("no output named `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let vals = self.evaluate(bindings, &ids)?;
        Ok(names.iter().map(|n| n.to_string()).zip(vals).collect())
    }
}
