use rand::Rng;

use crate::dp::ParamVector;
use crate::error::{Error, Result};
use crate::grad::{Bindings, ComputeGraph, NodeId, Tensor};
use crate::rng;

/// How a parameter block is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

/// Named parameter blocks of an architecture in flattening order.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    tag: String,
    entries: Vec<Entry>,
}

impl Layout {
    pub fn new(tag: impl Into<String>) -> Self {
        Layout {
            tag: tag.into(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) {
        self.entries.push(Entry {
            name: name.into(),
            rows,
            cols,
            init,
        });
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.rows * e.cols).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(&self) -> ParamVector {
        ParamVector::zeros(self.tag.clone(), self.len())
    }

    pub fn init(&self, seed: u64) -> ParamVector {
        let mut r = rng::stream(seed);
        let mut values = Vec::with_capacity(self.len());
        for e in &self.entries {
            match e.init {
                Init::Zeros => values.extend(std::iter::repeat_n(0.0, e.rows * e.cols)),
                Init::Glorot => {
                    let limit = (6.0 / (e.rows + e.cols) as f64).sqrt();
                    values.extend((0..e.rows * e.cols).map(|_| r.random_range(-limit..limit)));
                }
            }
        }
        ParamVector::new(self.tag.clone(), values)
    }

    pub fn check(&self, params: &ParamVector) -> Result<()> {
        if params.layout() != self.tag || params.len() != self.len() {
            return Err(Error::Layout {
                expected: format!("{} ({} values)", self.tag, self.len()),
                found: format!("{} ({} values)", params.layout(), params.len()),
            });
        }
        Ok(())
    }

    /// Offset of a named block.
    fn offset(&self, name: &str) -> Option<(usize, &Entry)> {
        let mut off = 0;
        for e in &self.entries {
            if e.name == name {
                return Some((off, e));
            }
            off += e.rows * e.cols;
        }
        None
    }

    /// Row-major values of one block.
    pub fn block<'a>(&self, params: &'a ParamVector, name: &str) -> &'a [f64] {
        let (off, e) = self.offset(name).expect("block exists in layout");
        &params.values()[off..off + e.rows * e.cols]
    }

    pub fn block_mut<'a>(&self, params: &'a mut ParamVector, name: &str) -> &'a mut [f64] {
        let (off, e) = self.offset(name).expect("block exists in layout");
        &mut params.values_mut()[off..off + e.rows * e.cols]
    }

    /// Adds each block of `params` to `bindings` under its name.
    pub fn bind(&self, params: &ParamVector, bindings: &mut Bindings) -> Result<()> {
        self.check(params)?;
        let mut off = 0;
        for e in &self.entries {
            let n = e.rows * e.cols;
            let t = Tensor::matrix(e.rows, e.cols, params.values()[off..off + n].to_vec())?;
            bindings.insert(e.name.clone(), t);
            off += n;
        }
        Ok(())
    }

    /// Declares every block as a trainable leaf (or as plain input when
    /// `trainable` is false) and returns the nodes in layout order.
    pub fn declare(&self, g: &mut ComputeGraph, trainable: bool) -> Vec<NodeId> {
        self.entries
            .iter()
            .map(|e| {
                if trainable {
                    g.param(&e.name)
                } else {
                    g.input(&e.name)
                }
            })
            .collect()
    }

    /// Concatenates per-block tensors back into a flat vector.
    pub fn flatten(&self, blocks: &[Tensor]) -> ParamVector {
        let mut values = Vec::with_capacity(self.len());
        for t in blocks {
            values.extend_from_slice(t.data());
        }
        ParamVector::new(self.tag.clone(), values)
    }
}

/// A scalar loss together with its gradient nodes, compiled once and
/// evaluated per batch.
#[derive(Clone, Debug)]
pub struct CompiledLoss {
    pub graph: ComputeGraph,
    pub loss: NodeId,
    grads: Vec<NodeId>,
    layout: Layout,
}

impl CompiledLoss {
    /// `params` must be the trainable leaves declared from `layout`, in order.
    pub fn new(mut graph: ComputeGraph, loss: NodeId, params: &[NodeId], layout: Layout) -> Self {
        let grads = graph.gradients(loss, params);
        CompiledLoss {
            graph,
            loss,
            grads,
            layout,
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn loss_value(&self, params: &ParamVector, mut data: Bindings) -> Result<f64> {
        self.layout.bind(params, &mut data)?;
        crate::grad::evaluate_scalar(&self.graph, &data, self.loss)
    }

    /// Loss and flat gradient at `params`; `data` binds every non-parameter input.
    pub fn loss_and_grad(&self, params: &ParamVector, mut data: Bindings) -> Result<(f64, ParamVector)> {
        self.layout.bind(params, &mut data)?;
        let mut outputs = Vec::with_capacity(self.grads.len() + 1);
        outputs.push(self.loss);
        outputs.extend_from_slice(&self.grads);
        let vals = self.graph.evaluate(&data, &outputs)?;
        let loss = vals[0].item();
        Ok((loss, self.layout.flatten(&vals[1..])))
    }
}
