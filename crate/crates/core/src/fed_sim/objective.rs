use crate::datasets::{image_batch, Image};
use crate::dp::ParamVector;
use crate::error::{Error, Result};
use crate::models::{classifier_batch, classifier_loss_graph, lm_batch, lm_loss_graph, CompiledLoss, DenseArch, LmArch};

/// A differentiable per-batch loss over one kind of example.
pub trait LocalObjective: Sync {
    type Example: Sync;

    fn loss_and_grad(&self, params: &ParamVector, batch: &[Self::Example]) -> Result<(f64, ParamVector)>;
}

/// Softmax cross-entropy over labelled glyphs.
pub struct ClassifierObjective {
    loss: CompiledLoss,
    classes: usize,
}

impl ClassifierObjective {
    pub fn new(arch: &DenseArch) -> Self {
        ClassifierObjective {
            loss: classifier_loss_graph(arch),
            classes: arch.output,
        }
    }
}

impl LocalObjective for ClassifierObjective {
    type Example = Image;

    fn loss_and_grad(&self, params: &ParamVector, batch: &[Image]) -> Result<(f64, ParamVector)> {
        let x = image_batch(batch)?;
        let labels: Vec<usize> = batch.iter().map(|im| im.label as usize).collect();
        self.loss.loss_and_grad(params, classifier_batch(x, &labels, self.classes)?)
    }
}

/// Token-level cross-entropy of a recurrent LM over terminated sequences.
///
/// Sequences longer than `max_steps` are cut to their first `max_steps`
/// tokens.
pub struct LmObjective {
    arch: LmArch,
    graphs: Vec<CompiledLoss>,
}

impl LmObjective {
    pub fn new(arch: LmArch, max_steps: usize) -> Self {
        let graphs = (1..=max_steps).map(|s| lm_loss_graph(&arch, s)).collect();
        LmObjective { arch, graphs }
    }

    pub fn max_steps(&self) -> usize {
        self.graphs.len()
    }
}

impl LocalObjective for LmObjective {
    type Example = Vec<usize>;

    fn loss_and_grad(&self, params: &ParamVector, batch: &[Vec<usize>]) -> Result<(f64, ParamVector)> {
        let max = self.max_steps();
        let cut: Vec<Vec<usize>> = batch.iter().map(|s| s[..s.len().min(max)].to_vec()).collect();
        let (steps, bindings) = lm_batch(&self.arch, &cut)?;
        let graph = self
            .graphs
            .get(steps - 1)
            .ok_or_else(|| Error::invalid(format!("sequence of {steps} steps exceeds {max}")))?;
        graph.loss_and_grad(params, bindings)
    }
}
