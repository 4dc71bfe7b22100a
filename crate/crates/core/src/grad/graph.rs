use std::collections::HashMap;

use super::tensor::Tensor;

/// Handle to a node of a [`ComputeGraph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations. Row-wise ops act on each row of a `[rows, cols]` matrix.
#[derive(Clone, Debug)]
pub enum Op {
    /// Data bound by name at evaluation; never differentiated unless asked.
    Input(String),
    /// Trainable leaf bound by name at evaluation.
    Param(String),
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    /// `x · w + b` with `b` a `[1, cols]` row added to every row.
    Affine(NodeId, NodeId, NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    /// Column sums, `[r, c] -> [1, c]`.
    SumRows(NodeId),
    /// Row sums, `[r, c] -> [r, 1]`.
    SumCols(NodeId),
    /// Row L2 norms `[r, c] -> [r, 1]`, smoothed by [`NORM_SMOOTHING`] inside the root.
    L2Norm(NodeId),
    ConcatCols(Vec<NodeId>, Vec<usize>),
    SliceCols { x: NodeId, start: usize, width: usize },
    Pow(NodeId, f64),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Transpose(NodeId),
    // Internal ops emitted by differentiation.
    /// Repeats a `[1,1]`, `[1,c]` or `[r,1]` tensor to the shape of the reference.
    BroadcastLike(NodeId, NodeId),
    /// Sums a tensor down to the (broadcastable) shape of the reference.
    SumToLike(NodeId, NodeId),
    /// Divides by the element count of the reference.
    DivByLen(NodeId, NodeId),
    /// Zeros shaped like `like` with `x` written into columns `[start, start + width)`.
    ScatterCols {
        x: NodeId,
        like: NodeId,
        start: usize,
        width: usize,
    },
    /// Indicator `x > 0`; derivative zero.
    Step(NodeId),
    /// 1 where `x > 0`, slope elsewhere; derivative zero.
    LeakySlope(NodeId, f64),
    ZerosLike(NodeId),
    /// `[1,1]` one, failing unless the argument is scalar.
    ScalarSeed(NodeId),
}

/// Added to the squared norm before the square root so the derivative stays finite at zero.
pub const NORM_SMOOTHING: f64 = 1e-12;

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SumRows(_) => "sum_rows",
            Op::SumCols(_) => "sum_cols",
            Op::L2Norm(_) => "l2_norm",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::Pow(..) => "pow",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Transpose(_) => "transpose",
            Op::BroadcastLike(..) => "broadcast_like",
            Op::SumToLike(..) => "sum_to_like",
            Op::DivByLen(..) => "div_by_len",
            Op::ScatterCols { .. } => "scatter_cols",
            Op::Step(_) => "step",
            Op::LeakySlope(..) => "leaky_slope",
            Op::ZerosLike(_) => "zeros_like",
            Op::ScalarSeed(_) => "scalar_seed",
        }
    }

    /// Nodes this op reads from, in argument order.
    pub fn args(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Param(_) | Op::Const(_) => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::BroadcastLike(a, b)
            | Op::SumToLike(a, b)
            | Op::DivByLen(a, b) => vec![*a, *b],
            Op::Affine(x, w, b) => vec![*x, *w, *b],
            Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::L2Norm(a)
            | Op::Pow(a, _)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::Step(a)
            | Op::LeakySlope(a, _)
            | Op::ZerosLike(a)
            | Op::ScalarSeed(a) => vec![*a],
            Op::SliceCols { x, .. } => vec![*x],
            Op::ScatterCols { x, like, .. } => vec![*x, *like],
            Op::ConcatCols(parts, _) => parts.clone(),
        }
    }
}

/// A symbolic computation: nodes are appended in dependency order, so the
/// node index sequence is always a valid topological order.
///
/// Shapes are resolved at evaluation, which lets one graph serve batches of
/// different sizes.
#[derive(Clone, Debug, Default)]
pub struct ComputeGraph {
    pub(crate) nodes: Vec<Op>,
    names: HashMap<String, NodeId>,
}

macro_rules! unary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $fn_name(&mut self, x: NodeId) -> NodeId {
            self.push(Op::$variant(x))
        })*
    };
}

macro_rules! binary {
    ($($fn_name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $fn_name(&mut self, a: NodeId, b: NodeId) -> NodeId {
            self.push(Op::$variant(a, b))
        })*
    };
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    pub(crate) fn push(&mut self, op: Op) -> NodeId {
        debug_assert!(op.args().iter().all(|a| a.0 < self.nodes.len()));
        self.nodes.push(op);
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        self.push(Op::Input(name.to_string()))
    }

    pub fn param(&mut self, name: &str) -> NodeId {
        self.push(Op::Param(name.to_string()))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Const(t))
    }

    unary! {
        relu => Relu,
        sigmoid => Sigmoid,
        tanh => Tanh,
        softmax => Softmax,
        log_softmax => LogSoftmax,
        log => Log,
        exp => Exp,
        mean => Mean,
        sum => Sum,
        sum_rows => SumRows,
        sum_cols => SumCols,
        l2_norm => L2Norm,
        transpose => Transpose,
        step => Step,
        zeros_like => ZerosLike,
        scalar_seed => ScalarSeed,
    }

    binary! {
        add => Add,
        sub => Sub,
        mul => Mul,
        matmul => MatMul,
        broadcast_like => BroadcastLike,
        sum_to_like => SumToLike,
        div_by_len => DivByLen,
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine(x, w, b))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakyRelu(x, slope))
    }

    pub fn leaky_slope(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.push(Op::LeakySlope(x, slope))
    }

    pub fn pow(&mut self, x: NodeId, p: f64) -> NodeId {
        self.push(Op::Pow(x, p))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(x, c))
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> NodeId {
        let neg = self.scale(x, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Concatenates along columns; `widths` are checked at evaluation.
    pub fn concat_cols(&mut self, parts: &[NodeId], widths: &[usize]) -> NodeId {
        assert_eq!(parts.len(), widths.len(), "one width per part");
        self.push(Op::ConcatCols(parts.to_vec(), widths.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, width: usize) -> NodeId {
        self.push(Op::SliceCols { x, start, width })
    }

    pub fn scatter_cols(&mut self, x: NodeId, like: NodeId, start: usize, width: usize) -> NodeId {
        self.push(Op::ScatterCols {
            x,
            like,
            start,
            width,
        })
    }

    /// Attaches an output name to a node.
    pub fn set_name(&mut self, id: NodeId, name: &str) {
        self.names.insert(name.to_string(), id);
    }

    pub fn named(&self, name: &str) -> Option<NodeId> {
        self.names.get(name).copied()
    }

    /// Trainable leaves in creation order.
    pub fn params(&self) -> Vec<(NodeId, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, op)| match op {
                Op::Param(name) => Some((NodeId(i), name.as_str())),
                _ => None,
            })
            .collect()
    }

    /// Finds a leaf (input or param) by its binding name.
    pub fn leaf(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|op| match op {
            Op::Input(n) | Op::Param(n) => n == name,
            _ => false,
        })
        .map(NodeId)
    }
}
