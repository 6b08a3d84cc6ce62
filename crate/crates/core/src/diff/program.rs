use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Handle to a node inside a [`Program`]. Nodes only reference earlier nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Node(pub(crate) usize);

impl Node {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Handle to a dense layer's parameter block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => libm::tanh(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// First derivative at `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }

    /// Second derivative at `x`.
    #[inline]
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 0.0,
            Activation::Tanh => {
                let t = libm::tanh(x);
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Bandwidth rule for the pairwise Gaussian kernel operation.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Bandwidth {
    Fixed(f64),
    /// `window * std(src) * rows^(-1/5)`, recomputed at every evaluation and
    /// treated as a constant by the backward pass.
    Silverman { window: f64 },
}

/// One step of a [`Program`]. Matrices are row-major; scalars are 1x1.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Op {
    Input { slot: usize },
    /// `x W^T + b` with the layer's parameters.
    Affine { src: Node, layer: LayerId },
    /// `t W^T`: the layer's linear part applied to a tangent, no bias.
    AffineTangent { src: Node, layer: LayerId },
    Activate { src: Node, act: Activation },
    ActivateDerivative { src: Node, act: Activation },
    /// Column vector `u` (n x 1) to the n x n matrix `K_h(u_a - u_b)`.
    GaussianKernel { src: Node, bandwidth: Bandwidth },
    Log { src: Node },
    Exp { src: Node },
    Square { src: Node },
    Abs { src: Node },
    ClampMin { src: Node, floor: f64 },
    Scale { src: Node, factor: f64 },
    Offset { src: Node, shift: f64 },
    /// Elementwise; either side may be 1x1 and is then broadcast.
    Add { lhs: Node, rhs: Node },
    Sub { lhs: Node, rhs: Node },
    Mul { lhs: Node, rhs: Node },
    Div { lhs: Node, rhs: Node },
    Sum { src: Node },
    Mean { src: Node },
    RowSum { src: Node },
    ColMean { src: Node },
    MatMul { lhs: Node, rhs: Node },
    Columns { src: Node, start: usize, len: usize },
    Concat { parts: Vec<Node> },
    /// Constant with the shape of `like`, ones in column `col`, zeros elsewhere.
    UnitDirection { like: Node, col: usize },
    /// Sample covariance (n - 1 denominator) plus `ridge * I`.
    Covariance { src: Node, ridge: f64 },
    /// `ln det` of a symmetric positive definite matrix.
    LogDet { src: Node },
    Trace { src: Node },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Affine { .. } => "affine",
            Op::AffineTangent { .. } => "affine-tangent",
            Op::Activate { .. } => "activate",
            Op::ActivateDerivative { .. } => "activate-derivative",
            Op::GaussianKernel { .. } => "gaussian-kernel",
            Op::Log { .. } => "log",
            Op::Exp { .. } => "exp",
            Op::Square { .. } => "square",
            Op::Abs { .. } => "abs",
            Op::ClampMin { .. } => "clamp-min",
            Op::Scale { .. } => "scale",
            Op::Offset { .. } => "offset",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Div { .. } => "div",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::RowSum { .. } => "row-sum",
            Op::ColMean { .. } => "col-mean",
            Op::MatMul { .. } => "matmul",
            Op::Columns { .. } => "columns",
            Op::Concat { .. } => "concat",
            Op::UnitDirection { .. } => "unit-direction",
            Op::Covariance { .. } => "covariance",
            Op::LogDet { .. } => "log-det",
            Op::Trace { .. } => "trace",
        }
    }

    pub(crate) fn sources(&self) -> Vec<Node> {
        match self {
            Op::Input { .. } => vec![],
            Op::Affine { src, .. }
            | Op::AffineTangent { src, .. }
            | Op::Activate { src, .. }
            | Op::ActivateDerivative { src, .. }
            | Op::GaussianKernel { src, .. }
            | Op::Log { src }
            | Op::Exp { src }
            | Op::Square { src }
            | Op::Abs { src }
            | Op::ClampMin { src, .. }
            | Op::Scale { src, .. }
            | Op::Offset { src, .. }
            | Op::Sum { src }
            | Op::Mean { src }
            | Op::RowSum { src }
            | Op::ColMean { src }
            | Op::Columns { src, .. }
            | Op::Covariance { src, .. }
            | Op::LogDet { src }
            | Op::Trace { src } => vec![*src],
            Op::Add { lhs, rhs }
            | Op::Sub { lhs, rhs }
            | Op::Mul { lhs, rhs }
            | Op::Div { lhs, rhs }
            | Op::MatMul { lhs, rhs } => vec![*lhs, *rhs],
            Op::Concat { parts } => parts.clone(),
            // Only the row count of `like` is read; no value dependence.
            Op::UnitDirection { .. } => vec![],
        }
    }

    fn layer(&self) -> Option<LayerId> {
        match self {
            Op::Affine { layer, .. } | Op::AffineTangent { layer, .. } => Some(*layer),
            _ => None,
        }
    }
}

/// Shape and position of one dense layer inside the flat parameter array:
/// `out_dim x in_dim` weights (row-major), then `out_dim` biases if present.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.in_dim * self.out_dim
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + if self.bias { self.out_dim } else { 0 }
    }

    pub fn weight_range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.weight_count()
    }

    pub fn bias_range(&self) -> core::ops::Range<usize> {
        let start = self.offset + self.weight_count();
        start..start + if self.bias { self.out_dim } else { 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamLayout {
    pub layers: Vec<LayerShape>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.layers.last().map_or(0, |l| l.offset + l.param_count())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage for a [`Program`].
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParameterVector(pub Vec<f64>);

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A scalar-valued (or, for evaluation only, matrix-valued) computation over
/// named inputs and a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Program {
    pub(crate) ops: Vec<Op>,
    pub(crate) output: Node,
    pub(crate) layout: ParamLayout,
    pub(crate) input_cols: Vec<Option<usize>>,
    /// Whether each node depends on the parameters.
    pub(crate) needs_grad: Vec<bool>,
}

impl Program {
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn output(&self) -> Node {
        self.output
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn input_arity(&self) -> usize {
        self.input_cols.len()
    }
}

#[derive(Debug, Default)]
pub struct ProgramBuilder {
    ops: Vec<Op>,
    layout: ParamLayout,
    input_cols: Vec<Option<usize>>,
}

macro_rules! unary {
    ($($name:ident => $variant:ident),* $(,)?) => {
        $(
            pub fn $name(&mut self, src: Node) -> Node {
                self.push(Op::$variant { src })
            }
        )*
    };
}

macro_rules! binary {
    ($($name:ident => $variant:ident),* $(,)?) => {
        $(
            pub fn $name(&mut self, lhs: Node, rhs: Node) -> Node {
                self.push(Op::$variant { lhs, rhs })
            }
        )*
    };
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: Op) -> Node {
        self.ops.push(op);
        Node(self.ops.len() - 1)
    }

    /// Declares the next input slot; `cols` pins its column count when known.
    pub fn input(&mut self, cols: Option<usize>) -> Node {
        let slot = self.input_cols.len();
        self.input_cols.push(cols);
        self.push(Op::Input { slot })
    }

    /// Allocates a parameter block for a dense layer.
    pub fn layer(&mut self, in_dim: usize, out_dim: usize, bias: bool) -> LayerId {
        let offset = self.layout.len();
        self.layout.layers.push(LayerShape {
            in_dim,
            out_dim,
            bias,
            offset,
        });
        LayerId(self.layout.layers.len() - 1)
    }

    pub fn layer_shape(&self, layer: LayerId) -> LayerShape {
        self.layout.layers[layer.0]
    }

    pub fn affine(&mut self, src: Node, layer: LayerId) -> Node {
        self.push(Op::Affine { src, layer })
    }

    pub fn affine_tangent(&mut self, src: Node, layer: LayerId) -> Node {
        self.push(Op::AffineTangent { src, layer })
    }

    pub fn activate(&mut self, src: Node, act: Activation) -> Node {
        if act == Activation::Identity {
            return src;
        }
        self.push(Op::Activate { src, act })
    }

    pub fn activate_derivative(&mut self, src: Node, act: Activation) -> Node {
        self.push(Op::ActivateDerivative { src, act })
    }

    pub fn gaussian_kernel(&mut self, src: Node, bandwidth: Bandwidth) -> Node {
        self.push(Op::GaussianKernel { src, bandwidth })
    }

    unary! {
        log => Log,
        exp => Exp,
        square => Square,
        abs => Abs,
        sum => Sum,
        mean => Mean,
        row_sum => RowSum,
        col_mean => ColMean,
        log_det => LogDet,
        trace => Trace,
    }

    binary! {
        add => Add,
        sub => Sub,
        mul => Mul,
        div => Div,
        matmul => MatMul,
    }

    pub fn clamp_min(&mut self, src: Node, floor: f64) -> Node {
        self.push(Op::ClampMin { src, floor })
    }

    pub fn scale(&mut self, src: Node, factor: f64) -> Node {
        self.push(Op::Scale { src, factor })
    }

    pub fn offset(&mut self, src: Node, shift: f64) -> Node {
        self.push(Op::Offset { src, shift })
    }

    pub fn columns(&mut self, src: Node, start: usize, len: usize) -> Node {
        self.push(Op::Columns { src, start, len })
    }

    pub fn concat(&mut self, parts: Vec<Node>) -> Node {
        self.push(Op::Concat { parts })
    }

    pub fn unit_direction(&mut self, like: Node, col: usize) -> Node {
        self.push(Op::UnitDirection { like, col })
    }

    pub fn covariance(&mut self, src: Node, ridge: f64) -> Node {
        self.push(Op::Covariance { src, ridge })
    }

    /// Validates references and the parameter ownership rule: every layer is
    /// owned by exactly one `Affine`; `AffineTangent` only reads a layer.
    pub fn finish(self, output: Node) -> Result<Program> {
        let n = self.ops.len();
        if output.0 >= n {
            return Err(Error::InvalidProgram(format!(
                "output node {} out of range ({n} nodes)",
                output.0
            )));
        }
        let mut owners = vec![0usize; self.layout.layers.len()];
        let mut needs_grad = vec![false; n];
        for (i, op) in self.ops.iter().enumerate() {
            for src in op.sources() {
                if src.0 >= i {
                    return Err(Error::InvalidProgram(format!(
                        "node {i} ({}) references later node {}",
                        op.name(),
                        src.0
                    )));
                }
                needs_grad[i] |= needs_grad[src.0];
            }
            if let Op::UnitDirection { like, .. } = op {
                if like.0 >= i {
                    return Err(Error::InvalidProgram(format!(
                        "node {i} references later node {}",
                        like.0
                    )));
                }
            }
            if let Some(layer) = op.layer() {
                if layer.0 >= owners.len() {
                    return Err(Error::InvalidProgram(format!(
                        "node {i} uses unknown layer {}",
                        layer.0
                    )));
                }
                if matches!(op, Op::Affine { .. }) {
                    owners[layer.0] += 1;
                }
                needs_grad[i] |= self.layout.layers[layer.0].param_count() > 0;
            }
            if let Op::Input { slot } = op {
                if *slot >= self.input_cols.len() {
                    return Err(Error::InvalidProgram(format!("unknown input slot {slot}")));
                }
            }
        }
        if let Some(layer) = owners.iter().position(|&c| c != 1) {
            return Err(Error::InvalidProgram(format!(
                "layer {layer} is owned by {} affine operations, expected exactly one",
                owners[layer]
            )));
        }
        Ok(Program {
            ops: self.ops,
            output,
            layout: self.layout,
            input_cols: self.input_cols,
            needs_grad,
        })
    }
}
