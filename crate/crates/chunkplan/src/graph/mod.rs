//! Tensor computation graph IR: typed, shaped value tensors connected by
//! operator nodes in topological order.
//!
//! Graphs are loaded from a versioned JSON document (see [`schema`]), shape-
//! and stride-inferred, validated, and then immutable: every later pass
//! (memory estimation, chunk search, execution) shares them read-only.

mod schema;
mod shape;
mod validate;

pub use schema::{load_graph, serialize_graph, SCHEMA_VERSION};
pub use shape::{flop_count, infer_shapes};
pub use validate::validate;

pub(crate) use shape::{broadcast_shape, is_permutation};

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DType {
    Float32,
    Float64,
}

impl DType {
    /// Bytes per element: 4 for `float32`, 8 for `float64`.
    pub const fn element_size(self) -> u64 {
        match self {
            DType::Float32 => 4,
            DType::Float64 => 8,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Float64 => "float64",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index of a tensor in [`Graph::tensors`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(pub usize);

/// Index of a node in [`Graph::nodes`] (also its topological position).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for TensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Metadata of one value tensor. Shapes are static, strides dense row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorMeta {
    /// Document-level name, unique in the graph.
    pub name: String,
    /// Extents per dimension; empty until shapes are inferred.
    pub shape: Vec<u64>,
    pub dtype: DType,
    /// Row-major strides in elements: `strides[d] = product(shape[d+1..])`.
    pub strides: Vec<u64>,
    /// Total bytes: `product(shape) * dtype.element_size()`.
    pub bytes: u64,
    /// Whether shape/dtype were declared in the document (vs. inferred).
    pub declared: bool,
}

impl TensorMeta {
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn elements(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn has_shape(&self) -> bool {
        !self.shape.is_empty()
    }
}

/// Row-major strides for a shape.
pub fn row_major_strides(shape: &[u64]) -> Vec<u64> {
    let mut strides = vec![1u64; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Operator kinds of the closed op set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Input,
    Weight,
    Matmul,
    Add,
    Sub,
    Mul,
    Div,
    Relu,
    Gelu,
    Exp,
    Softmax,
    Layernorm,
    ReduceSum,
    ReduceMean,
    ReduceMax,
    Transpose,
    Reshape,
    Concat,
    Slice,
}

impl OpKind {
    pub const fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Weight => "weight",
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::Exp => "exp",
            OpKind::Softmax => "softmax",
            OpKind::Layernorm => "layernorm",
            OpKind::ReduceSum => "reduce_sum",
            OpKind::ReduceMean => "reduce_mean",
            OpKind::ReduceMax => "reduce_max",
            OpKind::Transpose => "transpose",
            OpKind::Reshape => "reshape",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        Some(match s {
            "input" => OpKind::Input,
            "weight" => OpKind::Weight,
            "matmul" => OpKind::Matmul,
            "add" => OpKind::Add,
            "sub" => OpKind::Sub,
            "mul" => OpKind::Mul,
            "div" => OpKind::Div,
            "relu" => OpKind::Relu,
            "gelu" => OpKind::Gelu,
            "exp" => OpKind::Exp,
            "softmax" => OpKind::Softmax,
            "layernorm" => OpKind::Layernorm,
            "reduce_sum" => OpKind::ReduceSum,
            "reduce_mean" => OpKind::ReduceMean,
            "reduce_max" => OpKind::ReduceMax,
            "transpose" => OpKind::Transpose,
            "reshape" => OpKind::Reshape,
            "concat" => OpKind::Concat,
            "slice" => OpKind::Slice,
            _ => return None,
        })
    }

    pub fn is_reduce(self) -> bool {
        matches!(self, OpKind::ReduceSum | OpKind::ReduceMean | OpKind::ReduceMax)
    }

    pub fn is_elementwise_binary(self) -> bool {
        matches!(self, OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div)
    }

    pub fn is_elementwise_unary(self) -> bool {
        matches!(self, OpKind::Relu | OpKind::Gelu | OpKind::Exp)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kind-specific node attributes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Attrs {
    /// Operated dimension for softmax / reduce / concat.
    pub dim: Option<usize>,
    /// Permutation for transpose.
    pub perm: Option<Vec<usize>>,
    /// Normalized trailing dimensions for layernorm.
    pub norm_dims: Option<Vec<usize>>,
    /// Epsilon for layernorm (defaults to 1e-5).
    pub eps: Option<f64>,
    /// Target shape for reshape.
    pub target_shape: Option<Vec<u64>>,
    /// Per-dimension half-open `[start, end)` ranges for slice.
    pub ranges: Option<Vec<(u64, u64)>>,
}

impl Attrs {
    pub fn layernorm_eps(&self) -> f64 {
        self.eps.unwrap_or(1e-5)
    }
}

/// One operator node: consumes `inputs`, produces `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub name: String,
    pub kind: OpKind,
    pub attrs: Attrs,
    pub inputs: Vec<TensorId>,
    pub output: TensorId,
}

/// A directed acyclic tensor computation graph.
///
/// `nodes` is kept in (and validated to be) topological order; node indices
/// double as execution step positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub nodes: Vec<OpNode>,
    pub tensors: Vec<TensorMeta>,
    pub graph_inputs: Vec<TensorId>,
    pub weights: Vec<TensorId>,
    pub graph_outputs: Vec<TensorId>,
    name_to_id: BTreeMap<String, TensorId>,
    /// Producing node per tensor; `None` for graph inputs and weights.
    producer: Vec<Option<NodeId>>,
    shapes_inferred: bool,
}

impl Graph {
    pub(crate) fn new(
        nodes: Vec<OpNode>,
        tensors: Vec<TensorMeta>,
        graph_inputs: Vec<TensorId>,
        weights: Vec<TensorId>,
        graph_outputs: Vec<TensorId>,
    ) -> Self {
        let name_to_id = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), TensorId(i)))
            .collect();
        let mut producer = vec![None; tensors.len()];
        for (i, node) in nodes.iter().enumerate() {
            producer[node.output.0] = Some(NodeId(i));
        }
        Graph {
            nodes,
            tensors,
            graph_inputs,
            weights,
            graph_outputs,
            name_to_id,
            producer,
            shapes_inferred: false,
        }
    }

    pub fn tensor(&self, id: TensorId) -> &TensorMeta {
        &self.tensors[id.0]
    }

    pub fn node(&self, id: NodeId) -> &OpNode {
        &self.nodes[id.0]
    }

    pub fn tensor_by_name(&self, name: &str) -> Option<TensorId> {
        self.name_to_id.get(name).copied()
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    /// Node producing `id`, or `None` for graph inputs and weights.
    pub fn producer(&self, id: TensorId) -> Option<NodeId> {
        self.producer[id.0]
    }

    /// Nodes consuming `id`, in topological order.
    pub fn consumers(&self, id: TensorId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.contains(&id))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    pub fn is_weight(&self, id: TensorId) -> bool {
        self.weights.contains(&id)
    }

    pub fn is_graph_input(&self, id: TensorId) -> bool {
        self.graph_inputs.contains(&id)
    }

    pub fn is_graph_output(&self, id: TensorId) -> bool {
        self.graph_outputs.contains(&id)
    }

    pub fn shapes_inferred(&self) -> bool {
        self.shapes_inferred
    }

    pub(crate) fn set_shapes_inferred(&mut self) {
        self.shapes_inferred = true;
    }

    /// Ids of all tensors in declaration order.
    pub fn tensor_ids(&self) -> impl Iterator<Item = TensorId> {
        (0..self.tensors.len()).map(TensorId)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }
}

/// Errors from loading, inferring, or validating a graph.
#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown op kind `{0}`")]
    UnknownKind(String),
    #[error("unknown tensor id `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{0}` is produced by more than one node")]
    MultipleProducers(String),
    #[error("cycle detected in node dependencies")]
    CycleDetected,
    #[error("node `{node}`: {message}")]
    ShapeMismatch { node: String, message: String },
    #[error("tensor `{tensor}`: declared shape {declared:?} does not match inferred {inferred:?}")]
    DeclaredShapeMismatch { tensor: String, declared: Vec<u64>, inferred: Vec<u64> },
    #[error("node `{node}`: invalid attributes: {message}")]
    BadAttrs { node: String, message: String },
    #[error("graph is invalid:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error("shapes not inferred yet")]
    ShapesNotInferred,
}
