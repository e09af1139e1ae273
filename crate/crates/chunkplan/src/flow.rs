//! Per-operator chunk-dimension propagation.
//!
//! Answers: if a node's output is sliced along `out_dim`, what does each
//! input have to look like for the per-segment outputs to concatenate back
//! to the original? Either the input is sliced along a mapped dimension,
//! passed whole, or no consistent slicing exists and the flow breaks.

use crate::graph::{Graph, OpKind, OpNode};

/// Requirement on one input when the output is sliced along a given dim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRequirement {
    /// Input must be sliced along this dimension.
    Sliced(usize),
    /// Input is passed whole each segment.
    Whole,
}

/// Outcome of propagating a chunk dimension backward through one node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DimPropagation {
    /// Slicing commutes; one requirement per input, in input order.
    Inputs(Vec<InputRequirement>),
    /// The operator couples this dimension; the flow breaks here.
    Break,
}

use DimPropagation::{Break, Inputs};
use InputRequirement::{Sliced, Whole};

/// Propagates `out_dim` of `node`'s output backward to its inputs.
pub fn propagate_dim(g: &Graph, node: &OpNode, out_dim: usize) -> DimPropagation {
    let out = g.tensor(node.output);
    debug_assert!(out_dim < out.rank(), "out_dim out of range");
    match node.kind {
        OpKind::Input | OpKind::Weight => Inputs(Vec::new()),
        OpKind::Matmul => {
            let a = g.tensor(node.inputs[0]);
            let b = g.tensor(node.inputs[1]);
            let rank = out.rank();
            let m_axis = rank - 2;
            let n_axis = rank - 1;
            if out_dim == m_axis {
                Inputs(vec![Sliced(m_axis), Whole])
            } else if out_dim == n_axis {
                Inputs(vec![Whole, Sliced(b.rank() - 1)])
            } else {
                // Batch dim: maps positionally to both operands (a rank-2
                // rhs has no batch dims and is passed whole).
                let rhs = if b.rank() == a.rank() { Sliced(out_dim) } else { Whole };
                Inputs(vec![Sliced(out_dim), rhs])
            }
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let reqs = node
                .inputs
                .iter()
                .map(|&input| {
                    let t = g.tensor(input);
                    let offset = out.rank() - t.rank();
                    if out_dim < offset {
                        return Whole;
                    }
                    let d = out_dim - offset;
                    if t.shape[d] == 1 && out.shape[out_dim] != 1 {
                        Whole // broadcast operand
                    } else {
                        Sliced(d)
                    }
                })
                .collect();
            Inputs(reqs)
        }
        OpKind::Relu | OpKind::Gelu | OpKind::Exp => Inputs(vec![Sliced(out_dim)]),
        OpKind::Softmax => {
            if node.attrs.dim == Some(out_dim) {
                Break
            } else {
                Inputs(vec![Sliced(out_dim)])
            }
        }
        OpKind::Layernorm => {
            let normalized = node
                .attrs
                .norm_dims
                .as_ref()
                .is_some_and(|dims| dims.contains(&out_dim));
            if normalized {
                Break
            } else {
                Inputs(vec![Sliced(out_dim)])
            }
        }
        OpKind::ReduceSum | OpKind::ReduceMean | OpKind::ReduceMax => {
            if node.attrs.dim == Some(out_dim) {
                Break
            } else {
                Inputs(vec![Sliced(out_dim)])
            }
        }
        OpKind::Transpose => {
            let perm = node.attrs.perm.as_ref().expect("validated");
            Inputs(vec![Sliced(perm[out_dim])])
        }
        OpKind::Reshape => {
            // Conservative: only dims preserved as a leading identity
            // prefix commute with slicing.
            let input = g.tensor(node.inputs[0]);
            let prefix = input
                .shape
                .iter()
                .zip(&out.shape)
                .take_while(|(a, b)| a == b)
                .count();
            if out_dim < prefix {
                Inputs(vec![Sliced(out_dim)])
            } else {
                Break
            }
        }
        OpKind::Concat => {
            if node.attrs.dim == Some(out_dim) {
                Break
            } else {
                Inputs(vec![Sliced(out_dim); node.inputs.len()])
            }
        }
        OpKind::Slice => {
            let ranges = node.attrs.ranges.as_ref().expect("validated");
            let input = g.tensor(node.inputs[0]);
            if ranges[out_dim] == (0, input.shape[out_dim]) {
                Inputs(vec![Sliced(out_dim)])
            } else {
                Break
            }
        }
    }
}
