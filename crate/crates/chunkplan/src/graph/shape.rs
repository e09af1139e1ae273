//! Shape, stride and dtype inference, plus the per-operator FLOP model.

use super::{row_major_strides, DType, Graph, GraphError, OpKind, OpNode, TensorMeta};

/// Infers shape, strides, byte size and dtype for every tensor.
///
/// Nodes are processed in dependency order (not list order), so a parsable
/// but mis-ordered node list still infers; `validate` rejects the ordering
/// separately. Declared shapes are checked against inferred ones.
pub fn infer_shapes(mut g: Graph) -> Result<Graph, GraphError> {
    for &id in g.graph_inputs.iter().chain(g.weights.iter()) {
        let t = g.tensor(id);
        if !t.has_shape() {
            return Err(GraphError::ShapeMismatch {
                node: t.name.clone(),
                message: "graph inputs and weights must declare a shape".into(),
            });
        }
        if t.shape.contains(&0) {
            return Err(GraphError::ShapeMismatch {
                node: t.name.clone(),
                message: "zero-extent dimension".into(),
            });
        }
    }

    for i in dependency_order(&g) {
        let node = g.nodes[i].clone();
        for &input in &node.inputs {
            if !g.tensor(input).has_shape() {
                return Err(GraphError::ShapeMismatch {
                    node: node.name.clone(),
                    message: format!(
                        "input `{}` has no shape (not produced before use?)",
                        g.tensor(input).name
                    ),
                });
            }
        }
        let (shape, dtype) = infer_node(&g, &node)?;
        let out = &mut g.tensors[node.output.0];
        if out.declared {
            if out.shape != shape {
                return Err(GraphError::DeclaredShapeMismatch {
                    tensor: out.name.clone(),
                    declared: out.shape.clone(),
                    inferred: shape,
                });
            }
            if out.dtype != dtype {
                return Err(GraphError::ShapeMismatch {
                    node: node.name.clone(),
                    message: format!(
                        "declared dtype {} does not match inferred {dtype}",
                        out.dtype
                    ),
                });
            }
        }
        out.strides = row_major_strides(&shape);
        out.bytes = shape.iter().product::<u64>() * dtype.element_size();
        out.shape = shape;
        out.dtype = dtype;
    }

    for t in &g.tensors {
        if !t.has_shape() {
            return Err(GraphError::ShapeMismatch {
                node: t.name.clone(),
                message: "tensor is never produced and has no declared shape".into(),
            });
        }
    }
    g.set_shapes_inferred();
    Ok(g)
}

/// Node indices in a producer-before-consumer order (graph is known acyclic).
fn dependency_order(g: &Graph) -> Vec<usize> {
    let mut in_degree = vec![0usize; g.nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for (i, node) in g.nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(p) = g.producer(*input) {
                consumers[p.0].push(i);
                in_degree[i] += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..g.nodes.len()).filter(|&i| in_degree[i] == 0).collect();
    ready.sort_unstable();
    let mut order = Vec::with_capacity(g.nodes.len());
    let mut queue = std::collections::VecDeque::from(ready);
    while let Some(i) = queue.pop_front() {
        order.push(i);
        for &c in &consumers[i] {
            in_degree[c] -= 1;
            if in_degree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    order
}

fn err(node: &OpNode, message: impl Into<String>) -> GraphError {
    GraphError::ShapeMismatch { node: node.name.clone(), message: message.into() }
}

fn arity(node: &OpNode, n: usize) -> Result<(), GraphError> {
    if node.inputs.len() == n {
        Ok(())
    } else {
        Err(err(node, format!("expects {n} inputs, got {}", node.inputs.len())))
    }
}

fn infer_node(g: &Graph, node: &OpNode) -> Result<(Vec<u64>, DType), GraphError> {
    let input = |i: usize| -> &TensorMeta { g.tensor(node.inputs[i]) };
    match node.kind {
        OpKind::Input | OpKind::Weight => {
            // Declaration-style nodes: pass the declared shape through.
            arity(node, 0)?;
            let out = g.tensor(node.output);
            if !out.declared {
                return Err(err(node, "input/weight nodes require a declared output shape"));
            }
            Ok((out.shape.clone(), out.dtype))
        }
        OpKind::Matmul => {
            arity(node, 2)?;
            let (a, b) = (input(0), input(1));
            if a.dtype != b.dtype {
                return Err(err(node, format!("dtype mismatch {} vs {}", a.dtype, b.dtype)));
            }
            if a.rank() < 2 {
                return Err(err(node, "matmul lhs must have rank >= 2"));
            }
            let (m, k) = (a.shape[a.rank() - 2], a.shape[a.rank() - 1]);
            if b.rank() == 2 {
                // Weight-style rhs applied along the last axis of lhs.
                if b.shape[0] != k {
                    return Err(err(
                        node,
                        format!("inner dimension mismatch {k}≠{}", b.shape[0]),
                    ));
                }
                let mut shape = a.shape.clone();
                *shape.last_mut().unwrap() = b.shape[1];
                Ok((shape, a.dtype))
            } else if b.rank() == a.rank() {
                let batch = &a.shape[..a.rank() - 2];
                if batch != &b.shape[..b.rank() - 2] {
                    return Err(err(node, "batch dimensions differ"));
                }
                if b.shape[b.rank() - 2] != k {
                    return Err(err(
                        node,
                        format!("inner dimension mismatch {k}≠{}", b.shape[b.rank() - 2]),
                    ));
                }
                let mut shape = batch.to_vec();
                shape.push(m);
                shape.push(b.shape[b.rank() - 1]);
                Ok((shape, a.dtype))
            } else {
                Err(err(node, "matmul ranks must match, or rhs must have rank 2"))
            }
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            arity(node, 2)?;
            let (a, b) = (input(0), input(1));
            if a.dtype != b.dtype {
                return Err(err(node, format!("dtype mismatch {} vs {}", a.dtype, b.dtype)));
            }
            let shape = broadcast_shape(&a.shape, &b.shape)
                .ok_or_else(|| err(node, format!("cannot broadcast {:?} with {:?}", a.shape, b.shape)))?;
            Ok((shape, a.dtype))
        }
        OpKind::Relu | OpKind::Gelu | OpKind::Exp => {
            arity(node, 1)?;
            Ok((input(0).shape.clone(), input(0).dtype))
        }
        OpKind::Softmax => {
            arity(node, 1)?;
            let dim = node.attrs.dim.ok_or_else(|| err(node, "softmax requires `dim`"))?;
            if dim >= input(0).rank() {
                return Err(err(node, format!("dim {dim} out of range for rank {}", input(0).rank())));
            }
            Ok((input(0).shape.clone(), input(0).dtype))
        }
        OpKind::Layernorm => {
            arity(node, 1)?;
            let dims = node
                .attrs
                .norm_dims
                .as_ref()
                .ok_or_else(|| err(node, "layernorm requires `norm_dims`"))?;
            let rank = input(0).rank();
            if dims.is_empty() || dims.iter().any(|&d| d >= rank) {
                return Err(err(node, "norm_dims out of range"));
            }
            // Must be the trailing dims, contiguous and sorted.
            let expected: Vec<usize> = (rank - dims.len()..rank).collect();
            if dims != &expected {
                return Err(err(node, format!("norm_dims must be trailing dims {expected:?}")));
            }
            Ok((input(0).shape.clone(), input(0).dtype))
        }
        OpKind::ReduceSum | OpKind::ReduceMean | OpKind::ReduceMax => {
            arity(node, 1)?;
            let dim = node.attrs.dim.ok_or_else(|| err(node, "reduce requires `dim`"))?;
            let t = input(0);
            if dim >= t.rank() {
                return Err(err(node, format!("dim {dim} out of range for rank {}", t.rank())));
            }
            // Reduced dimension is kept with extent 1.
            let mut shape = t.shape.clone();
            shape[dim] = 1;
            Ok((shape, t.dtype))
        }
        OpKind::Transpose => {
            arity(node, 1)?;
            let perm = node.attrs.perm.as_ref().ok_or_else(|| err(node, "transpose requires `perm`"))?;
            let t = input(0);
            if !is_permutation(perm, t.rank()) {
                return Err(err(node, format!("perm {perm:?} is not a bijection over rank {}", t.rank())));
            }
            Ok((perm.iter().map(|&d| t.shape[d]).collect(), t.dtype))
        }
        OpKind::Reshape => {
            arity(node, 1)?;
            let target = node
                .attrs
                .target_shape
                .as_ref()
                .ok_or_else(|| err(node, "reshape requires `shape`"))?;
            let t = input(0);
            if target.contains(&0) {
                return Err(err(node, "zero-extent target dimension"));
            }
            let (have, want) = (t.elements(), target.iter().product::<u64>());
            if have != want {
                return Err(err(node, format!("element count mismatch: {have} vs {want}")));
            }
            Ok((target.clone(), t.dtype))
        }
        OpKind::Concat => {
            if node.inputs.len() < 2 {
                return Err(err(node, "concat needs at least two inputs"));
            }
            let dim = node.attrs.dim.ok_or_else(|| err(node, "concat requires `dim`"))?;
            let first = input(0);
            if dim >= first.rank() {
                return Err(err(node, format!("dim {dim} out of range for rank {}", first.rank())));
            }
            let mut extent = 0;
            for i in 0..node.inputs.len() {
                let t = input(i);
                if t.rank() != first.rank() || t.dtype != first.dtype {
                    return Err(err(node, "concat inputs must share rank and dtype"));
                }
                for d in 0..t.rank() {
                    if d != dim && t.shape[d] != first.shape[d] {
                        return Err(err(node, format!("extent mismatch at dim {d}")));
                    }
                }
                extent += t.shape[dim];
            }
            let mut shape = first.shape.clone();
            shape[dim] = extent;
            Ok((shape, first.dtype))
        }
        OpKind::Slice => {
            arity(node, 1)?;
            let ranges = node.attrs.ranges.as_ref().ok_or_else(|| err(node, "slice requires `ranges`"))?;
            let t = input(0);
            if ranges.len() != t.rank() {
                return Err(err(node, "one range per dimension required"));
            }
            let mut shape = Vec::with_capacity(t.rank());
            for (d, &(start, end)) in ranges.iter().enumerate() {
                if start >= end || end > t.shape[d] {
                    return Err(err(node, format!("range [{start}, {end}) invalid at dim {d}")));
                }
                shape.push(end - start);
            }
            Ok((shape, t.dtype))
        }
    }
}

/// Trailing-dim (right-aligned) broadcast; `None` when incompatible.
pub(crate) fn broadcast_shape(a: &[u64], b: &[u64]) -> Option<Vec<u64>> {
    let rank = a.len().max(b.len());
    let mut shape = vec![0u64; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        shape[i] = if ea == eb || eb == 1 {
            ea
        } else if ea == 1 {
            eb
        } else {
            return None;
        };
    }
    Some(shape)
}

pub(crate) fn is_permutation(perm: &[usize], rank: usize) -> bool {
    if perm.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

/// FLOPs of one node under the fixed accounting conventions:
/// matmul `2·batch·m·k·n`, elementwise and activations one per output
/// element, softmax 5 per element, layernorm 8 per element, reductions one
/// per input element, pure data movement zero.
pub fn flop_count(node: &OpNode, g: &Graph) -> u64 {
    let out = g.tensor(node.output);
    match node.kind {
        OpKind::Input | OpKind::Weight => 0,
        OpKind::Matmul => {
            let a = g.tensor(node.inputs[0]);
            let k = a.shape[a.rank() - 1];
            2 * out.elements() * k
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => out.elements(),
        OpKind::Relu | OpKind::Gelu | OpKind::Exp => out.elements(),
        OpKind::Softmax => 5 * out.elements(),
        OpKind::Layernorm => 8 * out.elements(),
        OpKind::ReduceSum | OpKind::ReduceMean | OpKind::ReduceMax => {
            g.tensor(node.inputs[0]).elements()
        }
        OpKind::Transpose | OpKind::Reshape | OpKind::Concat | OpKind::Slice => 0,
    }
}
