//! Whole-graph validation: topological order, attribute validity, output
//! reachability. Violations are aggregated rather than reported one by one.

use std::collections::BTreeSet;

use super::shape::is_permutation;
use super::{Graph, GraphError, OpKind};

/// Validates a shape-inferred graph. Returns all violations at once.
pub fn validate(g: &Graph) -> Result<(), GraphError> {
    if !g.shapes_inferred() {
        return Err(GraphError::ShapesNotInferred);
    }
    let mut violations = Vec::new();

    // Serialized node order must be topological: every consumed tensor is
    // produced by an earlier node, or is a graph input / weight.
    let mut available: BTreeSet<_> =
        g.graph_inputs.iter().chain(g.weights.iter()).copied().collect();
    for node in &g.nodes {
        for &input in &node.inputs {
            if !available.contains(&input) {
                violations.push(format!(
                    "node `{}`: order violation: consumes `{}` before it is produced",
                    node.name,
                    g.tensor(input).name
                ));
            }
        }
        available.insert(node.output);
    }

    for (i, id) in g.graph_inputs.iter().enumerate() {
        if g.weights.contains(id) {
            violations.push(format!(
                "tensor `{}` is both a graph input and a weight",
                g.tensor(*id).name
            ));
        }
        if g.graph_inputs[..i].contains(id) {
            violations.push(format!("duplicate graph input `{}`", g.tensor(*id).name));
        }
    }

    for &id in &g.graph_outputs {
        if g.producer(id).is_none() && !g.is_graph_input(id) {
            violations.push(format!(
                "graph output `{}` is not produced by any node and is not an input",
                g.tensor(id).name
            ));
        }
    }

    for &id in g.graph_inputs.iter().chain(g.weights.iter()) {
        if g.producer(id).is_some() {
            violations.push(format!(
                "leaf tensor `{}` must not be produced by a node",
                g.tensor(id).name
            ));
        }
    }

    for t in &g.tensors {
        if t.shape.contains(&0) {
            violations.push(format!("tensor `{}` has a zero extent", t.name));
        }
    }

    for node in &g.nodes {
        validate_attrs(g, node, &mut violations);
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(GraphError::Invalid(violations))
    }
}

fn validate_attrs(g: &Graph, node: &super::OpNode, violations: &mut Vec<String>) {
    let rank = |i: usize| g.tensor(node.inputs[i]).rank();
    match node.kind {
        OpKind::Input | OpKind::Weight => {
            // Declarative kinds: leaves belong in the inputs/weights lists.
            violations.push(format!(
                "node `{}`: kind `{}` is declarative and not executable",
                node.name, node.kind
            ));
        }
        OpKind::Transpose => {
            if let Some(perm) = &node.attrs.perm {
                if !node.inputs.is_empty() && !is_permutation(perm, rank(0)) {
                    violations.push(format!(
                        "node `{}`: perm {perm:?} is not a bijection over rank {}",
                        node.name,
                        rank(0)
                    ));
                }
            } else {
                violations.push(format!("node `{}`: transpose missing perm", node.name));
            }
        }
        OpKind::Softmax | OpKind::Concat | OpKind::ReduceSum | OpKind::ReduceMean
        | OpKind::ReduceMax => {
            match node.attrs.dim {
                Some(d) if !node.inputs.is_empty() && d >= rank(0) => {
                    violations.push(format!("node `{}`: dim {d} out of range", node.name));
                }
                None => violations.push(format!("node `{}`: missing dim", node.name)),
                _ => {}
            }
        }
        OpKind::Slice => {
            if let (Some(ranges), false) = (&node.attrs.ranges, node.inputs.is_empty()) {
                let t = g.tensor(node.inputs[0]);
                if ranges.len() != t.rank() {
                    violations.push(format!("node `{}`: wrong range count", node.name));
                } else {
                    for (d, &(s, e)) in ranges.iter().enumerate() {
                        if s >= e || e > t.shape[d] {
                            violations.push(format!(
                                "node `{}`: range [{s}, {e}) invalid at dim {d}",
                                node.name
                            ));
                        }
                    }
                }
            }
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, load_graph};

    #[test]
    fn valid_mlp_passes() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [4, 8], "dtype": "float32"},
                {"id": "w1", "shape": [8, 16], "dtype": "float32"},
                {"id": "w2", "shape": [16, 2], "dtype": "float32"},
                {"id": "h"}, {"id": "a"}, {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w1", "w2"], "outputs": ["y"],
            "nodes": [
                {"id": "mm1", "kind": "matmul", "inputs": ["x", "w1"], "output": "h"},
                {"id": "act", "kind": "relu", "inputs": ["h"], "output": "a"},
                {"id": "mm2", "kind": "matmul", "inputs": ["a", "w2"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        validate(&g).unwrap();
    }

    #[test]
    fn bad_permutation_is_reported() {
        // Built programmatically: load/infer would reject it earlier.
        let mut g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [{"id": "x", "shape": [2, 3, 4], "dtype": "float32"}, {"id": "y"}],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [{"id": "t", "kind": "transpose", "attrs": {"perm": [2, 1, 0]}, "inputs": ["x"], "output": "y"}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        g.nodes[0].attrs.perm = Some(vec![0, 0, 1]);
        match validate(&g) {
            Err(GraphError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("not a bijection")), "{v:?}");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn declarative_node_kinds_are_rejected() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [{"id": "x", "shape": [2, 2], "dtype": "float32"}],
            "outputs": ["x"],
            "nodes": [{"id": "decl", "kind": "input", "inputs": [], "output": "x"}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        match validate(&g) {
            Err(GraphError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("declarative")), "{v:?}");
            }
            other => panic!("expected invalid, got {other:?}"),
        }
    }

    #[test]
    fn order_violation_is_reported() {
        // Node list parses and infers (dependency order), but is mis-ordered.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [2, 2], "dtype": "float32"},
                {"id": "a"}, {"id": "b"}
            ],
            "inputs": ["x"], "outputs": ["b"],
            "nodes": [
                {"id": "n1", "kind": "relu", "inputs": ["a"], "output": "b"},
                {"id": "n0", "kind": "relu", "inputs": ["x"], "output": "a"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        match validate(&g) {
            Err(GraphError::Invalid(v)) => {
                assert!(v.iter().any(|m| m.contains("order violation")), "{v:?}");
            }
            other => panic!("expected order violation, got {other:?}"),
        }
    }
}
