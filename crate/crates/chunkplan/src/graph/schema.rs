//! The on-disk graph document: versioned JSON with `tensors`, `inputs`,
//! `weights`, `outputs` and `nodes` sections.
//!
//! Intermediate tensors may omit `shape`/`dtype`; those are filled in by
//! shape inference. Graph inputs and weights must declare both.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Attrs, DType, Graph, GraphError, OpKind, OpNode, TensorId, TensorMeta};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct GraphDoc {
    schema_version: u32,
    tensors: Vec<TensorDecl>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    weights: Vec<String>,
    #[serde(default)]
    outputs: Vec<String>,
    #[serde(default)]
    nodes: Vec<NodeDecl>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorDecl {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dtype: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeDecl {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "AttrsDecl::is_empty")]
    attrs: AttrsDecl,
    #[serde(default)]
    inputs: Vec<String>,
    output: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AttrsDecl {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perm: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    norm_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranges: Option<Vec<(u64, u64)>>,
}

impl AttrsDecl {
    fn is_empty(&self) -> bool {
        self.dim.is_none()
            && self.perm.is_none()
            && self.norm_dims.is_none()
            && self.eps.is_none()
            && self.shape.is_none()
            && self.ranges.is_none()
    }
}

fn parse_dtype(s: &str) -> Result<DType, GraphError> {
    match s {
        "float32" => Ok(DType::Float32),
        "float64" => Ok(DType::Float64),
        other => Err(GraphError::Parse(format!("unknown dtype `{other}`"))),
    }
}

/// Parses a graph document. Checks structure (ids resolve, producers are
/// unique, the dependency relation is acyclic) but not shapes or topological
/// list order; those belong to [`super::infer_shapes`] and [`super::validate`].
pub fn load_graph(text: &str) -> Result<Graph, GraphError> {
    let doc: GraphDoc =
        serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(GraphError::SchemaVersion(doc.schema_version));
    }

    let mut seen = BTreeSet::new();
    let mut tensors = Vec::with_capacity(doc.tensors.len());
    let mut by_name = BTreeMap::new();
    for decl in &doc.tensors {
        if !seen.insert(decl.id.clone()) {
            return Err(GraphError::DuplicateId(decl.id.clone()));
        }
        let dtype = match &decl.dtype {
            Some(s) => parse_dtype(s)?,
            None => DType::Float32, // provisional; overwritten by inference
        };
        let shape = decl.shape.clone().unwrap_or_default();
        let meta = TensorMeta {
            name: decl.id.clone(),
            strides: super::row_major_strides(&shape),
            bytes: shape.iter().product::<u64>() * dtype.element_size(),
            shape,
            dtype,
            declared: decl.shape.is_some(),
        };
        by_name.insert(decl.id.clone(), TensorId(tensors.len()));
        tensors.push(meta);
    }

    let resolve = |name: &str| -> Result<TensorId, GraphError> {
        by_name.get(name).copied().ok_or_else(|| GraphError::UnknownTensor(name.to_string()))
    };

    let inputs = doc.inputs.iter().map(|n| resolve(n)).collect::<Result<Vec<_>, _>>()?;
    let weights = doc.weights.iter().map(|n| resolve(n)).collect::<Result<Vec<_>, _>>()?;
    let outputs = doc.outputs.iter().map(|n| resolve(n)).collect::<Result<Vec<_>, _>>()?;

    let mut node_names = BTreeSet::new();
    let mut produced = BTreeSet::new();
    let mut nodes = Vec::with_capacity(doc.nodes.len());
    for decl in &doc.nodes {
        if !node_names.insert(decl.id.clone()) {
            return Err(GraphError::DuplicateId(decl.id.clone()));
        }
        let kind = OpKind::parse(&decl.kind)
            .ok_or_else(|| GraphError::UnknownKind(decl.kind.clone()))?;
        let output = resolve(&decl.output)?;
        if !produced.insert(output) {
            return Err(GraphError::MultipleProducers(decl.output.clone()));
        }
        let node_inputs = decl.inputs.iter().map(|n| resolve(n)).collect::<Result<Vec<_>, _>>()?;
        nodes.push(OpNode {
            name: decl.id.clone(),
            kind,
            attrs: Attrs {
                dim: decl.attrs.dim,
                perm: decl.attrs.perm.clone(),
                norm_dims: decl.attrs.norm_dims.clone(),
                eps: decl.attrs.eps,
                target_shape: decl.attrs.shape.clone(),
                ranges: decl.attrs.ranges.clone(),
            },
            inputs: node_inputs,
            output,
        });
    }

    check_acyclic(&nodes, tensors.len())?;
    Ok(Graph::new(nodes, tensors, inputs, weights, outputs))
}

/// Kahn's algorithm over node dependencies (edge: producer -> consumer).
fn check_acyclic(nodes: &[OpNode], n_tensors: usize) -> Result<(), GraphError> {
    let mut producer = vec![None; n_tensors];
    for (i, node) in nodes.iter().enumerate() {
        producer[node.output.0] = Some(i);
    }
    let mut in_degree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, node) in nodes.iter().enumerate() {
        for input in &node.inputs {
            if let Some(p) = producer[input.0] {
                consumers[p].push(i);
                in_degree[i] += 1;
            }
        }
    }
    let mut queue: VecDeque<usize> =
        (0..nodes.len()).filter(|&i| in_degree[i] == 0).collect();
    let mut visited = 0;
    while let Some(i) = queue.pop_front() {
        visited += 1;
        for &c in &consumers[i] {
            in_degree[c] -= 1;
            if in_degree[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    if visited == nodes.len() {
        Ok(())
    } else {
        Err(GraphError::CycleDetected)
    }
}

/// Serializes a graph back to the document format. Inferred shapes and
/// dtypes are written out, so the result always parses shape-complete.
pub fn serialize_graph(g: &Graph) -> String {
    let doc = GraphDoc {
        schema_version: SCHEMA_VERSION,
        tensors: g
            .tensors
            .iter()
            .map(|t| TensorDecl {
                id: t.name.clone(),
                shape: if t.has_shape() { Some(t.shape.clone()) } else { None },
                dtype: Some(t.dtype.name().to_string()),
            })
            .collect(),
        inputs: g.graph_inputs.iter().map(|&id| g.tensor(id).name.clone()).collect(),
        weights: g.weights.iter().map(|&id| g.tensor(id).name.clone()).collect(),
        outputs: g.graph_outputs.iter().map(|&id| g.tensor(id).name.clone()).collect(),
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeDecl {
                id: n.name.clone(),
                kind: n.kind.name().to_string(),
                attrs: AttrsDecl {
                    dim: n.attrs.dim,
                    perm: n.attrs.perm.clone(),
                    norm_dims: n.attrs.norm_dims.clone(),
                    eps: n.attrs.eps,
                    shape: n.attrs.target_shape.clone(),
                    ranges: n.attrs.ranges.clone(),
                },
                inputs: n.inputs.iter().map(|&id| g.tensor(id).name.clone()).collect(),
                output: g.tensor(n.output).name.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("graph document serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "tensors": [
            {"id": "x", "shape": [2, 3], "dtype": "float32"},
            {"id": "y"}
        ],
        "inputs": ["x"],
        "outputs": ["y"],
        "nodes": [
            {"id": "r", "kind": "relu", "inputs": ["x"], "output": "y"}
        ]
    }"#;

    #[test]
    fn minimal_document_loads() {
        let g = load_graph(MINIMAL).unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert_eq!(g.tensors.len(), 2);
        assert_eq!(g.graph_inputs.len(), 1);
        assert_eq!(g.tensor(g.graph_inputs[0]).shape, vec![2, 3]);
    }

    #[test]
    fn unknown_tensor_reference_errors() {
        let text = MINIMAL.replace("\"inputs\": [\"x\"]", "\"inputs\": [\"t9\"]");
        match load_graph(&text) {
            Err(GraphError::UnknownTensor(name)) => assert_eq!(name, "t9"),
            other => panic!("expected unknown tensor error, got {other:?}"),
        }
    }

    #[test]
    fn cyclic_node_list_errors() {
        let text = r#"{
            "schema_version": 1,
            "tensors": [{"id": "a"}, {"id": "b"}],
            "nodes": [
                {"id": "n0", "kind": "relu", "inputs": ["b"], "output": "a"},
                {"id": "n1", "kind": "relu", "inputs": ["a"], "output": "b"}
            ]
        }"#;
        assert!(matches!(load_graph(text), Err(GraphError::CycleDetected)));
    }

    #[test]
    fn duplicate_tensor_id_errors() {
        let text = r#"{
            "schema_version": 1,
            "tensors": [{"id": "a"}, {"id": "a"}]
        }"#;
        assert!(matches!(load_graph(text), Err(GraphError::DuplicateId(_))));
    }

    #[test]
    fn unknown_op_kind_errors() {
        let text = MINIMAL.replace("\"kind\": \"relu\"", "\"kind\": \"conv2d\"");
        assert!(matches!(load_graph(&text), Err(GraphError::UnknownKind(_))));
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(load_graph("{not json"), Err(GraphError::Parse(_))));
    }

    #[test]
    fn wrong_schema_version_errors() {
        let text = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(matches!(load_graph(&text), Err(GraphError::SchemaVersion(2))));
    }
}
