//! Deterministic sample-graph generators: a two-matmul MLP, scaled
//! dot-product attention, a two-block transformer, and a pairwise 2-D
//! (axial-attention style) family, plus seeded random input generation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::exec::TensorValue;
use crate::graph::{
    infer_shapes, row_major_strides, validate, Attrs, DType, Graph, GraphError, OpKind, OpNode,
    TensorId, TensorMeta,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFamily {
    Mlp,
    Attention,
    Transformer2,
    AlphafoldLike2d,
}

impl CorpusFamily {
    pub fn parse(name: &str) -> Option<CorpusFamily> {
        Some(match name {
            "mlp" => CorpusFamily::Mlp,
            "attention" => CorpusFamily::Attention,
            "transformer2" => CorpusFamily::Transformer2,
            "alphafold_like_2d" => CorpusFamily::AlphafoldLike2d,
            _ => return None,
        })
    }

    pub const fn name(self) -> &'static str {
        match self {
            CorpusFamily::Mlp => "mlp",
            CorpusFamily::Attention => "attention",
            CorpusFamily::Transformer2 => "transformer2",
            CorpusFamily::AlphafoldLike2d => "alphafold_like_2d",
        }
    }

    pub const ALL: [CorpusFamily; 4] = [
        CorpusFamily::Mlp,
        CorpusFamily::Attention,
        CorpusFamily::Transformer2,
        CorpusFamily::AlphafoldLike2d,
    ];
}

/// Size parameters; families read the fields they need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusParams {
    /// Sequence length (1-D families) or pairwise edge length (2-D).
    pub seq: u64,
    /// Model width.
    pub dim: u64,
    pub heads: u64,
    /// Feed-forward width (MLP hidden, transformer FFN).
    pub hidden: u64,
    /// Channels of the pairwise representation (2-D family).
    pub channels: u64,
    pub dtype: DType,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            seq: 256,
            dim: 64,
            heads: 4,
            hidden: 256,
            channels: 8,
            dtype: DType::Float64,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown corpus family `{0}`")]
    UnknownFamily(String),
    #[error("invalid size parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Builds a validated corpus graph.
pub fn build_corpus(family: CorpusFamily, p: &CorpusParams) -> Result<Graph, CorpusError> {
    if p.seq < 2 || p.dim < 1 || p.heads < 1 || p.hidden < 1 || p.channels < 1 {
        return Err(CorpusError::BadParams("all size parameters must be positive".into()));
    }
    let mut b = Builder::default();
    match family {
        CorpusFamily::Mlp => {
            let x = b.input("x", &[p.seq, p.dim], p.dtype);
            let w1 = b.weight("w1", &[p.dim, p.hidden], p.dtype);
            let w2 = b.weight("w2", &[p.hidden, p.dim], p.dtype);
            let h = b.op("mm1", OpKind::Matmul, Attrs::default(), &[x, w1], "h");
            let a = b.op("act", OpKind::Relu, Attrs::default(), &[h], "a");
            let y = b.op("mm2", OpKind::Matmul, Attrs::default(), &[a, w2], "y");
            b.finish(&[y])
        }
        CorpusFamily::Attention => {
            if !p.dim.is_multiple_of(p.heads) {
                return Err(CorpusError::BadParams(format!(
                    "heads {} must divide dim {}",
                    p.heads, p.dim
                )));
            }
            let x = b.input("x", &[p.seq, p.dim], p.dtype);
            let y = attention_block(&mut b, x, "", p);
            b.finish(&[y])
        }
        CorpusFamily::Transformer2 => {
            if !p.dim.is_multiple_of(p.heads) {
                return Err(CorpusError::BadParams(format!(
                    "heads {} must divide dim {}",
                    p.heads, p.dim
                )));
            }
            let x = b.input("x", &[p.seq, p.dim], p.dtype);
            let b1 = transformer_block(&mut b, x, "b1_", p);
            let b2 = transformer_block(&mut b, b1, "b2_", p);
            b.finish(&[b2])
        }
        CorpusFamily::AlphafoldLike2d => {
            let l = p.seq;
            let c = p.channels;
            let pair = b.input("pair", &[l, l, c], p.dtype);
            let row = axial_block(&mut b, pair, "row_", p);
            let flip = b.op(
                "flip",
                OpKind::Transpose,
                Attrs { perm: Some(vec![1, 0, 2]), ..Default::default() },
                &[row],
                "row_t",
            );
            let col = axial_block(&mut b, flip, "col_", p);
            let unflip = b.op(
                "unflip",
                OpKind::Transpose,
                Attrs { perm: Some(vec![1, 0, 2]), ..Default::default() },
                &[col],
                "col_t",
            );
            let y = b.op(
                "norm",
                OpKind::Layernorm,
                Attrs { norm_dims: Some(vec![2]), ..Default::default() },
                &[unflip],
                "y",
            );
            b.finish(&[y])
        }
    }
}

/// Multi-head scaled dot-product attention over `[seq, dim]`.
fn attention_block(b: &mut Builder, x: TensorId, prefix: &str, p: &CorpusParams) -> TensorId {
    let (s, d, h) = (p.seq, p.dim, p.heads);
    let dh = d / h;
    let n = |name: &str| format!("{prefix}{name}");
    let wq = b.weight(&n("wq"), &[d, d], p.dtype);
    let wk = b.weight(&n("wk"), &[d, d], p.dtype);
    let wv = b.weight(&n("wv"), &[d, d], p.dtype);
    let wo = b.weight(&n("wo"), &[d, d], p.dtype);
    let scale = b.weight(&n("scale"), &[1], p.dtype);

    let q = b.op(&n("q_proj"), OpKind::Matmul, Attrs::default(), &[x, wq], &n("q"));
    let k = b.op(&n("k_proj"), OpKind::Matmul, Attrs::default(), &[x, wk], &n("k"));
    let split = |bu: &mut Builder, t: TensorId, tag: &str| {
        let heads = bu.op(
            &n(&format!("{tag}_split")),
            OpKind::Reshape,
            Attrs { target_shape: Some(vec![s, h, dh]), ..Default::default() },
            &[t],
            &n(&format!("{tag}h")),
        );
        heads
    };
    let qh = split(b, q, "q");
    let qt = b.op(
        &n("q_swap"),
        OpKind::Transpose,
        Attrs { perm: Some(vec![1, 0, 2]), ..Default::default() },
        &[qh],
        &n("qt"),
    );
    let kh = split(b, k, "k");
    let kt = b.op(
        &n("k_swap"),
        OpKind::Transpose,
        Attrs { perm: Some(vec![1, 2, 0]), ..Default::default() },
        &[kh],
        &n("kt"),
    );
    let scores = b.op(&n("scores"), OpKind::Matmul, Attrs::default(), &[qt, kt], &n("logits"));
    let scaled = b.op(&n("scale_mul"), OpKind::Mul, Attrs::default(), &[scores, scale], &n("scaled"));
    let probs = b.op(
        &n("softmax"),
        OpKind::Softmax,
        Attrs { dim: Some(2), ..Default::default() },
        &[scaled],
        &n("probs"),
    );
    // The value path is not needed until the mix; projecting it here keeps
    // it out of the attention-score flow.
    let v = b.op(&n("v_proj"), OpKind::Matmul, Attrs::default(), &[x, wv], &n("v"));
    let vh = split(b, v, "v");
    let vt = b.op(
        &n("v_swap"),
        OpKind::Transpose,
        Attrs { perm: Some(vec![1, 0, 2]), ..Default::default() },
        &[vh],
        &n("vt"),
    );
    let ctx = b.op(&n("mix"), OpKind::Matmul, Attrs::default(), &[probs, vt], &n("ctx"));
    let ct = b.op(
        &n("ctx_swap"),
        OpKind::Transpose,
        Attrs { perm: Some(vec![1, 0, 2]), ..Default::default() },
        &[ctx],
        &n("ctxt"),
    );
    let cm = b.op(
        &n("merge"),
        OpKind::Reshape,
        Attrs { target_shape: Some(vec![s, d]), ..Default::default() },
        &[ct],
        &n("ctxm"),
    );
    b.op(&n("out_proj"), OpKind::Matmul, Attrs::default(), &[cm, wo], &n("attn"))
}

/// Pre-norm transformer block: attention plus a gelu FFN, both residual.
fn transformer_block(b: &mut Builder, x: TensorId, prefix: &str, p: &CorpusParams) -> TensorId {
    let n = |name: &str| format!("{prefix}{name}");
    let ln1 = b.op(
        &n("ln1"),
        OpKind::Layernorm,
        Attrs { norm_dims: Some(vec![1]), ..Default::default() },
        &[x],
        &n("norm1"),
    );
    let attn = attention_block(b, ln1, &n(""), p);
    let r1 = b.op(&n("res1"), OpKind::Add, Attrs::default(), &[x, attn], &n("mid"));
    let ln2 = b.op(
        &n("ln2"),
        OpKind::Layernorm,
        Attrs { norm_dims: Some(vec![1]), ..Default::default() },
        &[r1],
        &n("norm2"),
    );
    let w_up = b.weight(&n("w_up"), &[p.dim, p.hidden], p.dtype);
    let w_down = b.weight(&n("w_down"), &[p.hidden, p.dim], p.dtype);
    let f1 = b.op(&n("ffn_up"), OpKind::Matmul, Attrs::default(), &[ln2, w_up], &n("ffn_h"));
    let f2 = b.op(&n("ffn_act"), OpKind::Gelu, Attrs::default(), &[f1], &n("ffn_a"));
    let f3 = b.op(&n("ffn_down"), OpKind::Matmul, Attrs::default(), &[f2, w_down], &n("ffn_o"));
    b.op(&n("res2"), OpKind::Add, Attrs::default(), &[r1, f3], &n("out"))
}

/// One axis of pairwise attention over `[L, L, c]` with its residual.
fn axial_block(b: &mut Builder, t: TensorId, prefix: &str, p: &CorpusParams) -> TensorId {
    let c = p.channels;
    let n = |name: &str| format!("{prefix}{name}");
    let wq = b.weight(&n("wq"), &[c, c], p.dtype);
    let wk = b.weight(&n("wk"), &[c, c], p.dtype);
    let wv = b.weight(&n("wv"), &[c, c], p.dtype);
    let scale = b.weight(&n("scale"), &[1], p.dtype);
    let q = b.op(&n("q_proj"), OpKind::Matmul, Attrs::default(), &[t, wq], &n("q"));
    let k = b.op(&n("k_proj"), OpKind::Matmul, Attrs::default(), &[t, wk], &n("k"));
    let ktr = b.op(
        &n("k_swap"),
        OpKind::Transpose,
        Attrs { perm: Some(vec![0, 2, 1]), ..Default::default() },
        &[k],
        &n("kt"),
    );
    let scores = b.op(&n("scores"), OpKind::Matmul, Attrs::default(), &[q, ktr], &n("logits"));
    let scaled = b.op(&n("scale_mul"), OpKind::Mul, Attrs::default(), &[scores, scale], &n("scaled"));
    let probs = b.op(
        &n("softmax"),
        OpKind::Softmax,
        Attrs { dim: Some(2), ..Default::default() },
        &[scaled],
        &n("probs"),
    );
    // Values join the computation only here; see attention_block.
    let v = b.op(&n("v_proj"), OpKind::Matmul, Attrs::default(), &[t, wv], &n("v"));
    let ctx = b.op(&n("mix"), OpKind::Matmul, Attrs::default(), &[probs, v], &n("ctx"));
    b.op(&n("res"), OpKind::Add, Attrs::default(), &[t, ctx], &n("mixed"))
}

/// Serialized document for a corpus graph (byte-stable for fixed params).
pub fn corpus_document(family: CorpusFamily, p: &CorpusParams) -> Result<String, CorpusError> {
    Ok(crate::graph::serialize_graph(&build_corpus(family, p)?))
}

/// Seeded uniform(-1, 1) values for every graph input and weight.
pub fn random_bindings(
    g: &Graph,
    seed: u64,
) -> (BTreeMap<TensorId, TensorValue>, BTreeMap<TensorId, TensorValue>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fill = |ids: &[TensorId]| -> BTreeMap<TensorId, TensorValue> {
        ids.iter()
            .map(|&id| {
                let meta = g.tensor(id);
                let n = meta.elements() as usize;
                let v = match meta.dtype {
                    DType::Float32 => TensorValue::from_f32(
                        &meta.shape,
                        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    ),
                    DType::Float64 => TensorValue::from_f64(
                        &meta.shape,
                        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    ),
                };
                (id, v)
            })
            .collect()
    };
    let inputs = fill(&g.graph_inputs);
    let weights = fill(&g.weights);
    (inputs, weights)
}

// ── programmatic graph assembly ──────────────────────────────────────

#[derive(Default)]
struct Builder {
    tensors: Vec<TensorMeta>,
    nodes: Vec<OpNode>,
    inputs: Vec<TensorId>,
    weights: Vec<TensorId>,
}

impl Builder {
    fn declare(&mut self, name: &str, shape: &[u64], dtype: DType) -> TensorId {
        let id = TensorId(self.tensors.len());
        self.tensors.push(TensorMeta {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype,
            strides: row_major_strides(shape),
            bytes: shape.iter().product::<u64>() * dtype.element_size(),
            declared: true,
        });
        id
    }

    fn auto(&mut self, name: &str) -> TensorId {
        let id = TensorId(self.tensors.len());
        self.tensors.push(TensorMeta {
            name: name.to_string(),
            shape: Vec::new(),
            dtype: DType::Float32,
            strides: Vec::new(),
            bytes: 0,
            declared: false,
        });
        id
    }

    fn input(&mut self, name: &str, shape: &[u64], dtype: DType) -> TensorId {
        let id = self.declare(name, shape, dtype);
        self.inputs.push(id);
        id
    }

    fn weight(&mut self, name: &str, shape: &[u64], dtype: DType) -> TensorId {
        let id = self.declare(name, shape, dtype);
        self.weights.push(id);
        id
    }

    fn op(
        &mut self,
        name: &str,
        kind: OpKind,
        attrs: Attrs,
        inputs: &[TensorId],
        output: &str,
    ) -> TensorId {
        let out = self.auto(output);
        self.nodes.push(OpNode {
            name: name.to_string(),
            kind,
            attrs,
            inputs: inputs.to_vec(),
            output: out,
        });
        out
    }

    fn finish(self, outputs: &[TensorId]) -> Result<Graph, CorpusError> {
        let g = Graph::new(
            self.nodes,
            self.tensors,
            self.inputs,
            self.weights,
            outputs.to_vec(),
        );
        let g = infer_shapes(g)?;
        validate(&g)?;
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::run;
    use crate::memory::profile;

    fn small(seq: u64) -> CorpusParams {
        CorpusParams { seq, dim: 16, heads: 2, hidden: 32, channels: 4, ..Default::default() }
    }

    #[test]
    fn all_families_build_and_run() {
        for family in CorpusFamily::ALL {
            let g = build_corpus(family, &small(16)).unwrap();
            let (inputs, weights) = random_bindings(&g, 7);
            let trace = run(&g, &inputs, &weights).unwrap();
            assert!(!trace.outputs.is_empty(), "{family:?} produced no outputs");
        }
    }

    #[test]
    fn documents_are_deterministic() {
        let a = corpus_document(CorpusFamily::Attention, &small(32)).unwrap();
        let b = corpus_document(CorpusFamily::Attention, &small(32)).unwrap();
        assert_eq!(a, b);
        let g = crate::graph::load_graph(&a).unwrap();
        assert_eq!(g.nodes.len(), 16);
    }

    #[test]
    fn attention_logits_grow_quadratically() {
        let peak = |s| {
            let g = build_corpus(CorpusFamily::Transformer2, &small(s)).unwrap();
            profile(&g).peak_bytes
        };
        let (p64, p128, p256) = (peak(64), peak(128), peak(256));
        // Doubling the sequence should much more than double the peak.
        assert!(p128 as f64 >= 3.0 * p64 as f64, "{p64} -> {p128}");
        assert!(p256 as f64 >= 3.0 * p128 as f64, "{p128} -> {p256}");
    }

    #[test]
    fn degenerate_mlp_is_valid() {
        let p = CorpusParams { hidden: 1, ..small(4) };
        let g = build_corpus(CorpusFamily::Mlp, &p).unwrap();
        assert_eq!(g.nodes.len(), 3);
    }

    #[test]
    fn random_bindings_are_seed_deterministic() {
        let g = build_corpus(CorpusFamily::Mlp, &small(8)).unwrap();
        let (a, _) = random_bindings(&g, 42);
        let (b, _) = random_bindings(&g, 42);
        let (c, _) = random_bindings(&g, 43);
        let x = g.tensor_by_name("x").unwrap();
        assert!(a[&x].bits_equal(&b[&x]));
        assert!(!a[&x].bits_equal(&c[&x]));
    }
}
