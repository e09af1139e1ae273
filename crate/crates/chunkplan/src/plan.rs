//! Chunk plan data model shared by search, selection, memory estimation and
//! execution, plus its versioned JSON document form.
//!
//! A committed plan is a list of disjoint chunked regions. Each region is a
//! contiguous topological interval whose loop body is re-executed once per
//! segment; nodes hoisted out of the loop run once before it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, NodeId, TensorId};

pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// A contiguous topological interval `[start, end]` of node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChunkRegion {
    pub start: usize,
    pub end: usize,
}

impl ChunkRegion {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "region start must not exceed end");
        ChunkRegion { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, node: usize) -> bool {
        self.start <= node && node <= self.end
    }

    pub fn overlaps(&self, other: &ChunkRegion) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (self.start..=self.end).map(NodeId)
    }
}

/// One chunk flow: the backward path of (tensor, dimension) pairs along
/// which slicing commutes with every traversed operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkFlow {
    /// Region output this flow starts from.
    pub output: TensorId,
    /// Discovery order of (tensor, chunk dim) pairs, output first.
    pub entries: Vec<(TensorId, usize)>,
}

/// Chunk dimension and size committed for one node's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSetting {
    pub node: NodeId,
    pub dim: usize,
    pub chunk_size: u64,
}

/// One legal chunked region with its per-tensor dimension assignment.
///
/// `chunk_size` is the number of segments the loop executes; it is 0 until
/// selection assigns it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkCandidate {
    pub region: ChunkRegion,
    /// Nodes inside the interval moved out of the per-segment loop.
    pub hoisted: Vec<NodeId>,
    /// Chunk dimension of every tensor any flow passes (region inputs,
    /// interior tensors and region outputs alike).
    pub dims: BTreeMap<TensorId, usize>,
    /// Region inputs sliced per segment, with their chunk dims.
    pub chunkable_inputs: Vec<(TensorId, usize)>,
    /// Region inputs passed whole (weights, broadcast operands, whole uses).
    pub non_chunkable_inputs: Vec<TensorId>,
    /// Region outputs with their chunk dims; pre-allocated at full size.
    pub outputs: Vec<(TensorId, usize)>,
    /// One flow per region output.
    pub flows: Vec<ChunkFlow>,
    /// Number of segments; the loop runs this many iterations.
    pub chunk_size: u64,
    /// Largest admissible chunk size (minimum flow extent).
    pub max_chunk_size: u64,
    /// Cost breakdown, filled by selection scoring.
    pub cost: Option<CostBreakdown>,
}

impl ChunkCandidate {
    /// Loop-body nodes: interval members that were not hoisted.
    pub fn loop_nodes(&self) -> Vec<NodeId> {
        self.region
            .nodes()
            .filter(|n| !self.hoisted.contains(n))
            .collect()
    }

    pub fn with_chunk_size(&self, n: u64) -> ChunkCandidate {
        let mut c = self.clone();
        c.chunk_size = n;
        c
    }

    /// Per-node chunk settings for all loop nodes whose output is on a flow.
    pub fn settings(&self, g: &Graph) -> Vec<ChunkSetting> {
        self.loop_nodes()
            .into_iter()
            .filter_map(|id| {
                self.dims.get(&g.node(id).output).map(|&dim| ChunkSetting {
                    node: id,
                    dim,
                    chunk_size: self.chunk_size,
                })
            })
            .collect()
    }
}

/// Cost model terms for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// Loop-body node count of the region.
    pub n_node: u64,
    /// Total region FLOPs at full shapes.
    pub n_flop: u64,
    /// FLOPs per node.
    pub n_density: f64,
    /// Row-major stride of the chunk dim on the largest flow tensor.
    pub n_stride: u64,
    pub l_macro: f64,
    pub l_micro: f64,
    pub l_total: f64,
    /// FLOPs one loop iteration executes (segment shapes, plus off-flow
    /// nodes left in the loop at full shapes).
    pub per_iteration_flops: u64,
}

/// An ordered chunk strategy committed across passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkPlan {
    pub steps: Vec<ChunkCandidate>,
    pub total_cost: f64,
}

impl ChunkPlan {
    pub fn empty() -> Self {
        ChunkPlan::default()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("plan regions overlap: [{0}, {1}] and [{2}, {3}]")]
    OverlappingRegions(usize, usize, usize, usize),
    #[error("region [{start}, {end}] out of bounds for a {nodes}-node graph")]
    RegionOutOfBounds { start: usize, end: usize, nodes: usize },
    #[error("chunk size {n} exceeds chunk-dimension extent {extent} of tensor `{tensor}`")]
    ChunkSizeExceedsExtent { n: u64, extent: u64, tensor: String },
    #[error("chunk size must be at least 1")]
    ZeroChunkSize,
    #[error("chunk dim {dim} out of range for tensor `{tensor}`")]
    DimOutOfRange { dim: usize, tensor: String },
    #[error("unknown tensor `{0}` in plan document")]
    UnknownTensor(String),
    #[error("unknown node `{0}` in plan document")]
    UnknownNode(String),
    #[error("plan parse error: {0}")]
    Parse(String),
}

/// Checks a plan is structurally consistent with a graph: regions in bounds
/// and pairwise disjoint, dims within rank, chunk sizes within extents.
pub fn validate_plan(g: &Graph, plan: &ChunkPlan) -> Result<(), PlanError> {
    let mut regions: Vec<ChunkRegion> = plan.steps.iter().map(|s| s.region).collect();
    regions.sort();
    for pair in regions.windows(2) {
        if pair[0].overlaps(&pair[1]) {
            return Err(PlanError::OverlappingRegions(
                pair[0].start,
                pair[0].end,
                pair[1].start,
                pair[1].end,
            ));
        }
    }
    for step in &plan.steps {
        if step.region.end >= g.nodes.len() {
            return Err(PlanError::RegionOutOfBounds {
                start: step.region.start,
                end: step.region.end,
                nodes: g.nodes.len(),
            });
        }
        if step.chunk_size == 0 {
            return Err(PlanError::ZeroChunkSize);
        }
        for (&tensor, &dim) in &step.dims {
            let meta = g.tensor(tensor);
            if dim >= meta.rank() {
                return Err(PlanError::DimOutOfRange { dim, tensor: meta.name.clone() });
            }
            if step.chunk_size > meta.shape[dim] {
                return Err(PlanError::ChunkSizeExceedsExtent {
                    n: step.chunk_size,
                    extent: meta.shape[dim],
                    tensor: meta.name.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Splits `extent` into `n` segments: all but the last have `ceil(extent/n)`
/// elements; the last may be short. Returns `(offset, len)` per segment.
pub fn segment_bounds(extent: u64, n: u64) -> Vec<(u64, u64)> {
    assert!(n >= 1 && n <= extent, "need 1 <= n <= extent");
    let seg = extent.div_ceil(n);
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < extent {
        let len = seg.min(extent - offset);
        out.push((offset, len));
        offset += len;
    }
    out
}

/// Extent of the leading segment: `ceil(extent / n)`.
pub fn leading_segment(extent: u64, n: u64) -> u64 {
    extent.div_ceil(n)
}

// ── Document form ────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanDoc {
    pub schema_version: u32,
    pub budget_bytes: Option<u64>,
    pub baseline_peak_bytes: u64,
    pub predicted_peak_bytes: u64,
    pub feasible: bool,
    pub total_cost: f64,
    pub steps: Vec<PlanStepDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanStepDoc {
    pub start: usize,
    pub end: usize,
    pub chunk_size: u64,
    pub max_chunk_size: u64,
    pub hoisted: Vec<String>,
    pub tensor_dims: BTreeMap<String, usize>,
    pub chunkable_inputs: Vec<(String, usize)>,
    pub non_chunkable_inputs: Vec<String>,
    pub outputs: Vec<(String, usize)>,
    pub flows: Vec<FlowDoc>,
    pub cost: Option<CostBreakdown>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FlowDoc {
    pub output: String,
    pub entries: Vec<(String, usize)>,
}

/// Converts a plan to its document form, with tensor/node names resolved.
pub fn plan_to_doc(
    g: &Graph,
    plan: &ChunkPlan,
    budget_bytes: Option<u64>,
    baseline_peak_bytes: u64,
    predicted_peak_bytes: u64,
    feasible: bool,
) -> PlanDoc {
    let tname = |id: TensorId| g.tensor(id).name.clone();
    PlanDoc {
        schema_version: PLAN_SCHEMA_VERSION,
        budget_bytes,
        baseline_peak_bytes,
        predicted_peak_bytes,
        feasible,
        total_cost: plan.total_cost,
        steps: plan
            .steps
            .iter()
            .map(|s| PlanStepDoc {
                start: s.region.start,
                end: s.region.end,
                chunk_size: s.chunk_size,
                max_chunk_size: s.max_chunk_size,
                hoisted: s.hoisted.iter().map(|&n| g.node(n).name.clone()).collect(),
                tensor_dims: s.dims.iter().map(|(&t, &d)| (tname(t), d)).collect(),
                chunkable_inputs: s.chunkable_inputs.iter().map(|&(t, d)| (tname(t), d)).collect(),
                non_chunkable_inputs: s.non_chunkable_inputs.iter().map(|&t| tname(t)).collect(),
                outputs: s.outputs.iter().map(|&(t, d)| (tname(t), d)).collect(),
                flows: s
                    .flows
                    .iter()
                    .map(|f| FlowDoc {
                        output: tname(f.output),
                        entries: f.entries.iter().map(|&(t, d)| (tname(t), d)).collect(),
                    })
                    .collect(),
                cost: s.cost,
            })
            .collect(),
    }
}

/// Rebuilds a plan from its document form against a graph.
pub fn plan_from_doc(g: &Graph, doc: &PlanDoc) -> Result<ChunkPlan, PlanError> {
    if doc.schema_version != PLAN_SCHEMA_VERSION {
        return Err(PlanError::Parse(format!(
            "unsupported plan schema version {}",
            doc.schema_version
        )));
    }
    let tid = |name: &str| -> Result<TensorId, PlanError> {
        g.tensor_by_name(name).ok_or_else(|| PlanError::UnknownTensor(name.to_string()))
    };
    let nid = |name: &str| -> Result<NodeId, PlanError> {
        g.node_by_name(name).ok_or_else(|| PlanError::UnknownNode(name.to_string()))
    };
    let mut steps = Vec::with_capacity(doc.steps.len());
    for s in &doc.steps {
        steps.push(ChunkCandidate {
            region: ChunkRegion::new(s.start, s.end),
            hoisted: s.hoisted.iter().map(|n| nid(n)).collect::<Result<_, _>>()?,
            dims: s
                .tensor_dims
                .iter()
                .map(|(t, &d)| Ok((tid(t)?, d)))
                .collect::<Result<_, PlanError>>()?,
            chunkable_inputs: s
                .chunkable_inputs
                .iter()
                .map(|(t, d)| Ok((tid(t)?, *d)))
                .collect::<Result<_, PlanError>>()?,
            non_chunkable_inputs: s
                .non_chunkable_inputs
                .iter()
                .map(|t| tid(t))
                .collect::<Result<_, _>>()?,
            outputs: s
                .outputs
                .iter()
                .map(|(t, d)| Ok((tid(t)?, *d)))
                .collect::<Result<_, PlanError>>()?,
            flows: s
                .flows
                .iter()
                .map(|f| {
                    Ok(ChunkFlow {
                        output: tid(&f.output)?,
                        entries: f
                            .entries
                            .iter()
                            .map(|(t, d)| Ok((tid(t)?, *d)))
                            .collect::<Result<_, PlanError>>()?,
                    })
                })
                .collect::<Result<_, PlanError>>()?,
            chunk_size: s.chunk_size,
            max_chunk_size: s.max_chunk_size,
            cost: s.cost,
        });
    }
    let plan = ChunkPlan { steps, total_cost: doc.total_cost };
    validate_plan(g, &plan)?;
    Ok(plan)
}
