//! Activation-memory estimation.
//!
//! Computes the exact per-step live-byte profile of a graph under its
//! serialized topological order, locates the peak activation node, and
//! predicts the profile under a chunk plan. Weights are excluded from
//! activation accounting throughout; they are reported separately.
//!
//! The chunked prediction mirrors the executor's region protocol step for
//! step: region outputs are pre-allocated at full size before the hoisted
//! prologue, region inputs and hoisted values consumed by the loop stay live
//! to the end of the loop, interior flow tensors are charged one leading
//! segment, and non-contiguous input slices add a per-iteration copy.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{Graph, NodeId, TensorId, TensorMeta};
use crate::plan::{leading_segment, validate_plan, ChunkPlan, PlanError};

/// Lifetime of one tensor in execution steps (step 0 binds graph inputs,
/// step `i + 1` executes node `i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiveRange {
    pub tensor: TensorId,
    pub birth: usize,
    pub death: usize,
}

/// Live bytes at the peak step, split by tensor role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeakBreakdown {
    /// Bytes of live graph-input tensors.
    pub input_bytes: u64,
    /// Bytes of live graph-output tensors.
    pub output_bytes: u64,
    /// Everything else live at the peak.
    pub intermediate_bytes: u64,
}

/// Per-step live-byte trace with its peak.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryProfile {
    pub per_step_bytes: Vec<u64>,
    pub peak_bytes: u64,
    /// First step attaining the peak.
    pub peak_step: usize,
    /// Node executing at the peak step; `None` when the peak is the input
    /// binding step of a graph with no nodes contributing more.
    pub peak_node: Option<NodeId>,
    pub breakdown: PeakBreakdown,
}

/// Live ranges for the plain (unchunked) execution order.
///
/// Graph inputs and weights are born at step 0; a tensor dies at its last
/// consuming step, or at the final step if it is a graph output. Unused
/// tensors die where they are born.
pub fn liveness(g: &Graph) -> Vec<LiveRange> {
    let last_step = g.nodes.len();
    let mut births = vec![0usize; g.tensors.len()];
    let mut deaths = vec![0usize; g.tensors.len()];
    for (i, node) in g.nodes.iter().enumerate() {
        births[node.output.0] = i + 1;
        deaths[node.output.0] = i + 1;
        for input in &node.inputs {
            deaths[input.0] = deaths[input.0].max(i + 1);
        }
    }
    for &out in &g.graph_outputs {
        deaths[out.0] = last_step;
    }
    g.tensor_ids()
        .map(|t| LiveRange { tensor: t, birth: births[t.0], death: deaths[t.0].max(births[t.0]) })
        .collect()
}

/// Exact activation profile of the plain execution order.
pub fn profile(g: &Graph) -> MemoryProfile {
    estimate_with_plan(g, &ChunkPlan::empty()).expect("empty plan always validates")
}

/// Total weight (parameter) bytes, reported separately from activations.
pub fn weight_bytes(g: &Graph) -> u64 {
    g.weights.iter().map(|&w| g.tensor(w).bytes).sum()
}

/// Transient copy bytes charged per iteration when slicing `t` along
/// `chunk_dim` into `n` segments: zero when row slices are contiguous in
/// row-major layout, otherwise one leading segment's bytes.
pub fn contiguity_cost(t: &TensorMeta, chunk_dim: usize, n: u64) -> u64 {
    assert!(chunk_dim < t.rank(), "chunk_dim out of range");
    if chunk_dim == 0 || t.shape[..chunk_dim].iter().all(|&e| e == 1) {
        return 0;
    }
    sliced_bytes(t, chunk_dim, n)
}

/// Bytes of one leading segment of `t` sliced along `dim` into `n` parts.
fn sliced_bytes(t: &TensorMeta, dim: usize, n: u64) -> u64 {
    let seg = leading_segment(t.shape[dim], n);
    t.shape
        .iter()
        .enumerate()
        .map(|(d, &e)| if d == dim { seg } else { e })
        .product::<u64>()
        * t.dtype.element_size()
}

// ── schedule ─────────────────────────────────────────────────────────

/// Role of a node within the (possibly chunk-rewritten) execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRole {
    Plain,
    /// Hoisted out of plan step `step`'s loop; runs once before it.
    Hoisted { step: usize },
    /// Member of plan step `step`'s per-segment loop.
    Loop { step: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct ScheduledNode {
    pub node: NodeId,
    pub role: StepRole,
}

/// Execution order under a plan: plain nodes in topological order; each
/// chunked region contributes its hoisted nodes (ascending) followed by its
/// loop nodes (ascending). Step `p + 1` corresponds to `order[p]`.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub order: Vec<ScheduledNode>,
}

pub fn build_schedule(g: &Graph, plan: &ChunkPlan) -> Schedule {
    let mut region_at: BTreeMap<usize, usize> = BTreeMap::new();
    for (si, step) in plan.steps.iter().enumerate() {
        if step.chunk_size > 1 {
            region_at.insert(step.region.start, si);
        }
    }
    let mut order = Vec::with_capacity(g.nodes.len());
    let mut i = 0;
    while i < g.nodes.len() {
        if let Some(&si) = region_at.get(&i) {
            let cand = &plan.steps[si];
            for &h in &cand.hoisted {
                order.push(ScheduledNode { node: h, role: StepRole::Hoisted { step: si } });
            }
            for n in cand.loop_nodes() {
                order.push(ScheduledNode { node: n, role: StepRole::Loop { step: si } });
            }
            i = cand.region.end + 1;
        } else {
            order.push(ScheduledNode { node: NodeId(i), role: StepRole::Plain });
            i += 1;
        }
    }
    Schedule { order }
}

// ── estimation ───────────────────────────────────────────────────────

/// Predicts the activation profile under a chunk plan.
///
/// Inside each region, interior flow tensors are charged
/// `ceil(extent / n) / extent` of their bytes along the chunk dimension;
/// region inputs and outputs are charged at full size, as are interior
/// tensors off every flow. Steps outside regions match [`profile`].
pub fn estimate_with_plan(g: &Graph, plan: &ChunkPlan) -> Result<MemoryProfile, PlanError> {
    validate_plan(g, plan)?;
    let schedule = build_schedule(g, plan);
    let n_steps = schedule.order.len() + 1;

    let mut sched_pos = vec![0usize; g.nodes.len()];
    for (p, e) in schedule.order.iter().enumerate() {
        sched_pos[e.node.0] = p;
    }

    // Births and deaths in schedule steps.
    let mut births = vec![0usize; g.tensors.len()];
    let mut deaths = vec![0usize; g.tensors.len()];
    for (p, entry) in schedule.order.iter().enumerate() {
        let node = g.node(entry.node);
        births[node.output.0] = p + 1;
        deaths[node.output.0] = p + 1;
        for input in &node.inputs {
            deaths[input.0] = deaths[input.0].max(p + 1);
        }
    }
    for &out in &g.graph_outputs {
        deaths[out.0] = n_steps - 1;
    }
    for t in g.tensor_ids() {
        deaths[t.0] = deaths[t.0].max(births[t.0]);
    }

    // Per-tensor charge, defaulting to full bytes.
    let mut charge: Vec<u64> = g.tensors.iter().map(|t| t.bytes).collect();
    // Extra per-step bytes from non-contiguous input slices.
    let mut extra = vec![0u64; n_steps];

    for step in plan.steps.iter().filter(|s| s.chunk_size > 1) {
        let loop_nodes = step.loop_nodes();
        let loop_set: BTreeSet<NodeId> = loop_nodes.iter().copied().collect();
        let block_start = loop_nodes
            .iter()
            .chain(step.hoisted.iter())
            .map(|n| sched_pos[n.0])
            .min()
            .expect("regions are non-empty");
        let loop_end = loop_nodes.iter().map(|n| sched_pos[n.0]).max().unwrap() + 1;

        let out_set: BTreeSet<TensorId> = step.outputs.iter().map(|&(t, _)| t).collect();

        // Region outputs are pre-allocated before the hoisted prologue and
        // written until the last iteration.
        for &t in &out_set {
            births[t.0] = births[t.0].min(block_start + 1);
            deaths[t.0] = deaths[t.0].max(loop_end);
        }

        // Whole tensors read by the loop stay live until the loop ends.
        for &ln in &loop_nodes {
            for input in &g.node(ln).inputs {
                let produced_in_loop = g.producer(*input).is_some_and(|p| loop_set.contains(&p));
                if !produced_in_loop {
                    deaths[input.0] = deaths[input.0].max(loop_end);
                }
            }
        }

        // Interior flow tensors carry one leading segment.
        for (&t, &d) in &step.dims {
            let interior = g.producer(t).is_some_and(|p| loop_set.contains(&p));
            if interior && !out_set.contains(&t) {
                charge[t.0] = sliced_bytes(g.tensor(t), d, step.chunk_size);
            }
        }

        let copies: u64 = step
            .chunkable_inputs
            .iter()
            .map(|&(t, d)| contiguity_cost(g.tensor(t), d, step.chunk_size))
            .sum();
        if copies > 0 {
            for &ln in &loop_nodes {
                extra[sched_pos[ln.0] + 1] += copies;
            }
        }
    }

    // Accumulate per-step bytes.
    let mut per_step = extra;
    for t in g.tensor_ids() {
        if g.is_weight(t) {
            continue;
        }
        if births[t.0] == 0 && g.producer(t).is_none() && !g.is_graph_input(t) {
            continue; // declared but unbound tensor (not reachable here in practice)
        }
        for step in &mut per_step[births[t.0]..=deaths[t.0]] {
            *step += charge[t.0];
        }
    }

    let peak_bytes = per_step.iter().copied().max().unwrap_or(0);
    let peak_step = per_step.iter().position(|&b| b == peak_bytes).unwrap_or(0);
    let peak_node = if peak_step == 0 { None } else { Some(schedule.order[peak_step - 1].node) };

    let mut breakdown = PeakBreakdown::default();
    for t in g.tensor_ids() {
        if g.is_weight(t) || births[t.0] > peak_step || deaths[t.0] < peak_step {
            continue;
        }
        if g.is_graph_input(t) {
            breakdown.input_bytes += charge[t.0];
        } else if g.is_graph_output(t) {
            breakdown.output_bytes += charge[t.0];
        } else {
            breakdown.intermediate_bytes += charge[t.0];
        }
    }

    Ok(MemoryProfile { per_step_bytes: per_step, peak_bytes, peak_step, peak_node, breakdown })
}

/// Peak bytes over the schedule steps of plan step `step` (its hoisted
/// prologue plus its loop), under the full-plan estimate.
pub fn region_peak(g: &Graph, plan: &ChunkPlan, step: usize) -> Result<u64, PlanError> {
    let prof = estimate_with_plan(g, plan)?;
    let schedule = build_schedule(g, plan);
    Ok(schedule
        .order
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            matches!(e.role,
                StepRole::Hoisted { step: s } | StepRole::Loop { step: s } if s == step)
        })
        .map(|(p, _)| prof.per_step_bytes[p + 1])
        .max()
        .unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, load_graph, DType};

    fn simple_chain() -> Graph {
        infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [{"id": "x", "shape": [4, 4], "dtype": "float32"}, {"id": "y"}],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [{"id": "r", "kind": "relu", "inputs": ["x"], "output": "y"}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn chain_liveness() {
        let g = simple_chain();
        let ranges = liveness(&g);
        let x = g.tensor_by_name("x").unwrap();
        let y = g.tensor_by_name("y").unwrap();
        assert_eq!(ranges[x.0], LiveRange { tensor: x, birth: 0, death: 1 });
        assert_eq!(ranges[y.0], LiveRange { tensor: y, birth: 1, death: 1 });
    }

    #[test]
    fn diamond_input_dies_at_last_consumer() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [2, 2], "dtype": "float32"},
                {"id": "a"}, {"id": "b"}, {"id": "y"}
            ],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [
                {"id": "na", "kind": "relu", "inputs": ["x"], "output": "a"},
                {"id": "nb", "kind": "exp", "inputs": ["x"], "output": "b"},
                {"id": "nc", "kind": "add", "inputs": ["a", "b"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let x = g.tensor_by_name("x").unwrap();
        let ranges = liveness(&g);
        assert_eq!(ranges[x.0].death, 2); // step of `nb`, its last consumer
    }

    #[test]
    fn unused_weight_has_degenerate_range() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [2, 2], "dtype": "float32"},
                {"id": "w", "shape": [3, 3], "dtype": "float32"},
                {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w"], "outputs": ["y"],
            "nodes": [{"id": "r", "kind": "relu", "inputs": ["x"], "output": "y"}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let w = g.tensor_by_name("w").unwrap();
        assert_eq!(liveness(&g)[w.0], LiveRange { tensor: w, birth: 0, death: 0 });
    }

    #[test]
    fn chain_profile_matches_example() {
        let g = simple_chain();
        let p = profile(&g);
        assert_eq!(p.per_step_bytes, vec![64, 128]);
        assert_eq!(p.peak_bytes, 128);
        assert_eq!(p.peak_step, 1);
        assert_eq!(p.peak_node, Some(crate::graph::NodeId(0)));
        assert_eq!(p.breakdown.input_bytes, 64);
        assert_eq!(p.breakdown.output_bytes, 64);
    }

    #[test]
    fn empty_graph_peak_is_input_bytes() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [{"id": "x", "shape": [8], "dtype": "float64"}],
            "inputs": ["x"], "outputs": ["x"]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let p = profile(&g);
        assert_eq!(p.per_step_bytes, vec![64]);
        assert_eq!(p.peak_node, None);
        assert_eq!(p.breakdown.input_bytes, 64);
    }

    #[test]
    fn contiguity_examples() {
        let t = TensorMeta {
            name: "t".into(),
            shape: vec![8, 16],
            dtype: DType::Float32,
            strides: vec![16, 1],
            bytes: 8 * 16 * 4,
            declared: true,
        };
        assert_eq!(contiguity_cost(&t, 0, 4), 0);
        assert_eq!(contiguity_cost(&t, 1, 4), 8 * 4 * 4);
        let r1 = TensorMeta {
            name: "r".into(),
            shape: vec![9],
            dtype: DType::Float32,
            strides: vec![1],
            bytes: 36,
            declared: true,
        };
        assert_eq!(contiguity_cost(&r1, 0, 3), 0);
    }

    #[test]
    fn chunked_region_charge_is_x_plus_y_plus_interior_over_n() {
        // mem(X) = 200 B, mem(Y) = 200 B, interior at peak = 8000 B, n = 10:
        // region peak = 200 + 200 + 8000/10 = 1200 B.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [10, 5], "dtype": "float32"},
                {"id": "w1", "shape": [5, 100], "dtype": "float32"},
                {"id": "w2", "shape": [100, 5], "dtype": "float32"},
                {"id": "h"}, {"id": "a"}, {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w1", "w2"], "outputs": ["y"],
            "nodes": [
                {"id": "up", "kind": "matmul", "inputs": ["x", "w1"], "output": "h"},
                {"id": "act", "kind": "relu", "inputs": ["h"], "output": "a"},
                {"id": "down", "kind": "matmul", "inputs": ["a", "w2"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = g.tensor_by_name("y").unwrap();
        let cand = crate::search::legal_candidate(
            &g,
            &crate::plan::ChunkRegion::new(0, 2),
            &[(y, 0)],
        )
        .unwrap();

        let peak_at = |n: u64| {
            let mut plan = ChunkPlan::empty();
            plan.steps.push(cand.with_chunk_size(n));
            estimate_with_plan(&g, &plan).unwrap().peak_bytes
        };
        assert_eq!(peak_at(10), 200 + 200 + 8000 / 10);
        // n equals the chunk-dim extent: one slice row per interior tensor.
        assert_eq!(peak_at(10), 200 + 200 + 400 + 400);
        // Monotone in n.
        assert!(peak_at(2) >= peak_at(5) && peak_at(5) >= peak_at(10));
    }

    #[test]
    fn plan_validation_errors() {
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [8, 4], "dtype": "float64"},
                {"id": "a"}, {"id": "b"}, {"id": "y"}
            ],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [
                {"id": "n0", "kind": "relu", "inputs": ["x"], "output": "a"},
                {"id": "n1", "kind": "exp", "inputs": ["a"], "output": "b"},
                {"id": "n2", "kind": "gelu", "inputs": ["b"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = g.tensor_by_name("y").unwrap();
        let b = g.tensor_by_name("b").unwrap();
        let c1 = crate::search::legal_candidate(
            &g,
            &crate::plan::ChunkRegion::new(0, 1),
            &[(b, 0)],
        )
        .unwrap();
        let c2 = crate::search::legal_candidate(
            &g,
            &crate::plan::ChunkRegion::new(1, 2),
            &[(y, 0)],
        )
        .unwrap();

        // Overlapping regions are rejected.
        let mut plan = ChunkPlan::empty();
        plan.steps.push(c1.with_chunk_size(2));
        plan.steps.push(c2.with_chunk_size(2));
        assert!(matches!(
            estimate_with_plan(&g, &plan),
            Err(PlanError::OverlappingRegions(..))
        ));

        // Chunk size beyond the chunk-dim extent is rejected.
        let mut plan = ChunkPlan::empty();
        plan.steps.push(c1.with_chunk_size(9));
        assert!(matches!(
            estimate_with_plan(&g, &plan),
            Err(PlanError::ChunkSizeExceedsExtent { .. })
        ));
    }

    #[test]
    fn big_intermediate_peak() {
        // in 100B, intermediate 1000B, out 100B: peak 1100B.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [5, 5], "dtype": "float32"},
                {"id": "w1", "shape": [5, 50], "dtype": "float32"},
                {"id": "w2", "shape": [50, 5], "dtype": "float32"},
                {"id": "h"}, {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w1", "w2"], "outputs": ["y"],
            "nodes": [
                {"id": "up", "kind": "matmul", "inputs": ["x", "w1"], "output": "h"},
                {"id": "down", "kind": "matmul", "inputs": ["h", "w2"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let p = profile(&g);
        assert_eq!(p.per_step_bytes, vec![100, 1100, 1100]);
        assert_eq!(p.peak_bytes, 1100);
        assert_eq!(p.peak_step, 1); // first occurrence wins the tie
    }
}
