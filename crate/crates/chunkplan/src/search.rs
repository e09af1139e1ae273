//! Chunk search: enumerates candidate regions around the peak activation
//! node and finds every legal chunk-dimension assignment for them.
//!
//! Legality is decided by a bottom-up (descending topological index) sweep
//! that propagates each region output's chunk dimension backward through
//! [`propagate_dim`]. An assignment survives when no traversed operator
//! breaks the flow, no tensor is demanded at two different dimensions, no
//! off-flow interior node reads a sliced tensor, weights are never sliced,
//! and every output traces back to at least one sliceable region input.
//!
//! A cheap per-output reachability pre-check (the two-stage filter) prunes
//! hopeless assignments before the full sweep; it can only over-approximate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::flow::{propagate_dim, DimPropagation, InputRequirement};
use crate::graph::{Graph, NodeId, TensorId};
use crate::memory::region_peak;
use crate::plan::{ChunkCandidate, ChunkFlow, ChunkPlan, ChunkRegion};

/// Tuning knobs for one search invocation.
#[derive(Debug, Clone)]
pub struct SearchOptions {
    /// Local window: maximum region length.
    pub window: usize,
    /// Drop candidates whose best-case (max chunk size) peak does not fall
    /// below this value. `None` keeps every legal candidate.
    pub peak_to_beat: Option<u64>,
    /// Hoist irrelevant (off-flow) nodes out of the per-segment loop and
    /// shrink regions to their flow nodes.
    pub enable_hoisting: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { window: 32, peak_to_beat: None, enable_hoisting: true }
    }
}

/// Counters for the two-stage filter diagnostic.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchStats {
    /// (region, output-dim assignment) pairs examined.
    pub assignments_total: usize,
    /// Pairs that passed the cheap input/output flow pre-check.
    pub assignments_passed_filter: usize,
    /// Legal candidates emitted (before best-case memory pruning).
    pub legal_candidates: usize,
}

impl SearchStats {
    /// Filter passing rate over all examined assignments.
    pub fn passing_rate(&self) -> f64 {
        if self.assignments_total == 0 {
            0.0
        } else {
            self.assignments_passed_filter as f64 / self.assignments_total as f64
        }
    }

    pub fn merge(&mut self, other: &SearchStats) {
        self.assignments_total += other.assignments_total;
        self.assignments_passed_filter += other.assignments_passed_filter;
        self.legal_candidates += other.legal_candidates;
    }
}

/// All `[start, end]` intervals containing `peak` with length at most
/// `window`, ordered by increasing length then increasing start.
pub fn get_node_pairs(g: &Graph, peak: NodeId, window: usize) -> Vec<ChunkRegion> {
    assert!(window >= 1, "window must be at least 1");
    let n = g.nodes.len();
    let p = peak.0;
    assert!(p < n, "peak node out of range");
    let mut out = Vec::new();
    for len in 1..=window.min(n) {
        let lo = (p + 1).saturating_sub(len);
        let hi = p.min(n - len);
        for start in lo..=hi {
            out.push(ChunkRegion::new(start, start + len - 1));
        }
    }
    out
}

/// Region inputs (produced outside, consumed inside; includes weights) and
/// region outputs (produced inside, consumed outside or graph outputs).
pub fn region_io(g: &Graph, region: &ChunkRegion) -> (Vec<TensorId>, Vec<TensorId>) {
    let mut inputs = BTreeSet::new();
    let mut outputs = Vec::new();
    for id in region.nodes() {
        for &t in &g.node(id).inputs {
            let produced_inside = g.producer(t).is_some_and(|p| region.contains(p.0));
            if !produced_inside {
                inputs.insert(t);
            }
        }
    }
    for id in region.nodes() {
        let t = g.node(id).output;
        let outside_consumer = g.consumers(t).iter().any(|c| !region.contains(c.0));
        if outside_consumer || g.is_graph_output(t) {
            outputs.push(t);
        }
    }
    (inputs.into_iter().collect(), outputs)
}

/// Cheap stage-one check: does a dim-compatible backward path exist from
/// every region output (at its assigned dim) to some sliceable region
/// input? Ignores cross-flow consistency entirely, so it never rejects an
/// assignment the full check would accept.
pub fn two_stage_filter(
    g: &Graph,
    region: &ChunkRegion,
    assignment: &[(TensorId, usize)],
) -> bool {
    assignment.iter().all(|&(t, d)| dim_reaches_input(g, region, t, d))
}

fn dim_reaches_input(g: &Graph, region: &ChunkRegion, tensor: TensorId, dim: usize) -> bool {
    let mut seen = BTreeSet::new();
    let mut stack = vec![(tensor, dim)];
    while let Some((t, d)) = stack.pop() {
        if !seen.insert((t, d)) {
            continue;
        }
        let producer = match g.producer(t) {
            Some(p) if region.contains(p.0) => p,
            // Reached a tensor from outside the region.
            _ => {
                if !g.is_weight(t) {
                    return true;
                }
                continue;
            }
        };
        let node = g.node(producer);
        if let DimPropagation::Inputs(reqs) = propagate_dim(g, node, d) {
            for (&input, req) in node.inputs.iter().zip(&reqs) {
                if let InputRequirement::Sliced(di) = req {
                    if g.is_weight(input) {
                        continue;
                    }
                    let inside = g.producer(input).is_some_and(|p| region.contains(p.0));
                    if !inside {
                        return true;
                    }
                    stack.push((input, *di));
                }
            }
        }
    }
    false
}

/// Full legality check for one (region, output-dim assignment) pair.
/// Returns the candidate (without hoisting applied) when the assignment
/// satisfies all four chunk rules.
pub fn legal_candidate(
    g: &Graph,
    region: &ChunkRegion,
    assignment: &[(TensorId, usize)],
) -> Option<ChunkCandidate> {
    let (region_inputs, region_outputs) = region_io(g, region);
    if region_outputs.is_empty() || assignment.len() != region_outputs.len() {
        return None;
    }

    let mut dims: BTreeMap<TensorId, usize> = BTreeMap::new();
    for &(t, d) in assignment {
        if !region_outputs.contains(&t) || d >= g.tensor(t).rank() || g.tensor(t).shape[d] < 2 {
            return None;
        }
        if *dims.entry(t).or_insert(d) != d {
            return None; // same output listed twice with different dims
        }
    }

    // Edges (consumer-side tensor -> producer-side tensor) of the flows.
    let mut edges: Vec<(TensorId, TensorId)> = Vec::new();
    // Interior tensors some flow node needs whole.
    let mut whole_required: BTreeSet<TensorId> = BTreeSet::new();

    // Bottom-up sweep: consumers first, so each node's output dim is final
    // when the node is processed.
    for idx in (region.start..=region.end).rev() {
        let node = g.node(NodeId(idx));
        let Some(&out_dim) = dims.get(&node.output) else { continue };
        match propagate_dim(g, node, out_dim) {
            DimPropagation::Break => return None, // Rules 1-2
            DimPropagation::Inputs(reqs) => {
                for (&input, req) in node.inputs.iter().zip(&reqs) {
                    match req {
                        InputRequirement::Sliced(di) => {
                            if g.is_weight(input) {
                                return None; // leaves are never sliced
                            }
                            if g.tensor(input).shape[*di] < 2 {
                                return None; // nothing to segment
                            }
                            match dims.get(&input) {
                                Some(&have) if have != *di => return None, // Rule 4
                                Some(_) => {}
                                None => {
                                    dims.insert(input, *di);
                                }
                            }
                            edges.push((node.output, input));
                        }
                        InputRequirement::Whole => {
                            whole_required.insert(input);
                        }
                    }
                }
            }
        }
    }

    let produced_inside = |t: TensorId| g.producer(t).is_some_and(|p| region.contains(p.0));

    // A tensor produced inside the region only exists as segments once it
    // carries a chunk dim; nothing may read it whole, and off-flow nodes
    // may not read sliced tensors at all.
    for t in &whole_required {
        if produced_inside(*t) && dims.contains_key(t) {
            return None;
        }
    }
    for idx in region.nodes() {
        let node = g.node(idx);
        if dims.contains_key(&node.output) {
            continue;
        }
        for input in &node.inputs {
            if produced_inside(*input) && dims.contains_key(input) {
                return None;
            }
        }
    }

    // Rule 3: each output's flow must reach a sliceable region input.
    let mut adjacency: BTreeMap<TensorId, Vec<TensorId>> = BTreeMap::new();
    for &(from, to) in &edges {
        adjacency.entry(from).or_default().push(to);
    }
    let mut flows = Vec::with_capacity(assignment.len());
    for &(out, _) in assignment {
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([out]);
        let mut reached_input = false;
        while let Some(t) = queue.pop_front() {
            if !seen.insert(t) {
                continue;
            }
            entries.push((t, dims[&t]));
            if !produced_inside(t) {
                reached_input = true;
                continue;
            }
            if let Some(next) = adjacency.get(&t) {
                queue.extend(next.iter().copied());
            }
        }
        if !reached_input {
            return None;
        }
        flows.push(ChunkFlow { output: out, entries });
    }

    let chunkable_inputs: Vec<(TensorId, usize)> = region_inputs
        .iter()
        .filter_map(|&t| dims.get(&t).map(|&d| (t, d)))
        .collect();
    let non_chunkable_inputs: Vec<TensorId> =
        region_inputs.iter().copied().filter(|t| !dims.contains_key(t)).collect();
    let max_chunk_size = dims
        .iter()
        .map(|(&t, &d)| g.tensor(t).shape[d])
        .min()
        .expect("flows are non-empty");

    Some(ChunkCandidate {
        region: *region,
        hoisted: Vec::new(),
        dims,
        chunkable_inputs,
        non_chunkable_inputs,
        outputs: assignment.to_vec(),
        flows,
        chunk_size: 0,
        max_chunk_size,
        cost: None,
    })
}

/// Moves interior nodes on no flow out of the per-segment loop (they run
/// once, before it) and shrinks the region to the smallest interval
/// containing all flow nodes. Identity when every node is on a flow.
pub fn optimize_region(g: &Graph, cand: &ChunkCandidate) -> ChunkCandidate {
    let flow_nodes: Vec<usize> = cand
        .region
        .nodes()
        .filter(|&n| cand.dims.contains_key(&g.node(n).output))
        .map(|n| n.0)
        .collect();
    if flow_nodes.len() == cand.region.len() {
        return cand.clone();
    }
    let region = ChunkRegion::new(
        *flow_nodes.first().expect("legal candidates have flow nodes"),
        *flow_nodes.last().unwrap(),
    );
    let hoisted: Vec<NodeId> = region
        .nodes()
        .filter(|&n| !cand.dims.contains_key(&g.node(n).output))
        .collect();

    let (region_inputs, _) = region_io(g, &region);
    let chunkable_inputs: Vec<(TensorId, usize)> = region_inputs
        .iter()
        .filter_map(|&t| cand.dims.get(&t).map(|&d| (t, d)))
        .collect();
    let non_chunkable_inputs: Vec<TensorId> = region_inputs
        .iter()
        .copied()
        .filter(|t| !cand.dims.contains_key(t))
        .collect();

    ChunkCandidate {
        region,
        hoisted,
        dims: cand.dims.clone(),
        chunkable_inputs,
        non_chunkable_inputs,
        outputs: cand.outputs.clone(),
        flows: cand.flows.clone(),
        chunk_size: cand.chunk_size,
        max_chunk_size: cand.max_chunk_size,
        cost: cand.cost,
    }
}

/// Searches all regions around `peak` for legal chunk candidates.
///
/// `committed` regions are excluded from enumeration (plans must stay
/// disjoint), and — when `peak_to_beat` is set — candidates that cannot
/// lower the current peak even at their largest chunk size are dropped.
/// Candidates are returned in deterministic (length, start, dims) order.
pub fn search(
    g: &Graph,
    peak: NodeId,
    committed: &ChunkPlan,
    opts: &SearchOptions,
) -> (Vec<ChunkCandidate>, SearchStats) {
    type CandidateKey = (usize, usize, Vec<(TensorId, usize)>);
    let mut stats = SearchStats::default();
    let mut out: Vec<ChunkCandidate> = Vec::new();
    let mut seen: BTreeSet<CandidateKey> = BTreeSet::new();

    'regions: for region in get_node_pairs(g, peak, opts.window) {
        for step in &committed.steps {
            if step.chunk_size > 1 && region.overlaps(&step.region) {
                continue 'regions;
            }
        }
        let (_, outputs) = region_io(g, &region);
        if outputs.is_empty() {
            continue;
        }
        let options: Vec<Vec<usize>> = outputs
            .iter()
            .map(|&t| {
                let meta = g.tensor(t);
                (0..meta.rank()).filter(|&d| meta.shape[d] >= 2).collect()
            })
            .collect();
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }

        // Cartesian product over each output's admissible dims.
        let mut counters = vec![0usize; outputs.len()];
        'assignments: loop {
            let assignment: Vec<(TensorId, usize)> = outputs
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, options[i][counters[i]]))
                .collect();
            stats.assignments_total += 1;
            if two_stage_filter(g, &region, &assignment) {
                stats.assignments_passed_filter += 1;
                if let Some(cand) = legal_candidate(g, &region, &assignment) {
                    stats.legal_candidates += 1;
                    let cand = if opts.enable_hoisting {
                        optimize_region(g, &cand)
                    } else {
                        cand
                    };
                    let key = (
                        cand.region.start,
                        cand.region.end,
                        cand.outputs.clone(),
                    );
                    if seen.insert(key) && beats_peak(g, committed, &cand, opts.peak_to_beat) {
                        out.push(cand);
                    }
                }
            }
            let mut d = outputs.len();
            while d > 0 {
                d -= 1;
                counters[d] += 1;
                if counters[d] < options[d].len() {
                    continue 'assignments;
                }
                counters[d] = 0;
            }
            break;
        }
    }

    out.sort_by(|a, b| {
        (a.region.len(), a.region.start, &a.outputs).cmp(&(
            b.region.len(),
            b.region.start,
            &b.outputs,
        ))
    });
    (out, stats)
}

fn beats_peak(
    g: &Graph,
    committed: &ChunkPlan,
    cand: &ChunkCandidate,
    peak_to_beat: Option<u64>,
) -> bool {
    let Some(target) = peak_to_beat else { return true };
    let mut plan = committed.clone();
    plan.steps.push(cand.with_chunk_size(cand.max_chunk_size));
    // The candidate contains the peak node; at its best chunk size its own
    // steps must run strictly below the peak it is meant to fix. The global
    // peak may persist elsewhere; later passes handle that.
    match region_peak(g, &plan, plan.steps.len() - 1) {
        Ok(peak) => peak < target,
        Err(_) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, load_graph};

    fn mlp() -> Graph {
        infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [8, 4], "dtype": "float64"},
                {"id": "w1", "shape": [4, 32], "dtype": "float64"},
                {"id": "w2", "shape": [32, 4], "dtype": "float64"},
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
        .unwrap()
    }

    #[test]
    fn node_pairs_enumeration() {
        // 5-node chain, peak at index 2, window 2.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [4, 4], "dtype": "float32"},
                {"id": "a"}, {"id": "b"}, {"id": "c"}, {"id": "d"}, {"id": "e"}
            ],
            "inputs": ["x"], "outputs": ["e"],
            "nodes": [
                {"id": "n0", "kind": "relu", "inputs": ["x"], "output": "a"},
                {"id": "n1", "kind": "relu", "inputs": ["a"], "output": "b"},
                {"id": "n2", "kind": "relu", "inputs": ["b"], "output": "c"},
                {"id": "n3", "kind": "relu", "inputs": ["c"], "output": "d"},
                {"id": "n4", "kind": "relu", "inputs": ["d"], "output": "e"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let pairs = get_node_pairs(&g, NodeId(2), 2);
        let as_tuples: Vec<(usize, usize)> = pairs.iter().map(|r| (r.start, r.end)).collect();
        assert_eq!(as_tuples, vec![(2, 2), (1, 2), (2, 3)]);

        assert_eq!(get_node_pairs(&g, NodeId(2), 1).len(), 1);
        // Window covering everything: (p+1)·(N-p) with p=2, N=5.
        assert_eq!(get_node_pairs(&g, NodeId(2), 5).len(), 3 * 3);
    }

    #[test]
    fn mlp_full_region_is_chunkable_on_rows() {
        let g = mlp();
        let region = ChunkRegion::new(0, 2);
        let y = g.tensor_by_name("y").unwrap();
        let cand = legal_candidate(&g, &region, &[(y, 0)]).expect("row chunk is legal");
        let x = g.tensor_by_name("x").unwrap();
        assert_eq!(cand.chunkable_inputs, vec![(x, 0)]);
        assert_eq!(cand.dims.len(), 4); // x, h, a, y
        assert_eq!(cand.max_chunk_size, 8);
        // Column chunk demands slicing w2: illegal.
        assert!(legal_candidate(&g, &region, &[(y, 1)]).is_none());
    }

    #[test]
    fn filter_matches_examples() {
        let g = mlp();
        let y = g.tensor_by_name("y").unwrap();
        assert!(two_stage_filter(&g, &ChunkRegion::new(0, 2), &[(y, 0)]));

        let reshaped = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [{"id": "x", "shape": [2, 6], "dtype": "float32"}, {"id": "y"}],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [{"id": "r", "kind": "reshape", "attrs": {"shape": [3, 4]}, "inputs": ["x"], "output": "y"}]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = reshaped.tensor_by_name("y").unwrap();
        assert!(!two_stage_filter(&reshaped, &ChunkRegion::new(0, 0), &[(y, 0)]));
    }

    #[test]
    fn search_finds_mlp_candidates() {
        let g = mlp();
        let (cands, stats) = search(
            &g,
            NodeId(1),
            &ChunkPlan::empty(),
            &SearchOptions { window: 3, peak_to_beat: None, enable_hoisting: false },
        );
        assert!(stats.assignments_total > 0);
        let full = cands
            .iter()
            .find(|c| c.region == ChunkRegion::new(0, 2))
            .expect("full-region candidate");
        assert_eq!(full.outputs[0].1, 0);
        // Deterministic order: lengths ascending.
        for w in cands.windows(2) {
            assert!(w[0].region.len() <= w[1].region.len());
        }
    }

    #[test]
    fn settings_are_unique_per_node() {
        let g = mlp();
        let y = g.tensor_by_name("y").unwrap();
        let cand = legal_candidate(&g, &ChunkRegion::new(0, 2), &[(y, 0)])
            .unwrap()
            .with_chunk_size(4);
        let settings = cand.settings(&g);
        assert_eq!(settings.len(), 3); // every node is on the row flow
        let mut nodes: Vec<_> = settings.iter().map(|s| s.node).collect();
        nodes.dedup();
        assert_eq!(nodes.len(), settings.len());
        assert!(settings.iter().all(|s| s.chunk_size == 4 && s.dim == 0));
    }

    #[test]
    fn single_op_regions() {
        // Lone relu: chunkable on any dim; reduce over its own dim breaks.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [4, 8], "dtype": "float32"},
                {"id": "a"}, {"id": "y"}
            ],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [
                {"id": "act", "kind": "relu", "inputs": ["x"], "output": "a"},
                {"id": "red", "kind": "reduce_sum", "attrs": {"dim": 0}, "inputs": ["a"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let a = g.tensor_by_name("a").unwrap();
        let y = g.tensor_by_name("y").unwrap();
        let relu_region = ChunkRegion::new(0, 0);
        assert!(two_stage_filter(&g, &relu_region, &[(a, 0)]));
        assert!(legal_candidate(&g, &relu_region, &[(a, 0)]).is_some());

        let red_region = ChunkRegion::new(1, 1);
        // Reducing over dim 0 couples it; dim 1 passes.
        assert!(legal_candidate(&g, &red_region, &[(y, 0)]).is_none());
        assert!(legal_candidate(&g, &red_region, &[(y, 1)]).is_some());
    }

    #[test]
    fn optimize_region_hoists_off_flow_chain() {
        // matmul(relu(x), f(w)) chunked on rows: the weight-preprocessing
        // chain is on no flow and moves out of the loop.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [8, 4], "dtype": "float64"},
                {"id": "w", "shape": [4, 6], "dtype": "float64"},
                {"id": "xa"}, {"id": "wp"}, {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w"], "outputs": ["y"],
            "nodes": [
                {"id": "pre_x", "kind": "relu", "inputs": ["x"], "output": "xa"},
                {"id": "pre_w", "kind": "gelu", "inputs": ["w"], "output": "wp"},
                {"id": "mm", "kind": "matmul", "inputs": ["xa", "wp"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = g.tensor_by_name("y").unwrap();
        let cand = legal_candidate(&g, &ChunkRegion::new(0, 2), &[(y, 0)]).unwrap();
        assert!(cand.hoisted.is_empty());
        let opt = optimize_region(&g, &cand);
        assert_eq!(opt.hoisted, vec![NodeId(1)]);
        assert_eq!(opt.region, cand.region); // pre_w sits between flow nodes
        assert_eq!(opt.loop_nodes(), vec![NodeId(0), NodeId(2)]);

        // All-flow candidates come back unchanged.
        let relu_only = legal_candidate(&g, &ChunkRegion::new(0, 0), &[(g.tensor_by_name("xa").unwrap(), 0)]).unwrap();
        assert_eq!(optimize_region(&g, &relu_only), relu_only);
    }

    #[test]
    fn optimize_region_shrinks_to_flow_nodes() {
        // An off-flow prefix (weight preprocessing first) drops out of the
        // region entirely.
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [8, 4], "dtype": "float64"},
                {"id": "w", "shape": [4, 6], "dtype": "float64"},
                {"id": "wp"}, {"id": "xa"}, {"id": "y"}
            ],
            "inputs": ["x"], "weights": ["w"], "outputs": ["y"],
            "nodes": [
                {"id": "pre_w", "kind": "gelu", "inputs": ["w"], "output": "wp"},
                {"id": "pre_x", "kind": "relu", "inputs": ["x"], "output": "xa"},
                {"id": "mm", "kind": "matmul", "inputs": ["xa", "wp"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = g.tensor_by_name("y").unwrap();
        let cand = legal_candidate(&g, &ChunkRegion::new(0, 2), &[(y, 0)]).unwrap();
        let opt = optimize_region(&g, &cand);
        assert_eq!(opt.region, ChunkRegion::new(1, 2));
        assert!(opt.hoisted.is_empty());
        // wp is now a plain region input, passed whole.
        let wp = g.tensor_by_name("wp").unwrap();
        assert!(opt.non_chunkable_inputs.contains(&wp));
    }

    #[test]
    fn rule4_conflict_is_rejected() {
        // add(a, transpose(a)): chunking the sum along dim 0 demands a
        // sliced along both 0 (direct) and 1 (through the transpose).
        let g = infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [4, 4], "dtype": "float32"},
                {"id": "a"}, {"id": "at"}, {"id": "y"}
            ],
            "inputs": ["x"], "outputs": ["y"],
            "nodes": [
                {"id": "pre", "kind": "relu", "inputs": ["x"], "output": "a"},
                {"id": "tr", "kind": "transpose", "attrs": {"perm": [1, 0]}, "inputs": ["a"], "output": "at"},
                {"id": "sum", "kind": "add", "inputs": ["a", "at"], "output": "y"}
            ]
        }"#,
            )
            .unwrap(),
        )
        .unwrap();
        let y = g.tensor_by_name("y").unwrap();
        assert!(legal_candidate(&g, &ChunkRegion::new(0, 2), &[(y, 0)]).is_none());
        // Same conflict when `a` is a region input: one dim per tensor.
        assert!(legal_candidate(&g, &ChunkRegion::new(1, 2), &[(y, 0)]).is_none());
        // The lone add slices its two (distinct) inputs independently.
        assert!(legal_candidate(&g, &ChunkRegion::new(2, 2), &[(y, 0)]).is_some());
    }
}
