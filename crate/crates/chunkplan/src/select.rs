//! Candidate scoring and plan selection.
//!
//! Candidates are ranked by a two-level cost: a region-level term over node
//! count and FLOPs, and a setting-level term over computation density and
//! the chunk dimension's stride. Selection runs iterative passes, each
//! re-locating the peak under the partial plan and extending a beam of the
//! lowest-cost partial plans until the budget is met.

use std::cmp::Ordering;
use std::collections::btree_map::Entry as MapEntry;
use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{flop_count, Graph};
use crate::memory::{estimate_with_plan, profile, region_peak, MemoryProfile};
use crate::plan::{leading_segment, ChunkCandidate, ChunkPlan, CostBreakdown};
use crate::search::{search, SearchOptions, SearchStats};

/// Cost-model weights and selection knobs.
///
/// `gamma` defaults negative: denser regions tolerate chunking better, so
/// higher density should lower the cost. `lambda` penalizes large strides
/// of the chunk dimension (costlier to split and re-join).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub beam_width: usize,
    pub window: usize,
    /// Ordered chunk-size ladder tried by [`choose_chunk_size`].
    pub chunk_size_candidates: Vec<u64>,
    pub max_passes: usize,
    /// Hoist off-flow nodes out of region loops (ablation toggle).
    pub graph_optimization: bool,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            alpha: 1.0,
            beta: 1e-9,
            gamma: -1e-5,
            lambda: 0.01,
            beam_width: 4,
            window: 32,
            chunk_size_candidates: vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048, 4096],
            max_passes: 16,
            graph_optimization: true,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.beam_width < 1 {
            return Err("beam_width must be at least 1".into());
        }
        if self.window < 1 {
            return Err("window must be at least 1".into());
        }
        if self.max_passes < 1 {
            return Err("max_passes must be at least 1".into());
        }
        if self.chunk_size_candidates.is_empty()
            || self.chunk_size_candidates.iter().any(|&n| n < 2)
        {
            return Err("chunk_size_candidates must all be at least 2".into());
        }
        Ok(())
    }
}

/// Region-level cost: `alpha · N_node + beta · N_flop`.
pub fn macro_cost(g: &Graph, cand: &ChunkCandidate, params: &CostParams) -> f64 {
    let nodes = cand.loop_nodes();
    let n_flop: u64 = nodes.iter().map(|&n| flop_count(g.node(n), g)).sum();
    params.alpha * nodes.len() as f64 + params.beta * n_flop as f64
}

/// Setting-level cost: `gamma · N_density + lambda · N_stride`, with the
/// stride taken from the chunk dimension of the largest flow tensor.
pub fn micro_cost(g: &Graph, cand: &ChunkCandidate, params: &CostParams) -> f64 {
    let nodes = cand.loop_nodes();
    let n_flop: u64 = nodes.iter().map(|&n| flop_count(g.node(n), g)).sum();
    let density = n_flop as f64 / nodes.len().max(1) as f64;
    params.gamma * density + params.lambda * stride_term(g, cand) as f64
}

fn stride_term(g: &Graph, cand: &ChunkCandidate) -> u64 {
    // Largest flow tensor by bytes; ties resolved by tensor id order.
    let mut best: Option<(u64, u64)> = None; // (bytes, stride)
    for (&t, &d) in &cand.dims {
        let meta = g.tensor(t);
        if best.is_none_or(|(bytes, _)| meta.bytes > bytes) {
            best = Some((meta.bytes, meta.strides[d]));
        }
    }
    best.map_or(0, |(_, stride)| stride)
}

/// Full cost breakdown of a sized candidate.
pub fn score(g: &Graph, cand: &ChunkCandidate, params: &CostParams) -> CostBreakdown {
    let nodes = cand.loop_nodes();
    let n_node = nodes.len() as u64;
    let n_flop: u64 = nodes.iter().map(|&n| flop_count(g.node(n), g)).sum();
    let n_density = n_flop as f64 / n_node.max(1) as f64;
    let n_stride = stride_term(g, cand);
    let l_macro = macro_cost(g, cand, params);
    let l_micro = micro_cost(g, cand, params);
    CostBreakdown {
        n_node,
        n_flop,
        n_density,
        n_stride,
        l_macro,
        l_micro,
        l_total: l_macro + l_micro,
        per_iteration_flops: per_iteration_flops(g, cand),
    }
}

/// FLOPs executed by one loop iteration: flow nodes at leading-segment
/// shapes, off-flow nodes left in the loop at full shapes.
pub fn per_iteration_flops(g: &Graph, cand: &ChunkCandidate) -> u64 {
    let n = cand.chunk_size.max(1);
    cand.loop_nodes()
        .iter()
        .map(|&id| {
            let node = g.node(id);
            let full = flop_count(node, g);
            match cand.dims.get(&node.output) {
                Some(&d) => {
                    let extent = g.tensor(node.output).shape[d];
                    full / extent * leading_segment(extent, n)
                }
                None => full,
            }
        })
        .sum()
}

/// Smallest ladder chunk size (clamped to the candidate's maximum) whose
/// region steps fit under the budget next to everything already committed.
pub fn choose_chunk_size(
    g: &Graph,
    cand: &ChunkCandidate,
    committed: &ChunkPlan,
    budget: u64,
    params: &CostParams,
) -> Option<u64> {
    let mut ladder: Vec<u64> = params
        .chunk_size_candidates
        .iter()
        .map(|&n| n.min(cand.max_chunk_size))
        .filter(|&n| n >= 2)
        .collect();
    ladder.sort_unstable();
    ladder.dedup();

    for n in ladder {
        let mut plan = committed.clone();
        plan.steps.push(cand.with_chunk_size(n));
        let si = plan.steps.len() - 1;
        match region_peak(g, &plan, si) {
            Ok(peak) if peak < budget => return Some(n),
            _ => {}
        }
    }
    None
}

/// A finished (or best-effort) selection run.
#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub plan: ChunkPlan,
    pub baseline_peak_bytes: u64,
    pub predicted: MemoryProfile,
    pub feasible: bool,
    pub passes: usize,
    pub search_stats: SearchStats,
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("budget of {budget} bytes is unachievable; best effort reaches {achieved} bytes")]
    BudgetUnachievable { budget: u64, achieved: u64, best_effort: Box<SelectOutcome> },
}

#[derive(Clone)]
struct BeamEntry {
    plan: ChunkPlan,
    profile: MemoryProfile,
}

fn region_key(plan: &ChunkPlan) -> Vec<(usize, usize)> {
    let mut key: Vec<(usize, usize)> =
        plan.steps.iter().map(|s| (s.region.start, s.region.end)).collect();
    key.sort_unstable();
    key
}

/// One step's identity: region bounds, output dims, chunk size.
type StepKey = (usize, usize, Vec<(usize, usize)>, u64);

/// Canonical plan identity for deterministic tie-breaking.
fn plan_key(plan: &ChunkPlan) -> Vec<StepKey> {
    let mut key: Vec<_> = plan
        .steps
        .iter()
        .map(|s| {
            (
                s.region.start,
                s.region.end,
                s.outputs.iter().map(|&(t, d)| (t.0, d)).collect::<Vec<_>>(),
                s.chunk_size,
            )
        })
        .collect();
    key.sort();
    key
}

fn entry_cmp(a: &BeamEntry, b: &BeamEntry) -> Ordering {
    a.plan
        .total_cost
        .total_cmp(&b.plan.total_cost)
        .then_with(|| plan_key(&a.plan).cmp(&plan_key(&b.plan)))
}

/// Finds the minimum-cost chunk plan whose predicted peak fits the budget.
///
/// Each pass profiles every beam entry, searches around its peak node,
/// extends it with every candidate that admits a feasible chunk size,
/// deduplicates by committed-region set keeping the cheaper plan, and prunes
/// to the beam width. Returns the cheapest feasible plan of the first pass
/// that produces one.
pub fn select(g: &Graph, budget: u64, params: &CostParams) -> Result<SelectOutcome, SelectError> {
    params.validate().map_err(SelectError::BadParams)?;
    let baseline = profile(g);
    let baseline_peak = baseline.peak_bytes;

    let outcome = |plan: ChunkPlan,
                   prof: MemoryProfile,
                   feasible: bool,
                   passes: usize,
                   stats: SearchStats| SelectOutcome {
        plan,
        baseline_peak_bytes: baseline_peak,
        predicted: prof,
        feasible,
        passes,
        search_stats: stats,
    };

    // A budget at or above the baseline peak needs no chunking at all.
    if baseline_peak <= budget {
        return Ok(outcome(ChunkPlan::empty(), baseline, true, 0, SearchStats::default()));
    }

    // Step 0 binds all inputs and the final step retains all outputs; no
    // plan can go below either.
    let input_floor: u64 = g.graph_inputs.iter().map(|&t| g.tensor(t).bytes).sum();
    let output_floor: u64 = g
        .graph_outputs
        .iter()
        .collect::<BTreeSet<_>>()
        .iter()
        .map(|&&t| g.tensor(t).bytes)
        .sum();
    if budget <= input_floor.max(output_floor) {
        let best = outcome(ChunkPlan::empty(), baseline.clone(), false, 0, SearchStats::default());
        return Err(SelectError::BudgetUnachievable {
            budget,
            achieved: baseline_peak,
            best_effort: Box::new(best),
        });
    }

    let mut stats = SearchStats::default();
    let mut beam = vec![BeamEntry { plan: ChunkPlan::empty(), profile: baseline.clone() }];
    let mut best = beam[0].clone();
    let mut passes_done = 0;

    for pass in 1..=params.max_passes {
        passes_done = pass;
        let mut extensions: BTreeMap<Vec<(usize, usize)>, BeamEntry> = BTreeMap::new();
        let mut feasible: Vec<BeamEntry> = Vec::new();

        for entry in &beam {
            let Some(peak_node) = entry.profile.peak_node else { continue };
            let opts = SearchOptions {
                window: params.window,
                peak_to_beat: Some(entry.profile.peak_bytes),
                enable_hoisting: params.graph_optimization,
            };
            let (cands, pass_stats) = search(g, peak_node, &entry.plan, &opts);
            stats.merge(&pass_stats);

            for cand in cands {
                let Some(n) = choose_chunk_size(g, &cand, &entry.plan, budget, params) else {
                    continue;
                };
                let mut sized = cand.with_chunk_size(n);
                let breakdown = score(g, &sized, params);
                sized.cost = Some(breakdown);

                let mut plan = entry.plan.clone();
                plan.total_cost += breakdown.l_total;
                plan.steps.push(sized);
                let Ok(prof) = estimate_with_plan(g, &plan) else { continue };
                let next = BeamEntry { plan, profile: prof };

                if next.profile.peak_bytes < best.profile.peak_bytes {
                    best = next.clone();
                }
                if next.profile.peak_bytes < budget {
                    feasible.push(next.clone());
                }
                match extensions.entry(region_key(&next.plan)) {
                    MapEntry::Occupied(mut o) => {
                        if entry_cmp(&next, o.get()) == Ordering::Less {
                            o.insert(next);
                        }
                    }
                    MapEntry::Vacant(v) => {
                        v.insert(next);
                    }
                }
            }
        }

        if !feasible.is_empty() {
            feasible.sort_by(entry_cmp);
            let winner = feasible.swap_remove(0);
            return Ok(outcome(winner.plan, winner.profile, true, pass, stats));
        }
        if extensions.is_empty() {
            break;
        }
        let mut next: Vec<BeamEntry> = extensions.into_values().collect();
        next.sort_by(entry_cmp);
        next.truncate(params.beam_width);
        beam = next;
    }

    let achieved = best.profile.peak_bytes;
    Err(SelectError::BudgetUnachievable {
        budget,
        achieved,
        best_effort: Box::new(outcome(best.plan, best.profile, false, passes_done, stats)),
    })
}
