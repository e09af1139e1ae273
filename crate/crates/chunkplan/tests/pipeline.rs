//! End-to-end pipeline checks on corpus graphs: plans are found, chunked
//! execution matches plain execution bitwise, and the memory estimator
//! agrees with the tracked executor.

use chunkplan::corpus::{build_corpus, random_bindings, CorpusFamily, CorpusParams};
use chunkplan::exec::{run, run_chunked, tracked_run};
use chunkplan::graph::DType;
use chunkplan::memory::{estimate_with_plan, profile};
use chunkplan::plan::{plan_from_doc, plan_to_doc, PlanDoc};
use chunkplan::select::{select, CostParams};

fn small(seq: u64) -> CorpusParams {
    CorpusParams { seq, dim: 16, heads: 2, hidden: 64, channels: 4, dtype: DType::Float64 }
}

/// Shapes where the quadratic interior dominates the linear-size tensors,
/// so halving the peak is actually possible.
fn sized(family: CorpusFamily) -> CorpusParams {
    match family {
        CorpusFamily::Mlp => small(24),
        CorpusFamily::Attention => {
            CorpusParams { seq: 48, dim: 8, heads: 2, hidden: 32, ..small(48) }
        }
        CorpusFamily::Transformer2 => {
            CorpusParams { seq: 48, dim: 8, heads: 2, hidden: 32, ..small(48) }
        }
        CorpusFamily::AlphafoldLike2d => small(24),
    }
}

#[test]
fn unchunked_profile_matches_tracked_run_on_all_families() {
    for family in CorpusFamily::ALL {
        let g = build_corpus(family, &small(24)).unwrap();
        let (inputs, weights) = random_bindings(&g, 11);
        let trace = tracked_run(&g, None, &inputs, &weights).unwrap();
        let predicted = profile(&g);
        assert_eq!(
            predicted.per_step_bytes, trace.per_step_bytes,
            "estimator disagrees with executor on {family:?}"
        );
        assert_eq!(predicted.peak_bytes, trace.measured_peak_bytes);
    }
}

#[test]
fn planned_execution_is_bit_identical() {
    for family in CorpusFamily::ALL {
        let g = build_corpus(family, &sized(family)).unwrap();
        let baseline = profile(&g).peak_bytes;
        let out = match select(&g, baseline / 2, &CostParams::default()) {
            Ok(out) => out,
            Err(e) => panic!("{family:?}: {e}"),
        };
        assert!(out.feasible, "{family:?} plan infeasible");
        assert!(!out.plan.is_empty(), "{family:?} plan unexpectedly empty");

        for seed in [1u64, 2, 3] {
            let (inputs, weights) = random_bindings(&g, seed);
            let plain = run(&g, &inputs, &weights).unwrap();
            let chunked = run_chunked(&g, &out.plan, &inputs, &weights).unwrap();
            for (t, v) in &plain.outputs {
                assert!(
                    chunked.outputs[t].bits_equal(v),
                    "{family:?} seed {seed}: output {t:?} differs"
                );
            }
        }
    }
}

#[test]
fn chunked_estimate_matches_tracked_run() {
    for family in CorpusFamily::ALL {
        let g = build_corpus(family, &sized(family)).unwrap();
        let baseline = profile(&g).peak_bytes;
        let out = select(&g, baseline / 2, &CostParams::default()).unwrap();
        let predicted = estimate_with_plan(&g, &out.plan).unwrap();

        let (inputs, weights) = random_bindings(&g, 5);
        let trace = tracked_run(&g, Some(&out.plan), &inputs, &weights).unwrap();
        assert_eq!(
            predicted.per_step_bytes, trace.per_step_bytes,
            "chunked estimator disagrees with executor on {family:?}"
        );
    }
}

#[test]
fn chunk_size_one_is_the_identity() {
    let g = build_corpus(CorpusFamily::Mlp, &small(16)).unwrap();
    let baseline = profile(&g).peak_bytes;
    let out = select(&g, baseline / 2, &CostParams::default()).unwrap();
    let mut degenerate = out.plan.clone();
    for s in &mut degenerate.steps {
        s.chunk_size = 1;
    }
    let (inputs, weights) = random_bindings(&g, 9);
    let plain = run(&g, &inputs, &weights).unwrap();
    let chunked = run_chunked(&g, &degenerate, &inputs, &weights).unwrap();
    assert_eq!(plain.per_step_bytes, chunked.per_step_bytes);
    assert_eq!(plain.measured_peak_bytes, chunked.measured_peak_bytes);
    assert_eq!(
        estimate_with_plan(&g, &degenerate).unwrap().per_step_bytes,
        profile(&g).per_step_bytes
    );
}

#[test]
fn ragged_split_is_exact() {
    // seq 24 with n = 16 gives ceil split 2×12 segments... n=16 -> seg 2,
    // and seq not divisible by larger ladder entries exercises the tail.
    let g = build_corpus(CorpusFamily::Mlp, &CorpusParams { hidden: 512, ..small(24) }).unwrap();
    let baseline = profile(&g).peak_bytes;
    let out = select(&g, baseline / 5, &CostParams::default()).unwrap();
    let (inputs, weights) = random_bindings(&g, 21);
    let plain = run(&g, &inputs, &weights).unwrap();
    let chunked = run_chunked(&g, &out.plan, &inputs, &weights).unwrap();
    for (t, v) in &plain.outputs {
        assert!(chunked.outputs[t].bits_equal(v));
    }
}

#[test]
fn mlp_single_region_equivalence_over_many_seeds() {
    let g = build_corpus(CorpusFamily::Mlp, &small(16)).unwrap();
    let y = g.tensor_by_name("y").unwrap();
    let cand = chunkplan::search::legal_candidate(
        &g,
        &chunkplan::plan::ChunkRegion::new(0, 2),
        &[(y, 0)],
    )
    .unwrap();
    let mut plan = chunkplan::plan::ChunkPlan::empty();
    plan.steps.push(cand.with_chunk_size(2));
    for seed in 0..100u64 {
        let (inputs, weights) = random_bindings(&g, seed);
        let plain = run(&g, &inputs, &weights).unwrap();
        let chunked = run_chunked(&g, &plan, &inputs, &weights).unwrap();
        for (t, v) in &plain.outputs {
            assert!(chunked.outputs[t].bits_equal(v), "seed {seed}");
        }
    }
}

#[test]
fn ragged_extent_three_splits_two_one() {
    // extent 3 with n = 2: segments of 2 and 1 rows.
    let g = build_corpus(
        CorpusFamily::Mlp,
        &CorpusParams { seq: 3, dim: 4, hidden: 8, ..small(3) },
    )
    .unwrap();
    let y = g.tensor_by_name("y").unwrap();
    let cand = chunkplan::search::legal_candidate(
        &g,
        &chunkplan::plan::ChunkRegion::new(0, 2),
        &[(y, 0)],
    )
    .unwrap();
    assert_eq!(chunkplan::plan::segment_bounds(3, 2), vec![(0, 2), (2, 1)]);
    let mut plan = chunkplan::plan::ChunkPlan::empty();
    plan.steps.push(cand.with_chunk_size(2));
    let (inputs, weights) = random_bindings(&g, 77);
    let plain = run(&g, &inputs, &weights).unwrap();
    let chunked = run_chunked(&g, &plan, &inputs, &weights).unwrap();
    for (t, v) in &plain.outputs {
        assert!(chunked.outputs[t].bits_equal(v));
    }
}

/// Every candidate the search emits must execute equivalently at any chunk
/// size up to its maximum, with and without hoisting.
#[test]
fn all_candidates_execute_equivalently_at_various_sizes() {
    for family in [CorpusFamily::Attention, CorpusFamily::AlphafoldLike2d] {
        let p = CorpusParams { seq: 6, dim: 4, heads: 2, hidden: 8, channels: 3, ..small(6) };
        let g = build_corpus(family, &p).unwrap();
        let peak = profile(&g).peak_node.unwrap();
        let (inputs, weights) = random_bindings(&g, 13);
        let plain = run(&g, &inputs, &weights).unwrap();

        for hoisting in [true, false] {
            let opts = chunkplan::search::SearchOptions {
                window: g.nodes.len(),
                peak_to_beat: None,
                enable_hoisting: hoisting,
            };
            let (cands, _) =
                chunkplan::search::search(&g, peak, &chunkplan::plan::ChunkPlan::empty(), &opts);
            assert!(!cands.is_empty());
            for cand in &cands {
                for n in [2, 3, 5, cand.max_chunk_size] {
                    if n < 2 || n > cand.max_chunk_size {
                        continue;
                    }
                    let mut plan = chunkplan::plan::ChunkPlan::empty();
                    plan.steps.push(cand.with_chunk_size(n));
                    let chunked = run_chunked(&g, &plan, &inputs, &weights)
                        .unwrap_or_else(|e| panic!("{family:?} {:?} n={n}: {e}", cand.region));
                    for (t, v) in &plain.outputs {
                        assert!(
                            chunked.outputs[t].bits_equal(v),
                            "{family:?} {:?} outs {:?} n={n} hoisting={hoisting}",
                            cand.region,
                            cand.outputs
                        );
                    }
                    // The estimator stays exact for arbitrary plans too.
                    assert_eq!(
                        estimate_with_plan(&g, &plan).unwrap().per_step_bytes,
                        chunked.per_step_bytes,
                        "{family:?} {:?} n={n} hoisting={hoisting}",
                        cand.region
                    );
                }
            }
        }
    }
}

#[test]
fn float32_graphs_stay_within_tolerance() {
    let p = CorpusParams { dtype: DType::Float32, ..sized(CorpusFamily::Attention) };
    let g = build_corpus(CorpusFamily::Attention, &p).unwrap();
    let baseline = profile(&g).peak_bytes;
    let out = select(&g, baseline / 2, &CostParams::default()).unwrap();
    let (inputs, weights) = random_bindings(&g, 4);
    let plain = run(&g, &inputs, &weights).unwrap();
    let chunked = run_chunked(&g, &out.plan, &inputs, &weights).unwrap();
    for (t, v) in &plain.outputs {
        let dev = chunked.outputs[t].max_rel_deviation(v);
        assert!(dev <= 1e-6, "float32 deviation {dev}");
    }
}

#[test]
fn tensor_bytes_match_materialized_buffers() {
    for family in CorpusFamily::ALL {
        let g = build_corpus(family, &small(12)).unwrap();
        let (inputs, weights) = random_bindings(&g, 2);
        let values = chunkplan::exec::evaluate_all(&g, &inputs, &weights).unwrap();
        for t in g.tensor_ids() {
            assert_eq!(
                g.tensor(t).bytes,
                values[&t].bytes(),
                "{family:?}: tensor {} bytes mismatch",
                g.tensor(t).name
            );
        }
    }
}

#[test]
fn tightening_budget_never_lowers_plan_cost() {
    for family in [CorpusFamily::Mlp, CorpusFamily::Attention] {
        let g = build_corpus(family, &sized(family)).unwrap();
        let baseline = profile(&g).peak_bytes;
        let mut last_cost = f64::NEG_INFINITY;
        for fraction in [0.2, 0.35, 0.5, 0.8] {
            let budget = (baseline as f64 * fraction) as u64;
            if let Ok(out) = select(&g, budget, &CostParams::default()) {
                // Looser budgets (later iterations) must not cost more.
                assert!(
                    out.plan.total_cost <= last_cost || last_cost == f64::NEG_INFINITY,
                    "{family:?}: cost rose from {last_cost} when loosening to {fraction}"
                );
                last_cost = out.plan.total_cost;
            }
        }
    }
}

#[test]
fn plan_documents_round_trip() {
    let g = build_corpus(CorpusFamily::Attention, &sized(CorpusFamily::Attention)).unwrap();
    let baseline = profile(&g).peak_bytes;
    let out = select(&g, baseline / 2, &CostParams::default()).unwrap();
    let doc = plan_to_doc(
        &g,
        &out.plan,
        Some(baseline / 2),
        baseline,
        out.predicted.peak_bytes,
        out.feasible,
    );
    let text = serde_json::to_string_pretty(&doc).unwrap();
    let parsed: PlanDoc = serde_json::from_str(&text).unwrap();
    let plan = plan_from_doc(&g, &parsed).unwrap();
    assert_eq!(plan, out.plan);
}
