//! Command-line front end: plan, estimate, search, verify, corpus, maxlen.
//!
//! Exit codes: 0 success, 1 verification mismatch, 2 parse/validate/usage
//! failure, 3 budget unachievable (a best-effort plan is still written).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use chunkplan::corpus::{corpus_document, random_bindings, CorpusFamily, CorpusParams};
use chunkplan::exec::{run, run_chunked};
use chunkplan::graph::{infer_shapes, load_graph, validate, DType, Graph};
use chunkplan::maxlen::max_feasible_lengths;
use chunkplan::memory::{estimate_with_plan, profile, weight_bytes};
use chunkplan::plan::{plan_from_doc, plan_to_doc, ChunkPlan, PlanDoc};
use chunkplan::search::{search, SearchOptions};
use chunkplan::select::{select, CostParams, SelectError, SelectOutcome};

const EXIT_MISMATCH: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_UNACHIEVABLE: u8 = 3;

#[derive(Parser)]
#[command(name = "chunkplan", version, about = "Chunk-planning compiler for tensor graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find a chunk plan that fits an activation-memory budget.
    Plan(PlanArgs),
    /// Report the activation-memory profile of a graph.
    Estimate(EstimateArgs),
    /// List legal chunk candidates around the peak activation node.
    Search(SearchArgs),
    /// Execute a graph with and without a plan and compare results.
    Verify(VerifyArgs),
    /// Emit a deterministic sample graph document.
    Corpus(CorpusArgs),
    /// Report max feasible sequence lengths under a fixed budget.
    Maxlen(MaxlenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Args)]
struct PlanArgs {
    /// Graph document path.
    #[arg(long)]
    graph: PathBuf,
    /// Budget in bytes.
    #[arg(long, conflicts_with = "budget_fraction")]
    budget: Option<u64>,
    /// Budget as a fraction of the baseline peak, in (0, 1].
    #[arg(long)]
    budget_fraction: Option<f64>,
    /// JSON config file with cost-model parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Search window (max region length); overrides the config.
    #[arg(long)]
    window: Option<usize>,
    /// Beam width; overrides the config.
    #[arg(long)]
    beam: Option<usize>,
    /// Where to write the plan document.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Emit the candidate list (default behavior).
    #[arg(long, default_value_t = true)]
    list_candidates: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Plan document path.
    #[arg(long)]
    plan: PathBuf,
    /// Seed for random inputs and weights.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct CorpusArgs {
    /// Family: mlp | attention | transformer2 | alphafold_like_2d.
    name: String,
    /// Sequence length (or pairwise edge length for the 2-D family).
    #[arg(long, default_value_t = 256)]
    seq: u64,
    #[arg(long, default_value_t = 64)]
    dim: u64,
    #[arg(long, default_value_t = 4)]
    heads: u64,
    #[arg(long, default_value_t = 256)]
    hidden: u64,
    #[arg(long, default_value_t = 8)]
    channels: u64,
    /// Element type: float32 | float64.
    #[arg(long, default_value = "float64")]
    dtype: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MaxlenArgs {
    /// Corpus family to sweep.
    #[arg(long)]
    family: String,
    /// Budget in bytes.
    #[arg(long)]
    budget: u64,
    /// Largest length to consider.
    #[arg(long, default_value_t = 65536)]
    cap: u64,
    #[arg(long, default_value_t = 64)]
    dim: u64,
    #[arg(long, default_value_t = 4)]
    heads: u64,
    #[arg(long, default_value_t = 256)]
    hidden: u64,
    #[arg(long, default_value_t = 8)]
    channels: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Search(args) => cmd_search(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Corpus(args) => cmd_corpus(args),
        Command::Maxlen(args) => cmd_maxlen(args),
    }
}

fn load_validated(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let g = infer_shapes(load_graph(&text)?)?;
    validate(&g)?;
    Ok(g)
}

fn load_params(config: Option<&Path>, window: Option<usize>, beam: Option<usize>) -> Result<CostParams> {
    let mut params = match config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| "invalid config file")?
        }
        None => CostParams::default(),
    };
    if let Some(w) = window {
        params.window = w;
    }
    if let Some(b) = beam {
        params.beam_width = b;
    }
    params.validate().map_err(|m| anyhow!(m))?;
    Ok(params)
}

// ── plan ─────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct PlanReport {
    schema_version: u32,
    baseline_peak_bytes: u64,
    weight_bytes: u64,
    budget_bytes: u64,
    predicted_peak_bytes: u64,
    feasible: bool,
    passes: usize,
    filter_passing_rate: f64,
    total_cost: f64,
    steps: Vec<PlanStepReport>,
}

#[derive(Serialize)]
struct PlanStepReport {
    region: (usize, usize),
    chunk_size: u64,
    outputs: Vec<(String, usize)>,
    chunkable_inputs: Vec<(String, usize)>,
    hoisted_nodes: usize,
    l_total: f64,
    per_iteration_flops: u64,
}

fn cmd_plan(args: PlanArgs) -> Result<ExitCode> {
    let g = load_validated(&args.graph)?;
    let params = load_params(args.config.as_deref(), args.window, args.beam)?;
    let baseline = profile(&g).peak_bytes;
    let budget = match (args.budget, args.budget_fraction) {
        (Some(b), None) => b,
        (None, Some(f)) => {
            if !(f > 0.0 && f <= 1.0) {
                bail!("budget fraction must lie in (0, 1]");
            }
            (baseline as f64 * f).floor() as u64
        }
        _ => bail!("exactly one of --budget or --budget-fraction is required"),
    };

    let (outcome, code) = match select(&g, budget, &params) {
        Ok(outcome) => (outcome, ExitCode::SUCCESS),
        Err(SelectError::BudgetUnachievable { best_effort, .. }) => {
            (*best_effort, ExitCode::from(EXIT_UNACHIEVABLE))
        }
        Err(SelectError::BadParams(m)) => bail!(m),
    };

    let doc = plan_to_doc(
        &g,
        &outcome.plan,
        Some(budget),
        outcome.baseline_peak_bytes,
        outcome.predicted.peak_bytes,
        outcome.feasible,
    );
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&doc)?)
            .with_context(|| format!("cannot write {}", out.display()))?;
    }

    let report = plan_report(&g, &outcome, budget);
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => print_plan_report(&report),
    }
    Ok(code)
}

fn plan_report(g: &Graph, outcome: &SelectOutcome, budget: u64) -> PlanReport {
    PlanReport {
        schema_version: 1,
        baseline_peak_bytes: outcome.baseline_peak_bytes,
        weight_bytes: weight_bytes(g),
        budget_bytes: budget,
        predicted_peak_bytes: outcome.predicted.peak_bytes,
        feasible: outcome.feasible,
        passes: outcome.passes,
        filter_passing_rate: outcome.search_stats.passing_rate(),
        total_cost: outcome.plan.total_cost,
        steps: outcome
            .plan
            .steps
            .iter()
            .map(|s| PlanStepReport {
                region: (s.region.start, s.region.end),
                chunk_size: s.chunk_size,
                outputs: s
                    .outputs
                    .iter()
                    .map(|&(t, d)| (g.tensor(t).name.clone(), d))
                    .collect(),
                chunkable_inputs: s
                    .chunkable_inputs
                    .iter()
                    .map(|&(t, d)| (g.tensor(t).name.clone(), d))
                    .collect(),
                hoisted_nodes: s.hoisted.len(),
                l_total: s.cost.map(|c| c.l_total).unwrap_or(0.0),
                per_iteration_flops: s.cost.map(|c| c.per_iteration_flops).unwrap_or(0),
            })
            .collect(),
    }
}

fn print_plan_report(r: &PlanReport) {
    println!("baseline peak:   {} B (weights: {} B)", r.baseline_peak_bytes, r.weight_bytes);
    println!("budget:          {} B", r.budget_bytes);
    println!(
        "predicted peak:  {} B ({})",
        r.predicted_peak_bytes,
        if r.feasible { "feasible" } else { "NOT feasible; best effort" }
    );
    println!("passes:          {}", r.passes);
    println!("filter rate:     {:.3}", r.filter_passing_rate);
    println!("total cost:      {:.6}", r.total_cost);
    for (i, s) in r.steps.iter().enumerate() {
        println!(
            "  step {}: nodes [{}, {}], n={}, outputs {:?}, sliced inputs {:?}, hoisted {}, cost {:.6}, iter FLOPs {}",
            i + 1,
            s.region.0,
            s.region.1,
            s.chunk_size,
            s.outputs,
            s.chunkable_inputs,
            s.hoisted_nodes,
            s.l_total,
            s.per_iteration_flops,
        );
    }
}

// ── estimate ─────────────────────────────────────────────────────────

#[derive(Serialize)]
struct EstimateReport {
    schema_version: u32,
    per_step_bytes: Vec<u64>,
    peak_bytes: u64,
    peak_step: usize,
    peak_node: Option<String>,
    input_bytes_at_peak: u64,
    output_bytes_at_peak: u64,
    intermediate_bytes_at_peak: u64,
    weight_bytes: u64,
}

fn cmd_estimate(args: EstimateArgs) -> Result<ExitCode> {
    let g = load_validated(&args.graph)?;
    let p = profile(&g);
    let report = EstimateReport {
        schema_version: 1,
        per_step_bytes: p.per_step_bytes.clone(),
        peak_bytes: p.peak_bytes,
        peak_step: p.peak_step,
        peak_node: p.peak_node.map(|n| g.node(n).name.clone()),
        input_bytes_at_peak: p.breakdown.input_bytes,
        output_bytes_at_peak: p.breakdown.output_bytes,
        intermediate_bytes_at_peak: p.breakdown.intermediate_bytes,
        weight_bytes: weight_bytes(&g),
    };
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!("peak: {} B at step {} (node {})",
                report.peak_bytes,
                report.peak_step,
                report.peak_node.as_deref().unwrap_or("-"));
            println!(
                "at peak: inputs {} B, outputs {} B, intermediates {} B; weights (separate): {} B",
                report.input_bytes_at_peak,
                report.output_bytes_at_peak,
                report.intermediate_bytes_at_peak,
                report.weight_bytes
            );
            println!("per-step bytes: {:?}", report.per_step_bytes);
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ── search ───────────────────────────────────────────────────────────

#[derive(Serialize)]
struct SearchReport {
    schema_version: u32,
    peak_node: String,
    peak_bytes: u64,
    filter_passing_rate: f64,
    candidates: Vec<CandidateReport>,
}

#[derive(Serialize)]
struct CandidateReport {
    region: (usize, usize),
    outputs: Vec<(String, usize)>,
    chunkable_inputs: Vec<(String, usize)>,
    tensor_dims: Vec<(String, usize)>,
    flows: Vec<Vec<(String, usize)>>,
    max_chunk_size: u64,
    best_case_savings_bytes: u64,
}

fn cmd_search(args: SearchArgs) -> Result<ExitCode> {
    let g = load_validated(&args.graph)?;
    let params = load_params(args.config.as_deref(), args.window, None)?;
    let prof = profile(&g);
    let Some(peak_node) = prof.peak_node else {
        bail!("graph has no peak node (no operator steps)");
    };
    let opts = SearchOptions {
        window: params.window,
        peak_to_beat: Some(prof.peak_bytes),
        enable_hoisting: params.graph_optimization,
    };
    let (cands, stats) = search(&g, peak_node, &ChunkPlan::empty(), &opts);

    let name = |t| g.tensor(t).name.clone();
    let report = SearchReport {
        schema_version: 1,
        peak_node: g.node(peak_node).name.clone(),
        peak_bytes: prof.peak_bytes,
        filter_passing_rate: stats.passing_rate(),
        candidates: cands
            .iter()
            .map(|c| {
                let best = {
                    let mut plan = ChunkPlan::empty();
                    plan.steps.push(c.with_chunk_size(c.max_chunk_size));
                    estimate_with_plan(&g, &plan)
                        .map(|p| p.peak_bytes)
                        .unwrap_or(prof.peak_bytes)
                };
                CandidateReport {
                    region: (c.region.start, c.region.end),
                    outputs: c.outputs.iter().map(|&(t, d)| (name(t), d)).collect(),
                    chunkable_inputs: c
                        .chunkable_inputs
                        .iter()
                        .map(|&(t, d)| (name(t), d))
                        .collect(),
                    tensor_dims: c.dims.iter().map(|(&t, &d)| (name(t), d)).collect(),
                    flows: c
                        .flows
                        .iter()
                        .map(|f| f.entries.iter().map(|&(t, d)| (name(t), d)).collect())
                        .collect(),
                    max_chunk_size: c.max_chunk_size,
                    best_case_savings_bytes: prof.peak_bytes.saturating_sub(best),
                }
            })
            .collect(),
    };

    if !args.list_candidates {
        println!("{} candidates", report.candidates.len());
        return Ok(ExitCode::SUCCESS);
    }
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!(
                "peak {} B at node {}; filter rate {:.3}; {} candidates",
                report.peak_bytes,
                report.peak_node,
                report.filter_passing_rate,
                report.candidates.len()
            );
            for c in &report.candidates {
                println!(
                    "  [{}, {}] outputs {:?} sliced-inputs {:?} max n {} saves up to {} B",
                    c.region.0,
                    c.region.1,
                    c.outputs,
                    c.chunkable_inputs,
                    c.max_chunk_size,
                    c.best_case_savings_bytes
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ── verify ───────────────────────────────────────────────────────────

#[derive(Serialize)]
struct VerifyReport {
    schema_version: u32,
    seed: u64,
    max_rel_deviation: f64,
    outputs_bit_identical: bool,
    pass: bool,
    baseline_measured_peak: u64,
    baseline_predicted_peak: u64,
    chunked_measured_peak: u64,
    chunked_predicted_peak: u64,
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let g = load_validated(&args.graph)?;
    let text = fs::read_to_string(&args.plan)
        .with_context(|| format!("cannot read {}", args.plan.display()))?;
    let doc: PlanDoc = serde_json::from_str(&text).context("invalid plan document")?;
    let plan = plan_from_doc(&g, &doc)?;

    let (inputs, weights) = random_bindings(&g, args.seed);
    let plain = run(&g, &inputs, &weights)?;
    let chunked = run_chunked(&g, &plan, &inputs, &weights)?;

    let mut max_dev: f64 = 0.0;
    let mut bit_identical = true;
    for (t, v) in &plain.outputs {
        let c = &chunked.outputs[t];
        bit_identical &= c.bits_equal(v);
        max_dev = max_dev.max(c.max_rel_deviation(v));
    }
    // Exactness is assertable for float64; float32 graphs get a tolerance.
    let f64_graph = g.graph_outputs.iter().all(|&t| g.tensor(t).dtype == DType::Float64);
    let pass = if f64_graph { bit_identical } else { max_dev <= 1e-6 };

    let report = VerifyReport {
        schema_version: 1,
        seed: args.seed,
        max_rel_deviation: max_dev,
        outputs_bit_identical: bit_identical,
        pass,
        baseline_measured_peak: plain.measured_peak_bytes,
        baseline_predicted_peak: profile(&g).peak_bytes,
        chunked_measured_peak: chunked.measured_peak_bytes,
        chunked_predicted_peak: estimate_with_plan(&g, &plan)?.peak_bytes,
    };
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
            println!(
                "max rel deviation {:.3e} (bit identical: {})",
                report.max_rel_deviation, report.outputs_bit_identical
            );
            println!(
                "peak bytes      measured   predicted\n  baseline   {:>10} {:>10}\n  chunked    {:>10} {:>10}",
                report.baseline_measured_peak,
                report.baseline_predicted_peak,
                report.chunked_measured_peak,
                report.chunked_predicted_peak
            );
        }
    }
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_MISMATCH) })
}

// ── corpus ───────────────────────────────────────────────────────────

fn cmd_corpus(args: CorpusArgs) -> Result<ExitCode> {
    let family = CorpusFamily::parse(&args.name)
        .ok_or_else(|| anyhow!("unknown corpus name `{}`", args.name))?;
    let dtype = match args.dtype.as_str() {
        "float32" => DType::Float32,
        "float64" => DType::Float64,
        other => bail!("unknown dtype `{other}`"),
    };
    let params = CorpusParams {
        seq: args.seq,
        dim: args.dim,
        heads: args.heads,
        hidden: args.hidden,
        channels: args.channels,
        dtype,
    };
    let doc = corpus_document(family, &params)?;
    match &args.out {
        Some(path) => fs::write(path, doc)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => println!("{doc}"),
    }
    Ok(ExitCode::SUCCESS)
}

// ── maxlen ───────────────────────────────────────────────────────────

#[derive(Serialize)]
struct MaxlenReportDoc {
    schema_version: u32,
    family: String,
    budget_bytes: u64,
    length_cap: u64,
    unchunked_max_len: u64,
    chunked_max_len: u64,
    ratio: f64,
}

fn cmd_maxlen(args: MaxlenArgs) -> Result<ExitCode> {
    let family = CorpusFamily::parse(&args.family)
        .ok_or_else(|| anyhow!("unknown corpus name `{}`", args.family))?;
    let params = load_params(args.config.as_deref(), None, None)?;
    let base = CorpusParams {
        seq: 0,
        dim: args.dim,
        heads: args.heads,
        hidden: args.hidden,
        channels: args.channels,
        dtype: DType::Float64,
    };
    let report = max_feasible_lengths(family, &base, args.budget, args.cap, &params)?;
    let doc = MaxlenReportDoc {
        schema_version: 1,
        family: family.name().to_string(),
        budget_bytes: report.budget_bytes,
        length_cap: report.length_cap,
        unchunked_max_len: report.unchunked_max_len,
        chunked_max_len: report.chunked_max_len,
        ratio: report.ratio,
    };
    match args.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&doc)?),
        Format::Text => println!(
            "{}: budget {} B, max length unchunked {} / chunked {} (ratio {:.2}, cap {})",
            doc.family, doc.budget_bytes, doc.unchunked_max_len, doc.chunked_max_len, doc.ratio, doc.length_cap
        ),
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_families_parse() {
        for f in CorpusFamily::ALL {
            assert_eq!(CorpusFamily::parse(f.name()), Some(f));
        }
        assert!(CorpusFamily::parse("nope").is_none());
    }
}
