//! Chunk-planning compiler for tensor computation graphs.
//!
//! Given a computation graph and an activation-memory budget, this crate
//! finds legal chunk regions (contiguous node intervals whose interior can
//! be executed one segment at a time), scores them with a speed-loss cost
//! model, and commits a minimum-cost plan whose predicted peak activation
//! memory fits the budget. A reference interpreter executes both the plain
//! and the chunk-rewritten graph, serving as the equivalence and memory
//! oracle for every prediction.
//!
//! Pipeline: [`graph::load_graph`] → [`graph::infer_shapes`] →
//! [`graph::validate`] → [`memory::profile`] → [`select::select`] →
//! [`exec::run_chunked`].

pub mod corpus;
pub mod exec;
pub mod flow;
pub mod graph;
pub mod maxlen;
pub mod memory;
pub mod plan;
pub mod search;
pub mod select;

pub use graph::{Graph, GraphError};
pub use plan::{ChunkCandidate, ChunkPlan, ChunkRegion};
pub use select::{select, CostParams, SelectError, SelectOutcome};
