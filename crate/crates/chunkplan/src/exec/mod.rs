//! Reference interpreter for the IR.
//!
//! Executes original and chunk-rewritten graphs on dense tensors with exact
//! buffer-lifetime accounting, serving both as the output-equivalence oracle
//! for chunk legality and as the measured-memory oracle for the estimator.
//!
//! Execution is single-threaded and deterministic; all reductions scan in a
//! fixed order, so chunked runs are bit-identical to plain runs whenever the
//! plan's flows are legal.

mod kernels;

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Float;
use thiserror::Error;

use crate::flow::{propagate_dim, DimPropagation, InputRequirement};
use crate::graph::{Attrs, DType, Graph, NodeId, OpKind, TensorId};
use crate::memory::{build_schedule, contiguity_cost};
use crate::plan::{segment_bounds, validate_plan, ChunkCandidate, ChunkPlan, PlanError};

/// Dense row-major element buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// A materialized tensor: shape plus buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub shape: Vec<u64>,
    pub data: TensorData,
}

impl TensorValue {
    pub fn zeros(shape: &[u64], dtype: DType) -> TensorValue {
        let n = shape.iter().product::<u64>() as usize;
        let data = match dtype {
            DType::Float32 => TensorData::F32(vec![0.0; n]),
            DType::Float64 => TensorData::F64(vec![0.0; n]),
        };
        TensorValue { shape: shape.to_vec(), data }
    }

    pub fn from_f64(shape: &[u64], values: Vec<f64>) -> TensorValue {
        assert_eq!(shape.iter().product::<u64>() as usize, values.len());
        TensorValue { shape: shape.to_vec(), data: TensorData::F64(values) }
    }

    pub fn from_f32(shape: &[u64], values: Vec<f32>) -> TensorValue {
        assert_eq!(shape.iter().product::<u64>() as usize, values.len());
        TensorValue { shape: shape.to_vec(), data: TensorData::F32(values) }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            TensorData::F32(_) => DType::Float32,
            TensorData::F64(_) => DType::Float64,
        }
    }

    pub fn elements(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    /// Buffer size in bytes.
    pub fn bytes(&self) -> u64 {
        self.elements() as u64 * self.dtype().element_size()
    }

    /// Elements widened to f64 (for comparisons and reports).
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    /// Bitwise equality of shape and raw element bits.
    pub fn bits_equal(&self, other: &TensorValue) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    /// Largest elementwise relative deviation, `|a-b| / max(|a|, |b|, 1)`.
    pub fn max_rel_deviation(&self, other: &TensorValue) -> f64 {
        let a = self.to_f64_vec();
        let b = other.to_f64_vec();
        a.iter()
            .zip(&b)
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Execution result with the measured activation-memory trace.
#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    /// Graph output tensors by id.
    pub outputs: BTreeMap<TensorId, TensorValue>,
    pub per_step_bytes: Vec<u64>,
    pub measured_peak_bytes: u64,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("missing binding for `{0}`")]
    MissingBinding(String),
    #[error("binding `{name}`: expected shape {expected:?} {dtype}, got shape {got:?} {got_dtype}")]
    BindMismatch {
        name: String,
        expected: Vec<u64>,
        dtype: DType,
        got: Vec<u64>,
        got_dtype: DType,
    },
    #[error("kernel error at `{node}`: {message}")]
    Kernel { node: String, message: String },
    #[error("plan/graph mismatch: {0}")]
    PlanMismatch(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

// ── element dispatch ─────────────────────────────────────────────────

trait Element: Float + Copy + std::fmt::Debug + 'static {
    fn wrap(v: Vec<Self>) -> TensorData;
    fn view(d: &TensorData) -> Option<&[Self]>;
}

impl Element for f32 {
    fn wrap(v: Vec<f32>) -> TensorData {
        TensorData::F32(v)
    }
    fn view(d: &TensorData) -> Option<&[f32]> {
        match d {
            TensorData::F32(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }
}

impl Element for f64 {
    fn wrap(v: Vec<f64>) -> TensorData {
        TensorData::F64(v)
    }
    fn view(d: &TensorData) -> Option<&[f64]> {
        match d {
            TensorData::F64(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }
}

/// Applies one operator to materialized inputs, inferring the output shape
/// from the actual input shapes. Works on any consistent shapes, so chunked
/// execution can apply ops to segments directly.
pub fn apply_op(
    kind: OpKind,
    attrs: &Attrs,
    inputs: &[&TensorValue],
) -> Result<TensorValue, ExecError> {
    let kerr = |m: String| ExecError::Kernel { node: kind.name().into(), message: m };
    let dtype = inputs.first().map(|v| v.dtype()).ok_or_else(|| kerr("no inputs".into()))?;
    if inputs.iter().any(|v| v.dtype() != dtype) {
        return Err(kerr("mixed dtypes".into()));
    }
    match dtype {
        DType::Float32 => apply_typed::<f32>(kind, attrs, inputs),
        DType::Float64 => apply_typed::<f64>(kind, attrs, inputs),
    }
}

fn apply_typed<T: Element>(
    kind: OpKind,
    attrs: &Attrs,
    inputs: &[&TensorValue],
) -> Result<TensorValue, ExecError> {
    let kerr = |m: String| ExecError::Kernel { node: kind.name().into(), message: m };
    let buf = |i: usize| -> &[T] { T::view(&inputs[i].data).expect("dtype checked") };
    let shape = |i: usize| -> &[u64] { &inputs[i].shape };
    let wrap = |v: Vec<T>, s: Vec<u64>| TensorValue { shape: s, data: T::wrap(v) };

    let out = match kind {
        OpKind::Input | OpKind::Weight => {
            return Err(kerr("declaration-style nodes are not executable".into()))
        }
        OpKind::Matmul => {
            let (a, b) = (shape(0), shape(1));
            if a.len() < 2 || (b.len() != 2 && b.len() != a.len()) {
                return Err(kerr(format!("bad matmul ranks {a:?} x {b:?}")));
            }
            if b[b.len() - 2] != a[a.len() - 1]
                || (b.len() == a.len() && a[..a.len() - 2] != b[..b.len() - 2])
            {
                return Err(kerr(format!("incompatible matmul shapes {a:?} x {b:?}")));
            }
            let (v, s) = kernels::matmul(buf(0), a, buf(1), b);
            wrap(v, s)
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
            let out_shape = crate::graph::broadcast_shape(shape(0), shape(1))
                .ok_or_else(|| kerr(format!("cannot broadcast {:?} with {:?}", shape(0), shape(1))))?;
            let f: fn(T, T) -> T = match kind {
                OpKind::Add => |a, b| a + b,
                OpKind::Sub => |a, b| a - b,
                OpKind::Mul => |a, b| a * b,
                _ => |a, b| a / b,
            };
            let v = kernels::binary(buf(0), shape(0), buf(1), shape(1), &out_shape, f);
            wrap(v, out_shape)
        }
        OpKind::Relu => wrap(kernels::relu(buf(0)), shape(0).to_vec()),
        OpKind::Gelu => wrap(kernels::gelu(buf(0)), shape(0).to_vec()),
        OpKind::Exp => wrap(kernels::exp(buf(0)), shape(0).to_vec()),
        OpKind::Softmax => {
            let dim = attrs.dim.ok_or_else(|| kerr("missing dim".into()))?;
            if dim >= shape(0).len() {
                return Err(kerr("dim out of range".into()));
            }
            wrap(kernels::softmax(buf(0), shape(0), dim), shape(0).to_vec())
        }
        OpKind::Layernorm => {
            let dims = attrs.norm_dims.as_ref().ok_or_else(|| kerr("missing norm_dims".into()))?;
            let rank = shape(0).len();
            if dims.is_empty() || dims.iter().any(|&d| d >= rank) {
                return Err(kerr("norm_dims out of range".into()));
            }
            let first = rank - dims.len();
            let norm_size = shape(0)[first..].iter().product::<u64>() as usize;
            let eps = T::from(attrs.layernorm_eps()).unwrap();
            wrap(kernels::layernorm(buf(0), norm_size, eps), shape(0).to_vec())
        }
        OpKind::ReduceSum | OpKind::ReduceMean | OpKind::ReduceMax => {
            let dim = attrs.dim.ok_or_else(|| kerr("missing dim".into()))?;
            if dim >= shape(0).len() {
                return Err(kerr("dim out of range".into()));
            }
            let red = match kind {
                OpKind::ReduceSum => kernels::Reduction::Sum,
                OpKind::ReduceMean => kernels::Reduction::Mean,
                _ => kernels::Reduction::Max,
            };
            let (v, s) = kernels::reduce(buf(0), shape(0), dim, red);
            wrap(v, s)
        }
        OpKind::Transpose => {
            let perm = attrs.perm.as_ref().ok_or_else(|| kerr("missing perm".into()))?;
            if !crate::graph::is_permutation(perm, shape(0).len()) {
                return Err(kerr("perm is not a bijection".into()));
            }
            let (v, s) = kernels::transpose(buf(0), shape(0), perm);
            wrap(v, s)
        }
        OpKind::Reshape => {
            let target = attrs.target_shape.as_ref().ok_or_else(|| kerr("missing shape".into()))?;
            if target.iter().product::<u64>() != shape(0).iter().product::<u64>() {
                return Err(kerr(format!(
                    "element count mismatch: {:?} -> {:?}",
                    shape(0),
                    target
                )));
            }
            wrap(buf(0).to_vec(), target.clone())
        }
        OpKind::Concat => {
            let dim = attrs.dim.ok_or_else(|| kerr("missing dim".into()))?;
            if inputs.len() < 2 || dim >= shape(0).len() {
                return Err(kerr("bad concat".into()));
            }
            let parts: Vec<(&[T], &[u64])> =
                (0..inputs.len()).map(|i| (buf(i), shape(i))).collect();
            let (v, s) = kernels::concat(&parts, dim);
            wrap(v, s)
        }
        OpKind::Slice => {
            let ranges = attrs.ranges.as_ref().ok_or_else(|| kerr("missing ranges".into()))?;
            if ranges.len() != shape(0).len()
                || ranges
                    .iter()
                    .zip(shape(0))
                    .any(|(&(s, e), &extent)| s >= e || e > extent)
            {
                return Err(kerr(format!("bad slice ranges {ranges:?} for {:?}", shape(0))));
            }
            let (v, s) = kernels::slice(buf(0), shape(0), ranges);
            wrap(v, s)
        }
    };
    Ok(out)
}

/// Copy of the sub-range `[offset, offset+len)` along `dim`.
pub fn slice_tensor(v: &TensorValue, dim: usize, offset: u64, len: u64) -> TensorValue {
    let ranges: Vec<(u64, u64)> = v
        .shape
        .iter()
        .enumerate()
        .map(|(d, &e)| if d == dim { (offset, offset + len) } else { (0, e) })
        .collect();
    match &v.data {
        TensorData::F32(data) => {
            let (out, shape) = kernels::slice(data, &v.shape, &ranges);
            TensorValue { shape, data: TensorData::F32(out) }
        }
        TensorData::F64(data) => {
            let (out, shape) = kernels::slice(data, &v.shape, &ranges);
            TensorValue { shape, data: TensorData::F64(out) }
        }
    }
}

/// Concatenates parts along `dim`.
pub fn concat_tensors(parts: &[&TensorValue], dim: usize) -> TensorValue {
    assert!(!parts.is_empty());
    match &parts[0].data {
        TensorData::F32(_) => {
            let views: Vec<(&[f32], &[u64])> = parts
                .iter()
                .map(|p| (f32::view(&p.data).unwrap(), p.shape.as_slice()))
                .collect();
            let (out, shape) = kernels::concat(&views, dim);
            TensorValue { shape, data: TensorData::F32(out) }
        }
        TensorData::F64(_) => {
            let views: Vec<(&[f64], &[u64])> = parts
                .iter()
                .map(|p| (f64::view(&p.data).unwrap(), p.shape.as_slice()))
                .collect();
            let (out, shape) = kernels::concat(&views, dim);
            TensorValue { shape, data: TensorData::F64(out) }
        }
    }
}

fn write_segment(dst: &mut TensorValue, src: &TensorValue, dim: usize, offset: u64) {
    let dst_shape = dst.shape.clone();
    match (&mut dst.data, &src.data) {
        (TensorData::F32(d), TensorData::F32(s)) => {
            kernels::write_slice(d, &dst_shape, s, &src.shape, dim, offset)
        }
        (TensorData::F64(d), TensorData::F64(s)) => {
            kernels::write_slice(d, &dst_shape, s, &src.shape, dim, offset)
        }
        _ => panic!("dtype mismatch writing segment"),
    }
}

// ── engine ───────────────────────────────────────────────────────────

/// Executes the plain graph with memory tracking.
pub fn run(
    g: &Graph,
    inputs: &BTreeMap<TensorId, TensorValue>,
    weights: &BTreeMap<TensorId, TensorValue>,
) -> Result<ExecutionTrace, ExecError> {
    Engine::new(g, &ChunkPlan::empty())?.execute(inputs, weights)
}

/// Executes the graph under a chunk plan with memory tracking.
pub fn run_chunked(
    g: &Graph,
    plan: &ChunkPlan,
    inputs: &BTreeMap<TensorId, TensorValue>,
    weights: &BTreeMap<TensorId, TensorValue>,
) -> Result<ExecutionTrace, ExecError> {
    validate_plan(g, plan)?;
    Engine::new(g, plan)?.execute(inputs, weights)
}

/// Dispatches to [`run`] or [`run_chunked`].
pub fn tracked_run(
    g: &Graph,
    plan: Option<&ChunkPlan>,
    inputs: &BTreeMap<TensorId, TensorValue>,
    weights: &BTreeMap<TensorId, TensorValue>,
) -> Result<ExecutionTrace, ExecError> {
    match plan {
        Some(p) => run_chunked(g, p, inputs, weights),
        None => run(g, inputs, weights),
    }
}

/// Forward-evaluates the whole graph keeping every tensor value.
/// No memory tracking; intended for tests and oracles.
pub fn evaluate_all(
    g: &Graph,
    inputs: &BTreeMap<TensorId, TensorValue>,
    weights: &BTreeMap<TensorId, TensorValue>,
) -> Result<BTreeMap<TensorId, TensorValue>, ExecError> {
    let mut values: BTreeMap<TensorId, TensorValue> = BTreeMap::new();
    for (&id, v) in inputs.iter().chain(weights.iter()) {
        values.insert(id, v.clone());
    }
    for node in &g.nodes {
        let ins: Vec<&TensorValue> = node
            .inputs
            .iter()
            .map(|t| {
                values
                    .get(t)
                    .ok_or_else(|| ExecError::MissingBinding(g.tensor(*t).name.clone()))
            })
            .collect::<Result<_, _>>()?;
        let out = apply_op(node.kind, &node.attrs, &ins)?;
        values.insert(node.output, out);
    }
    Ok(values)
}

/// Where one input slot of a loop node reads its value.
#[derive(Debug, Clone, Copy)]
enum SlotSource {
    /// This iteration's slice of a chunkable region input.
    InputSlice,
    /// The full buffer of a region input, hoisted value, or region output.
    Outer,
    /// A value produced inside the loop this iteration.
    LoopLocal,
}

struct Engine<'g> {
    g: &'g Graph,
    plan: &'g ChunkPlan,
    /// Remaining (node-input plus retained-output) uses per tensor.
    remaining: Vec<usize>,
    /// Schedule position of each node (step index minus one).
    sched_pos: Vec<usize>,
    values: BTreeMap<TensorId, TensorValue>,
    live_bytes: u64,
    per_step: Vec<u64>,
}

impl<'g> Engine<'g> {
    fn new(g: &'g Graph, plan: &'g ChunkPlan) -> Result<Self, ExecError> {
        let schedule = build_schedule(g, plan);
        let mut sched_pos = vec![0usize; g.nodes.len()];
        for (p, entry) in schedule.order.iter().enumerate() {
            sched_pos[entry.node.0] = p;
        }
        let mut remaining = vec![0usize; g.tensors.len()];
        for node in &g.nodes {
            for input in &node.inputs {
                remaining[input.0] += 1;
            }
        }
        for &out in &g.graph_outputs {
            remaining[out.0] += 1; // retained
        }
        Ok(Engine {
            g,
            plan,
            remaining,
            sched_pos,
            values: BTreeMap::new(),
            live_bytes: 0,
            per_step: vec![0; g.nodes.len() + 1],
        })
    }

    fn counted(&self, id: TensorId) -> bool {
        !self.g.is_weight(id)
    }

    fn insert_value(&mut self, id: TensorId, v: TensorValue) {
        if self.counted(id) {
            self.live_bytes += v.bytes();
        }
        self.values.insert(id, v);
    }

    fn release_use(&mut self, id: TensorId) {
        self.remaining[id.0] -= 1;
        if self.remaining[id.0] == 0 {
            if let Some(v) = self.values.remove(&id) {
                if self.counted(id) {
                    self.live_bytes -= v.bytes();
                }
            }
        }
    }

    fn execute(
        mut self,
        inputs: &BTreeMap<TensorId, TensorValue>,
        weights: &BTreeMap<TensorId, TensorValue>,
    ) -> Result<ExecutionTrace, ExecError> {
        // Bind leaves.
        let leaves: Vec<(TensorId, bool)> = self
            .g
            .graph_inputs
            .iter()
            .map(|&i| (i, false))
            .chain(self.g.weights.iter().map(|&w| (w, true)))
            .collect();
        for (id, is_weight) in leaves {
            let source = if is_weight { weights } else { inputs };
            let v = source
                .get(&id)
                .ok_or_else(|| ExecError::MissingBinding(self.g.tensor(id).name.clone()))?;
            let meta = self.g.tensor(id);
            if v.shape != meta.shape || v.dtype() != meta.dtype {
                return Err(ExecError::BindMismatch {
                    name: meta.name.clone(),
                    expected: meta.shape.clone(),
                    dtype: meta.dtype,
                    got: v.shape.clone(),
                    got_dtype: v.dtype(),
                });
            }
            self.insert_value(id, v.clone());
        }
        self.per_step[0] = self.live_bytes;
        // Unused leaves die at step 0.
        for id in self.g.graph_inputs.clone() {
            if self.remaining[id.0] == 0 {
                if let Some(v) = self.values.remove(&id) {
                    if self.counted(id) {
                        self.live_bytes -= v.bytes();
                    }
                }
            }
        }

        let mut region_at: BTreeMap<usize, usize> = BTreeMap::new();
        for (si, step) in self.plan.steps.iter().enumerate() {
            if step.chunk_size > 1 {
                region_at.insert(step.region.start, si);
            }
        }

        let mut i = 0;
        while i < self.g.nodes.len() {
            if let Some(&si) = region_at.get(&i) {
                let cand = self.plan.steps[si].clone();
                self.execute_region(&cand)?;
                i = cand.region.end + 1;
            } else {
                self.execute_plain(NodeId(i))?;
                i += 1;
            }
        }

        let mut outputs = BTreeMap::new();
        for &id in &self.g.graph_outputs {
            let v = self
                .values
                .get(&id)
                .ok_or_else(|| ExecError::MissingBinding(self.g.tensor(id).name.clone()))?;
            outputs.insert(id, v.clone());
        }
        let measured_peak_bytes = self.per_step.iter().copied().max().unwrap_or(0);
        Ok(ExecutionTrace { outputs, per_step_bytes: self.per_step, measured_peak_bytes })
    }

    fn node_inputs(&self, node: NodeId) -> Result<Vec<&TensorValue>, ExecError> {
        self.g
            .node(node)
            .inputs
            .iter()
            .map(|t| {
                self.values
                    .get(t)
                    .ok_or_else(|| ExecError::MissingBinding(self.g.tensor(*t).name.clone()))
            })
            .collect()
    }

    fn execute_plain(&mut self, id: NodeId) -> Result<(), ExecError> {
        let node = self.g.node(id);
        let out = apply_op(node.kind, &node.attrs, &self.node_inputs(id)?)?;
        if out.shape != self.g.tensor(node.output).shape {
            return Err(ExecError::Kernel {
                node: node.name.clone(),
                message: format!(
                    "produced shape {:?}, registered {:?}",
                    out.shape,
                    self.g.tensor(node.output).shape
                ),
            });
        }
        let output = node.output;
        let inputs = node.inputs.clone();
        self.insert_value(output, out);
        self.per_step[self.sched_pos[id.0] + 1] = self.live_bytes;
        for t in inputs {
            self.release_use(t);
        }
        // Dead on arrival (no consumers, not an output).
        if self.remaining[output.0] == 0 {
            if let Some(v) = self.values.remove(&output) {
                if self.counted(output) {
                    self.live_bytes -= v.bytes();
                }
            }
        }
        Ok(())
    }

    fn execute_region(&mut self, cand: &ChunkCandidate) -> Result<(), ExecError> {
        let g = self.g;
        let n = cand.chunk_size;
        let loop_nodes = cand.loop_nodes();
        let out_set: BTreeSet<TensorId> = cand.outputs.iter().map(|&(t, _)| t).collect();

        // Pre-allocate region outputs at full size.
        for &(t, _) in &cand.outputs {
            let meta = g.tensor(t);
            self.insert_value(t, TensorValue::zeros(&meta.shape, meta.dtype));
        }

        // Hoisted nodes run once, before the loop.
        for &h in &cand.hoisted {
            self.execute_plain(h)?;
        }

        // Segment bounds per flow tensor.
        let mut bounds: BTreeMap<TensorId, Vec<(u64, u64)>> = BTreeMap::new();
        for (&t, &d) in &cand.dims {
            let extent = g.tensor(t).shape[d];
            if n > extent {
                return Err(ExecError::PlanMismatch(format!(
                    "chunk size {n} exceeds extent {extent} of `{}`",
                    g.tensor(t).name
                )));
            }
            bounds.insert(t, segment_bounds(extent, n));
        }
        let iterations = bounds.values().map(|b| b.len()).max().unwrap_or(1);

        // Within-loop consumer counts (per iteration) of loop-produced tensors.
        let mut loop_uses: BTreeMap<TensorId, usize> = BTreeMap::new();
        for &ln in &loop_nodes {
            for t in &g.node(ln).inputs {
                if g.producer(*t).is_some_and(|p| loop_nodes.contains(&p)) {
                    *loop_uses.entry(*t).or_insert(0) += 1;
                }
            }
        }

        // Where each input slot of each loop node reads from: the sliced
        // view of a region input, the full outer buffer, or the value the
        // loop produced this iteration. A tensor sliced for the flow may
        // still be read whole by another consumer; the full buffer exists.
        let loop_set: BTreeSet<NodeId> = loop_nodes.iter().copied().collect();
        let mut slot_sources: BTreeMap<NodeId, Vec<SlotSource>> = BTreeMap::new();
        for &ln in &loop_nodes {
            let node = g.node(ln);
            let reqs = match cand.dims.get(&node.output) {
                Some(&d) => match propagate_dim(g, node, d) {
                    DimPropagation::Inputs(reqs) => Some(reqs),
                    DimPropagation::Break => {
                        return Err(ExecError::PlanMismatch(format!(
                            "flow through `{}` breaks at its chunk dim",
                            node.name
                        )))
                    }
                },
                None => None,
            };
            let sources = node
                .inputs
                .iter()
                .enumerate()
                .map(|(slot, &t)| {
                    if g.producer(t).is_some_and(|p| loop_set.contains(&p)) {
                        SlotSource::LoopLocal
                    } else {
                        let sliced = matches!(
                            reqs.as_ref().map(|r| r[slot]),
                            Some(InputRequirement::Sliced(_))
                        );
                        if sliced && cand.dims.contains_key(&t) {
                            SlotSource::InputSlice
                        } else {
                            SlotSource::Outer
                        }
                    }
                })
                .collect();
            slot_sources.insert(ln, sources);
        }

        for it in 0..iterations {
            let mut seg_slices: BTreeMap<TensorId, TensorValue> = BTreeMap::new();
            let mut seg_vals: BTreeMap<TensorId, TensorValue> = BTreeMap::new();
            let mut seg_bytes: u64 = 0;
            let mut transient_bytes: u64 = 0;
            let mut uses = loop_uses.clone();

            // Materialize input slices for this iteration. Contiguous slices
            // are free views in a real runtime and are not counted.
            for &(x, d) in &cand.chunkable_inputs {
                let b = &bounds[&x];
                if it >= b.len() {
                    continue;
                }
                let (off, len) = b[it];
                let full = self.values.get(&x).ok_or_else(|| {
                    ExecError::MissingBinding(g.tensor(x).name.clone())
                })?;
                let seg = slice_tensor(full, d, off, len);
                if contiguity_cost(g.tensor(x), d, n) > 0 {
                    transient_bytes += seg.bytes();
                }
                seg_slices.insert(x, seg);
            }

            for &ln in &loop_nodes {
                let node = g.node(ln);
                let out_t = node.output;
                let out_dim = cand.dims.get(&out_t).copied();
                if let Some(_dim) = out_dim {
                    if it >= bounds[&out_t].len() {
                        continue;
                    }
                }

                let sources = &slot_sources[&ln];
                let ins: Vec<&TensorValue> = node
                    .inputs
                    .iter()
                    .zip(sources)
                    .map(|(t, source)| {
                        match source {
                            SlotSource::InputSlice => seg_slices.get(t),
                            SlotSource::Outer => self.values.get(t),
                            SlotSource::LoopLocal => seg_vals.get(t),
                        }
                        .ok_or_else(|| ExecError::MissingBinding(g.tensor(*t).name.clone()))
                    })
                    .collect::<Result<_, _>>()?;
                let attrs = adapt_attrs(g, node, cand, out_dim, &ins);
                let out_seg = apply_op(node.kind, &attrs, &ins)?;

                // Shape check against the expected (possibly sliced) shape.
                let mut expected = g.tensor(out_t).shape.clone();
                if let Some(dim) = out_dim {
                    expected[dim] = bounds[&out_t][it].1;
                }
                if out_seg.shape != expected {
                    return Err(ExecError::Kernel {
                        node: node.name.clone(),
                        message: format!(
                            "segment shape {:?}, expected {expected:?}",
                            out_seg.shape
                        ),
                    });
                }

                if out_set.contains(&out_t) {
                    let dim = out_dim.expect("region outputs always carry a chunk dim");
                    let (off, _) = bounds[&out_t][it];
                    let full = self.values.get_mut(&out_t).expect("pre-allocated");
                    write_segment(full, &out_seg, dim, off);
                    // Interior readers (if any) see the written view; not
                    // counted again.
                    if uses.get(&out_t).copied().unwrap_or(0) > 0 {
                        seg_vals.insert(out_t, out_seg);
                    }
                } else {
                    seg_bytes += out_seg.bytes();
                    seg_vals.insert(out_t, out_seg);
                }

                let pos = self.sched_pos[ln.0] + 1;
                let now = self.live_bytes + seg_bytes + transient_bytes;
                if now > self.per_step[pos] {
                    self.per_step[pos] = now;
                }

                // Retire within-iteration uses of loop-produced tensors.
                for t in &node.inputs {
                    if let Some(u) = uses.get_mut(t) {
                        *u -= 1;
                        if *u == 0 && !out_set.contains(t) {
                            if let Some(v) = seg_vals.remove(t) {
                                seg_bytes -= v.bytes();
                            }
                        }
                    }
                }
                if uses.get(&out_t).copied() == Some(0) && !out_set.contains(&out_t) {
                    // Dead interior value (no loop consumers).
                    if let Some(v) = seg_vals.remove(&out_t) {
                        seg_bytes -= v.bytes();
                    }
                }
            }
            // Input slices (and any write-through views) drop here.
            drop(seg_slices);
        }

        // Loop nodes retire their uses of full tensors only after the loop.
        for &ln in &loop_nodes {
            for t in self.g.node(ln).inputs.clone() {
                self.release_use(t);
            }
        }
        // Region outputs with no consumers at all (rare; not graph outputs).
        for &(t, _) in &cand.outputs {
            if self.remaining[t.0] == 0 {
                if let Some(v) = self.values.remove(&t) {
                    if self.counted(t) {
                        self.live_bytes -= v.bytes();
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rewrites shape-bearing attributes for segment execution: the reshape
/// target and full-range slice bounds track the sliced extent.
fn adapt_attrs(
    g: &Graph,
    node: &crate::graph::OpNode,
    cand: &ChunkCandidate,
    out_dim: Option<usize>,
    ins: &[&TensorValue],
) -> Attrs {
    let mut attrs = node.attrs.clone();
    match node.kind {
        OpKind::Reshape => {
            if let (Some(dim), Some(target)) = (out_dim, attrs.target_shape.as_mut()) {
                target[dim] = ins[0].shape[dim];
            }
        }
        OpKind::Slice => {
            if let Some(ranges) = attrs.ranges.as_mut() {
                if let Some(&in_dim) = cand.dims.get(&node.inputs[0]) {
                    let registered = g.tensor(node.inputs[0]).shape[in_dim];
                    if ranges[in_dim] == (0, registered) {
                        ranges[in_dim] = (0, ins[0].shape[in_dim]);
                    }
                }
            }
        }
        _ => {}
    }
    attrs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, load_graph};

    fn mlp_graph() -> Graph {
        infer_shapes(
            load_graph(
                r#"{
            "schema_version": 1,
            "tensors": [
                {"id": "x", "shape": [4, 8], "dtype": "float64"},
                {"id": "w1", "shape": [8, 16], "dtype": "float64"},
                {"id": "w2", "shape": [16, 2], "dtype": "float64"},
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
    fn relu_example() {
        let v = apply_op(
            OpKind::Relu,
            &Attrs::default(),
            &[&TensorValue::from_f64(&[2], vec![-1.0, 2.0])],
        )
        .unwrap();
        assert_eq!(v.to_f64_vec(), vec![0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetry_example() {
        let v = apply_op(
            OpKind::Softmax,
            &Attrs { dim: Some(0), ..Default::default() },
            &[&TensorValue::from_f64(&[2], vec![0.0, 0.0])],
        )
        .unwrap();
        assert_eq!(v.to_f64_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn matmul_identity_example() {
        let a = TensorValue::from_f64(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let eye = TensorValue::from_f64(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let v = apply_op(OpKind::Matmul, &Attrs::default(), &[&a, &eye]).unwrap();
        assert_eq!(v.to_f64_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn run_tracks_simple_chain() {
        // in [4,4] f32 (64B) -> relu -> out: steps [64, 128].
        let g = infer_shapes(
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
        .unwrap();
        let x = g.tensor_by_name("x").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert(x, TensorValue::from_f32(&[4, 4], vec![1.0; 16]));
        let trace = run(&g, &inputs, &BTreeMap::new()).unwrap();
        assert_eq!(trace.per_step_bytes, vec![64, 128]);
        assert_eq!(trace.measured_peak_bytes, 128);
    }

    #[test]
    fn bind_shape_mismatch_errors() {
        let g = mlp_graph();
        let x = g.tensor_by_name("x").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert(x, TensorValue::from_f64(&[2, 8], vec![0.0; 16]));
        let mut weights = BTreeMap::new();
        weights.insert(
            g.tensor_by_name("w1").unwrap(),
            TensorValue::from_f64(&[8, 16], vec![0.0; 128]),
        );
        weights.insert(
            g.tensor_by_name("w2").unwrap(),
            TensorValue::from_f64(&[16, 2], vec![0.0; 32]),
        );
        assert!(matches!(
            run(&g, &inputs, &weights),
            Err(ExecError::BindMismatch { .. })
        ));
    }

    #[test]
    fn weights_are_not_counted() {
        let g = mlp_graph();
        let mut inputs = BTreeMap::new();
        inputs.insert(
            g.tensor_by_name("x").unwrap(),
            TensorValue::from_f64(&[4, 8], vec![1.0; 32]),
        );
        let mut weights = BTreeMap::new();
        weights.insert(
            g.tensor_by_name("w1").unwrap(),
            TensorValue::from_f64(&[8, 16], vec![0.5; 128]),
        );
        weights.insert(
            g.tensor_by_name("w2").unwrap(),
            TensorValue::from_f64(&[16, 2], vec![0.5; 32]),
        );
        let trace = run(&g, &inputs, &weights).unwrap();
        // step0: x 256B; step1: x + h(4x16x8=512); step2: h + a;  step3: a + y(64)
        assert_eq!(trace.per_step_bytes, vec![256, 768, 1024, 576]);
    }
}
