//! Minimal dense reverse-mode automatic differentiation plus Adam.
//!
//! Define-by-run: every forward operation appends one node to a [`GradContext`]
//! tape, so the tape is rebuilt each pass and naturally follows varying batch
//! shapes. [`DiffArray`] is a cheap `Copy` handle (node id + shape) into its
//! context; values live on the tape. [`GradContext::backward`] walks the tape
//! once in reverse topological order (ids are already topologically sorted by
//! construction) and returns a gradient per leaf.
//!
//! The primitive set is deliberately closed: matmul, add (same-shape or
//! row-broadcast), elementwise mul, scalar multiply (by a constant or by a 1×1
//! tape value), relu, exp, log, sum_all, mean_all, row_l2_normalize,
//! concat_rows, segment_sum, gather_rows, transpose. That is exactly enough to
//! express GIN/GCN message passing, MLP heads, the contrastive loss, and the
//! reconstruction loss.

use std::cell::{Ref, RefCell};

use thiserror::Error;

use crate::matrix::Matrix;

/// Index of a node on a [`GradContext`] tape.
pub type NodeId = usize;

/// Errors from tape construction and backward passes.
#[derive(Debug, Error)]
pub enum DiffError {
    /// Operand shapes incompatible for the named primitive.
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    /// `backward` was asked to differentiate a non-scalar output.
    #[error("backward requires a 1x1 output, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    /// A handle from a different (or newer) context was used.
    #[error("node id {id} is not on this tape (len {len})")]
    ForeignNode { id: NodeId, len: usize },
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

/// Handle to one tape node: identity plus shape. Values are read back through
/// the owning [`GradContext`].
#[derive(Clone, Copy, Debug)]
pub struct DiffArray {
    id: NodeId,
    rows: usize,
    cols: usize,
}

impl DiffArray {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

enum Op {
    /// Trainable input: reported by [`Gradients`].
    Leaf,
    /// Non-trainable input: participates in forward math, gradient discarded.
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `(n×c) + (1×c)`, the bias-add pattern.
    AddRowBroadcast(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Multiply every entry by a 1×1 tape value (gradient flows to both).
    ScaleDyn(NodeId, NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    RowL2Normalize(NodeId),
    ConcatRows(Vec<NodeId>),
    SegmentSum(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    Transpose(NodeId),
}

struct Node {
    op: Op,
    value: Matrix,
}

/// Gradient of row-normalization `y = x/‖x‖`: `dx = dy/r − x·(x·dy)/r³`.
/// Rows with norm under the guard produced zero output and get zero gradient.
const NORM_GUARD: f64 = 1e-12;

/// A recording of one forward computation; owns all intermediate values.
#[derive(Default)]
pub struct GradContext {
    nodes: RefCell<Vec<Node>>,
}

impl GradContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Matrix) -> DiffArray {
        let (rows, cols) = value.shape();
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        DiffArray { id: nodes.len() - 1, rows, cols }
    }

    /// Record a trainable input. Its gradient is available after `backward`.
    pub fn leaf(&self, value: Matrix) -> DiffArray {
        self.push(Op::Leaf, value)
    }

    /// Record a fixed input (data, masks, precomputed coefficients).
    pub fn constant(&self, value: Matrix) -> DiffArray {
        self.push(Op::Constant, value)
    }

    /// Read a node's forward value.
    pub fn value(&self, a: DiffArray) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[a.id].value)
    }

    /// Forward value of a 1×1 node as a plain scalar.
    pub fn scalar(&self, a: DiffArray) -> f64 {
        let v = self.value(a);
        assert_eq!(v.shape(), (1, 1), "scalar() on a {}x{} node", v.rows(), v.cols());
        v.get(0, 0)
    }

    // --- primitives -------------------------------------------------------

    pub fn matmul(&self, a: DiffArray, b: DiffArray) -> Result<DiffArray, DiffError> {
        if a.cols != b.rows {
            return Err(shape_err(
                "matmul",
                format!("{}x{} · {}x{}", a.rows, a.cols, b.rows, b.cols),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)
        };
        Ok(self.push(Op::MatMul(a.id, b.id), value))
    }

    /// Elementwise addition; a `(1×c)` right operand row-broadcasts over an
    /// `(n×c)` left operand.
    pub fn add(&self, a: DiffArray, b: DiffArray) -> Result<DiffArray, DiffError> {
        if a.shape() == b.shape() {
            let value = {
                let nodes = self.nodes.borrow();
                nodes[a.id].value.add(&nodes[b.id].value)
            };
            Ok(self.push(Op::Add(a.id, b.id), value))
        } else if b.rows == 1 && b.cols == a.cols {
            let value = {
                let nodes = self.nodes.borrow();
                let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
                let mut out = av.clone();
                for r in 0..a.rows {
                    for (o, &x) in out.row_mut(r).iter_mut().zip(bv.row(0)) {
                        *o += x;
                    }
                }
                out
            };
            Ok(self.push(Op::AddRowBroadcast(a.id, b.id), value))
        } else {
            Err(shape_err("add", format!("{}x{} + {}x{}", a.rows, a.cols, b.rows, b.cols)))
        }
    }

    pub fn mul(&self, a: DiffArray, b: DiffArray) -> Result<DiffArray, DiffError> {
        if a.shape() != b.shape() {
            return Err(shape_err("mul", format!("{}x{} ∘ {}x{}", a.rows, a.cols, b.rows, b.cols)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.hadamard(&nodes[b.id].value)
        };
        Ok(self.push(Op::Mul(a.id, b.id), value))
    }

    /// Multiply by a compile-time-known scalar.
    pub fn scale(&self, a: DiffArray, c: f64) -> DiffArray {
        let value = self.nodes.borrow()[a.id].value.scale(c);
        self.push(Op::Scale(a.id, c), value)
    }

    /// Multiply by a 1×1 tape value; used where the scalar itself is trained
    /// (e.g. a learnable layer coefficient).
    pub fn scale_dyn(&self, a: DiffArray, s: DiffArray) -> Result<DiffArray, DiffError> {
        if s.shape() != (1, 1) {
            return Err(shape_err("scale_dyn", format!("scalar operand is {}x{}", s.rows, s.cols)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.scale(nodes[s.id].value.get(0, 0))
        };
        Ok(self.push(Op::ScaleDyn(a.id, s.id), value))
    }

    pub fn relu(&self, a: DiffArray) -> DiffArray {
        let value = self.nodes.borrow()[a.id].value.map(|v| v.max(0.0));
        self.push(Op::Relu(a.id), value)
    }

    pub fn exp(&self, a: DiffArray) -> DiffArray {
        let value = self.nodes.borrow()[a.id].value.map(f64::exp);
        self.push(Op::Exp(a.id), value)
    }

    pub fn log(&self, a: DiffArray) -> DiffArray {
        let value = self.nodes.borrow()[a.id].value.map(f64::ln);
        self.push(Op::Log(a.id), value)
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum_all(&self, a: DiffArray) -> DiffArray {
        let value = Matrix::from_vec(1, 1, vec![self.nodes.borrow()[a.id].value.sum()]);
        self.push(Op::SumAll(a.id), value)
    }

    /// Mean of all entries as a 1×1 node.
    pub fn mean_all(&self, a: DiffArray) -> DiffArray {
        let n = (a.rows * a.cols) as f64;
        let value = Matrix::from_vec(1, 1, vec![self.nodes.borrow()[a.id].value.sum() / n]);
        self.push(Op::MeanAll(a.id), value)
    }

    /// Normalize each row to unit L2 norm; rows with norm < 1e-12 map to zero.
    pub fn row_l2_normalize(&self, a: DiffArray) -> DiffArray {
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.id].value;
            let mut out = v.clone();
            for r in 0..a.rows {
                let norm = crate::matrix::l2_norm(v.row(r));
                let row = out.row_mut(r);
                if norm < NORM_GUARD {
                    row.fill(0.0);
                } else {
                    for x in row {
                        *x /= norm;
                    }
                }
            }
            out
        };
        self.push(Op::RowL2Normalize(a.id), value)
    }

    /// Stack matrices vertically; all must share a column count.
    pub fn concat_rows(&self, parts: &[DiffArray]) -> Result<DiffArray, DiffError> {
        let first = *parts.first().ok_or_else(|| shape_err("concat_rows", "empty input".into()))?;
        if let Some(bad) = parts.iter().find(|p| p.cols != first.cols) {
            return Err(shape_err(
                "concat_rows",
                format!("column counts {} vs {}", first.cols, bad.cols),
            ));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = parts.iter().map(|p| p.rows).sum();
            let mut data = Vec::with_capacity(rows * first.cols);
            for p in parts {
                data.extend_from_slice(nodes[p.id].value.data());
            }
            Matrix::from_vec(rows, first.cols, data)
        };
        Ok(self.push(Op::ConcatRows(parts.iter().map(|p| p.id).collect()), value))
    }

    /// Sum rows into `num_segments` buckets: row `j` of the input is added to
    /// output row `segments[j]`. Segment ids must be sorted non-decreasing.
    pub fn segment_sum(
        &self,
        a: DiffArray,
        segments: &[usize],
        num_segments: usize,
    ) -> Result<DiffArray, DiffError> {
        if segments.len() != a.rows {
            return Err(shape_err(
                "segment_sum",
                format!("{} segment ids for {} rows", segments.len(), a.rows),
            ));
        }
        if segments.windows(2).any(|w| w[0] > w[1]) {
            return Err(shape_err("segment_sum", "segment ids not sorted non-decreasing".into()));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
            return Err(shape_err("segment_sum", format!("segment id {bad} ≥ {num_segments}")));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.id].value;
            let mut out = Matrix::zeros(num_segments, a.cols);
            for (j, &s) in segments.iter().enumerate() {
                for (o, &x) in out.row_mut(s).iter_mut().zip(v.row(j)) {
                    *o += x;
                }
            }
            out
        };
        Ok(self.push(Op::SegmentSum(a.id, segments.to_vec()), value))
    }

    /// Build a new matrix whose row `j` is input row `indices[j]` (rows may
    /// repeat; backward scatter-adds).
    pub fn gather_rows(&self, a: DiffArray, indices: &[usize]) -> Result<DiffArray, DiffError> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= a.rows) {
            return Err(shape_err("gather_rows", format!("row index {bad} ≥ {}", a.rows)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let v = &nodes[a.id].value;
            let mut out = Matrix::zeros(indices.len(), a.cols);
            for (j, &i) in indices.iter().enumerate() {
                out.row_mut(j).copy_from_slice(v.row(i));
            }
            out
        };
        Ok(self.push(Op::GatherRows(a.id, indices.to_vec()), value))
    }

    pub fn transpose(&self, a: DiffArray) -> DiffArray {
        let value = self.nodes.borrow()[a.id].value.transpose();
        self.push(Op::Transpose(a.id), value)
    }

    // --- backward ----------------------------------------------------------

    /// Reverse pass from a scalar output. Returns a gradient for every leaf;
    /// leaves the output does not depend on get zero gradients.
    pub fn backward(&self, out: DiffArray) -> Result<Gradients, DiffError> {
        if out.shape() != (1, 1) {
            return Err(DiffError::NotScalar { rows: out.rows, cols: out.cols });
        }
        let nodes = self.nodes.borrow();
        if out.id >= nodes.len() {
            return Err(DiffError::ForeignNode { id: out.id, len: nodes.len() });
        }

        let mut grads: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        grads[out.id] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        // Ids are appended parents-first, so descending id order is a reverse
        // topological order of the tape.
        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g); // keep for reporting
                    continue;
                }
                Op::Constant => continue,
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    accumulate(&mut grads, *a, &g.matmul(&bv.transpose()));
                    accumulate(&mut grads, *b, &av.transpose().matmul(&g));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddRowBroadcast(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g.column_sums());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    accumulate(&mut grads, *a, &g.hadamard(bv));
                    accumulate(&mut grads, *b, &g.hadamard(av));
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, &g.scale(*c));
                }
                Op::ScaleDyn(a, s) => {
                    let (av, sv) = (&nodes[*a].value, &nodes[*s].value);
                    accumulate(&mut grads, *a, &g.scale(sv.get(0, 0)));
                    let ds = g.hadamard(av).sum();
                    accumulate(&mut grads, *s, &Matrix::from_vec(1, 1, vec![ds]));
                }
                Op::Relu(a) => {
                    let av = &nodes[*a].value;
                    accumulate(
                        &mut grads,
                        *a,
                        &g.zip_map(av, |gv, x| if x > 0.0 { gv } else { 0.0 }),
                    );
                }
                Op::Exp(a) => {
                    // d exp(x) = exp(x) dx; reuse this node's own forward value.
                    accumulate(&mut grads, *a, &g.hadamard(&node.value));
                }
                Op::Log(a) => {
                    let av = &nodes[*a].value;
                    accumulate(&mut grads, *a, &g.zip_map(av, |gv, x| gv / x));
                }
                Op::SumAll(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    accumulate(&mut grads, *a, &Matrix::filled(r, c, g.get(0, 0)));
                }
                Op::MeanAll(a) => {
                    let (r, c) = nodes[*a].value.shape();
                    let spread = g.get(0, 0) / (r * c) as f64;
                    accumulate(&mut grads, *a, &Matrix::filled(r, c, spread));
                }
                Op::RowL2Normalize(a) => {
                    let av = &nodes[*a].value;
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for r in 0..av.rows() {
                        let x = av.row(r);
                        let norm = crate::matrix::l2_norm(x);
                        if norm < NORM_GUARD {
                            continue; // forward emitted zeros; treat as locally constant
                        }
                        let gy = g.row(r);
                        let xg = crate::matrix::dot(x, gy);
                        let (n1, n3) = (norm, norm * norm * norm);
                        for ((d, &xi), &gi) in da.row_mut(r).iter_mut().zip(x).zip(gy) {
                            *d = gi / n1 - xi * xg / n3;
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = nodes[p].value.rows();
                        let cols = nodes[p].value.cols();
                        let mut dp = Matrix::zeros(rows, cols);
                        for r in 0..rows {
                            dp.row_mut(r).copy_from_slice(g.row(offset + r));
                        }
                        accumulate(&mut grads, p, &dp);
                        offset += rows;
                    }
                }
                Op::SegmentSum(a, segments) => {
                    let av = &nodes[*a].value;
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for (j, &s) in segments.iter().enumerate() {
                        da.row_mut(j).copy_from_slice(g.row(s));
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::GatherRows(a, indices) => {
                    let av = &nodes[*a].value;
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for (j, &i) in indices.iter().enumerate() {
                        for (d, &gv) in da.row_mut(i).iter_mut().zip(g.row(j)) {
                            *d += gv;
                        }
                    }
                    accumulate(&mut grads, *a, &da);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, &g.transpose());
                }
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        drop(nodes);
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, delta: &Matrix) {
    match &mut grads[id] {
        Some(g) => g.add_assign_scaled(delta, 1.0),
        slot @ None => *slot = Some(delta.clone()),
    }
}

/// Result of a backward pass: a gradient per tape node, dense for leaves.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the output w.r.t. node `a`. Nodes off every path to the
    /// output yield an all-zero matrix of the node's shape.
    pub fn get(&self, a: DiffArray) -> Matrix {
        match &self.grads[a.id()] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[a.id()];
                Matrix::zeros(r, c)
            }
        }
    }

    /// Borrowing variant of [`Gradients::get`]; `None` means untouched (zero).
    pub fn get_ref(&self, a: DiffArray) -> Option<&Matrix> {
        self.grads[a.id()].as_ref()
    }
}

// --- Adam -------------------------------------------------------------------

/// Adam optimizer state over an ordered parameter list.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    /// Fresh state (zero moments, t = 0) for parameters of the given shapes.
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One Adam update: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
    /// `θ ← θ − lr·m̂/(√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<(), DiffError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape_err(
                "adam_step",
                format!(
                    "{} params / {} grads for {} slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((p, g), slot) in params.iter().zip(grads).zip(0..) {
            if p.shape() != self.m[slot].shape() || g.shape() != self.m[slot].shape() {
                return Err(shape_err(
                    "adam_step",
                    format!(
                        "slot {slot}: param {:?}, grad {:?}, state {:?}",
                        p.shape(),
                        g.shape(),
                        self.m[slot].shape()
                    ),
                ));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(0..) {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..g.data().len() {
                let gi = g.data()[i];
                m.data_mut()[i] = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                v.data_mut()[i] = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data()[i] / bc1;
                let v_hat = v.data()[i] / bc2;
                p.data_mut()[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn relu_forward_and_backward() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![-1.0, 2.0]]));
        let y = ctx.relu(x);
        assert_eq!(*ctx.value(y), Matrix::from_rows(&[vec![0.0, 2.0]]));
        let s = ctx.sum_all(y);
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(x), Matrix::from_rows(&[vec![0.0, 1.0]]));
    }

    #[test]
    fn segment_sum_forward() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]));
        let y = ctx.segment_sum(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(*ctx.value(y), Matrix::from_rows(&[vec![3.0], vec![3.0]]));
    }

    #[test]
    fn segment_sum_rejects_unsorted() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::zeros(2, 1));
        let err = ctx.segment_sum(x, &[1, 0], 2).unwrap_err();
        assert!(matches!(err, DiffError::Shape { op: "segment_sum", .. }));
    }

    #[test]
    fn row_l2_normalize_345() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![3.0, 4.0]]));
        let y = ctx.row_l2_normalize(x);
        let v = ctx.value(y);
        assert!(close(v.get(0, 0), 0.6, 1e-15) && close(v.get(0, 1), 0.8, 1e-15));
    }

    #[test]
    fn zero_row_normalizes_to_zero_with_zero_grad() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::zeros(1, 3));
        let y = ctx.row_l2_normalize(x);
        assert_eq!(*ctx.value(y), Matrix::zeros(1, 3));
        let s = ctx.sum_all(y);
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(x), Matrix::zeros(1, 3));
    }

    #[test]
    fn square_gradient() {
        // f = sum(x ∘ x) at x = 3 → df/dx = 2x = 6.
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_vec(1, 1, vec![3.0]));
        let y = ctx.mul(x, x).unwrap();
        let s = ctx.sum_all(y);
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(x).get(0, 0), 6.0);
    }

    #[test]
    fn matmul_sum_closed_form() {
        // f = sum(A·B) → dA = 1·Bᵀ, dB = Aᵀ·1.
        let ctx = GradContext::new();
        let a_val = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let b_val = Matrix::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]);
        let a = ctx.leaf(a_val.clone());
        let b = ctx.leaf(b_val.clone());
        let s = ctx.sum_all(ctx.matmul(a, b).unwrap());
        let grads = ctx.backward(s).unwrap();
        let ones = Matrix::filled(2, 2, 1.0);
        assert_eq!(grads.get(a), ones.matmul(&b_val.transpose()));
        assert_eq!(grads.get(b), a_val.transpose().matmul(&ones));
    }

    #[test]
    fn row_broadcast_add_backward_sums_columns() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::zeros(3, 2));
        let b = ctx.leaf(Matrix::from_rows(&[vec![1.0, 2.0]]));
        let s = ctx.sum_all(ctx.add(x, b).unwrap());
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(b), Matrix::from_rows(&[vec![3.0, 3.0]]));
    }

    #[test]
    fn gather_rows_scatter_adds() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![1.0], vec![2.0]]));
        let y = ctx.gather_rows(x, &[0, 0, 1]).unwrap();
        let s = ctx.sum_all(y);
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(x), Matrix::from_rows(&[vec![2.0], vec![1.0]]));
    }

    #[test]
    fn scale_dyn_gradients() {
        // y = s·x, f = sum(y): df/dx = s·1, df/ds = sum(x).
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![2.0, 3.0]]));
        let s = ctx.leaf(Matrix::from_vec(1, 1, vec![4.0]));
        let y = ctx.scale_dyn(x, s).unwrap();
        let f = ctx.sum_all(y);
        let grads = ctx.backward(f).unwrap();
        assert_eq!(grads.get(x), Matrix::from_rows(&[vec![4.0, 4.0]]));
        assert_eq!(grads.get(s).get(0, 0), 5.0);
    }

    #[test]
    fn concat_rows_splits_gradient() {
        let ctx = GradContext::new();
        let a = ctx.leaf(Matrix::from_rows(&[vec![1.0, 1.0]]));
        let b = ctx.leaf(Matrix::from_rows(&[vec![2.0, 2.0], vec![3.0, 3.0]]));
        let y = ctx.concat_rows(&[a, b]).unwrap();
        assert_eq!(y.shape(), (3, 2));
        let weights = ctx.constant(Matrix::from_rows(&[
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            vec![100.0, 100.0],
        ]));
        let s = ctx.sum_all(ctx.mul(y, weights).unwrap());
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(a), Matrix::from_rows(&[vec![1.0, 1.0]]));
        assert_eq!(grads.get(b), Matrix::from_rows(&[vec![10.0, 10.0], vec![100.0, 100.0]]));
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let ctx = GradContext::new();
        let used = ctx.leaf(Matrix::from_vec(1, 1, vec![2.0]));
        let unused = ctx.leaf(Matrix::zeros(3, 4));
        let s = ctx.sum_all(used);
        let grads = ctx.backward(s).unwrap();
        assert_eq!(grads.get(unused), Matrix::zeros(3, 4));
        assert!(grads.get_ref(unused).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::zeros(2, 2));
        assert!(matches!(ctx.backward(x), Err(DiffError::NotScalar { rows: 2, cols: 2 })));
    }

    #[test]
    fn shape_error_names_primitive() {
        let ctx = GradContext::new();
        let a = ctx.leaf(Matrix::zeros(2, 3));
        let b = ctx.leaf(Matrix::zeros(2, 3));
        let err = ctx.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "got: {err}");
    }

    #[test]
    fn backward_is_linear_over_loss_sums() {
        // backward(f + g) = backward(f) + backward(g), leafwise.
        let ctx = GradContext::new();
        let x = ctx.leaf(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]));
        let f = ctx.sum_all(ctx.mul(x, x).unwrap());
        let g = ctx.sum_all(ctx.relu(x));
        let total = ctx.add(f, g).unwrap();
        let g_total = ctx.backward(total).unwrap().get(x);
        let g_f = ctx.backward(f).unwrap().get(x);
        let g_g = ctx.backward(g).unwrap().get(x);
        assert_eq!(g_total, g_f.add(&g_g));
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Matrix::filled(2, 2, 1.5);
        let mut state = AdamState::new(0.1, &[(2, 2)]);
        let g = Matrix::zeros(2, 2);
        state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert_eq!(p, Matrix::filled(2, 2, 1.5));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude() {
        // t=1, g=1: m̂ = 1, v̂ = 1 → Δθ = lr/(1 + ε) ≈ lr.
        let mut p = Matrix::from_vec(1, 1, vec![0.0]);
        let mut state = AdamState::new(0.1, &[(1, 1)]);
        let g = Matrix::from_vec(1, 1, vec![1.0]);
        state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
        assert!(close(p.get(0, 0), -0.1, 1e-8), "got {}", p.get(0, 0));
    }

    #[test]
    fn adam_constant_gradient_descends_monotonically() {
        let mut p = Matrix::from_vec(1, 1, vec![1.0]);
        let mut state = AdamState::new(0.01, &[(1, 1)]);
        let g = Matrix::from_vec(1, 1, vec![2.0]);
        let mut last = p.get(0, 0);
        for _ in 0..5 {
            state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap();
            assert!(p.get(0, 0) < last);
            last = p.get(0, 0);
        }
    }

    #[test]
    fn adam_shape_mismatch_errors() {
        let mut p = Matrix::zeros(2, 2);
        let mut state = AdamState::new(0.1, &[(2, 2)]);
        let g = Matrix::zeros(1, 2);
        let err = state.step(&mut [&mut p], std::slice::from_ref(&g)).unwrap_err();
        assert!(matches!(err, DiffError::Shape { op: "adam_step", .. }));
    }
}
