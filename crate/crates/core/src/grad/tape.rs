use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::shape::{broadcast_map, broadcast_shapes, broadcastable_to, numel, split_axis};
use crate::real::Real;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Denominators (and `sqrt` arguments in the adjoint) smaller than this in
/// magnitude are clamped away from zero, keeping their sign.
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("non-finite value at element {index}")]
    NonFinite { index: usize },
    #[error("{len} values do not fill shape {shape:?}")]
    LengthMismatch { len: usize, shape: Vec<usize> },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("node does not belong to this tape")]
    ForeignNode,
    #[error("loss must be scalar-shaped, got {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("index {index} out of range for extent {extent} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("clamp bounds are inverted")]
    InvertedBounds,
    #[error("custom op `{name}` failed: {message}")]
    Custom { name: String, message: String },
}

pub type GradResult<T> = Result<T, GradError>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    tape: u64,
    index: usize,
}

impl Node {
    pub fn index(self) -> usize {
        self.index
    }
}

/// A user-supplied differentiable operation with a hand-written adjoint.
pub trait CustomOp<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn output_shape(&self, input_shapes: &[&[usize]]) -> GradResult<Vec<usize>>;
    fn forward(&self, inputs: &[&[T]]) -> Vec<T>;
    /// Adjoint contribution for every input, each the length of that input.
    fn backward(&self, inputs: &[&[T]], output: &[T], grad_out: &[T]) -> Vec<Vec<T>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary<T> {
    Neg,
    Abs,
    Sqrt,
    Square,
    Sin,
    Cos,
    Tanh,
    Sigmoid,
    LogSigmoid,
    Exp,
    Ln,
    Clamp { lo: T, hi: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Binary {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Unary {
        input: usize,
        kind: Unary<T>,
    },
    Binary {
        lhs: usize,
        rhs: usize,
        kind: Binary,
        lhs_map: Option<Arc<[usize]>>,
        rhs_map: Option<Arc<[usize]>>,
    },
    Sum {
        input: usize,
    },
    Mean {
        input: usize,
    },
    SumAxis {
        input: usize,
        axis: usize,
    },
    Select {
        input: usize,
        axis: usize,
        indices: Arc<[usize]>,
    },
    ScatterAdd {
        input: usize,
        indices: Arc<[usize]>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Broadcast {
        input: usize,
        map: Arc<[usize]>,
    },
    Reshape {
        input: usize,
    },
    Custom {
        inputs: Vec<usize>,
        op: Arc<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Unary { input, .. }
            | Op::Sum { input }
            | Op::Mean { input }
            | Op::SumAxis { input, .. }
            | Op::Select { input, .. }
            | Op::ScatterAdd { input, .. }
            | Op::Broadcast { input, .. }
            | Op::Reshape { input } => vec![*input],
            Op::Binary { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Record<T: Real> {
    op: Op<T>,
    shape: Vec<usize>,
    value: Vec<T>,
    requires_grad: bool,
}

/// Reverse-mode record of array-valued operations, in construction order.
///
/// A tape is single-writer. Build one per reconstruction step; distinct tapes
/// are independent and may live on different threads.
pub struct Tape<T: Real> {
    id: u64,
    nodes: Vec<Record<T>>,
    guard_events: usize,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sigmoid<T: Real>(x: T) -> T {
    x.min(T::zero()) - (T::one() + (-x.abs()).exp()).ln()
}

fn guard<T: Real>(d: T) -> T {
    let g = T::lit(DIV_GUARD);
    if d.abs() < g {
        if d < T::zero() {
            -g
        } else {
            g
        }
    } else {
        d
    }
}

impl<T: Real> Unary<T> {
    fn apply(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Abs => x.abs(),
            Unary::Sqrt => x.max(T::zero()).sqrt(),
            Unary::Square => x * x,
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::LogSigmoid => log_sigmoid(x),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Clamp { lo, hi } => x.max(lo).min(hi),
        }
    }

    /// Local derivative given input `x` and output `y`.
    fn derivative(self, x: T, y: T) -> T {
        let one = T::one();
        let zero = T::zero();
        match self {
            Unary::Neg => -one,
            // d|x|/dx at 0 is taken as 0
            Unary::Abs => {
                if x > zero {
                    one
                } else if x < zero {
                    -one
                } else {
                    zero
                }
            }
            Unary::Sqrt => T::lit(0.5) / guard(y),
            Unary::Square => x + x,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => one - y * y,
            Unary::Sigmoid => y * (one - y),
            Unary::LogSigmoid => sigmoid(-x),
            Unary::Exp => y,
            Unary::Ln => one / guard(x),
            // boundary points count as interior
            Unary::Clamp { lo, hi } => {
                if x >= lo && x <= hi {
                    one
                } else {
                    zero
                }
            }
        }
    }
}

impl Binary {
    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
            Binary::Min => "min2",
            Binary::Max => "max2",
        }
    }

    fn apply<T: Real>(self, a: T, b: T, guard_events: &mut usize) -> T {
        match self {
            Binary::Add => a + b,
            Binary::Sub => a - b,
            Binary::Mul => a * b,
            Binary::Div => {
                let g = guard(b);
                if g != b {
                    *guard_events += 1;
                }
                a / g
            }
            Binary::Min => {
                if a <= b {
                    a
                } else {
                    b
                }
            }
            Binary::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Partial derivatives (d/da, d/db).
    fn partials<T: Real>(self, a: T, b: T) -> (T, T) {
        let one = T::one();
        let zero = T::zero();
        match self {
            Binary::Add => (one, one),
            Binary::Sub => (one, -one),
            Binary::Mul => (b, a),
            Binary::Div => {
                let g = guard(b);
                (one / g, -a / (g * g))
            }
            Binary::Min => {
                if a <= b {
                    (one, zero)
                } else {
                    (zero, one)
                }
            }
            Binary::Max => {
                if a >= b {
                    (one, zero)
                } else {
                    (zero, one)
                }
            }
        }
    }
}

fn eval_op<T: Real>(
    op: &Op<T>,
    inputs: &[&[T]],
    in_shapes: &[&[usize]],
    out_len: usize,
    guard_events: &mut usize,
) -> Vec<T> {
    match op {
        Op::Leaf => unreachable!("leaves carry their own values"),
        Op::Unary { kind, .. } => inputs[0].iter().map(|&x| kind.apply(x)).collect(),
        Op::Binary {
            kind,
            lhs_map,
            rhs_map,
            ..
        } => {
            let (a, b) = (inputs[0], inputs[1]);
            (0..out_len)
                .map(|i| {
                    let ia = lhs_map.as_ref().map_or(i, |m| m[i]);
                    let ib = rhs_map.as_ref().map_or(i, |m| m[i]);
                    kind.apply(a[ia], b[ib], guard_events)
                })
                .collect()
        }
        Op::Sum { .. } => vec![inputs[0].iter().copied().sum()],
        Op::Mean { .. } => {
            let n = inputs[0].len().max(1);
            vec![inputs[0].iter().copied().sum::<T>() / T::lit(n as f64)]
        }
        Op::SumAxis { axis, .. } => {
            let (outer, extent, inner) = split_axis(in_shapes[0], *axis);
            let x = inputs[0];
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner;
                    for r in 0..inner {
                        out[o * inner + r] = out[o * inner + r] + x[base + r];
                    }
                }
            }
            out
        }
        Op::Select { axis, indices, .. } => {
            let (outer, extent, inner) = split_axis(in_shapes[0], *axis);
            let x = inputs[0];
            let mut out = Vec::with_capacity(outer * indices.len() * inner);
            for o in 0..outer {
                for &idx in indices.iter() {
                    let base = (o * extent + idx) * inner;
                    out.extend_from_slice(&x[base..base + inner]);
                }
            }
            out
        }
        Op::ScatterAdd { indices, .. } => {
            let inner = numel(&in_shapes[0][1..]);
            let x = inputs[0];
            let mut out = vec![T::zero(); out_len];
            for (n, &idx) in indices.iter().enumerate() {
                for r in 0..inner {
                    out[idx * inner + r] = out[idx * inner + r] + x[n * inner + r];
                }
            }
            out
        }
        Op::Concat { axis, .. } => {
            let outer = numel(&in_shapes[0][..*axis]);
            let mut out = Vec::with_capacity(out_len);
            for o in 0..outer {
                for (x, s) in inputs.iter().zip(in_shapes) {
                    let chunk = numel(&s[*axis..]);
                    out.extend_from_slice(&x[o * chunk..(o + 1) * chunk]);
                }
            }
            out
        }
        Op::Broadcast { map, .. } => map.iter().map(|&i| inputs[0][i]).collect(),
        Op::Reshape { .. } => inputs[0].to_vec(),
        Op::Custom { op, .. } => op.forward(inputs),
    }
}

fn accumulate<T: Real>(adj: &mut [Option<Vec<T>>], index: usize, len: usize) -> &mut Vec<T> {
    adj[index].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            guard_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of guarded divisions performed while recording.
    pub fn guard_events(&self) -> usize {
        self.guard_events
    }

    fn check(&self, node: Node) -> GradResult<usize> {
        if node.tape == self.id && node.index < self.nodes.len() {
            Ok(node.index)
        } else {
            Err(GradError::ForeignNode)
        }
    }

    fn handle(&self, index: usize) -> Node {
        Node {
            tape: self.id,
            index,
        }
    }

    /// Value of a node. Panics if the node comes from another tape.
    pub fn value(&self, node: Node) -> &[T] {
        let i = self.check(node).expect("node used with a foreign tape");
        &self.nodes[i].value
    }

    pub fn shape(&self, node: Node) -> &[usize] {
        let i = self.check(node).expect("node used with a foreign tape");
        &self.nodes[i].shape
    }

    pub fn requires_grad(&self, node: Node) -> bool {
        self.check(node)
            .map(|i| self.nodes[i].requires_grad)
            .unwrap_or(false)
    }

    /// Single scalar value of a scalar-shaped node.
    pub fn scalar_value(&self, node: Node) -> T {
        self.value(node)[0]
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>, value: Vec<T>) -> Node {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Record {
            op,
            shape,
            value,
            requires_grad,
        });
        self.handle(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op<T>, shape: Vec<usize>) -> Node {
        let inputs = op.inputs();
        let value = {
            let vals: Vec<&[T]> = inputs.iter().map(|&i| self.nodes[i].value.as_slice()).collect();
            let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.nodes[i].shape.as_slice()).collect();
            eval_op(&op, &vals, &shapes, numel(&shape), &mut self.guard_events)
        };
        self.push(op, shape, value)
    }

    /// Records an input array. Flagged leaves receive adjoints in [`Tape::backward`].
    pub fn leaf(&mut self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> GradResult<Node> {
        if values.len() != numel(shape) {
            return Err(GradError::LengthMismatch {
                len: values.len(),
                shape: shape.to_vec(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GradError::NonFinite { index });
        }
        self.nodes.push(Record {
            op: Op::Leaf,
            shape: shape.to_vec(),
            value: values,
            requires_grad,
        });
        Ok(self.handle(self.nodes.len() - 1))
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, values: Vec<T>, shape: &[usize]) -> GradResult<Node> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&mut self, value: T) -> GradResult<Node> {
        self.leaf(vec![value], &[], false)
    }

    fn unary(&mut self, x: Node, kind: Unary<T>) -> GradResult<Node> {
        let i = self.check(x)?;
        let shape = self.nodes[i].shape.clone();
        Ok(self.record(Op::Unary { input: i, kind }, shape))
    }

    pub fn neg(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Neg)
    }
    pub fn abs(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Abs)
    }
    pub fn sqrt(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Sqrt)
    }
    pub fn square(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Square)
    }
    pub fn sin(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Sin)
    }
    pub fn cos(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Cos)
    }
    pub fn tanh(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Tanh)
    }
    pub fn sigmoid(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Sigmoid)
    }
    /// `ln(sigmoid(x))`, stable for large |x|.
    pub fn log_sigmoid(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::LogSigmoid)
    }
    pub fn exp(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Exp)
    }
    pub fn ln(&mut self, x: Node) -> GradResult<Node> {
        self.unary(x, Unary::Ln)
    }
    pub fn clamp(&mut self, x: Node, lo: T, hi: T) -> GradResult<Node> {
        if lo > hi {
            return Err(GradError::InvertedBounds);
        }
        self.unary(x, Unary::Clamp { lo, hi })
    }

    fn binary(&mut self, a: Node, b: Node, kind: Binary) -> GradResult<Node> {
        let ia = self.check(a)?;
        let ib = self.check(b)?;
        let sa = &self.nodes[ia].shape;
        let sb = &self.nodes[ib].shape;
        let shape = broadcast_shapes(sa, sb).ok_or_else(|| GradError::ShapeMismatch {
            op: kind.name(),
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let lhs_map = (sa != &shape).then(|| Arc::from(broadcast_map(sa, &shape)));
        let rhs_map = (sb != &shape).then(|| Arc::from(broadcast_map(sb, &shape)));
        Ok(self.record(
            Op::Binary {
                lhs: ia,
                rhs: ib,
                kind,
                lhs_map,
                rhs_map,
            },
            shape,
        ))
    }

    pub fn add(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Mul)
    }
    /// Guarded division: `|b| < 1e-12` is clamped with its sign kept.
    pub fn div(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Div)
    }
    pub fn min2(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Min)
    }
    pub fn max2(&mut self, a: Node, b: Node) -> GradResult<Node> {
        self.binary(a, b, Binary::Max)
    }

    /// `x * c` for a constant scalar `c`.
    pub fn scale(&mut self, x: Node, c: T) -> GradResult<Node> {
        let c = self.scalar(c)?;
        self.mul(x, c)
    }

    /// `x + c` for a constant scalar `c`.
    pub fn add_scalar(&mut self, x: Node, c: T) -> GradResult<Node> {
        let c = self.scalar(c)?;
        self.add(x, c)
    }

    pub fn sum(&mut self, x: Node) -> GradResult<Node> {
        let i = self.check(x)?;
        Ok(self.record(Op::Sum { input: i }, Vec::new()))
    }

    pub fn mean(&mut self, x: Node) -> GradResult<Node> {
        let i = self.check(x)?;
        Ok(self.record(Op::Mean { input: i }, Vec::new()))
    }

    /// Sum over one axis; `keepdim` leaves it with extent 1.
    pub fn sum_axis(&mut self, x: Node, axis: usize, keepdim: bool) -> GradResult<Node> {
        let i = self.check(x)?;
        let in_shape = &self.nodes[i].shape;
        if axis >= in_shape.len() {
            return Err(GradError::BadAxis {
                axis,
                rank: in_shape.len(),
            });
        }
        let mut shape = in_shape.clone();
        if keepdim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(self.record(Op::SumAxis { input: i, axis }, shape))
    }

    /// Gathers `indices` along `axis` (repeats allowed).
    pub fn select(&mut self, x: Node, axis: usize, indices: &[usize]) -> GradResult<Node> {
        let i = self.check(x)?;
        let in_shape = &self.nodes[i].shape;
        if axis >= in_shape.len() {
            return Err(GradError::BadAxis {
                axis,
                rank: in_shape.len(),
            });
        }
        let extent = in_shape[axis];
        if let Some(&bad) = indices.iter().find(|&&k| k >= extent) {
            return Err(GradError::IndexOutOfRange {
                op: "select",
                index: bad,
                extent,
            });
        }
        let mut shape = in_shape.clone();
        shape[axis] = indices.len();
        Ok(self.record(
            Op::Select {
                input: i,
                axis,
                indices: Arc::from(indices),
            },
            shape,
        ))
    }

    /// Adds row `n` of `x` into row `indices[n]` of a zero array with `len` rows.
    pub fn scatter_add(&mut self, x: Node, indices: &[usize], len: usize) -> GradResult<Node> {
        let i = self.check(x)?;
        let in_shape = &self.nodes[i].shape;
        if in_shape.is_empty() || in_shape[0] != indices.len() {
            return Err(GradError::ShapeMismatch {
                op: "scatter_add",
                lhs: in_shape.clone(),
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&k| k >= len) {
            return Err(GradError::IndexOutOfRange {
                op: "scatter_add",
                index: bad,
                extent: len,
            });
        }
        let mut shape = in_shape.clone();
        shape[0] = len;
        Ok(self.record(
            Op::ScatterAdd {
                input: i,
                indices: Arc::from(indices),
            },
            shape,
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, xs: &[Node], axis: usize) -> GradResult<Node> {
        let idx: Vec<usize> = xs.iter().map(|&n| self.check(n)).collect::<GradResult<_>>()?;
        let first = idx.first().ok_or(GradError::ShapeMismatch {
            op: "concat",
            lhs: vec![],
            rhs: vec![],
        })?;
        let base = self.nodes[*first].shape.clone();
        if axis >= base.len() {
            return Err(GradError::BadAxis {
                axis,
                rank: base.len(),
            });
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &k in &idx {
            let s = &self.nodes[k].shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(GradError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.clone(),
                });
            }
            shape[axis] += s[axis];
        }
        Ok(self.record(Op::Concat { inputs: idx, axis }, shape))
    }

    /// Explicit broadcast to `shape` (trailing-dimension alignment).
    pub fn broadcast(&mut self, x: Node, shape: &[usize]) -> GradResult<Node> {
        let i = self.check(x)?;
        let in_shape = &self.nodes[i].shape;
        if !broadcastable_to(in_shape, shape) {
            return Err(GradError::ShapeMismatch {
                op: "broadcast",
                lhs: in_shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        let map = Arc::from(broadcast_map(in_shape, shape));
        Ok(self.record(Op::Broadcast { input: i, map }, shape.to_vec()))
    }

    pub fn reshape(&mut self, x: Node, shape: &[usize]) -> GradResult<Node> {
        let i = self.check(x)?;
        let in_shape = &self.nodes[i].shape;
        if numel(in_shape) != numel(shape) {
            return Err(GradError::ShapeMismatch {
                op: "reshape",
                lhs: in_shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(self.record(Op::Reshape { input: i }, shape.to_vec()))
    }

    /// Records a user-defined op.
    pub fn custom(&mut self, inputs: &[Node], op: Arc<dyn CustomOp<T>>) -> GradResult<Node> {
        let idx: Vec<usize> = inputs.iter().map(|&n| self.check(n)).collect::<GradResult<_>>()?;
        let shape = {
            let shapes: Vec<&[usize]> = idx.iter().map(|&i| self.nodes[i].shape.as_slice()).collect();
            op.output_shape(&shapes)?
        };
        let node = self.record(Op::Custom { inputs: idx, op: op.clone() }, shape.clone());
        let produced = self.nodes[node.index].value.len();
        if produced != numel(&shape) {
            self.nodes.pop();
            return Err(GradError::Custom {
                name: op.name().to_string(),
                message: format!("forward produced {produced} values for shape {shape:?}"),
            });
        }
        Ok(node)
    }

    /// Recomputes every non-leaf value from the recorded leaves.
    pub fn replay(&self) -> Vec<Vec<T>> {
        let mut values: Vec<Vec<T>> = Vec::with_capacity(self.nodes.len());
        let mut scratch = 0usize;
        for rec in &self.nodes {
            let v = match &rec.op {
                Op::Leaf => rec.value.clone(),
                op => {
                    let inputs = op.inputs();
                    let vals: Vec<&[T]> = inputs.iter().map(|&i| values[i].as_slice()).collect();
                    let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.nodes[i].shape.as_slice()).collect();
                    eval_op(op, &vals, &shapes, numel(&rec.shape), &mut scratch)
                }
            };
            values.push(v);
        }
        values
    }

    /// Reverse sweep from a scalar-shaped `loss`.
    pub fn backward(&self, loss: Node) -> GradResult<Gradients<T>> {
        let root = self.check(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(GradError::NonScalarLoss {
                shape: self.nodes[root].shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root] = Some(vec![T::one()]);
        let mut leaves: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();

        for i in (0..=root).rev() {
            let rec = &self.nodes[i];
            if !rec.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(rec, &g, &mut adj, &mut leaves, i);
        }

        for (i, rec) in self.nodes.iter().enumerate() {
            if matches!(rec.op, Op::Leaf) && rec.requires_grad && leaves[i].is_none() {
                leaves[i] = Some(vec![T::zero(); rec.value.len()]);
            }
        }
        Ok(Gradients {
            tape: self.id,
            adjoints: leaves,
        })
    }

    fn propagate(
        &self,
        rec: &Record<T>,
        g: &[T],
        adj: &mut [Option<Vec<T>>],
        leaves: &mut [Option<Vec<T>>],
        index: usize,
    ) {
        let node = |k: usize| &self.nodes[k];
        let wants = |k: usize| self.nodes[k].requires_grad;
        if !matches!(rec.op, Op::Leaf) && !rec.op.inputs().iter().any(|&k| wants(k)) {
            return;
        }
        match &rec.op {
            Op::Leaf => {
                leaves[index] = Some(g.to_vec());
            }
            Op::Unary { input, kind } => {
                let x = &node(*input).value;
                let acc = accumulate(adj, *input, x.len());
                for k in 0..x.len() {
                    acc[k] = acc[k] + g[k] * kind.derivative(x[k], rec.value[k]);
                }
            }
            Op::Binary {
                lhs,
                rhs,
                kind,
                lhs_map,
                rhs_map,
            } => {
                let a = &node(*lhs).value;
                let b = &node(*rhs).value;
                let mut ga = wants(*lhs).then(|| vec![T::zero(); a.len()]);
                let mut gb = wants(*rhs).then(|| vec![T::zero(); b.len()]);
                for k in 0..g.len() {
                    let ia = lhs_map.as_ref().map_or(k, |m| m[k]);
                    let ib = rhs_map.as_ref().map_or(k, |m| m[k]);
                    let (da, db) = kind.partials(a[ia], b[ib]);
                    if let Some(ga) = ga.as_mut() {
                        ga[ia] = ga[ia] + g[k] * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[ib] = gb[ib] + g[k] * db;
                    }
                }
                // lhs and rhs may be the same node
                if let Some(ga) = ga {
                    let acc = accumulate(adj, *lhs, a.len());
                    for (s, d) in acc.iter_mut().zip(ga) {
                        *s = *s + d;
                    }
                }
                if let Some(gb) = gb {
                    let acc = accumulate(adj, *rhs, b.len());
                    for (s, d) in acc.iter_mut().zip(gb) {
                        *s = *s + d;
                    }
                }
            }
            Op::Sum { input } => {
                let n = node(*input).value.len();
                let acc = accumulate(adj, *input, n);
                for s in acc.iter_mut() {
                    *s = *s + g[0];
                }
            }
            Op::Mean { input } => {
                let n = node(*input).value.len();
                let share = g[0] / T::lit(n.max(1) as f64);
                let acc = accumulate(adj, *input, n);
                for s in acc.iter_mut() {
                    *s = *s + share;
                }
            }
            Op::SumAxis { input, axis } => {
                let (outer, extent, inner) = split_axis(&node(*input).shape, *axis);
                let acc = accumulate(adj, *input, outer * extent * inner);
                for o in 0..outer {
                    for e in 0..extent {
                        let base = (o * extent + e) * inner;
                        for r in 0..inner {
                            acc[base + r] = acc[base + r] + g[o * inner + r];
                        }
                    }
                }
            }
            Op::Select {
                input,
                axis,
                indices,
            } => {
                let (outer, extent, inner) = split_axis(&node(*input).shape, *axis);
                let acc = accumulate(adj, *input, outer * extent * inner);
                let mut k = 0;
                for o in 0..outer {
                    for &idx in indices.iter() {
                        let base = (o * extent + idx) * inner;
                        for r in 0..inner {
                            acc[base + r] = acc[base + r] + g[k];
                            k += 1;
                        }
                    }
                }
            }
            Op::ScatterAdd { input, indices } => {
                let n = node(*input).value.len();
                let inner = n / indices.len().max(1);
                let acc = accumulate(adj, *input, n);
                for (row, &idx) in indices.iter().enumerate() {
                    for r in 0..inner {
                        acc[row * inner + r] = acc[row * inner + r] + g[idx * inner + r];
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let outer = numel(&node(inputs[0]).shape[..*axis]);
                let mut offset = 0;
                let chunks: Vec<usize> = inputs.iter().map(|&k| numel(&node(k).shape[*axis..])).collect();
                let row: usize = chunks.iter().sum();
                for (&k, &chunk) in inputs.iter().zip(&chunks) {
                    if wants(k) {
                        let acc = accumulate(adj, k, outer * chunk);
                        for o in 0..outer {
                            for r in 0..chunk {
                                acc[o * chunk + r] = acc[o * chunk + r] + g[o * row + offset + r];
                            }
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Broadcast { input, map } => {
                let n = node(*input).value.len();
                let acc = accumulate(adj, *input, n);
                for (k, &src) in map.iter().enumerate() {
                    acc[src] = acc[src] + g[k];
                }
            }
            Op::Reshape { input } => {
                let acc = accumulate(adj, *input, g.len());
                for (s, &d) in acc.iter_mut().zip(g) {
                    *s = *s + d;
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&[T]> = inputs.iter().map(|&k| node(k).value.as_slice()).collect();
                let grads = op.backward(&vals, &rec.value, g);
                for (&k, gk) in inputs.iter().zip(grads) {
                    if wants(k) {
                        let acc = accumulate(adj, k, gk.len());
                        for (s, d) in acc.iter_mut().zip(gk) {
                            *s = *s + d;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoints of every gradient-flagged leaf reached by one backward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    tape: u64,
    adjoints: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `leaf`, or `None` if it is not a flagged leaf of this tape.
    pub fn get(&self, leaf: Node) -> Option<&[T]> {
        if leaf.tape != self.tape {
            return None;
        }
        self.adjoints.get(leaf.index)?.as_deref()
    }

    /// Like [`Gradients::get`] but returns an owned vector, zero-filled for misses.
    pub fn get_or_zeros(&self, leaf: Node, len: usize) -> Vec<T> {
        self.get(leaf).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}
