//! Computation tape and the closed operation library.
//!
//! Every operation records its inputs and its forward value. Values are dense
//! row-major `f64` arrays of rank 0, 1 or 2. There is no implicit
//! broadcasting; [`Tape::repeat`] makes broadcasts explicit so every adjoint
//! stays a plain composition of library operations.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

impl Var {
    /// Position of the node on its tape. Node ids are unique per tape and
    /// increase in recording order.
    pub fn id(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Sqrt(usize),
    Sum(usize),
    SumAxis { input: usize, axis: usize },
    Repeat { input: usize, axis: usize, count: usize },
    LogSumExp { input: usize, axis: usize },
    MatVec { matrix: usize, vector: usize, transpose: bool },
    Outer(usize, usize),
    Concat(Vec<usize>),
    Gather { input: usize, indices: Arc<[usize]> },
    Scatter { input: usize, indices: Arc<[usize]> },
    Reshape(usize),
    MaxPool(Vec<usize>),
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Outer(a, b) => {
                vec![*a, *b]
            }
            Op::MatVec { matrix, vector, .. } => vec![*matrix, *vector],
            Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Sqrt(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::SumAxis { input, .. }
            | Op::Repeat { input, .. }
            | Op::LogSumExp { input, .. }
            | Op::Gather { input, .. }
            | Op::Scatter { input, .. } => vec![*input],
            Op::Concat(list) | Op::MaxPool(list) => list.clone(),
        }
    }

    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Sqrt(..) => "sqrt",
            Op::Sum(..) => "sum",
            Op::SumAxis { .. } => "sum_axis",
            Op::Repeat { .. } => "repeat",
            Op::LogSumExp { .. } => "logsumexp",
            Op::MatVec { .. } => "matvec",
            Op::Outer(..) => "outer",
            Op::Concat(..) => "concat",
            Op::Gather { .. } => "gather",
            Op::Scatter { .. } => "scatter",
            Op::Reshape(..) => "reshape",
            Op::MaxPool(..) => "max_pool",
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) param: Option<usize>,
}

/// Operation whose numeric adjoint can be deliberately perturbed, for
/// negative-control runs of the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjointFault {
    Tanh,
}

/// A recording of one computation.
///
/// Tapes are single-threaded; build one per sentence (or per batch) and merge
/// the resulting gradient maps.
#[derive(Debug)]
pub struct Tape {
    pub(crate) id: u64,
    pub(crate) nodes: Vec<Node>,
    pub(crate) param_names: Vec<String>,
    pub(crate) fault: Option<AdjointFault>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_names: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Perturbs one numeric adjoint. Only meant for negative controls.
    pub fn inject_adjoint_fault(&mut self, fault: Option<AdjointFault>) {
        self.fault = fault;
    }

    /// Number of recorded nodes per operation kind.
    pub fn op_counts(&self) -> std::collections::BTreeMap<&'static str, usize> {
        let mut counts = std::collections::BTreeMap::new();
        for node in &self.nodes {
            *counts.entry(node.op.name()).or_insert(0) += 1;
        }
        counts
    }

    pub fn contains(&self, v: Var) -> bool {
        v.tape == self.id && v.index < self.nodes.len()
    }

    pub(crate) fn var(&self, index: usize) -> Var {
        Var { tape: self.id, index }
    }

    #[inline]
    pub(crate) fn idx(&self, v: Var) -> usize {
        assert!(
            v.tape == self.id && v.index < self.nodes.len(),
            "variable {:?} is not recorded on this tape",
            v
        );
        v.index
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.idx(v)].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.idx(v)].shape
    }

    /// Value of a single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let value = self.value(v);
        assert_eq!(value.len(), 1, "scalar_value on a node with {} elements", value.len());
        value[0]
    }

    /// Name of the parameter leaf behind `v`, if it is one.
    pub fn param_name(&self, v: Var) -> Option<&str> {
        self.nodes[self.idx(v)].param.map(|p| self.param_names[p].as_str())
    }

    pub(crate) fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { op, shape, value, param: None });
        self.var(self.nodes.len() - 1)
    }

    // ---------------------------------------------------------------- leaves

    /// Records a non-parameter leaf. Leaves can still be differentiated
    /// against (span potentials are ordinary leaves).
    pub fn constant(&mut self, value: Vec<f64>, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), value.len(), "leaf value does not match shape {:?}", shape);
        self.push(Op::Leaf, shape.to_vec(), value)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(vec![value], &[])
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(vec![0.0; numel(shape)], shape)
    }

    /// Records a named parameter leaf; its gradient is reported by
    /// [`Tape::gradients`]. The same name may be bound more than once; the
    /// gradients are summed.
    pub fn param(&mut self, name: &str, value: Vec<f64>, shape: &[usize]) -> Var {
        let v = self.constant(value, shape);
        let slot = match self.param_names.iter().position(|n| n == name) {
            Some(slot) => slot,
            None => {
                self.param_names.push(name.to_string());
                self.param_names.len() - 1
            }
        };
        self.nodes[v.index].param = Some(slot);
        v
    }

    // ----------------------------------------------------------- elementwise

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> (usize, usize, Vec<usize>, Vec<f64>) {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        assert_eq!(na.shape, nb.shape, "elementwise operands differ in shape");
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        (ia, ib, na.shape.clone(), value)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> (usize, Vec<usize>, Vec<f64>) {
        let ia = self.idx(a);
        let node = &self.nodes[ia];
        (ia, node.shape.clone(), node.value.iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib, shape, value) = self.binary(a, b, |x, y| x + y);
        self.push(Op::Add(ia, ib), shape, value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib, shape, value) = self.binary(a, b, |x, y| x - y);
        self.push(Op::Sub(ia, ib), shape, value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib, shape, value) = self.binary(a, b, |x, y| x * y);
        self.push(Op::Mul(ia, ib), shape, value)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib, shape, value) = self.binary(a, b, |x, y| x / y);
        self.push(Op::Div(ia, ib), shape, value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let (ia, shape, value) = self.unary(a, |x| c * x);
        self.push(Op::Scale(ia, c), shape, value)
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let (ia, shape, value) = self.unary(a, |x| x + c);
        self.push(Op::Shift(ia), shape, value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, f64::exp);
        self.push(Op::Exp(ia), shape, value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, f64::ln);
        self.push(Op::Log(ia), shape, value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, f64::tanh);
        self.push(Op::Tanh(ia), shape, value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, sigmoid);
        self.push(Op::Sigmoid(ia), shape, value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, |x| x.max(0.0));
        self.push(Op::Relu(ia), shape, value)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let (ia, shape, value) = self.unary(a, f64::sqrt);
        self.push(Op::Sqrt(ia), shape, value)
    }

    // ------------------------------------------------------------ reductions

    /// Sum of all elements, as a rank-0 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let total = self.nodes[ia].value.iter().sum();
        self.push(Op::Sum(ia), Vec::new(), vec![total])
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let ia = self.idx(a);
        let node = &self.nodes[ia];
        assert!(axis < node.shape.len(), "sum_axis: axis {} out of range", axis);
        let (outer, extent, inner) = split_axis(&node.shape, axis);
        let mut value = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..extent {
                let src = &node.value[(o * extent + j) * inner..][..inner];
                let dst = &mut value[o * inner..][..inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = node.shape.clone();
        shape.remove(axis);
        self.push(Op::SumAxis { input: ia, axis }, shape, value)
    }

    /// Inserts a new axis at position `axis` holding `count` copies.
    pub fn repeat(&mut self, a: Var, axis: usize, count: usize) -> Var {
        let ia = self.idx(a);
        let node = &self.nodes[ia];
        assert!(axis <= node.shape.len(), "repeat: axis {} out of range", axis);
        let outer: usize = node.shape[..axis].iter().product();
        let inner: usize = node.shape[axis..].iter().product();
        let mut value = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let src = &node.value[o * inner..][..inner];
            for _ in 0..count {
                value.extend_from_slice(src);
            }
        }
        let mut shape = node.shape.clone();
        shape.insert(axis, count);
        self.push(Op::Repeat { input: ia, axis, count }, shape, value)
    }

    /// Numerically stable log-sum-exp over one axis. A slice whose entries
    /// are all `-inf` reduces to `-inf`.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Var {
        let ia = self.idx(a);
        let node = &self.nodes[ia];
        assert!(axis < node.shape.len(), "logsumexp: axis {} out of range", axis);
        let (outer, extent, inner) = split_axis(&node.shape, axis);
        let mut value = vec![f64::NEG_INFINITY; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| node.value[(o * extent + j) * inner + i];
                let max = (0..extent).map(at).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    continue;
                }
                let total: f64 = (0..extent).map(|j| (at(j) - max).exp()).sum();
                value[o * inner + i] = max + total.ln();
            }
        }
        let mut shape = node.shape.clone();
        shape.remove(axis);
        self.push(Op::LogSumExp { input: ia, axis }, shape, value)
    }

    /// Elementwise maximum over equally shaped nodes. Ties resolve to the
    /// earliest input.
    pub fn max_pool(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "max_pool over an empty list");
        let ids: Vec<usize> = inputs.iter().map(|&v| self.idx(v)).collect();
        let shape = self.nodes[ids[0]].shape.clone();
        let mut value = self.nodes[ids[0]].value.clone();
        for &id in &ids[1..] {
            assert_eq!(self.nodes[id].shape, shape, "max_pool operands differ in shape");
            for (m, &x) in value.iter_mut().zip(&self.nodes[id].value) {
                if x > *m {
                    *m = x;
                }
            }
        }
        self.push(Op::MaxPool(ids), shape, value)
    }

    // ---------------------------------------------------------------- linear

    /// `W x` for `W: [m, k]`, `x: [k]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        self.matvec_impl(w, x, false)
    }

    /// `Wᵀ x` for `W: [m, k]`, `x: [m]`.
    pub fn matvec_t(&mut self, w: Var, x: Var) -> Var {
        self.matvec_impl(w, x, true)
    }

    fn matvec_impl(&mut self, w: Var, x: Var, transpose: bool) -> Var {
        let (iw, ix) = (self.idx(w), self.idx(x));
        let (nw, nx) = (&self.nodes[iw], &self.nodes[ix]);
        assert_eq!(nw.shape.len(), 2, "matvec: matrix must be rank 2");
        let (m, k) = (nw.shape[0], nw.shape[1]);
        let value = if transpose {
            assert_eq!(nx.shape, [m], "matvec_t: vector length mismatch");
            let mut y = vec![0.0; k];
            for i in 0..m {
                let xi = nx.value[i];
                if xi == 0.0 {
                    continue;
                }
                for (yj, wij) in y.iter_mut().zip(&nw.value[i * k..(i + 1) * k]) {
                    *yj += wij * xi;
                }
            }
            y
        } else {
            assert_eq!(nx.shape, [k], "matvec: vector length mismatch");
            (0..m)
                .map(|i| nw.value[i * k..(i + 1) * k].iter().zip(&nx.value).map(|(a, b)| a * b).sum())
                .collect()
        };
        let shape = vec![if transpose { k } else { m }];
        self.push(Op::MatVec { matrix: iw, vector: ix, transpose }, shape, value)
    }

    /// Outer product `a bᵀ` of two vectors.
    pub fn outer(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let (na, nb) = (&self.nodes[ia], &self.nodes[ib]);
        assert!(na.shape.len() == 1 && nb.shape.len() == 1, "outer: operands must be vectors");
        let mut value = Vec::with_capacity(na.value.len() * nb.value.len());
        for &x in &na.value {
            value.extend(nb.value.iter().map(|&y| x * y));
        }
        let shape = vec![na.value.len(), nb.value.len()];
        self.push(Op::Outer(ia, ib), shape, value)
    }

    // --------------------------------------------------------------- layout

    /// Concatenates nodes of any shape into one vector (flattened order).
    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        let ids: Vec<usize> = inputs.iter().map(|&v| self.idx(v)).collect();
        let mut value = Vec::with_capacity(ids.iter().map(|&i| self.nodes[i].value.len()).sum());
        for &i in &ids {
            value.extend_from_slice(&self.nodes[i].value);
        }
        let shape = vec![value.len()];
        self.push(Op::Concat(ids), shape, value)
    }

    /// Picks flat elements `indices` of `a` into a node of shape `shape`.
    pub fn gather(&mut self, a: Var, indices: Arc<[usize]>, shape: &[usize]) -> Var {
        let ia = self.idx(a);
        assert_eq!(numel(shape), indices.len(), "gather: index count does not match shape");
        let src = &self.nodes[ia].value;
        let value = indices.iter().map(|&i| src[i]).collect();
        self.push(Op::Gather { input: ia, indices }, shape.to_vec(), value)
    }

    /// Contiguous flat range `[start, start + len)` of `a` as a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let indices: Arc<[usize]> = (start..start + len).collect();
        self.gather(a, indices, &[len])
    }

    /// Adjoint of [`Tape::gather`]: element `k` of `a` is added into flat
    /// position `indices[k]` of a zero node of shape `shape`.
    pub fn scatter(&mut self, a: Var, indices: Arc<[usize]>, shape: &[usize]) -> Var {
        let ia = self.idx(a);
        let src = &self.nodes[ia].value;
        assert_eq!(src.len(), indices.len(), "scatter: index count does not match input");
        let mut value = vec![0.0; numel(shape)];
        for (&i, &x) in indices.iter().zip(src) {
            value[i] += x;
        }
        self.push(Op::Scatter { input: ia, indices }, shape.to_vec(), value)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let ia = self.idx(a);
        assert_eq!(numel(shape), self.nodes[ia].value.len(), "reshape changes element count");
        let value = self.nodes[ia].value.clone();
        self.push(Op::Reshape(ia), shape.to_vec(), value)
    }

    // ------------------------------------------------------------ composites

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Var {
        let wx = self.matvec(w, x);
        self.add(wx, b)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let prod = self.mul(a, b);
        self.sum(prod)
    }

    /// Adds a rank-0 node to every element of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let spread = self.broadcast_scalar(s, a);
        self.add(a, spread)
    }

    /// Multiplies every element of `a` by a rank-0 node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let spread = self.broadcast_scalar(s, a);
        self.mul(a, spread)
    }

    fn broadcast_scalar(&mut self, s: Var, like: Var) -> Var {
        assert_eq!(self.value(s).len(), 1, "expected a single-element node");
        let shape = self.shape(like).to_vec();
        let flat = self.repeat(s, 0, numel(&shape));
        if shape.len() == 1 {
            flat
        } else {
            self.reshape(flat, &shape)
        }
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Var {
        let extent = self.shape(a)[axis];
        let lse = self.logsumexp(a, axis);
        let spread = self.repeat(lse, axis, extent);
        self.sub(a, spread)
    }

    /// Mean of equally shaped nodes.
    pub fn mean_pool(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "mean_pool over an empty list");
        let shape = self.shape(inputs[0]).to_vec();
        let stacked = self.concat(inputs);
        let mut full = vec![inputs.len()];
        full.extend_from_slice(&shape);
        let stacked = self.reshape(stacked, &full);
        let total = self.sum_axis(stacked, 0);
        self.scale(total, 1.0 / inputs.len() as f64)
    }

    /// Cosine similarity of two vectors; exactly zero (with zero gradient)
    /// when either norm is below `1e-12`.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "cosine: dimension mismatch");
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm(self.value(a)) < 1e-12 || norm(self.value(b)) < 1e-12 {
            return self.scalar(0.0);
        }
        let ab = self.dot(a, b);
        let aa = self.dot(a, a);
        let bb = self.dot(b, b);
        let na = self.sqrt(aa);
        let nb = self.sqrt(bb);
        let denom = self.mul(na, nb);
        self.div(ab, denom)
    }

    /// `[x + margin]₊`.
    pub fn hinge(&mut self, x: Var, margin: f64) -> Var {
        let shifted = self.shift(x, margin);
        self.relu(shifted)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
