//! Recorded (re-differentiable) backward pass.
//!
//! [`Tape::grad_graph`] replays the reverse sweep but emits every adjoint as
//! new nodes on the same tape, built only from library operations. The
//! resulting adjoint nodes are ordinary tape values, so any scalar built
//! from them can be differentiated again with [`Tape::backward`].

use std::sync::Arc;

use crate::backward::GradientMap;
use crate::tape::{numel, Op, Tape, Var};
use crate::AdError;

impl Tape {
    /// Records `∂output/∂wrt[i]` for every `wrt[i]` as new tape nodes.
    ///
    /// Only nodes lying on a path between `wrt` and `output` get an adjoint.
    /// A `wrt` node the output does not depend on receives a zero leaf.
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>, AdError> {
        let out = self.check_output(output)?;
        for &w in wrt {
            if !self.contains(w) {
                return Err(AdError::ForeignNode { node: w.index });
            }
        }
        let Some(first) = wrt.iter().map(|w| w.index).min() else {
            return Ok(Vec::new());
        };

        // Forward reachability from the wrt set.
        let mut depends = vec![false; out + 1];
        for w in wrt {
            if w.index <= out {
                depends[w.index] = true;
            }
        }
        for k in first..=out {
            if !depends[k] {
                depends[k] = self.nodes[k].op.inputs().iter().any(|&i| depends[i]);
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; out + 1];
        if depends[out] {
            let shape = self.nodes[out].shape.clone();
            adj[out] = Some(self.constant(vec![1.0], &shape));
        }
        for k in (first..=out).rev() {
            let Some(g) = adj[k] else { continue };
            if !depends[k] || matches!(self.nodes[k].op, Op::Leaf) {
                continue;
            }
            for (input, contrib) in self.vjp_graph(k, g) {
                if !depends[input] {
                    continue;
                }
                adj[input] = Some(match adj[input] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.index).copied().flatten() {
                Some(a) => a,
                None => {
                    let shape = self.nodes[w.index].shape.clone();
                    self.zeros(&shape)
                }
            })
            .collect())
    }

    /// Directional derivative of a scalar `output` with respect to the leaves
    /// `wrt`, where leaf `i` is perturbed by `direction[i]` in every element,
    /// together with the gradient of that directional derivative with respect
    /// to all parameters.
    ///
    /// When `output` is a log-partition function and `wrt` are injected
    /// per-span log-potentials, the scalar is `Σ_c μ(c)·direction[c]`.
    pub fn directional_grad(
        &mut self,
        output: Var,
        wrt: &[Var],
        direction: &[f64],
    ) -> Result<(f64, GradientMap), AdError> {
        if wrt.len() != direction.len() {
            return Err(AdError::DirectionMismatch { expected: wrt.len(), got: direction.len() });
        }
        let (scalar, _) = self.directional_node(output, wrt, direction)?;
        let value = self.scalar_value(scalar);
        Ok((value, self.gradients(scalar)?))
    }

    /// Like [`Tape::directional_grad`] but returns the recorded scalar node,
    /// and the adjoint nodes of `wrt`, instead of differentiating it.
    pub fn directional_node(
        &mut self,
        output: Var,
        wrt: &[Var],
        direction: &[f64],
    ) -> Result<(Var, Vec<Var>), AdError> {
        if wrt.len() != direction.len() {
            return Err(AdError::DirectionMismatch { expected: wrt.len(), got: direction.len() });
        }
        let adjoints = self.grad_graph(output, wrt)?;
        let mut terms = Vec::with_capacity(adjoints.len());
        for (&a, &d) in adjoints.iter().zip(direction) {
            let total = self.sum(a);
            terms.push(self.scale(total, d));
        }
        let scalar = if terms.is_empty() {
            self.scalar(0.0)
        } else {
            let stacked = self.concat(&terms);
            self.sum(stacked)
        };
        Ok((scalar, adjoints))
    }

    /// Adjoint contributions of node `k` given its adjoint node `g`, recorded
    /// with library operations.
    fn vjp_graph(&mut self, k: usize, g: Var) -> Vec<(usize, Var)> {
        let op = self.nodes[k].op.clone();
        let y = self.var(k);
        let v = |t: &Tape, i: usize| t.var(i);
        match op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => {
                let nb = self.scale(g, -1.0);
                vec![(a, g), (b, nb)]
            }
            Op::Mul(a, b) => {
                let (va, vb) = (v(self, a), v(self, b));
                let ga = self.mul(g, vb);
                let gb = self.mul(g, va);
                vec![(a, ga), (b, gb)]
            }
            Op::Div(a, b) => {
                let vb = v(self, b);
                let ga = self.div(g, vb);
                let gy = self.mul(g, y);
                let q = self.div(gy, vb);
                let gb = self.scale(q, -1.0);
                vec![(a, ga), (b, gb)]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::Shift(a) => vec![(a, g)],
            Op::Exp(a) => vec![(a, self.mul(g, y))],
            Op::Log(a) => {
                let va = v(self, a);
                vec![(a, self.div(g, va))]
            }
            Op::Tanh(a) => {
                let yy = self.mul(y, y);
                let neg = self.scale(yy, -1.0);
                let local = self.shift(neg, 1.0);
                vec![(a, self.mul(g, local))]
            }
            Op::Sigmoid(a) => {
                let neg = self.scale(y, -1.0);
                let one_minus = self.shift(neg, 1.0);
                let local = self.mul(y, one_minus);
                vec![(a, self.mul(g, local))]
            }
            Op::Relu(a) => {
                let mask: Vec<f64> =
                    self.nodes[a].value.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
                let shape = self.nodes[a].shape.clone();
                let mask = self.constant(mask, &shape);
                vec![(a, self.mul(g, mask))]
            }
            Op::Sqrt(a) => {
                let half = self.scale(g, 0.5);
                vec![(a, self.div(half, y))]
            }
            Op::Sum(a) => {
                let shape = self.nodes[a].shape.clone();
                let flat = self.repeat(g, 0, numel(&shape));
                let spread = if shape.len() == 1 { flat } else { self.reshape(flat, &shape) };
                vec![(a, spread)]
            }
            Op::SumAxis { input, axis } => {
                let extent = self.nodes[input].shape[axis];
                vec![(input, self.repeat(g, axis, extent))]
            }
            Op::Repeat { input, axis, .. } => vec![(input, self.sum_axis(g, axis))],
            Op::LogSumExp { input, axis } => {
                let extent = self.nodes[input].shape[axis];
                let x = v(self, input);
                let ys = self.repeat(y, axis, extent);
                let centered = self.sub(x, ys);
                let weights = self.exp(centered);
                let gs = self.repeat(g, axis, extent);
                vec![(input, self.mul(weights, gs))]
            }
            Op::MatVec { matrix, vector, transpose } => {
                let (w, x) = (v(self, matrix), v(self, vector));
                if transpose {
                    let gw = self.outer(x, g);
                    let gx = self.matvec(w, g);
                    vec![(matrix, gw), (vector, gx)]
                } else {
                    let gw = self.outer(g, x);
                    let gx = self.matvec_t(w, g);
                    vec![(matrix, gw), (vector, gx)]
                }
            }
            Op::Outer(a, b) => {
                let (va, vb) = (v(self, a), v(self, b));
                let ga = self.matvec(g, vb);
                let gb = self.matvec_t(g, va);
                vec![(a, ga), (b, gb)]
            }
            Op::Concat(list) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(list.len());
                for i in list {
                    let shape = self.nodes[i].shape.clone();
                    let n = numel(&shape);
                    let indices: Arc<[usize]> = (offset..offset + n).collect();
                    out.push((i, self.gather(g, indices, &shape)));
                    offset += n;
                }
                out
            }
            Op::Gather { input, indices } => {
                let shape = self.nodes[input].shape.clone();
                vec![(input, self.scatter(g, indices, &shape))]
            }
            Op::Scatter { input, indices } => {
                let shape = self.nodes[input].shape.clone();
                vec![(input, self.gather(g, indices, &shape))]
            }
            Op::Reshape(a) => {
                let shape = self.nodes[a].shape.clone();
                vec![(a, self.reshape(g, &shape))]
            }
            Op::MaxPool(list) => {
                let shape = self.nodes[k].shape.clone();
                let pooled = self.nodes[k].value.clone();
                let mut masks: Vec<(usize, Vec<f64>)> = Vec::new();
                for (e, &m) in pooled.iter().enumerate() {
                    if let Some(&winner) = list.iter().find(|&&i| self.nodes[i].value[e] == m) {
                        match masks.iter_mut().find(|(i, _)| *i == winner) {
                            Some((_, mask)) => mask[e] = 1.0,
                            None => {
                                let mut mask = vec![0.0; pooled.len()];
                                mask[e] = 1.0;
                                masks.push((winner, mask));
                            }
                        }
                    }
                }
                masks
                    .into_iter()
                    .map(|(i, mask)| {
                        let mask = self.constant(mask, &shape);
                        (i, self.mul(g, mask))
                    })
                    .collect()
            }
        }
    }
}
