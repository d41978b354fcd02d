use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::tape::{split_axis, AdjointFault, Node, Op, Tape, Var};
use crate::AdError;

/// Gradient arrays keyed by parameter name.
///
/// Shapes match the parameter leaves. Every parameter leaf on the tape has an
/// entry, zero if the output does not depend on it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    entries: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(|(_, g)| g.as_slice())
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.entries.get(name).map(|(s, _)| s.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, (_, g))| (k.as_str(), g.as_slice()))
    }

    /// Adds `grad` into the entry for `name`, creating it if needed.
    pub fn accumulate(&mut self, name: &str, shape: &[usize], grad: &[f64]) {
        match self.entries.get_mut(name) {
            Some((s, g)) => {
                assert_eq!(s.as_slice(), shape, "gradient shape mismatch for {}", name);
                for (a, b) in g.iter_mut().zip(grad) {
                    *a += b;
                }
            }
            None => {
                self.entries.insert(name.to_string(), (shape.to_vec(), grad.to_vec()));
            }
        }
    }

    /// Merges another map into this one, summing shared entries.
    pub fn merge(&mut self, other: &GradientMap) {
        for (name, (shape, grad)) in &other.entries {
            self.accumulate(name, shape, grad);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, g) in self.entries.values_mut() {
            g.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// L2 norm over every entry.
    pub fn norm(&self) -> f64 {
        self.entries.values().flat_map(|(_, g)| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Adjoints of every node that the output depends on.
#[derive(Debug)]
pub struct Adjoints {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Adjoint of `v`, zero-filled when the output does not depend on it.
    pub fn wrt<'a>(&'a self, tape: &Tape, v: Var) -> Cow<'a, [f64]> {
        assert_eq!(v.tape, self.tape, "adjoints belong to another tape");
        match self.grads.get(v.index).and_then(|g| g.as_ref()) {
            Some(g) => Cow::Borrowed(g.as_slice()),
            None => Cow::Owned(vec![0.0; tape.value(v).len()]),
        }
    }

    /// Collects the adjoints of all parameter leaves by name.
    pub fn gradient_map(&self, tape: &Tape) -> GradientMap {
        let mut map = GradientMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let Some(slot) = node.param {
                let name = &tape.param_names[slot];
                match self.grads.get(i).and_then(|g| g.as_ref()) {
                    Some(g) => map.accumulate(name, &node.shape, g),
                    None => map.accumulate(name, &node.shape, &vec![0.0; node.value.len()]),
                }
            }
        }
        map
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let g = slot.get_or_insert_with(|| vec![0.0; len]);
    f(g);
}

impl Tape {
    pub(crate) fn check_output(&self, output: Var) -> Result<usize, AdError> {
        if !self.contains(output) {
            return Err(AdError::ForeignNode { node: output.index });
        }
        let len = self.nodes[output.index].value.len();
        if len != 1 {
            return Err(AdError::NonScalarOutput { elements: len });
        }
        Ok(output.index)
    }

    /// Reverse sweep from a scalar `output`. The tape is not modified, so the
    /// sweep can be repeated.
    pub fn backward(&self, output: Var) -> Result<Adjoints, AdError> {
        let out = self.check_output(output)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out + 1];
        grads[out] = Some(vec![1.0]);
        for k in (0..=out).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            if !matches!(node.op, Op::Leaf) {
                propagate(&self.nodes, k, &g, &mut grads, self.fault);
            }
            grads[k] = Some(g);
        }
        Ok(Adjoints { tape: self.id, grads })
    }

    /// Gradients of a scalar `output` with respect to every parameter leaf.
    pub fn gradients(&self, output: Var) -> Result<GradientMap, AdError> {
        Ok(self.backward(output)?.gradient_map(self))
    }
}

fn propagate(
    nodes: &[Node],
    k: usize,
    g: &[f64],
    grads: &mut [Option<Vec<f64>>],
    fault: Option<AdjointFault>,
) {
    let node = &nodes[k];
    let y = &node.value;
    let len = |i: usize| nodes[i].value.len();
    let val = |i: usize| nodes[i].value.as_slice();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_into(&mut grads[*a], len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            add_into(&mut grads[*b], len(*b), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
        }
        Op::Sub(a, b) => {
            add_into(&mut grads[*a], len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            add_into(&mut grads[*b], len(*b), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            add_into(&mut grads[*a], len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * vb[i];
                }
            });
            add_into(&mut grads[*b], len(*b), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] * va[i];
                }
            });
        }
        Op::Div(a, b) => {
            let vb = val(*b);
            add_into(&mut grads[*a], len(*a), |d| {
                for i in 0..d.len() {
                    d[i] += g[i] / vb[i];
                }
            });
            add_into(&mut grads[*b], len(*b), |d| {
                for i in 0..d.len() {
                    d[i] -= g[i] * y[i] / vb[i];
                }
            });
        }
        Op::Scale(a, c) => {
            add_into(&mut grads[*a], len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g));
        }
        Op::Shift(a) | Op::Reshape(a) => {
            add_into(&mut grads[*a], len(*a), |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
        }
        Op::Exp(a) => elementwise(grads, *a, g, |i| y[i]),
        Op::Log(a) => {
            let va = val(*a);
            elementwise(grads, *a, g, |i| 1.0 / va[i])
        }
        Op::Tanh(a) => {
            let bias = if fault == Some(AdjointFault::Tanh) { 1.5 } else { 1.0 };
            elementwise(grads, *a, g, |i| bias * (1.0 - y[i] * y[i]))
        }
        Op::Sigmoid(a) => elementwise(grads, *a, g, |i| y[i] * (1.0 - y[i])),
        Op::Relu(a) => {
            let va = val(*a);
            elementwise(grads, *a, g, |i| if va[i] > 0.0 { 1.0 } else { 0.0 })
        }
        Op::Sqrt(a) => elementwise(grads, *a, g, |i| 0.5 / y[i]),
        Op::Sum(a) => {
            add_into(&mut grads[*a], len(*a), |d| d.iter_mut().for_each(|d| *d += g[0]));
        }
        Op::SumAxis { input, axis } => {
            let (outer, extent, inner) = split_axis(&nodes[*input].shape, *axis);
            add_into(&mut grads[*input], len(*input), |d| {
                for o in 0..outer {
                    for j in 0..extent {
                        for i in 0..inner {
                            d[(o * extent + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }
        Op::Repeat { input, axis, count } => {
            let shape = &nodes[*input].shape;
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[*axis..].iter().product();
            add_into(&mut grads[*input], len(*input), |d| {
                for o in 0..outer {
                    for c in 0..*count {
                        for i in 0..inner {
                            d[o * inner + i] += g[(o * count + c) * inner + i];
                        }
                    }
                }
            });
        }
        Op::LogSumExp { input, axis } => {
            let x = val(*input);
            let (outer, extent, inner) = split_axis(&nodes[*input].shape, *axis);
            add_into(&mut grads[*input], len(*input), |d| {
                for o in 0..outer {
                    for i in 0..inner {
                        let yo = y[o * inner + i];
                        if yo == f64::NEG_INFINITY {
                            continue;
                        }
                        let go = g[o * inner + i];
                        for j in 0..extent {
                            let at = (o * extent + j) * inner + i;
                            d[at] += go * (x[at] - yo).exp();
                        }
                    }
                }
            });
        }
        Op::MatVec { matrix, vector, transpose } => {
            let (w, x) = (val(*matrix), val(*vector));
            let (m, kk) = (nodes[*matrix].shape[0], nodes[*matrix].shape[1]);
            if !transpose {
                add_into(&mut grads[*matrix], m * kk, |d| {
                    for i in 0..m {
                        if g[i] == 0.0 {
                            continue;
                        }
                        for (dij, xj) in d[i * kk..(i + 1) * kk].iter_mut().zip(x) {
                            *dij += g[i] * xj;
                        }
                    }
                });
                add_into(&mut grads[*vector], kk, |d| {
                    for i in 0..m {
                        if g[i] == 0.0 {
                            continue;
                        }
                        for (dj, wij) in d.iter_mut().zip(&w[i * kk..(i + 1) * kk]) {
                            *dj += wij * g[i];
                        }
                    }
                });
            } else {
                add_into(&mut grads[*matrix], m * kk, |d| {
                    for i in 0..m {
                        if x[i] == 0.0 {
                            continue;
                        }
                        for (dij, gj) in d[i * kk..(i + 1) * kk].iter_mut().zip(g) {
                            *dij += x[i] * gj;
                        }
                    }
                });
                add_into(&mut grads[*vector], m, |d| {
                    for i in 0..m {
                        d[i] += w[i * kk..(i + 1) * kk].iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                    }
                });
            }
        }
        Op::Outer(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, kk) = (va.len(), vb.len());
            add_into(&mut grads[*a], m, |d| {
                for i in 0..m {
                    d[i] += g[i * kk..(i + 1) * kk].iter().zip(vb).map(|(x, y)| x * y).sum::<f64>();
                }
            });
            add_into(&mut grads[*b], kk, |d| {
                for i in 0..m {
                    for j in 0..kk {
                        d[j] += g[i * kk + j] * va[i];
                    }
                }
            });
        }
        Op::Concat(list) => {
            let mut offset = 0;
            for &i in list {
                let n = len(i);
                add_into(&mut grads[i], n, |d| {
                    d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, g)| *d += g)
                });
                offset += n;
            }
        }
        Op::Gather { input, indices } => {
            add_into(&mut grads[*input], len(*input), |d| {
                for (&i, gk) in indices.iter().zip(g) {
                    d[i] += gk;
                }
            });
        }
        Op::Scatter { input, indices } => {
            add_into(&mut grads[*input], len(*input), |d| {
                for (dk, &i) in d.iter_mut().zip(indices.iter()) {
                    *dk += g[i];
                }
            });
        }
        Op::MaxPool(list) => {
            for e in 0..y.len() {
                // First input holding the maximum receives the adjoint.
                if let Some(&winner) = list.iter().find(|&&i| nodes[i].value[e] == y[e]) {
                    add_into(&mut grads[winner], len(winner), |d| d[e] += g[e]);
                }
            }
        }
    }
}

fn elementwise(grads: &mut [Option<Vec<f64>>], a: usize, g: &[f64], local: impl Fn(usize) -> f64) {
    add_into(&mut grads[a], g.len(), |d| {
        for i in 0..d.len() {
            d[i] += g[i] * local(i);
        }
    });
}
