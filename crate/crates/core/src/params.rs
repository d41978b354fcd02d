//! Named parameter storage shared by every model component.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use vcpcfg_autodiff::{GradientMap, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters keyed by dotted names such as `grammar.u_term`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "{}: shape/data mismatch", name);
        self.params.insert(name.to_string(), Param { shape: shape.to_vec(), data });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Records the named parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape, name: &str) -> Var {
        let p = self.params.get(name).unwrap_or_else(|| panic!("unknown parameter `{}`", name));
        tape.param(name, p.data.clone(), &p.shape)
    }

    /// Concatenated values of the named parameters, in the given order.
    pub fn flatten(&self, names: &[String]) -> Vec<f64> {
        names.iter().flat_map(|n| self.params[n].data.iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn unflatten(&mut self, names: &[String], flat: &[f64]) {
        let mut offset = 0;
        for n in names {
            let p = self.params.get_mut(n).expect("unknown parameter");
            let len = p.data.len();
            p.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "unflatten: length mismatch");
    }

    /// Gradient entries for `names` in flattened order; absent entries are zero.
    pub fn flatten_gradient(&self, names: &[String], grads: &GradientMap) -> Vec<f64> {
        let mut out = Vec::new();
        for n in names {
            match grads.get(n) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(std::iter::repeat_n(0.0, self.params[n].data.len())),
            }
        }
        out
    }
}

/// Per-tape cache of bound parameters, so each parameter becomes exactly
/// one leaf no matter how many times a model component asks for it.
pub struct Bindings<'s> {
    store: &'s ParamStore,
    vars: HashMap<&'s str, Var>,
}

impl<'s> Bindings<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Bindings { store, vars: HashMap::new() }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let (key, _) = self
            .store
            .params
            .get_key_value(name)
            .unwrap_or_else(|| panic!("unknown parameter `{}`", name));
        let v = self.store.bind(tape, name);
        self.vars.insert(key.as_str(), v);
        v
    }

    /// Row `row` of a matrix parameter, as a vector.
    pub fn row(&mut self, tape: &mut Tape, name: &str, row: usize) -> Var {
        let m = self.var(tape, name);
        let cols = tape.shape(m)[1];
        tape.slice(m, row * cols, cols)
    }
}

/// Xavier uniform bound for a `rows x cols` weight matrix.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Uniform draws from `[-a, a]` with `a` the Xavier bound.
pub fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let a = xavier_bound(rows, cols);
    (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bound_for_square_256() {
        assert!((xavier_bound(256, 256) - 0.10825).abs() < 1e-5);
    }

    #[test]
    fn xavier_draws_stay_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = xavier_bound(40, 30);
        let w = xavier(&mut rng, 40, 30);
        let (lo, hi) = w.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
        assert!(lo >= -a && hi <= a);
        assert!(hi - lo > a);
    }

    #[test]
    fn flatten_round_trip() {
        let mut s = ParamStore::new();
        s.insert("a", &[2], vec![1.0, 2.0]);
        s.insert("b", &[1, 2], vec![3.0, 4.0]);
        let names: Vec<String> = vec!["b".into(), "a".into()];
        let flat = s.flatten(&names);
        assert_eq!(flat, [3.0, 4.0, 1.0, 2.0]);
        let mut t = s.clone();
        t.unflatten(&names, &[0.0, 0.0, 5.0, 6.0]);
        assert_eq!(t.get("a").unwrap().data, [5.0, 6.0]);
    }
}
