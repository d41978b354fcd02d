//! CNF symbol inventory and the compound parameterization that maps a latent
//! vector `z` to normalized rule log-probabilities.
//!
//! Symbols are indexed jointly as `0..N` (nonterminals) followed by
//! `N..N+P` (preterminals). Binary rules `A -> B C` are stored in row `A`,
//! column `B * (N + P) + C`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{Tape, Var};

use crate::error::{Error, Result};
use crate::params::{xavier, Bindings, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nonterminals: usize,
    pub preterminals: usize,
    pub vocab: usize,
    pub symbol_dim: usize,
    pub z_dim: usize,
}

impl Topology {
    pub fn new(vocab: usize) -> Self {
        Topology { nonterminals: 30, preterminals: 60, vocab, symbol_dim: 256, z_dim: 64 }
    }

    pub fn symbols(&self) -> usize {
        self.nonterminals + self.preterminals
    }

    /// Width of `[w; z]`.
    pub fn input_dim(&self) -> usize {
        self.symbol_dim + self.z_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.nonterminals == 0 || self.preterminals == 0 || self.vocab == 0 {
            return Err(Error::Config(format!(
                "grammar needs at least one nonterminal, preterminal and word (got {}, {}, {})",
                self.nonterminals, self.preterminals, self.vocab
            )));
        }
        Ok(())
    }
}

/// Adds the grammar's parameters to `store` with Xavier-uniform weights and
/// zero biases.
pub fn init_grammar<R: Rng>(store: &mut ParamStore, topo: &Topology, rng: &mut R) {
    let (n, p, v) = (topo.nonterminals, topo.preterminals, topo.vocab);
    let (ds, d) = (topo.symbol_dim, topo.input_dim());
    let m = topo.symbols();
    let mut matrix = |name: &str, rows: usize, cols: usize| {
        store.insert(name, &[rows, cols], xavier(rng, rows, cols));
    };
    matrix("grammar.sym_start", 1, ds);
    matrix("grammar.sym_nt", n, ds);
    matrix("grammar.sym_pt", p, ds);
    matrix("grammar.u_root", n, d);
    matrix("grammar.u_binary", m * m, d);
    matrix("grammar.u_term", v, d);
    for f in ["grammar.fs", "grammar.ft"] {
        matrix(&format!("{}.w1", f), d, d);
        matrix(&format!("{}.w2", f), d, d);
    }
    for f in ["grammar.fs", "grammar.ft"] {
        store.insert(&format!("{}.b1", f), &[d], vec![0.0; d]);
        store.insert(&format!("{}.b2", f), &[d], vec![0.0; d]);
    }
}

/// Rule log-probabilities recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RuleProbs {
    /// `[N]`: `S -> A`.
    pub root: Var,
    /// `[N, (N+P)^2]`: `A -> B C`.
    pub binary: Var,
    /// `[P, V]`: `T -> w`.
    pub emission: Var,
    pub nonterminals: usize,
    pub preterminals: usize,
    pub vocab: usize,
}

impl RuleProbs {
    pub fn tables(&self, tape: &Tape) -> RuleTables {
        RuleTables {
            nonterminals: self.nonterminals,
            preterminals: self.preterminals,
            vocab: self.vocab,
            root: tape.value(self.root).to_vec(),
            binary: tape.value(self.binary).to_vec(),
            emission: tape.value(self.emission).to_vec(),
        }
    }
}

/// Plain rule log-probability tables, laid out like [`RuleProbs`].
#[derive(Debug, Clone, PartialEq)]
pub struct RuleTables {
    pub nonterminals: usize,
    pub preterminals: usize,
    pub vocab: usize,
    pub root: Vec<f64>,
    pub binary: Vec<f64>,
    pub emission: Vec<f64>,
}

impl RuleTables {
    /// Builds log tables from probabilities (zeros become `-inf`).
    pub fn from_probs(
        nonterminals: usize,
        preterminals: usize,
        vocab: usize,
        root: &[f64],
        binary: &[f64],
        emission: &[f64],
    ) -> Self {
        let m = nonterminals + preterminals;
        assert_eq!(root.len(), nonterminals);
        assert_eq!(binary.len(), nonterminals * m * m);
        assert_eq!(emission.len(), preterminals * vocab);
        let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect();
        RuleTables {
            nonterminals,
            preterminals,
            vocab,
            root: ln(root),
            binary: ln(binary),
            emission: ln(emission),
        }
    }

    pub fn symbols(&self) -> usize {
        self.nonterminals + self.preterminals
    }

    /// Column of `A -> B C` in a binary row, with `b`, `c` joint symbol ids.
    pub fn pair(&self, b: usize, c: usize) -> usize {
        b * self.symbols() + c
    }

    pub fn binary_logp(&self, a: usize, b: usize, c: usize) -> f64 {
        let m = self.symbols();
        self.binary[a * m * m + b * m + c]
    }

    pub fn emission_logp(&self, t: usize, w: usize) -> f64 {
        self.emission[t * self.vocab + w]
    }

    /// Largest deviation of any row's total probability from 1.
    pub fn normalization_error(&self) -> f64 {
        let m = self.symbols();
        let row_err = |row: &[f64]| (row.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs();
        let mut worst = row_err(&self.root);
        for row in self.binary.chunks(m * m).chain(self.emission.chunks(self.vocab)) {
            worst = worst.max(row_err(row));
        }
        worst
    }

    /// Records the tables as constants.
    pub fn record(&self, tape: &mut Tape) -> RuleProbs {
        let (n, m, p, v) = (self.nonterminals, self.symbols(), self.preterminals, self.vocab);
        RuleProbs {
            root: tape.constant(self.root.clone(), &[n]),
            binary: tape.constant(self.binary.clone(), &[n, m * m]),
            emission: tape.constant(self.emission.clone(), &[p, v]),
            nonterminals: n,
            preterminals: p,
            vocab: v,
        }
    }

    /// Records the tables as named parameter leaves `rules.root`,
    /// `rules.binary` and `rules.emission`.
    pub fn record_params(&self, tape: &mut Tape) -> RuleProbs {
        let (n, m, p, v) = (self.nonterminals, self.symbols(), self.preterminals, self.vocab);
        RuleProbs {
            root: tape.param("rules.root", self.root.clone(), &[n]),
            binary: tape.param("rules.binary", self.binary.clone(), &[n, m * m]),
            emission: tape.param("rules.emission", self.emission.clone(), &[p, v]),
            nonterminals: n,
            preterminals: p,
            vocab: v,
        }
    }
}

/// `x + tanh(W2 tanh(W1 x + b1) + b2)`.
fn residual(tape: &mut Tape, bind: &mut Bindings, prefix: &str, x: Var) -> Var {
    let w1 = bind.var(tape, &format!("{}.w1", prefix));
    let b1 = bind.var(tape, &format!("{}.b1", prefix));
    let w2 = bind.var(tape, &format!("{}.w2", prefix));
    let b2 = bind.var(tape, &format!("{}.b2", prefix));
    let h = tape.affine(w1, x, b1);
    let h = tape.tanh(h);
    let h = tape.affine(w2, h, b2);
    let h = tape.tanh(h);
    tape.add(x, h)
}

fn finite(tape: &Tape, v: Var, family: &'static str) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLogits { family })
    }
}

/// Rule log-probabilities for one latent vector `z` (shape `[z_dim]`).
pub fn compute_rule_probs(
    tape: &mut Tape,
    bind: &mut Bindings,
    topo: &Topology,
    z: Var,
) -> Result<RuleProbs> {
    assert_eq!(tape.shape(z), [topo.z_dim], "z has the wrong dimension");
    let (n, p, v, m) = (topo.nonterminals, topo.preterminals, topo.vocab, topo.symbols());

    let w_s = bind.row(tape, "grammar.sym_start", 0);
    let x = tape.concat(&[w_s, z]);
    let x = residual(tape, bind, "grammar.fs", x);
    let u_root = bind.var(tape, "grammar.u_root");
    let root_logits = tape.matvec(u_root, x);
    finite(tape, root_logits, "root")?;
    let root = tape.log_softmax(root_logits, 0);

    let u_binary = bind.var(tape, "grammar.u_binary");
    let mut rows = Vec::with_capacity(n);
    for a in 0..n {
        let w_a = bind.row(tape, "grammar.sym_nt", a);
        let x = tape.concat(&[w_a, z]);
        rows.push(tape.matvec(u_binary, x));
    }
    let stacked = tape.concat(&rows);
    let binary_logits = tape.reshape(stacked, &[n, m * m]);
    finite(tape, binary_logits, "binary")?;
    let binary = tape.log_softmax(binary_logits, 1);

    let u_term = bind.var(tape, "grammar.u_term");
    let mut rows = Vec::with_capacity(p);
    for t in 0..p {
        let w_t = bind.row(tape, "grammar.sym_pt", t);
        let x = tape.concat(&[w_t, z]);
        let x = residual(tape, bind, "grammar.ft", x);
        rows.push(tape.matvec(u_term, x));
    }
    let stacked = tape.concat(&rows);
    let emission_logits = tape.reshape(stacked, &[p, v]);
    finite(tape, emission_logits, "emission")?;
    let emission = tape.log_softmax(emission_logits, 1);

    Ok(RuleProbs { root, binary, emission, nonterminals: n, preterminals: p, vocab: v })
}
