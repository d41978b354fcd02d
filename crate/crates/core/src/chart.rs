//! Exact inference over CNF derivations: the inside algorithm in log space,
//! span and labelled-span marginals, CYK MAP parsing, and brute-force tree
//! enumeration for testing.
//!
//! Every width >= 2 cell gets an additive per-label log-potential leaf fixed
//! at zero. The gradient of `log Z` with respect to a potential is the
//! labelled marginal of that span, so marginals come from a backward pass
//! and their own derivatives from a recorded one.

use std::sync::Arc;

use vcpcfg_autodiff::{GradientMap, Tape, Var};

use crate::error::{Error, Result};
use crate::grammar::{RuleProbs, RuleTables};
use crate::tree::{LabeledSpan, Tree};

/// Inside chart recorded on a tape.
#[derive(Debug, Clone)]
pub struct Chart {
    pub n: usize,
    pub nonterminals: usize,
    cells: Vec<Option<Var>>,
    potentials: Vec<Option<Var>>,
    pub log_z: Var,
}

fn cell_index(n: usize, i: usize, j: usize) -> usize {
    i * (n + 1) + j
}

/// All width >= 2 spans of a length-`n` sentence, by width then start.
pub fn all_spans(n: usize) -> Vec<(usize, usize)> {
    (2..=n).flat_map(|w| (0..=n - w).map(move |i| (i, i + w))).collect()
}

fn check_sentence(sentence: &[usize], vocab: usize) -> Result<()> {
    if sentence.len() < 2 {
        return Err(Error::NoParse { n: sentence.len() });
    }
    if let Some(&w) = sentence.iter().find(|&&w| w >= vocab) {
        return Err(Error::Data(format!("token id {} outside vocabulary of size {}", w, vocab)));
    }
    Ok(())
}

fn check_span(n: usize, (i, j): (usize, usize)) -> Result<()> {
    if i < j && j <= n && j - i >= 2 {
        Ok(())
    } else {
        Err(Error::InvalidSpan { start: i, end: j, n })
    }
}

/// Runs the inside algorithm on `tape`.
pub fn inside(tape: &mut Tape, rules: &RuleProbs, sentence: &[usize]) -> Result<Chart> {
    check_sentence(sentence, rules.vocab)?;
    let n = sentence.len();
    let (nt, pt, v) = (rules.nonterminals, rules.preterminals, rules.vocab);
    let m = nt + pt;

    // Binary rule blocks by child kind: [N, |left| * |right|].
    let mut block = |left: std::ops::Range<usize>, right: std::ops::Range<usize>| {
        let mut idx = Vec::with_capacity(nt * left.len() * right.len());
        for a in 0..nt {
            for b in left.clone() {
                for c in right.clone() {
                    idx.push(a * m * m + b * m + c);
                }
            }
        }
        let cols = left.len() * right.len();
        tape.gather(rules.binary, Arc::from(idx), &[nt, cols])
    };
    let blocks = [
        [block(0..nt, 0..nt), block(0..nt, nt..m)],
        [block(nt..m, 0..nt), block(nt..m, nt..m)],
    ];

    let mut cells = vec![None; (n + 1) * (n + 1)];
    let mut potentials = vec![None; (n + 1) * (n + 1)];
    for (i, &w) in sentence.iter().enumerate() {
        let idx: Arc<[usize]> = (0..pt).map(|t| t * v + w).collect();
        cells[cell_index(n, i, i + 1)] = Some(tape.gather(rules.emission, idx, &[pt]));
    }
    for (i, j) in all_spans(n) {
        let mut parts = Vec::with_capacity(j - i - 1);
        for k in i + 1..j {
            let left = cells[cell_index(n, i, k)].unwrap();
            let right = cells[cell_index(n, k, j)].unwrap();
            let (la, lb) = (tape.shape(left)[0], tape.shape(right)[0]);
            let l = tape.repeat(left, 1, lb);
            let r = tape.repeat(right, 0, la);
            let pair = tape.add(l, r);
            let pair = tape.reshape(pair, &[la * lb]);
            let pair = tape.repeat(pair, 0, nt);
            let scores = tape.add(pair, blocks[usize::from(k - i == 1)][usize::from(j - k == 1)]);
            parts.push(tape.logsumexp(scores, 1));
        }
        let combined = if parts.len() == 1 {
            parts[0]
        } else {
            let s = parts.len();
            let stacked = tape.concat(&parts);
            let stacked = tape.reshape(stacked, &[s, nt]);
            tape.logsumexp(stacked, 0)
        };
        let potential = tape.zeros(&[nt]);
        potentials[cell_index(n, i, j)] = Some(potential);
        cells[cell_index(n, i, j)] = Some(tape.add(combined, potential));
    }
    let top = tape.add(rules.root, cells[cell_index(n, 0, n)].unwrap());
    let log_z = tape.logsumexp(top, 0);
    Ok(Chart { n, nonterminals: nt, cells, potentials, log_z })
}

/// A span's marginal and label posterior as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct SpanWeight {
    pub span: (usize, usize),
    /// Scalar `p((i, j) | w)`.
    pub mu: Var,
    /// `[N]`: `p(k | (i, j), w)`.
    pub posterior: Var,
}

impl Chart {
    /// Log inside scores of span `(i, j)`: preterminals for width 1,
    /// nonterminals otherwise.
    pub fn cell(&self, i: usize, j: usize) -> Var {
        self.cells[cell_index(self.n, i, j)].expect("no such cell")
    }

    pub fn potential(&self, i: usize, j: usize) -> Result<Var> {
        check_span(self.n, (i, j))?;
        Ok(self.potentials[cell_index(self.n, i, j)].unwrap())
    }

    pub fn log_likelihood(&self, tape: &Tape) -> f64 {
        tape.scalar_value(self.log_z)
    }

    /// Span marginals from a backward pass over the chart.
    pub fn marginals(&self, tape: &Tape) -> Result<SpanMarginals> {
        let adj = tape.backward(self.log_z)?;
        let k = self.nonterminals;
        let mut labeled = vec![0.0; (self.n + 1) * (self.n + 1) * k];
        for (i, j) in all_spans(self.n) {
            let c = cell_index(self.n, i, j);
            let g = adj.wrt(tape, self.potentials[c].unwrap());
            labeled[c * k..(c + 1) * k].copy_from_slice(&g);
        }
        Ok(SpanMarginals { n: self.n, nonterminals: k, labeled })
    }

    /// Marginals and label posteriors of `spans` as differentiable nodes,
    /// recorded through a re-differentiable backward pass.
    pub fn marginal_nodes(&self, tape: &mut Tape, spans: &[(usize, usize)]) -> Result<Vec<SpanWeight>> {
        let mut wrt = Vec::with_capacity(spans.len());
        for &s in spans {
            wrt.push(self.potential(s.0, s.1)?);
        }
        let labeled = tape.grad_graph(self.log_z, &wrt)?;
        let k = self.nonterminals;
        let mut out = Vec::with_capacity(spans.len());
        for (&span, &lab) in spans.iter().zip(&labeled) {
            let mu = tape.sum(lab);
            let posterior = if tape.scalar_value(mu) < 1e-12 {
                tape.constant(vec![1.0 / k as f64; k], &[k])
            } else {
                let spread = tape.repeat(mu, 0, k);
                tape.div(lab, spread)
            };
            out.push(SpanWeight { span, mu, posterior });
        }
        Ok(out)
    }

    /// `Σ_c μ(c)·h(c)` over the keyed spans with `h` held fixed, and its
    /// gradient with respect to every parameter on the tape.
    pub fn expected_loss_gradient(
        &self,
        tape: &mut Tape,
        span_losses: &[((usize, usize), f64)],
    ) -> Result<(f64, GradientMap)> {
        let mut wrt = Vec::with_capacity(span_losses.len());
        for &(s, _) in span_losses {
            wrt.push(self.potential(s.0, s.1)?);
        }
        let direction: Vec<f64> = span_losses.iter().map(|&(_, h)| h).collect();
        Ok(tape.directional_grad(self.log_z, &wrt, &direction)?)
    }
}

/// Posterior span and labelled-span probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanMarginals {
    pub n: usize,
    pub nonterminals: usize,
    labeled: Vec<f64>,
}

impl SpanMarginals {
    /// `p(k, (i, j) | w)` for every label `k`.
    pub fn labeled(&self, i: usize, j: usize) -> Result<&[f64]> {
        check_span(self.n, (i, j))?;
        let c = cell_index(self.n, i, j);
        Ok(&self.labeled[c * self.nonterminals..(c + 1) * self.nonterminals])
    }

    pub fn mu(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.labeled(i, j)?.iter().sum())
    }

    /// `labeled / mu`, or uniform when `mu < 1e-12`.
    pub fn label_posterior(&self, i: usize, j: usize) -> Result<Vec<f64>> {
        let lab = self.labeled(i, j)?;
        let mu: f64 = lab.iter().sum();
        if mu < 1e-12 {
            return Ok(vec![1.0 / self.nonterminals as f64; self.nonterminals]);
        }
        Ok(lab.iter().map(|x| x / mu).collect())
    }

    /// Sum of `mu` over every width >= 2 span; `n - 1` up to rounding.
    pub fn total(&self) -> f64 {
        all_spans(self.n).into_iter().map(|(i, j)| self.mu(i, j).unwrap()).sum()
    }
}

/// Inside log-likelihood of a sentence under fixed tables.
pub fn log_likelihood(rules: &RuleTables, sentence: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let r = rules.record(&mut tape);
    Ok(inside(&mut tape, &r, sentence)?.log_likelihood(&tape))
}

/// Span marginals of a sentence under fixed tables.
pub fn span_marginals(rules: &RuleTables, sentence: &[usize]) -> Result<SpanMarginals> {
    let mut tape = Tape::new();
    let r = rules.record(&mut tape);
    inside(&mut tape, &r, sentence)?.marginals(&tape)
}

/// `Σ μ(c)·h(c)` over the keyed spans.
pub fn expected_span_loss(
    marginals: &SpanMarginals,
    span_losses: &[((usize, usize), f64)],
) -> Result<f64> {
    let mut total = 0.0;
    for &((i, j), h) in span_losses {
        total += marginals.mu(i, j)? * h;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Constituent {
    pub start: usize,
    pub end: usize,
    pub label: usize,
}

/// A labelled binary derivation: width >= 2 constituents in pre-order and one
/// preterminal per word.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseTree {
    pub n: usize,
    pub nodes: Vec<Constituent>,
    pub tags: Vec<usize>,
    /// Joint log-probability of the derivation and the sentence.
    pub log_prob: f64,
}

impl ParseTree {
    /// Unlabelled width >= 2 spans, sorted.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut s: Vec<_> = self.nodes.iter().map(|c| (c.start, c.end)).collect();
        s.sort_unstable();
        s
    }

    /// Bracketed form with nonterminal `k` written as `NT{k}` and bare words.
    pub fn to_tree<S: AsRef<str>>(&self, words: &[S]) -> Tree {
        let spans: Vec<LabeledSpan> = self
            .nodes
            .iter()
            .map(|c| LabeledSpan { start: c.start, end: c.end, label: format!("NT{}", c.label) })
            .collect();
        Tree::from_spans(words, &spans)
    }

    /// True when the spans form a binary bracketing of the sentence.
    pub fn is_binary_bracketing(&self) -> bool {
        let spans = self.spans();
        let has = |i: usize, j: usize| j - i == 1 || spans.binary_search(&(i, j)).is_ok();
        spans.len() == self.n - 1
            && has(0, self.n)
            && spans.iter().all(|&(i, j)| (i + 1..j).filter(|&k| has(i, k) && has(k, j)).count() == 1)
    }
}

/// Max-product CYK. Ties go to the smallest split, then the smallest left
/// label, then the smallest right label; the root label likewise.
pub fn map_parse(rules: &RuleTables, sentence: &[usize]) -> Result<ParseTree> {
    check_sentence(sentence, rules.vocab)?;
    let n = sentence.len();
    let (nt, pt) = (rules.nonterminals, rules.preterminals);
    let width = |i: usize, j: usize| if j - i == 1 { pt } else { nt };
    let offset = |i: usize, j: usize| if j - i == 1 { nt } else { 0 };

    let mut best: Vec<Vec<f64>> = vec![Vec::new(); (n + 1) * (n + 1)];
    let mut back: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); (n + 1) * (n + 1)];
    for (i, &w) in sentence.iter().enumerate() {
        best[cell_index(n, i, i + 1)] = (0..pt).map(|t| rules.emission_logp(t, w)).collect();
    }
    for (i, j) in all_spans(n) {
        let mut cell = vec![None::<f64>; nt];
        let mut ptr = vec![(0, 0, 0); nt];
        for k in i + 1..j {
            let (lb, rb) = (&best[cell_index(n, i, k)], &best[cell_index(n, k, j)]);
            let (lo, ro) = (offset(i, k), offset(k, j));
            for b in 0..width(i, k) {
                for c in 0..width(k, j) {
                    let children = lb[b] + rb[c];
                    for a in 0..nt {
                        let s = rules.binary_logp(a, b + lo, c + ro) + children;
                        if cell[a].is_none_or(|cur| s > cur) {
                            cell[a] = Some(s);
                            ptr[a] = (k, b, c);
                        }
                    }
                }
            }
        }
        best[cell_index(n, i, j)] = cell.into_iter().map(Option::unwrap).collect();
        back[cell_index(n, i, j)] = ptr;
    }
    let top = &best[cell_index(n, 0, n)];
    let mut root = (0, rules.root[0] + top[0]);
    for (a, &s) in top.iter().enumerate().skip(1) {
        if rules.root[a] + s > root.1 {
            root = (a, rules.root[a] + s);
        }
    }

    let mut nodes = Vec::with_capacity(n - 1);
    let mut tags = vec![0; n];
    let mut stack = vec![(0, n, root.0)];
    while let Some((i, j, label)) = stack.pop() {
        if j - i == 1 {
            tags[i] = label;
            continue;
        }
        nodes.push(Constituent { start: i, end: j, label });
        let (k, b, c) = back[cell_index(n, i, j)][label];
        stack.push((k, j, c));
        stack.push((i, k, b));
    }
    Ok(ParseTree { n, nodes, tags, log_prob: root.1 })
}

/// Largest sentence [`enumerate_trees`] accepts.
pub const ENUMERATION_LIMIT: usize = 8;

/// Every binary bracketing of `n` words as sorted width >= 2 span lists.
pub fn bracketings(n: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(i: usize, j: usize) -> Vec<Vec<(usize, usize)>> {
        if j - i == 1 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for k in i + 1..j {
            let rights = go(k, j);
            for l in go(i, k) {
                for r in &rights {
                    let mut s = vec![(i, j)];
                    s.extend_from_slice(&l);
                    s.extend_from_slice(r);
                    s.sort_unstable();
                    out.push(s);
                }
            }
        }
        out
    }
    if n == 0 {
        return Vec::new();
    }
    go(0, n)
}

/// Every labelled derivation of the sentence with non-zero probability.
pub fn enumerate_trees(rules: &RuleTables, sentence: &[usize]) -> Result<Vec<ParseTree>> {
    let n = sentence.len();
    if n > ENUMERATION_LIMIT {
        return Err(Error::TooLong { n, limit: ENUMERATION_LIMIT });
    }
    check_sentence(sentence, rules.vocab)?;
    let nt = rules.nonterminals;

    type Partial = (Vec<Constituent>, Vec<(usize, usize)>, f64);
    // Derivations of (i, j) rooted in joint symbol `sym`; tags as (position, tag).
    fn derive(rules: &RuleTables, sentence: &[usize], i: usize, j: usize, sym: usize) -> Vec<Partial> {
        let nt = rules.nonterminals;
        if j - i == 1 {
            if sym < nt {
                return Vec::new();
            }
            let lp = rules.emission_logp(sym - nt, sentence[i]);
            return if lp > f64::NEG_INFINITY { vec![(Vec::new(), vec![(i, sym - nt)], lp)] } else { Vec::new() };
        }
        if sym >= nt {
            return Vec::new();
        }
        let mut out = Vec::new();
        for k in i + 1..j {
            let lsyms: Vec<usize> = if k - i == 1 { (nt..rules.symbols()).collect() } else { (0..nt).collect() };
            let rsyms: Vec<usize> = if j - k == 1 { (nt..rules.symbols()).collect() } else { (0..nt).collect() };
            for &b in &lsyms {
                for &c in &rsyms {
                    let rule = rules.binary_logp(sym, b, c);
                    if rule == f64::NEG_INFINITY {
                        continue;
                    }
                    let lefts = derive(rules, sentence, i, k, b);
                    if lefts.is_empty() {
                        continue;
                    }
                    let rights = derive(rules, sentence, k, j, c);
                    for (ln, lt, lp) in &lefts {
                        for (rn, rt, rp) in &rights {
                            let mut nodes = vec![Constituent { start: i, end: j, label: sym }];
                            nodes.extend_from_slice(ln);
                            nodes.extend_from_slice(rn);
                            let mut tags = lt.clone();
                            tags.extend_from_slice(rt);
                            out.push((nodes, tags, rule + lp + rp));
                        }
                    }
                }
            }
        }
        out
    }

    let mut trees = Vec::new();
    for a in 0..nt {
        if rules.root[a] == f64::NEG_INFINITY {
            continue;
        }
        for (nodes, tag_list, lp) in derive(rules, sentence, 0, n, a) {
            let mut tags = vec![0; n];
            for (pos, t) in tag_list {
                tags[pos] = t;
            }
            trees.push(ParseTree { n, nodes, tags, log_prob: rules.root[a] + lp });
        }
    }
    Ok(trees)
}
