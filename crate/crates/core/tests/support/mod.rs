//! Independent oracles shared by the integration tests.
//!
//! The chart oracle never runs a chart: it enumerates every bracketing and,
//! on each fixed tree shape, sums or maximizes over labels with plain
//! tree-structured message passing in linear space.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::Rng;
use vcpcfg::chart::bracketings;
use vcpcfg::grammar::RuleTables;

/// Random rule tables with every row a softmax of `scale`-sized logits.
pub fn random_tables<R: Rng>(rng: &mut R, n: usize, p: usize, v: usize, scale: f64) -> RuleTables {
    let m = n + p;
    let mut row = |len: usize| -> Vec<f64> {
        let w: Vec<f64> = (0..len).map(|_| (scale * rng.random_range(-1.0..1.0f64)).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    };
    let root = row(n);
    let binary: Vec<f64> = (0..n).flat_map(|_| row(m * m)).collect();
    let emission: Vec<f64> = (0..p).flat_map(|_| row(v)).collect();
    RuleTables::from_probs(n, p, v, &root, &binary, &emission)
}

/// Every sentence over `0..v` of length `len`, in lexicographic order.
pub fn all_sentences(v: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                (0..v).map(move |w| {
                    let mut t = s.clone();
                    t.push(w);
                    t
                })
            })
            .collect();
    }
    out
}

/// Internal nodes `(i, k, j)` of each bracketing of `n` words, children
/// before parents.
fn shapes(n: usize) -> std::rc::Rc<Vec<Vec<(usize, usize, usize)>>> {
    thread_local! {
        static CACHE: std::cell::RefCell<BTreeMap<usize, std::rc::Rc<Vec<Vec<(usize, usize, usize)>>>>> =
            Default::default();
    }
    CACHE.with(|c| {
        c.borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                let all = bracketings(n)
                    .into_iter()
                    .map(|spans| {
                        let has = |i: usize, j: usize| j - i == 1 || spans.contains(&(i, j));
                        let mut nodes: Vec<_> = spans
                            .iter()
                            .map(|&(i, j)| {
                                let k = (i + 1..j).find(|&k| has(i, k) && has(k, j)).unwrap();
                                (i, k, j)
                            })
                            .collect();
                        nodes.sort_by_key(|&(i, _, j)| j - i);
                        nodes
                    })
                    .collect();
                std::rc::Rc::new(all)
            })
            .clone()
    })
}

pub struct Oracle {
    pub n: usize,
    pub nonterminals: usize,
    pub likelihood: f64,
    /// `p(k, (i, j) | w)`, indexed `[(i * (n + 1) + j) * N + k]`.
    pub labeled: Vec<f64>,
    /// Best labelled derivation's log score and its `(start, end, label)`s.
    pub best_log_prob: f64,
    pub best_spans: Vec<(usize, usize, usize)>,
    /// Gap between the best and second-best labelled derivations, in log
    /// space, as seen by the per-bracketing maxima.
    pub best_margin: f64,
}

impl Oracle {
    pub fn labeled(&self, (i, j): (usize, usize)) -> &[f64] {
        let c = i * (self.n + 1) + j;
        &self.labeled[c * self.nonterminals..(c + 1) * self.nonterminals]
    }

    pub fn mu(&self, span: (usize, usize)) -> f64 {
        self.labeled(span).iter().sum()
    }
}

pub fn oracle(rules: &RuleTables, sentence: &[usize]) -> Oracle {
    let n = sentence.len();
    let (nt, pt) = (rules.nonterminals, rules.preterminals);
    let m = nt + pt;
    let bin: Vec<f64> = rules.binary.iter().map(|x| x.exp()).collect();
    let root: Vec<f64> = rules.root.iter().map(|x| x.exp()).collect();
    let cells = (n + 1) * (n + 1);
    let at = |i: usize, j: usize| i * (n + 1) + j;
    // Per-cell vectors sized M; words use preterminal slots nt.., phrases 0..nt.
    let mut inside = vec![0.0; cells * m];
    let mut outside = vec![0.0; cells * m];
    let mut best = vec![0.0; cells * m];
    let mut arg = vec![(0usize, 0usize); cells * m];
    let mut joint = vec![0.0; cells * nt];
    let mut z = 0.0;
    let mut top_two = [(f64::NEG_INFINITY, Vec::new()), (f64::NEG_INFINITY, Vec::new())];

    for i in 0..n {
        for t in 0..pt {
            let e = rules.emission_logp(t, sentence[i]).exp();
            inside[at(i, i + 1) * m + nt + t] = e;
            best[at(i, i + 1) * m + nt + t] = e;
        }
    }
    let range = |i: usize, j: usize| if j - i == 1 { nt..m } else { 0..nt };
    for nodes in shapes(n).iter() {
        for &(i, k, j) in nodes {
            let (l, r, c) = (at(i, k) * m, at(k, j) * m, at(i, j) * m);
            for a in 0..nt {
                let (mut s, mut b_best, mut b_arg) = (0.0, -1.0, (0, 0));
                for b in range(i, k) {
                    for cc in range(k, j) {
                        let rule = bin[a * m * m + b * m + cc];
                        s += rule * inside[l + b] * inside[r + cc];
                        let v = rule * best[l + b] * best[r + cc];
                        if v > b_best {
                            b_best = v;
                            b_arg = (b, cc);
                        }
                    }
                }
                inside[c + a] = s;
                best[c + a] = b_best;
                arg[c + a] = b_arg;
            }
        }
        let top = at(0, n) * m;
        z += (0..nt).map(|a| root[a] * inside[top + a]).sum::<f64>();

        let a_best = (0..nt).fold(0, |acc, a| if root[a] * best[top + a] > root[acc] * best[top + acc] { a } else { acc });
        let score = (root[a_best] * best[top + a_best]).ln();
        if score > top_two[1].0 {
            let mut spans = Vec::new();
            let mut stack = vec![(0, n, a_best)];
            let split: BTreeMap<(usize, usize), usize> = nodes.iter().map(|&(i, k, j)| ((i, j), k)).collect();
            while let Some((i, j, a)) = stack.pop() {
                if j - i == 1 {
                    continue;
                }
                spans.push((i, j, a));
                let k = split[&(i, j)];
                let (b, c) = arg[at(i, j) * m + a];
                stack.push((i, k, b));
                stack.push((k, j, c));
            }
            spans.sort_unstable();
            top_two[1] = (score, spans);
            if top_two[1].0 > top_two[0].0 {
                top_two.swap(0, 1);
            }
        }

        // Outside, parents before children.
        for a in 0..nt {
            outside[top + a] = root[a];
        }
        for &(i, k, j) in nodes.iter().rev() {
            let (l, r, c) = (at(i, k) * m, at(k, j) * m, at(i, j) * m);
            for b in range(i, k) {
                outside[l + b] = 0.0;
            }
            for cc in range(k, j) {
                outside[r + cc] = 0.0;
            }
            for a in 0..nt {
                let o = outside[c + a];
                for b in range(i, k) {
                    for cc in range(k, j) {
                        let w = bin[a * m * m + b * m + cc] * o;
                        outside[l + b] += w * inside[r + cc];
                        outside[r + cc] += w * inside[l + b];
                    }
                }
            }
        }
        for &(i, _, j) in nodes {
            let c = at(i, j);
            for a in 0..nt {
                joint[c * nt + a] += inside[c * m + a] * outside[c * m + a];
            }
        }
    }
    joint.iter_mut().for_each(|x| *x /= z);
    let [(best_log_prob, best_spans), (second, _)] = top_two;
    Oracle {
        n,
        nonterminals: nt,
        likelihood: z,
        labeled: joint,
        best_log_prob,
        best_spans,
        best_margin: best_log_prob - second,
    }
}
