//! Unsupervised parsing metrics and branching baselines.
//!
//! All metrics are exact rationals. Trivial spans (width 1 and the whole
//! sentence) never take part in scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::chart::{Constituent, ParseTree};
use crate::error::{Error, Result};
use crate::tree::Tree;

pub type Rational = BigRational;

fn ratio(num: usize, den: usize) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

/// Non-trivial unlabelled spans of one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpanSet {
    pub n: usize,
    pub spans: BTreeSet<(usize, usize)>,
}

impl SpanSet {
    pub fn new(n: usize, spans: impl IntoIterator<Item = (usize, usize)>) -> Result<SpanSet> {
        let mut set = BTreeSet::new();
        for (start, end) in spans {
            if start >= end || end > n {
                return Err(Error::InvalidSpan { start, end, n });
            }
            if end - start >= 2 && !(start == 0 && end == n) {
                set.insert((start, end));
            }
        }
        Ok(SpanSet { n, spans: set })
    }

    pub fn from_tree(tree: &Tree) -> SpanSet {
        let n = tree.len();
        let spans = tree.constituents().into_iter().map(|c| (c.start, c.end));
        SpanSet::new(n, spans).expect("tree spans lie inside the sentence")
    }

    pub fn from_parse(tree: &ParseTree) -> SpanSet {
        SpanSet::new(tree.n, tree.spans()).expect("parse spans lie inside the sentence")
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    fn overlap(&self, other: &SpanSet) -> usize {
        self.spans.intersection(&other.spans).count()
    }
}

/// Non-trivial labelled gold spans. One span may carry several labels
/// (unary chains); each (span, label) pair counts once.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldSpans {
    pub n: usize,
    pub labeled: BTreeSet<(usize, usize, String)>,
}

impl GoldSpans {
    pub fn from_tree(tree: &Tree) -> GoldSpans {
        let n = tree.len();
        let labeled = tree
            .constituents()
            .into_iter()
            .filter(|c| c.width() >= 2 && !(c.start == 0 && c.end == n))
            .map(|c| (c.start, c.end, c.label))
            .collect();
        GoldSpans { n, labeled }
    }

    pub fn unlabeled(&self) -> SpanSet {
        SpanSet { n: self.n, spans: self.labeled.iter().map(|(i, j, _)| (*i, *j)).collect() }
    }

    pub fn labels(&self) -> BTreeSet<&str> {
        self.labeled.iter().map(|(_, _, l)| l.as_str()).collect()
    }
}

fn check_pair(pred: &SpanSet, gold_n: usize) -> Result<()> {
    if pred.n != gold_n {
        return Err(Error::LengthMismatch { left: pred.n, right: gold_n });
    }
    Ok(())
}

fn check_aligned(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    Ok(())
}

fn f1_from_counts(matched: usize, predicted: usize, gold: usize) -> Rational {
    match (predicted, gold) {
        (0, 0) => Rational::one(),
        (0, _) | (_, 0) => Rational::zero(),
        // 2PR/(P+R) with P = m/p, R = m/g.
        _ => ratio(2 * matched, predicted + gold),
    }
}

pub fn sentence_f1(pred: &SpanSet, gold: &SpanSet) -> Result<Rational> {
    check_pair(pred, gold.n)?;
    Ok(f1_from_counts(pred.overlap(gold), pred.len(), gold.len()))
}

/// Micro-averaged F1 over pooled counts.
pub fn corpus_f1(preds: &[SpanSet], golds: &[SpanSet]) -> Result<Rational> {
    let c = Counts::collect(preds, golds)?;
    Ok(f1_from_counts(c.matched, c.predicted, c.gold))
}

/// Unweighted mean of per-sentence F1.
pub fn mean_sentence_f1(preds: &[SpanSet], golds: &[SpanSet]) -> Result<Rational> {
    check_aligned(preds.len(), golds.len())?;
    if preds.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let scores: Vec<Rational> =
        preds.par_iter().zip(golds.par_iter()).map(|(p, g)| sentence_f1(p, g)).collect::<Result<_>>()?;
    Ok(mean(scores))
}

fn mean(values: Vec<Rational>) -> Rational {
    let n = values.len();
    values.into_iter().fold(Rational::zero(), |a, b| a + b) / ratio(n, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub sentences: usize,
    pub matched: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn collect(preds: &[SpanSet], golds: &[SpanSet]) -> Result<Counts> {
        check_aligned(preds.len(), golds.len())?;
        let mut c = Counts { sentences: preds.len(), ..Default::default() };
        for (p, g) in preds.iter().zip(golds) {
            check_pair(p, g.n)?;
            c.matched += p.overlap(g);
            c.predicted += p.len();
            c.gold += g.len();
        }
        Ok(c)
    }
}

/// Fraction of gold spans labelled `label` found among the predictions;
/// `None` when the corpus has no such span.
pub fn label_recall(preds: &[SpanSet], golds: &[GoldSpans], label: &str) -> Result<Option<Rational>> {
    check_aligned(preds.len(), golds.len())?;
    let (mut hit, mut total) = (0, 0);
    for (p, g) in preds.iter().zip(golds) {
        check_pair(p, g.n)?;
        for (i, j, l) in &g.labeled {
            if l == label {
                total += 1;
                hit += p.spans.contains(&(*i, *j)) as usize;
            }
        }
    }
    Ok((total > 0).then(|| ratio(hit, total)))
}

/// Recall for every label present in the gold spans.
pub fn label_recalls(preds: &[SpanSet], golds: &[GoldSpans]) -> Result<BTreeMap<String, Rational>> {
    check_aligned(preds.len(), golds.len())?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        check_pair(p, g.n)?;
        for (i, j, l) in &g.labeled {
            let e = counts.entry(l.clone()).or_default();
            e.0 += p.spans.contains(&(*i, *j)) as usize;
            e.1 += 1;
        }
    }
    Ok(counts.into_iter().map(|(l, (h, t))| (l, ratio(h, t))).collect())
}

/// Recall restricted to gold spans of each width; widths without gold spans
/// are absent.
pub fn recall_by_length(preds: &[SpanSet], golds: &[SpanSet]) -> Result<BTreeMap<usize, Rational>> {
    check_aligned(preds.len(), golds.len())?;
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        check_pair(p, g.n)?;
        for &(i, j) in &g.spans {
            let e = counts.entry(j - i).or_default();
            e.0 += p.spans.contains(&(i, j)) as usize;
            e.1 += 1;
        }
    }
    Ok(counts.into_iter().map(|(w, (h, t))| (w, ratio(h, t))).collect())
}

/// Mean over unordered run pairs of the mean sentence F1 between the two
/// runs. Returns the score and the number of pairs.
pub fn self_f1(runs: &[Vec<SpanSet>]) -> Result<(Rational, usize)> {
    if runs.len() < 2 {
        return Err(Error::Config(format!("self-F1 needs at least two runs, got {}", runs.len())));
    }
    let mut scores = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            scores.push(mean_sentence_f1(&runs[a], &runs[b])?);
        }
    }
    let pairs = scores.len();
    Ok((mean(scores), pairs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub corpus_f1: Rational,
    pub sentence_f1: Rational,
    pub label_recall: BTreeMap<String, Rational>,
    pub recall_by_length: BTreeMap<usize, Rational>,
    pub counts: Counts,
}

pub fn evaluate(preds: &[SpanSet], golds: &[GoldSpans]) -> Result<EvalReport> {
    let gold_sets: Vec<SpanSet> = golds.iter().map(GoldSpans::unlabeled).collect();
    Ok(EvalReport {
        corpus_f1: corpus_f1(preds, &gold_sets)?,
        sentence_f1: mean_sentence_f1(preds, &gold_sets)?,
        label_recall: label_recalls(preds, golds)?,
        recall_by_length: recall_by_length(preds, &gold_sets)?,
        counts: Counts::collect(preds, &gold_sets)?,
    })
}

/// Decimal rendering rounded half away from zero.
pub fn fixed(value: &Rational, places: usize) -> String {
    let scale = BigInt::from(10).pow(places as u32);
    let scaled = value.abs() * Rational::from_integer(scale.clone());
    let rounded = (scaled + ratio(1, 2)).floor().to_integer();
    let (int, frac) = (&rounded / &scale, &rounded % &scale);
    let sign = if value.is_negative() && !rounded.is_zero() { "-" } else { "" };
    if places == 0 {
        format!("{}{}", sign, int)
    } else {
        format!("{}{}.{:0>width$}", sign, int, frac.to_string(), width = places)
    }
}

pub fn to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "C-F1  {}", fixed(&self.corpus_f1, 3));
        let _ = writeln!(s, "S-F1  {}", fixed(&self.sentence_f1, 3));
        let _ = writeln!(
            s,
            "sentences {}  predicted {}  gold {}  matched {}",
            self.counts.sentences, self.counts.predicted, self.counts.gold, self.counts.matched
        );
        if !self.label_recall.is_empty() {
            let _ = writeln!(s, "label recall");
            for (l, r) in &self.label_recall {
                let _ = writeln!(s, "  {:<8} {}", l, fixed(r, 3));
            }
        }
        if !self.recall_by_length.is_empty() {
            let _ = writeln!(s, "recall by length");
            for (w, r) in &self.recall_by_length {
                let _ = writeln!(s, "  {:<8} {}", w, fixed(r, 3));
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "metric,value\ncorpus_f1,{}\nsentence_f1,{}\nsentences,{}\npredicted,{}\ngold,{}\nmatched,{}\n",
            fixed(&self.corpus_f1, 6),
            fixed(&self.sentence_f1, 6),
            self.counts.sentences,
            self.counts.predicted,
            self.counts.gold,
            self.counts.matched
        )
    }

    pub fn label_csv(&self) -> String {
        let mut s = String::from("label,recall\n");
        for (l, r) in &self.label_recall {
            let _ = writeln!(s, "{},{}", l, fixed(r, 6));
        }
        s
    }

    pub fn length_csv(&self) -> String {
        let mut s = String::from("length,recall\n");
        for (w, r) in &self.recall_by_length {
            let _ = writeln!(s, "{},{}", w, fixed(r, 6));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Left,
    Right,
    Random,
}

fn ln_catalan(k: usize) -> f64 {
    (2..=k).map(|i| ((k + i) as f64 / i as f64).ln()).sum()
}

/// A branching baseline. `Random` draws uniformly over binary bracketings:
/// split `s` of `(i, j)` is chosen with weight Cat(s-i-1)·Cat(j-s-1).
pub fn baseline_tree<R: Rng>(n: usize, mode: Baseline, rng: &mut R) -> Result<ParseTree> {
    if n < 2 {
        return Err(Error::NoParse { n });
    }
    let mut nodes = Vec::with_capacity(n - 1);
    let mut stack = vec![(0, n)];
    while let Some((i, j)) = stack.pop() {
        if j - i < 2 {
            continue;
        }
        nodes.push(Constituent { start: i, end: j, label: 0 });
        let k = match mode {
            Baseline::Left => j - 1,
            Baseline::Right => i + 1,
            Baseline::Random => {
                let logw: Vec<f64> =
                    (i + 1..j).map(|s| ln_catalan(s - i - 1) + ln_catalan(j - s - 1)).collect();
                let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
                let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
                let mut pick = w.len() - 1;
                for (idx, x) in w.iter().enumerate() {
                    if u < *x {
                        pick = idx;
                        break;
                    }
                    u -= x;
                }
                i + 1 + pick
            }
        };
        stack.push((k, j));
        stack.push((i, k));
    }
    Ok(ParseTree { n, nodes, tags: vec![0; n], log_prob: 0.0 })
}

/// Baselines for a corpus; random draws share one stream seeded by `seed`.
pub fn baseline_trees(lengths: &[usize], mode: Baseline, seed: u64) -> Result<Vec<ParseTree>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths.iter().map(|&n| baseline_tree(n, mode, &mut rng)).collect()
}
