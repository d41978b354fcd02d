//! A small grounded corpus sampled from a hand-written PCFG. Nouns carry
//! fixed random "concept" vectors; each sentence's image feature is the
//! normalized sum of its nouns' concepts plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::FeatureTable;
use crate::error::{Error, Result};
use crate::grammar::RuleTables;
use crate::tree::{Node, Tree};

/// A CNF PCFG over named symbols. Binary children use joint ids:
/// nonterminals first, then preterminals.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGrammar {
    pub nonterminals: Vec<String>,
    pub preterminals: Vec<String>,
    pub words: Vec<String>,
    pub root: Vec<f64>,
    pub binary: Vec<(usize, usize, usize, f64)>,
    pub emission: Vec<(usize, usize, f64)>,
    /// Word ids with an image concept.
    pub concepts: Vec<usize>,
}

const LEXICON: &[(&str, &[&str])] = &[
    ("Det", &["the", "a", "every", "this"]),
    ("Adj", &["big", "small", "red", "old", "happy"]),
    ("Noun", &["dog", "cat", "man", "woman", "ball", "car", "tree", "house", "bird", "horse", "boy", "girl"]),
    ("Name", &["john", "mary", "kim", "alex", "sam"]),
    ("Verb", &["sees", "chases", "holds", "likes", "watches", "finds", "follows", "pushes"]),
    ("IVerb", &["sleeps", "runs", "walks", "smiles", "sits"]),
    ("Prep", &["on", "in", "near", "under", "with"]),
    ("Adv", &["quickly", "slowly", "often", "quietly"]),
    ("Deg", &["very", "quite"]),
];

const RULES: &[(&str, &str, &str, f64)] = &[
    ("S", "NP", "VP", 0.4),
    ("S", "Name", "VP", 0.45),
    ("S", "NP", "IVerb", 0.1),
    ("S", "Name", "IVerb", 0.05),
    ("NP", "Det", "Noun", 0.45),
    ("NP", "Det", "NOM", 0.55),
    ("NOM", "Adj", "Noun", 0.4),
    ("NOM", "Adj", "NOM", 0.15),
    ("NOM", "Noun", "PP", 0.45),
    ("VP", "Verb", "NP", 0.35),
    ("VP", "Verb", "Name", 0.25),
    ("VP", "IVerb", "PP", 0.15),
    ("VP", "IVerb", "Adv", 0.1),
    ("VP", "IVerb", "ADVP", 0.05),
    ("VP", "Adv", "VP", 0.1),
    ("PP", "Prep", "NP", 0.6),
    ("PP", "Prep", "Name", 0.4),
    ("ADVP", "Deg", "Adv", 1.0),
];

impl ToyGrammar {
    /// Six nonterminals (S, NP, NOM, VP, PP, ADVP), nine preterminals and
    /// fifty words. Common nouns and names are concepts.
    pub fn standard() -> ToyGrammar {
        let nonterminals: Vec<String> = ["S", "NP", "NOM", "VP", "PP", "ADVP"].map(String::from).to_vec();
        let preterminals: Vec<String> = LEXICON.iter().map(|(t, _)| t.to_string()).collect();
        let sym = |name: &str| {
            nonterminals
                .iter()
                .position(|n| n == name)
                .or_else(|| preterminals.iter().position(|p| p == name).map(|p| p + nonterminals.len()))
                .unwrap()
        };
        let binary = RULES.iter().map(|&(a, b, c, p)| (sym(a), sym(b), sym(c), p)).collect();
        let mut words = Vec::new();
        let mut emission = Vec::new();
        let mut concepts = Vec::new();
        for (t, (tag, list)) in LEXICON.iter().enumerate() {
            for w in list.iter() {
                if *tag == "Noun" || *tag == "Name" {
                    concepts.push(words.len());
                }
                emission.push((t, words.len(), 1.0 / list.len() as f64));
                words.push(w.to_string());
            }
        }
        let mut root = vec![0.0; nonterminals.len()];
        root[0] = 1.0;
        ToyGrammar { nonterminals, preterminals, words, root, binary, emission, concepts }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p, v) = (self.nonterminals.len(), self.preterminals.len(), self.words.len());
        let bad = |msg: String| Err(Error::InvalidGrammar(msg));
        if self.root.len() != n {
            return bad("root distribution has the wrong length".into());
        }
        let mut totals = vec![0.0; n];
        for &(a, b, c, prob) in &self.binary {
            if a >= n || b >= n + p || c >= n + p || !(0.0..=1.0).contains(&prob) {
                return bad(format!("malformed binary rule ({}, {}, {}, {})", a, b, c, prob));
            }
            totals[a] += prob;
        }
        for (a, t) in totals.iter().enumerate() {
            if (t - 1.0).abs() > 1e-9 {
                return bad(format!("rules of {} sum to {}", self.nonterminals[a], t));
            }
        }
        let mut totals = vec![0.0; p];
        for &(t, w, prob) in &self.emission {
            if t >= p || w >= v || !(0.0..=1.0).contains(&prob) {
                return bad(format!("malformed emission ({}, {}, {})", t, w, prob));
            }
            totals[t] += prob;
        }
        for (t, s) in totals.iter().enumerate() {
            if (s - 1.0).abs() > 1e-9 {
                return bad(format!("emissions of {} sum to {}", self.preterminals[t], s));
            }
        }
        if (self.root.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("root distribution does not sum to 1".into());
        }
        Ok(())
    }

    /// Log tables over word ids `0..words.len()`.
    pub fn rule_tables(&self) -> RuleTables {
        let (n, p, v) = (self.nonterminals.len(), self.preterminals.len(), self.words.len());
        let m = n + p;
        let mut binary = vec![0.0; n * m * m];
        for &(a, b, c, prob) in &self.binary {
            binary[a * m * m + b * m + c] += prob;
        }
        let mut emission = vec![0.0; p * v];
        for &(t, w, prob) in &self.emission {
            emission[t * v + w] += prob;
        }
        RuleTables::from_probs(n, p, v, &self.root, &binary, &emission)
    }

    fn pick<R: Rng>(rng: &mut R, weights: impl Iterator<Item = f64> + Clone) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, w) in weights.enumerate() {
            acc += w;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    fn expand<R: Rng>(&self, rng: &mut R, sym: usize, words: &mut Vec<usize>, budget: usize) -> Option<Node> {
        if words.len() > budget {
            return None;
        }
        let n = self.nonterminals.len();
        if sym >= n {
            let t = sym - n;
            let options: Vec<&(usize, usize, f64)> = self.emission.iter().filter(|e| e.0 == t).collect();
            let k = Self::pick(rng, options.iter().map(|e| e.2));
            let w = options[k].1;
            words.push(w);
            return Some(Node::Phrase {
                label: self.preterminals[t].clone(),
                children: vec![Node::Word(self.words[w].clone())],
            });
        }
        let options: Vec<&(usize, usize, usize, f64)> = self.binary.iter().filter(|r| r.0 == sym).collect();
        let k = Self::pick(rng, options.iter().map(|r| r.3));
        let (_, b, c, _) = *options[k];
        let left = self.expand(rng, b, words, budget)?;
        let right = self.expand(rng, c, words, budget)?;
        Some(Node::Phrase { label: self.nonterminals[sym].clone(), children: vec![left, right] })
    }

    /// Draws a sentence of at most `max_len` words (by rejection) with its tree.
    pub fn sample<R: Rng>(&self, rng: &mut R, max_len: usize) -> (Vec<usize>, Tree) {
        loop {
            let start = Self::pick(rng, self.root.iter().copied());
            let mut words = Vec::new();
            if let Some(root) = self.expand(rng, start, &mut words, max_len) {
                if words.len() <= max_len {
                    return (words, Tree { root });
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { sentences: 2000, feature_dim: 32, noise: 0.1, seed: 0, max_len: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub sentences: Vec<Vec<String>>,
    pub trees: Vec<Tree>,
    /// One row per sentence.
    pub features: FeatureTable,
    /// Concept vector of each concept word, in `ToyGrammar::concepts` order.
    pub concept_vectors: Vec<Vec<f64>>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn generate_synthetic(grammar: &ToyGrammar, cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    grammar.validate()?;
    if cfg.feature_dim == 0 {
        return Err(Error::Config("feature dimension must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let concept_vectors: Vec<Vec<f64>> =
        grammar.concepts.iter().map(|_| unit_vector(&mut rng, cfg.feature_dim)).collect();
    let mut sentences = Vec::with_capacity(cfg.sentences);
    let mut trees = Vec::with_capacity(cfg.sentences);
    let mut data = Vec::with_capacity(cfg.sentences * cfg.feature_dim);
    for _ in 0..cfg.sentences {
        let (ids, tree) = grammar.sample(&mut rng, cfg.max_len);
        let mut feature = vec![0.0; cfg.feature_dim];
        for w in &ids {
            if let Some(k) = grammar.concepts.iter().position(|c| c == w) {
                feature.iter_mut().zip(&concept_vectors[k]).for_each(|(f, c)| *f += c);
            }
        }
        let norm = feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            feature.iter_mut().for_each(|f| *f /= norm);
        }
        for f in feature.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *f += cfg.noise * eps;
        }
        data.extend(feature.iter().map(|&x| x as f32));
        sentences.push(ids.iter().map(|&w| grammar.words[w].clone()).collect());
        trees.push(tree);
    }
    let features = FeatureTable::new(cfg.sentences, cfg.feature_dim, data)?;
    Ok(SyntheticCorpus { sentences, trees, features, concept_vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::{enumerate_trees, log_likelihood};

    #[test]
    fn standard_grammar_is_valid() {
        let g = ToyGrammar::standard();
        g.validate().unwrap();
        assert_eq!(g.nonterminals.len(), 6);
        assert_eq!(g.words.len(), 50);
        assert!(g.rule_tables().normalization_error() < 1e-12);
    }

    #[test]
    fn unnormalized_grammar_is_rejected() {
        let mut g = ToyGrammar::standard();
        g.binary[0].3 = 0.5;
        assert!(matches!(g.validate(), Err(Error::InvalidGrammar(_))));
        assert!(generate_synthetic(&g, &SynthConfig::default()).is_err());
    }

    #[test]
    fn same_seed_same_corpus() {
        let g = ToyGrammar::standard();
        let cfg = SynthConfig { sentences: 50, ..Default::default() };
        let a = generate_synthetic(&g, &cfg).unwrap();
        assert_eq!(a, generate_synthetic(&g, &cfg).unwrap());
        assert_ne!(a, generate_synthetic(&g, &SynthConfig { seed: 1, ..cfg }).unwrap());
    }

    #[test]
    fn noiseless_single_concept_features_coincide() {
        let g = ToyGrammar::standard();
        let cfg = SynthConfig { sentences: 400, noise: 0.0, ..Default::default() };
        let c = generate_synthetic(&g, &cfg).unwrap();
        let nouns = |s: &[String]| -> Vec<String> {
            s.iter().filter(|w| g.concepts.iter().any(|&k| &g.words[k] == *w)).cloned().collect()
        };
        let mut checked = 0;
        for i in 0..c.sentences.len() {
            for j in i + 1..c.sentences.len() {
                if c.sentences[i] == c.sentences[j] && nouns(&c.sentences[i]).len() == 1 {
                    assert_eq!(c.features.row(i), c.features.row(j));
                    checked += 1;
                }
            }
        }
        // Same concept, different sentence: still identical.
        for i in 0..c.sentences.len() {
            for j in i + 1..c.sentences.len() {
                let (a, b) = (nouns(&c.sentences[i]), nouns(&c.sentences[j]));
                if a.len() == 1 && a == b {
                    assert_eq!(c.features.row(i), c.features.row(j));
                    checked += 1;
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn sampled_trees_agree_with_inside() {
        let g = ToyGrammar::standard();
        let tables = g.rule_tables();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 20 {
            let (ids, tree) = g.sample(&mut rng, 8);
            if ids.len() < 2 {
                continue;
            }
            let ll = log_likelihood(&tables, &ids).unwrap();
            assert!(ll.is_finite());
            let trees = enumerate_trees(&tables, &ids).unwrap();
            let mass: f64 = trees.iter().map(|t| t.log_prob.exp()).sum();
            assert!((mass.ln() - ll).abs() < 1e-9);
            let mut gold: Vec<(usize, usize)> = tree
                .constituents()
                .iter()
                .map(|c| (c.start, c.end))
                .collect();
            gold.sort_unstable();
            assert!(trees.iter().any(|t| t.spans() == gold));
            checked += 1;
        }
    }
}
