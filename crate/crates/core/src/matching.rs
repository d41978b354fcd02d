//! Image-text matching: feature projection, the triplet hinge loss, negative
//! selection, and the span-marginal-weighted expected loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{Tape, Var};

use crate::error::{Error, Result};
use crate::params::{xavier, Bindings, ParamStore};

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// Example `(i + 1) mod B`, with its highest-marginal span.
    Rotation,
    /// A seeded uniform draw among the other examples.
    Random,
    /// Hinge averaged over every other example in the batch.
    AllInBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingConfig {
    pub margin: f64,
    pub negatives: NegativeMode,
    /// Seed for [`NegativeMode::Random`].
    pub seed: u64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig { margin: DEFAULT_MARGIN, negatives: NegativeMode::Rotation, seed: 0 }
    }
}

pub fn init_image_projection<R: Rng>(store: &mut ParamStore, feature_dim: usize, joint_dim: usize, rng: &mut R) {
    store.insert("img.w", &[joint_dim, feature_dim], xavier(rng, joint_dim, feature_dim));
    store.insert("img.b", &[joint_dim], vec![0.0; joint_dim]);
}

/// Affine projection of a raw feature vector into the joint space.
pub fn project_image(tape: &mut Tape, bind: &mut Bindings, feature: &[f64]) -> Result<Var> {
    let w = bind.var(tape, "img.w");
    let expected = tape.shape(w)[1];
    if feature.len() != expected {
        return Err(Error::DimensionMismatch { expected, got: feature.len() });
    }
    let b = bind.var(tape, "img.b");
    let x = tape.constant(feature.to_vec(), &[feature.len()]);
    Ok(tape.affine(w, x, b))
}

/// Cosine similarity of plain vectors; 0 when either norm is below 1e-12.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return Ok(0.0);
    }
    Ok(dot / (na * nb))
}

/// `[m(c', v) - m(c, v) + margin]₊ + [m(c, v') - m(c, v) + margin]₊`.
pub fn hinge_loss(tape: &mut Tape, c: Var, v: Var, c_neg: Var, v_neg: Var, margin: f64) -> Var {
    let pos = tape.cosine(c, v);
    let neg_c = tape.cosine(c_neg, v);
    let neg_v = tape.cosine(c, v_neg);
    let d1 = tape.sub(neg_c, pos);
    let d2 = tape.sub(neg_v, pos);
    let h1 = tape.hinge(d1, margin);
    let h2 = tape.hinge(d2, margin);
    tape.add(h1, h2)
}

/// The `ceil(n(n-1)/4)` shortest width >= 2 spans, by width then start.
pub fn select_spans(n: usize) -> Vec<(usize, usize)> {
    let budget = (n * n.saturating_sub(1)).div_ceil(4);
    crate::chart::all_spans(n).into_iter().take(budget).collect()
}

/// Index of the rotation negative for example `i`.
pub fn rotation_negative(batch_size: usize, i: usize) -> Result<usize> {
    if batch_size < 2 {
        return Err(Error::BatchTooSmall { size: batch_size });
    }
    Ok((i + 1) % batch_size)
}

/// Position of the largest value; the first one on ties.
pub fn highest_marginal(mu: &[f64]) -> usize {
    let mut best = 0;
    for (k, &m) in mu.iter().enumerate() {
        if m > mu[best] {
            best = k;
        }
    }
    best
}

/// One example's contribution: selected spans with their marginals and
/// vectors, and the projected image.
#[derive(Debug, Clone)]
pub struct MatchingItem {
    pub spans: Vec<(usize, usize)>,
    pub mu: Vec<Var>,
    pub vectors: Vec<Var>,
    pub image: Var,
}

impl MatchingItem {
    fn negative_span(&self, tape: &Tape) -> Var {
        let mu: Vec<f64> = self.mu.iter().map(|&m| tape.scalar_value(m)).collect();
        self.vectors[highest_marginal(&mu)]
    }
}

/// Hinge loss of every selected span of every example.
pub fn span_hinges(tape: &mut Tape, items: &[MatchingItem], cfg: &MatchingConfig) -> Result<Vec<Vec<Var>>> {
    let b = items.len();
    rotation_negative(b, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let negatives: Vec<Vec<usize>> = (0..b)
        .map(|i| match cfg.negatives {
            NegativeMode::Rotation => vec![(i + 1) % b],
            NegativeMode::Random => {
                let j = rng.random_range(0..b - 1);
                vec![if j >= i { j + 1 } else { j }]
            }
            NegativeMode::AllInBatch => (0..b).filter(|&j| j != i).collect(),
        })
        .collect();
    let neg_spans: Vec<Var> = items.iter().map(|it| it.negative_span(tape)).collect();
    let mut out = Vec::with_capacity(b);
    for (i, item) in items.iter().enumerate() {
        let mut hs = Vec::with_capacity(item.spans.len());
        for &c in &item.vectors {
            let mut terms: Vec<Var> = negatives[i]
                .iter()
                .map(|&j| hinge_loss(tape, c, item.image, neg_spans[j], items[j].image, cfg.margin))
                .collect();
            let h = if terms.len() == 1 {
                terms.pop().unwrap()
            } else {
                let k = terms.len();
                let s = tape.concat(&terms);
                let s = tape.sum(s);
                tape.scale(s, 1.0 / k as f64)
            };
            hs.push(h);
        }
        out.push(hs);
    }
    Ok(out)
}

fn total(tape: &mut Tape, terms: Vec<Var>) -> Var {
    if terms.is_empty() {
        return tape.scalar(0.0);
    }
    let s = tape.concat(&terms);
    tape.sum(s)
}

/// `Σ_i Σ_c μ(c)·h(c, v_i)` over the selected spans.
pub fn expected_matching_loss(tape: &mut Tape, items: &[MatchingItem], cfg: &MatchingConfig) -> Result<Var> {
    let hinges = span_hinges(tape, items, cfg)?;
    let mut terms = Vec::new();
    for (item, hs) in items.iter().zip(hinges) {
        for (&mu, h) in item.mu.iter().zip(hs) {
            terms.push(tape.mul(mu, h));
        }
    }
    Ok(total(tape, terms))
}

/// `Σ_i Σ_{c ∈ t_i} h(c, v_i)` over the selected spans that appear in each
/// example's tree.
pub fn point_estimate_loss(
    tape: &mut Tape,
    items: &[MatchingItem],
    trees: &[Vec<(usize, usize)>],
    cfg: &MatchingConfig,
) -> Result<Var> {
    if trees.len() != items.len() {
        return Err(Error::LengthMismatch { left: items.len(), right: trees.len() });
    }
    let hinges = span_hinges(tape, items, cfg)?;
    let mut terms = Vec::new();
    for ((item, hs), tree) in items.iter().zip(hinges).zip(trees) {
        for (span, h) in item.spans.iter().zip(hs) {
            if tree.contains(span) {
                terms.push(h);
            }
        }
    }
    Ok(total(tape, terms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_examples() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 0.0], &[h, h]).unwrap() - 0.70711).abs() < 1e-5);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    fn hinge_value(c: &[f64], v: &[f64], cn: &[f64], vn: &[f64], margin: f64) -> f64 {
        let mut tape = Tape::new();
        let [c, v, cn, vn] = [c, v, cn, vn].map(|x| tape.constant(x.to_vec(), &[x.len()]));
        let h = hinge_loss(&mut tape, c, v, cn, vn, margin);
        tape.scalar_value(h)
    }

    #[test]
    fn hinge_examples() {
        let e = [1.0, 0.0];
        // Every similarity equal.
        assert!((hinge_value(&e, &e, &e, &e, 0.2) - 0.4).abs() < 1e-15);
        // Margins satisfied.
        assert_eq!(hinge_value(&e, &e, &[-1.0, 0.0], &[0.0, 1.0], 0.2), 0.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let got = hinge_value(&e, &e, &[0.0, 1.0], &[h, h], 0.5);
        assert!((got - 0.20711).abs() < 1e-5);
    }

    #[test]
    fn span_budget_examples() {
        assert_eq!(select_spans(2), vec![(0, 2)]);
        assert_eq!(select_spans(4), vec![(0, 2), (1, 3), (2, 4)]);
        assert_eq!(select_spans(5), vec![(0, 2), (1, 3), (2, 4), (3, 5), (0, 3)]);
        assert_eq!(select_spans(3), vec![(0, 2), (1, 3)]);
    }

    #[test]
    fn rotation_examples() {
        assert_eq!(rotation_negative(2, 0).unwrap(), 1);
        assert_eq!(rotation_negative(2, 1).unwrap(), 0);
        assert_eq!(rotation_negative(5, 4).unwrap(), 0);
        assert!(matches!(rotation_negative(1, 0), Err(Error::BatchTooSmall { size: 1 })));
    }

    #[test]
    fn negative_span_is_the_most_likely() {
        assert_eq!(highest_marginal(&[0.5, 0.3, 0.2]), 0);
        assert_eq!(highest_marginal(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(highest_marginal(&[0.4, 0.4]), 0);
    }
}
