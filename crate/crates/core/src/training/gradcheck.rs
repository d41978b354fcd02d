//! Finite-difference check of the training objectives on a seeded
//! micro-batch.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use vcpcfg_autodiff::{grad_check, AdjointFault, GradCheckOptions, GradCheckReport, Tape};

use super::objective::{batch_objective, BatchItem, Mode, ObjectiveConfig};
use crate::error::{Error, Result};
use crate::matching::MatchingConfig;
use crate::model::{group_of, Model, ModelConfig};
use crate::params::{Bindings, ParamStore};

/// Largest acceptable relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Elbo,
    Matching,
    Joint,
}

impl Scope {
    pub fn mode(self) -> Mode {
        match self {
            Scope::Elbo => Mode::TextOnly,
            Scope::Matching => Mode::GroundedNoLm,
            Scope::Joint => Mode::Grounded,
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Elbo => "elbo",
            Scope::Matching => "matching",
            Scope::Joint => "joint",
        })
    }
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scope> {
        match s {
            "elbo" => Ok(Scope::Elbo),
            "matching" => Ok(Scope::Matching),
            "joint" => Ok(Scope::Joint),
            _ => Err(Error::Config(format!("unknown gradcheck scope `{}`", s))),
        }
    }
}

/// Three sentences of length 3 to 5 with features and fixed noise.
#[derive(Debug, Clone)]
pub struct MicroBatch {
    pub model: Model,
    pub sentences: Vec<Vec<usize>>,
    pub features: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

pub fn micro_batch(seed: u64) -> Result<MicroBatch> {
    let config = ModelConfig {
        nonterminals: 3,
        preterminals: 3,
        vocab: 8,
        symbol_dim: 4,
        z_dim: 2,
        word_dim: 4,
        hidden_dim: 3,
        span_word_dim: 4,
        span_hidden_dim: 3,
        joint_dim: 4,
        feature_dim: 5,
        share_span_embeddings: false,
    };
    let model = Model::new(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let normal = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(rng)).collect() };
    let sentences: Vec<Vec<usize>> = (3..=5)
        .map(|n| (0..n).map(|_| rng.random_range(0..config.vocab)).collect())
        .collect();
    let features = (0..3).map(|_| normal(&mut rng, config.feature_dim)).collect();
    let noise = (0..3).map(|_| normal(&mut rng, config.z_dim)).collect();
    Ok(MicroBatch { model, sentences, features, noise })
}

impl MicroBatch {
    pub fn objective(&self, scope: Scope) -> ObjectiveConfig {
        ObjectiveConfig {
            mode: scope.mode(),
            // A weight of 1 keeps the matching part visible in the joint check.
            alpha: 1.0,
            matching: MatchingConfig::default(),
            matching_uses_mean: false,
        }
    }

    fn items(&self) -> Vec<BatchItem<'_>> {
        self.sentences
            .iter()
            .zip(&self.features)
            .zip(&self.noise)
            .map(|((s, f), e)| BatchItem { tokens: s, feature: Some(f), noise: e })
            .collect()
    }

    /// Objective value at `params`.
    pub fn value(&self, params: &ParamStore, scope: Scope) -> Result<f64> {
        let mut tape = Tape::new();
        let mut bind = Bindings::new(params);
        let g = batch_objective(&mut tape, &mut bind, &self.model.config, &self.items(), &self.objective(scope))?;
        Ok(tape.scalar_value(g.total))
    }

    /// Objective value and gradient map at the model's parameters.
    pub fn gradient(&self, scope: Scope, fault: Option<AdjointFault>) -> Result<(f64, vcpcfg_autodiff::GradientMap)> {
        let mut tape = Tape::new();
        tape.inject_adjoint_fault(fault);
        let mut bind = Bindings::new(&self.model.params);
        let g = batch_objective(&mut tape, &mut bind, &self.model.config, &self.items(), &self.objective(scope))?;
        let grads = tape.gradients(g.total)?;
        Ok((tape.scalar_value(g.total), grads))
    }
}

/// Flattened parameter names and the coordinate range of each group.
pub fn group_ranges(params: &ParamStore) -> (Vec<String>, Vec<(String, Range<usize>)>) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut groups: Vec<(String, Range<usize>)> = Vec::new();
    let mut offset = 0;
    for name in &names {
        let len = params.get(name).unwrap().data.len();
        let group = group_of(name);
        match groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, r)) if r.end == offset => r.end += len,
            Some(_) => panic!("parameter group {} is not contiguous", group),
            None => groups.push((group.to_string(), offset..offset + len)),
        }
        offset += len;
    }
    (names, groups)
}

/// Central differences of the objective against the recorded gradient,
/// over every coordinate.
pub fn check_objective(seed: u64, scope: Scope, fault: Option<AdjointFault>) -> Result<GradCheckReport> {
    let batch = micro_batch(seed)?;
    let (_, grads) = batch.gradient(scope, fault)?;
    let params = &batch.model.params;
    let (names, groups) = group_ranges(params);
    let point = params.flatten(&names);
    let analytic = params.flatten_gradient(&names, &grads);
    let mut scratch = params.clone();
    let opts = GradCheckOptions { step: 1e-5, max_coordinates: None, seed, floor: 1e-4 };
    let mut failure = None;
    let report = grad_check(
        |x| {
            scratch.unflatten(&names, x);
            batch.value(&scratch, scope).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &point,
        &analytic,
        &groups,
        &opts,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(report?)
}
