//! Objectives, the optimizer, checkpoints and the epoch loop.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod objective;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{GradientMap, Tape};

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use objective::{batch_objective, combine, elbo_loss, BatchGraph, BatchItem, Mode, ObjectiveConfig};

use crate::error::{Error, Result};
use crate::matching::MatchingConfig;
use crate::model::{sentence_graph, Model, ModelConfig};
use crate::params::{Bindings, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_sentence_length: usize,
    pub mode: Mode,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap; off when `None`.
    pub clip: Option<f64>,
    pub matching: MatchingConfig,
    pub matching_uses_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.001,
            learning_rate: 0.01,
            beta1: 0.75,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 15,
            batch_size: 16,
            seed: 0,
            max_sentence_length: 40,
            mode: Mode::TextOnly,
            patience: 1,
            clip: None,
            matching: MatchingConfig::default(),
            matching_uses_mean: false,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            mode: self.mode,
            alpha: self.alpha,
            matching: self.matching,
            matching_uses_mean: self.matching_uses_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{} {}", key, why)));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.mode.uses_images() && self.batch_size < 2 {
            return Err(Error::BatchTooSmall { size: self.batch_size });
        }
        if self.max_sentence_length < 2 {
            return bad("max_sentence_length", "must be at least 2");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return bad("clip", "must be positive");
            }
        }
        if !(self.matching.margin > 0.0) {
            return bad("margin", "must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub feature: Option<Vec<f64>>,
}

/// One line of the epoch log. Epoch 0 is the initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Per-sentence means over the epoch; absent for epoch 0.
    pub train_loss: Option<f64>,
    pub train_elbo: Option<f64>,
    pub train_matching: Option<f64>,
    pub criterion: String,
    pub validation: f64,
    pub best: bool,
    pub skipped_train: usize,
    pub skipped_valid: usize,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation criterion.
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Wall-clock seconds per logged epoch, kept apart from the log so the
    /// log stays reproducible.
    pub seconds: Vec<f64>,
    pub stopped_early: bool,
}

const NOISE_SALT: u64 = 0x6e6f697365;
const VALID_SALT: u64 = 0x76616c6964;
const SHUFFLE_SALT: u64 = 0x73687566;

fn usable(examples: &[Example], max_len: usize) -> (Vec<&Example>, usize) {
    let kept: Vec<&Example> = examples.iter().filter(|e| e.tokens.len() >= 2 && e.tokens.len() <= max_len).collect();
    let skipped = examples.len() - kept.len();
    (kept, skipped)
}

/// Consecutive chunks of `size`; with `min_two`, a trailing single example
/// joins the previous chunk.
fn batches(order: &[usize], size: usize, min_two: bool) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if min_two && out.len() > 1 && out.last().map(Vec::len) == Some(1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

fn draw_noise(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, Default)]
struct Terms {
    total: f64,
    elbo: f64,
    matching: f64,
}

impl Terms {
    fn add(&mut self, o: Terms) {
        self.total += o.total;
        self.elbo += o.elbo;
        self.matching += o.matching;
    }
}

fn graph_terms(tape: &Tape, g: &BatchGraph) -> Terms {
    Terms {
        total: tape.scalar_value(g.total),
        elbo: g.elbo.map_or(0.0, |v| tape.scalar_value(v)),
        matching: g.matching.map_or(0.0, |v| tape.scalar_value(v)),
    }
}

/// Loss terms and parameter gradients of one batch. Text-only batches run
/// one tape per sentence; grounded batches need one shared tape for the
/// in-batch negatives.
pub fn batch_gradients(
    params: &ParamStore,
    model: &ModelConfig,
    examples: &[&Example],
    noise: &[Vec<f64>],
    cfg: &ObjectiveConfig,
) -> Result<(f64, f64, f64, GradientMap)> {
    let items: Vec<BatchItem> = examples
        .iter()
        .zip(noise)
        .map(|(e, n)| BatchItem { tokens: &e.tokens, feature: e.feature.as_deref(), noise: n })
        .collect();
    let one = |items: &[BatchItem]| -> Result<(Terms, GradientMap)> {
        let mut tape = Tape::new();
        let mut bind = Bindings::new(params);
        let g = batch_objective(&mut tape, &mut bind, model, items, cfg)?;
        let grads = tape.gradients(g.total)?;
        Ok((graph_terms(&tape, &g), grads))
    };
    let (terms, grads) = if cfg.mode.uses_images() {
        one(&items)?
    } else {
        let parts: Vec<(Terms, GradientMap)> =
            items.par_iter().map(|it| one(std::slice::from_ref(it))).collect::<Result<_>>()?;
        let mut terms = Terms::default();
        let mut grads = GradientMap::new();
        for (t, g) in &parts {
            terms.add(*t);
            grads.merge(g);
        }
        (terms, grads)
    };
    Ok((terms.total, terms.elbo, terms.matching, grads))
}

/// Validation criterion: ELBO-bound perplexity in text-only mode, mean
/// matching loss per sentence otherwise. Uses a fixed noise stream.
pub fn validation_criterion(
    params: &ParamStore,
    model: &ModelConfig,
    valid: &[&Example],
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALID_SALT);
    let noise: Vec<Vec<f64>> = valid.iter().map(|_| draw_noise(&mut rng, model.z_dim)).collect();
    if cfg.mode.uses_images() {
        let order: Vec<usize> = (0..valid.len()).collect();
        let chunks = batches(&order, cfg.batch_size, true);
        if chunks.iter().any(|c| c.len() < 2) {
            return Err(Error::BatchTooSmall { size: valid.len() });
        }
        let matching_only = ObjectiveConfig { mode: Mode::GroundedNoLm, ..cfg.objective() };
        let mut total = 0.0;
        for chunk in chunks {
            let items: Vec<BatchItem> = chunk
                .iter()
                .map(|&i| BatchItem {
                    tokens: &valid[i].tokens,
                    feature: valid[i].feature.as_deref(),
                    noise: &noise[i],
                })
                .collect();
            let mut tape = Tape::new();
            let mut bind = Bindings::new(params);
            let g = batch_objective(&mut tape, &mut bind, model, &items, &matching_only)?;
            total += tape.scalar_value(g.total);
        }
        Ok(total / valid.len() as f64)
    } else {
        let parts: Vec<(f64, usize)> = valid
            .par_iter()
            .zip(noise.par_iter())
            .map(|(e, eps)| {
                let mut tape = Tape::new();
                let mut bind = Bindings::new(params);
                let g = sentence_graph(&mut tape, &mut bind, model, &e.tokens, Some(eps))?;
                let bound = tape.scalar_value(g.chart.log_z) - tape.scalar_value(g.kl);
                Ok((bound, e.tokens.len()))
            })
            .collect::<Result<_>>()?;
        let (ll, words) = parts.iter().fold((0.0, 0usize), |(a, n), (b, m)| (a + b, n + m));
        Ok((-ll / words as f64).exp())
    }
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
pub fn train(
    train_set: &[Example],
    valid_set: &[Example],
    model: &ModelConfig,
    cfg: &TrainConfig,
    vocab: Vec<String>,
    mut on_epoch: impl FnMut(&EpochRecord, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut state = Model::new(*model, cfg.seed)?;
    let (train_ex, skipped_train) = usable(train_set, cfg.max_sentence_length);
    let (valid_ex, skipped_valid) = usable(valid_set, cfg.max_sentence_length);
    if train_ex.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if valid_ex.is_empty() {
        return Err(Error::Data("no usable validation sentences".into()));
    }
    if cfg.mode.uses_images() {
        if model.feature_dim == 0 {
            return Err(Error::Config(format!("{} mode needs feature_dim > 0", cfg.mode)));
        }
        if train_ex.len() < 2 {
            return Err(Error::BatchTooSmall { size: train_ex.len() });
        }
        for e in train_ex.iter().chain(&valid_ex) {
            match &e.feature {
                Some(f) if f.len() == model.feature_dim => {}
                Some(f) => return Err(Error::DimensionMismatch { expected: model.feature_dim, got: f.len() }),
                None => return Err(Error::Config(format!("{} mode requires image features", cfg.mode))),
            }
        }
    }
    let objective = cfg.objective();
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_SALT);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_SALT);
    let criterion = if cfg.mode.uses_images() { "matching" } else { "perplexity" }.to_string();

    let started = Instant::now();
    let initial = validation_criterion(&state.params, model, &valid_ex, cfg)?;
    let snapshot = |state: &Model, adam: &AdamState, epoch: usize| Checkpoint {
        model: *model,
        params: state.params.clone(),
        adam: adam.clone(),
        epoch,
        history: Vec::new(),
        train: cfg.clone(),
        vocab: vocab.clone(),
    };
    let mut best = snapshot(&state, &adam, 0);
    let mut best_value = initial;
    let record = EpochRecord {
        epoch: 0,
        steps: 0,
        train_loss: None,
        train_elbo: None,
        train_matching: None,
        criterion: criterion.clone(),
        validation: initial,
        best: true,
        skipped_train,
        skipped_valid,
    };
    let mut seconds = vec![started.elapsed().as_secs_f64()];
    on_epoch(&record, seconds[0]);
    let mut log = vec![record];
    let mut history = vec![initial];
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..train_ex.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut sums = Terms::default();
        let chunks = batches(&order, cfg.batch_size, cfg.mode.uses_images());
        for chunk in &chunks {
            let examples: Vec<&Example> = chunk.iter().map(|&i| train_ex[i]).collect();
            let noise: Vec<Vec<f64>> = examples.iter().map(|_| draw_noise(&mut noise_rng, model.z_dim)).collect();
            let (total, elbo, matching, mut grads) =
                batch_gradients(&state.params, model, &examples, &noise, &objective)?;
            sums.add(Terms { total, elbo, matching });
            if let Some(c) = cfg.clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut state.params, &grads, &adam_cfg)?;
        }
        let value = validation_criterion(&state.params, model, &valid_ex, cfg)?;
        let improved = value < best_value;
        if improved {
            best = snapshot(&state, &adam, epoch);
            best_value = value;
            stale = 0;
        } else {
            stale += 1;
        }
        let n = train_ex.len() as f64;
        let record = EpochRecord {
            epoch,
            steps: chunks.len(),
            train_loss: Some(sums.total / n),
            train_elbo: cfg.mode.uses_lm().then_some(sums.elbo / n),
            train_matching: cfg.mode.uses_images().then_some(sums.matching / n),
            criterion: criterion.clone(),
            validation: value,
            best: improved,
            skipped_train,
            skipped_valid,
        };
        let elapsed = started.elapsed().as_secs_f64();
        on_epoch(&record, elapsed);
        seconds.push(elapsed);
        log.push(record);
        history.push(value);
        if stale >= cfg.patience {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    best.history = history;
    Ok(TrainOutcome { best, log, seconds, stopped_early })
}

/// Epoch log as JSON lines.
pub fn epoch_log(records: &[EpochRecord]) -> String {
    records.iter().map(|r| r.to_json_line() + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_singletons_join_the_previous_batch() {
        let order: Vec<usize> = (0..5).collect();
        assert_eq!(batches(&order, 2, true), vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(batches(&order, 2, false).len(), 3);
        assert_eq!(batches(&order[..1], 2, true), vec![vec![0]]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let grounded = TrainConfig { mode: Mode::Grounded, batch_size: 1, ..Default::default() };
        assert!(matches!(grounded.validate(), Err(Error::BatchTooSmall { size: 1 })));
        assert!(TrainConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}
