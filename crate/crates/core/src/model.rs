//! The full model: grammar, variational encoder, span encoder and image
//! projection over one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{Tape, Var};

use crate::chart::{inside, map_parse, Chart, ParseTree};
use crate::encoders::{
    encode_posterior, encode_spans, init_encoder, init_span_encoder, kl_gaussian, sample_z,
    EncoderConfig, Posterior, SpanEncoderConfig,
};
use crate::error::{Error, Result};
use crate::grammar::{compute_rule_probs, init_grammar, RuleProbs, Topology};
use crate::matching::{init_image_projection, project_image, select_spans, MatchingItem};
use crate::params::{Bindings, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub nonterminals: usize,
    pub preterminals: usize,
    pub vocab: usize,
    pub symbol_dim: usize,
    pub z_dim: usize,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub span_word_dim: usize,
    pub span_hidden_dim: usize,
    pub joint_dim: usize,
    /// Raw image feature size; 0 leaves out the image projection.
    pub feature_dim: usize,
    pub share_span_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nonterminals: 30,
            preterminals: 60,
            vocab: 10_001,
            symbol_dim: 256,
            z_dim: 64,
            word_dim: 512,
            hidden_dim: 512,
            span_word_dim: 512,
            span_hidden_dim: 512,
            joint_dim: 512,
            feature_dim: 2048,
            share_span_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn topology(&self) -> Topology {
        Topology {
            nonterminals: self.nonterminals,
            preterminals: self.preterminals,
            vocab: self.vocab,
            symbol_dim: self.symbol_dim,
            z_dim: self.z_dim,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig { vocab: self.vocab, word_dim: self.word_dim, hidden_dim: self.hidden_dim, z_dim: self.z_dim }
    }

    pub fn span_encoder(&self) -> SpanEncoderConfig {
        SpanEncoderConfig {
            vocab: self.vocab,
            word_dim: if self.share_span_embeddings { self.word_dim } else { self.span_word_dim },
            hidden_dim: self.span_hidden_dim,
            joint_dim: self.joint_dim,
            labels: self.nonterminals,
            share_embeddings: self.share_span_embeddings,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology().validate()?;
        let dims = [
            ("z_dim", self.z_dim),
            ("word_dim", self.word_dim),
            ("hidden_dim", self.hidden_dim),
            ("span_word_dim", self.span_word_dim),
            ("span_hidden_dim", self.span_hidden_dim),
            ("joint_dim", self.joint_dim),
        ];
        for (key, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{} must be positive", key)));
            }
        }
        Ok(())
    }
}

/// Parameter group of a parameter name, for reporting.
pub fn group_of(name: &str) -> &'static str {
    match name.split('.').next() {
        Some("grammar") => "grammar",
        Some("enc") => "encoder",
        Some("span") => "span-encoder",
        Some("img") => "image",
        _ => "other",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// One sentence's forward computation on a tape.
#[derive(Debug, Clone)]
pub struct SentenceGraph {
    pub posterior: Posterior,
    pub z: Var,
    pub rules: RuleProbs,
    pub chart: Chart,
    pub kl: Var,
}

impl SentenceGraph {
    /// `KL - log p(w | z)`, the negated single-sample ELBO.
    pub fn elbo_loss(&self, tape: &mut Tape) -> Var {
        tape.sub(self.kl, self.chart.log_z)
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_grammar(&mut params, &config.topology(), &mut rng);
        init_encoder(&mut params, &config.encoder(), &mut rng);
        init_span_encoder(&mut params, &config.span_encoder(), &mut rng);
        if config.feature_dim > 0 {
            init_image_projection(&mut params, config.feature_dim, config.joint_dim, &mut rng);
        }
        Ok(Model { config, params })
    }

    /// MAP tree with `z` fixed to the posterior mean.
    pub fn parse(&self, sentence: &[usize]) -> Result<ParseTree> {
        if sentence.len() < 2 {
            return Err(Error::NoParse { n: sentence.len() });
        }
        let mut tape = Tape::new();
        let mut bind = Bindings::new(&self.params);
        let post = encode_posterior(&mut tape, &mut bind, sentence);
        let rules = compute_rule_probs(&mut tape, &mut bind, &self.config.topology(), post.mu)?;
        map_parse(&rules.tables(&tape), sentence)
    }
}

/// Encoder, rules and chart for one sentence. `noise = None` uses the
/// posterior mean.
pub fn sentence_graph(
    tape: &mut Tape,
    bind: &mut Bindings,
    config: &ModelConfig,
    sentence: &[usize],
    noise: Option<&[f64]>,
) -> Result<SentenceGraph> {
    let posterior = encode_posterior(tape, bind, sentence);
    let z = match noise {
        Some(eps) => sample_z(tape, &posterior, eps),
        None => posterior.mu,
    };
    let rules = compute_rule_probs(tape, bind, &config.topology(), z)?;
    let chart = inside(tape, &rules, sentence)?;
    let kl = kl_gaussian(tape, &posterior);
    Ok(SentenceGraph { posterior, z, rules, chart, kl })
}

/// Selected spans with differentiable marginals and posterior-weighted span
/// vectors, plus the projected image.
pub fn matching_item(
    tape: &mut Tape,
    bind: &mut Bindings,
    config: &ModelConfig,
    sentence: &[usize],
    chart: &Chart,
    feature: &[f64],
) -> Result<MatchingItem> {
    let spans = select_spans(sentence.len());
    let weights = chart.marginal_nodes(tape, &spans)?;
    let posteriors: Vec<Var> = weights.iter().map(|w| w.posterior).collect();
    let vectors = encode_spans(tape, bind, &config.span_encoder(), sentence, &spans, &posteriors);
    let image = project_image(tape, bind, feature)?;
    Ok(MatchingItem { spans, mu: weights.iter().map(|w| w.mu).collect(), vectors, image })
}
