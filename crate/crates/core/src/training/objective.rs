use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use vcpcfg_autodiff::{Tape, Var};

use crate::error::{Error, Result};
use crate::matching::{expected_matching_loss, MatchingConfig};
use crate::model::{matching_item, sentence_graph, ModelConfig, SentenceGraph};
use crate::params::Bindings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    TextOnly,
    Grounded,
    GroundedNoLm,
}

impl Mode {
    pub fn uses_images(self) -> bool {
        self != Mode::TextOnly
    }

    pub fn uses_lm(self) -> bool {
        self != Mode::GroundedNoLm
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TextOnly => "text-only",
            Mode::Grounded => "grounded",
            Mode::GroundedNoLm => "grounded-no-lm",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "text-only" => Ok(Mode::TextOnly),
            "grounded" => Ok(Mode::Grounded),
            "grounded-no-lm" => Ok(Mode::GroundedNoLm),
            _ => Err(Error::Config(format!("unknown mode `{}`", s))),
        }
    }
}

/// `KL - log p(w | z)`.
pub fn elbo_loss(tape: &mut Tape, log_likelihood: Var, kl: Var) -> Var {
    tape.sub(kl, log_likelihood)
}

/// Mixes the summed ELBO loss and the matching loss according to `mode`.
pub fn combine(tape: &mut Tape, elbo: Option<Var>, matching: Option<Var>, mode: Mode, alpha: f64) -> Result<Var> {
    let missing = |what: &str| Error::Config(format!("{} mode needs the {} term", mode, what));
    match mode {
        Mode::TextOnly => elbo.ok_or_else(|| missing("ELBO")),
        Mode::Grounded => {
            let e = elbo.ok_or_else(|| missing("ELBO"))?;
            let m = matching.ok_or_else(|| missing("matching"))?;
            let weighted = tape.scale(m, alpha);
            Ok(tape.add(e, weighted))
        }
        Mode::GroundedNoLm => matching.ok_or_else(|| missing("matching")),
    }
}

/// One sentence of a batch with its reparameterization noise.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub tokens: &'a [usize],
    pub feature: Option<&'a [f64]>,
    pub noise: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub matching: MatchingConfig,
    /// Build the matching marginals from the posterior mean instead of the
    /// sampled `z`.
    pub matching_uses_mean: bool,
}

#[derive(Debug, Clone)]
pub struct BatchGraph {
    pub total: Var,
    pub elbo: Option<Var>,
    pub matching: Option<Var>,
    pub sentences: Vec<SentenceGraph>,
}

/// Records the joint objective of a batch on one tape.
pub fn batch_objective(
    tape: &mut Tape,
    bind: &mut Bindings,
    model: &ModelConfig,
    items: &[BatchItem],
    cfg: &ObjectiveConfig,
) -> Result<BatchGraph> {
    let mut sentences = Vec::with_capacity(items.len());
    for item in items {
        sentences.push(sentence_graph(tape, bind, model, item.tokens, Some(item.noise))?);
    }
    let elbo = if cfg.mode.uses_lm() {
        let terms: Vec<Var> = sentences.iter().map(|g| g.elbo_loss(tape)).collect();
        Some(sum(tape, &terms))
    } else {
        None
    };
    let matching = if cfg.mode.uses_images() {
        if items.len() < 2 {
            return Err(Error::BatchTooSmall { size: items.len() });
        }
        let mut matched = Vec::with_capacity(items.len());
        for (item, graph) in items.iter().zip(&sentences) {
            let feature = item
                .feature
                .ok_or_else(|| Error::Config(format!("{} mode requires image features", cfg.mode)))?;
            let chart = if cfg.matching_uses_mean {
                sentence_graph(tape, bind, model, item.tokens, None)?.chart
            } else {
                graph.chart.clone()
            };
            matched.push(matching_item(tape, bind, model, item.tokens, &chart, feature)?);
        }
        Some(expected_matching_loss(tape, &matched, &cfg.matching)?)
    } else {
        None
    };
    let total = combine(tape, elbo, matching, cfg.mode, cfg.alpha)?;
    Ok(BatchGraph { total, elbo, matching, sentences })
}

fn sum(tape: &mut Tape, terms: &[Var]) -> Var {
    match terms {
        [] => tape.scalar(0.0),
        [one] => *one,
        _ => {
            let s = tape.concat(terms);
            tape.sum(s)
        }
    }
}
