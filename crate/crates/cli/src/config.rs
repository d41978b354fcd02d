//! Flat `key = value` run configuration with `#` comments.

use std::path::{Path, PathBuf};

use vcpcfg::matching::NegativeMode;
use vcpcfg::model::ModelConfig;
use vcpcfg::training::{Mode, TrainConfig};
use vcpcfg::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    /// Feature and vocabulary sizes are taken from the data.
    pub model: ModelConfig,
    pub vocab_size: usize,
    pub train_captions: Option<PathBuf>,
    pub train_features: Option<PathBuf>,
    pub train_index: Option<PathBuf>,
    pub valid_captions: Option<PathBuf>,
    pub valid_features: Option<PathBuf>,
    pub valid_index: Option<PathBuf>,
    pub valid_gold: Option<PathBuf>,
    pub captions_per_image: usize,
    pub output_dir: Option<PathBuf>,
    /// File name of the checkpoint inside `output_dir`.
    pub checkpoint: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            vocab_size: 10_000,
            train_captions: None,
            train_features: None,
            train_index: None,
            valid_captions: None,
            valid_features: None,
            valid_index: None,
            valid_gold: None,
            captions_per_image: 5,
            output_dir: None,
            checkpoint: "model.ckpt".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("`{}`: cannot parse `{}`", key, value)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{}`: expected true or false, got `{}`", key, value))),
    }
}

/// Splits config text into ordered key/value pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one setting; relative paths are resolved against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(value));
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "alpha" => t.alpha = parse_num(key, value)?,
            "learning_rate" => t.learning_rate = parse_num(key, value)?,
            "beta1" => t.beta1 = parse_num(key, value)?,
            "beta2" => t.beta2 = parse_num(key, value)?,
            "adam_epsilon" => t.adam_epsilon = parse_num(key, value)?,
            "max_epochs" => t.max_epochs = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "seed" => t.seed = parse_num(key, value)?,
            "max_sentence_length" => t.max_sentence_length = parse_num(key, value)?,
            "mode" => t.mode = value.parse::<Mode>()?,
            "patience" => t.patience = parse_num(key, value)?,
            "clip" => t.clip = if value == "none" { None } else { Some(parse_num(key, value)?) },
            "margin" => t.matching.margin = parse_num(key, value)?,
            "negatives" => {
                t.matching.negatives = match value {
                    "rotation" => NegativeMode::Rotation,
                    "random" => NegativeMode::Random,
                    "all-in-batch" => NegativeMode::AllInBatch,
                    _ => return Err(Error::Config(format!("`negatives`: unknown mode `{}`", value))),
                }
            }
            "negative_seed" => t.matching.seed = parse_num(key, value)?,
            "matching_uses_mean" => t.matching_uses_mean = parse_bool(key, value)?,
            "nonterminals" => m.nonterminals = parse_num(key, value)?,
            "preterminals" => m.preterminals = parse_num(key, value)?,
            "symbol_dim" => m.symbol_dim = parse_num(key, value)?,
            "z_dim" => m.z_dim = parse_num(key, value)?,
            "word_dim" => m.word_dim = parse_num(key, value)?,
            "hidden_dim" => m.hidden_dim = parse_num(key, value)?,
            "span_word_dim" => m.span_word_dim = parse_num(key, value)?,
            "span_hidden_dim" => m.span_hidden_dim = parse_num(key, value)?,
            "joint_dim" => m.joint_dim = parse_num(key, value)?,
            "share_span_embeddings" => m.share_span_embeddings = parse_bool(key, value)?,
            "vocab_size" => self.vocab_size = parse_num(key, value)?,
            "captions_per_image" => self.captions_per_image = parse_num(key, value)?,
            "train_captions" => self.train_captions = path(),
            "train_features" => self.train_features = path(),
            "train_index" => self.train_index = path(),
            "valid_captions" => self.valid_captions = path(),
            "valid_features" => self.valid_features = path(),
            "valid_index" => self.valid_index = path(),
            "valid_gold" => self.valid_gold = path(),
            "output_dir" => self.output_dir = path(),
            "checkpoint" => self.checkpoint = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key `{}`", key))),
        }
        Ok(())
    }

    /// Reads an optional config file, then applies `key=value` overrides
    /// (relative to the working directory).
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(file) = file {
            let text = std::fs::read_to_string(file)
                .map_err(|e| Error::Config(format!("cannot read config {}: {}", file.display(), e)))?;
            let base = file.parent().unwrap_or(Path::new("."));
            for (k, v) in parse_pairs(&text)? {
                cfg.set(&k, &v, base)?;
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", o)))?;
            cfg.set(k.trim(), v.trim(), Path::new("."))?;
        }
        Ok(cfg)
    }

    /// Checks required keys and that every input path exists.
    pub fn validate_for_training(&self) -> Result<()> {
        self.train.validate()?;
        let grounded = self.train.mode.uses_images();
        let required: [(&str, &Option<PathBuf>, bool); 5] = [
            ("train_captions", &self.train_captions, true),
            ("valid_captions", &self.valid_captions, true),
            ("train_features", &self.train_features, grounded),
            ("valid_features", &self.valid_features, grounded),
            ("output_dir", &self.output_dir, true),
        ];
        for (key, value, needed) in required {
            if needed && value.is_none() {
                return Err(Error::Config(format!("missing required key `{}`", key)));
            }
        }
        let inputs = [
            ("train_captions", &self.train_captions),
            ("valid_captions", &self.valid_captions),
            ("train_index", &self.train_index),
            ("valid_index", &self.valid_index),
            ("valid_gold", &self.valid_gold),
        ];
        let features = [("train_features", &self.train_features), ("valid_features", &self.valid_features)];
        for (key, value) in inputs.iter().chain(if grounded { &features[..] } else { &[] }) {
            if let Some(p) = value {
                if !p.is_file() {
                    return Err(Error::Config(format!("`{}`: no such file {}", key, p.display())));
                }
            }
        }
        if self.checkpoint.is_empty() || self.checkpoint.contains('/') || self.checkpoint.contains('\\') {
            return Err(Error::Config("`checkpoint` must be a plain file name inside output_dir".into()));
        }
        if self.captions_per_image == 0 {
            return Err(Error::Config("`captions_per_image` must be positive".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("`vocab_size` must be positive".into()));
        }
        Ok(())
    }
}
