use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("sentence of length {n} has no parse (need at least 2 tokens)")]
    NoParse { n: usize },
    #[error("non-finite {family} logits")]
    NonFiniteLogits { family: &'static str },
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("span ({start}, {end}) is invalid for a sentence of length {n}")]
    InvalidSpan { start: usize, end: usize, n: usize },
    #[error("refusing to enumerate trees for n = {n} (limit {limit})")]
    TooLong { n: usize, limit: usize },
    #[error("contrastive loss needs a batch of at least 2, got {size}")]
    BatchTooSmall { size: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("caption count {captions} does not match {images} images x {per_image} captions")]
    CountMismatch { captions: usize, images: usize, per_image: usize },
    #[error("malformed feature file at byte {offset}: {reason}")]
    MalformedFeatures { offset: usize, reason: String },
    #[error("tree syntax error on line {line}: {reason}")]
    TreeSyntax { line: usize, reason: String },
    #[error("invalid toy grammar: {0}")]
    InvalidGrammar(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] vcpcfg_autodiff::AdError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::InvalidGrammar(_) | Error::BatchTooSmall { .. } => {
                ErrorKind::Config
            }
            Error::NonFiniteLogits { .. }
            | Error::NonFiniteGradient { .. }
            | Error::Autodiff(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
