use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const UNK_ID: usize = 0;

/// Token ids with `0` reserved for unknown words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent tokens, ties broken by first occurrence.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], cap: usize) -> Result<Vocabulary> {
        if cap == 0 {
            return Err(Error::Config("vocabulary cap must be at least 1".into()));
        }
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for tok in sentences.iter().flatten() {
            let entry = counts.entry(tok.as_ref()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            entry.0 += 1;
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let kept = ranked.into_iter().take(cap).map(|(t, _, _)| t.to_string());
        Ok(Self::from_tokens(kept.collect()))
    }

    /// Vocabulary with `tokens` at ids `1..`.
    pub fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let mut all = Vec::with_capacity(tokens.len() + 1);
        all.push(UNK.to_string());
        all.extend(tokens.into_iter().filter(|t| t != UNK));
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: all, index }
    }

    /// Number of ids, including the unknown-word id.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK, String::as_str)
    }

    /// Tokens in id order, excluding the unknown-word entry.
    pub fn tokens(&self) -> &[String] {
        &self.tokens[1..]
    }

    pub fn encode<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<usize> {
        sentence.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i)).collect()
    }
}
