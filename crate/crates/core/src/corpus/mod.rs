//! Captions, image features, alignment, gold trees and the synthetic corpus.

pub mod features;
pub mod synthetic;
pub mod vocab;

use std::path::Path;

pub use features::FeatureTable;
pub use vocab::{Vocabulary, UNK, UNK_ID};

use crate::error::{Error, Result};
use crate::tree::Tree;

const PUNCTUATION: &str = ".,!?;:'\"()[]-—/`";

/// Tokens made only of punctuation characters (backticks included).
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty() && token.chars().all(|c| PUNCTUATION.contains(c))
}

/// Whitespace tokenization with punctuation tokens dropped.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().filter(|t| !is_punctuation(t)).map(String::from).collect()
}

pub fn read_captions(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(std::fs::read_to_string(path)?.lines().map(tokenize).collect())
}

/// A caption paired with its image row and optional gold tree.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedExample {
    pub tokens: Vec<usize>,
    pub image: Option<usize>,
    pub gold: Option<Tree>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Alignment {
    /// `k` consecutive captions per image.
    Blocked(usize),
    /// Explicit `(caption, image)` pairs.
    Pairs(Vec<(usize, usize)>),
}

impl Alignment {
    /// Reads an index file of `caption image` lines.
    pub fn read_index(path: &Path) -> Result<Alignment> {
        let text = std::fs::read_to_string(path)?;
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|x| x.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Data(format!("index file line {}: expected two integers", no + 1)))?;
            if nums.len() != 2 {
                return Err(Error::Data(format!("index file line {}: expected two integers", no + 1)));
            }
            pairs.push((nums[0], nums[1]));
        }
        Ok(Alignment::Pairs(pairs))
    }

    /// Image row of every caption.
    pub fn image_rows(&self, captions: usize, images: usize) -> Result<Vec<usize>> {
        match self {
            Alignment::Blocked(k) => {
                if *k == 0 {
                    return Err(Error::Config("captions per image must be at least 1".into()));
                }
                if captions != k * images {
                    return Err(Error::CountMismatch { captions, images, per_image: *k });
                }
                Ok((0..captions).map(|i| i / k).collect())
            }
            Alignment::Pairs(pairs) => {
                let mut rows = vec![None; captions];
                for &(c, img) in pairs {
                    if c >= captions || img >= images {
                        return Err(Error::Data(format!(
                            "index pair ({}, {}) out of range for {} captions and {} images",
                            c, img, captions, images
                        )));
                    }
                    if rows[c].replace(img).is_some() {
                        return Err(Error::Data(format!("caption {} aligned twice", c)));
                    }
                }
                rows.into_iter()
                    .enumerate()
                    .map(|(c, r)| r.ok_or_else(|| Error::Data(format!("caption {} has no image", c))))
                    .collect()
            }
        }
    }
}

/// Captions and features with each caption's image row.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub captions: Vec<Vec<String>>,
    pub images: Vec<usize>,
    pub features: FeatureTable,
}

impl Corpus {
    pub fn examples(&self, vocab: &Vocabulary) -> Vec<GroundedExample> {
        self.captions
            .iter()
            .zip(&self.images)
            .map(|(c, &img)| GroundedExample { tokens: vocab.encode(c), image: Some(img), gold: None })
            .collect()
    }
}

pub fn load_corpus(captions: &Path, features: &Path, alignment: &Alignment) -> Result<Corpus> {
    let captions = read_captions(captions)?;
    let features = FeatureTable::read(features)?;
    let images = alignment.image_rows(captions.len(), features.rows)?;
    Ok(Corpus { captions, images, features })
}

pub fn parse_gold_trees(text: &str) -> Result<Vec<Tree>> {
    text.lines()
        .enumerate()
        .map(|(no, line)| Tree::parse(line).map_err(|reason| Error::TreeSyntax { line: no + 1, reason }))
        .collect()
}

pub fn load_gold_trees(path: &Path) -> Result<Vec<Tree>> {
    parse_gold_trees(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn punctuation_is_removed() {
        assert_eq!(tokenize("a dog ."), ["a", "dog"]);
        assert_eq!(tokenize("`` hi '' , -- ( x ) ... —"), ["hi", "x"]);
        assert_eq!(tokenize("don't e.g."), ["don't", "e.g."]);
    }

    #[test]
    fn blocked_alignment() {
        let rows = Alignment::Blocked(5).image_rows(10, 2).unwrap();
        assert_eq!(rows, [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]);
        match Alignment::Blocked(5).image_rows(9, 2) {
            Err(Error::CountMismatch { captions: 9, images: 2, per_image: 5 }) => {}
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn index_pairs_match_blocked() {
        let pairs = (0..10).map(|i| (i, i / 5)).collect();
        assert_eq!(
            Alignment::Pairs(pairs).image_rows(10, 2).unwrap(),
            Alignment::Blocked(5).image_rows(10, 2).unwrap()
        );
        assert!(Alignment::Pairs(vec![(0, 0)]).image_rows(2, 1).is_err());
    }

    #[test]
    fn gold_tree_errors_carry_line_numbers() {
        match parse_gold_trees("(S (A a) (B b))\n(S (A a)\n") {
            Err(Error::TreeSyntax { line: 2, .. }) => {}
            other => panic!("{:?}", other),
        }
    }
}
