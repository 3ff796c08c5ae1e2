//! Token counting for length budgets.
//!
//! Two modes. `approx` counts maximal runs of word characters plus every
//! other non-whitespace character; it needs no files and is the default.
//! `external` applies a byte-pair merge list (a `merges.txt`, or the
//! `model.merges` array of a `tokenizer.json`) to each word run, which gets
//! much closer to a real subword tokenizer's counts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum TokenizerSpec {
    #[default]
    Approx,
    External {
        /// `merges.txt` or `tokenizer.json`.
        merges: PathBuf,
        /// Marker prepended to words that follow whitespace ("Ġ" for GPT-2
        /// style merges, "▁" for SentencePiece). Omit when the merge list has
        /// no such marker.
        #[serde(default)]
        space_prefix: Option<String>,
    },
}

#[derive(Debug, Clone, Default)]
pub enum Tokenizer {
    #[default]
    Approx,
    Bpe(BpeMerges),
}

impl Tokenizer {
    pub fn from_spec(spec: &TokenizerSpec) -> Result<Self> {
        match spec {
            TokenizerSpec::Approx => Ok(Tokenizer::Approx),
            TokenizerSpec::External {
                merges,
                space_prefix,
            } => Ok(Tokenizer::Bpe(BpeMerges::load(merges, space_prefix.clone())?)),
        }
    }

    /// Number of tokens in `s`. Deterministic and locale-independent.
    pub fn count(&self, s: &str) -> usize {
        match self {
            Tokenizer::Approx => pieces(s).count(),
            Tokenizer::Bpe(bpe) => bpe.count(s),
        }
    }
}

/// Counts under the approximate scanner.
pub fn token_len(s: &str) -> usize {
    Tokenizer::Approx.count(s)
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

#[derive(Debug, PartialEq, Eq)]
enum Piece<'a> {
    /// A word run, and whether whitespace preceded it.
    Word(&'a str, bool),
    Symbol(char),
}

fn pieces(s: &str) -> impl Iterator<Item = Piece<'_>> {
    let mut rest = s.char_indices().peekable();
    let mut after_space = false;
    std::iter::from_fn(move || loop {
        let (start, c) = rest.next()?;
        if c.is_whitespace() {
            after_space = true;
            continue;
        }
        let spaced = std::mem::replace(&mut after_space, false);
        if !is_word_char(c) {
            return Some(Piece::Symbol(c));
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, n)) = rest.peek() {
            if !is_word_char(n) {
                break;
            }
            end = i + n.len_utf8();
            rest.next();
        }
        return Some(Piece::Word(&s[start..end], spaced));
    })
}

/// Ranked byte-pair merges.
#[derive(Debug, Clone)]
pub struct BpeMerges {
    ranks: HashMap<(String, String), usize>,
    space_prefix: Option<String>,
}

impl BpeMerges {
    pub fn load(path: &Path, space_prefix: Option<String>) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read tokenizer file {}: {e}", path.display())))?;
        let pairs = if path.extension().is_some_and(|e| e == "json") {
            merges_from_tokenizer_json(&text)
                .map_err(|m| Error::Config(format!("{}: {m}", path.display())))?
        } else {
            merges_from_txt(&text)
        };
        if pairs.is_empty() {
            return Err(Error::Config(format!("{}: no merges found", path.display())));
        }
        Ok(Self::from_pairs(pairs, space_prefix))
    }

    pub fn from_pairs(pairs: Vec<(String, String)>, space_prefix: Option<String>) -> Self {
        let mut ranks = HashMap::with_capacity(pairs.len());
        for (rank, pair) in pairs.into_iter().enumerate() {
            ranks.entry(pair).or_insert(rank);
        }
        Self { ranks, space_prefix }
    }

    fn count(&self, s: &str) -> usize {
        pieces(s)
            .map(|p| match p {
                Piece::Symbol(_) => 1,
                Piece::Word(w, spaced) => match (&self.space_prefix, spaced) {
                    (Some(prefix), true) => self.word_len(&format!("{prefix}{w}")),
                    _ => self.word_len(w),
                },
            })
            .sum()
    }

    fn word_len(&self, word: &str) -> usize {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        // A leading marker is part of the first symbol, as in GPT-2 byte-level BPE.
        if let Some(prefix) = &self.space_prefix {
            let n = prefix.chars().count();
            if n > 1 && word.starts_with(prefix.as_str()) {
                let head: String = parts.drain(..n).collect();
                parts.insert(0, head);
            }
        }
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((rank, _)) = best else { break };
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && self.ranks.get(&(parts[i].clone(), parts[i + 1].clone())) == Some(&rank) {
                    merged.push(format!("{}{}", parts[i], parts[i + 1]));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts.len()
    }
}

fn merges_from_txt(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with("#version") && !l.trim().is_empty())
        .filter_map(|l| {
            let mut it = l.split(' ');
            match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => Some((a.to_string(), b.to_string())),
                _ => None,
            }
        })
        .collect()
}

fn merges_from_tokenizer_json(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    #[derive(Deserialize)]
    struct File {
        model: Model,
    }
    #[derive(Deserialize)]
    struct Model {
        #[serde(default)]
        merges: Vec<serde_json::Value>,
    }
    let file: File = serde_json::from_str(text).map_err(|e| e.to_string())?;
    file.model
        .merges
        .into_iter()
        .map(|m| match m {
            serde_json::Value::String(s) => s
                .split_once(' ')
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .ok_or_else(|| format!("malformed merge {s:?}")),
            serde_json::Value::Array(v) => match v.as_slice() {
                [serde_json::Value::String(a), serde_json::Value::String(b)] => Ok((a.clone(), b.clone())),
                _ => Err("merge pair must hold two strings".to_string()),
            },
            other => Err(format!("unexpected merge entry {other}")),
        })
        .collect()
}
