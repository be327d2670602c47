//! Whitespace vocabulary with the fixed block of reserved tokens.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved tokens, in id order.
pub const RESERVED: [&str; 18] = [
    "<pad>",
    "<s>",
    "</s>",
    "<unk>",
    "<mask>",
    "<cls>",
    "<img>",
    "</img>",
    "<img_feat>",
    "<event>",
    "</event>",
    "<mlm>",
    "</mlm>",
    "<caption>",
    "<region_caption>",
    "<before>",
    "<after>",
    "<intent>",
];

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const MASK: TokenId = 4;
pub const CLS: TokenId = 5;
pub const IMG: TokenId = 6;
pub const IMG_END: TokenId = 7;
pub const IMG_FEAT: TokenId = 8;
pub const EVENT: TokenId = 9;
pub const EVENT_END: TokenId = 10;
pub const MLM: TokenId = 11;
pub const MLM_END: TokenId = 12;
pub const N_RESERVED: TokenId = RESERVED.len() as TokenId;

/// Kind of example, each with its own prompt token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Caption,
    RegionCaption,
    Before,
    After,
    Intent,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [
        TaskType::Caption,
        TaskType::RegionCaption,
        TaskType::Before,
        TaskType::After,
        TaskType::Intent,
    ];

    pub fn token(self) -> TokenId {
        match self {
            TaskType::Caption => 13,
            TaskType::RegionCaption => 14,
            TaskType::Before => 15,
            TaskType::After => 16,
            TaskType::Intent => 17,
        }
    }

    /// Commonsense inference tasks (before / after / intent).
    pub fn is_generation(self) -> bool {
        matches!(self, TaskType::Before | TaskType::After | TaskType::Intent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Caption => "caption",
            TaskType::RegionCaption => "region_caption",
            TaskType::Before => "before",
            TaskType::After => "after",
            TaskType::Intent => "intent",
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::data(format!("unknown task type `{s}`")))
    }
}

pub fn is_reserved(id: TokenId) -> bool {
    id < N_RESERVED
}

/// Lowercased whitespace tokens of `text`.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// The reserved tokens alone.
    pub fn reserved_only() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect()).expect("reserved block")
    }

    /// Validates an id-ordered token list (reserved block first, no duplicates).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*r) {
                return Err(Error::data(format!(
                    "vocabulary line {} must be `{r}`",
                    i + 1
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("vocabulary line {}: invalid token {t:?}", i + 1)));
            }
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::data(format!("vocabulary line {}: duplicate token `{t}`", i + 1)));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Reserved block followed by every lowercased word seen at least
    /// `min_freq` times, ordered by descending count then lexicographically.
    pub fn build<'a, I>(corpus: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if min_freq < 1 {
            return Err(Error::usage("min_freq must be at least 1"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut lines = 0usize;
        for line in corpus {
            lines += 1;
            for w in words(line) {
                *counts.entry(w).or_default() += 1;
            }
        }
        if lines == 0 {
            return Err(Error::data("cannot build a vocabulary from an empty corpus"));
        }
        let mut regular: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq && !RESERVED.contains(&w.as_str()))
            .collect();
        regular.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(regular.into_iter().map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_regular(&self) -> usize {
        self.tokens.len() - RESERVED.len()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Lowercase, split on whitespace, map unknown words to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        words(text)
            .map(|w| match self.index.get(&w) {
                Some(&id) if !is_reserved(id) => id,
                _ => UNK,
            })
            .collect()
    }

    /// Joins tokens with single spaces, dropping reserved tokens except `<unk>`.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out: Vec<&str> = Vec::with_capacity(ids.len());
        for &id in ids {
            let tok = self
                .token(id)
                .ok_or_else(|| Error::data(format!("token id {id} out of range for vocabulary of {}", self.len())))?;
            if !is_reserved(id) || id == UNK {
                out.push(tok);
            }
        }
        Ok(out.join(" "))
    }

    /// One token per line, line number = id, LF endings.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
