//! Word-level vocabulary with four reserved ids.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::text::{join_words, words};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from every word in `corpus`, sorted for stable ids.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<String> = corpus.into_iter().flat_map(words).collect();
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(set.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())))
            .collect();
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`Self::tokenize`]; PAD, BOS and EOS are dropped.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or(SPECIALS[UNK]))
            .collect();
        join_words(&toks)
    }

    /// JSON object mapping each id (as a string) to its token.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<usize, &str> = self.tokens.iter().enumerate().map(|(i, t)| (i, t.as_str())).collect();
        serde_json::to_string_pretty(&map).expect("string map serialises")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let map: BTreeMap<usize, String> = serde_json::from_str(json)?;
        let tokens: Vec<String> = map.values().cloned().collect();
        if map.keys().enumerate().any(|(i, &k)| i != k) {
            return Err(Error::Config("vocabulary ids are not dense from 0".into()));
        }
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(Error::Config("vocabulary lacks the reserved tokens".into()));
        }
        if tokens.iter().collect::<BTreeSet<_>>().len() != tokens.len() {
            return Err(Error::Config("duplicate vocabulary entries".into()));
        }
        Ok(Self::from_tokens(tokens))
    }
}
