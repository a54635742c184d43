use std::collections::HashMap;
use std::path::Path;

use super::{Lang, Lexicon};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
const SPECIALS: [&str; 3] = ["[PAD]", "[CLS]", "[SEP]"];

/// Shared multilingual vocabulary: specials, then L1 forms, then new L2 forms.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if index.get(*s) != Some(&i) {
                return Err(Error::config(format!(
                    "vocabulary must start with {SPECIALS:?}"
                )));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn from_lexicon(lex: &Lexicon) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for lang in [Lang::L1, Lang::L2] {
            for f in lex.forms(lang) {
                if !tokens.iter().any(|t| t == f) {
                    tokens.push(f.to_string());
                }
            }
        }
        Vocab::from_tokens(tokens).expect("lexicon forms are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t)
                    .ok_or_else(|| Error::contract(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Vocab::from_tokens(text.lines().map(str::to_string).collect())
    }
}
