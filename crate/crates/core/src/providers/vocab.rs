use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProviderError, TokenId};

/// Marker appended after every training document.
pub const END_OF_TEXT: &str = "</s>";

/// Whitespace-word vocabulary shared by the bundled providers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), TokenId(i as u32)))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self, ProviderError> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(ProviderError::InvalidModel("empty vocabulary".into()));
        }
        if let Some(bad) = tokens.iter().find(|t| t.is_empty() || t.chars().any(char::is_whitespace)) {
            return Err(ProviderError::InvalidModel(format!(
                "vocabulary entry {bad:?} is empty or contains whitespace"
            )));
        }
        let vocab = Self::from(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(ProviderError::InvalidModel("duplicate vocabulary entries".into()));
        }
        Ok(vocab)
    }

    /// Reads a JSON array of token strings.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::InvalidModel(format!("vocabulary file: {e}")))?;
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| ProviderError::UnknownToken(w.to_string())))
            .collect()
    }

    /// Word-level lookup that keeps out-of-vocabulary words as `None`.
    pub fn tokenize_lossy(&self, text: &str) -> Vec<Option<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String, ProviderError> {
        let words = tokens
            .iter()
            .map(|&t| self.word(t).ok_or_else(|| ProviderError::UnknownToken(format!("id {t}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(words.join(" "))
    }
}
