//! Next-token distribution sources.
//!
//! The codec only ever talks to a [`Provider`]: a deterministic map from a
//! context (token sequence) to a normalized [`TokenDistribution`]. Three
//! implementations ship with the crate: a trainable add-alpha n-gram model,
//! a fixed table, and an HTTP client for an external logits server.

mod ngram;
mod remote;
mod static_table;
mod vocab;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use ngram::{smoothed_probability, NgramModel, NGRAM_MAGIC, NGRAM_VERSION};
pub use remote::{RemoteConfig, RemoteProvider, WireEntry, WireRequest, WireResponse};
pub use static_table::StaticProvider;
pub use vocab::{Vocabulary, END_OF_TEXT};

/// Index into a provider vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for TokenId {
    fn from(id: u32) -> Self {
        TokenId(id)
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("unknown token {0}")]
    UnknownToken(String),
    #[error("corpus too small: {tokens} tokens for order {order}")]
    CorpusTooSmall { tokens: usize, order: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("remote provider unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote provider timed out")]
    Timeout,
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("distribution is not normalized (sum {0})")]
    NotNormalized(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Tolerance on the probability mass of a normalized distribution.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A normalized next-token distribution for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    pub context_fingerprint: u64,
    entries: Vec<(TokenId, f64)>,
}

impl TokenDistribution {
    /// Wraps `entries`, checking normalization and rejecting duplicate ids
    /// or negative probabilities.
    pub fn new(context: &[TokenId], entries: Vec<(TokenId, f64)>) -> Result<Self, ProviderError> {
        let mut sum = 0.0;
        for &(_, p) in &entries {
            if !p.is_finite() || p < 0.0 {
                return Err(ProviderError::ProtocolError(format!("invalid probability {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(ProviderError::NotNormalized(sum));
        }
        let mut ids: Vec<TokenId> = entries.iter().map(|e| e.0).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ProviderError::ProtocolError("duplicate token id".into()));
        }
        Ok(Self {
            context_fingerprint: context_fingerprint(context),
            entries,
        })
    }

    /// Dense distribution: `probs[i]` is the probability of token `i`.
    pub fn from_dense(context: &[TokenId], probs: &[f64]) -> Result<Self, ProviderError> {
        let entries = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| (TokenId(i as u32), p))
            .collect();
        Self::new(context, entries)
    }

    pub fn entries(&self) -> &[(TokenId, f64)] {
        &self.entries
    }

    pub fn probability(&self, token: TokenId) -> f64 {
        self.entries
            .iter()
            .find(|e| e.0 == token)
            .map_or(0.0, |e| e.1)
    }

    /// Entries sorted by descending probability, ties by ascending id.
    pub fn ranked(&self) -> Vec<(TokenId, f64)> {
        let mut ranked = self.entries.clone();
        ranked.sort_by(rank_order);
        ranked
    }

    /// The most probable token under the canonical tie-break.
    pub fn argmax(&self) -> Option<TokenId> {
        self.entries
            .iter()
            .filter(|e| e.1 > 0.0)
            .min_by(|a, b| rank_order(a, b))
            .map(|e| e.0)
    }

    /// Shannon entropy in bits.
    pub fn entropy_bits(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.1 > 0.0)
            .map(|e| -e.1 * e.1.log2())
            .sum()
    }
}

/// Descending probability, then ascending token id. This is the one order
/// used for candidate sets, segment layout and rank computation.
pub fn rank_order(a: &(TokenId, f64), b: &(TokenId, f64)) -> std::cmp::Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

pub fn context_fingerprint(context: &[TokenId]) -> u64 {
    let mut hasher = Sha256::new();
    for t in context {
        hasher.update(t.0.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Identifies a provider's exact behaviour: equal fingerprints mean equal
/// distributions for equal contexts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderFingerprint {
    pub algorithm: String,
    pub content_hash: String,
    pub vocab_size: usize,
}

impl fmt::Display for ProviderFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.algorithm, self.content_hash, self.vocab_size)
    }
}

/// A deterministic source of next-token distributions.
pub trait Provider: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, ProviderError>;

    fn fingerprint(&self) -> ProviderFingerprint;

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        self.vocabulary().tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String, ProviderError> {
        self.vocabulary().detokenize(tokens)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, ProviderError> {
        (**self).next_distribution(context)
    }

    fn fingerprint(&self) -> ProviderFingerprint {
        (**self).fingerprint()
    }
}

/// Parses a provider spec of the form `ngram:PATH`, `static:PATH` or
/// `remote:URL,VOCAB_PATH`. A bare path is read as an n-gram model.
pub fn load_provider(spec: &str) -> Result<Box<dyn Provider>, ProviderError> {
    let (kind, rest) = spec.split_once(':').unwrap_or(("ngram", spec));
    match kind {
        "ngram" => Ok(Box::new(NgramModel::load(Path::new(rest))?)),
        "static" => Ok(Box::new(StaticProvider::load(Path::new(rest))?)),
        "remote" => {
            let (url, vocab_path) = rest.rsplit_once(',').ok_or_else(|| {
                ProviderError::InvalidModel("remote spec must be remote:URL,VOCAB_PATH".into())
            })?;
            let vocab = Vocabulary::load(Path::new(vocab_path))?;
            Ok(Box::new(RemoteProvider::new(RemoteConfig::new(url), vocab)))
        }
        // `http://...` splits on the scheme colon.
        "http" | "https" => Err(ProviderError::InvalidModel(
            "remote endpoints need the remote:URL,VOCAB_PATH form".into(),
        )),
        other => Err(ProviderError::InvalidModel(format!("unknown provider kind {other:?}"))),
    }
}
