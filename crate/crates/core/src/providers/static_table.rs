use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Provider, ProviderError, ProviderFingerprint, TokenDistribution, TokenId, Vocabulary};

/// Returns the same distribution for every context.
#[derive(Debug, Clone)]
pub struct StaticProvider {
    vocab: Vocabulary,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct StaticFile {
    tokens: Vec<String>,
    probs: Vec<f64>,
}

impl StaticProvider {
    pub fn new(vocab: Vocabulary, probs: Vec<f64>) -> Result<Self, ProviderError> {
        if probs.len() != vocab.len() {
            return Err(ProviderError::InvalidModel(format!(
                "{} probabilities for {} tokens",
                probs.len(),
                vocab.len()
            )));
        }
        TokenDistribution::from_dense(&[], &probs)?;
        Ok(Self { vocab, probs })
    }

    /// Tokens named `t0`, `t1`, ... with the given probabilities.
    pub fn with_probs(probs: &[f64]) -> Result<Self, ProviderError> {
        let vocab = Vocabulary::new((0..probs.len()).map(|i| format!("t{i}")))?;
        Self::new(vocab, probs.to_vec())
    }

    pub fn uniform(size: usize) -> Result<Self, ProviderError> {
        Self::with_probs(&vec![1.0 / size as f64; size])
    }

    /// Reads `{"tokens": [...], "probs": [...]}`.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)?;
        let file: StaticFile = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::InvalidModel(format!("static table: {e}")))?;
        Self::new(Vocabulary::new(file.tokens)?, file.probs)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let file = StaticFile {
            tokens: self.vocab.tokens().to_vec(),
            probs: self.probs.clone(),
        };
        let json = serde_json::to_string_pretty(&file).expect("static table serializes");
        std::fs::write(path, json)?;
        Ok(())
    }
}

impl Provider for StaticProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, ProviderError> {
        if let Some(bad) = context.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(ProviderError::UnknownToken(format!("id {bad}")));
        }
        TokenDistribution::from_dense(context, &self.probs)
    }

    fn fingerprint(&self) -> ProviderFingerprint {
        let mut hasher = Sha256::new();
        for (t, p) in self.vocab.tokens().iter().zip(&self.probs) {
            hasher.update(t.as_bytes());
            hasher.update([0]);
            hasher.update(p.to_le_bytes());
        }
        ProviderFingerprint {
            algorithm: "static".into(),
            content_hash: hex(&hasher.finalize()),
            vocab_size: self.vocab.len(),
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ignores_context() {
        let p = StaticProvider::with_probs(&[0.5, 0.25, 0.125, 0.125]).unwrap();
        let a = p.next_distribution(&[]).unwrap();
        let b = p.next_distribution(&[TokenId(3), TokenId(1)]).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert!(p.next_distribution(&[TokenId(9)]).is_err());
    }

    #[test]
    fn file_round_trip_keeps_fingerprint() {
        let p = StaticProvider::with_probs(&[0.7, 0.2, 0.1]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.json");
        p.save(&path).unwrap();
        let q = StaticProvider::load(&path).unwrap();
        assert_eq!(p.fingerprint(), q.fingerprint());
    }
}
