use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::static_table::hex;
use super::{
    Provider, ProviderError, ProviderFingerprint, TokenDistribution, TokenId, Vocabulary,
    END_OF_TEXT,
};

pub const NGRAM_MAGIC: &str = "NGRM";
pub const NGRAM_VERSION: u32 = 1;
pub const MAX_ORDER: usize = 3;

/// Add-alpha estimate `(count + alpha) / (history_total + alpha * vocab_size)`.
pub fn smoothed_probability(count: u64, history_total: u64, alpha: f64, vocab_size: usize) -> f64 {
    (count as f64 + alpha) / (history_total as f64 + alpha * vocab_size as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Continuations {
    total: u64,
    /// Sorted by token id.
    next: Vec<(TokenId, u64)>,
}

/// Word-level n-gram model with add-alpha smoothing.
///
/// `order` is the number of preceding tokens conditioned on (order 1 is a
/// bigram model). A context whose history was never observed backs off to
/// its longest observed suffix; the empty history is the unigram table.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    alpha: f64,
    vocab: Vocabulary,
    /// `tables[h]` maps a length-`h` history to its continuation counts.
    tables: Vec<HashMap<Vec<TokenId>, Continuations>>,
    fingerprint: ProviderFingerprint,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    order: usize,
    alpha: f64,
    vocab: Vec<String>,
    tables: Vec<Vec<HistoryRecord>>,
}

#[derive(Serialize, Deserialize)]
struct HistoryRecord {
    history: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

impl NgramModel {
    /// Trains on `corpus`; every non-empty line is one document terminated
    /// by the end-of-text marker.
    pub fn train(corpus: &str, order: usize, alpha: f64) -> Result<Self, ProviderError> {
        if order == 0 || order > MAX_ORDER {
            return Err(ProviderError::InvalidModel(format!(
                "order must be 1..={MAX_ORDER}, got {order}"
            )));
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(ProviderError::InvalidModel(format!("invalid alpha {alpha}")));
        }
        let docs: Vec<Vec<&str>> = corpus
            .lines()
            .map(|l| l.split_whitespace().collect::<Vec<_>>())
            .filter(|d| !d.is_empty())
            .collect();
        let word_count: usize = docs.iter().map(Vec::len).sum();
        if word_count < order + 1 {
            return Err(ProviderError::CorpusTooSmall {
                tokens: word_count,
                order,
            });
        }

        let words: BTreeSet<&str> = docs.iter().flatten().copied().filter(|w| *w != END_OF_TEXT).collect();
        let vocab = Vocabulary::new(std::iter::once(END_OF_TEXT).chain(words))?;
        let eot = TokenId(0);

        let mut counts: Vec<BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>> =
            vec![BTreeMap::new(); order + 1];
        for doc in &docs {
            let ids: Vec<TokenId> = doc
                .iter()
                .map(|w| vocab.id(w).expect("word is in vocabulary"))
                .chain(std::iter::once(eot))
                .collect();
            for i in 0..ids.len() {
                for h in 0..=order.min(i) {
                    *counts[h]
                        .entry(ids[i - h..i].to_vec())
                        .or_default()
                        .entry(ids[i])
                        .or_insert(0) += 1;
                }
            }
        }
        let tables = counts
            .into_iter()
            .map(|table| {
                table
                    .into_iter()
                    .map(|(history, next)| HistoryRecord {
                        history,
                        next: next.into_iter().collect(),
                    })
                    .collect()
            })
            .collect();
        Self::from_file(ModelFile {
            magic: NGRAM_MAGIC.into(),
            version: NGRAM_VERSION,
            order,
            alpha,
            vocab: vocab.tokens().to_vec(),
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let raw = std::fs::read_to_string(path)?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, ProviderError> {
        let file: ModelFile = serde_json::from_str(raw)
            .map_err(|e| ProviderError::InvalidModel(format!("n-gram model file: {e}")))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Canonical JSON form; histories are sorted so equal models serialize
    /// to equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    fn to_file(&self) -> ModelFile {
        let tables = self
            .tables
            .iter()
            .map(|table| {
                let mut records: Vec<HistoryRecord> = table
                    .iter()
                    .map(|(history, c)| HistoryRecord {
                        history: history.clone(),
                        next: c.next.clone(),
                    })
                    .collect();
                records.sort_by(|a, b| a.history.cmp(&b.history));
                records
            })
            .collect();
        ModelFile {
            magic: NGRAM_MAGIC.into(),
            version: NGRAM_VERSION,
            order: self.order,
            alpha: self.alpha,
            vocab: self.vocab.tokens().to_vec(),
            tables,
        }
    }

    fn from_file(file: ModelFile) -> Result<Self, ProviderError> {
        if file.magic != NGRAM_MAGIC {
            return Err(ProviderError::InvalidModel(format!("bad magic {:?}", file.magic)));
        }
        if file.version != NGRAM_VERSION {
            return Err(ProviderError::InvalidModel(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        if file.order == 0 || file.order > MAX_ORDER || file.tables.len() != file.order + 1 {
            return Err(ProviderError::InvalidModel("inconsistent order".into()));
        }
        if !file.alpha.is_finite() || file.alpha < 0.0 {
            return Err(ProviderError::InvalidModel(format!("invalid alpha {}", file.alpha)));
        }
        let vocab = Vocabulary::new(file.vocab.clone())?;
        let mut tables = Vec::with_capacity(file.tables.len());
        for (h, records) in file.tables.iter().enumerate() {
            let mut table = HashMap::with_capacity(records.len());
            for r in records {
                let in_vocab = r.history.iter().chain(r.next.iter().map(|n| &n.0)).all(|t| vocab.contains(*t));
                if r.history.len() != h || !in_vocab {
                    return Err(ProviderError::InvalidModel("malformed count table".into()));
                }
                let mut next = r.next.clone();
                next.sort_unstable();
                let total = next.iter().map(|n| n.1).sum();
                table.insert(r.history.clone(), Continuations { total, next });
            }
            tables.push(table);
        }
        if tables[0].get(&Vec::new()).is_none_or(|c| c.total == 0) {
            return Err(ProviderError::InvalidModel("missing unigram counts".into()));
        }

        let mut model = Self {
            order: file.order,
            alpha: file.alpha,
            vocab,
            tables,
            fingerprint: ProviderFingerprint {
                algorithm: String::new(),
                content_hash: String::new(),
                vocab_size: 0,
            },
        };
        let digest = Sha256::digest(model.to_json().as_bytes());
        model.fingerprint = ProviderFingerprint {
            algorithm: format!("ngram-{}", model.order),
            content_hash: hex(&digest),
            vocab_size: model.vocab.len(),
        };
        Ok(model)
    }

    fn continuations(&self, context: &[TokenId]) -> &Continuations {
        let longest = self.order.min(context.len());
        (0..=longest)
            .rev()
            .find_map(|h| {
                self.tables[h]
                    .get(&context[context.len() - h..])
                    .filter(|c| c.total > 0)
            })
            .expect("unigram table is never empty")
    }
}

impl Provider for NgramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, ProviderError> {
        if let Some(bad) = context.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(ProviderError::UnknownToken(format!("id {bad}")));
        }
        let c = self.continuations(context);
        let v = self.vocab.len();
        let mut probs = vec![smoothed_probability(0, c.total, self.alpha, v); v];
        for &(t, n) in &c.next {
            probs[t.index()] = smoothed_probability(n, c.total, self.alpha, v);
        }
        TokenDistribution::from_dense(context, &probs)
    }

    fn fingerprint(&self) -> ProviderFingerprint {
        self.fingerprint.clone()
    }
}
