//! Tamper localization from token ranks. A token the provider ranks far
//! down its next-token list is unlikely to have been produced by the
//! watermark generator, which only ever picks top-k candidates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partial::{selection_count, word_ranges};
use crate::providers::{Provider, ProviderError, TokenDistribution, TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum TamperError {
    #[error("{labels} labels for {positions} positions")]
    LengthMismatch { positions: usize, labels: usize },
    #[error("top_k must be at least 8, got {0}")]
    InvalidTopK(usize),
    #[error("rate must be in [0, 1], got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// 1-based rank of `token` among all vocabulary entries, by descending
/// probability and then ascending id.
pub fn token_rank(dist: &TokenDistribution, vocab: &Vocabulary, token: TokenId) -> Result<usize, ProviderError> {
    if !vocab.contains(token) {
        return Err(ProviderError::UnknownToken(token.to_string()));
    }
    let p = dist.probability(token);
    let ahead = dist
        .entries()
        .iter()
        .filter(|&&(t, q)| q > p || (q == p && t < token))
        .count();
    // Zero-probability tokens are absent from the entries but still rank
    // ahead of `token` when their id is lower.
    let zero_ahead = if p > 0.0 {
        0
    } else {
        token.index() - dist.entries().iter().filter(|&&(t, q)| t < token && q > 0.0).count()
    };
    Ok(1 + ahead + zero_ahead)
}

/// Tampering probability for a rank:
/// `1` past `top_k`, `0.75` past `top_k/2`, `0.5` past `top_k/4`,
/// `0.3` past `top_k/8`, `0` otherwise. Bounds are compared exactly.
pub fn tamper_probability(rank: usize, top_k: usize) -> f64 {
    if rank > top_k {
        1.0
    } else if 2 * rank > top_k {
        0.75
    } else if 4 * rank > top_k {
        0.5
    } else if 8 * rank > top_k {
        0.3
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperRecord {
    pub position: usize,
    pub word: String,
    /// `None` for out-of-vocabulary words.
    pub token_id: Option<TokenId>,
    pub rank: Option<usize>,
    pub tp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperReport {
    pub top_k: usize,
    pub records: Vec<TamperRecord>,
    /// Mean of `tp * label`; set by [`TamperReport::with_labels`].
    pub fineness: Option<f64>,
    /// Share of untampered positions with `tp > 0`.
    pub false_positive_rate: Option<f64>,
}

impl TamperReport {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tp(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.tp).collect()
    }

    /// Positions with `tp` at or above `threshold`.
    pub fn flagged(&self, threshold: f64) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.tp >= threshold)
            .map(|r| r.position)
            .collect()
    }

    pub fn with_labels(mut self, labels: &[bool]) -> Result<Self, TamperError> {
        self.fineness = Some(fineness(&self, labels)?);
        let clean: Vec<&TamperRecord> = self
            .records
            .iter()
            .zip(labels)
            .filter(|(_, &l)| !l)
            .map(|(r, _)| r)
            .collect();
        self.false_positive_rate = Some(if clean.is_empty() {
            0.0
        } else {
            clean.iter().filter(|r| r.tp > 0.0).count() as f64 / clean.len() as f64
        });
        Ok(self)
    }
}

/// Scores every word of `text` against the provider's distribution given
/// the received prefix. Needs neither the message nor the envelope.
///
/// Out-of-vocabulary words score 1 and the context restarts after them.
pub fn trace<P: Provider + ?Sized>(
    provider: &P,
    text: &str,
    prompt: &[TokenId],
    top_k: usize,
) -> Result<TamperReport, TamperError> {
    if top_k < 8 {
        return Err(TamperError::InvalidTopK(top_k));
    }
    let vocab = provider.vocabulary();
    let mut context = prompt.to_vec();
    let mut records = Vec::new();
    for (position, word) in text.split_whitespace().enumerate() {
        let Some(token) = vocab.id(word) else {
            records.push(TamperRecord {
                position,
                word: word.to_string(),
                token_id: None,
                rank: None,
                tp: 1.0,
            });
            context.clear();
            continue;
        };
        let dist = provider.next_distribution(&context)?;
        let rank = token_rank(&dist, vocab, token)?;
        records.push(TamperRecord {
            position,
            word: word.to_string(),
            token_id: Some(token),
            rank: Some(rank),
            tp: tamper_probability(rank, top_k),
        });
        context.push(token);
    }
    Ok(TamperReport {
        top_k,
        records,
        fineness: None,
        false_positive_rate: None,
    })
}

/// Mean over positions of `tp * label`.
pub fn fineness(report: &TamperReport, labels: &[bool]) -> Result<f64, TamperError> {
    if labels.len() != report.len() {
        return Err(TamperError::LengthMismatch {
            positions: report.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = report
        .records
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r.tp)
        .sum();
    Ok(sum / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub text: String,
    /// One entry per word; `true` where the word was replaced.
    pub labels: Vec<bool>,
    pub seed: u64,
}

/// Replaces `⌈rate·T⌉` distinct words, chosen uniformly with a seeded
/// generator, by a uniformly drawn different vocabulary word. Whitespace
/// is left as it was.
pub fn substitute_attack<P: Provider + ?Sized>(
    text: &str,
    rate: f64,
    seed: u64,
    provider: &P,
) -> Result<AttackResult, TamperError> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(TamperError::InvalidRate(rate));
    }
    let vocab = provider.vocabulary();
    let words: Vec<_> = word_ranges(text).collect();
    let count = selection_count(words.len(), rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![false; words.len()];
    for i in sample(&mut rng, words.len(), count).iter() {
        labels[i] = true;
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (range, &replace) in words.iter().zip(&labels) {
        if !replace {
            continue;
        }
        let original = vocab.id(&text[range.clone()]);
        out.push_str(&text[last..range.start]);
        out.push_str(random_other(&mut rng, vocab, original));
        last = range.end;
    }
    out.push_str(&text[last..]);
    Ok(AttackResult { text: out, labels, seed })
}

fn random_other<'v>(rng: &mut impl Rng, vocab: &'v Vocabulary, original: Option<TokenId>) -> &'v str {
    let tokens = vocab.tokens();
    match original {
        Some(o) if tokens.len() > 1 => {
            let mut i = rng.gen_range(0..tokens.len() - 1);
            if i >= o.index() {
                i += 1;
            }
            &tokens[i]
        }
        _ => &tokens[rng.gen_range(0..tokens.len())],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{NgramModel, StaticProvider};

    #[test]
    fn threshold_table() {
        let cases = [(41, 1.0), (30, 0.75), (20, 0.5), (15, 0.5), (10, 0.3), (8, 0.3), (5, 0.0), (40, 0.75), (1, 0.0)];
        for (rank, tp) in cases {
            assert_eq!(tamper_probability(rank, 40), tp, "rank {rank}");
        }
        // Bounds that are not integers: 12/8 = 1.5.
        assert_eq!(tamper_probability(2, 12), 0.3);
        assert_eq!(tamper_probability(1, 12), 0.0);
    }

    #[test]
    fn ranks_follow_candidate_order() {
        let vocab = Vocabulary::new(["a", "b", "c", "d", "e", "f"]).unwrap();
        let d = TokenDistribution::new(&[], vec![(TokenId(3), 0.5), (TokenId(1), 0.25), (TokenId(4), 0.25)]).unwrap();
        let ranks: Vec<usize> = (0..6).map(|i| token_rank(&d, &vocab, TokenId(i)).unwrap()).collect();
        assert_eq!(ranks, vec![4, 2, 5, 1, 3, 6]);
        let u = TokenDistribution::from_dense(&[], &[0.25; 4]).unwrap();
        let v4 = Vocabulary::new(["a", "b", "c", "d"]).unwrap();
        assert_eq!(token_rank(&u, &v4, TokenId(2)).unwrap(), 3);
        assert!(matches!(token_rank(&u, &v4, TokenId(9)), Err(ProviderError::UnknownToken(_))));
    }

    #[test]
    fn fineness_arithmetic() {
        let report = |tps: &[f64]| TamperReport {
            top_k: 40,
            records: tps
                .iter()
                .enumerate()
                .map(|(i, &tp)| TamperRecord {
                    position: i,
                    word: String::new(),
                    token_id: None,
                    rank: None,
                    tp,
                })
                .collect(),
            fineness: None,
            false_positive_rate: None,
        };
        assert_eq!(fineness(&report(&[0.75, 0.0]), &[true, false]).unwrap(), 0.375);
        assert_eq!(fineness(&report(&[1.0]), &[true]).unwrap(), 1.0);
        assert_eq!(fineness(&report(&[1.0, 0.5]), &[false, false]).unwrap(), 0.0);
        assert!(matches!(
            fineness(&report(&[1.0]), &[true, false]),
            Err(TamperError::LengthMismatch { .. })
        ));
        let r = report(&[0.75, 0.3, 0.0]).with_labels(&[true, false, false]).unwrap();
        assert_eq!(r.false_positive_rate, Some(0.5));
    }

    fn model() -> NgramModel {
        NgramModel::train(include_str!("../data/traffic_corpus.txt"), 3, 0.0).unwrap()
    }

    fn argmax_text(model: &NgramModel, prompt: &[TokenId], n: usize) -> String {
        let mut ctx = prompt.to_vec();
        for _ in 0..n {
            let next = model.next_distribution(&ctx).unwrap().argmax().unwrap();
            ctx.push(next);
        }
        model.detokenize(&ctx[prompt.len()..]).unwrap()
    }

    #[test]
    fn clean_argmax_text_scores_zero() {
        let model = model();
        let prompt = model.tokenize("Drivers on the").unwrap();
        let text = argmax_text(&model, &prompt, 60);
        let report = trace(&model, &text, &prompt, 40).unwrap();
        assert!(report.records.iter().all(|r| r.tp == 0.0 && r.rank == Some(1)));
    }

    #[test]
    fn low_ranked_substitution_is_flagged() {
        let model = model();
        let prompt = model.tokenize("Drivers on the").unwrap();
        let text = argmax_text(&model, &prompt, 30);
        let mut words: Vec<String> = text.split_whitespace().map(String::from).collect();
        let pos = 12;
        let mut ctx = prompt.clone();
        ctx.extend(model.tokenize(&words[..pos].join(" ")).unwrap());
        let dist = model.next_distribution(&ctx).unwrap();
        let vocab = model.vocabulary();
        let far = (0..vocab.len() as u32)
            .map(TokenId)
            .find(|&t| token_rank(&dist, vocab, t).unwrap() > 40)
            .unwrap();
        words[pos] = vocab.word(far).unwrap().to_string();
        let report = trace(&model, &words.join(" "), &prompt, 40).unwrap();
        assert_eq!(report.records[pos].tp, 1.0);
        assert!(report.records[..pos].iter().all(|r| r.tp == 0.0));
    }

    #[test]
    fn unknown_words_score_one() {
        let model = StaticProvider::with_probs(&[0.9, 0.1]).unwrap();
        let report = trace(&model, "t0 zzz t1", &[], 8).unwrap();
        assert_eq!(report.tp(), vec![0.0, 1.0, 0.3]);
        assert_eq!(report.records[1].rank, None);
    }

    #[test]
    fn attack_counts_and_determinism() {
        let model = model();
        let text: String = (0..100).map(|i| if i % 2 == 0 { "traffic " } else { "the  " }).collect();
        let a = substitute_attack(&text, 0.10, 7, &model).unwrap();
        assert_eq!(a.labels.iter().filter(|&&l| l).count(), 10);
        assert_eq!(a, substitute_attack(&text, 0.10, 7, &model).unwrap());
        assert_eq!(substitute_attack(&text, 0.0, 7, &model).unwrap().text, text);
        let all = substitute_attack(&text, 1.0, 3, &model).unwrap();
        for (old, new) in text.split_whitespace().zip(all.text.split_whitespace()) {
            assert_ne!(old, new);
        }
        // Whitespace runs survive.
        let spaces = |s: &str| s.chars().filter(|c| c.is_whitespace()).collect::<String>();
        assert_eq!(spaces(&a.text), spaces(&text));
        assert_eq!(a.text.split_whitespace().count(), 100);
    }
}
