//! Partial embedding: only the highest-entropy sentences of an existing
//! document are regenerated with the watermark, the rest pass through.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::bitstream::MessageBits;
use crate::codec::{CodecError, EmbedSession, EmbedStep, ExtractSession, WatermarkParams, WatermarkedText};
use crate::permission::{CipherPayload, PayloadMode};
use crate::providers::{context_fingerprint, Provider, ProviderError, TokenId, Vocabulary};

pub const DEFAULT_SENTENCE_TOKEN_CAP: usize = 64;

const TERMINALS: [char; 3] = ['.', '!', '?'];

/// One sentence of a document. Byte ranges tile the document: each span
/// owns its trailing whitespace, the first also owns any leading whitespace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub index: usize,
    pub bytes: Range<usize>,
    /// Word positions within the document.
    pub tokens: Range<usize>,
    /// Mean next-token entropy in bits; zero until scored.
    pub entropy: f64,
}

pub fn is_terminal_word(word: &str) -> bool {
    word.ends_with(TERMINALS)
}

/// Splits after every word that ends in `.`, `!` or `?` and is followed by
/// whitespace. A trailing fragment without punctuation is its own span.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut words = word_ranges(text).peekable();
    let mut start_byte = 0;
    let mut start_word = 0;
    let mut word_idx = 0;
    while let Some(range) = words.next() {
        word_idx += 1;
        let next = words.peek().map(|r| r.start);
        if is_terminal_word(&text[range.clone()]) || next.is_none() {
            let end = next.unwrap_or(text.len());
            spans.push(SentenceSpan {
                index: spans.len(),
                bytes: start_byte..end,
                tokens: start_word..word_idx,
                entropy: 0.0,
            });
            start_byte = end;
            start_word = word_idx;
        }
    }
    if spans.is_empty() {
        // Whitespace-only or empty text: one empty sentence.
        spans.push(SentenceSpan {
            index: 0,
            bytes: 0..text.len(),
            tokens: 0..0,
            entropy: 0.0,
        });
    }
    spans
}

pub(crate) fn word_ranges(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut pos = 0;
    std::iter::from_fn(move || {
        let rest = &text[pos..];
        let start = pos + rest.find(|c: char| !c.is_whitespace())?;
        let len = text[start..].find(char::is_whitespace).unwrap_or(text.len() - start);
        pos = start + len;
        Some(start..pos)
    })
}

/// Mean Shannon entropy (bits) of the next-token distributions while
/// reading `sentence` after `context`.
pub fn sentence_entropy<P: Provider + ?Sized>(
    provider: &P,
    context: &[TokenId],
    sentence: &[TokenId],
) -> Result<f64, ProviderError> {
    if sentence.is_empty() {
        return Ok(0.0);
    }
    let mut ctx = context.to_vec();
    let mut total = 0.0;
    for &token in sentence {
        total += provider.next_distribution(&ctx)?.entropy_bits();
        ctx.push(token);
    }
    Ok(total / sentence.len() as f64)
}

/// Fills in `entropy` for every span of `text`.
pub fn score_sentences<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    text: &str,
    spans: &mut [SentenceSpan],
) -> Result<(), ProviderError> {
    let tokens = provider.tokenize(text)?;
    for span in spans.iter_mut() {
        let mut context = prompt.to_vec();
        context.extend_from_slice(&tokens[..span.tokens.start]);
        span.entropy = sentence_entropy(provider, &context, &tokens[span.tokens.clone()])?;
    }
    Ok(())
}

/// Number of sentences regenerated for ratio `eta` out of `total`.
pub fn selection_count(total: usize, eta: f64) -> usize {
    // Guard against products like 0.3 * 10 = 3.0000000000000004.
    let exact = eta * total as f64;
    let rounded = exact.round();
    let n = if (exact - rounded).abs() < 1e-9 {
        rounded
    } else {
        exact.ceil()
    };
    (n as usize).min(total)
}

/// The `⌈eta·S⌉` highest-entropy spans, ties to the lower index, in
/// document order.
pub fn select_sentences(spans: &[SentenceSpan], eta: f64) -> Vec<usize> {
    let mut order: Vec<&SentenceSpan> = spans.iter().collect();
    order.sort_by(|a, b| b.entropy.total_cmp(&a.entropy).then(a.index.cmp(&b.index)));
    let mut picked: Vec<usize> = order
        .iter()
        .take(selection_count(spans.len(), eta))
        .map(|s| s.index)
        .collect();
    picked.sort_unstable();
    picked
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialParams {
    pub watermark: WatermarkParams,
    pub eta: f64,
    /// Tokens per regenerated sentence, including the closing one.
    pub sentence_token_cap: usize,
}

impl PartialParams {
    pub fn new(watermark: WatermarkParams, eta: f64) -> Self {
        Self {
            watermark,
            eta,
            sentence_token_cap: DEFAULT_SENTENCE_TOKEN_CAP,
        }
    }

    fn validate(&self) -> Result<(), CodecError> {
        self.watermark.validate()?;
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CodecError::InvalidParams(format!("eta must be in (0, 1], got {}", self.eta)));
        }
        if self.sentence_token_cap < 2 {
            return Err(CodecError::InvalidParams("sentence_token_cap must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialEmbedding {
    /// The whole output document.
    pub text: WatermarkedText,
    /// Regenerated sentences in document order.
    pub sentence_indices: Vec<usize>,
    pub spans: Vec<SentenceSpan>,
    /// Watermark steps; positions index document tokens.
    pub trace: Vec<EmbedStep>,
}

impl PartialEmbedding {
    pub fn embedded_bits(&self) -> usize {
        self.trace.iter().map(|s| s.p).sum()
    }

    /// Payload for sealing, given the fields shared with full mode.
    pub fn payload(&self, mut base: CipherPayload, params: &PartialParams) -> CipherPayload {
        base.mode = PayloadMode::Partial;
        base.eta = params.eta;
        base.sentence_indices = self.sentence_indices.clone();
        base.sentence_token_cap = params.sentence_token_cap;
        base
    }
}

/// Closing token forced when a sentence reaches its cap: the most probable
/// terminal word, or the lowest-id one if none has probability mass.
fn forced_terminal<P: Provider + ?Sized>(provider: &P, context: &[TokenId]) -> Result<TokenId, CodecError> {
    let vocab = provider.vocabulary();
    let dist = provider.next_distribution(context)?;
    dist.ranked()
        .into_iter()
        .map(|(t, _)| t)
        .find(|&t| vocab.word(t).is_some_and(is_terminal_word))
        .or_else(|| first_terminal(vocab))
        .ok_or_else(|| CodecError::InvalidParams("vocabulary has no sentence-ending word".into()))
}

fn first_terminal(vocab: &Vocabulary) -> Option<TokenId> {
    vocab
        .tokens()
        .iter()
        .position(|w| is_terminal_word(w))
        .map(|i| TokenId(i as u32))
}

fn word_of<P: Provider + ?Sized>(provider: &P, token: TokenId) -> &str {
    provider.vocabulary().word(token).unwrap_or("")
}

/// Argmax continuation of `prompt` until `sentences` sentences are closed
/// or `max_tokens` words are produced. Used as the base document when none
/// is supplied.
pub fn generate_base<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    sentences: usize,
    max_tokens: usize,
) -> Result<String, CodecError> {
    let mut context = prompt.to_vec();
    let mut closed = 0;
    while closed < sentences && context.len() - prompt.len() < max_tokens {
        let token = crate::codec::argmax_token(provider, &context)?;
        context.push(token);
        if is_terminal_word(word_of(provider, token)) {
            closed += 1;
        }
    }
    Ok(provider.detokenize(&context[prompt.len()..])?)
}

/// Regenerates the selected sentences of `base_text`, carrying `message`
/// across them in order. Unselected sentences are copied byte for byte.
pub fn embed_partial<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    base_text: &str,
    message: &MessageBits,
    params: &PartialParams,
) -> Result<PartialEmbedding, CodecError> {
    params.validate()?;
    let mut spans = split_sentences(base_text);
    score_sentences(provider, prompt, base_text, &mut spans)?;
    let selected = select_sentences(&spans, params.eta);
    let base_tokens = provider.tokenize(base_text)?;

    let mut session = EmbedSession::new(message.clone(), params.watermark)?;
    let mut document = String::with_capacity(base_text.len());
    let mut context = prompt.to_vec();
    let mut trace = Vec::new();
    let mut out_spans = Vec::with_capacity(spans.len());
    let mut next_selected = selected.iter().peekable();

    for span in &spans {
        let start_token = context.len() - prompt.len();
        let original = &base_text[span.bytes.clone()];
        if next_selected.next_if(|&&i| i == span.index).is_none() {
            document.push_str(original);
            context.extend_from_slice(&base_tokens[span.tokens.clone()]);
        } else {
            let leading = &original[..original.len() - original.trim_start().len()];
            let trailing = &original[original.trim_end().len()..];
            let mut words = Vec::new();
            for i in 0..params.sentence_token_cap {
                let token = if i + 1 == params.sentence_token_cap {
                    forced_terminal(provider, &context)?
                } else if session.is_complete() {
                    crate::codec::argmax_token(provider, &context)?
                } else {
                    let mut step = session.step(provider, &context)?;
                    step.position = context.len() - prompt.len();
                    trace.push(step.clone());
                    step.token_id
                };
                context.push(token);
                words.push(word_of(provider, token).to_string());
                if is_terminal_word(word_of(provider, token)) {
                    break;
                }
            }
            document.push_str(leading);
            document.push_str(&words.join(" "));
            document.push_str(if trailing.is_empty() && span.index + 1 < spans.len() {
                " "
            } else {
                trailing
            });
        }
        let end_token = context.len() - prompt.len();
        out_spans.push(SentenceSpan {
            index: span.index,
            bytes: 0..0,
            tokens: start_token..end_token,
            entropy: span.entropy,
        });
    }
    // Byte ranges of the output document.
    for (span, fresh) in out_spans.iter_mut().zip(split_sentences(&document)) {
        span.bytes = fresh.bytes;
    }

    let token_ids = context[prompt.len()..].to_vec();
    let embedding = PartialEmbedding {
        text: WatermarkedText {
            token_ids,
            rendered_text: document,
            prompt_fingerprint: context_fingerprint(prompt),
        },
        sentence_indices: selected,
        spans: out_spans,
        trace,
    };
    if !session.is_complete() {
        let consumed = session.consumed();
        let remaining = session.remaining();
        return Err(CodecError::WatermarkIncomplete {
            consumed,
            remaining,
            partial: Box::new(crate::codec::Embedding {
                text: embedding.text,
                trace: embedding.trace,
            }),
        });
    }
    Ok(embedding)
}

/// Replays extraction over the sentences listed in `payload`, in that
/// order, using the received document as context.
pub fn extract_partial<P: Provider + ?Sized>(
    provider: &P,
    text: &str,
    payload: &CipherPayload,
) -> Result<MessageBits, CodecError> {
    if payload.mode != PayloadMode::Partial || payload.sentence_indices.is_empty() {
        return Err(CodecError::InvalidParams("payload is not a partial-mode payload".into()));
    }
    let prompt = provider.tokenize(&payload.prompt)?;
    let received = provider.vocabulary().tokenize_lossy(text);
    let spans = split_sentences(text);
    let cap = payload.sentence_token_cap;
    let mut session = ExtractSession::new(payload.params(), Some(payload.length_a))?;

    for &index in &payload.sentence_indices {
        if session.is_complete() {
            break;
        }
        let Some(span) = spans.get(index) else {
            break;
        };
        let mut context = prompt.clone();
        for (offset, token) in received[..span.tokens.start].iter().enumerate() {
            context.push(token.ok_or(CodecError::TokenNotInCandidates {
                position: offset,
                sentence: None,
                token: None,
            })?);
        }
        let len = span.tokens.len();
        for position in span.tokens.clone() {
            if session.is_complete() {
                break;
            }
            // The closing token of a sentence that hit the cap was forced.
            if len == cap && position + 1 == span.tokens.end {
                break;
            }
            let token = received[position].ok_or(CodecError::TokenNotInCandidates {
                position,
                sentence: Some(index),
                token: None,
            })?;
            session
                .feed(provider, &context, token, position)
                .map_err(|e| match e {
                    CodecError::TokenNotInCandidates { position, token, .. } => {
                        CodecError::TokenNotInCandidates {
                            position,
                            sentence: Some(index),
                            token,
                        }
                    }
                    other => other,
                })?;
            context.push(token);
        }
    }
    if !session.is_complete() {
        return Err(CodecError::ExtractionShort {
            recovered: session.recovered(),
            expected: payload.length_a,
        });
    }
    Ok(MessageBits::from_bits(session.into_bits())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{NgramModel, StaticProvider};

    #[test]
    fn splitting_rules() {
        assert_eq!(split_sentences("A. B! C").len(), 3);
        assert_eq!(split_sentences("no punctuation here").len(), 1);
        assert_eq!(split_sentences("A.B").len(), 1);
        let text = "  One two.  Three?\nFour";
        let spans = split_sentences(text);
        let joined: String = spans.iter().map(|s| &text[s.bytes.clone()]).collect();
        assert_eq!(joined, text);
        assert_eq!(spans[1].tokens, 2..3);
        assert_eq!(&text[spans[1].bytes.clone()], "Three?\n");
    }

    #[test]
    fn entropy_of_simple_tables() {
        let uniform = StaticProvider::uniform(4).unwrap();
        let t = [TokenId(1), TokenId(2)];
        assert!((sentence_entropy(&uniform, &[], &t).unwrap() - 2.0).abs() < 1e-12);
        let fixed = StaticProvider::with_probs(&[1.0, 0.0]).unwrap();
        assert_eq!(sentence_entropy(&fixed, &[], &[TokenId(0)]).unwrap(), 0.0);
        let coin = StaticProvider::with_probs(&[0.5, 0.5]).unwrap();
        assert!((sentence_entropy(&coin, &[], &[TokenId(0), TokenId(1)]).unwrap() - 1.0).abs() < 1e-12);
    }

    fn spans_with(entropies: &[f64]) -> Vec<SentenceSpan> {
        entropies
            .iter()
            .enumerate()
            .map(|(i, &e)| SentenceSpan {
                index: i,
                bytes: 0..0,
                tokens: 0..0,
                entropy: e,
            })
            .collect()
    }

    #[test]
    fn selection_rules() {
        let spans = spans_with(&[0.1, 0.9, 0.5, 0.3, 0.8, 0.2, 0.7, 0.6, 0.4, 0.0]);
        assert_eq!(select_sentences(&spans, 1.0).len(), 10);
        assert_eq!(select_sentences(&spans, 0.3), vec![1, 4, 6]);
        assert_eq!(select_sentences(&spans_with(&[1.0; 5]), 0.4), vec![0, 1]);
        assert_eq!(selection_count(10, 0.3), 3);
        assert_eq!(selection_count(7, 0.5), 4);
        assert_eq!(selection_count(3, 0.01), 1);
    }

    fn corpus_model() -> NgramModel {
        NgramModel::train(include_str!("../data/traffic_corpus.txt"), 3, 0.0).unwrap()
    }

    #[test]
    fn round_trip_on_corpus_document() {
        let model = corpus_model();
        let doc = include_str!("../data/traffic_corpus.txt").lines().nth(3).unwrap();
        let m = MessageBits::from_literal("1011001110001111").unwrap();
        let params = PartialParams::new(WatermarkParams::new(1.0, 16, 40), 0.5);
        let e = embed_partial(&model, &[], doc, &m, &params).unwrap();
        let original = split_sentences(doc);
        assert_eq!(e.sentence_indices.len(), selection_count(original.len(), 0.5));
        for (old, new) in original.iter().zip(&e.spans) {
            if !e.sentence_indices.contains(&old.index) {
                assert_eq!(&doc[old.bytes.clone()], &e.text.rendered_text[new.bytes.clone()]);
            }
        }
        let base = CipherPayload::full("", params.watermark, m.len(), model.fingerprint(), crate::permission::MessageEncoding::Bits);
        let payload = e.payload(base, &params);
        assert_eq!(extract_partial(&model, &e.text.rendered_text, &payload).unwrap(), m);

        let mut permuted = payload.clone();
        permuted.sentence_indices.reverse();
        if permuted.sentence_indices != payload.sentence_indices {
            assert_ne!(extract_partial(&model, &e.text.rendered_text, &permuted).ok(), Some(m));
        }
    }

    #[test]
    fn single_sentence_matches_full_embedding() {
        let model = corpus_model();
        let prompt = model.tokenize("Drivers on the").unwrap();
        let m = MessageBits::from_literal("10110").unwrap();
        let params = PartialParams::new(WatermarkParams::new(1.0, 8, 40), 1.0);
        let e = embed_partial(&model, &prompt, "Drivers on the", &m, &params).unwrap();
        let full = crate::codec::embed(&model, &prompt, &m, &crate::codec::EmbedParams::new(params.watermark, 64)).unwrap();
        assert_eq!(&e.text.token_ids[..full.text.token_ids.len()], full.text.token_ids.as_slice());
    }

    #[test]
    fn capped_sentence_is_closed() {
        let provider = StaticProvider::new(
            Vocabulary::new(["a", "b", "c", "end."]).unwrap(),
            vec![0.4, 0.3, 0.3, 0.0],
        )
        .unwrap();
        let m = MessageBits::from_literal("110100").unwrap();
        let mut params = PartialParams::new(WatermarkParams::new(1.0, 2, 40), 1.0);
        params.sentence_token_cap = 4;
        let e = embed_partial(&provider, &[], "a end. c", &m, &params).unwrap();
        let words: Vec<&str> = e.text.rendered_text.split_whitespace().collect();
        assert!(words.len() <= 8);
        assert_eq!(words.iter().filter(|w| is_terminal_word(w)).count(), 2);
        let base = CipherPayload::full("", params.watermark, m.len(), provider.fingerprint(), crate::permission::MessageEncoding::Bits);
        let payload = e.payload(base, &params);
        assert_eq!(extract_partial(&provider, &e.text.rendered_text, &payload).unwrap(), m);
    }
}
