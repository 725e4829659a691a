use serde::{Deserialize, Serialize};

use super::segments::{allocate, build_candidates, partition, SegmentTable};
use super::{CodecError, EmbedParams, WatermarkParams};
use crate::bitstream::{bits_to_literal, MessageBits};
use crate::providers::{context_fingerprint, Provider, TokenId};

/// Replays the partition a step would use for `context`.
pub fn step_table<P: Provider + ?Sized>(
    provider: &P,
    context: &[TokenId],
    params: &WatermarkParams,
    width: u32,
) -> Result<SegmentTable, CodecError> {
    let dist = provider.next_distribution(context)?;
    let candidates = build_candidates(&dist, params.top_k, 1u64 << width)?;
    let weights = allocate(&candidates, params.lambda)?;
    partition(&weights, width)
}

/// One watermark-carrying token. Serializes as a JSON-lines trace record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedStep {
    pub position: usize,
    pub token_id: TokenId,
    pub begin: u64,
    pub end: u64,
    pub width: u32,
    pub p: usize,
    /// The committed bits as a `0`/`1` string.
    pub bits: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatermarkedText {
    /// Generated tokens only; the prompt is not repeated.
    pub token_ids: Vec<TokenId>,
    pub rendered_text: String,
    pub prompt_fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Embedding {
    pub text: WatermarkedText,
    pub trace: Vec<EmbedStep>,
}

impl Embedding {
    /// Bits committed across the trace.
    pub fn embedded_bits(&self) -> usize {
        self.trace.iter().map(|s| s.p).sum()
    }

    /// Tokens that carried (possibly zero) watermark bits.
    pub fn watermark_tokens(&self) -> usize {
        self.trace.len()
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|s| serde_json::to_string(s).expect("trace record serializes") + "\n")
            .collect()
    }
}

/// Embedding state that can be driven one token at a time.
#[derive(Debug, Clone)]
pub struct EmbedSession {
    message: MessageBits,
    params: WatermarkParams,
    trace: Vec<EmbedStep>,
}

impl EmbedSession {
    pub fn new(mut message: MessageBits, params: WatermarkParams) -> Result<Self, CodecError> {
        params.validate()?;
        message.rewind();
        Ok(Self {
            message,
            params,
            trace: Vec::new(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.message.is_exhausted()
    }

    pub fn consumed(&self) -> usize {
        self.message.cursor()
    }

    pub fn remaining(&self) -> usize {
        self.message.remaining()
    }

    pub fn trace(&self) -> &[EmbedStep] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<EmbedStep> {
        self.trace
    }

    /// Chooses the next token for `context` and commits its prefix.
    pub fn step<P: Provider + ?Sized>(
        &mut self,
        provider: &P,
        context: &[TokenId],
    ) -> Result<EmbedStep, CodecError> {
        let width = self.params.epsilon.min(self.message.remaining() as u32);
        let window = self.message.read_window(width)?;
        let table = step_table(provider, context, &self.params, window.width)?;
        let selection = table.select(&window)?;
        self.message.consume(selection.prefix_len())?;
        let step = EmbedStep {
            position: self.trace.len(),
            token_id: selection.segment.token,
            begin: selection.segment.begin,
            end: selection.segment.end,
            width: selection.width,
            p: selection.prefix_len(),
            bits: bits_to_literal(&selection.embedded),
        };
        self.trace.push(step.clone());
        Ok(step)
    }
}

/// Most probable next token under the canonical tie-break.
pub(crate) fn argmax_token<P: Provider + ?Sized>(
    provider: &P,
    context: &[TokenId],
) -> Result<TokenId, CodecError> {
    provider
        .next_distribution(context)?
        .argmax()
        .ok_or(CodecError::EmptyDistribution)
}

/// Generates text after `prompt` that carries all of `message`.
///
/// Returns `WatermarkIncomplete` (with the partial embedding) when
/// `max_tokens` watermark tokens are not enough.
pub fn embed<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    message: &MessageBits,
    params: &EmbedParams,
) -> Result<Embedding, CodecError> {
    if params.max_tokens == 0 {
        return Err(CodecError::InvalidParams("max_tokens must be at least 1".into()));
    }
    let mut session = EmbedSession::new(message.clone(), params.watermark)?;
    let mut context = prompt.to_vec();
    while !session.is_complete() {
        if session.trace().len() == params.max_tokens {
            let generated = context[prompt.len()..].to_vec();
            let consumed = session.consumed();
            let remaining = session.remaining();
            let partial = finish(provider, prompt, generated, session.into_trace())?;
            return Err(CodecError::WatermarkIncomplete {
                consumed,
                remaining,
                partial: Box::new(partial),
            });
        }
        let step = session.step(provider, &context)?;
        context.push(step.token_id);
    }
    for _ in 0..params.continuation {
        let next = argmax_token(provider, &context)?;
        context.push(next);
    }
    let generated = context[prompt.len()..].to_vec();
    finish(provider, prompt, generated, session.into_trace())
}

fn finish<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    token_ids: Vec<TokenId>,
    trace: Vec<EmbedStep>,
) -> Result<Embedding, CodecError> {
    let rendered_text = provider.detokenize(&token_ids)?;
    Ok(Embedding {
        text: WatermarkedText {
            token_ids,
            rendered_text,
            prompt_fingerprint: context_fingerprint(prompt),
        },
        trace,
    })
}

/// Extraction state fed one received token at a time.
#[derive(Debug, Clone)]
pub struct ExtractSession {
    params: WatermarkParams,
    target: Option<usize>,
    bits: Vec<bool>,
}

impl ExtractSession {
    /// `target` is the message length in bits. Without it every step reads
    /// a full-width window and extraction runs until the text ends.
    pub fn new(params: WatermarkParams, target: Option<usize>) -> Result<Self, CodecError> {
        params.validate()?;
        if target == Some(0) {
            return Err(CodecError::InvalidParams("message length must be positive".into()));
        }
        Ok(Self {
            params,
            target,
            bits: Vec::new(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.target.is_some_and(|t| self.bits.len() >= t)
    }

    pub fn recovered(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    /// Locates `token` in the replayed partition and appends its prefix.
    /// Returns the number of bits recovered.
    pub fn feed<P: Provider + ?Sized>(
        &mut self,
        provider: &P,
        context: &[TokenId],
        token: TokenId,
        position: usize,
    ) -> Result<usize, CodecError> {
        let width = match self.target {
            Some(t) => self.params.epsilon.min((t - self.bits.len()) as u32),
            None => self.params.epsilon,
        };
        let table = step_table(provider, context, &self.params, width)?;
        let segment = table.locate(token).ok_or(CodecError::TokenNotInCandidates {
            position,
            sentence: None,
            token: Some(token),
        })?;
        let selection = super::Selection::new(segment, width);
        self.bits.extend_from_slice(&selection.embedded);
        Ok(selection.prefix_len())
    }
}

/// Recovers exactly `length` bits from the generated tokens.
pub fn extract<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    tokens: &[TokenId],
    params: &WatermarkParams,
    length: usize,
) -> Result<MessageBits, CodecError> {
    let received: Vec<Option<TokenId>> = tokens.iter().copied().map(Some).collect();
    let (bits, failure) = extract_lossy(provider, prompt, &received, params, Some(length))?;
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(MessageBits::from_bits(bits)?)
}

/// Extraction over received tokens that may include out-of-vocabulary
/// words (`None`). Returns the bits recovered so far together with the
/// error that stopped extraction, if any. Setup errors are returned as `Err`.
pub fn extract_lossy<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    tokens: &[Option<TokenId>],
    params: &WatermarkParams,
    length: Option<usize>,
) -> Result<(Vec<bool>, Option<CodecError>), CodecError> {
    let mut session = ExtractSession::new(*params, length)?;
    let mut context = prompt.to_vec();
    for (position, token) in tokens.iter().enumerate() {
        if session.is_complete() {
            break;
        }
        let Some(token) = *token else {
            let err = CodecError::TokenNotInCandidates {
                position,
                sentence: None,
                token: None,
            };
            return Ok((session.into_bits(), Some(err)));
        };
        if let Err(err) = session.feed(provider, &context, token, position) {
            return Ok((session.into_bits(), Some(err)));
        }
        context.push(token);
    }
    let failure = match length {
        Some(expected) if !session.is_complete() => Some(CodecError::ExtractionShort {
            recovered: session.recovered(),
            expected,
        }),
        _ => None,
    };
    Ok((session.into_bits(), failure))
}
