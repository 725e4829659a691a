//! The watermark transform.
//!
//! At each generation step the provider's next-token distribution is cut
//! to a top-k candidate set, weighted by `P^lambda`, and apportioned into
//! contiguous segments of the code space `[0, 2^width)`, where `width` is
//! the number of message bits read at once (capped by the bits left). The
//! token whose segment holds the current message window is emitted, and
//! only the common prefix of that segment's endpoints is committed. The
//! committed prefix depends on the token alone, so the extractor recovers
//! it exactly by replaying the same partition.

mod segments;
mod session;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::{BitstreamError, MAX_WINDOW_BITS};
use crate::providers::{ProviderError, TokenId};

pub use segments::{
    allocate, allocation_variance, apportion, build_candidates, common_prefix_len, partition,
    AllocationVector, CandidateSet, Segment, SegmentTable, Selection,
};
pub(crate) use session::argmax_token;
pub use session::{
    embed, extract, extract_lossy, step_table, EmbedSession, EmbedStep, Embedding, ExtractSession,
    WatermarkedText,
};

/// Candidate pool size used unless configured otherwise.
pub const DEFAULT_TOP_K: usize = 40;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_EPSILON: u32 = 16;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("distribution has no token with positive probability")]
    EmptyDistribution,
    #[error("lambda must be a non-negative finite number, got {0}")]
    NegativeLambda(f64),
    #[error("{candidates} candidates do not fit a code space of {space}")]
    SpaceTooSmall { candidates: usize, space: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("token {} at position {position}{} is not a candidate", fmt_token(.token), fmt_sentence(.sentence))]
    TokenNotInCandidates {
        position: usize,
        sentence: Option<usize>,
        token: Option<TokenId>,
    },
    #[error("watermark incomplete: {consumed} bits embedded, {remaining} remaining")]
    WatermarkIncomplete {
        consumed: usize,
        remaining: usize,
        partial: Box<Embedding>,
    },
    #[error("text ended after {recovered} of {expected} bits")]
    ExtractionShort { recovered: usize, expected: usize },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Bitstream(#[from] BitstreamError),
}

fn fmt_token(token: &Option<TokenId>) -> String {
    token.map_or_else(|| "<out-of-vocabulary>".to_string(), |t| t.to_string())
}

fn fmt_sentence(sentence: &Option<usize>) -> String {
    sentence.map_or_else(String::new, |s| format!(" of sentence {s}"))
}

/// Parameters that must match between embedding and extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkParams {
    pub lambda: f64,
    pub epsilon: u32,
    pub top_k: usize,
}

impl Default for WatermarkParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epsilon: DEFAULT_EPSILON,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl WatermarkParams {
    pub fn new(lambda: f64, epsilon: u32, top_k: usize) -> Self {
        Self { lambda, epsilon, top_k }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(CodecError::NegativeLambda(self.lambda));
        }
        if self.epsilon == 0 || self.epsilon > MAX_WINDOW_BITS {
            return Err(CodecError::InvalidParams(format!(
                "epsilon must be 1..={MAX_WINDOW_BITS}, got {}",
                self.epsilon
            )));
        }
        if self.top_k == 0 {
            return Err(CodecError::InvalidParams("top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Embedding-side settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedParams {
    pub watermark: WatermarkParams,
    /// Cap on watermark-carrying tokens.
    pub max_tokens: usize,
    /// Argmax tokens appended once the message is exhausted.
    pub continuation: usize,
}

impl EmbedParams {
    pub fn new(watermark: WatermarkParams, max_tokens: usize) -> Self {
        Self {
            watermark,
            max_tokens,
            continuation: 0,
        }
    }
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self::new(WatermarkParams::default(), 1024)
    }
}
