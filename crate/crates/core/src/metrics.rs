//! Evaluation: watermark length, payload, success rate, bit-match ratio,
//! provider perplexity and parameter sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::MessageBits;
use crate::codec::{self, CodecError, EmbedParams, WatermarkParams, DEFAULT_TOP_K};
use crate::partial::{self, PartialParams};
use crate::permission::{CipherPayload, MessageEncoding};
use crate::providers::{Provider, ProviderError, TokenId};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("provider assigns zero probability to token {token} at position {position}")]
    ZeroProbability { position: usize, token: TokenId },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Embedded bits per generated token; 0 when no tokens were generated.
pub fn payload(watermark_length: usize, tokens: usize) -> f64 {
    if tokens == 0 {
        0.0
    } else {
        watermark_length as f64 / tokens as f64
    }
}

/// Longest common prefix over the embedded length. Extraction diverges for
/// good after its first wrong segment, so the prefix is what survives.
pub fn bit_match_ratio(embedded: &[bool], extracted: &[bool]) -> f64 {
    if embedded.is_empty() {
        return 0.0;
    }
    let lcp = embedded
        .iter()
        .zip(extracted)
        .take_while(|(a, b)| a == b)
        .count();
    lcp as f64 / embedded.len() as f64
}

/// Percentage of trials whose extraction equals the embedded bits exactly.
pub fn success_rate<E: AsRef<[bool]>, X: AsRef<[bool]>>(trials: &[(E, X)]) -> f64 {
    if trials.is_empty() {
        return 0.0;
    }
    let ok = trials.iter().filter(|(e, x)| e.as_ref() == x.as_ref()).count();
    100.0 * ok as f64 / trials.len() as f64
}

/// `exp(-mean ln P(x_i | prompt, x_<i))` under the provider itself.
pub fn provider_perplexity<P: Provider + ?Sized>(
    provider: &P,
    prompt: &[TokenId],
    tokens: &[TokenId],
) -> Result<f64, MetricsError> {
    if tokens.is_empty() {
        return Err(MetricsError::Empty("no tokens to score"));
    }
    let mut context = prompt.to_vec();
    let mut log_sum = 0.0;
    for (position, &token) in tokens.iter().enumerate() {
        let p = provider.next_distribution(&context)?.probability(token);
        if p <= 0.0 {
            return Err(MetricsError::ZeroProbability { position, token });
        }
        log_sum += p.ln();
        context.push(token);
    }
    Ok((-log_sum / tokens.len() as f64).exp())
}

/// Counts of ratios in ten 10%-wide buckets; 1.0 falls in the last one.
pub fn ratio_buckets(ratios: &[f64]) -> [usize; 10] {
    let mut counts = [0; 10];
    for &r in ratios {
        let i = ((r * 10.0).floor().max(0.0) as usize).min(9);
        counts[i] += 1;
    }
    counts
}

/// Parameters an outsider without the envelope would try first.
pub fn guessed_params() -> WatermarkParams {
    WatermarkParams::new(1.0, 16, DEFAULT_TOP_K)
}

/// Extraction attempted without the envelope: default parameters, empty
/// prompt, unknown length. Returns whatever bits come out before the
/// replay breaks down or the text ends.
pub fn guess_extract<P: Provider + ?Sized>(provider: &P, text: &str) -> Vec<bool> {
    let received = provider.vocabulary().tokenize_lossy(text);
    match codec::extract_lossy(provider, &[], &received, &guessed_params(), None) {
        Ok((bits, _)) => bits,
        Err(_) => Vec::new(),
    }
}

/// One evaluated document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub watermark_length_bits: usize,
    pub token_count: usize,
    pub payload: f64,
    pub success: bool,
    pub bit_match_ratio: f64,
    pub perplexity: Option<f64>,
    pub lambda: f64,
    pub epsilon: u32,
    pub eta: f64,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambda: Vec<f64>,
    pub epsilon: Vec<u32>,
    pub eta: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            lambda: vec![1.5, 1.2, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4],
            epsilon: vec![16],
            eta: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub trials: usize,
    /// Inclusive range of random message lengths in bits.
    pub message_bits: (usize, usize),
    /// Watermark-carrying tokens per full-mode document.
    pub max_tokens: usize,
    pub top_k: usize,
    /// Leading words of a corpus document used as the prompt in full mode.
    pub prompt_words: usize,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            message_bits: (8, 64),
            max_tokens: 1024,
            top_k: DEFAULT_TOP_K,
            prompt_words: 4,
            seed: 0,
        }
    }
}

/// Outcome of one sweep trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub success: bool,
    pub watermark_length: usize,
    pub tokens: usize,
    pub perplexity: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub epsilon: u32,
    pub eta: f64,
    pub trials: usize,
    pub success_pct: f64,
    #[serde(rename = "mean_WL")]
    pub mean_wl: f64,
    pub mean_payload: f64,
    pub mean_ppl: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String, MetricsError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, lambda: f64, epsilon: u32, eta: f64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.lambda == lambda && r.epsilon == epsilon && r.eta == eta)
    }
}

/// Runs one trial: embed a random message into a corpus document (or
/// after its first words in full mode), extract it back and score it.
pub fn run_trial<P: Provider + ?Sized>(
    provider: &P,
    document: &str,
    params: WatermarkParams,
    eta: f64,
    config: &SweepConfig,
    rng: &mut impl Rng,
) -> TrialOutcome {
    let (lo, hi) = config.message_bits;
    let len = rng.gen_range(lo.max(1)..=hi.max(lo).max(1));
    let message = MessageBits::from_bits((0..len).map(|_| rng.gen()).collect())
        .expect("message is non-empty");
    let failed = |wl, tokens, err: String| TrialOutcome {
        success: false,
        watermark_length: wl,
        tokens,
        perplexity: None,
        error: Some(err),
    };

    if eta >= 1.0 {
        let prompt_text = document
            .split_whitespace()
            .take(config.prompt_words)
            .collect::<Vec<_>>()
            .join(" ");
        let prompt = match provider.tokenize(&prompt_text) {
            Ok(p) => p,
            Err(e) => return failed(0, 0, e.to_string()),
        };
        let embedding = match codec::embed(provider, &prompt, &message, &EmbedParams::new(params, config.max_tokens)) {
            Ok(e) => e,
            Err(CodecError::WatermarkIncomplete { partial, .. }) => {
                return TrialOutcome {
                    perplexity: provider_perplexity(provider, &prompt, &partial.text.token_ids).ok(),
                    ..failed(partial.embedded_bits(), partial.watermark_tokens(), "watermark incomplete".into())
                }
            }
            Err(e) => return failed(0, 0, e.to_string()),
        };
        let wl = embedding.embedded_bits();
        let tokens = embedding.watermark_tokens();
        let extracted = codec::extract(provider, &prompt, &embedding.text.token_ids, &params, len);
        let perplexity = provider_perplexity(provider, &prompt, &embedding.text.token_ids).ok();
        match extracted {
            Ok(bits) => TrialOutcome {
                success: bits == message,
                watermark_length: wl,
                tokens,
                perplexity,
                error: (bits != message).then(|| "extracted bits differ".to_string()),
            },
            Err(e) => failed(wl, tokens, e.to_string()),
        }
    } else {
        let pp = PartialParams::new(params, eta);
        let embedding = match partial::embed_partial(provider, &[], document, &message, &pp) {
            Ok(e) => e,
            Err(CodecError::WatermarkIncomplete { partial, .. }) => {
                return failed(partial.embedded_bits(), partial.text.token_ids.len(), "watermark incomplete".into())
            }
            Err(e) => return failed(0, 0, e.to_string()),
        };
        let wl = embedding.embedded_bits();
        let tokens = embedding.text.token_ids.len();
        let base = CipherPayload::full("", params, len, provider.fingerprint(), MessageEncoding::Bits);
        let payload = embedding.payload(base, &pp);
        let perplexity = provider_perplexity(provider, &[], &embedding.text.token_ids).ok();
        match partial::extract_partial(provider, &embedding.text.rendered_text, &payload) {
            Ok(bits) => TrialOutcome {
                success: bits == message,
                watermark_length: wl,
                tokens,
                perplexity,
                error: (bits != message).then(|| "extracted bits differ".to_string()),
            },
            Err(e) => failed(wl, tokens, e.to_string()),
        }
    }
}

/// Trial `t` draws the same document and message in every cell, so cells
/// differ only by their parameters.
fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ trial as u64
}

/// Evaluates every grid cell over `config.trials` trials drawn from
/// `corpus`. Trials run in parallel and are individually seeded, so the
/// report does not depend on scheduling.
pub fn sweep<P: Provider + ?Sized>(
    grid: &SweepGrid,
    corpus: &[&str],
    provider: &P,
    config: &SweepConfig,
) -> Result<SweepReport, MetricsError> {
    if grid.lambda.is_empty() || grid.epsilon.is_empty() || grid.eta.is_empty() {
        return Err(MetricsError::Empty("sweep grid"));
    }
    if corpus.is_empty() {
        return Err(MetricsError::Empty("corpus"));
    }
    let mut rows = Vec::new();
    for &eta in &grid.eta {
        for &lambda in &grid.lambda {
            for &epsilon in &grid.epsilon {
                let params = WatermarkParams::new(lambda, epsilon, config.top_k);
                let outcomes: Vec<TrialOutcome> = (0..config.trials)
                    .into_par_iter()
                    .map(|t| {
                        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, t));
                        let doc = corpus[rng.gen_range(0..corpus.len())];
                        run_trial(provider, doc, params, eta, config, &mut rng)
                    })
                    .collect();
                rows.push(summarize(lambda, epsilon, eta, &outcomes));
            }
        }
    }
    Ok(SweepReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        rows,
    })
}

pub fn summarize(lambda: f64, epsilon: u32, eta: f64, outcomes: &[TrialOutcome]) -> SweepRow {
    let n = outcomes.len().max(1) as f64;
    let ppls: Vec<f64> = outcomes.iter().filter_map(|o| o.perplexity).collect();
    SweepRow {
        lambda,
        epsilon,
        eta,
        trials: outcomes.len(),
        success_pct: 100.0 * outcomes.iter().filter(|o| o.success).count() as f64 / n,
        mean_wl: outcomes.iter().map(|o| o.watermark_length as f64).sum::<f64>() / n,
        mean_payload: outcomes
            .iter()
            .map(|o| payload(o.watermark_length, o.tokens))
            .sum::<f64>()
            / n,
        mean_ppl: if ppls.is_empty() {
            f64::NAN
        } else {
            ppls.iter().sum::<f64>() / ppls.len() as f64
        },
        failures: outcomes.iter().filter(|o| !o.success).count(),
    }
}
