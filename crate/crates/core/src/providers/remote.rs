use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::static_table::hex;
use super::{Provider, ProviderError, ProviderFingerprint, TokenDistribution, TokenId, Vocabulary};

/// Accepted probability mass before renormalization.
const MASS_WINDOW: (f64, f64) = (0.99, 1.01);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub context_tokens: Vec<u32>,
    pub top_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub id: u32,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub entries: Vec<WireEntry>,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full URL, including the request path.
    pub url: String,
    pub timeout: Duration,
    /// Sent as `top_k`; `None` asks for the whole vocabulary.
    pub top_k: Option<usize>,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(10),
            top_k: None,
        }
    }
}

/// Client for an external logits server speaking the JSON wire protocol.
///
/// The server must return probabilities (already softmaxed) whose sum lies
/// within `[0.99, 1.01]`; they are renormalized to exactly one.
pub struct RemoteProvider {
    config: RemoteConfig,
    vocab: Vocabulary,
    agent: ureq::Agent,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig, vocab: Vocabulary) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self { config, vocab, agent }
    }

    fn request(&self, context: &[TokenId]) -> Result<WireResponse, ProviderError> {
        let body = serde_json::to_string(&WireRequest {
            context_tokens: context.iter().map(|t| t.0).collect(),
            top_k: self.config.top_k.unwrap_or(self.vocab.len()),
        })
        .expect("request serializes");
        let mut response = self
            .agent
            .post(&self.config.url)
            .header("content-type", "application/json")
            .send(body)
            .map_err(map_transport)?;
        let text = response.body_mut().read_to_string().map_err(map_transport)?;
        serde_json::from_str(&text).map_err(|e| ProviderError::ProtocolError(e.to_string()))
    }
}

fn map_transport(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => ProviderError::Timeout,
        other => ProviderError::RemoteUnavailable(other.to_string()),
    }
}

/// Validates a wire response and renormalizes it.
pub(crate) fn distribution_from_wire(
    context: &[TokenId],
    response: &WireResponse,
    vocab_size: usize,
) -> Result<TokenDistribution, ProviderError> {
    let mut sum = 0.0;
    for e in &response.entries {
        if e.id as usize >= vocab_size {
            return Err(ProviderError::ProtocolError(format!("token id {} outside vocabulary", e.id)));
        }
        if !e.prob.is_finite() || e.prob < 0.0 {
            return Err(ProviderError::ProtocolError(format!("invalid probability {}", e.prob)));
        }
        sum += e.prob;
    }
    if sum < MASS_WINDOW.0 || sum > MASS_WINDOW.1 {
        return Err(ProviderError::ProtocolError(format!(
            "probability mass {sum} cannot be renormalized"
        )));
    }
    let entries = response
        .entries
        .iter()
        .map(|e| (TokenId(e.id), e.prob / sum))
        .collect();
    TokenDistribution::new(context, entries).map_err(|e| match e {
        ProviderError::NotNormalized(s) => ProviderError::ProtocolError(format!("mass {s} after renormalization")),
        other => other,
    })
}

impl Provider for RemoteProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, context: &[TokenId]) -> Result<TokenDistribution, ProviderError> {
        if let Some(bad) = context.iter().find(|t| !self.vocab.contains(**t)) {
            return Err(ProviderError::UnknownToken(format!("id {bad}")));
        }
        let response = self.request(context)?;
        distribution_from_wire(context, &response, self.vocab.len())
    }

    fn fingerprint(&self) -> ProviderFingerprint {
        let mut hasher = Sha256::new();
        hasher.update(self.config.url.as_bytes());
        for t in self.vocab.tokens() {
            hasher.update([0]);
            hasher.update(t.as_bytes());
        }
        ProviderFingerprint {
            algorithm: "remote".into(),
            content_hash: hex(&hasher.finalize()),
            vocab_size: self.vocab.len(),
        }
    }
}
