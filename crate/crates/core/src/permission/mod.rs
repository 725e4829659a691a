//! Extraction permission: the parameters needed to extract a watermark are
//! sealed to the owner's public key, and only the private key opens them.

mod envelope;
mod keys;

use chacha20poly1305::aead::{Aead, AeadInPlace, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use hkdf::Hkdf;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as DalekPublic, StaticSecret};

use crate::bitstream::MessageBits;
use crate::codec::{self, CodecError, WatermarkParams, WatermarkedText};
use crate::partial;
use crate::providers::{Provider, ProviderError, ProviderFingerprint};

pub use envelope::{CipherEnvelope, ENVELOPE_MAGIC, ENVELOPE_VERSION, NONCE_LEN, TAG_LEN};
pub use keys::{keygen, Algorithm, KeyPair, PrivateKey, PublicKey};

pub const PAYLOAD_VERSION: u32 = 1;

const KEY_ID_LEN: usize = 8;
const WRAPPED_KEY_LEN: usize = 32 + KEY_ID_LEN + 32 + TAG_LEN;
const HKDF_INFO: &[u8] = b"segmark envelope key wrap v1";

#[derive(Debug, Error)]
pub enum PermissionError {
    #[error("unsupported algorithm {0:?}")]
    UnsupportedAlgorithm(String),
    #[error("verification failed: envelope was not sealed to this key")]
    VerificationFailed,
    #[error("envelope integrity check failed")]
    IntegrityError,
    #[error("malformed envelope: {0}")]
    FormatError(String),
    #[error("payload serialization: {0}")]
    Serialization(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("provider {actual} does not match the sealed provider {expected}")]
    FingerprintMismatch {
        expected: ProviderFingerprint,
        actual: ProviderFingerprint,
    },
    #[error("key file: {0}")]
    KeyFormat(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadMode {
    Full,
    Partial,
}

/// How the recovered bits should be rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MessageEncoding {
    Utf8,
    Bits,
}

/// Everything an extractor needs besides the text and the provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherPayload {
    pub version: u32,
    pub prompt: String,
    pub epsilon: u32,
    pub lambda: f64,
    pub top_k: usize,
    pub eta: f64,
    pub mode: PayloadMode,
    /// Regenerated sentences in embedding order. Empty in full mode.
    pub sentence_indices: Vec<usize>,
    pub length_a: usize,
    pub provider: ProviderFingerprint,
    pub encoding: MessageEncoding,
    /// Per-sentence token cap used in partial mode.
    pub sentence_token_cap: usize,
}

impl CipherPayload {
    /// A full-mode payload.
    pub fn full(
        prompt: impl Into<String>,
        params: WatermarkParams,
        length_a: usize,
        provider: ProviderFingerprint,
        encoding: MessageEncoding,
    ) -> Self {
        Self {
            version: PAYLOAD_VERSION,
            prompt: prompt.into(),
            epsilon: params.epsilon,
            lambda: params.lambda,
            top_k: params.top_k,
            eta: 1.0,
            mode: PayloadMode::Full,
            sentence_indices: Vec::new(),
            length_a,
            provider,
            encoding,
            sentence_token_cap: partial::DEFAULT_SENTENCE_TOKEN_CAP,
        }
    }

    pub fn params(&self) -> WatermarkParams {
        WatermarkParams::new(self.lambda, self.epsilon, self.top_k)
    }

    pub fn validate(&self) -> Result<(), PermissionError> {
        let bad = |msg: String| Err(PermissionError::InvalidPayload(msg));
        if self.version != PAYLOAD_VERSION {
            return bad(format!("unknown payload version {}", self.version));
        }
        if let Err(e) = self.params().validate() {
            return bad(e.to_string());
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad(format!("eta must be in (0, 1], got {}", self.eta));
        }
        if self.length_a == 0 {
            return bad("length_a must be at least 1".into());
        }
        match (self.mode, self.sentence_indices.is_empty()) {
            (PayloadMode::Full, false) => bad("full mode carries no sentence list".into()),
            (PayloadMode::Partial, true) => bad("partial mode needs a sentence list".into()),
            _ if self.sentence_token_cap == 0 => bad("sentence_token_cap must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn to_canonical_json(&self) -> Result<Vec<u8>, PermissionError> {
        serde_json::to_vec(self).map_err(|e| PermissionError::Serialization(e.to_string()))
    }
}

fn key_id(public: &DalekPublic) -> [u8; KEY_ID_LEN] {
    let digest = Sha256::digest(public.as_bytes());
    digest[..KEY_ID_LEN].try_into().expect("digest is 32 bytes")
}

fn wrapping_cipher(shared: &[u8; 32], eph: &DalekPublic, recipient: &DalekPublic) -> ChaCha20Poly1305 {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph.as_bytes());
    salt[32..].copy_from_slice(recipient.as_bytes());
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut kek = [0u8; 32];
    hk.expand(HKDF_INFO, &mut kek).expect("32 bytes is a valid HKDF length");
    ChaCha20Poly1305::new(Key::from_slice(&kek))
}

/// Encrypts `payload` for the holder of `public`.
pub fn seal(payload: &CipherPayload, public: &PublicKey) -> Result<CipherEnvelope, PermissionError> {
    payload.validate()?;
    let plaintext = payload.to_canonical_json()?;
    let ciphertext_len = u32::try_from(plaintext.len())
        .map_err(|_| PermissionError::Serialization("payload too large".into()))?;

    let mut rng = rand::rngs::OsRng;
    let mut content_key = [0u8; 32];
    rng.fill_bytes(&mut content_key);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);

    let eph_secret = StaticSecret::random_from_rng(rng);
    let eph_public = DalekPublic::from(&eph_secret);
    let shared = eph_secret.diffie_hellman(&public.key);
    if !shared.was_contributory() {
        return Err(PermissionError::KeyFormat("recipient key is a low-order point".into()));
    }
    let enc_key = wrapping_cipher(shared.as_bytes(), &eph_public, &public.key)
        .encrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), content_key.as_slice())
        .expect("in-memory encryption cannot fail");

    let mut wrapped_key = Vec::with_capacity(WRAPPED_KEY_LEN);
    wrapped_key.extend_from_slice(eph_public.as_bytes());
    wrapped_key.extend_from_slice(&key_id(&public.key));
    wrapped_key.extend_from_slice(&enc_key);

    let mut envelope = CipherEnvelope {
        version: ENVELOPE_VERSION,
        algorithm: Algorithm::DEFAULT.id(),
        wrapped_key,
        nonce,
        ciphertext: Vec::new(),
        tag: [0; TAG_LEN],
    };
    // The header (including the ciphertext length) is authenticated, so it
    // is computed with a placeholder body of the final length.
    envelope.ciphertext = vec![0; ciphertext_len as usize];
    let aad = envelope.header_bytes();
    let mut body = plaintext;
    let tag = ChaCha20Poly1305::new(Key::from_slice(&content_key))
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), &aad, &mut body)
        .expect("in-memory encryption cannot fail");
    envelope.ciphertext = body;
    envelope.tag = tag.into();
    Ok(envelope)
}

/// Decrypts an envelope. Fails atomically: either the exact sealed payload
/// comes back or an error does.
pub fn open(envelope: &CipherEnvelope, private: &PrivateKey) -> Result<CipherPayload, PermissionError> {
    if Algorithm::from_id(envelope.algorithm).is_none() {
        return Err(PermissionError::FormatError(format!(
            "unknown algorithm id {}",
            envelope.algorithm
        )));
    }
    if envelope.wrapped_key.len() != WRAPPED_KEY_LEN {
        return Err(PermissionError::FormatError(format!(
            "wrapped key is {} bytes, expected {WRAPPED_KEY_LEN}",
            envelope.wrapped_key.len()
        )));
    }
    let own_public = DalekPublic::from(&private.secret);
    let (eph, rest) = envelope.wrapped_key.split_at(32);
    let (id, enc_key) = rest.split_at(KEY_ID_LEN);
    let eph = DalekPublic::from(<[u8; 32]>::try_from(eph).expect("split at 32"));
    let addressed_to_us = id == key_id(&own_public);

    let shared = private.secret.diffie_hellman(&eph);
    let unwrapped = if shared.was_contributory() {
        wrapping_cipher(shared.as_bytes(), &eph, &own_public)
            .decrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), enc_key)
            .ok()
    } else {
        None
    };
    let content_key = match unwrapped {
        Some(k) if k.len() == 32 => k,
        _ if addressed_to_us => return Err(PermissionError::IntegrityError),
        _ => return Err(PermissionError::VerificationFailed),
    };

    let aad = envelope.header_bytes();
    let plaintext = ChaCha20Poly1305::new(Key::from_slice(&content_key))
        .decrypt(
            Nonce::from_slice(&envelope.nonce),
            Payload {
                msg: &[envelope.ciphertext.as_slice(), envelope.tag.as_slice()].concat(),
                aad: &aad,
            },
        )
        .map_err(|_| PermissionError::IntegrityError)?;
    // Authenticated but unparseable plaintext can only come from a
    // different implementation; treat it as malformed.
    let payload: CipherPayload = serde_json::from_slice(&plaintext)
        .map_err(|e| PermissionError::FormatError(format!("payload: {e}")))?;
    payload
        .validate()
        .map_err(|e| PermissionError::FormatError(e.to_string()))?;
    Ok(payload)
}

/// Parses and opens an envelope file's bytes.
pub fn open_bytes(bytes: &[u8], private: &PrivateKey) -> Result<CipherPayload, PermissionError> {
    open(&CipherEnvelope::from_bytes(bytes)?, private)
}

/// Opens the envelope, checks the provider, and extracts the message.
pub fn verify_and_extract<P: Provider + ?Sized>(
    text: &WatermarkedText,
    envelope: &CipherEnvelope,
    private: &PrivateKey,
    provider: &P,
) -> Result<MessageBits, PermissionError> {
    let payload = open(envelope, private)?;
    let actual = provider.fingerprint();
    if actual != payload.provider {
        return Err(PermissionError::FingerprintMismatch {
            expected: payload.provider,
            actual,
        });
    }
    let bits = match payload.mode {
        PayloadMode::Full => {
            let prompt = provider.tokenize(&payload.prompt)?;
            codec::extract(provider, &prompt, &text.token_ids, &payload.params(), payload.length_a)?
        }
        PayloadMode::Partial => partial::extract_partial(provider, &text.rendered_text, &payload)?,
    };
    Ok(bits)
}

/// Like [`verify_and_extract`] but starting from received text, which may
/// contain words outside the provider's vocabulary.
pub fn verify_and_extract_text<P: Provider + ?Sized>(
    text: &str,
    envelope: &CipherEnvelope,
    private: &PrivateKey,
    provider: &P,
) -> Result<(CipherPayload, MessageBits), PermissionError> {
    let payload = open(envelope, private)?;
    let actual = provider.fingerprint();
    if actual != payload.provider {
        return Err(PermissionError::FingerprintMismatch {
            expected: payload.provider,
            actual,
        });
    }
    let bits = match payload.mode {
        PayloadMode::Full => {
            let prompt = provider.tokenize(&payload.prompt)?;
            let received = provider.vocabulary().tokenize_lossy(text);
            let (bits, failure) =
                codec::extract_lossy(provider, &prompt, &received, &payload.params(), Some(payload.length_a))?;
            if let Some(err) = failure {
                return Err(err.into());
            }
            MessageBits::from_bits(bits).map_err(CodecError::from)?
        }
        PayloadMode::Partial => partial::extract_partial(provider, text, &payload)?,
    };
    Ok((payload, bits))
}
