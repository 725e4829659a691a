use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use x25519_dalek::{PublicKey as DalekPublic, StaticSecret};

use super::PermissionError;

/// Key agreement and envelope cipher suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// X25519 key agreement, HKDF-SHA256, ChaCha20-Poly1305.
    X25519ChaCha20Poly1305,
}

impl Algorithm {
    pub const DEFAULT: Algorithm = Algorithm::X25519ChaCha20Poly1305;

    pub fn id(self) -> u8 {
        match self {
            Algorithm::X25519ChaCha20Poly1305 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::X25519ChaCha20Poly1305 => "x25519-chacha20poly1305",
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (id == 1).then_some(Algorithm::X25519ChaCha20Poly1305)
    }

    pub fn from_name(name: &str) -> Result<Self, PermissionError> {
        match name {
            "x25519" | "x25519-chacha20poly1305" => Ok(Algorithm::X25519ChaCha20Poly1305),
            other => Err(PermissionError::UnsupportedAlgorithm(other.to_string())),
        }
    }
}

// DER prefixes for X25519 keys (RFC 8410): SubjectPublicKeyInfo and PKCS#8.
const SPKI_PREFIX: [u8; 12] = [0x30, 0x2a, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x6e, 0x03, 0x21, 0x00];
const PKCS8_PREFIX: [u8; 16] = [
    0x30, 0x2e, 0x02, 0x01, 0x00, 0x30, 0x05, 0x06, 0x03, 0x2b, 0x65, 0x6e, 0x04, 0x22, 0x04, 0x20,
];

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) key: DalekPublic,
}

#[derive(Clone)]
pub struct PrivateKey {
    pub(crate) secret: StaticSecret,
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({:02x?})", &self.key.as_bytes()[..4])
    }
}

impl std::fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PrivateKey(..)")
    }
}

#[derive(Debug, Clone)]
pub struct KeyPair {
    pub algorithm: Algorithm,
    pub public: PublicKey,
    pub private: PrivateKey,
}

pub fn keygen(algorithm: &str) -> Result<KeyPair, PermissionError> {
    let algorithm = Algorithm::from_name(algorithm)?;
    let secret = StaticSecret::random_from_rng(rand::rngs::OsRng);
    Ok(KeyPair {
        algorithm,
        public: PublicKey {
            key: DalekPublic::from(&secret),
        },
        private: PrivateKey { secret },
    })
}

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        self.key.as_bytes()
    }

    pub fn to_pem(&self) -> String {
        let mut der = SPKI_PREFIX.to_vec();
        der.extend_from_slice(self.key.as_bytes());
        pem_encode("PUBLIC KEY", &der)
    }

    pub fn from_pem(pem: &str) -> Result<Self, PermissionError> {
        let der = pem_decode("PUBLIC KEY", pem)?;
        let raw = strip_prefix(&der, &SPKI_PREFIX)?;
        Ok(Self {
            key: DalekPublic::from(raw),
        })
    }
}

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey {
            key: DalekPublic::from(&self.secret),
        }
    }

    pub fn to_pem(&self) -> String {
        let mut der = PKCS8_PREFIX.to_vec();
        der.extend_from_slice(self.secret.as_bytes());
        pem_encode("PRIVATE KEY", &der)
    }

    pub fn from_pem(pem: &str) -> Result<Self, PermissionError> {
        let der = pem_decode("PRIVATE KEY", pem)?;
        let raw = strip_prefix(&der, &PKCS8_PREFIX)?;
        Ok(Self {
            secret: StaticSecret::from(raw),
        })
    }
}

fn strip_prefix(der: &[u8], prefix: &[u8]) -> Result<[u8; 32], PermissionError> {
    der.strip_prefix(prefix)
        .and_then(|rest| <[u8; 32]>::try_from(rest).ok())
        .ok_or_else(|| PermissionError::KeyFormat("not an X25519 key".into()))
}

fn pem_encode(label: &str, der: &[u8]) -> String {
    let body = STANDARD.encode(der);
    let mut out = format!("-----BEGIN {label}-----\n");
    for line in body.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(line).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&format!("-----END {label}-----\n"));
    out
}

fn pem_decode(label: &str, pem: &str) -> Result<Vec<u8>, PermissionError> {
    let begin = format!("-----BEGIN {label}-----");
    let end = format!("-----END {label}-----");
    let body = pem
        .trim()
        .strip_prefix(&begin)
        .and_then(|rest| rest.strip_suffix(&end))
        .ok_or_else(|| PermissionError::KeyFormat(format!("expected a PEM {label} block")))?;
    let compact: String = body.chars().filter(|c| !c.is_whitespace()).collect();
    STANDARD
        .decode(compact)
        .map_err(|e| PermissionError::KeyFormat(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pem_round_trip() {
        let pair = keygen("x25519").unwrap();
        let public = PublicKey::from_pem(&pair.public.to_pem()).unwrap();
        assert_eq!(public, pair.public);
        let private = PrivateKey::from_pem(&pair.private.to_pem()).unwrap();
        assert_eq!(private.public_key(), pair.public);
        assert!(pair.public.to_pem().starts_with("-----BEGIN PUBLIC KEY-----\nMCowBQYDK2VuAyEA"));
    }

    #[test]
    fn rejects_wrong_blocks() {
        let pair = keygen("x25519").unwrap();
        assert!(PublicKey::from_pem(&pair.private.to_pem()).is_err());
        assert!(PrivateKey::from_pem("garbage").is_err());
    }

    #[test]
    fn unknown_algorithm() {
        assert!(matches!(keygen("rsa-512"), Err(PermissionError::UnsupportedAlgorithm(_))));
        assert_eq!(Algorithm::from_id(1), Some(Algorithm::DEFAULT));
        assert_eq!(Algorithm::from_id(2), None);
    }

    #[test]
    fn fresh_keys_differ() {
        let a = keygen("x25519").unwrap();
        let b = keygen("x25519").unwrap();
        assert_ne!(a.public, b.public);
    }
}
