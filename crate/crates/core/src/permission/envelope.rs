//! Binary envelope layout (all integers little-endian):
//!
//! ```text
//! magic "ITSM" | u8 version | u8 algorithm | u16 wrapped-key len | wrapped key
//! | 12-byte nonce | u32 ciphertext len | ciphertext | 16-byte tag
//! ```

use super::PermissionError;

pub const ENVELOPE_MAGIC: &[u8; 4] = b"ITSM";
pub const ENVELOPE_VERSION: u8 = 1;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherEnvelope {
    pub version: u8,
    pub algorithm: u8,
    pub wrapped_key: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl CipherEnvelope {
    /// Everything before the ciphertext body; bound to the content cipher
    /// as associated data.
    pub(crate) fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 2 + 2 + self.wrapped_key.len() + NONCE_LEN + 4);
        out.extend_from_slice(ENVELOPE_MAGIC);
        out.push(self.version);
        out.push(self.algorithm);
        out.extend_from_slice(&(self.wrapped_key.len() as u16).to_le_bytes());
        out.extend_from_slice(&self.wrapped_key);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_le_bytes());
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes();
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PermissionError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != ENVELOPE_MAGIC {
            return Err(PermissionError::FormatError("bad magic".into()));
        }
        let version = r.u8()?;
        if version != ENVELOPE_VERSION {
            return Err(PermissionError::FormatError(format!("unsupported envelope version {version}")));
        }
        let algorithm = r.u8()?;
        let wrapped_len = u16::from_le_bytes(r.array()?) as usize;
        let wrapped_key = r.take(wrapped_len)?.to_vec();
        let nonce = r.array()?;
        let ct_len = u32::from_le_bytes(r.array()?) as usize;
        let ciphertext = r.take(ct_len)?.to_vec();
        let tag = r.array()?;
        if r.pos != bytes.len() {
            return Err(PermissionError::FormatError(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            version,
            algorithm,
            wrapped_key,
            nonce,
            ciphertext,
            tag,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PermissionError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PermissionError::FormatError("truncated envelope".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, PermissionError> {
        Ok(self.take(1)?[0])
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], PermissionError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}
