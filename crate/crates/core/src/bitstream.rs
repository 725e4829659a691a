//! Watermark messages as bit sequences.
//!
//! Text messages are encoded as their UTF-8 bytes, most-significant bit
//! first. A [`MessageBits`] carries a cursor so an embedding session can
//! read fixed-width windows and then commit only the prefix that was
//! actually embedded.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("message is empty")]
    EmptyMessage,
    #[error("message exhausted: no unconsumed bits remain")]
    MessageExhausted,
    #[error("cannot consume {requested} bits at cursor {cursor} of {len}")]
    OverConsume {
        cursor: usize,
        requested: usize,
        len: usize,
    },
    #[error("invalid character {0:?} in bit literal")]
    InvalidBitLiteral(char),
    #[error("window width must be between 1 and {max}, got {got}")]
    InvalidWidth { got: u32, max: u32 },
}

/// Widest window the codec supports. Code points are held in a `u64`.
pub const MAX_WINDOW_BITS: u32 = 32;

/// An ordered bit sequence plus a consumption cursor.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageBits {
    bits: Vec<bool>,
    cursor: usize,
}

impl MessageBits {
    /// Builds a message from raw bits. Rejects an empty sequence.
    pub fn from_bits(bits: Vec<bool>) -> Result<Self, BitstreamError> {
        if bits.is_empty() {
            return Err(BitstreamError::EmptyMessage);
        }
        Ok(Self { bits, cursor: 0 })
    }

    /// Parses a literal such as `"0101"`.
    pub fn from_literal(literal: &str) -> Result<Self, BitstreamError> {
        let bits = parse_bits(literal)?;
        Self::from_bits(bits)
    }

    /// UTF-8 bytes of `text`, each byte MSB first.
    pub fn encode_text(text: &str) -> Result<Self, BitstreamError> {
        if text.is_empty() {
            return Err(BitstreamError::EmptyMessage);
        }
        Self::from_bits(bytes_to_bits(text.as_bytes()))
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.bits.len() - self.cursor
    }

    pub fn is_exhausted(&self) -> bool {
        self.cursor == self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Resets the cursor to the start of the message.
    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    /// Reads up to `width` bits starting at the cursor without consuming them.
    pub fn read_window(&self, width: u32) -> Result<BitWindow, BitstreamError> {
        if width == 0 || width > MAX_WINDOW_BITS {
            return Err(BitstreamError::InvalidWidth {
                got: width,
                max: MAX_WINDOW_BITS,
            });
        }
        if self.is_exhausted() {
            return Err(BitstreamError::MessageExhausted);
        }
        let width_eff = (width as usize).min(self.remaining());
        let value = bits_to_u64(&self.bits[self.cursor..self.cursor + width_eff]);
        Ok(BitWindow {
            offset: self.cursor,
            width: width_eff as u32,
            value,
        })
    }

    /// Advances the cursor by `count` bits. Zero is a no-op.
    pub fn consume(&mut self, count: usize) -> Result<(), BitstreamError> {
        if self.cursor + count > self.bits.len() {
            return Err(BitstreamError::OverConsume {
                cursor: self.cursor,
                requested: count,
                len: self.bits.len(),
            });
        }
        self.cursor += count;
        Ok(())
    }

    /// Interprets the bits as UTF-8 text.
    pub fn decode_text(&self) -> DecodedMessage {
        decode_bits(&self.bits)
    }

    /// The bits as a `0`/`1` string.
    pub fn to_literal(&self) -> String {
        bits_to_literal(&self.bits)
    }
}

impl fmt::Debug for MessageBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MessageBits({} @ {})", self.to_literal(), self.cursor)
    }
}

impl fmt::Display for MessageBits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

/// A window of message bits read at the cursor, interpreted MSB first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitWindow {
    pub offset: usize,
    pub width: u32,
    pub value: u64,
}

/// Result of decoding a bit sequence back to text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMessage {
    pub text: String,
    /// Set when the bit count is not a multiple of eight or the bytes are
    /// not valid UTF-8. `text` is then a lossy rendering.
    pub residue: bool,
    pub bits: String,
}

pub fn decode_bits(bits: &[bool]) -> DecodedMessage {
    let whole = bits.len() / 8;
    let bytes: Vec<u8> = bits[..whole * 8]
        .chunks(8)
        .map(|chunk| bits_to_u64(chunk) as u8)
        .collect();
    let trailing = !bits.len().is_multiple_of(8);
    let (text, invalid) = match String::from_utf8(bytes) {
        Ok(text) => (text, false),
        Err(err) => (String::from_utf8_lossy(err.as_bytes()).into_owned(), true),
    };
    DecodedMessage {
        text,
        residue: trailing || invalid,
        bits: bits_to_literal(bits),
    }
}

pub fn parse_bits(literal: &str) -> Result<Vec<bool>, BitstreamError> {
    literal
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(BitstreamError::InvalidBitLiteral(other)),
        })
        .collect()
}

pub fn bits_to_literal(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub(crate) fn bytes_to_bits(bytes: &[u8]) -> Vec<bool> {
    bytes
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1))
        .collect()
}

pub(crate) fn bits_to_u64(bits: &[bool]) -> u64 {
    bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
}

/// The top `count` bits of a `width`-bit value, MSB first.
pub(crate) fn u64_to_bits(value: u64, width: u32, count: u32) -> Vec<bool> {
    (0..count).map(|i| (value >> (width - 1 - i)) & 1 == 1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encodes_ascii_msb_first() {
        assert_eq!(MessageBits::encode_text("A").unwrap().to_literal(), "01000001");
        assert_eq!(
            MessageBits::encode_text("AB").unwrap().to_literal(),
            "0100000101000010"
        );
        assert_eq!(
            MessageBits::encode_text(""),
            Err(BitstreamError::EmptyMessage)
        );
    }

    #[test]
    fn decode_flags_residue() {
        let a = decode_bits(&parse_bits("01000001").unwrap());
        assert_eq!((a.text.as_str(), a.residue), ("A", false));
        let b = decode_bits(&parse_bits("010000010").unwrap());
        assert_eq!((b.text.as_str(), b.residue), ("A", true));
        let empty = decode_bits(&[]);
        assert_eq!((empty.text.as_str(), empty.residue), ("", false));
        let invalid = decode_bits(&parse_bits("11111111").unwrap());
        assert!(invalid.residue);
        assert_eq!(invalid.bits, "11111111");
    }

    #[test]
    fn window_truncates_at_tail() {
        let m = MessageBits::from_literal("010110010").unwrap();
        let w = m.read_window(16).unwrap();
        assert_eq!((w.width, w.value), (9, 178));

        let mut m = MessageBits::from_literal("101101").unwrap();
        let w = m.read_window(3).unwrap();
        assert_eq!((w.width, w.value), (3, 5));
        m.consume(5).unwrap();
        let w = m.read_window(3).unwrap();
        assert_eq!((w.offset, w.width, w.value), (5, 1, 1));
        m.consume(1).unwrap();
        assert_eq!(m.read_window(3), Err(BitstreamError::MessageExhausted));
    }

    #[test]
    fn consume_bounds() {
        let mut m = MessageBits::from_literal("010110010").unwrap();
        m.consume(2).unwrap();
        assert_eq!(m.cursor(), 2);
        m.consume(0).unwrap();
        assert_eq!(m.cursor(), 2);
        m.consume(5).unwrap();
        assert_eq!(
            m.consume(3),
            Err(BitstreamError::OverConsume {
                cursor: 7,
                requested: 3,
                len: 9
            })
        );
        assert_eq!(m.cursor(), 7);
    }

    #[test]
    fn rejects_bad_literals() {
        assert_eq!(
            MessageBits::from_literal("01x"),
            Err(BitstreamError::InvalidBitLiteral('x'))
        );
        assert_eq!(MessageBits::from_literal(""), Err(BitstreamError::EmptyMessage));
    }

    proptest! {
        #[test]
        fn text_round_trip(s in "\\PC{1,40}") {
            let decoded = MessageBits::encode_text(&s).unwrap().decode_text();
            prop_assert!(!decoded.residue);
            prop_assert_eq!(decoded.text, s);
        }

        #[test]
        fn window_never_overreads(bits in proptest::collection::vec(any::<bool>(), 1..64),
                                  width in 1u32..20, start in 0usize..64) {
            let mut m = MessageBits::from_bits(bits.clone()).unwrap();
            let start = start % bits.len();
            m.consume(start).unwrap();
            let w = m.read_window(width).unwrap();
            prop_assert_eq!(w.width as usize, (width as usize).min(bits.len() - start));
            prop_assert!(w.value < (1u64 << w.width));
            prop_assert_eq!(w.value, bits_to_u64(&bits[start..start + w.width as usize]));
        }
    }
}
