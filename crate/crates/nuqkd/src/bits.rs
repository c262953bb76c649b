//! Packed bit strings used for data sequences, basis sequences and keys.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// An ordered sequence of bits with an exact length (not necessarily a
/// multiple of 8). Bits are packed 8 per byte, most significant bit first,
/// the final partial byte zero-padded.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    bytes: Vec<u8>,
    len: usize,
}

impl BitString {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        let byte = self.len / 8;
        if byte == self.bytes.len() {
            self.bytes.push(0);
        }
        if bit {
            self.bytes[byte] |= 0x80 >> (self.len % 8);
        }
        self.len += 1;
    }

    pub fn get(&self, index: usize) -> Option<bool> {
        if index >= self.len {
            return None;
        }
        Some(self.bytes[index / 8] & (0x80 >> (index % 8)) != 0)
    }

    /// Checked access returning an error on out-of-range indices.
    pub fn bit(&self, index: usize) -> Result<bool> {
        self.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.len,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i).unwrap())
    }

    pub fn count_ones(&self) -> usize {
        // Padding bits are kept zero, so a plain popcount is exact.
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Number of positions where the two strings disagree.
    pub fn mismatches(&self, other: &BitString) -> Result<usize> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        Ok(self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Copy of the bits in `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<BitString> {
        if start > end || end > self.len {
            return Err(Error::IndexOutOfRange {
                index: end,
                len: self.len,
            });
        }
        Ok((start..end).map(|i| self.get(i).unwrap()).collect())
    }

    /// Packed byte representation (MSB-first, zero-padded).
    pub fn to_packed(&self) -> Vec<u8> {
        self.bytes.clone()
    }

    /// Packed MSB-first bytes; padding bits in the last byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Rebuild from packed bytes plus an exact bit count. The byte count must
    /// match `ceil(len / 8)` and padding bits must be zero so that
    /// `from_packed(to_packed(x), x.len()) == x` exactly.
    pub fn from_packed(bytes: &[u8], len: usize) -> Result<BitString> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::LengthMismatch {
                left: bytes.len(),
                right: len.div_ceil(8),
            });
        }
        if len % 8 != 0 {
            let pad_mask = 0xffu8 >> (len % 8);
            if bytes[bytes.len() - 1] & pad_mask != 0 {
                return Err(Error::Protocol("nonzero padding bits".into()));
            }
        }
        Ok(BitString {
            bytes: bytes.to_vec(),
            len,
        })
    }
}

impl FromIterator<bool> for BitString {
    fn from_iter<T: IntoIterator<Item = bool>>(iter: T) -> Self {
        let mut bits = BitString::new();
        for b in iter {
            bits.push(b);
        }
        bits
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 64 {
            write!(f, "BitString({})", self)
        } else {
            write!(
                f,
                "BitString(len={}, {}...)",
                self.len,
                self.slice(0, 64).unwrap()
            )
        }
    }
}

impl FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .enumerate()
            .map(|(i, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::InvalidHexDigit { digit: c, index: i }),
            })
            .collect()
    }
}

/// Expands a hexadecimal string to bits, 4 bits per digit, MSB first.
pub fn hex_to_bits(hex: &str) -> Result<BitString> {
    let mut bits = BitString::with_capacity(hex.len() * 4);
    for (index, digit) in hex.chars().enumerate() {
        let value = digit
            .to_digit(16)
            .ok_or(Error::InvalidHexDigit { digit, index })? as u8;
        for shift in (0..4).rev() {
            bits.push(value & (1 << shift) != 0);
        }
    }
    Ok(bits)
}
