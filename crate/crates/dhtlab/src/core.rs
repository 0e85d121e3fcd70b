//! Shared domain types: bit sequences, steganograms, and the small integer
//! identifiers used across the carrier and scattering modules.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A host in the simulated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostId(pub u32);

/// A flow (overt channel) between two hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowId(pub u32);

/// Stream index inside a multi-streaming flow. Must stay below the flow's
/// configured stream count.
pub type StreamIndex = u32;

/// Destination address index for a multi-homed flow. Must stay below the
/// flow's configured address count.
pub type AddressIndex = u32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitError {
    #[error("bit length {0} is not a multiple of 8")]
    NonOctetLength(usize),
    #[error("requested {requested} bits but only {available} available")]
    Underflow { requested: usize, available: usize },
}

/// An ordered sequence of bits, MSB-first relative to any byte framing.
///
/// This is the in-memory form of every steganogram and fragment body. All
/// codecs share the same MSB-first convention so values embedded by one
/// module decode identically in another.
#[derive(Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn new() -> Self {
        BitString(Vec::new())
    }

    /// Builds from a slice of 0/1 values; anything nonzero counts as 1.
    pub fn from_bits(bits: &[u8]) -> Self {
        BitString(bits.iter().map(|&b| b != 0).collect())
    }

    /// Parses a string of '0' and '1' characters. Any other character is
    /// ignored, which keeps test fixtures readable ("1010 0101").
    pub fn parse(s: &str) -> Self {
        BitString(
            s.chars()
                .filter(|c| *c == '0' || *c == '1')
                .map(|c| c == '1')
                .collect(),
        )
    }

    /// Expands bytes MSB-first: output length is 8 x input length.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut bits = Vec::with_capacity(bytes.len() * 8);
        for &b in bytes {
            for shift in (0..8).rev() {
                bits.push((b >> shift) & 1 == 1);
            }
        }
        BitString(bits)
    }

    /// Packs back into bytes; the length must be octet-aligned.
    pub fn to_bytes(&self) -> Result<Vec<u8>, BitError> {
        if self.0.len() % 8 != 0 {
            return Err(BitError::NonOctetLength(self.0.len()));
        }
        Ok(self
            .0
            .chunks(8)
            .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b as u8))
            .collect())
    }

    /// Splits off the first `n` bits, returning `(taken, remainder)`.
    pub fn take(&self, n: usize) -> Result<(BitString, BitString), BitError> {
        if n > self.0.len() {
            return Err(BitError::Underflow {
                requested: n,
                available: self.0.len(),
            });
        }
        let (head, tail) = self.0.split_at(n);
        Ok((BitString(head.to_vec()), BitString(tail.to_vec())))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, bit: bool) {
        self.0.push(bit);
    }

    pub fn extend(&mut self, other: &BitString) {
        self.0.extend_from_slice(&other.0);
    }

    pub fn concat(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.extend(other);
        out
    }

    pub fn prefix(&self, n: usize) -> BitString {
        BitString(self.0[..n.min(self.0.len())].to_vec())
    }

    pub fn suffix(&self, n: usize) -> BitString {
        let start = self.0.len().saturating_sub(n);
        BitString(self.0[start..].to_vec())
    }

    pub fn bit(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.0.iter().copied()
    }

    /// Interprets the whole string as an unsigned integer, MSB-first.
    /// Panics past 64 bits; carrier field widths never get close.
    pub fn to_value(&self) -> u64 {
        assert!(self.0.len() <= 64, "bit value wider than u64");
        self.0.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }

    /// Writes `value` as a fixed-width MSB-first bit string.
    pub fn from_value(value: u64, width: usize) -> Self {
        let mut bits = Vec::with_capacity(width);
        for shift in (0..width).rev() {
            bits.push((value >> shift) & 1 == 1);
        }
        BitString(bits)
    }

    /// Draws `len` random bits from the given generator.
    pub fn random<R: rand::Rng>(rng: &mut R, len: usize) -> Self {
        BitString((0..len).map(|_| rng.gen::<bool>()).collect())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(")?;
        for &b in &self.0 {
            write!(f, "{}", b as u8)?;
        }
        write!(f, ")")
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            write!(f, "{}", b as u8)?;
        }
        Ok(())
    }
}

/// The secret payload. Ids are assigned by the experiment runner so that
/// identical payloads stay distinguishable in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Steganogram {
    pub id: u16,
    pub payload: BitString,
}

impl Steganogram {
    pub fn new(id: u16, payload: BitString) -> Self {
        Steganogram { id, payload }
    }
}
