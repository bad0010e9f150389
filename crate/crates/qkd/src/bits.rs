//! Packed bit strings.
//!
//! Bit `i` lives in word `i / 64` at position `i % 64`, so the byte form is
//! little-endian with LSB-first bits inside each byte. That layout is also
//! the wire encoding of syndromes and masks. Bits past `len` are kept zero,
//! which lets popcounts run straight over the words.

use std::fmt;

#[derive(Clone, PartialEq, Eq, Default)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn new() -> Bits {
        Bits::default()
    }

    pub fn zeros(len: usize) -> Bits {
        Bits { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bools(bits: &[bool]) -> Bits {
        let mut b = Bits::new();
        for &x in bits {
            b.push(x);
        }
        b
    }

    /// Reconstructs a bit string of `len` bits from its packed byte form.
    /// Returns None if the byte slice is not exactly `ceil(len / 8)` long or
    /// has nonzero padding bits.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Option<Bits> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let mut words = vec![0u64; len.div_ceil(64)];
        for (i, &byte) in bytes.iter().enumerate() {
            words[i / 8] |= (byte as u64) << (8 * (i % 8));
        }
        let b = Bits { words, len };
        if b.tail_is_clean() {
            Some(b)
        } else {
            None
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = (self.words[i / 8] >> (8 * (i % 8))) as u8;
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        if bit {
            self.words[self.len / 64] |= 1u64 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {} out of range {}", i, self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {} out of range {}", i, self.len);
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {} out of range {}", i, self.len);
        self.words[i / 64] ^= 1u64 << (i % 64);
    }

    pub fn extend_from(&mut self, other: &Bits) {
        for i in 0..other.len {
            self.push(other.get(i));
        }
    }

    /// Copy of bits `start .. start + len`.
    pub fn range(&self, start: usize, len: usize) -> Bits {
        assert!(start + len <= self.len);
        if start % 64 == 0 {
            let first = start / 64;
            let mut words = self.words[first..first + len.div_ceil(64)].to_vec();
            if len % 64 != 0 {
                if let Some(last) = words.last_mut() {
                    *last &= (1u64 << (len % 64)) - 1;
                }
            }
            return Bits { words, len };
        }
        let mut out = Bits::zeros(len);
        for i in 0..len {
            if self.get(start + i) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Hamming distance; the strings must have equal length.
    pub fn distance(&self, other: &Bits) -> usize {
        assert_eq!(self.len, other.len, "bit strings differ in length");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    pub fn xor_with(&mut self, other: &Bits) {
        assert_eq!(self.len, other.len, "bit strings differ in length");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    /// 64-bit chunk `i` (bits `64 i .. 64 i + 64`, zero-padded at the tail).
    pub fn word(&self, i: usize) -> u64 {
        self.words[i]
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    fn tail_is_clean(&self) -> bool {
        if self.len % 64 == 0 {
            return true;
        }
        let mask = !((1u64 << (self.len % 64)) - 1);
        self.words.last().is_none_or(|w| w & mask == 0)
    }
}

impl fmt::Debug for Bits {
    /// Compact form: `Bits(len=70, 1011001...)`. Full dumps of multi-kilobit
    /// strings would drown assertion output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bits(len={}", self.len)?;
        if self.len > 0 {
            write!(f, ", ")?;
            for i in 0..self.len.min(64) {
                write!(f, "{}", self.get(i) as u8)?;
            }
            if self.len > 64 {
                write!(f, "...")?;
            }
        }
        write!(f, ")")
    }
}
