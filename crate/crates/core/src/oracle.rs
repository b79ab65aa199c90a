//! Reference binary arithmetic.
//!
//! [`BitVec`] is a plain bit-per-element, LSB-first unsigned integer. It is
//! the ground truth every accuracy number is checked against, so it shares
//! no code with the cellular rule: multiplication here is textbook
//! shift-and-add over the bit sequence.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Arbitrary-length unsigned integer, one bit per element, LSB first.
///
/// Always canonical: no most-significant zeros, and zero is the single bit
/// `[0]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVec {
    bits: Vec<u8>,
}

impl BitVec {
    pub fn zero() -> Self {
        BitVec { bits: vec![0] }
    }

    pub fn one() -> Self {
        BitVec { bits: vec![1] }
    }

    /// Build from LSB-first bits. Any non-zero element counts as a 1.
    pub fn from_bits<I: IntoIterator<Item = u8>>(bits: I) -> Self {
        let bits = bits.into_iter().map(|b| u8::from(b != 0)).collect();
        let mut v = BitVec { bits };
        v.canonicalize();
        v
    }

    pub fn from_u64(x: u64) -> Self {
        Self::from_u128(u128::from(x))
    }

    pub fn from_u128(x: u128) -> Self {
        Self::from_bits((0..128).map(|i| ((x >> i) & 1) as u8))
    }

    /// Parse a non-empty string of ASCII decimal digits.
    pub fn from_decimal_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || !s.bytes().all(|c| c.is_ascii_digit()) {
            return Err(Error::InvalidDecimal(s.to_string()));
        }
        let ten = BitVec::from_u64(10);
        let mut acc = BitVec::zero();
        for c in s.bytes() {
            acc = multiply_oracle(&acc, &ten).add(&BitVec::from_u64(u64::from(c - b'0')));
        }
        Ok(acc)
    }

    fn canonicalize(&mut self) {
        while self.bits.len() > 1 && *self.bits.last().unwrap() == 0 {
            self.bits.pop();
        }
        if self.bits.is_empty() {
            self.bits.push(0);
        }
    }

    /// LSB-first bits in canonical form.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Number of stored bits (1 for zero).
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Bit `i`, zero beyond the stored length.
    pub fn bit(&self, i: usize) -> u8 {
        self.bits.get(i).copied().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.bits == [0]
    }

    pub fn to_u128(&self) -> Option<u128> {
        if self.bits.len() > 128 {
            return None;
        }
        Some(
            self.bits
                .iter()
                .enumerate()
                .fold(0u128, |acc, (i, &b)| acc | (u128::from(b) << i)),
        )
    }

    pub fn to_u64(&self) -> Option<u64> {
        self.to_u128().and_then(|x| u64::try_from(x).ok())
    }

    pub fn add(&self, other: &BitVec) -> BitVec {
        let len = self.len().max(other.len()) + 1;
        let mut out = Vec::with_capacity(len);
        let mut carry = 0u8;
        for i in 0..len {
            let s = self.bit(i) + other.bit(i) + carry;
            out.push(s & 1);
            carry = s >> 1;
        }
        BitVec::from_bits(out)
    }

    /// `self · 2^k`.
    pub fn shl(&self, k: usize) -> BitVec {
        if self.is_zero() {
            return BitVec::zero();
        }
        let mut bits = vec![0u8; k];
        bits.extend_from_slice(&self.bits);
        BitVec { bits }
    }

    /// Base-10 representation.
    pub fn to_decimal_string(&self) -> String {
        // Horner over the bits, accumulating into base-1e9 limbs.
        const BASE: u64 = 1_000_000_000;
        let mut limbs: Vec<u64> = vec![0];
        for &b in self.bits.iter().rev() {
            let mut carry = u64::from(b);
            for limb in limbs.iter_mut() {
                let v = *limb * 2 + carry;
                *limb = v % BASE;
                carry = v / BASE;
            }
            if carry > 0 {
                limbs.push(carry);
            }
        }
        let mut s = limbs.last().unwrap().to_string();
        for limb in limbs.iter().rev().skip(1) {
            s.push_str(&format!("{limb:09}"));
        }
        s
    }
}

impl Ord for BitVec {
    fn cmp(&self, other: &Self) -> Ordering {
        self.len()
            .cmp(&other.len())
            .then_with(|| self.bits.iter().rev().cmp(other.bits.iter().rev()))
    }
}

impl PartialOrd for BitVec {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string())
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVec({self})")
    }
}

impl From<u64> for BitVec {
    fn from(x: u64) -> Self {
        BitVec::from_u64(x)
    }
}

/// Exact product by shift-and-add: for every set bit `a_i`, add `b` at
/// offset `i` into a wide accumulator with ripple carry.
pub fn multiply_oracle(a: &BitVec, b: &BitVec) -> BitVec {
    if a.is_zero() || b.is_zero() {
        return BitVec::zero();
    }
    let width = a.len() + b.len();
    let mut acc = vec![0u8; width];
    for (i, &ai) in a.bits().iter().enumerate() {
        if ai == 0 {
            continue;
        }
        let mut carry = 0u8;
        for (offset, slot) in acc[i..].iter_mut().enumerate() {
            let s = *slot + b.bit(offset) + carry;
            *slot = s & 1;
            carry = s >> 1;
            if offset >= b.len() && carry == 0 {
                break;
            }
        }
        debug_assert_eq!(carry, 0);
    }
    BitVec::from_bits(acc)
}

/// Uniform random integer of `n` bits.
///
/// With `msb_set` the value lies in `[2^(n-1), 2^n)`, otherwise in `[0, 2^n)`.
pub fn random_nbit<R: Rng + ?Sized>(n: usize, msb_set: bool, rng: &mut R) -> Result<BitVec> {
    if n == 0 {
        return Err(Error::ZeroWidth);
    }
    let mut bits: Vec<u8> = Vec::with_capacity(n);
    let mut word = 0u64;
    for i in 0..n {
        if i % 64 == 0 {
            word = rng.random();
        }
        bits.push(((word >> (i % 64)) & 1) as u8);
    }
    if msb_set {
        bits[n - 1] = 1;
    }
    Ok(BitVec::from_bits(bits))
}

/// Number of base-10 digits of `x` (1 for zero).
pub fn decimal_digit_count(x: &BitVec) -> usize {
    x.to_decimal_string().len()
}
