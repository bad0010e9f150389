//! Polynomial evaluation hash for block verification.
//!
//! Blocks are compared after reconciliation by exchanging short tags. The
//! tag is a polynomial hash over the prime field GF(2^127 - 1): the block is
//! split into 126-bit limbs (each trivially below the modulus, so the
//! encoding is injective), a final limb carries the bit length, and the
//! monic polynomial built from those limbs is evaluated at a seed-derived
//! point. The low 64 bits of the evaluation form the tag.
//!
//! For distinct inputs the tags collide only when the difference polynomial
//! evaluates into a thin truncation-collision set, which happens for at most
//! degree-many points per set element; `collision_bound` states the
//! resulting probability. A fresh random seed per comparison keeps repeated
//! verification failures independent.

use crate::bits::Bits;

/// Field modulus 2^127 - 1 (a Mersenne prime).
pub const FIELD_PRIME: u128 = (1 << 127) - 1;

/// Payload bits per polynomial limb.
pub const LIMB_BITS: usize = 126;

const MASK: u128 = FIELD_PRIME;

/// Folds a value below 2^128 into [0, p): two Mersenne folds and one
/// conditional subtract.
fn reduce(x: u128) -> u128 {
    let x = (x >> 127) + (x & MASK);
    let x = (x >> 127) + (x & MASK);
    if x >= FIELD_PRIME { x - FIELD_PRIME } else { x }
}

pub fn add_mod(a: u128, b: u128) -> u128 {
    debug_assert!(a < FIELD_PRIME && b < FIELD_PRIME);
    reduce(a + b)
}

/// Schoolbook 64-bit-limb multiply, reduced with 2^128 = 2 (mod p).
pub fn mul_mod(a: u128, b: u128) -> u128 {
    debug_assert!(a < FIELD_PRIME && b < FIELD_PRIME);
    let (a1, a0) = (a >> 64, a & u64::MAX as u128);
    let (b1, b0) = (b >> 64, b & u64::MAX as u128);
    let t0 = a0 * b0;
    let mid = a0 * b1 + a1 * b0 + (t0 >> 64);
    let high = a1 * b1 + (mid >> 64);
    let low = (mid << 64) | (t0 & u64::MAX as u128);
    // product = high * 2^128 + low, and 2^128 = 2 in the field
    reduce(reduce(high + high) + reduce(low))
}

/// Maps a uniform 128-bit seed to an evaluation point in [1, p - 1].
pub fn evaluation_point(seed: u128) -> u128 {
    seed % (FIELD_PRIME - 1) + 1
}

fn limb(block: &Bits, index: usize) -> u128 {
    let start = index * LIMB_BITS;
    let window = block.range(start, LIMB_BITS.min(block.len() - start));
    let mut v = window.word(0) as u128;
    if window.word_count() > 1 {
        v |= (window.word(1) as u128) << 64;
    }
    v
}

/// Tag of a block under a seed. Horner evaluation of the monic polynomial
/// x^(k+1) + limb_1 x^k + ... + limb_k x + bit_length at the seed's point.
pub fn verify_tag(block: &Bits, seed: u128) -> u64 {
    let x = evaluation_point(seed);
    let mut acc = 1u128;
    for i in 0..block.len().div_ceil(LIMB_BITS) {
        acc = add_mod(mul_mod(acc, x), limb(block, i));
    }
    acc = add_mod(mul_mod(acc, x), block.len() as u128);
    acc as u64
}

/// Upper bound on P[tags equal] for two distinct blocks of at most `bits`
/// bits under one uniform random seed. Counts the (k+2 conservative) roots
/// available per member of the 64-bit truncation set of size about 2^65,
/// over the roughly 2^127 evaluation points.
pub fn collision_bound(bits: usize) -> f64 {
    let degree = bits.div_ceil(LIMB_BITS) + 2;
    degree as f64 / (2f64).powi(62)
}
