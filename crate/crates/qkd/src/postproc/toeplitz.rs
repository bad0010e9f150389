//! Toeplitz-matrix privacy amplification over GF(2).
//!
//! The l x n compression matrix T is defined by a diagonal bit string d of
//! length n + l - 1, expanded deterministically from a public 128-bit seed:
//! T[i][j] = d[n - 1 + i - j]. Both endpoints expand the same seed and apply
//! T to their verified key, so equal inputs map to equal outputs. The family
//! is 2-universal: for x != y, P over seeds of [Tx = Ty] is 2^-l.

use crate::bits::Bits;
use crate::rng::{SlotRng, StreamKind};

/// Expands the seed into the diagonal string d of length `len` bits.
fn expand_diagonal(toeplitz_seed: u128, len: usize) -> Vec<u64> {
    let mut rng = SlotRng::from_wide(toeplitz_seed, StreamKind::ToeplitzExpand);
    (0..len.div_ceil(64)).map(|_| rng.next_u64()).collect()
}

#[inline]
fn diag_bit(d: &[u64], i: usize) -> bool {
    (d[i / 64] >> (i % 64)) & 1 == 1
}

/// Compresses `block` (n bits) to `l` bits with the Toeplitz matrix of
/// `toeplitz_seed`. `l = 0` yields the empty string; `l` must not exceed n.
pub fn privacy_amplify(block: &Bits, toeplitz_seed: u128, l: usize) -> Bits {
    let n = block.len();
    assert!(l <= n, "cannot extract {} bits from {}", l, n);
    if l == 0 {
        return Bits::new();
    }
    let d = expand_diagonal(toeplitz_seed, n + l - 1);
    let mut out = Bits::zeros(l);
    // out[i] = parity over j of block[j] * d[(n - 1 + i) - j]. Reversing d
    // turns each row into a contiguous window, so the dot product runs over
    // whole words: with w[m] = d[L - 1 - m], row i is w[l - 1 - i ..][..n].
    let dlen = n + l - 1;
    let mut rev = vec![0u64; dlen.div_ceil(64)];
    for m in 0..dlen {
        if diag_bit(&d, dlen - 1 - m) {
            rev[m / 64] |= 1 << (m % 64);
        }
    }
    // guard word so the two-word window fetch below never runs off the end
    rev.push(0);
    for i in 0..l {
        let off = l - 1 - i;
        let (word_off, bit_off) = (off / 64, off % 64);
        let mut acc = 0u64;
        for k in 0..block.word_count() {
            let w = if bit_off == 0 {
                rev[word_off + k]
            } else {
                (rev[word_off + k] >> bit_off) | (rev[word_off + k + 1] << (64 - bit_off))
            };
            acc ^= w & block.word(k);
        }
        // bits past n in the last block word are zero, so no tail mask needed
        if acc.count_ones() % 2 == 1 {
            out.set(i, true);
        }
    }
    out
}

/// Dense reference: builds T explicitly and multiplies over GF(2). Quadratic;
/// used by the tests as the independent oracle for the windowed fast path.
pub fn privacy_amplify_dense(block: &Bits, toeplitz_seed: u128, l: usize) -> Bits {
    let n = block.len();
    assert!(l <= n);
    if l == 0 {
        return Bits::new();
    }
    let d = expand_diagonal(toeplitz_seed, n + l - 1);
    let mut out = Bits::zeros(l);
    for i in 0..l {
        let mut parity = false;
        for j in 0..n {
            if block.get(j) && diag_bit(&d, n - 1 + i - j) {
                parity = !parity;
            }
        }
        out.set(i, parity);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SlotRng;
    use crate::types::RngSeed;

    fn random_bits(len: usize, rng: &mut SlotRng) -> Bits {
        let mut b = Bits::new();
        for _ in 0..len {
            b.push(rng.chance(0.5));
        }
        b
    }

    #[test]
    fn zero_output_length_is_empty() {
        let block = Bits::from_bools(&[true, false, true]);
        assert!(privacy_amplify(&block, 99, 0).is_empty());
    }

    #[test]
    fn fast_path_matches_dense_oracle() {
        let mut rng = SlotRng::for_index(RngSeed(11), StreamKind::ToeplitzExpand, 5);
        for trial in 0..100u64 {
            let n = 1 + (rng.next_u64() % 64) as usize;
            let l = (rng.next_u64() as usize) % (n.min(16) + 1);
            let block = random_bits(n, &mut rng);
            let seed = (trial as u128) * 0x9e37_79b9 + 17;
            assert_eq!(
                privacy_amplify(&block, seed, l),
                privacy_amplify_dense(&block, seed, l),
                "n={} l={} trial={}",
                n,
                l,
                trial
            );
        }
    }

    #[test]
    fn fast_path_matches_dense_on_multiword_blocks() {
        let mut rng = SlotRng::for_index(RngSeed(12), StreamKind::ToeplitzExpand, 6);
        for &(n, l) in &[(200usize, 130usize), (513, 64), (70, 70)] {
            let block = random_bits(n, &mut rng);
            assert_eq!(
                privacy_amplify(&block, 0xdead_f00d, l),
                privacy_amplify_dense(&block, 0xdead_f00d, l)
            );
        }
    }

    #[test]
    fn equal_inputs_compress_identically() {
        let mut rng = SlotRng::for_index(RngSeed(13), StreamKind::ToeplitzExpand, 7);
        let block = random_bits(4096, &mut rng);
        let a = privacy_amplify(&block, 4242, 1000);
        let b = privacy_amplify(&block.clone(), 4242, 1000);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
    }

    #[test]
    fn compression_is_linear() {
        let mut rng = SlotRng::for_index(RngSeed(14), StreamKind::ToeplitzExpand, 8);
        let x = random_bits(256, &mut rng);
        let y = random_bits(256, &mut rng);
        let mut x_xor_y = x.clone();
        x_xor_y.xor_with(&y);
        let seed = 808;
        let mut t = privacy_amplify(&x, seed, 64);
        t.xor_with(&privacy_amplify(&y, seed, 64));
        assert_eq!(t, privacy_amplify(&x_xor_y, seed, 64));
    }

    #[test]
    fn collision_rate_matches_two_universality() {
        // distinct fixed inputs, many seeds: P[collision] = 2^-l
        let mut rng = SlotRng::for_index(RngSeed(15), StreamKind::ToeplitzExpand, 9);
        let x = random_bits(64, &mut rng);
        let mut y = x.clone();
        y.flip(3);
        y.flip(40);
        let l = 8;
        let trials = 10_000u32;
        let mut collisions = 0u32;
        for t in 0..trials {
            let seed = ((t as u128) << 17) ^ 0xc0ffee;
            if privacy_amplify(&x, seed, l) == privacy_amplify(&y, seed, l) {
                collisions += 1;
            }
        }
        let p = 2f64.powi(-(l as i32));
        let mean = trials as f64 * p;
        let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
        let dev = (collisions as f64 - mean).abs();
        assert!(dev < 5.0 * sigma, "{} collisions vs expected {}", collisions, mean);
    }
}
