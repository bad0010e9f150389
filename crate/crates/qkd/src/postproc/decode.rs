//! Normalized min-sum decoding of syndrome targets.
//!
//! Reconciliation decodes the *error pattern* between the two sifted keys:
//! the decoder is handed the XOR of the locally computed syndrome and the
//! remote one, and searches for a low-weight pattern `e` with `H e` equal to
//! that target. The channel prior is a uniform crossover probability, which
//! makes every variable's intrinsic log-likelihood ratio identical; min-sum
//! sign decisions are invariant under a common positive scaling, so the
//! outcome depends only on the graph and the target, not on the prior value.
//! The prior still picks the code rate upstream.

use crate::bits::Bits;
use crate::postproc::ldpc::LdpcCode;

/// Check-to-variable normalization factor.
pub const MIN_SUM_SCALE: f64 = 0.8;

/// Iteration budget per block.
pub const MAX_ITERATIONS: u32 = 60;

#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome {
    /// A pattern satisfying every check was found. `iterations` of 0 means
    /// the target was already satisfied by the all-zero pattern.
    Corrected { error: Bits, iterations: u32 },
    /// No satisfying pattern within the iteration budget.
    Failed,
}

impl DecodeOutcome {
    pub fn is_corrected(&self) -> bool {
        matches!(self, DecodeOutcome::Corrected { .. })
    }
}

/// Message-passing state laid out edge-major for one fixed code. Build once,
/// decode many blocks.
pub struct MinSumDecoder<'a> {
    code: &'a LdpcCode,
    /// Edge range of check c is check_start[c]..check_start[c+1].
    check_start: Vec<u32>,
    /// Variable at each edge, check-major.
    edge_var: Vec<u32>,
}

impl<'a> MinSumDecoder<'a> {
    pub fn new(code: &'a LdpcCode) -> MinSumDecoder<'a> {
        let mut check_start = Vec::with_capacity(code.m() + 1);
        let mut edge_var = Vec::new();
        check_start.push(0);
        for row in code.rows() {
            assert!(row.len() >= 2, "degenerate check of degree {}", row.len());
            for &j in row {
                edge_var.push(j);
            }
            check_start.push(edge_var.len() as u32);
        }
        MinSumDecoder { code, check_start, edge_var }
    }

    pub fn code(&self) -> &LdpcCode {
        self.code
    }

    /// Finds an error pattern whose syndrome equals `target`. `qber_prior`
    /// is the believed crossover probability; it is clamped to (0, 1/2) and,
    /// per the scale invariance above, does not change the result.
    ///
    /// Checks are updated serially (layered schedule): each check reads the
    /// posteriors already refreshed by the checks before it in the same
    /// pass, which converges in roughly half the passes flooding needs.
    pub fn decode(&self, target: &Bits, qber_prior: f64) -> DecodeOutcome {
        assert_eq!(target.len(), self.code.m(), "syndrome length mismatch");
        let n = self.code.n();
        let m = self.code.m();
        let edges = self.edge_var.len();
        let q = qber_prior.clamp(1e-4, 0.499);
        let intrinsic = ((1.0 - q) / q).ln();

        let mut c2v = vec![0.0f64; edges];
        let mut v2c = vec![0.0f64; edges];
        let mut posterior = vec![intrinsic; n];
        let mut guess = vec![false; n];

        for iteration in 0..=MAX_ITERATIONS {
            for (j, g) in guess.iter_mut().enumerate() {
                *g = posterior[j] < 0.0;
            }
            if self.satisfies(&guess, target) {
                return DecodeOutcome::Corrected {
                    error: Bits::from_bools(&guess),
                    iterations: iteration,
                };
            }
            if iteration == MAX_ITERATIONS {
                break;
            }

            for c in 0..m {
                let span = self.check_start[c] as usize..self.check_start[c + 1] as usize;
                // peel this check's stale messages off the posteriors, then
                // form its sign product and two smallest magnitudes, which
                // suffice for every leave-one-out message
                let mut sign = if target.get(c) { -1.0f64 } else { 1.0 };
                let mut min1 = f64::INFINITY;
                let mut min2 = f64::INFINITY;
                let mut argmin = span.start;
                for e in span.clone() {
                    let v = posterior[self.edge_var[e] as usize] - c2v[e];
                    v2c[e] = v;
                    if v < 0.0 {
                        sign = -sign;
                    }
                    let mag = v.abs();
                    if mag < min1 {
                        min2 = min1;
                        min1 = mag;
                        argmin = e;
                    } else if mag < min2 {
                        min2 = mag;
                    }
                }
                for e in span {
                    let own_sign = if v2c[e] < 0.0 { -1.0f64 } else { 1.0 };
                    let mag = if e == argmin { min2 } else { min1 };
                    let fresh = MIN_SUM_SCALE * sign * own_sign * mag;
                    posterior[self.edge_var[e] as usize] = v2c[e] + fresh;
                    c2v[e] = fresh;
                }
            }
        }
        DecodeOutcome::Failed
    }

    fn satisfies(&self, guess: &[bool], target: &Bits) -> bool {
        for (c, row) in self.code.rows().iter().enumerate() {
            let mut parity = false;
            for &j in row {
                parity ^= guess[j as usize];
            }
            if parity != target.get(c) {
                return false;
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SlotRng, StreamKind};
    use crate::types::RngSeed;

    fn test_code() -> LdpcCode {
        LdpcCode::generate(1024, 0.5, 3).unwrap()
    }

    fn noise(n: usize, p: f64, rng: &mut SlotRng) -> Bits {
        let mut e = Bits::new();
        for _ in 0..n {
            e.push(rng.chance(p));
        }
        e
    }

    #[test]
    fn zero_target_needs_no_iterations() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        match dec.decode(&Bits::zeros(code.m()), 0.05) {
            DecodeOutcome::Corrected { error, iterations } => {
                assert_eq!(iterations, 0);
                assert_eq!(error.count_ones(), 0);
                assert_eq!(error.len(), code.n());
            }
            DecodeOutcome::Failed => panic!("zero target must decode"),
        }
    }

    #[test]
    fn recovers_a_single_planted_error() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        let mut planted = Bits::zeros(code.n());
        planted.set(321, true);
        match dec.decode(&code.syndrome(&planted), 0.02) {
            DecodeOutcome::Corrected { error, iterations } => {
                assert_eq!(error, planted);
                assert!(iterations >= 1);
            }
            DecodeOutcome::Failed => panic!("single error must decode"),
        }
    }

    #[test]
    fn corrects_light_noise_and_satisfies_target() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        let mut rng = SlotRng::for_index(RngSeed(11), StreamKind::ErrorInject, 0);
        for trial in 0..20 {
            let planted = noise(code.n(), 0.02, &mut rng);
            let target = code.syndrome(&planted);
            match dec.decode(&target, 0.02) {
                DecodeOutcome::Corrected { error, .. } => {
                    assert_eq!(code.syndrome(&error), target, "trial {}", trial);
                    assert_eq!(error, planted, "trial {}: converged to a different coset", trial);
                }
                DecodeOutcome::Failed => panic!("trial {}: 2% noise must decode", trial),
            }
        }
    }

    #[test]
    fn outcome_ignores_the_prior_value() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        let mut rng = SlotRng::for_index(RngSeed(12), StreamKind::ErrorInject, 1);
        let planted = noise(code.n(), 0.05, &mut rng);
        let target = code.syndrome(&planted);
        let reference = dec.decode(&target, 0.05);
        for q in [0.001, 0.02, 0.11, 0.3, 0.499] {
            assert_eq!(dec.decode(&target, q), reference, "prior {}", q);
        }
    }

    #[test]
    fn saturating_noise_reports_failure() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        let mut rng = SlotRng::for_index(RngSeed(13), StreamKind::ErrorInject, 2);
        let failures = (0..10)
            .filter(|_| {
                let planted = noise(code.n(), 0.30, &mut rng);
                !dec.decode(&code.syndrome(&planted), 0.30).is_corrected()
            })
            .count();
        assert!(failures >= 9, "30% noise decoded {} of 10 times", 10 - failures);
    }

    #[test]
    fn decoder_is_reusable_and_deterministic() {
        let code = test_code();
        let dec = MinSumDecoder::new(&code);
        let mut rng = SlotRng::for_index(RngSeed(14), StreamKind::ErrorInject, 3);
        let planted = noise(code.n(), 0.04, &mut rng);
        let target = code.syndrome(&planted);
        let first = dec.decode(&target, 0.04);
        let second = dec.decode(&target, 0.04);
        assert_eq!(first, second);
        assert!(first.is_corrected());
    }
}
