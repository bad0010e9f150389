//! Key post-processing: reconciliation, verification, estimation, privacy
//! amplification.
//!
//! Sifted material is consumed in fixed 4096-bit blocks. For each block the
//! transmitter side discloses a syndrome and a verification tag; the
//! receiver decodes its own block against the syndrome and either confirms
//! the tag (block verified, flip count recorded) or discards the block at
//! both ends. After sixteen verified blocks an epoch closes: both ends
//! compute the epoch error rate from the recorded flips, charge the
//! distilled blocks' disclosed syndrome and tag bits against the key
//! budget, and either raise an alarm or compress the verified material
//! with a Toeplitz hash to the surviving length.
//!
//! A discarded block's disclosures are charged to nothing: the material it
//! described is thrown away at both ends, and since sifted bits at distinct
//! slots are independent, a syndrome of discarded bits carries no
//! information about the bits that do reach the key. Discards therefore
//! cost throughput, never budget.
//!
//! Both endpoints run the same [`Ledger`] and feed it the same sequence of
//! offers and verdicts, so rate-controller moves, epoch boundaries, leak
//! totals, and alarms stay in lockstep without extra wire traffic.

pub mod decode;
pub mod hash;
pub mod ldpc;
pub mod peg;
pub mod toeplitz;

use crate::bits::Bits;
use crate::entropy::binary_entropy;
use crate::rng::{SlotRng, StreamKind};
use crate::types::RngSeed;
use self::decode::{DecodeOutcome, MinSumDecoder};
use self::ldpc::{CodeRate, LdpcCode, BLOCK_BITS};
use std::collections::HashMap;
use thiserror::Error;

/// Verified blocks per parameter-estimation round.
pub const EPOCH_BLOCKS: usize = 16;

/// Verification tag width disclosed per block and per final digest.
pub const TAG_BITS: u64 = 64;

/// This many discards in a row raise an alarm without waiting for an epoch
/// to close; sustained decode failure means the error rate is far beyond
/// what the lowest code rate handles, so an estimate must come from the
/// syndrome mismatch weight instead of counted flips.
pub const DISCARD_ALARM_RUN: u32 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocError {
    #[error("length mismatch: {0} vs {1} bits")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("invalid parameter: {0}")]
    BadParameter(&'static str),
}

/// Security and efficiency knobs for estimation and privacy amplification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyAmpParams {
    pub eps_pa: f64,
    pub qber_abort_threshold: f64,
    pub ec_efficiency_f: f64,
}

impl Default for PrivacyAmpParams {
    fn default() -> Self {
        PrivacyAmpParams { eps_pa: 1e-9, qber_abort_threshold: 0.11, ec_efficiency_f: 1.2 }
    }
}

impl PrivacyAmpParams {
    pub fn validate(&self) -> Result<(), PostprocError> {
        if !(self.eps_pa > 0.0 && self.eps_pa < 1.0) {
            return Err(PostprocError::BadParameter("eps_pa must lie in (0, 1)"));
        }
        if !(self.qber_abort_threshold > 0.0 && self.qber_abort_threshold < 0.5) {
            return Err(PostprocError::BadParameter("abort threshold must lie in (0, 0.5)"));
        }
        if !(self.ec_efficiency_f >= 1.0) {
            return Err(PostprocError::BadParameter("efficiency factor must be at least 1"));
        }
        Ok(())
    }
}

/// Fraction of positions the corrector flipped, which for verified blocks
/// equals the realized discrepancy rate.
pub fn estimate_qber(pre_correction: &Bits, post_correction: &Bits) -> Result<f64, PostprocError> {
    if pre_correction.len() != post_correction.len() {
        return Err(PostprocError::LengthMismatch(pre_correction.len(), post_correction.len()));
    }
    if pre_correction.len() == 0 {
        return Err(PostprocError::Empty);
    }
    Ok(pre_correction.distance(post_correction) as f64 / pre_correction.len() as f64)
}

/// Outcome of the secret-length computation for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyYield {
    Length(usize),
    Alarm { qber: f64 },
}

impl KeyYield {
    pub fn length(&self) -> Option<usize> {
        match self {
            KeyYield::Length(l) => Some(*l),
            KeyYield::Alarm { .. } => None,
        }
    }
}

/// Distillable key length after subtracting the eavesdropper's information
/// gain at the measured error rate, every disclosed reconciliation and
/// verification bit, and the smoothing margin for the security parameter.
pub fn secret_key_length(
    n_verified: usize,
    qber: f64,
    leak_ec: u64,
    leak_verify: u64,
    params: &PrivacyAmpParams,
) -> KeyYield {
    if qber >= params.qber_abort_threshold {
        return KeyYield::Alarm { qber };
    }
    let h = binary_entropy(qber).expect("qber below threshold is a valid probability");
    let margin = 2.0 * (1.0 / params.eps_pa).log2();
    let l = n_verified as f64 * (1.0 - h) - leak_ec as f64 - leak_verify as f64 - margin;
    KeyYield::Length(l.max(0.0).floor() as usize)
}

/// Largest rate whose redundancy covers the expected disclosure
/// f · h(qber); falls back to the most redundant code when none does.
pub fn select_rate(qber_estimate: f64, efficiency_f: f64) -> CodeRate {
    let q = qber_estimate.clamp(0.0, 0.5);
    let needed = efficiency_f * binary_entropy(q).expect("clamped estimate is valid");
    for rate in [CodeRate::R90, CodeRate::R75, CodeRate::R65, CodeRate::R50] {
        if 1.0 - rate.label() >= needed {
            return rate;
        }
    }
    CodeRate::R50
}

/// One step toward more redundancy, saturating at the lowest rate.
pub fn step_down(rate: CodeRate) -> CodeRate {
    match rate {
        CodeRate::R90 => CodeRate::R75,
        CodeRate::R75 => CodeRate::R65,
        CodeRate::R65 => CodeRate::R50,
        CodeRate::R50 => CodeRate::R50,
    }
}

/// Inverts the parity-fire rate of degree-`row_degree` checks to an error
/// probability: a check over d independent error bits at rate q is odd with
/// probability (1 - (1-2q)^d) / 2.
pub fn qber_from_syndrome_weight(fire_rate: f64, row_degree: f64) -> f64 {
    let inner = (1.0 - 2.0 * fire_rate.clamp(0.0, 0.5)).powf(1.0 / row_degree);
    ((1.0 - inner) / 2.0).clamp(0.0, 0.5)
}

/// Everything the transmitter discloses for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOffer {
    pub index: u64,
    pub rate: CodeRate,
    pub syndrome: Bits,
    pub hash_seed: u128,
    pub tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscardReason {
    DecodeFailure,
    TagMismatch,
}

/// Receiver's judgement of one block, echoed back so both ends apply it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockVerdict {
    Verified { flips: u32 },
    Discard { reason: DiscardReason },
}

/// Ledger consequence of applying one verdict.
#[derive(Debug, Clone, PartialEq)]
pub enum LedgerEvent {
    /// Keep feeding blocks.
    Continue,
    /// Sixteen verified blocks accumulated; close the epoch.
    EpochReady(EpochSummary),
    /// Too many discards in a row. The estimate is only available on the
    /// side that saw the syndromes disagree.
    DiscardRunAlarm { estimate: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch_index: u64,
    pub n_verified: usize,
    pub qber: f64,
    pub leak_ec: u64,
    pub leak_verify: u64,
    pub key_yield: KeyYield,
}

/// Shared accounting both endpoints advance identically.
#[derive(Debug, Clone)]
pub struct Ledger {
    params: PrivacyAmpParams,
    qber_prior: f64,
    current_rate: CodeRate,
    epoch_index: u64,
    verified_blocks: usize,
    flips: u64,
    leak_ec: u64,
    leak_verify: u64,
    consecutive_discards: u32,
    discard_weight: u64,
    discard_checks: u64,
    discard_degree_sum: f64,
}

impl Ledger {
    pub fn new(params: PrivacyAmpParams) -> Ledger {
        // no measurement exists before the first epoch; start mid-range
        let qber_prior = 0.05;
        Ledger {
            params,
            qber_prior,
            current_rate: select_rate(qber_prior, params.ec_efficiency_f),
            epoch_index: 0,
            verified_blocks: 0,
            flips: 0,
            leak_ec: 0,
            leak_verify: 0,
            consecutive_discards: 0,
            discard_weight: 0,
            discard_checks: 0,
            discard_degree_sum: 0.0,
        }
    }

    pub fn params(&self) -> &PrivacyAmpParams {
        &self.params
    }

    pub fn qber_prior(&self) -> f64 {
        self.qber_prior
    }

    pub fn next_rate(&self) -> CodeRate {
        self.current_rate
    }

    pub fn epoch_index(&self) -> u64 {
        self.epoch_index
    }

    pub fn verified_blocks(&self) -> usize {
        self.verified_blocks
    }

    pub fn leak_totals(&self) -> (u64, u64) {
        (self.leak_ec, self.leak_verify)
    }

    /// `mismatch_weight` is the Hamming weight of the syndrome disagreement
    /// on a discarded block, known only where both syndromes are visible.
    fn on_verdict(&mut self, rate: CodeRate, verdict: BlockVerdict, mismatch_weight: Option<u32>) -> LedgerEvent {
        match verdict {
            BlockVerdict::Verified { flips } => {
                self.verified_blocks += 1;
                self.flips += flips as u64;
                self.leak_ec += LdpcCode::standard(rate).m() as u64;
                self.leak_verify += TAG_BITS;
                self.consecutive_discards = 0;
                if self.verified_blocks == EPOCH_BLOCKS {
                    return LedgerEvent::EpochReady(self.close_epoch());
                }
            }
            BlockVerdict::Discard { .. } => {
                self.consecutive_discards += 1;
                let code = LdpcCode::standard(rate);
                if let Some(w) = mismatch_weight {
                    self.discard_weight += w as u64;
                    self.discard_checks += code.m() as u64;
                    self.discard_degree_sum +=
                        code.rows().iter().map(|r| r.len() as f64).sum::<f64>() / code.m() as f64;
                }
                self.current_rate = step_down(self.current_rate);
                if self.consecutive_discards >= DISCARD_ALARM_RUN {
                    return LedgerEvent::DiscardRunAlarm { estimate: self.discard_estimate() };
                }
            }
        }
        LedgerEvent::Continue
    }

    fn discard_estimate(&self) -> Option<f64> {
        if self.discard_checks == 0 {
            return None;
        }
        let fire_rate = self.discard_weight as f64 / self.discard_checks as f64;
        let blocks = self.discard_checks as f64 / LdpcCode::standard(self.current_rate).m() as f64;
        let degree = self.discard_degree_sum / blocks.max(1.0);
        Some(qber_from_syndrome_weight(fire_rate, degree))
    }

    fn close_epoch(&mut self) -> EpochSummary {
        let n_verified = self.verified_blocks * BLOCK_BITS;
        let qber = self.flips as f64 / n_verified as f64;
        // the key-confirmation digest is one more disclosed tag
        self.leak_verify += TAG_BITS;
        let summary = EpochSummary {
            epoch_index: self.epoch_index,
            n_verified,
            qber,
            leak_ec: self.leak_ec,
            leak_verify: self.leak_verify,
            key_yield: secret_key_length(n_verified, qber, self.leak_ec, self.leak_verify, &self.params),
        };
        self.epoch_index += 1;
        self.verified_blocks = 0;
        self.flips = 0;
        self.leak_ec = 0;
        self.leak_verify = 0;
        self.qber_prior = qber;
        self.current_rate = select_rate(qber, self.params.ec_efficiency_f);
        self.discard_weight = 0;
        self.discard_checks = 0;
        self.discard_degree_sum = 0.0;
        summary
    }

    /// Closes a short epoch at end of run. None if nothing was verified.
    fn flush(&mut self) -> Option<EpochSummary> {
        if self.verified_blocks == 0 {
            return None;
        }
        Some(self.close_epoch())
    }
}

/// Hashes the epoch's verified material down to `l` bits under a public
/// 128-bit compression seed.
pub fn compress_epoch_key(material: &Bits, pa_seed: u128, l: usize) -> Bits {
    toeplitz::privacy_amplify(material, pa_seed, l)
}

/// Transmitter side of block processing: cuts blocks from the sifted
/// backlog, discloses syndromes and tags, and tracks the shared ledger.
pub struct AliceBlocks {
    ledger: Ledger,
    backlog: Bits,
    cursor: usize,
    next_index: u64,
    seed: RngSeed,
    epoch_material: Bits,
    pending: Option<(u64, CodeRate, Bits)>,
}

impl AliceBlocks {
    pub fn new(params: PrivacyAmpParams, seed: RngSeed) -> AliceBlocks {
        AliceBlocks {
            ledger: Ledger::new(params),
            backlog: Bits::new(),
            cursor: 0,
            next_index: 0,
            seed,
            epoch_material: Bits::new(),
            pending: None,
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn push_sifted(&mut self, bits: &Bits) {
        self.backlog.extend_from(bits);
    }

    pub fn sifted_backlog(&self) -> usize {
        self.backlog.len() - self.cursor
    }

    /// Offers the next full block, if one is buffered and no verdict is
    /// outstanding.
    pub fn next_offer(&mut self) -> Option<BlockOffer> {
        if self.pending.is_some() || self.backlog.len() - self.cursor < BLOCK_BITS {
            return None;
        }
        let block = self.backlog.range(self.cursor, BLOCK_BITS);
        self.cursor += BLOCK_BITS;
        let rate = self.ledger.next_rate();
        let code = LdpcCode::standard(rate);
        let index = self.next_index;
        self.next_index += 1;
        let hash_seed = wide_value(self.seed, StreamKind::VerifyPoint, index);
        let offer = BlockOffer {
            index,
            rate,
            syndrome: code.syndrome(&block),
            hash_seed,
            tag: hash::verify_tag(&block, hash_seed),
        };
        self.pending = Some((index, rate, block));
        Some(offer)
    }

    /// Applies the receiver's verdict for the outstanding block.
    pub fn apply_verdict(&mut self, index: u64, verdict: BlockVerdict) -> LedgerEvent {
        let (pending_index, rate, block) =
            self.pending.take().expect("verdict without outstanding block");
        assert_eq!(index, pending_index, "verdict for the wrong block");
        if matches!(verdict, BlockVerdict::Verified { .. }) {
            self.epoch_material.extend_from(&block);
        }
        self.ledger.on_verdict(rate, verdict, None)
    }

    /// Fresh compression seed for an epoch this side initiates.
    pub fn draw_pa_seed(&self, epoch_index: u64) -> u128 {
        wide_value(self.seed, StreamKind::SeedSource, epoch_index)
    }

    /// Digest seed for confirming an epoch's final key.
    pub fn draw_digest_seed(&self, epoch_index: u64) -> u128 {
        wide_value(self.seed, StreamKind::SessionSeed, !epoch_index)
    }

    pub fn take_epoch_key(&mut self, pa_seed: u128, l: usize) -> Bits {
        let key = compress_epoch_key(&self.epoch_material, pa_seed, l);
        self.epoch_material = Bits::new();
        key
    }

    /// Drops epoch material after an alarm or zero-length yield.
    pub fn discard_epoch_material(&mut self) {
        self.epoch_material = Bits::new();
    }

    pub fn flush(&mut self) -> Option<EpochSummary> {
        self.ledger.flush()
    }
}

/// Receiver side: decodes each offer against its own backlog and judges it.
pub struct BobBlocks {
    ledger: Ledger,
    backlog: Bits,
    cursor: usize,
    next_index: u64,
    epoch_material: Bits,
    decoders: HashMap<u8, MinSumDecoder<'static>>,
}

impl BobBlocks {
    pub fn new(params: PrivacyAmpParams) -> BobBlocks {
        BobBlocks {
            ledger: Ledger::new(params),
            backlog: Bits::new(),
            cursor: 0,
            next_index: 0,
            epoch_material: Bits::new(),
            decoders: HashMap::new(),
        }
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn push_sifted(&mut self, bits: &Bits) {
        self.backlog.extend_from(bits);
    }

    pub fn sifted_backlog(&self) -> usize {
        self.backlog.len() - self.cursor
    }

    /// Decodes and verifies one offered block, advancing the ledger with
    /// the same verdict the transmitter will apply.
    pub fn judge_offer(&mut self, offer: &BlockOffer) -> (BlockVerdict, LedgerEvent) {
        assert_eq!(offer.index, self.next_index, "offer out of order");
        assert!(self.backlog.len() - self.cursor >= BLOCK_BITS, "offer without sifted material");
        self.next_index += 1;
        let block = self.backlog.range(self.cursor, BLOCK_BITS);
        self.cursor += BLOCK_BITS;

        let code = LdpcCode::standard(offer.rate);
        let decoder = self
            .decoders
            .entry(offer.rate.id())
            .or_insert_with(|| MinSumDecoder::new(LdpcCode::standard(offer.rate)));
        let mut target = code.syndrome(&block);
        target.xor_with(&offer.syndrome);
        let mismatch_weight = target.count_ones() as u32;

        let verdict = match decoder.decode(&target, self.ledger.qber_prior()) {
            DecodeOutcome::Corrected { error, .. } => {
                let mut corrected = block.clone();
                corrected.xor_with(&error);
                if hash::verify_tag(&corrected, offer.hash_seed) == offer.tag {
                    self.epoch_material.extend_from(&corrected);
                    BlockVerdict::Verified { flips: error.count_ones() as u32 }
                } else {
                    BlockVerdict::Discard { reason: DiscardReason::TagMismatch }
                }
            }
            DecodeOutcome::Failed => BlockVerdict::Discard { reason: DiscardReason::DecodeFailure },
        };
        let event = self.ledger.on_verdict(offer.rate, verdict, Some(mismatch_weight));
        (verdict, event)
    }

    pub fn take_epoch_key(&mut self, pa_seed: u128, l: usize) -> Bits {
        let key = compress_epoch_key(&self.epoch_material, pa_seed, l);
        self.epoch_material = Bits::new();
        key
    }

    pub fn discard_epoch_material(&mut self) {
        self.epoch_material = Bits::new();
    }

    pub fn flush(&mut self) -> Option<EpochSummary> {
        self.ledger.flush()
    }
}

fn wide_value(seed: RngSeed, kind: StreamKind, index: u64) -> u128 {
    let mut rng = SlotRng::for_index(seed, kind, index);
    (rng.next_u64() as u128) << 64 | rng.next_u64() as u128
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_bits(n: usize, rng: &mut SlotRng) -> Bits {
        let mut b = Bits::new();
        for _ in 0..n {
            b.push(rng.chance(0.5));
        }
        b
    }

    fn noisy_copy(bits: &Bits, p: f64, rng: &mut SlotRng) -> Bits {
        let mut out = bits.clone();
        for i in 0..out.len() {
            if rng.chance(p) {
                out.flip(i);
            }
        }
        out
    }

    #[test]
    fn qber_of_identical_strings_is_zero() {
        let b = Bits::from_bools(&[true, false, true, true]);
        assert_eq!(estimate_qber(&b, &b), Ok(0.0));
    }

    #[test]
    fn qber_counts_flips_exactly() {
        let pre = Bits::zeros(1000);
        let mut post = pre.clone();
        for i in [3, 141, 592, 653, 999] {
            post.flip(i);
        }
        assert_eq!(estimate_qber(&pre, &post), Ok(0.005));
    }

    #[test]
    fn qber_matches_bytewise_popcount_oracle() {
        let mut rng = SlotRng::for_index(RngSeed(21), StreamKind::ErrorInject, 7);
        let a = random_bits(512, &mut rng);
        let b = random_bits(512, &mut rng);
        let mismatches: u32 = a
            .to_bytes()
            .iter()
            .zip(b.to_bytes())
            .map(|(x, y)| (x ^ y).count_ones())
            .sum();
        assert_eq!(estimate_qber(&a, &b), Ok(mismatches as f64 / 512.0));
    }

    #[test]
    fn qber_rejects_bad_inputs() {
        assert_eq!(
            estimate_qber(&Bits::zeros(8), &Bits::zeros(9)),
            Err(PostprocError::LengthMismatch(8, 9))
        );
        assert_eq!(estimate_qber(&Bits::new(), &Bits::new()), Err(PostprocError::Empty));
    }

    #[test]
    fn key_length_aborts_at_half_error() {
        let params = PrivacyAmpParams::default();
        assert_eq!(
            secret_key_length(1_000_000, 0.5, 0, 0, &params),
            KeyYield::Alarm { qber: 0.5 }
        );
    }

    #[test]
    fn key_length_on_a_clean_megabit_loses_only_the_margin() {
        let params = PrivacyAmpParams::default();
        // 2 log2(1e9) = 59.79.., so exactly 60 bits of margin after the floor
        assert_eq!(
            secret_key_length(1_000_000, 0.0, 0, 0, &params),
            KeyYield::Length(1_000_000 - 60)
        );
    }

    #[test]
    fn key_length_positive_at_the_high_operating_point() {
        let params = PrivacyAmpParams::default();
        let n = 1_000_000usize;
        let q = 0.057;
        let leak = (1.2 * n as f64 * binary_entropy(q).unwrap()) as u64;
        match secret_key_length(n, q, leak, 0, &params) {
            KeyYield::Length(l) => {
                assert!(l > 0);
                // about 1 - 2.2 h(q) of the input should survive
                let expect = n as f64 * (1.0 - 2.2 * binary_entropy(q).unwrap());
                assert!((l as f64 - expect).abs() < 100.0, "l = {}", l);
            }
            KeyYield::Alarm { .. } => panic!("5.7% must not alarm"),
        }
    }

    #[test]
    fn key_length_is_monotone_in_qber_and_leak() {
        let params = PrivacyAmpParams::default();
        let mut prev = usize::MAX;
        for step in 0..22 {
            let q = step as f64 * 0.005;
            match secret_key_length(100_000, q, 10_000, 1_000, &params) {
                KeyYield::Length(l) => {
                    assert!(l <= prev, "longer key at q = {}", q);
                    prev = l;
                }
                KeyYield::Alarm { qber } => assert!(qber >= params.qber_abort_threshold),
            }
        }
        let mut prev = usize::MAX;
        for leak in (0..100_000).step_by(9999) {
            let l = secret_key_length(100_000, 0.03, leak, 0, &params).length().unwrap();
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn rate_selection_tracks_the_error_rate() {
        let f = 1.2;
        assert_eq!(select_rate(0.0, f), CodeRate::R90);
        assert_eq!(select_rate(0.01, f), CodeRate::R90);
        assert_eq!(select_rate(0.026, f), CodeRate::R75);
        assert_eq!(select_rate(0.05, f), CodeRate::R65);
        assert_eq!(select_rate(0.057, f), CodeRate::R50);
        assert_eq!(select_rate(0.2, f), CodeRate::R50);
    }

    #[test]
    fn rate_steps_down_to_a_floor() {
        assert_eq!(step_down(CodeRate::R90), CodeRate::R75);
        assert_eq!(step_down(CodeRate::R75), CodeRate::R65);
        assert_eq!(step_down(CodeRate::R65), CodeRate::R50);
        assert_eq!(step_down(CodeRate::R50), CodeRate::R50);
    }

    #[test]
    fn syndrome_weight_inversion_matches_forward_formula() {
        for q in [0.01_f64, 0.05, 0.12, 0.2] {
            for d in [6.0_f64, 8.0, 12.0] {
                let fire = (1.0 - (1.0 - 2.0 * q).powf(d)) / 2.0;
                let back = qber_from_syndrome_weight(fire, d);
                assert!((back - q).abs() < 1e-12, "q={} d={}", q, d);
            }
        }
    }

    fn drive_pair(
        alice: &mut AliceBlocks,
        bob: &mut BobBlocks,
        mut on_epoch: impl FnMut(&EpochSummary, &mut AliceBlocks, &mut BobBlocks),
    ) -> Option<f64> {
        while let Some(offer) = alice.next_offer() {
            let (verdict, bob_event) = bob.judge_offer(&offer);
            let alice_event = alice.apply_verdict(offer.index, verdict);
            match (&alice_event, &bob_event) {
                (LedgerEvent::EpochReady(a), LedgerEvent::EpochReady(b)) => {
                    assert_eq!(a, b, "endpoints closed different epochs");
                    on_epoch(a, alice, bob);
                }
                (LedgerEvent::Continue, LedgerEvent::Continue) => {}
                (
                    LedgerEvent::DiscardRunAlarm { .. },
                    LedgerEvent::DiscardRunAlarm { estimate },
                ) => return Some(estimate.expect("receiver side has the estimate")),
                other => panic!("endpoints diverged: {:?}", other),
            }
        }
        None
    }

    #[test]
    fn clean_streams_yield_identical_keys_of_the_predicted_length() {
        let params = PrivacyAmpParams::default();
        let mut alice = AliceBlocks::new(params, RngSeed(400));
        let mut bob = BobBlocks::new(params);
        let mut rng = SlotRng::for_index(RngSeed(401), StreamKind::ErrorInject, 0);
        let material = random_bits(EPOCH_BLOCKS * BLOCK_BITS, &mut rng);
        alice.push_sifted(&material);
        bob.push_sifted(&material);

        let mut keys = Vec::new();
        let alarm = drive_pair(&mut alice, &mut bob, |summary, alice, bob| {
            assert_eq!(summary.qber, 0.0);
            // clean run at the bootstrap estimate uses the 0.65 code throughout
            let m = LdpcCode::standard(CodeRate::R65).m() as u64;
            assert_eq!(summary.leak_ec, EPOCH_BLOCKS as u64 * m);
            assert_eq!(summary.leak_verify, (EPOCH_BLOCKS as u64 + 1) * TAG_BITS);
            let l = summary.key_yield.length().unwrap();
            let expect = secret_key_length(
                summary.n_verified,
                0.0,
                summary.leak_ec,
                summary.leak_verify,
                &params,
            );
            assert_eq!(KeyYield::Length(l), expect);
            assert!(l > 0);
            let seed = alice.draw_pa_seed(summary.epoch_index);
            let ka = alice.take_epoch_key(seed, l);
            let kb = bob.take_epoch_key(seed, l);
            assert_eq!(ka, kb);
            assert_eq!(ka.len(), l);
            keys.push(ka);
        });
        assert_eq!(alarm, None);
        assert_eq!(keys.len(), 1);
    }

    #[test]
    fn light_noise_reconciles_and_measures_its_own_rate() {
        let params = PrivacyAmpParams::default();
        let mut alice = AliceBlocks::new(params, RngSeed(402));
        let mut bob = BobBlocks::new(params);
        let mut rng = SlotRng::for_index(RngSeed(403), StreamKind::ErrorInject, 1);
        let material = random_bits(EPOCH_BLOCKS * BLOCK_BITS, &mut rng);
        let noisy = noisy_copy(&material, 0.03, &mut rng);
        alice.push_sifted(&material);
        bob.push_sifted(&noisy);

        let mut closed = 0;
        let alarm = drive_pair(&mut alice, &mut bob, |summary, alice, bob| {
            closed += 1;
            assert!((summary.qber - 0.03).abs() < 0.01, "qber {}", summary.qber);
            let l = summary.key_yield.length().unwrap();
            assert!(l > 0);
            let seed = alice.draw_pa_seed(summary.epoch_index);
            assert_eq!(alice.take_epoch_key(seed, l), bob.take_epoch_key(seed, l));
        });
        assert_eq!(alarm, None);
        assert_eq!(closed, 1);
        // the realized rate now drives selection for the next epoch
        assert!((alice.ledger().qber_prior() - 0.03).abs() < 0.01);
        assert_eq!(alice.ledger().next_rate(), bob.ledger().next_rate());
    }

    #[test]
    fn heavy_noise_raises_the_discard_run_alarm_with_a_usable_estimate() {
        let params = PrivacyAmpParams::default();
        let mut alice = AliceBlocks::new(params, RngSeed(404));
        let mut bob = BobBlocks::new(params);
        let mut rng = SlotRng::for_index(RngSeed(405), StreamKind::ErrorInject, 2);
        let material = random_bits(2 * DISCARD_ALARM_RUN as usize * BLOCK_BITS, &mut rng);
        let noisy = noisy_copy(&material, 0.12, &mut rng);
        alice.push_sifted(&material);
        bob.push_sifted(&noisy);

        let estimate = drive_pair(&mut alice, &mut bob, |summary, _, _| {
            panic!("epoch should not close at 12%: {:?}", summary);
        })
        .expect("12% must alarm");
        assert!((estimate - 0.12).abs() < 0.02, "estimate {}", estimate);
        assert!(estimate >= params.qber_abort_threshold);
        // nothing was distilled, so nothing is charged to the key budget
        assert_eq!(alice.ledger().leak_totals(), (0, 0));
        assert_eq!(bob.ledger().leak_totals(), (0, 0));
    }

    #[test]
    fn partial_epoch_flushes_at_end_of_run() {
        let params = PrivacyAmpParams::default();
        let mut alice = AliceBlocks::new(params, RngSeed(406));
        let mut bob = BobBlocks::new(params);
        let mut rng = SlotRng::for_index(RngSeed(407), StreamKind::ErrorInject, 3);
        let material = random_bits(3 * BLOCK_BITS + 100, &mut rng);
        alice.push_sifted(&material);
        bob.push_sifted(&material);

        let alarm = drive_pair(&mut alice, &mut bob, |_, _, _| panic!("too few blocks"));
        assert_eq!(alarm, None);
        let a = alice.flush().expect("three verified blocks");
        let b = bob.flush().expect("three verified blocks");
        assert_eq!(a, b);
        assert_eq!(a.n_verified, 3 * BLOCK_BITS);
        let l = a.key_yield.length().unwrap();
        assert!(l > 0);
        let seed = alice.draw_pa_seed(a.epoch_index);
        assert_eq!(alice.take_epoch_key(seed, l), bob.take_epoch_key(seed, l));
        assert_eq!(alice.flush(), None, "flush consumed the partial epoch");
    }
}
