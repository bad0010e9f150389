//! Counter-based deterministic randomness.
//!
//! All simulation randomness is derived by hashing `(seed, stream kind,
//! counter)` through a SplitMix64-style avalanche, instead of advancing one
//! long generator. Any slot's draws can therefore be recomputed in isolation:
//! trains may be simulated in parallel or re-examined after the fact without
//! replaying the whole stream, and both endpoints derive identical values
//! from a shared session seed without exchanging generator state.

use crate::types::{Basis, PhaseChoice, Role, RngSeed};
use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective avalanche over u64.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent substreams of one seed. Each kind gets its own key so that,
/// for example, Alice's modulator choices and the channel's loss draws never
/// correlate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    AliceChoice,
    BobChoice,
    Optics,
    DoubleClick,
    ErrorInject,
    SessionSeed,
    SeedSource,
    ToeplitzExpand,
    VerifyPoint,
    CodeConstruct,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::AliceChoice => 0x11,
            StreamKind::BobChoice => 0x22,
            StreamKind::Optics => 0x33,
            StreamKind::DoubleClick => 0x44,
            StreamKind::ErrorInject => 0x55,
            StreamKind::SessionSeed => 0x66,
            StreamKind::SeedSource => 0x77,
            StreamKind::ToeplitzExpand => 0x88,
            StreamKind::VerifyPoint => 0x99,
            StreamKind::CodeConstruct => 0xaa,
        }
    }
}

#[inline]
fn stream_key(seed: RngSeed, kind: StreamKind, index: u64) -> u64 {
    let k = mix(seed.0.wrapping_add(GOLDEN).wrapping_add(kind.tag().wrapping_mul(GOLDEN)));
    mix(k ^ index.wrapping_mul(GOLDEN))
}

/// Draws tied to one `(seed, kind, counter)` key. Successive words follow the
/// SplitMix64 sequence from that key.
#[derive(Debug, Clone)]
pub struct SlotRng {
    state: u64,
}

impl SlotRng {
    /// Stream for a linear counter (pulse index, sifted-bit index, ...).
    pub fn for_index(seed: RngSeed, kind: StreamKind, index: u64) -> SlotRng {
        SlotRng { state: stream_key(seed, kind, index) }
    }

    /// Stream for a (train, pulse) slot without needing the train length.
    pub fn for_slot(seed: RngSeed, kind: StreamKind, train: u32, pulse: u32) -> SlotRng {
        let idx = ((train as u64) << 32) | pulse as u64;
        SlotRng::for_index(seed, kind, idx)
    }

    /// Stream keyed by a 128-bit value (hash and amplification seeds).
    pub fn from_wide(seed: u128, kind: StreamKind) -> SlotRng {
        let lo = seed as u64;
        let hi = (seed >> 64) as u64;
        SlotRng { state: stream_key(RngSeed(mix(hi).wrapping_add(lo)), kind, hi ^ lo) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1) with 53 significant bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw.
    #[inline]
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

/// Stable sub-seed derivation (per-session seeds and similar).
pub fn derive_seed(seed: RngSeed, kind: StreamKind, index: u64) -> RngSeed {
    RngSeed(stream_key(seed, kind, index))
}

/// The modulation choice of `role` for the `index`-th pulse of a run keyed by
/// `seed`. Pure in all arguments.
pub fn phase_choice_at(seed: RngSeed, role: Role, index: u64) -> PhaseChoice {
    let kind = match role {
        Role::Alice => StreamKind::AliceChoice,
        Role::Bob => StreamKind::BobChoice,
    };
    let w = stream_key(seed, kind, index);
    let basis = Basis::from_bit(w & 1 == 1);
    // Bob only modulates the analyzer basis; his bit is fixed to zero.
    let bit = match role {
        Role::Alice => (w >> 1) & 1 == 1,
        Role::Bob => false,
    };
    PhaseChoice::new(basis, bit)
}

/// Modulation choices for pulses `0..count`, one per emitted pulse.
pub fn draw_phase_choices(seed: RngSeed, count: usize, role: Role) -> Vec<PhaseChoice> {
    (0..count as u64).map(|i| phase_choice_at(seed, role, i)).collect()
}

/// A fresh 128-bit seed from the operating system's entropy source, for the
/// publicly disclosed hash and amplification seeds.
pub fn os_random_wide() -> u128 {
    let mut rng = rand::rngs::OsRng;
    ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn choices_are_reproducible() {
        let s = RngSeed(42);
        let a = draw_phase_choices(s, 1000, Role::Alice);
        let b = draw_phase_choices(s, 1000, Role::Alice);
        assert_eq!(a, b);
        let c = draw_phase_choices(RngSeed(43), 1000, Role::Alice);
        assert_ne!(a, c);
    }

    #[test]
    fn any_slot_recomputable_without_the_stream() {
        let s = RngSeed(7);
        let all = draw_phase_choices(s, 500, Role::Bob);
        for &i in &[0usize, 1, 63, 499] {
            assert_eq!(all[i], phase_choice_at(s, Role::Bob, i as u64));
        }
    }

    #[test]
    fn zero_count_is_empty() {
        assert!(draw_phase_choices(RngSeed(1), 0, Role::Alice).is_empty());
    }

    #[test]
    fn bob_never_carries_a_bit() {
        for c in draw_phase_choices(RngSeed(9), 2000, Role::Bob) {
            assert!(!c.bit);
        }
    }

    #[test]
    fn alice_phases_are_uniform() {
        let n = 100_000;
        let mut counts = [0u32; 4];
        for c in draw_phase_choices(RngSeed(1234), n, Role::Alice) {
            counts[c.phase_quadrants() as usize] += 1;
        }
        for (q, &k) in counts.iter().enumerate() {
            let f = k as f64 / n as f64;
            assert!((f - 0.25).abs() < 0.01, "phase {} frequency {}", q, f);
        }
    }

    #[test]
    fn role_streams_are_independent() {
        let s = RngSeed(77);
        let n = 100_000;
        let alice = draw_phase_choices(s, n, Role::Alice);
        let bob = draw_phase_choices(s, n, Role::Bob);
        let agree = alice
            .iter()
            .zip(&bob)
            .filter(|(a, b)| a.basis == b.basis)
            .count() as f64
            / n as f64;
        // 0.5 +/- 5 sigma for independent uniform bases
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!(
            (agree - 0.5).abs() < 5.0 * sigma,
            "basis agreement {} deviates from 1/2",
            agree
        );
    }

    #[test]
    fn f64_stays_in_unit_interval() {
        let mut r = SlotRng::for_index(RngSeed(5), StreamKind::Optics, 19);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn stream_kinds_do_not_collide() {
        let s = RngSeed(3);
        let a = SlotRng::for_index(s, StreamKind::Optics, 4).next_u64();
        let b = SlotRng::for_index(s, StreamKind::DoubleClick, 4).next_u64();
        assert_ne!(a, b);
    }
}
