//! Domain types shared by the optical and protocol layers.

use std::fmt;

/// Measurement basis of the phase-encoded qubit.
///
/// `Z` selects the {0, pi} phase pair, `X` the {pi/2, 3pi/2} pair. Bob's
/// interferometer phase is 0 for `Z` and pi/2 for `X`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn from_bit(b: bool) -> Basis {
        if b {
            Basis::X
        } else {
            Basis::Z
        }
    }

    /// Wire encoding used by detection announcements.
    pub fn code(self) -> u8 {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Basis> {
        match c {
            0 => Some(Basis::Z),
            1 => Some(Basis::X),
            _ => None,
        }
    }
}

/// One party's modulation choice for a single pulse.
///
/// Alice's (basis, bit) pair maps bijectively onto the four phases
/// {0, pi/2, pi, 3pi/2}; Bob only chooses a basis and always has `bit = 0`,
/// which maps onto his two analyzer phases {0, pi/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseChoice {
    pub basis: Basis,
    pub bit: bool,
}

impl PhaseChoice {
    pub fn new(basis: Basis, bit: bool) -> PhaseChoice {
        PhaseChoice { basis, bit }
    }

    /// Applied phase in units of pi/2: 0 -> 0, 1 -> pi/2, 2 -> pi, 3 -> 3pi/2.
    ///
    /// Z/0 -> 0, X/0 -> pi/2, Z/1 -> pi, X/1 -> 3pi/2. The basis occupies the
    /// low quadrant bit and the key bit the high one, so the map is bijective.
    pub fn phase_quadrants(self) -> u8 {
        (self.bit as u8) * 2 + self.basis.code()
    }
}

/// Photodetector identity. `D0` decodes to bit 0, `D1` to bit 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    D0,
    D1,
}

impl Detector {
    pub fn bit(self) -> bool {
        matches!(self, Detector::D1)
    }

    pub fn other(self) -> Detector {
        match self {
            Detector::D0 => Detector::D1,
            Detector::D1 => Detector::D0,
        }
    }
}

/// Position of one pulse inside a run: pulse `pulse_index` of train
/// `train_index`. Ordered lexicographically (train first), which matches
/// emission order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotId {
    pub train_index: u32,
    pub pulse_index: u32,
}

impl SlotId {
    pub fn new(train_index: u32, pulse_index: u32) -> SlotId {
        SlotId { train_index, pulse_index }
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.train_index, self.pulse_index)
    }
}

/// Master seed for the deterministic generators. Wrapped so that seeds are
/// not confused with other integer parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed(pub u64);

/// Endpoint role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Alice,
    Bob,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Alice => 0,
            Role::Bob => 1,
        }
    }

    pub fn peer(self) -> Role {
        match self {
            Role::Alice => Role::Bob,
            Role::Bob => Role::Alice,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Alice => write!(f, "alice"),
            Role::Bob => write!(f, "bob"),
        }
    }
}
