//! Two-endpoint simulator of a plug&play phase-encoded BB84 link.
//!
//! The crate models the full key-distribution chain: a Monte Carlo photon
//! channel (pulse trains, detector clicks, dark counts, dead time), the
//! basis-sifting exchange between Alice and Bob over a framed public channel,
//! and the classical post-processing pipeline that turns sifted bits into
//! secret key material (LDPC syndrome reconciliation, polynomial-hash
//! verification, QBER estimation, Toeplitz privacy amplification).
//!
//! Every random draw is derived from an explicit seed through a counter-based
//! generator, so a run is a pure function of its configuration: two runs with
//! the same seed produce bit-identical keys, reports and wire traffic.
//!
//! The two endpoints only ever share state through [`net::PublicChannel`]
//! frames. [`engine`] wires both roles together, either in-process (loopback)
//! or across TCP.

pub mod bits;
pub mod engine;
pub mod entropy;
pub mod metrics;
pub mod net;
pub mod optics;
pub mod postproc;
pub mod protocol;
pub mod rng;
pub mod types;
