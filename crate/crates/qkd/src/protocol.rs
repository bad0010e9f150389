//! Session orchestration: pulse trains, detection announcements, basis
//! reconciliation, raw to sifted key production.
//!
//! One session is a fixed choreography over the public channel. Alice drives;
//! Bob owns the detectors:
//!
//! ```text
//! Alice -> Bob   SESSION_START     trains x pulses, echoed from shared config
//! Bob -> Alice   DETECTIONS        one frame per train: (slot, basis) of
//!                                  every click; outcomes stay private
//! Bob -> Alice   TRAIN_DONE        after the final train
//! Alice -> Bob   SIFT_MASK         keep-run encoding of basis agreement
//! ```
//!
//! Each receiver enforces the legal-arrival sets listed in the table below.
//! Anything else draws an ABORT frame with a diagnostic and kills the
//! session, so out-of-order traffic always fails deterministically, never
//! undefined:
//!
//! ```text
//! receiver phase               legal arrivals
//! Bob,   awaiting session      SESSION_START (engine adds SYNDROME, PA_SEED,
//!                              FINAL_DIGEST, ALARM between sessions)
//! Alice, detection phase       DETECTIONS, TRAIN_DONE
//! Bob,   awaiting mask         SIFT_MASK
//! either, any phase            ABORT (reported as peer abort)
//! ```
//!
//! Both endpooints derive their modulation choices from the shared session
//! seed; the seed stands in for the physical quantum channel, which cannot
//! be carried by a classical artifact. What matters for the wire audit is
//! that no choice, raw bit or sifted bit is ever serialized: only slot ids,
//! bases and the keep-mask cross, exactly as they would in a deployment.

use crate::bits::Bits;
use crate::net::{Detection, Message, MsgType, NetError, PublicChannel};
use crate::net::messages::{decode_keep_mask, encode_keep_mask};
use crate::optics::{self, Click, LinkParams, OpticsError};
use crate::rng::{phase_choice_at, SlotRng, StreamKind};
use crate::types::{Basis, Detector, PhaseChoice, RngSeed, Role, SlotId};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    /// An arrival outside the phase's legal set. The offender was told.
    #[error("unexpected {got} during {phase}")]
    OutOfOrder { got: MsgType, phase: &'static str },
    #[error("peer aborted: {0}")]
    PeerAbort(String),
    /// Semantically impossible content from an otherwise legal message.
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("detection for slot {0} that was never emitted")]
    UnknownSlot(SlotId),
}

/// Parameters one session runs under. Both endpoints must hold identical
/// values; the engine's handshake fingerprint enforces that.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub trains_per_session: u32,
    pub pulses_per_train: u32,
    pub link: LinkParams,
    pub session_seed: RngSeed,
    /// Extra flip probability applied to Bob's sifted bits, emulating a
    /// disturbed channel for alarm tests. Zero in normal operation.
    pub inject_error_rate: f64,
}

impl SessionConfig {
    pub fn new(link: LinkParams, session_seed: RngSeed) -> SessionConfig {
        SessionConfig {
            trains_per_session: 1000,
            pulses_per_train: 2400,
            link,
            session_seed,
            inject_error_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.trains_per_session == 0 || self.pulses_per_train == 0 {
            return Err(ProtocolError::Violation(format!(
                "degenerate session shape {}x{}",
                self.trains_per_session, self.pulses_per_train
            )));
        }
        if !(0.0..=1.0).contains(&self.inject_error_rate) {
            return Err(ProtocolError::Violation(format!(
                "injection rate {} outside [0,1]",
                self.inject_error_rate
            )));
        }
        self.link.validate()?;
        Ok(())
    }
}

/// What one endpoint remembers about one emitted or detected pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRecord {
    pub slot: SlotId,
    pub choice: PhaseChoice,
    /// Squashed detector outcome; `None` on Alice's side.
    pub click: Option<Detector>,
}

/// One session's share of the raw key, after sifting. Both endpoints hold
/// blocks over identical slot lists; only the bits may disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftedBlock {
    pub bits: Bits,
    pub slots: Vec<SlotId>,
    pub session_id: u64,
}

impl SiftedBlock {
    pub fn check_invariants(&self) -> Result<(), ProtocolError> {
        if self.bits.len() != self.slots.len() {
            return Err(ProtocolError::Violation(format!(
                "{} bits over {} slots",
                self.bits.len(),
                self.slots.len()
            )));
        }
        for pair in self.slots.windows(2) {
            if pair[0] >= pair[1] {
                return Err(ProtocolError::Violation(format!(
                    "slots {} and {} out of order",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(())
    }
}

/// Choice-stream index of a slot, shared by both roles and stable under any
/// train length.
fn choice_index(slot: SlotId) -> u64 {
    ((slot.train_index as u64) << 32) | slot.pulse_index as u64
}

/// The basis-agreement filter. Keeps exactly the detections whose announced
/// basis matches Alice's, in order; Bob's bit is the detector mapping
/// (D0 to 0, D1 to 1), Alice's is her modulated bit.
pub fn sift(
    detections: &[(SlotId, Basis, Detector)],
    mut alice_choice_at: impl FnMut(SlotId) -> Option<PhaseChoice>,
) -> Result<(Vec<SlotId>, Bits, Bits), ProtocolError> {
    let mut slots = Vec::new();
    let mut alice_bits = Bits::new();
    let mut bob_bits = Bits::new();
    for &(slot, basis, click) in detections {
        let choice = alice_choice_at(slot).ok_or(ProtocolError::UnknownSlot(slot))?;
        if choice.basis == basis {
            slots.push(slot);
            alice_bits.push(choice.bit);
            bob_bits.push(click.bit());
        }
    }
    Ok((slots, alice_bits, bob_bits))
}

/// Receives one frame, enforcing the phase's legal-arrival set. Unexpected
/// types are answered with an ABORT diagnostic; peer aborts surface as
/// [`ProtocolError::PeerAbort`].
pub fn recv_expect(
    chan: &mut dyn PublicChannel,
    session_id: u64,
    legal: &[MsgType],
    phase: &'static str,
) -> Result<Message, ProtocolError> {
    let frame = chan.recv()?;
    if frame.msg_type == MsgType::Abort {
        return match Message::from_frame(&frame)? {
            Message::Abort { reason } => Err(ProtocolError::PeerAbort(reason)),
            _ => unreachable!(),
        };
    }
    if !legal.contains(&frame.msg_type) {
        abort(chan, session_id, format!("unexpected {} during {}", frame.msg_type, phase));
        return Err(ProtocolError::OutOfOrder { got: frame.msg_type, phase });
    }
    if frame.session_id != session_id {
        abort(
            chan,
            session_id,
            format!("frame for session {} during session {}", frame.session_id, session_id),
        );
        return Err(ProtocolError::Violation(format!(
            "session id {} does not match current session {}",
            frame.session_id, session_id
        )));
    }
    Ok(Message::from_frame(&frame)?)
}

/// Best-effort ABORT; the connection is dead either way.
pub fn abort(chan: &mut dyn PublicChannel, session_id: u64, reason: String) {
    if let Ok(f) = (Message::Abort { reason }).to_frame(session_id) {
        let _ = chan.send(&f);
    }
}

pub fn send_msg(
    chan: &mut dyn PublicChannel,
    session_id: u64,
    msg: &Message,
) -> Result<(), ProtocolError> {
    Ok(chan.send(&msg.to_frame(session_id)?)?)
}

/// Alice's half of one session: announce the shape, collect Bob's detection
/// reports, reply with the keep-mask, keep her matching bits.
pub fn alice_session(
    cfg: &SessionConfig,
    session_id: u64,
    chan: &mut dyn PublicChannel,
) -> Result<SiftedBlock, ProtocolError> {
    cfg.validate()?;
    send_msg(
        chan,
        session_id,
        &Message::SessionStart {
            trains: cfg.trains_per_session,
            pulses: cfg.pulses_per_train,
        },
    )?;

    let mut detections: Vec<Detection> = Vec::new();
    let mut trains_reported = 0u32;
    loop {
        let legal = [MsgType::Detections, MsgType::TrainDone];
        match recv_expect(chan, session_id, &legal, "detection reporting")? {
            Message::Detections { entries } => {
                trains_reported += 1;
                if trains_reported > cfg.trains_per_session {
                    abort(chan, session_id, "more trains than announced".into());
                    return Err(ProtocolError::Violation(format!(
                        "train report {} of {}",
                        trains_reported, cfg.trains_per_session
                    )));
                }
                validate_detections(cfg, &detections, &entries, chan, session_id)?;
                detections.extend(entries);
            }
            Message::TrainDone { trains_completed } => {
                if trains_completed != cfg.trains_per_session
                    || trains_reported != cfg.trains_per_session
                {
                    abort(chan, session_id, "train count mismatch".into());
                    return Err(ProtocolError::Violation(format!(
                        "peer closed after {} trains, {} reported, {} expected",
                        trains_completed, trains_reported, cfg.trains_per_session
                    )));
                }
                break;
            }
            _ => unreachable!("recv_expect enforces the legal set"),
        }
    }

    let mut mask = Vec::with_capacity(detections.len());
    let mut slots = Vec::new();
    let mut bits = Bits::new();
    for d in &detections {
        let choice = phase_choice_at(cfg.session_seed, Role::Alice, choice_index(d.slot));
        let keep = choice.basis == d.basis;
        mask.push(keep);
        if keep {
            slots.push(d.slot);
            bits.push(choice.bit);
        }
    }
    send_msg(chan, session_id, &Message::SiftMask { runs: encode_keep_mask(&mask) })?;
    Ok(SiftedBlock { bits, slots, session_id })
}

fn validate_detections(
    cfg: &SessionConfig,
    seen: &[Detection],
    entries: &[Detection],
    chan: &mut dyn PublicChannel,
    session_id: u64,
) -> Result<(), ProtocolError> {
    let mut prev = seen.last().map(|d| d.slot);
    for d in entries {
        let in_range = d.slot.train_index < cfg.trains_per_session
            && d.slot.pulse_index < cfg.pulses_per_train;
        if !in_range || prev.is_some_and(|p| p >= d.slot) {
            abort(chan, session_id, format!("detection for impossible slot {}", d.slot));
            return Err(ProtocolError::UnknownSlot(d.slot));
        }
        prev = Some(d.slot);
    }
    Ok(())
}

/// Bob's half: run the optics for every train, announce clicks and bases,
/// then apply Alice's keep-mask to his outcomes.
pub fn bob_session(
    cfg: &SessionConfig,
    session_id: u64,
    chan: &mut dyn PublicChannel,
) -> Result<SiftedBlock, ProtocolError> {
    cfg.validate()?;
    match recv_expect(chan, session_id, &[MsgType::SessionStart], "session start")? {
        Message::SessionStart { trains, pulses } => {
            if trains != cfg.trains_per_session || pulses != cfg.pulses_per_train {
                abort(chan, session_id, "session shape disagrees with configuration".into());
                return Err(ProtocolError::Violation(format!(
                    "peer wants {}x{}, configured {}x{}",
                    trains, pulses, cfg.trains_per_session, cfg.pulses_per_train
                )));
            }
        }
        _ => unreachable!(),
    }

    let mut records: Vec<RawRecord> = Vec::new();
    for train in 0..cfg.trains_per_session {
        let base = |p: u32| choice_index(SlotId::new(train, p));
        let alice: Vec<PhaseChoice> = (0..cfg.pulses_per_train)
            .map(|p| phase_choice_at(cfg.session_seed, Role::Alice, base(p)))
            .collect();
        let bob: Vec<PhaseChoice> = (0..cfg.pulses_per_train)
            .map(|p| phase_choice_at(cfg.session_seed, Role::Bob, base(p)))
            .collect();
        let outcomes = optics::run_train(&alice, &bob, &cfg.link, cfg.session_seed, train)?;

        let mut entries = Vec::with_capacity(outcomes.len());
        for out in outcomes {
            let detector = squash(out.click, cfg.session_seed, out.slot)
                .expect("run_train only reports clicked slots");
            let choice = bob[out.slot.pulse_index as usize];
            entries.push(Detection { slot: out.slot, basis: choice.basis });
            records.push(RawRecord { slot: out.slot, choice, click: Some(detector) });
        }
        send_msg(chan, session_id, &Message::Detections { entries })?;
    }
    send_msg(chan, session_id, &Message::TrainDone { trains_completed: cfg.trains_per_session })?;

    let runs = match recv_expect(chan, session_id, &[MsgType::SiftMask], "sift mask")? {
        Message::SiftMask { runs } => runs,
        _ => unreachable!(),
    };
    let mask = decode_keep_mask(&runs, records.len()).map_err(|e| {
        abort(chan, session_id, format!("bad sift mask: {}", e));
        ProtocolError::Violation(format!("sift mask: {}", e))
    })?;

    let mut slots = Vec::new();
    let mut bits = Bits::new();
    for (record, keep) in records.iter().zip(mask) {
        if !keep {
            continue;
        }
        let mut bit = record.click.unwrap().bit();
        if cfg.inject_error_rate > 0.0 {
            let mut r = SlotRng::for_slot(
                cfg.session_seed,
                StreamKind::ErrorInject,
                record.slot.train_index,
                record.slot.pulse_index,
            );
            if r.chance(cfg.inject_error_rate) {
                bit = !bit;
            }
        }
        slots.push(record.slot);
        bits.push(bit);
    }
    Ok(SiftedBlock { bits, slots, session_id })
}

/// Resolves a click to one detector, squashing double clicks uniformly via
/// the slot's dedicated stream.
fn squash(click: Click, seed: RngSeed, slot: SlotId) -> Option<Detector> {
    match click {
        Click::None => None,
        Click::D0 => Some(Detector::D0),
        Click::D1 => Some(Detector::D1),
        Click::Both => {
            let mut r =
                SlotRng::for_slot(seed, StreamKind::DoubleClick, slot.train_index, slot.pulse_index);
            Some(if r.chance(0.5) { Detector::D0 } else { Detector::D1 })
        }
    }
}

/// Runs one session with both endpoints in-process over an in-memory
/// channel. Test and loopback building block.
pub fn run_session(
    cfg: &SessionConfig,
    session_id: u64,
) -> Result<(SiftedBlock, SiftedBlock), ProtocolError> {
    let (mut ca, mut cb) = crate::net::MemChannel::pair();
    std::thread::scope(|s| {
        let alice = s.spawn(|| alice_session(cfg, session_id, &mut ca));
        let bob = s.spawn(|| bob_session(cfg, session_id, &mut cb));
        let a = alice.join().expect("alice thread panicked")?;
        let b = bob.join().expect("bob thread panicked")?;
        Ok((a, b))
    })
}
