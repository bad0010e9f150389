//! Typed payload codecs for every message on the public channel.
//!
//! One session runs HELLO (once per connection, both directions), then
//! SESSION_START, a DETECTIONS frame per train, TRAIN_DONE, SIFT_MASK.
//! Reconciliation frames follow whenever a block's worth of sifted material
//! exists: SYNDROME and VERIFY_TAG from the transmitter, BLOCK_DISCARD (the
//! receiver's disposition, which also reports "kept") back, PA_SEED and a
//! FINAL_DIGEST exchange when an epoch closes, ALARM and ABORT as required.
//! The legality of each arrival is enforced by the session state machines in
//! [`crate::protocol`]; this module only guarantees that whatever is decoded
//! was well-formed.
//!
//! Decoding is strict: every field is range-checked and the payload must be
//! consumed exactly, so a frame either yields the message the peer encoded
//! or a [`NetError::Payload`] naming the defect.

use super::frame::{Frame, MsgType};
use super::NetError;
use crate::bits::Bits;
use crate::postproc::ldpc::{CodeRate, LdpcCode};
use crate::postproc::{BlockVerdict, DiscardReason};
use crate::types::{Basis, Role, SlotId};

/// One announced detection: where it happened and the basis Bob measured in.
/// The click outcome itself stays private.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub slot: SlotId,
    pub basis: Basis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlarmKind {
    /// Too many consecutive block discards; the error rate estimate (when
    /// carried) comes from the syndrome disagreement weight.
    DiscardRun,
    /// Measured epoch error rate at or above the abort threshold.
    EpochQber,
    /// The final key digests of the two endpoints disagree.
    DigestMismatch,
}

impl AlarmKind {
    fn code(self) -> u8 {
        match self {
            AlarmKind::DiscardRun => 1,
            AlarmKind::EpochQber => 2,
            AlarmKind::DigestMismatch => 3,
        }
    }

    fn from_code(c: u8) -> Option<AlarmKind> {
        match c {
            1 => Some(AlarmKind::DiscardRun),
            2 => Some(AlarmKind::EpochQber),
            3 => Some(AlarmKind::DigestMismatch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Connection opener, sent by both sides. The fingerprint commits to the
    /// full run configuration so misconfigured pairs fail immediately.
    Hello { role: Role, sessions_total: u32, fingerprint: u64 },
    SessionStart { trains: u32, pulses: u32 },
    /// All detections of one train, in slot order.
    Detections { entries: Vec<Detection> },
    TrainDone { trains_completed: u32 },
    /// Run-length encoded keep-mask over the session's announced detections,
    /// alternating keep/drop and starting with a keep run (possibly zero).
    SiftMask { runs: Vec<u32> },
    Syndrome { index: u64, rate: CodeRate, syndrome: Bits },
    VerifyTag { index: u64, hash_seed: u128, tag: u64 },
    /// The receiver's disposition of an offered block. Verdict 0 keeps the
    /// block (with the number of corrected bits); 1 and 2 discard it.
    BlockDisposition { index: u64, verdict: BlockVerdict },
    /// Epoch close: public compression seed and the agreed output length.
    PaSeed { epoch_index: u64, key_len: u32, seed: u128 },
    /// Digest of the epoch's final key; the confirming reply carries none.
    FinalDigest { epoch_index: u64, digest_seed: u128, digest: Option<u64> },
    Alarm { kind: AlarmKind, qber: Option<f64> },
    Abort { reason: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello { .. } => MsgType::Hello,
            Message::SessionStart { .. } => MsgType::SessionStart,
            Message::Detections { .. } => MsgType::Detections,
            Message::TrainDone { .. } => MsgType::TrainDone,
            Message::SiftMask { .. } => MsgType::SiftMask,
            Message::Syndrome { .. } => MsgType::Syndrome,
            Message::VerifyTag { .. } => MsgType::VerifyTag,
            Message::BlockDisposition { .. } => MsgType::BlockDiscard,
            Message::PaSeed { .. } => MsgType::PaSeed,
            Message::FinalDigest { .. } => MsgType::FinalDigest,
            Message::Alarm { .. } => MsgType::Alarm,
            Message::Abort { .. } => MsgType::Abort,
        }
    }

    /// Number of payload bits that are computed from key material. This is
    /// the quantity the leakage ledger must cover: syndromes, verification
    /// tags and key digests. Every other field is public bookkeeping (slot
    /// ids, bases, masks, counters, fresh public seeds).
    pub fn key_derived_bits(&self) -> u64 {
        match self {
            Message::Syndrome { syndrome, .. } => syndrome.len() as u64,
            Message::VerifyTag { .. } => 64,
            Message::FinalDigest { digest: Some(_), .. } => 64,
            _ => 0,
        }
    }

    pub fn to_frame(&self, session_id: u64) -> Result<Frame, NetError> {
        let mut p = Vec::new();
        match self {
            Message::Hello { role, sessions_total, fingerprint } => {
                p.push(role.code());
                put_u32(&mut p, *sessions_total);
                put_u64(&mut p, *fingerprint);
            }
            Message::SessionStart { trains, pulses } => {
                put_u32(&mut p, *trains);
                put_u32(&mut p, *pulses);
            }
            Message::Detections { entries } => {
                put_u32(&mut p, entries.len() as u32);
                for d in entries {
                    put_u32(&mut p, d.slot.train_index);
                    put_u32(&mut p, d.slot.pulse_index);
                    p.push(d.basis.code());
                }
            }
            Message::TrainDone { trains_completed } => {
                put_u32(&mut p, *trains_completed);
            }
            Message::SiftMask { runs } => {
                put_u32(&mut p, runs.len() as u32);
                for r in runs {
                    put_u32(&mut p, *r);
                }
            }
            Message::Syndrome { index, rate, syndrome } => {
                put_u64(&mut p, *index);
                p.push(rate.id());
                put_u32(&mut p, syndrome.len() as u32);
                p.extend_from_slice(&syndrome.to_bytes());
            }
            Message::VerifyTag { index, hash_seed, tag } => {
                put_u64(&mut p, *index);
                put_u128(&mut p, *hash_seed);
                put_u64(&mut p, *tag);
            }
            Message::BlockDisposition { index, verdict } => {
                put_u64(&mut p, *index);
                let (code, flips) = match verdict {
                    BlockVerdict::Verified { flips } => (0u8, *flips),
                    BlockVerdict::Discard { reason: DiscardReason::DecodeFailure } => (1, 0),
                    BlockVerdict::Discard { reason: DiscardReason::TagMismatch } => (2, 0),
                };
                p.push(code);
                put_u32(&mut p, flips);
            }
            Message::PaSeed { epoch_index, key_len, seed } => {
                put_u64(&mut p, *epoch_index);
                put_u32(&mut p, *key_len);
                put_u128(&mut p, *seed);
            }
            Message::FinalDigest { epoch_index, digest_seed, digest } => {
                put_u64(&mut p, *epoch_index);
                put_u128(&mut p, *digest_seed);
                match digest {
                    Some(d) => {
                        p.push(1);
                        put_u64(&mut p, *d);
                    }
                    None => p.push(0),
                }
            }
            Message::Alarm { kind, qber } => {
                p.push(kind.code());
                match qber {
                    Some(q) => {
                        p.push(1);
                        put_u32(&mut p, (q.clamp(0.0, 1.0) * 1e6).round() as u32);
                    }
                    None => {
                        p.push(0);
                        put_u32(&mut p, 0);
                    }
                }
            }
            Message::Abort { reason } => {
                let bytes = reason.as_bytes();
                if bytes.len() > MAX_ABORT_REASON {
                    return Err(NetError::Payload {
                        msg: MsgType::Abort,
                        reason: format!("abort reason of {} bytes", bytes.len()),
                    });
                }
                p.extend_from_slice(bytes);
            }
        }
        Ok(Frame::new(self.msg_type(), session_id, p))
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, NetError> {
        let msg = frame.msg_type;
        let err = |reason: String| NetError::Payload { msg, reason };
        let mut r = Reader { buf: &frame.payload, pos: 0, msg };
        let message = match msg {
            MsgType::Hello => {
                let role = match r.u8()? {
                    0 => Role::Alice,
                    1 => Role::Bob,
                    c => return Err(err(format!("unknown role {}", c))),
                };
                Message::Hello {
                    role,
                    sessions_total: r.u32()?,
                    fingerprint: r.u64()?,
                }
            }
            MsgType::SessionStart => {
                let trains = r.u32()?;
                let pulses = r.u32()?;
                if trains == 0 || pulses == 0 {
                    return Err(err(format!("degenerate session {}x{}", trains, pulses)));
                }
                Message::SessionStart { trains, pulses }
            }
            MsgType::Detections => {
                let count = r.u32()? as usize;
                let mut entries = Vec::with_capacity(count.min(1 << 16));
                let mut prev: Option<SlotId> = None;
                for _ in 0..count {
                    let slot = SlotId::new(r.u32()?, r.u32()?);
                    let basis = Basis::from_code(r.u8()?)
                        .ok_or_else(|| err("basis code out of range".into()))?;
                    if prev.is_some_and(|p| p >= slot) {
                        return Err(err(format!("slots out of order at {}", slot)));
                    }
                    prev = Some(slot);
                    entries.push(Detection { slot, basis });
                }
                Message::Detections { entries }
            }
            MsgType::TrainDone => Message::TrainDone { trains_completed: r.u32()? },
            MsgType::SiftMask => {
                let count = r.u32()? as usize;
                let mut runs = Vec::with_capacity(count.min(1 << 16));
                for i in 0..count {
                    let run = r.u32()?;
                    if run == 0 && i != 0 {
                        return Err(err(format!("zero-length run at position {}", i)));
                    }
                    runs.push(run);
                }
                Message::SiftMask { runs }
            }
            MsgType::Syndrome => {
                let index = r.u64()?;
                let rate = CodeRate::from_id(r.u8()?)
                    .ok_or_else(|| err("unknown code rate id".into()))?;
                let bit_len = r.u32()? as usize;
                let expect = LdpcCode::standard(rate).m();
                if bit_len != expect {
                    return Err(err(format!(
                        "syndrome of {} bits, rate {} requires {}",
                        bit_len,
                        rate.label(),
                        expect
                    )));
                }
                let bytes = r.bytes(bit_len.div_ceil(8))?;
                let syndrome = Bits::from_bytes(bytes, bit_len)
                    .ok_or_else(|| err("nonzero padding in syndrome".into()))?;
                Message::Syndrome { index, rate, syndrome }
            }
            MsgType::VerifyTag => Message::VerifyTag {
                index: r.u64()?,
                hash_seed: r.u128()?,
                tag: r.u64()?,
            },
            MsgType::BlockDiscard => {
                let index = r.u64()?;
                let code = r.u8()?;
                let flips = r.u32()?;
                let verdict = match code {
                    0 => BlockVerdict::Verified { flips },
                    1 if flips == 0 => {
                        BlockVerdict::Discard { reason: DiscardReason::DecodeFailure }
                    }
                    2 if flips == 0 => {
                        BlockVerdict::Discard { reason: DiscardReason::TagMismatch }
                    }
                    _ => return Err(err(format!("bad disposition {}/{}", code, flips))),
                };
                Message::BlockDisposition { index, verdict }
            }
            MsgType::PaSeed => Message::PaSeed {
                epoch_index: r.u64()?,
                key_len: r.u32()?,
                seed: r.u128()?,
            },
            MsgType::FinalDigest => {
                let epoch_index = r.u64()?;
                let digest_seed = r.u128()?;
                let digest = match r.u8()? {
                    0 => None,
                    1 => Some(r.u64()?),
                    f => return Err(err(format!("bad digest flag {}", f))),
                };
                Message::FinalDigest { epoch_index, digest_seed, digest }
            }
            MsgType::Alarm => {
                let kind = AlarmKind::from_code(r.u8()?)
                    .ok_or_else(|| err("unknown alarm kind".into()))?;
                let flag = r.u8()?;
                let micro = r.u32()?;
                let qber = match flag {
                    0 if micro == 0 => None,
                    1 if micro <= 1_000_000 => Some(micro as f64 / 1e6),
                    _ => return Err(err(format!("bad alarm estimate {}/{}", flag, micro))),
                };
                Message::Alarm { kind, qber }
            }
            MsgType::Abort => {
                if frame.payload.len() > MAX_ABORT_REASON {
                    return Err(err("abort reason too long".into()));
                }
                let reason = std::str::from_utf8(&frame.payload)
                    .map_err(|_| err("abort reason is not utf-8".into()))?
                    .to_string();
                r.pos = frame.payload.len();
                Message::Abort { reason }
            }
        };
        if r.pos != frame.payload.len() {
            return Err(NetError::Payload {
                msg,
                reason: format!("{} trailing bytes", frame.payload.len() - r.pos),
            });
        }
        Ok(message)
    }
}

const MAX_ABORT_REASON: usize = 1024;

/// Run-length encodes a keep-mask: alternating keep/drop run lengths, the
/// first run counting keeps (zero when the mask starts with a drop).
pub fn encode_keep_mask(mask: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut keeping = true;
    let mut run = 0u32;
    for &m in mask {
        if m == keeping {
            run += 1;
        } else {
            runs.push(run);
            keeping = m;
            run = 1;
        }
    }
    if run > 0 || !runs.is_empty() {
        runs.push(run);
    }
    runs
}

/// Expands run lengths back into a keep-mask of exactly `expected` entries.
pub fn decode_keep_mask(runs: &[u32], expected: usize) -> Result<Vec<bool>, String> {
    let mut mask = Vec::with_capacity(expected);
    for (i, &run) in runs.iter().enumerate() {
        if run == 0 && i != 0 {
            return Err(format!("zero-length run at position {}", i));
        }
        let keep = i % 2 == 0;
        for _ in 0..run {
            mask.push(keep);
        }
    }
    if mask.len() != expected {
        return Err(format!("mask covers {} of {} detections", mask.len(), expected));
    }
    Ok(mask)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    msg: MsgType,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        if self.buf.len() - self.pos < n {
            return Err(NetError::Payload {
                msg: self.msg,
                reason: format!("need {} bytes at offset {} of {}", n, self.pos, self.buf.len()),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_be_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_be_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn u128(&mut self) -> Result<u128, NetError> {
        Ok(u128::from_be_bytes(self.bytes(16)?.try_into().unwrap()))
    }
}

fn put_u32(p: &mut Vec<u8>, v: u32) {
    p.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(p: &mut Vec<u8>, v: u64) {
    p.extend_from_slice(&v.to_be_bytes());
}

fn put_u128(p: &mut Vec<u8>, v: u128) {
    p.extend_from_slice(&v.to_be_bytes());
}
