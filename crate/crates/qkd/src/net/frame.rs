//! Wire framing.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "QKDP"
//!      4     1  version (1)
//!      5     1  msg_type
//!      6     8  session_id
//!     14     4  payload_len (<= 2^24)
//!     18     -  payload
//! ```
//!
//! Decoding validates magic, version, type and length before touching the
//! payload, and never reads past the declared payload length.

use super::NetError;
use std::fmt;
use std::io::{self, Read};

pub const MAGIC: [u8; 4] = *b"QKDP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
/// Largest legal payload, inclusive.
pub const MAX_PAYLOAD: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Hello,
    SessionStart,
    TrainDone,
    Detections,
    SiftMask,
    Syndrome,
    VerifyTag,
    BlockDiscard,
    PaSeed,
    FinalDigest,
    Alarm,
    Abort,
}

impl MsgType {
    pub const ALL: [MsgType; 12] = [
        MsgType::Hello,
        MsgType::SessionStart,
        MsgType::TrainDone,
        MsgType::Detections,
        MsgType::SiftMask,
        MsgType::Syndrome,
        MsgType::VerifyTag,
        MsgType::BlockDiscard,
        MsgType::PaSeed,
        MsgType::FinalDigest,
        MsgType::Alarm,
        MsgType::Abort,
    ];

    pub fn code(self) -> u8 {
        match self {
            MsgType::Hello => 0,
            MsgType::SessionStart => 1,
            MsgType::TrainDone => 2,
            MsgType::Detections => 3,
            MsgType::SiftMask => 4,
            MsgType::Syndrome => 5,
            MsgType::VerifyTag => 6,
            MsgType::BlockDiscard => 7,
            MsgType::PaSeed => 8,
            MsgType::FinalDigest => 9,
            MsgType::Alarm => 10,
            MsgType::Abort => 11,
        }
    }

    pub fn from_code(c: u8) -> Option<MsgType> {
        MsgType::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MsgType::Hello => "HELLO",
            MsgType::SessionStart => "SESSION_START",
            MsgType::TrainDone => "TRAIN_DONE",
            MsgType::Detections => "DETECTIONS",
            MsgType::SiftMask => "SIFT_MASK",
            MsgType::Syndrome => "SYNDROME",
            MsgType::VerifyTag => "VERIFY_TAG",
            MsgType::BlockDiscard => "BLOCK_DISCARD",
            MsgType::PaSeed => "PA_SEED",
            MsgType::FinalDigest => "FINAL_DIGEST",
            MsgType::Alarm => "ALARM",
            MsgType::Abort => "ABORT",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, session_id: u64, payload: Vec<u8>) -> Frame {
        Frame { msg_type, session_id, payload }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, NetError> {
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(NetError::Oversize(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(frame.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type.code());
    out.extend_from_slice(&frame.session_id.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Reads until `buf` is full. `at_boundary` distinguishes a clean close
/// (nothing read yet at a frame boundary) from a mid-frame truncation.
fn read_full(r: &mut impl Read, buf: &mut [u8], at_boundary: bool) -> Result<(), NetError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return if at_boundary && filled == 0 {
                    Err(NetError::Disconnected)
                } else {
                    Err(NetError::Truncated(format!(
                        "stream ended {} bytes into a {}-byte read",
                        filled,
                        buf.len()
                    )))
                };
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Err(NetError::Timeout);
            }
            Err(e) => return Err(NetError::Io(e)),
        }
    }
    Ok(())
}

/// Consumes exactly one frame from the stream. On a desync error the stream
/// position is unspecified and the connection must be dropped.
pub fn decode_from(r: &mut impl Read) -> Result<Frame, NetError> {
    let mut header = [0u8; HEADER_LEN];
    read_full(r, &mut header, true)?;
    if header[0..4] != MAGIC {
        return Err(NetError::Desync(format!("bad magic {:02x?}", &header[0..4])));
    }
    if header[4] != VERSION {
        return Err(NetError::Desync(format!("unsupported version {}", header[4])));
    }
    let msg_type = MsgType::from_code(header[5])
        .ok_or_else(|| NetError::Desync(format!("unknown message type {}", header[5])))?;
    let session_id = u64::from_be_bytes(header[6..14].try_into().unwrap());
    let payload_len = u32::from_be_bytes(header[14..18].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(NetError::Oversize(payload_len));
    }
    let mut payload = vec![0u8; payload_len];
    read_full(r, &mut payload, false)?;
    Ok(Frame { msg_type, session_id, payload })
}

/// Decodes one frame from a complete byte slice (test convenience).
pub fn decode(bytes: &[u8]) -> Result<Frame, NetError> {
    decode_from(&mut io::Cursor::new(bytes))
}
