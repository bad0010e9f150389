//! The public classical channel between the two endpoints.
//!
//! Everything the endpoints tell each other crosses this layer as a framed
//! message over a reliable byte stream: an 18-byte header (magic, version,
//! message type, session id, payload length) followed by the payload. The
//! same codec drives both the TCP binding and the in-memory pair used by
//! tests, so their observable semantics are identical down to the byte.
//!
//! The channel is assumed authenticated but public: an eavesdropper reads
//! every frame. Payloads therefore carry only material whose disclosure the
//! key accounting either ignores (bases, slot ids, masks, verdicts, public
//! seeds) or explicitly charges (syndromes, verification tags, key digests;
//! see [`Message::key_derived_bits`]). Captured traffic can be audited
//! against that rule after the fact via [`capture`].

pub mod capture;
pub mod channel;
pub mod frame;
pub mod messages;

pub use capture::{read_capture, CaptureChannel, CaptureLog, Direction};
pub use channel::{MemChannel, PublicChannel, TcpChannel};
pub use frame::{Frame, MsgType, HEADER_LEN, MAX_PAYLOAD};
pub use messages::{AlarmKind, Detection, Message};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    /// No frame arrived within the configured receive window.
    #[error("receive timed out")]
    Timeout,
    /// The peer closed the stream at a frame boundary.
    #[error("peer disconnected")]
    Disconnected,
    /// The stream stopped mid-frame.
    #[error("truncated frame: {0}")]
    Truncated(String),
    /// Framing is unrecoverable: wrong magic, version or message type. The
    /// stream position can no longer be trusted.
    #[error("stream desynchronized: {0}")]
    Desync(String),
    #[error("payload of {0} bytes exceeds the 2^24 frame limit")]
    Oversize(usize),
    #[error("malformed {msg} payload: {reason}")]
    Payload { msg: MsgType, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl NetError {
    /// True for outcomes that end the connection rather than one receive
    /// attempt. Timeouts are retryable in principle; the session layer
    /// chooses to abort the epoch either way.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, NetError::Timeout)
    }
}
