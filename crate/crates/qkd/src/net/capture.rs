//! Traffic capture for after-the-fact audits.
//!
//! A [`CaptureChannel`] wraps any transport and appends every frame it
//! carries to a shared log, as length-prefixed records:
//!
//! ```text
//! [direction: 1 byte] [frame_len: 4 bytes big-endian] [encoded frame]
//! ```
//!
//! Direction is relative to the capturing endpoint (0 sent, 1 received), so
//! one log taken at either endpoint holds the complete conversation. The
//! audit tests replay a log with [`read_capture`] and check two things: that
//! no raw or sifted key material ever appears in any payload, and that the
//! key-derived payload bits (syndromes, tags, digests of blocks that made it
//! into the key) add up to exactly the leakage the key length accounting
//! subtracted.

use super::channel::PublicChannel;
use super::frame::{self, Frame};
use super::NetError;
use std::sync::{Arc, Mutex};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

impl Direction {
    fn code(self) -> u8 {
        match self {
            Direction::Sent => 0,
            Direction::Received => 1,
        }
    }
}

/// Shared, append-only capture buffer. Clones view the same log.
#[derive(Clone, Default)]
pub struct CaptureLog {
    buf: Arc<Mutex<Vec<u8>>>,
}

impl CaptureLog {
    pub fn new() -> CaptureLog {
        CaptureLog::default()
    }

    fn append(&self, dir: Direction, frame_bytes: &[u8]) {
        let mut buf = self.buf.lock().unwrap();
        buf.push(dir.code());
        buf.extend_from_slice(&(frame_bytes.len() as u32).to_be_bytes());
        buf.extend_from_slice(frame_bytes);
    }

    /// Snapshot of the log so far.
    pub fn bytes(&self) -> Vec<u8> {
        self.buf.lock().unwrap().clone()
    }
}

/// Transport wrapper that records everything it carries.
pub struct CaptureChannel<C> {
    inner: C,
    log: CaptureLog,
}

impl<C: PublicChannel> CaptureChannel<C> {
    pub fn new(inner: C, log: CaptureLog) -> CaptureChannel<C> {
        CaptureChannel { inner, log }
    }
}

impl<C: PublicChannel> PublicChannel for CaptureChannel<C> {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        self.inner.send(frame)?;
        self.log.append(Direction::Sent, &frame::encode(frame)?);
        Ok(())
    }

    fn recv(&mut self) -> Result<Frame, NetError> {
        let f = self.inner.recv()?;
        self.log.append(Direction::Received, &frame::encode(&f)?);
        Ok(f)
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.inner.set_timeout(timeout);
    }
}

/// Parses a capture log back into frames, strictly: every record must hold
/// exactly one well-formed frame.
pub fn read_capture(bytes: &[u8]) -> Result<Vec<(Direction, Frame)>, NetError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 5 {
            return Err(NetError::Truncated("capture record header".into()));
        }
        let dir = match bytes[pos] {
            0 => Direction::Sent,
            1 => Direction::Received,
            d => return Err(NetError::Desync(format!("capture direction byte {}", d))),
        };
        let len = u32::from_be_bytes(bytes[pos + 1..pos + 5].try_into().unwrap()) as usize;
        pos += 5;
        if bytes.len() - pos < len {
            return Err(NetError::Truncated("capture record body".into()));
        }
        let record = &bytes[pos..pos + len];
        let f = frame::decode(record)?;
        if f.encoded_len() != len {
            return Err(NetError::Desync("capture record holds trailing bytes".into()));
        }
        pos += len;
        out.push((dir, f));
    }
    Ok(out)
}
