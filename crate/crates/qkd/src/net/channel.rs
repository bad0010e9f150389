//! Reliable-stream transports carrying the framed protocol.
//!
//! Both implementations funnel through the same frame codec: the TCP binding
//! reads frames straight off the socket, and the in-memory pair pushes the
//! encoded bytes through a queue that is consumed by the identical decode
//! path, so tests over [`MemChannel`] exercise the same semantics as a
//! socket, including timeouts, disconnects and mid-frame truncation.

use super::frame::{self, Frame};
use super::NetError;
use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::time::{Duration, Instant};

/// Ordered, loss-free frame transport between the two endpoints. One session
/// at a time; a single reader and writer per direction.
pub trait PublicChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError>;
    /// Blocks until one full frame arrives, the configured timeout elapses,
    /// or the peer goes away. Timeout and disconnect are distinct outcomes.
    fn recv(&mut self) -> Result<Frame, NetError>;
    fn set_timeout(&mut self, timeout: Option<Duration>);
}

/// In-process channel endpoint. Created in pairs; each side owns the sender
/// feeding the other's inbox.
pub struct MemChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    inbox: VecDeque<u8>,
    timeout: Option<Duration>,
}

impl MemChannel {
    pub fn pair() -> (MemChannel, MemChannel) {
        let (tx_a, rx_b) = mpsc::channel();
        let (tx_b, rx_a) = mpsc::channel();
        let mk = |tx, rx| MemChannel { tx, rx, inbox: VecDeque::new(), timeout: None };
        (mk(tx_a, rx_a), mk(tx_b, rx_b))
    }

    /// Injects raw bytes into the stream, bypassing the frame encoder. Test
    /// hook for desync and truncation scenarios.
    #[cfg(test)]
    pub(crate) fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), NetError> {
        self.tx.send(bytes).map_err(|_| NetError::Disconnected)
    }
}

impl PublicChannel for MemChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        let bytes = frame::encode(frame)?;
        self.tx.send(bytes).map_err(|_| NetError::Disconnected)
    }

    fn recv(&mut self) -> Result<Frame, NetError> {
        let deadline = self.timeout.map(|t| Instant::now() + t);
        let mut reader = QueueReader { inbox: &mut self.inbox, rx: &self.rx, deadline };
        frame::decode_from(&mut reader)
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }
}

/// Byte-stream view of the inbox queue. Queue closure reads as EOF, so the
/// frame decoder sees exactly what it would see on a closed socket.
struct QueueReader<'a> {
    inbox: &'a mut VecDeque<u8>,
    rx: &'a mpsc::Receiver<Vec<u8>>,
    deadline: Option<Instant>,
}

impl Read for QueueReader<'_> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.inbox.is_empty() {
            let chunk = match self.deadline {
                None => self.rx.recv().ok(),
                Some(d) => {
                    let now = Instant::now();
                    let left = d.saturating_duration_since(now);
                    if left.is_zero() {
                        return Err(io::ErrorKind::TimedOut.into());
                    }
                    match self.rx.recv_timeout(left) {
                        Ok(c) => Some(c),
                        Err(mpsc::RecvTimeoutError::Timeout) => {
                            return Err(io::ErrorKind::TimedOut.into());
                        }
                        Err(mpsc::RecvTimeoutError::Disconnected) => None,
                    }
                }
            };
            match chunk {
                Some(c) => self.inbox.extend(c),
                None => return Ok(0),
            }
        }
        let n = out.len().min(self.inbox.len());
        for slot in out.iter_mut().take(n) {
            *slot = self.inbox.pop_front().unwrap();
        }
        Ok(n)
    }
}

/// Frame transport over a connected TCP stream.
pub struct TcpChannel {
    stream: TcpStream,
    timeout: Option<Duration>,
}

impl TcpChannel {
    pub fn new(stream: TcpStream) -> io::Result<TcpChannel> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream, timeout: None })
    }
}

fn map_write_err(e: io::Error) -> NetError {
    match e.kind() {
        io::ErrorKind::BrokenPipe
        | io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted => NetError::Disconnected,
        _ => NetError::Io(e),
    }
}

impl PublicChannel for TcpChannel {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        let bytes = frame::encode(frame)?;
        self.stream.write_all(&bytes).map_err(map_write_err)?;
        self.stream.flush().map_err(map_write_err)
    }

    fn recv(&mut self) -> Result<Frame, NetError> {
        self.stream.set_read_timeout(self.timeout)?;
        match frame::decode_from(&mut self.stream) {
            // a reset at a frame boundary is an ordinary disconnect
            Err(NetError::Io(e)) if e.kind() == io::ErrorKind::ConnectionReset => {
                Err(NetError::Disconnected)
            }
            other => other,
        }
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }
}
