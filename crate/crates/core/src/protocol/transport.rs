//! Message transports: any reliable byte stream, an in-memory pipe, TCP.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::wire::{decode_frame, encode_frame, FrameError, Message, MessageType};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("peer closed the connection")]
    Closed,
    #[error("timed out after {0:?}")]
    Timeout(Duration),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame: {0}")]
    Frame(#[from] FrameError),
}

pub trait Transport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        (**self).send(msg)
    }
    fn recv(&mut self) -> Result<Message, TransportError> {
        (**self).recv()
    }
}

/// Frames messages over a byte stream.
pub struct FramedStream<S> {
    stream: S,
    buf: Vec<u8>,
    start: usize,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(stream: S) -> Self {
        Self { stream, buf: Vec::new(), start: 0 }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }
}

impl<S: Read + Write> Transport for FramedStream<S> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.stream.write_all(&encode_frame(msg))?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let mut chunk = [0u8; 64 * 1024];
        loop {
            match decode_frame(&self.buf[self.start..]) {
                Ok((msg, used)) => {
                    self.start += used;
                    if self.start == self.buf.len() {
                        self.buf.clear();
                        self.start = 0;
                    }
                    return Ok(msg);
                }
                Err(FrameError::NeedMoreBytes { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            let n = match self.stream.read(&mut chunk) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout(Duration::ZERO))
                }
                Err(e) => return Err(e.into()),
            };
            if self.start > 0 {
                self.buf.drain(..self.start);
                self.start = 0;
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

/// One end of an in-process duplex pipe. Messages travel as encoded frames
/// so the wire format is exercised exactly as over a socket.
pub struct MemoryTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Option<Duration>,
}

pub fn memory_pair() -> (MemoryTransport, MemoryTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        MemoryTransport { tx: a_tx, rx: a_rx, timeout: None },
        MemoryTransport { tx: b_tx, rx: b_rx, timeout: None },
    )
}

impl MemoryTransport {
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.tx.send(encode_frame(msg)).map_err(|_| TransportError::Closed)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        let frame = match self.timeout {
            None => self.rx.recv().map_err(|_| TransportError::Closed)?,
            Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout(t),
                RecvTimeoutError::Disconnected => TransportError::Closed,
            })?,
        };
        let (msg, used) = decode_frame(&frame)?;
        debug_assert_eq!(used, frame.len());
        Ok(msg)
    }
}

fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("no address for {addr}")))
}

/// Waits up to `accept_timeout` for one peer on an already bound listener.
pub fn tcp_accept(
    listener: &TcpListener,
    accept_timeout: Duration,
    read_timeout: Option<Duration>,
) -> Result<FramedStream<TcpStream>, TransportError> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + accept_timeout;
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                stream.set_read_timeout(read_timeout)?;
                return Ok(FramedStream::new(stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::Timeout(accept_timeout));
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn tcp_listen(
    addr: &str,
    accept_timeout: Duration,
    read_timeout: Option<Duration>,
) -> Result<FramedStream<TcpStream>, TransportError> {
    let listener = TcpListener::bind(resolve(addr)?)?;
    tcp_accept(&listener, accept_timeout, read_timeout)
}

/// Connects, retrying until `connect_timeout` so either party may start first.
pub fn tcp_connect(
    addr: &str,
    connect_timeout: Duration,
    read_timeout: Option<Duration>,
) -> Result<FramedStream<TcpStream>, TransportError> {
    let target = resolve(addr)?;
    let deadline = Instant::now() + connect_timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        match TcpStream::connect_timeout(&target, left.max(Duration::from_millis(10))) {
            Ok(stream) => {
                stream.set_nodelay(true)?;
                stream.set_read_timeout(read_timeout)?;
                return Ok(FramedStream::new(stream));
            }
            Err(e) if Instant::now() < deadline && matches!(e.kind(), io::ErrorKind::ConnectionRefused | io::ErrorKind::TimedOut) => {
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionRefused | io::ErrorKind::TimedOut) => {
                return Err(TransportError::Timeout(connect_timeout));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

/// Passes messages through and records the type of everything sent.
pub struct Recording<T> {
    pub inner: T,
    pub sent: Vec<Message>,
}

impl<T> Recording<T> {
    pub fn new(inner: T) -> Self {
        Self { inner, sent: Vec::new() }
    }

    pub fn sent_types(&self) -> Vec<MessageType> {
        self.sent.iter().map(Message::message_type).collect()
    }
}

impl<T: Transport> Transport for Recording<T> {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        self.sent.push(msg.clone());
        self.inner.send(msg)
    }

    fn recv(&mut self) -> Result<Message, TransportError> {
        self.inner.recv()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framed_stream_handles_partial_reads() {
        // A reader that hands out one byte at a time.
        struct Trickle(std::io::Cursor<Vec<u8>>);
        impl Read for Trickle {
            fn read(&mut self, b: &mut [u8]) -> io::Result<usize> {
                let n = b.len().min(1);
                self.0.read(&mut b[..n])
            }
        }
        impl Write for Trickle {
            fn write(&mut self, b: &[u8]) -> io::Result<usize> {
                Ok(b.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let msgs = [Message::Done { sifted_len: 3 }, Message::SampleIndices(vec![1, 2, 99])];
        let bytes: Vec<u8> = msgs.iter().flat_map(encode_frame).collect();
        let mut t = FramedStream::new(Trickle(std::io::Cursor::new(bytes)));
        for m in &msgs {
            assert_eq!(&t.recv().unwrap(), m);
        }
        assert!(matches!(t.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn memory_pipe_duplex() {
        let (mut a, mut b) = memory_pair();
        a.send(&Message::Done { sifted_len: 1 }).unwrap();
        b.send(&Message::Done { sifted_len: 2 }).unwrap();
        assert_eq!(b.recv().unwrap(), Message::Done { sifted_len: 1 });
        assert_eq!(a.recv().unwrap(), Message::Done { sifted_len: 2 });
        drop(a);
        assert!(matches!(b.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn listen_times_out_without_peer() {
        let start = Instant::now();
        let err = tcp_listen("127.0.0.1:0", Duration::from_millis(200), None).err().unwrap();
        assert!(matches!(err, TransportError::Timeout(_)));
        assert!(start.elapsed() >= Duration::from_millis(200));
    }
}
