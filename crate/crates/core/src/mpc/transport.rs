//! Framed duplex channels: `[u32 LE payload length][u8 tag][payload]`.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, Sender};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// Bytes of framing added to every payload.
pub const FRAME_HEADER: usize = 5;
/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME: usize = 1 << 31;

/// Operator tag carried by every frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Tag {
    Matmul = 1,
    Elemul = 2,
    Ot = 3,
    Trunc = 4,
    Relu = 5,
    Max = 6,
    Exp = 7,
    Recip = 8,
    Rsqrt = 9,
    Tanh = 10,
    Control = 11,
}

impl Tag {
    pub const ALL: [Tag; 11] = [
        Tag::Matmul,
        Tag::Elemul,
        Tag::Ot,
        Tag::Trunc,
        Tag::Relu,
        Tag::Max,
        Tag::Exp,
        Tag::Recip,
        Tag::Rsqrt,
        Tag::Tanh,
        Tag::Control,
    ];

    pub fn from_u8(v: u8) -> Option<Tag> {
        Self::ALL.get((v as usize).wrapping_sub(1)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tag::Matmul => "MATMUL",
            Tag::Elemul => "ELEMUL",
            Tag::Ot => "OT",
            Tag::Trunc => "TRUNC",
            Tag::Relu => "RELU",
            Tag::Max => "MAX",
            Tag::Exp => "EXP",
            Tag::Recip => "RECIP",
            Tag::Rsqrt => "RSQRT",
            Tag::Tanh => "TANH",
            Tag::Control => "CONTROL",
        }
    }
}

/// An ordered, reliable frame channel to the peer.
pub trait Transport: Send {
    fn send_frame(&mut self, tag: u8, payload: Vec<u8>) -> io::Result<()>;
    fn recv_frame(&mut self) -> io::Result<(u8, Vec<u8>)>;
}

/// In-process channel backed by `std::sync::mpsc`.
pub struct PipeTransport {
    tx: Sender<(u8, Vec<u8>)>,
    rx: Receiver<(u8, Vec<u8>)>,
}

/// A connected pair of in-process endpoints.
pub fn pipe() -> (PipeTransport, PipeTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        PipeTransport { tx: a_tx, rx: a_rx },
        PipeTransport { tx: b_tx, rx: b_rx },
    )
}

fn peer_gone() -> io::Error {
    io::Error::new(io::ErrorKind::BrokenPipe, "peer closed the channel")
}

impl Transport for PipeTransport {
    fn send_frame(&mut self, tag: u8, payload: Vec<u8>) -> io::Result<()> {
        self.tx.send((tag, payload)).map_err(|_| peer_gone())
    }

    fn recv_frame(&mut self) -> io::Result<(u8, Vec<u8>)> {
        self.rx.recv().map_err(|_| peer_gone())
    }
}

/// TCP channel. Writes go through a dedicated thread so that a send never
/// blocks on the peer draining its socket.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: Option<Sender<Vec<u8>>>,
    handle: Option<JoinHandle<io::Result<()>>>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let write_half = stream.try_clone()?;
        let (tx, rx) = mpsc::channel::<Vec<u8>>();
        let handle = std::thread::spawn(move || -> io::Result<()> {
            let mut w = BufWriter::with_capacity(1 << 20, write_half);
            while let Ok(buf) = rx.recv() {
                w.write_all(&buf)?;
                // Drain whatever is queued before flushing.
                while let Ok(more) = rx.try_recv() {
                    w.write_all(&more)?;
                }
                w.flush()?;
            }
            w.flush()
        });
        Ok(Self {
            reader: BufReader::with_capacity(1 << 20, stream),
            writer: Some(tx),
            handle: Some(handle),
        })
    }

    /// Binds `addr` and accepts exactly one connection.
    pub fn listen(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let (stream, peer) = listener.accept()?;
        log::info!("accepted connection from {peer}");
        Self::new(stream)
    }

    /// Connects to `addr`, retrying until `timeout` elapses.
    pub fn connect(addr: impl ToSocketAddrs + Clone, timeout: Duration) -> io::Result<Self> {
        let deadline = Instant::now() + timeout;
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(s) => return Self::new(s),
                Err(e) if Instant::now() < deadline => {
                    log::debug!("connect failed ({e}), retrying");
                    std::thread::sleep(Duration::from_millis(50));
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn writer_error(&mut self) -> io::Error {
        self.writer = None;
        match self.handle.take().map(|h| h.join()) {
            Some(Ok(Err(e))) => e,
            _ => peer_gone(),
        }
    }
}

impl Transport for TcpTransport {
    fn send_frame(&mut self, tag: u8, payload: Vec<u8>) -> io::Result<()> {
        let mut buf = Vec::with_capacity(FRAME_HEADER + payload.len());
        buf.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        buf.push(tag);
        buf.extend_from_slice(&payload);
        let sent = match &self.writer {
            Some(tx) => tx.send(buf).is_ok(),
            None => false,
        };
        if sent {
            Ok(())
        } else {
            Err(self.writer_error())
        }
    }

    fn recv_frame(&mut self) -> io::Result<(u8, Vec<u8>)> {
        let mut head = [0u8; FRAME_HEADER];
        self.reader.read_exact(&mut head)?;
        let len = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
        if len > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "oversized frame"));
        }
        let mut payload = vec![0u8; len];
        self.reader.read_exact(&mut payload)?;
        Ok((head[4], payload))
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.writer = None;
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
