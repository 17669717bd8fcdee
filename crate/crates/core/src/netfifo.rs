//! TCP transport for cut edges: bit-exact framing, a connection handshake
//! keyed on the graph hash, sequence tracking, and optional link shaping.
//!
//! The receive side listens and the transmit side connects. Every frame
//! carries the active token rate, so the remote consumer honors the same
//! rate the producer fired at without any side channel.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::os::fd::FromRawFd;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::fifo::{Fifo, Popped, Pushed};

pub const FRAME_MAGIC: [u8; 4] = *b"EPRN";
pub const HANDSHAKE_MAGIC: [u8; 4] = *b"EPHS";
pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const HELLO_LEN: usize = 15;

const FLAG_EOS: u8 = 0x01;

/// Emulated link characteristics, applied on the transmit side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkShape {
    /// Sustained bytes per second; zero leaves the link unshaped.
    pub bandwidth: f64,
    /// One-way delay added to every frame, in milliseconds.
    pub latency_ms: f64,
}

impl LinkShape {
    pub fn new(bandwidth: f64, latency_ms: f64) -> LinkShape {
        LinkShape { bandwidth, latency_ms }
    }

    pub fn is_unshaped(&self) -> bool {
        self.bandwidth <= 0.0 && self.latency_ms <= 0.0
    }

    /// Modeled transfer time for one payload of `bytes`, in milliseconds.
    pub fn transfer_ms(&self, bytes: u64) -> f64 {
        let bw = if self.bandwidth > 0.0 {
            bytes as f64 / self.bandwidth * 1000.0
        } else {
            0.0
        };
        bw + self.latency_ms
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad frame magic")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    BadVersion(u8),
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlags(u8),
    #[error("end-of-stream frame carries tokens")]
    MalformedEos,
    #[error("frame payload is {got} bytes, header declares {expected}")]
    PayloadMismatch { expected: usize, got: usize },
    #[error("frame for edge index {got}, expected {expected}")]
    EdgeMismatch { expected: u16, got: u16 },
    #[error("token size {got} on the wire, expected {expected}")]
    TokenSizeMismatch { expected: u32, got: u32 },
    #[error("sequence gap: expected {expected}, got {got}")]
    SeqGap { expected: u32, got: u32 },
    #[error("bad handshake magic")]
    BadHandshake,
    #[error("handshake rejected with code {0}")]
    HandshakeRejected(u8),
    #[error("no usable address for `{0}`")]
    BadAddress(String),
    #[error("connecting to {addr} timed out after {secs:.1}s")]
    ConnectTimeout { addr: String, secs: f64 },
    #[error("no peer connected within {secs:.1}s")]
    AcceptTimeout { secs: f64 },
}

/// One wire frame. End-of-stream frames carry no tokens and an atr of 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub eos: bool,
    pub edge_index: u16,
    pub seq: u32,
    pub atr: u16,
    pub token_size: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn data(edge_index: u16, seq: u32, atr: u16, token_size: u32, payload: Vec<u8>) -> Frame {
        Frame { eos: false, edge_index, seq, atr, token_size, payload }
    }

    pub fn end(edge_index: u16, seq: u32, token_size: u32) -> Frame {
        Frame { eos: true, edge_index, seq, atr: 0, token_size, payload: Vec::new() }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let expected = self.atr as usize * self.token_size as usize;
        if self.payload.len() != expected {
            return Err(WireError::PayloadMismatch { expected, got: self.payload.len() });
        }
        if self.eos && self.atr != 0 {
            return Err(WireError::MalformedEos);
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.push(WIRE_VERSION);
        out.push(if self.eos { FLAG_EOS } else { 0 });
        out.extend_from_slice(&self.edge_index.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.atr.to_be_bytes());
        out.extend_from_slice(&self.token_size.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }
}

struct Header {
    eos: bool,
    edge_index: u16,
    seq: u32,
    atr: u16,
    token_size: u32,
}

fn parse_header(bytes: &[u8; HEADER_LEN]) -> Result<Header, WireError> {
    if bytes[..4] != FRAME_MAGIC {
        return Err(WireError::BadMagic);
    }
    if bytes[4] != WIRE_VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    if bytes[5] & !FLAG_EOS != 0 {
        return Err(WireError::ReservedFlags(bytes[5]));
    }
    let header = Header {
        eos: bytes[5] & FLAG_EOS != 0,
        edge_index: u16::from_be_bytes([bytes[6], bytes[7]]),
        seq: u32::from_be_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]),
        atr: u16::from_be_bytes([bytes[12], bytes[13]]),
        token_size: u32::from_be_bytes([bytes[14], bytes[15], bytes[16], bytes[17]]),
    };
    if header.eos && header.atr != 0 {
        return Err(WireError::MalformedEos);
    }
    Ok(header)
}

/// Decodes one complete frame from a byte block, rejecting trailing bytes.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::PayloadMismatch { expected: HEADER_LEN, got: bytes.len() });
    }
    let header = parse_header(bytes[..HEADER_LEN].try_into().unwrap())?;
    let expected = header.atr as usize * header.token_size as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(WireError::PayloadMismatch { expected, got: payload.len() });
    }
    Ok(Frame {
        eos: header.eos,
        edge_index: header.edge_index,
        seq: header.seq,
        atr: header.atr,
        token_size: header.token_size,
        payload: payload.to_vec(),
    })
}

/// Reads frames for one edge off a stream, enforcing the edge index, the
/// token size and a gapless sequence.
pub struct FrameReader<R> {
    stream: R,
    edge_index: u16,
    token_size: u32,
    next_seq: u32,
}

impl<R: Read> FrameReader<R> {
    pub fn new(stream: R, edge_index: u16, token_size: u32) -> FrameReader<R> {
        FrameReader { stream, edge_index, token_size, next_seq: 0 }
    }

    pub fn next_frame(&mut self) -> Result<Frame, WireError> {
        let mut head = [0u8; HEADER_LEN];
        self.stream.read_exact(&mut head)?;
        let header = parse_header(&head)?;
        if header.edge_index != self.edge_index {
            return Err(WireError::EdgeMismatch {
                expected: self.edge_index,
                got: header.edge_index,
            });
        }
        if header.token_size != self.token_size {
            return Err(WireError::TokenSizeMismatch {
                expected: self.token_size,
                got: header.token_size,
            });
        }
        if header.seq != self.next_seq {
            return Err(WireError::SeqGap { expected: self.next_seq, got: header.seq });
        }
        self.next_seq = self.next_seq.wrapping_add(1);
        let mut payload = vec![0u8; header.atr as usize * header.token_size as usize];
        self.stream.read_exact(&mut payload)?;
        Ok(Frame {
            eos: header.eos,
            edge_index: header.edge_index,
            seq: header.seq,
            atr: header.atr,
            token_size: header.token_size,
            payload,
        })
    }
}

// ---------------------------------------------------------------------------
// Handshake

fn encode_hello(graph_hash: u64, edge_index: u16) -> [u8; HELLO_LEN] {
    let mut out = [0u8; HELLO_LEN];
    out[..4].copy_from_slice(&HANDSHAKE_MAGIC);
    out[4] = WIRE_VERSION;
    out[5..13].copy_from_slice(&graph_hash.to_be_bytes());
    out[13..15].copy_from_slice(&edge_index.to_be_bytes());
    out
}

fn parse_hello(bytes: &[u8; HELLO_LEN]) -> Result<(u64, u16), WireError> {
    if bytes[..4] != HANDSHAKE_MAGIC {
        return Err(WireError::BadHandshake);
    }
    if bytes[4] != WIRE_VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let hash = u64::from_be_bytes(bytes[5..13].try_into().unwrap());
    let edge = u16::from_be_bytes([bytes[13], bytes[14]]);
    Ok((hash, edge))
}

pub const ACK_OK: u8 = 0;
pub const ACK_HASH_MISMATCH: u8 = 1;
pub const ACK_EDGE_MISMATCH: u8 = 2;

// ---------------------------------------------------------------------------
// Sockets

fn resolve(host: &str, port: u16) -> Result<SocketAddr, WireError> {
    (host, port)
        .to_socket_addrs()
        .map_err(WireError::Io)?
        .next()
        .ok_or_else(|| WireError::BadAddress(format!("{host}:{port}")))
}

/// Binds a listener with SO_REUSEADDR set, so back-to-back runs can reuse
/// a port that still has connections in TIME_WAIT.
fn bind_reuseaddr(addr: SocketAddr) -> io::Result<TcpListener> {
    let SocketAddr::V4(v4) = addr else {
        return TcpListener::bind(addr);
    };
    unsafe {
        let fd = libc::socket(libc::AF_INET, libc::SOCK_STREAM, 0);
        if fd < 0 {
            return Err(io::Error::last_os_error());
        }
        let close_with = |fd: i32| -> io::Error {
            let err = io::Error::last_os_error();
            libc::close(fd);
            err
        };
        let one: libc::c_int = 1;
        if libc::setsockopt(
            fd,
            libc::SOL_SOCKET,
            libc::SO_REUSEADDR,
            &one as *const _ as *const libc::c_void,
            std::mem::size_of::<libc::c_int>() as libc::socklen_t,
        ) != 0
        {
            return Err(close_with(fd));
        }
        let sa = libc::sockaddr_in {
            sin_family: libc::AF_INET as libc::sa_family_t,
            sin_port: v4.port().to_be(),
            sin_addr: libc::in_addr { s_addr: u32::from_ne_bytes(v4.ip().octets()) },
            sin_zero: [0; 8],
        };
        if libc::bind(
            fd,
            &sa as *const _ as *const libc::sockaddr,
            std::mem::size_of::<libc::sockaddr_in>() as libc::socklen_t,
        ) != 0
        {
            return Err(close_with(fd));
        }
        if libc::listen(fd, 16) != 0 {
            return Err(close_with(fd));
        }
        Ok(TcpListener::from_raw_fd(fd))
    }
}

/// A bound receive endpoint that has not accepted its peer yet. Binding is
/// separated from accepting so a process can claim all its ports before
/// any remote side starts connecting.
pub struct RxListener {
    listener: TcpListener,
    graph_hash: u64,
    edge_index: u16,
}

impl RxListener {
    pub fn bind(
        host: &str,
        port: u16,
        graph_hash: u64,
        edge_index: u16,
    ) -> Result<RxListener, WireError> {
        let listener = bind_reuseaddr(resolve(host, port)?)?;
        Ok(RxListener { listener, graph_hash, edge_index })
    }

    pub fn local_port(&self) -> u16 {
        self.listener.local_addr().map(|a| a.port()).unwrap_or(0)
    }

    /// Waits for the matching transmit peer. Mismatched peers are answered
    /// with an error code and dropped while the wait continues; the
    /// listener itself is dropped once a valid peer is in, so exactly one
    /// connection is ever served.
    pub fn accept(self, deadline: Instant) -> Result<TcpStream, WireError> {
        let started = Instant::now();
        self.listener.set_nonblocking(true)?;
        loop {
            match self.listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
                    let mut hello = [0u8; HELLO_LEN];
                    if stream.read_exact(&mut hello).is_err() {
                        continue;
                    }
                    let (hash, edge) = match parse_hello(&hello) {
                        Ok(pair) => pair,
                        Err(_) => continue,
                    };
                    let ack = if hash != self.graph_hash {
                        ACK_HASH_MISMATCH
                    } else if edge != self.edge_index {
                        ACK_EDGE_MISMATCH
                    } else {
                        ACK_OK
                    };
                    if stream.write_all(&[ack]).is_err() || ack != ACK_OK {
                        continue;
                    }
                    stream.set_read_timeout(None)?;
                    return Ok(stream);
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(WireError::AcceptTimeout {
                            secs: started.elapsed().as_secs_f64(),
                        });
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(WireError::Io(e)),
            }
        }
    }
}

/// Connects the transmit side, retrying until the peer's listener is up or
/// the deadline passes, then performs the handshake.
pub fn connect_tx(
    host: &str,
    port: u16,
    graph_hash: u64,
    edge_index: u16,
    deadline: Instant,
) -> Result<TcpStream, WireError> {
    let addr = resolve(host, port)?;
    let started = Instant::now();
    let mut stream = loop {
        match TcpStream::connect_timeout(&addr, Duration::from_millis(500)) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(25)),
            Err(_) => {
                return Err(WireError::ConnectTimeout {
                    addr: format!("{host}:{port}"),
                    secs: started.elapsed().as_secs_f64(),
                })
            }
        }
    };
    stream.set_nodelay(true)?;
    stream.write_all(&encode_hello(graph_hash, edge_index))?;
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut ack = [0u8; 1];
    stream.read_exact(&mut ack)?;
    if ack[0] != ACK_OK {
        return Err(WireError::HandshakeRejected(ack[0]));
    }
    stream.set_read_timeout(None)?;
    Ok(stream)
}

// ---------------------------------------------------------------------------
// Shaping

/// Paces transmit-side writes: a virtual clock spaces frames so sustained
/// throughput never exceeds the bandwidth (burst of one frame), and the
/// one-way latency delays each frame's availability without eating into
/// the bandwidth budget.
pub struct TxShaper {
    shape: LinkShape,
    next_free: Option<Instant>,
}

impl TxShaper {
    pub fn new(shape: LinkShape) -> TxShaper {
        TxShaper { shape, next_free: None }
    }

    /// Blocks until a frame of `wire_bytes` may be written.
    pub fn pace(&mut self, wire_bytes: usize) {
        if self.shape.is_unshaped() {
            return;
        }
        let now = Instant::now();
        let mut available = now;
        if self.shape.bandwidth > 0.0 {
            let dur = Duration::from_secs_f64(wire_bytes as f64 / self.shape.bandwidth);
            let done = self.next_free.map_or(now, |t| t.max(now)) + dur;
            self.next_free = Some(done);
            available = done;
        }
        if self.shape.latency_ms > 0.0 {
            available += Duration::from_secs_f64(self.shape.latency_ms / 1000.0);
        }
        let wait = available.saturating_duration_since(now);
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

// ---------------------------------------------------------------------------
// Edge drivers

pub struct TxOutcome {
    /// Nanoseconds from run start at which each frame's last byte was
    /// written, indexed by sequence number.
    pub commits: Vec<u64>,
    pub error: Option<String>,
}

/// Drains the local FIFO onto the wire until end of stream, one frame per
/// firing. A clean end of stream is announced with an end-of-stream frame
/// and the transmit side closes first; an erroring end of stream drops the
/// connection without the frame, so the remote side sees the failure
/// instead of a plausible short run.
pub fn run_tx_edge(
    mut stream: TcpStream,
    fifo: &Arc<Fifo>,
    rate: u32,
    edge_index: u16,
    shape: LinkShape,
    start: Instant,
) -> TxOutcome {
    let token_size = fifo.token_size() as u32;
    let mut shaper = TxShaper::new(shape);
    let mut commits = Vec::new();
    let mut seq = 0u32;
    loop {
        // A rate-zero edge can carry nothing; wait for the marker.
        match fifo.pop(rate.max(1)) {
            Popped::Tokens(payload) => {
                let frame = Frame::data(edge_index, seq, rate as u16, token_size, payload);
                let bytes = frame.encode().expect("fifo tokens fit the frame");
                shaper.pace(bytes.len());
                if let Err(e) = stream.write_all(&bytes) {
                    let msg = format!("edge `{}`: transmit failed: {e}", fifo.edge());
                    fifo.close_consumer(Some(msg.clone()));
                    return TxOutcome { commits, error: Some(msg) };
                }
                commits.push(start.elapsed().as_nanos() as u64);
                seq = seq.wrapping_add(1);
            }
            Popped::Eos { error: Some(reason) } => {
                return TxOutcome { commits, error: Some(reason) };
            }
            Popped::Eos { error: None } => {
                let bytes = Frame::end(edge_index, seq, token_size).encode().unwrap();
                let error = stream
                    .write_all(&bytes)
                    .and_then(|_| stream.shutdown(std::net::Shutdown::Write))
                    .err()
                    .map(|e| format!("edge `{}`: closing transmit failed: {e}", fifo.edge()));
                return TxOutcome { commits, error };
            }
        }
    }
}

pub struct RxOutcome {
    pub error: Option<String>,
}

/// Feeds decoded frames into the local FIFO until the end-of-stream frame
/// or a wire error, which surfaces downstream as an in-band error marker.
pub fn run_rx_edge(stream: TcpStream, fifo: &Arc<Fifo>, edge_index: u16) -> RxOutcome {
    let mut reader = FrameReader::new(stream, edge_index, fifo.token_size() as u32);
    loop {
        match reader.next_frame() {
            Ok(frame) if frame.eos => {
                fifo.push_eos(None);
                return RxOutcome { error: None };
            }
            Ok(frame) => match fifo.push(u32::from(frame.atr), &frame.payload) {
                Ok(Pushed::Delivered) | Ok(Pushed::Discarded) => {}
                Err(e) => {
                    return RxOutcome { error: Some(format!("edge `{}`: {e}", fifo.edge())) };
                }
            },
            Err(e) => {
                let msg = format!("edge `{}`: receive failed: {e}", fifo.edge());
                fifo.push_eos(Some(msg.clone()));
                return RxOutcome { error: Some(msg) };
            }
        }
    }
}
