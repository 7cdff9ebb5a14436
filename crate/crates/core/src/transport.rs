//! Two-party message channel: one logical stream, length-prefixed frames,
//! per-invocation round/byte metering. In-process pair for tests and
//! single-host runs, TCP for two-machine runs.

use crate::error::{Error, Result};
use crate::sharing::Role;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{Receiver, Sender};
use std::time::Duration;

pub const PROTOCOL_VERSION: u32 = 1;

/// Rounds and logical payload bits, excluding framing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ChannelMetrics {
    /// Count of strictly-alternating communication steps (exchanges).
    pub rounds: u64,
    /// Logical payload bits sent by this party (bit traffic counts bits,
    /// ring traffic counts Λ per element).
    pub payload_bits: u64,
    /// Raw bytes written to the wire, including framing.
    pub frame_bytes: u64,
}

impl ChannelMetrics {
    fn delta(&self, earlier: &ChannelMetrics) -> ChannelMetrics {
        ChannelMetrics {
            rounds: self.rounds - earlier.rounds,
            payload_bits: self.payload_bits - earlier.payload_bits,
            frame_bytes: self.frame_bytes - earlier.frame_bytes,
        }
    }
}

/// A two-party channel. Both parties must call `exchange` the same number
/// of times per session; each call is one communication round.
pub trait Channel: Send {
    fn role(&self) -> Role;

    /// Sends `out` to the peer and receives the peer's batch.
    /// `logical_bits` is the logical payload size of `out`.
    fn exchange(&mut self, out: &[u8], logical_bits: u64) -> Result<Vec<u8>>;

    fn metrics(&self) -> ChannelMetrics;

    fn reset_metrics(&mut self);

    /// Enables recording of per-exchange (sent, received) byte sizes.
    fn set_trace(&mut self, on: bool);

    fn take_trace(&mut self) -> Vec<(u64, u64)>;
}

/// Runs `f` and returns its result plus the metrics consumed by the scope.
pub fn scoped_metrics<T>(
    chan: &mut dyn Channel,
    f: impl FnOnce(&mut dyn Channel) -> Result<T>,
) -> Result<(T, ChannelMetrics)> {
    let before = chan.metrics();
    let out = f(chan)?;
    let after = chan.metrics();
    Ok((out, after.delta(&before)))
}

struct Meter {
    metrics: ChannelMetrics,
    trace: Option<Vec<(u64, u64)>>,
}

impl Meter {
    fn new() -> Meter {
        Meter {
            metrics: ChannelMetrics::default(),
            trace: None,
        }
    }

    fn record(&mut self, sent_bytes: usize, recv_bytes: usize, logical_bits: u64) {
        self.metrics.rounds += 1;
        self.metrics.payload_bits += logical_bits;
        self.metrics.frame_bytes += sent_bytes as u64 + 4;
        if let Some(t) = &mut self.trace {
            t.push((sent_bytes as u64, recv_bytes as u64));
        }
    }
}

/// In-process channel endpoint backed by a pair of mpsc queues.
pub struct InProcChannel {
    role: Role,
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    meter: Meter,
    timeout: Duration,
}

/// Creates a connected pair of in-process endpoints (A, B).
pub fn inproc_pair() -> (InProcChannel, InProcChannel) {
    let (ta, rb) = std::sync::mpsc::channel();
    let (tb, ra) = std::sync::mpsc::channel();
    (
        InProcChannel {
            role: Role::A,
            tx: ta,
            rx: ra,
            meter: Meter::new(),
            timeout: Duration::from_secs(600),
        },
        InProcChannel {
            role: Role::B,
            tx: tb,
            rx: rb,
            meter: Meter::new(),
            timeout: Duration::from_secs(600),
        },
    )
}

impl Channel for InProcChannel {
    fn role(&self) -> Role {
        self.role
    }

    fn exchange(&mut self, out: &[u8], logical_bits: u64) -> Result<Vec<u8>> {
        self.tx
            .send(out.to_vec())
            .map_err(|_| Error::Transport(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "peer disconnected")))?;
        let incoming = self
            .rx
            .recv_timeout(self.timeout)
            .map_err(|e| match e {
                std::sync::mpsc::RecvTimeoutError::Timeout => Error::Timeout,
                std::sync::mpsc::RecvTimeoutError::Disconnected => Error::Transport(
                    std::io::Error::new(std::io::ErrorKind::BrokenPipe, "peer disconnected"),
                ),
            })?;
        self.meter.record(out.len(), incoming.len(), logical_bits);
        Ok(incoming)
    }

    fn metrics(&self) -> ChannelMetrics {
        self.meter.metrics.clone()
    }

    fn reset_metrics(&mut self) {
        self.meter.metrics = ChannelMetrics::default();
    }

    fn set_trace(&mut self, on: bool) {
        self.meter.trace = if on { Some(Vec::new()) } else { None };
    }

    fn take_trace(&mut self) -> Vec<(u64, u64)> {
        self.meter.trace.take().unwrap_or_default()
    }
}

/// Fields both parties must agree on before any data flows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handshake {
    pub version: u32,
    pub lambda: u32,
    pub frac_bits: u32,
    pub int_bits: u32,
    /// Fingerprint of the session plan (config + data shape).
    pub plan_fingerprint: u64,
}

impl Handshake {
    fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.lambda.to_le_bytes());
        out.extend_from_slice(&self.frac_bits.to_le_bytes());
        out.extend_from_slice(&self.int_bits.to_le_bytes());
        out.extend_from_slice(&self.plan_fingerprint.to_le_bytes());
        out
    }

    fn from_bytes(b: &[u8]) -> Result<Handshake> {
        if b.len() != 24 {
            return Err(Error::data("bad handshake frame"));
        }
        Ok(Handshake {
            version: u32::from_le_bytes(b[0..4].try_into().unwrap()),
            lambda: u32::from_le_bytes(b[4..8].try_into().unwrap()),
            frac_bits: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            int_bits: u32::from_le_bytes(b[12..16].try_into().unwrap()),
            plan_fingerprint: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        })
    }

    fn describe(&self) -> String {
        format!(
            "v{} λ={} a={} b={} plan={:016x}",
            self.version, self.lambda, self.frac_bits, self.int_bits, self.plan_fingerprint
        )
    }
}

/// TCP endpoint. Party A writes first in each round; B reads first.
pub struct TcpChannel {
    role: Role,
    stream: TcpStream,
    meter: Meter,
}

fn write_frame(stream: &mut TcpStream, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| Error::data("frame exceeds u32 length"))?;
    stream.write_all(&len.to_le_bytes())?;
    stream.write_all(payload)?;
    Ok(())
}

fn read_frame(stream: &mut TcpStream) -> Result<Vec<u8>> {
    let mut len = [0u8; 4];
    stream.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut buf = vec![0u8; len];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

impl TcpChannel {
    /// Listens on `addr`, accepts one peer, and verifies the handshake.
    pub fn listen(addr: impl ToSocketAddrs, role: Role, hs: &Handshake) -> Result<TcpChannel> {
        let listener = TcpListener::bind(addr)?;
        let (stream, _) = listener.accept()?;
        Self::establish(stream, role, hs)
    }

    /// Connects to a listening peer and verifies the handshake.
    pub fn connect(addr: impl ToSocketAddrs, role: Role, hs: &Handshake) -> Result<TcpChannel> {
        let mut last_err = None;
        for _ in 0..50 {
            match TcpStream::connect(&addr) {
                Ok(s) => return Self::establish(s, role, hs),
                Err(e) => {
                    retry_backoff();
                    last_err = Some(e);
                }
            }
        }
        Err(Error::Transport(last_err.unwrap()))
    }

    /// Wraps an accepted stream and runs the handshake.
    pub fn establish_from_stream(stream: TcpStream, role: Role, hs: &Handshake) -> Result<TcpChannel> {
        Self::establish(stream, role, hs)
    }

    fn establish(mut stream: TcpStream, role: Role, hs: &Handshake) -> Result<TcpChannel> {
        stream.set_nodelay(true)?;
        if role.is_a() {
            write_frame(&mut stream, &hs.to_bytes())?;
            let theirs = Handshake::from_bytes(&read_frame(&mut stream)?)?;
            check_handshake(hs, &theirs)?;
        } else {
            let theirs = Handshake::from_bytes(&read_frame(&mut stream)?)?;
            write_frame(&mut stream, &hs.to_bytes())?;
            check_handshake(hs, &theirs)?;
        }
        Ok(TcpChannel {
            role,
            stream,
            meter: Meter::new(),
        })
    }
}

fn retry_backoff() {
    std::thread::sleep(Duration::from_millis(100));
}

/// Binds `addr` and accepts `count` channels; each incoming stream is
/// handshaked and then announces its worker index, which orders the
/// returned vector.
pub fn tcp_serve_channels(
    addr: impl ToSocketAddrs,
    role: Role,
    hs: &Handshake,
    count: usize,
) -> Result<Vec<TcpChannel>> {
    let listener = TcpListener::bind(addr)?;
    let mut slots: Vec<Option<TcpChannel>> = (0..count).map(|_| None).collect();
    for _ in 0..count {
        let (stream, _) = listener.accept()?;
        let mut ch = TcpChannel::establish(stream, role, hs)?;
        let idx_frame = read_frame(&mut ch.stream)?;
        if idx_frame.len() != 4 {
            return Err(Error::data("bad worker index frame"));
        }
        let idx = u32::from_le_bytes(idx_frame.try_into().unwrap()) as usize;
        if idx >= count || slots[idx].is_some() {
            return Err(Error::data(format!("unexpected worker index {idx}")));
        }
        slots[idx] = Some(ch);
    }
    Ok(slots.into_iter().map(|s| s.unwrap()).collect())
}

/// Connects `count` channels to a listening peer, announcing indices
/// 0..count in order.
pub fn tcp_connect_channels(
    addr: impl ToSocketAddrs + Clone,
    role: Role,
    hs: &Handshake,
    count: usize,
) -> Result<Vec<TcpChannel>> {
    let mut out = Vec::with_capacity(count);
    for idx in 0..count as u32 {
        let mut ch = TcpChannel::connect(addr.clone(), role, hs)?;
        write_frame(&mut ch.stream, &idx.to_le_bytes())?;
        out.push(ch);
    }
    Ok(out)
}

fn check_handshake(local: &Handshake, peer: &Handshake) -> Result<()> {
    if local == peer {
        Ok(())
    } else {
        Err(Error::Handshake {
            local: local.describe(),
            peer: peer.describe(),
        })
    }
}

impl Channel for TcpChannel {
    fn role(&self) -> Role {
        self.role
    }

    fn exchange(&mut self, out: &[u8], logical_bits: u64) -> Result<Vec<u8>> {
        let incoming = if self.role.is_a() {
            write_frame(&mut self.stream, out)?;
            read_frame(&mut self.stream)?
        } else {
            let incoming = read_frame(&mut self.stream)?;
            write_frame(&mut self.stream, out)?;
            incoming
        };
        self.meter.record(out.len(), incoming.len(), logical_bits);
        Ok(incoming)
    }

    fn metrics(&self) -> ChannelMetrics {
        self.meter.metrics.clone()
    }

    fn reset_metrics(&mut self) {
        self.meter.metrics = ChannelMetrics::default();
    }

    fn set_trace(&mut self, on: bool) {
        self.meter.trace = if on { Some(Vec::new()) } else { None };
    }

    fn take_trace(&mut self) -> Vec<(u64, u64)> {
        self.meter.trace.take().unwrap_or_default()
    }
}
