//! Application-level round-trip delay measurement over a minimal framed
//! datagram protocol: an echo server on one side, a probing client on the
//! other. A timed-out probe is recorded as the `-1` sentinel.
//!
//! RTT uses only the client's monotonic clock; the server's receive stamp is
//! informational and no clock synchronization is attempted.

use std::collections::BTreeMap;
use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::{Clock, SampleSink};
use crate::model::{DelayBody, MetricBody, MetricSample, Side, TraceRecord};

pub const FRAME_MAGIC: [u8; 4] = [0x52, 0x4E, 0x50, 0x42];
pub const FRAME_VERSION: u8 = 0x01;
pub const FRAME_HEADER_LEN: usize = 32;
pub const MAX_PAYLOAD_LEN: usize = 65000;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD_LEN} byte limit")]
    OversizePayload(usize),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0:#04x}")]
    BadVersion(u8),
    #[error("unknown frame kind {0:#04x}")]
    BadKind(u8),
    #[error("truncated frame: {got} bytes, need {need}")]
    TruncatedFrame { got: usize, need: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Ping = 0x01,
    Pong = 0x02,
}

/// One probe datagram. Big-endian fixed header, then the opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeFrame {
    pub kind: FrameKind,
    pub seq: u64,
    pub client_send_ns: u64,
    /// Server receive stamp; zero in PING frames.
    pub server_recv_ns: u64,
    pub payload: Vec<u8>,
}

impl ProbeFrame {
    pub fn ping(seq: u64, client_send_ns: u64, payload: Vec<u8>) -> Self {
        ProbeFrame {
            kind: FrameKind::Ping,
            seq,
            client_send_ns,
            server_recv_ns: 0,
            payload,
        }
    }
}

/// Serializes a frame into its exact wire layout.
pub fn encode_frame(frame: &ProbeFrame) -> Result<Vec<u8>, ProbeError> {
    if frame.payload.len() > MAX_PAYLOAD_LEN {
        return Err(ProbeError::OversizePayload(frame.payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(FRAME_VERSION);
    out.push(frame.kind as u8);
    out.extend_from_slice(&frame.seq.to_be_bytes());
    out.extend_from_slice(&frame.client_send_ns.to_be_bytes());
    out.extend_from_slice(&frame.server_recv_ns.to_be_bytes());
    out.extend_from_slice(&(frame.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(out)
}

/// Parses a frame; the inverse of [`encode_frame`] on its image.
pub fn decode_frame(bytes: &[u8]) -> Result<ProbeFrame, ProbeError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(ProbeError::TruncatedFrame {
            got: bytes.len(),
            need: FRAME_HEADER_LEN,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FRAME_MAGIC {
        return Err(ProbeError::BadMagic(magic));
    }
    if bytes[4] != FRAME_VERSION {
        return Err(ProbeError::BadVersion(bytes[4]));
    }
    let kind = match bytes[5] {
        0x01 => FrameKind::Ping,
        0x02 => FrameKind::Pong,
        other => return Err(ProbeError::BadKind(other)),
    };
    let seq = u64::from_be_bytes(bytes[6..14].try_into().unwrap());
    let client_send_ns = u64::from_be_bytes(bytes[14..22].try_into().unwrap());
    let server_recv_ns = u64::from_be_bytes(bytes[22..30].try_into().unwrap());
    let payload_len = u16::from_be_bytes(bytes[30..32].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(ProbeError::OversizePayload(payload_len));
    }
    let need = FRAME_HEADER_LEN + payload_len;
    if bytes.len() < need {
        return Err(ProbeError::TruncatedFrame {
            got: bytes.len(),
            need,
        });
    }
    Ok(ProbeFrame {
        kind,
        seq,
        client_send_ns,
        server_recv_ns,
        payload: bytes[FRAME_HEADER_LEN..need].to_vec(),
    })
}

/// Probe client configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub server: String,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: f64,
    #[serde(default = "default_payload")]
    pub payload_len: usize,
    #[serde(default = "default_iface")]
    pub iface: String,
}

fn default_rate() -> f64 {
    1.0
}

fn default_timeout() -> f64 {
    2000.0
}

fn default_payload() -> usize {
    64
}

fn default_iface() -> String {
    "probe".into()
}

impl ProbeConfig {
    pub fn new(server: impl Into<String>) -> Self {
        ProbeConfig {
            server: server.into(),
            rate_hz: default_rate(),
            timeout_ms: default_timeout(),
            payload_len: default_payload(),
            iface: default_iface(),
        }
    }

    pub fn validate(&self) -> Result<(), ProbeError> {
        if !(self.rate_hz > 0.0) {
            return Err(ProbeError::InvalidConfig(format!(
                "rate_hz must be > 0, got {}",
                self.rate_hz
            )));
        }
        if !(self.timeout_ms > 0.0) {
            return Err(ProbeError::InvalidConfig(format!(
                "timeout_ms must be > 0, got {}",
                self.timeout_ms
            )));
        }
        if self.payload_len > MAX_PAYLOAD_LEN {
            return Err(ProbeError::InvalidConfig(format!(
                "payload_len {} exceeds {MAX_PAYLOAD_LEN}",
                self.payload_len
            )));
        }
        Ok(())
    }
}

/// Handle to a running echo server thread.
pub struct ServerHandle {
    local_addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    invalid_frames: Arc<AtomicU64>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.local_addr
    }

    /// Count of datagrams dropped for failing to decode as a PING.
    pub fn invalid_frames(&self) -> u64 {
        self.invalid_frames.load(Ordering::SeqCst)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Starts the echo server on `listen`, replying to each valid PING with a
/// PONG echoing seq, client timestamp, and payload. Invalid datagrams are
/// dropped and counted.
pub fn serve(listen: &str) -> Result<ServerHandle, ProbeError> {
    serve_with_delay(listen, Duration::ZERO)
}

/// Echo server with a fixed artificial delay before each reply; the delay
/// injection exists for latency-accuracy tests.
pub fn serve_with_delay(listen: &str, delay: Duration) -> Result<ServerHandle, ProbeError> {
    let socket = UdpSocket::bind(listen)?;
    socket.set_read_timeout(Some(Duration::from_millis(50)))?;
    let local_addr = socket.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let invalid_frames = Arc::new(AtomicU64::new(0));
    let thread_stop = Arc::clone(&stop);
    let thread_invalid = Arc::clone(&invalid_frames);
    let start = Instant::now();
    let thread = std::thread::spawn(move || {
        let mut buf = vec![0u8; FRAME_HEADER_LEN + MAX_PAYLOAD_LEN];
        while !thread_stop.load(Ordering::SeqCst) {
            let (len, peer) = match socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(e) => {
                    log::warn!("probe server recv error: {e}");
                    continue;
                }
            };
            match decode_frame(&buf[..len]) {
                Ok(frame) if frame.kind == FrameKind::Ping => {
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                    let pong = ProbeFrame {
                        kind: FrameKind::Pong,
                        seq: frame.seq,
                        client_send_ns: frame.client_send_ns,
                        server_recv_ns: start.elapsed().as_nanos() as u64,
                        payload: frame.payload,
                    };
                    if let Ok(bytes) = encode_frame(&pong) {
                        let _ = socket.send_to(&bytes, peer);
                    }
                }
                _ => {
                    thread_invalid.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
    });
    Ok(ServerHandle {
        local_addr,
        stop,
        invalid_frames,
        thread: Some(thread),
    })
}

/// Sends PINGs at `rate_hz` and emits one [`DelayBody`] sample per probe:
/// the measured round trip on a matching PONG within the timeout, the `-1`
/// sentinel otherwise. Ticks are pipelined; each PONG is matched to at most
/// one outstanding PING by sequence number and stale replies are discarded.
///
/// Runs until `stop` is raised or `max_samples` samples have been emitted.
pub fn measure_rtt(
    cfg: &ProbeConfig,
    side: Side,
    clock: &dyn Clock,
    sink: &dyn SampleSink,
    stop: &AtomicBool,
    max_samples: Option<u64>,
) -> Result<u64, ProbeError> {
    cfg.validate()?;
    let socket = UdpSocket::bind("0.0.0.0:0")?;
    socket.connect(&cfg.server)?;

    let period_ns = (1e9 / cfg.rate_hz) as u64;
    let timeout_ns = (cfg.timeout_ms * 1e6) as u64;
    let payload: Vec<u8> = (0..cfg.payload_len).map(|i| (i % 251) as u8).collect();

    // seq -> (send instant ns, expiry deadline ns)
    let mut outstanding: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut next_seq: u64 = 0;
    let mut next_tick_ns = clock.now_ns();
    let mut emitted: u64 = 0;
    let mut scheduled: u64 = 0;
    let mut buf = vec![0u8; FRAME_HEADER_LEN + MAX_PAYLOAD_LEN];

    let emit = |ts_ns: u64, body: DelayBody, emitted: &mut u64| {
        sink.accept(TraceRecord::Sample(MetricSample {
            ts_ns,
            side,
            iface: cfg.iface.clone(),
            body: MetricBody::Delay(body),
        }));
        *emitted += 1;
    };

    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        if let Some(max) = max_samples {
            if emitted >= max {
                break;
            }
        }
        let now = clock.now_ns();

        // Expire overdue probes first so a late reply cannot retroactively
        // replace an already-emitted sentinel.
        let expired: Vec<u64> = outstanding
            .iter()
            .filter(|(_, (_, deadline))| *deadline <= now)
            .map(|(&seq, _)| seq)
            .collect();
        for seq in expired {
            outstanding.remove(&seq);
            emit(now, DelayBody::timed_out(), &mut emitted);
        }

        let may_send = max_samples.map_or(true, |max| scheduled < max);
        if may_send && now >= next_tick_ns {
            let frame = ProbeFrame::ping(next_seq, now, payload.clone());
            let bytes = encode_frame(&frame)?;
            match socket.send(&bytes) {
                Ok(_) => {
                    outstanding.insert(next_seq, (now, now + timeout_ns));
                    scheduled += 1;
                }
                Err(e) => {
                    // An unreachable endpoint is a valid state: the tick
                    // still accounts for a probe, reported as lost.
                    log::debug!("probe send failed: {e}");
                    emit(now, DelayBody::timed_out(), &mut emitted);
                    scheduled += 1;
                }
            }
            next_seq += 1;
            next_tick_ns += period_ns;
        }

        // Wait until the next deadline or tick, whichever is first.
        let mut wake = next_tick_ns;
        if let Some((_, (_, deadline))) = outstanding.iter().next() {
            wake = wake.min(*deadline);
        }
        if max_samples.is_some() && !may_send && outstanding.is_empty() {
            break;
        }
        let wait_ns = wake.saturating_sub(clock.now_ns()).clamp(1_000_000, 100_000_000);
        socket.set_read_timeout(Some(Duration::from_nanos(wait_ns)))?;
        match socket.recv(&mut buf) {
            Ok(len) => {
                let recv_ns = clock.now_ns();
                match decode_frame(&buf[..len]) {
                    Ok(frame) if frame.kind == FrameKind::Pong => {
                        if let Some((send_ns, _)) = outstanding.remove(&frame.seq) {
                            let rtt_ms = (recv_ns.saturating_sub(send_ns)) as f64 / 1e6;
                            let body = DelayBody::measured(rtt_ms.max(1e-6), cfg.timeout_ms)
                                .unwrap_or_else(|_| DelayBody::timed_out());
                            emit(recv_ns, body, &mut emitted);
                        }
                        // Unknown seq: stale reply, discarded.
                    }
                    _ => log::debug!("discarding non-PONG datagram"),
                }
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut => {}
            Err(e) => log::debug!("probe recv error: {e}"),
        }
    }
    Ok(emitted)
}
