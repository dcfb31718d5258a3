//! Live link metric collection from operating-system statistics files:
//! wireless driver stats for RSSI, per-interface byte counters for
//! throughput, and protocol counters for retransmits.
//!
//! All sources are read relative to a configurable root so tests and CI can
//! substitute fixture directories for the live `/proc/net` tree. Within that
//! root the collector expects `wireless`, `dev`, and `netstat` text files.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ErrorBody, MetricBody, MetricSample, RssiBody, Side, ThroughputBody, TraceRecord};

pub const WIRELESS_FILE: &str = "wireless";
pub const DEV_FILE: &str = "dev";
pub const NETSTAT_FILE: &str = "netstat";

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("malformed line {line_no}: {message}")]
    MalformedLine { line_no: usize, message: String },
    #[error("\"segments retransmitted\" counter not found")]
    CounterNotFound,
    #[error("counter went backwards for {iface}: {field} {prev} -> {curr}")]
    CounterWentBackwards {
        iface: String,
        field: &'static str,
        prev: u64,
        curr: u64,
    },
    #[error("zero or negative sampling interval")]
    ZeroInterval,
    #[error("interface mismatch: {prev} vs {curr}")]
    IfaceMismatch { prev: String, curr: String },
    #[error("stats source unreadable: {path}: {source}")]
    SourceUnreadable {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid collector config: {0}")]
    InvalidConfig(String),
}

/// One interface row of the kernel wireless stats file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirelessStatLine {
    pub iface: String,
    pub link_quality: f64,
    pub level_dbm: f64,
    pub noise_dbm: f64,
    pub discards: Vec<u64>,
}

/// One interface row of the kernel device stats file plus a capture
/// timestamp (session-monotonic ns, filled in by the collector).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceCounters {
    pub iface: String,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub rx_packets: u64,
    pub tx_packets: u64,
    pub rx_dropped: u64,
    pub tx_errors: u64,
    #[serde(default)]
    pub captured_at_ns: u64,
}

/// Machine-global protocol counters (the retransmit line of the protocol
/// statistics output).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolCounters {
    pub segments_retransmitted: u64,
    #[serde(default)]
    pub captured_at_ns: u64,
}

/// Collector configuration: interface, per-metric rates, and the stats root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorConfig {
    pub iface: String,
    #[serde(default = "default_rssi_rate")]
    pub rssi_rate_hz: f64,
    #[serde(default = "default_generic_rate")]
    pub generic_rate_hz: f64,
    #[serde(default = "default_stats_root")]
    pub stats_source_root: PathBuf,
}

fn default_rssi_rate() -> f64 {
    10.0
}

fn default_generic_rate() -> f64 {
    1.0
}

fn default_stats_root() -> PathBuf {
    PathBuf::from("/proc/net")
}

impl CollectorConfig {
    pub fn new(iface: impl Into<String>) -> Self {
        CollectorConfig {
            iface: iface.into(),
            rssi_rate_hz: default_rssi_rate(),
            generic_rate_hz: default_generic_rate(),
            stats_source_root: default_stats_root(),
        }
    }

    pub fn validate(&self) -> Result<(), CollectError> {
        if self.iface.is_empty() {
            return Err(CollectError::InvalidConfig("iface must be nonempty".into()));
        }
        if !(self.rssi_rate_hz > 0.0) || !(self.generic_rate_hz > 0.0) {
            return Err(CollectError::InvalidConfig("rates must be > 0".into()));
        }
        Ok(())
    }
}

fn strip_dot(token: &str) -> &str {
    token.strip_suffix('.').unwrap_or(token)
}

/// Parses the kernel wireless stats text (two header lines, then one row per
/// wireless interface). A file with no interface rows is an empty list, not
/// an error.
pub fn parse_wireless_stats(text: &str) -> Result<Vec<WirelessStatLine>, CollectError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(2) {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (iface, rest) = line.split_once(':').ok_or(CollectError::MalformedLine {
            line_no,
            message: "missing ':' after interface name".into(),
        })?;
        let iface = iface.trim();
        if iface.is_empty() {
            return Err(CollectError::MalformedLine {
                line_no,
                message: "empty interface name".into(),
            });
        }
        let fields: Vec<&str> = rest.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(CollectError::MalformedLine {
                line_no,
                message: format!("expected status + quality fields, got {} columns", fields.len()),
            });
        }
        // fields[0] is the hex status word; link/level/noise may carry a
        // trailing '.' in the kernel output.
        let parse_real = |token: &str, what: &str| -> Result<f64, CollectError> {
            strip_dot(token).parse::<f64>().map_err(|e| CollectError::MalformedLine {
                line_no,
                message: format!("bad {what} value {token:?}: {e}"),
            })
        };
        let link_quality = parse_real(fields[1], "link quality")?;
        let level_dbm = parse_real(fields[2], "level")?;
        let noise_dbm = parse_real(fields[3], "noise")?;
        if !level_dbm.is_finite() {
            return Err(CollectError::MalformedLine {
                line_no,
                message: format!("non-finite level {level_dbm}"),
            });
        }
        let mut discards = Vec::new();
        for token in &fields[4..] {
            discards.push(token.parse::<u64>().map_err(|e| CollectError::MalformedLine {
                line_no,
                message: format!("bad discard counter {token:?}: {e}"),
            })?);
        }
        out.push(WirelessStatLine {
            iface: iface.to_string(),
            link_quality,
            level_dbm,
            noise_dbm,
            discards,
        });
    }
    Ok(out)
}

/// Parses the kernel device stats text: two header lines, then 16
/// whitespace-separated counters per interface (8 receive, 8 transmit).
pub fn parse_device_stats(text: &str) -> Result<Vec<DeviceCounters>, CollectError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(2) {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (iface, rest) = line.split_once(':').ok_or(CollectError::MalformedLine {
            line_no,
            message: "missing ':' after interface name".into(),
        })?;
        let iface = iface.trim();
        let fields: Vec<u64> = rest
            .split_whitespace()
            .map(|t| {
                t.parse::<u64>().map_err(|e| CollectError::MalformedLine {
                    line_no,
                    message: format!("bad counter {t:?}: {e}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if fields.len() != 16 {
            return Err(CollectError::MalformedLine {
                line_no,
                message: format!("expected 16 counters, got {}", fields.len()),
            });
        }
        out.push(DeviceCounters {
            iface: iface.to_string(),
            rx_bytes: fields[0],
            rx_packets: fields[1],
            rx_dropped: fields[3],
            tx_bytes: fields[8],
            tx_packets: fields[9],
            tx_errors: fields[10],
            captured_at_ns: 0,
        });
    }
    Ok(out)
}

/// Extracts the `N segments retransmitted` counter from protocol statistics
/// tool output.
pub fn parse_protocol_stats(text: &str) -> Result<ProtocolCounters, CollectError> {
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_suffix("segments retransmitted") {
            let value = rest.trim();
            if let Ok(n) = value.parse::<u64>() {
                return Ok(ProtocolCounters {
                    segments_retransmitted: n,
                    captured_at_ns: 0,
                });
            }
        }
    }
    Err(CollectError::CounterNotFound)
}

/// Throughput over the interval between two counter captures, in decimal
/// megabits per second.
pub fn throughput_from_counters(
    prev: &DeviceCounters,
    curr: &DeviceCounters,
) -> Result<ThroughputBody, CollectError> {
    if prev.iface != curr.iface {
        return Err(CollectError::IfaceMismatch {
            prev: prev.iface.clone(),
            curr: curr.iface.clone(),
        });
    }
    if curr.captured_at_ns <= prev.captured_at_ns {
        return Err(CollectError::ZeroInterval);
    }
    for (field, p, c) in [
        ("rx_bytes", prev.rx_bytes, curr.rx_bytes),
        ("tx_bytes", prev.tx_bytes, curr.tx_bytes),
        ("rx_packets", prev.rx_packets, curr.rx_packets),
        ("tx_packets", prev.tx_packets, curr.tx_packets),
    ] {
        if c < p {
            return Err(CollectError::CounterWentBackwards {
                iface: curr.iface.clone(),
                field,
                prev: p,
                curr: c,
            });
        }
    }
    let dt_s = (curr.captured_at_ns - prev.captured_at_ns) as f64 / 1e9;
    let tx_mbps = 8.0 * (curr.tx_bytes - prev.tx_bytes) as f64 / dt_s / 1e6;
    let rx_mbps = 8.0 * (curr.rx_bytes - prev.rx_bytes) as f64 / dt_s / 1e6;
    Ok(ThroughputBody::new(
        tx_mbps,
        rx_mbps,
        curr.tx_packets - prev.tx_packets,
        curr.rx_packets - prev.rx_packets,
    ))
}

/// Session-monotonic clock, nanoseconds since session start. The synthetic
/// implementation lets tests run collector schedules in virtual time.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
    fn sleep_until_ns(&self, target_ns: u64);
}

/// Wall-time clock anchored at construction.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    fn sleep_until_ns(&self, target_ns: u64) {
        let now = self.now_ns();
        if target_ns > now {
            std::thread::sleep(std::time::Duration::from_nanos(target_ns - now));
        }
    }
}

/// Virtual clock: sleeping jumps straight to the target instant. When the
/// configured end of time is reached, the paired stop flag is raised.
pub struct SyntheticClock {
    now_ns: Mutex<u64>,
    end_ns: u64,
    stop: Arc<AtomicBool>,
}

impl SyntheticClock {
    pub fn new(end_ns: u64, stop: Arc<AtomicBool>) -> Self {
        SyntheticClock {
            now_ns: Mutex::new(0),
            end_ns,
            stop,
        }
    }
}

impl Clock for SyntheticClock {
    fn now_ns(&self) -> u64 {
        *self.now_ns.lock().unwrap()
    }

    fn sleep_until_ns(&self, target_ns: u64) {
        let mut now = self.now_ns.lock().unwrap();
        if target_ns > *now {
            *now = target_ns;
        }
        if *now >= self.end_ns {
            self.stop.store(true, Ordering::SeqCst);
        }
    }
}

/// Consumer of emitted records; must accept concurrent producers.
pub trait SampleSink: Send + Sync {
    fn accept(&self, record: TraceRecord);
}

impl SampleSink for std::sync::mpsc::SyncSender<TraceRecord> {
    fn accept(&self, record: TraceRecord) {
        let _ = self.send(record);
    }
}

impl SampleSink for Mutex<Vec<TraceRecord>> {
    fn accept(&self, record: TraceRecord) {
        self.lock().unwrap().push(record);
    }
}

fn read_source(root: &Path, name: &str) -> std::io::Result<String> {
    std::fs::read_to_string(root.join(name))
}

/// Runs RSSI, throughput, and error collection loops against one interface
/// until `stop` is raised, pushing samples into `sink`.
///
/// RSSI samples are emitted at `rssi_rate_hz`, counter-derived samples at
/// `generic_rate_hz`; the first throughput sample appears only after two
/// counter captures. A missing wireless entry suppresses the RSSI sample
/// rather than emitting 0 dBm. Counter resets start a new epoch and
/// re-baseline instead of synthesizing a rate across the reset.
pub fn run_collector(
    cfg: &CollectorConfig,
    side: Side,
    clock: &dyn Clock,
    sink: &dyn SampleSink,
    stop: &AtomicBool,
) -> Result<(), CollectError> {
    cfg.validate()?;
    let root = cfg.stats_source_root.as_path();
    // The device stats file is the one mandatory source.
    read_source(root, DEV_FILE).map_err(|e| CollectError::SourceUnreadable {
        path: root.join(DEV_FILE),
        source: e,
    })?;

    let rssi_period_ns = (1e9 / cfg.rssi_rate_hz) as u64;
    let generic_period_ns = (1e9 / cfg.generic_rate_hz) as u64;
    let mut next_rssi_ns = clock.now_ns() + rssi_period_ns;
    let mut next_generic_ns = clock.now_ns() + generic_period_ns;

    let mut prev_counters: Option<DeviceCounters> = None;
    let mut prev_retransmits: Option<u64> = None;
    let mut epoch: u32 = 0;

    while !stop.load(Ordering::SeqCst) {
        let target = next_rssi_ns.min(next_generic_ns);
        clock.sleep_until_ns(target);
        // A stop raised during the sleep still lets the tick just slept to
        // complete, so a run of N seconds includes its boundary samples.
        let now = clock.now_ns();

        if now >= next_rssi_ns {
            next_rssi_ns += rssi_period_ns;
            match read_source(root, WIRELESS_FILE) {
                Ok(text) => match parse_wireless_stats(&text) {
                    Ok(lines) => {
                        if let Some(line) = lines.iter().find(|l| l.iface == cfg.iface) {
                            sink.accept(TraceRecord::Sample(MetricSample {
                                ts_ns: now,
                                side,
                                iface: cfg.iface.clone(),
                                body: MetricBody::Rssi(RssiBody {
                                    rssi_dbm: line.level_dbm,
                                    link_quality: Some(line.link_quality),
                                    noise_dbm: Some(line.noise_dbm),
                                }),
                            }));
                        }
                    }
                    Err(e) => log::warn!("wireless stats parse failed: {e}"),
                },
                Err(e) => log::debug!("wireless stats unavailable: {e}"),
            }
        }

        if now >= next_generic_ns {
            next_generic_ns += generic_period_ns;
            match read_source(root, DEV_FILE) {
                Ok(text) => match parse_device_stats(&text) {
                    Ok(all) => {
                        if let Some(mut curr) = all.into_iter().find(|c| c.iface == cfg.iface) {
                            curr.captured_at_ns = now;
                            if let Some(prev) = prev_counters.take() {
                                match throughput_from_counters(&prev, &curr) {
                                    Ok(body) => sink.accept(TraceRecord::Sample(MetricSample {
                                        ts_ns: now,
                                        side,
                                        iface: cfg.iface.clone(),
                                        body: MetricBody::Throughput(body),
                                    })),
                                    Err(CollectError::CounterWentBackwards { .. }) => {
                                        epoch += 1;
                                        log::warn!("counter reset on {}, new epoch {epoch}", cfg.iface);
                                    }
                                    Err(e) => log::warn!("throughput computation failed: {e}"),
                                }
                            }
                            prev_counters = Some(curr);
                        }
                    }
                    Err(e) => log::warn!("device stats parse failed: {e}"),
                },
                Err(e) => log::warn!("device stats read failed: {e}"),
            }

            if let Ok(text) = read_source(root, NETSTAT_FILE) {
                match parse_protocol_stats(&text) {
                    Ok(counters) => {
                        if let Some(prev) = prev_retransmits {
                            if counters.segments_retransmitted < prev {
                                epoch += 1;
                                log::warn!("retransmit counter reset, new epoch {epoch}");
                            }
                        }
                        prev_retransmits = Some(counters.segments_retransmitted);
                        let (rx_dropped, tx_errors) = prev_counters
                            .as_ref()
                            .map(|c| (c.rx_dropped, c.tx_errors))
                            .unwrap_or((0, 0));
                        sink.accept(TraceRecord::Sample(MetricSample {
                            ts_ns: now,
                            side,
                            iface: cfg.iface.clone(),
                            body: MetricBody::Errors(ErrorBody {
                                retransmits_cum: counters.segments_retransmitted,
                                rx_dropped_cum: rx_dropped,
                                tx_errors_cum: tx_errors,
                                epoch,
                            }),
                        }));
                    }
                    Err(e) => log::debug!("protocol stats parse failed: {e}"),
                }
            }
        }
    }
    Ok(())
}
