//! Shared observation and configuration data model plus the newline-delimited
//! trace representation. Every other module produces or consumes these types.
//!
//! Wire format: UTF-8, one JSON object per line. Line 1 of a trace is the
//! header; every later line is a record carrying a `"type"` tag
//! (`rssi`, `throughput`, `delay`, `errors`, or `motion`). Field order is not
//! significant and unknown fields are ignored on read. Unknown `"type"` tags
//! decode to [`DecodeError::UnknownType`] so a future metric never poisons a
//! whole file.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which end of the link produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Robot,
    Station,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Robot => f.write_str("robot"),
            Side::Station => f.write_str("station"),
        }
    }
}

/// Received signal strength as reported by the wireless driver.
///
/// Optional fields are absent (not zero) when the driver reports no value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RssiBody {
    pub rssi_dbm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link_quality: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_dbm: Option<f64>,
}

/// Interface throughput over one sampling interval, decimal megabits (10^6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThroughputBody")]
pub struct ThroughputBody {
    pub tx_mbps: f64,
    pub rx_mbps: f64,
    pub total_mbps: f64,
    pub tx_packets_delta: u64,
    pub rx_packets_delta: u64,
}

impl ThroughputBody {
    /// Builds a body with `total_mbps` derived from the parts.
    pub fn new(tx_mbps: f64, rx_mbps: f64, tx_packets_delta: u64, rx_packets_delta: u64) -> Self {
        ThroughputBody {
            tx_mbps,
            rx_mbps,
            total_mbps: tx_mbps + rx_mbps,
            tx_packets_delta,
            rx_packets_delta,
        }
    }
}

#[derive(Deserialize)]
struct RawThroughputBody {
    tx_mbps: f64,
    rx_mbps: f64,
    total_mbps: f64,
    tx_packets_delta: u64,
    rx_packets_delta: u64,
}

impl TryFrom<RawThroughputBody> for ThroughputBody {
    type Error = String;

    fn try_from(raw: RawThroughputBody) -> Result<Self, String> {
        if raw.tx_mbps < 0.0 || raw.rx_mbps < 0.0 {
            return Err("negative throughput".into());
        }
        if (raw.total_mbps - (raw.tx_mbps + raw.rx_mbps)).abs() > 1e-9 {
            return Err(format!(
                "total_mbps {} != tx + rx {}",
                raw.total_mbps,
                raw.tx_mbps + raw.rx_mbps
            ));
        }
        Ok(ThroughputBody {
            tx_mbps: raw.tx_mbps,
            rx_mbps: raw.rx_mbps,
            total_mbps: raw.total_mbps,
            tx_packets_delta: raw.tx_packets_delta,
            rx_packets_delta: raw.rx_packets_delta,
        })
    }
}

/// One round-trip delay observation. `rtt_ms` is `-1` exactly when the probe
/// timed out; the pairing is enforced at construction and on decode, so no
/// value of this type can violate it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDelayBody")]
pub struct DelayBody {
    rtt_ms: f64,
    timed_out: bool,
}

/// Sentinel RTT value written for a timed-out probe.
pub const DELAY_SENTINEL_MS: f64 = -1.0;

impl DelayBody {
    /// A successfully measured round trip. `rtt_ms` must lie in
    /// `(0, timeout_ms]`.
    pub fn measured(rtt_ms: f64, timeout_ms: f64) -> Result<Self, ModelError> {
        if !(rtt_ms > 0.0 && rtt_ms <= timeout_ms) {
            return Err(ModelError::RttOutOfRange { rtt_ms, timeout_ms });
        }
        Ok(DelayBody {
            rtt_ms,
            timed_out: false,
        })
    }

    /// A timed-out probe; carries the `-1` sentinel.
    pub fn timed_out() -> Self {
        DelayBody {
            rtt_ms: DELAY_SENTINEL_MS,
            timed_out: true,
        }
    }

    pub fn rtt_ms(&self) -> f64 {
        self.rtt_ms
    }

    pub fn is_timed_out(&self) -> bool {
        self.timed_out
    }
}

#[derive(Deserialize)]
struct RawDelayBody {
    rtt_ms: f64,
    timed_out: bool,
}

impl TryFrom<RawDelayBody> for DelayBody {
    type Error = String;

    fn try_from(raw: RawDelayBody) -> Result<Self, String> {
        let sentinel = raw.rtt_ms == DELAY_SENTINEL_MS;
        if raw.timed_out != sentinel {
            return Err(format!(
                "timed_out={} inconsistent with rtt_ms={}",
                raw.timed_out, raw.rtt_ms
            ));
        }
        if !raw.timed_out && raw.rtt_ms <= 0.0 {
            return Err(format!("non-positive rtt_ms {}", raw.rtt_ms));
        }
        Ok(DelayBody {
            rtt_ms: raw.rtt_ms,
            timed_out: raw.timed_out,
        })
    }
}

/// Machine-global protocol error counters, cumulative since the counter epoch.
///
/// `epoch` increments when a counter reset (value going backwards) is
/// detected; analysis chains deltas per epoch instead of silently correcting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub retransmits_cum: u64,
    pub rx_dropped_cum: u64,
    pub tx_errors_cum: u64,
    #[serde(default)]
    pub epoch: u32,
}

/// The metric payload of one sample; the `type` tag on the wire selects the
/// variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum MetricBody {
    Rssi(RssiBody),
    Throughput(ThroughputBody),
    Delay(DelayBody),
    Errors(ErrorBody),
}

impl MetricBody {
    /// Stable lowercase tag, identical to the wire `type` field.
    pub fn kind(&self) -> &'static str {
        match self {
            MetricBody::Rssi(_) => "rssi",
            MetricBody::Throughput(_) => "throughput",
            MetricBody::Delay(_) => "delay",
            MetricBody::Errors(_) => "errors",
        }
    }
}

/// One timestamped observation from one side of the link.
///
/// `ts_ns` is a monotonic timestamp, nanoseconds since session start; the
/// wall-clock anchor lives only in the trace header so RTT and rate math are
/// immune to wall-clock jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub ts_ns: u64,
    pub side: Side,
    pub iface: String,
    #[serde(flatten)]
    pub body: MetricBody,
}

/// Commanded-speed annotation written by the simulator (or derived from a
/// sidecar file for measured traces); drives the static-vs-moving split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "motion")]
pub struct MotionRecord {
    pub ts_ns: u64,
    pub speed_mps: f64,
}

/// Any line after the header: a metric sample or a motion annotation.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceRecord {
    Sample(MetricSample),
    Motion(MotionRecord),
}

impl TraceRecord {
    pub fn ts_ns(&self) -> u64 {
        match self {
            TraceRecord::Sample(s) => s.ts_ns,
            TraceRecord::Motion(m) => m.ts_ns,
        }
    }
}

/// Physical topology of the link under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Router,
    Direct,
}

/// Which node hosts the access point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApSide {
    Router,
    Robot,
    Station,
}

/// Wi-Fi frequency band of the channel under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "band_2g4")]
    Band2g4,
    #[serde(rename = "band_5g8")]
    Band5g8,
}

/// Case identity: one of the ten catalogued configurations or a custom one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseId {
    Numbered(u8),
    Custom(String),
}

impl std::fmt::Display for CaseId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CaseId::Numbered(n) => write!(f, "{n}"),
            CaseId::Custom(s) => f.write_str(s),
        }
    }
}

/// One experiment configuration: band, AP placement, and the interface pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawExperimentCase")]
pub struct ExperimentCase {
    pub case_id: CaseId,
    pub topology: Topology,
    pub ap_side: ApSide,
    pub band: Band,
    pub robot_iface: String,
    pub station_iface: String,
}

#[derive(Deserialize)]
struct RawExperimentCase {
    case_id: CaseId,
    topology: Topology,
    ap_side: ApSide,
    band: Band,
    robot_iface: String,
    station_iface: String,
}

impl TryFrom<RawExperimentCase> for ExperimentCase {
    type Error = String;

    fn try_from(raw: RawExperimentCase) -> Result<Self, String> {
        let case = ExperimentCase {
            case_id: raw.case_id,
            topology: raw.topology,
            ap_side: raw.ap_side,
            band: raw.band,
            robot_iface: raw.robot_iface,
            station_iface: raw.station_iface,
        };
        case.validate().map_err(|e| e.to_string())?;
        Ok(case)
    }
}

impl ExperimentCase {
    /// Canonical catalogued configuration for case ids 1 through 10.
    ///
    /// Odd cases run on the 2.4 GHz channel, the matching even case on
    /// 5.8 GHz. Cases 1 and 2 go through a router; the rest are direct links
    /// with the AP on the robot or the station, internal adapters (iface1/3)
    /// for cases 3-6 and external ones (iface2/4) for 7-10.
    pub fn catalogued(case_id: u8) -> Result<Self, ModelError> {
        if !(1..=10).contains(&case_id) {
            return Err(ModelError::UnknownCase(case_id));
        }
        let band = if case_id % 2 == 1 {
            Band::Band2g4
        } else {
            Band::Band5g8
        };
        // Pair index: (1,2)->0, (3,4)->1, (5,6)->2, (7,8)->3, (9,10)->4.
        let pair = (case_id - 1) / 2;
        let (topology, ap_side, robot_iface, station_iface) = match pair {
            0 => (Topology::Router, ApSide::Router, "iface1", "iface3"),
            1 => (Topology::Direct, ApSide::Robot, "iface1", "iface3"),
            2 => (Topology::Direct, ApSide::Station, "iface1", "iface3"),
            3 => (Topology::Direct, ApSide::Robot, "iface2", "iface4"),
            _ => (Topology::Direct, ApSide::Station, "iface2", "iface4"),
        };
        Ok(ExperimentCase {
            case_id: CaseId::Numbered(case_id),
            topology,
            ap_side,
            band,
            robot_iface: robot_iface.into(),
            station_iface: station_iface.into(),
        })
    }

    /// Checks topology/AP consistency and, for numbered cases, exact
    /// agreement with the catalogue row.
    pub fn validate(&self) -> Result<(), ModelError> {
        let router_consistent = (self.topology == Topology::Router)
            == (self.ap_side == ApSide::Router);
        if !router_consistent {
            return Err(ModelError::TopologyApMismatch);
        }
        if let CaseId::Numbered(n) = self.case_id {
            let canonical = ExperimentCase::catalogued(n)?;
            if *self != canonical {
                return Err(ModelError::CatalogueMismatch(n));
            }
        }
        Ok(())
    }

    /// True for the router-mediated baseline configurations (cases 1 and 2).
    pub fn is_baseline(&self) -> bool {
        self.topology == Topology::Router
    }
}

/// Whether a trace holds live measurements or simulator output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceOrigin {
    Measured,
    Simulated,
}

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub v: u32,
    pub case: ExperimentCase,
    pub start_utc: DateTime<Utc>,
    pub origin: TraceOrigin,
    pub seed: Option<u64>,
}

impl TraceHeader {
    pub fn new(
        case: ExperimentCase,
        start_utc: DateTime<Utc>,
        origin: TraceOrigin,
        seed: Option<u64>,
    ) -> Result<Self, ModelError> {
        if origin == TraceOrigin::Simulated && seed.is_none() {
            return Err(ModelError::SimulatedTraceWithoutSeed);
        }
        Ok(TraceHeader {
            v: 1,
            case,
            start_utc,
            origin,
            seed,
        })
    }
}

/// A fully loaded trace: header plus records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("rtt {rtt_ms} ms outside (0, {timeout_ms}] ms")]
    RttOutOfRange { rtt_ms: f64, timeout_ms: f64 },
    #[error("unknown case id {0}, expected 1-10")]
    UnknownCase(u8),
    #[error("topology and ap_side disagree (router topology iff router AP)")]
    TopologyApMismatch,
    #[error("case {0} fields do not match the catalogued configuration")]
    CatalogueMismatch(u8),
    #[error("simulated trace requires a seed")]
    SimulatedTraceWithoutSeed,
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("malformed record at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("unknown record type {record_type:?} in line {raw:?}")]
    UnknownType { record_type: String, raw: String },
}

const KNOWN_TYPES: &[&str] = &["rssi", "throughput", "delay", "errors", "motion"];

/// Serializes one sample as a single newline-free line.
pub fn encode_record(sample: &MetricSample) -> String {
    serde_json::to_string(sample).expect("metric samples always serialize")
}

/// Serializes any trace record (sample or motion annotation) as one line.
pub fn encode_trace_record(record: &TraceRecord) -> String {
    match record {
        TraceRecord::Sample(s) => encode_record(s),
        TraceRecord::Motion(m) => serde_json::to_string(m).expect("motion records always serialize"),
    }
}

fn parse_value(line: &str) -> Result<serde_json::Value, DecodeError> {
    serde_json::from_str(line).map_err(|e| DecodeError::Malformed {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })
}

fn check_type(value: &serde_json::Value, line: &str) -> Result<String, DecodeError> {
    let record_type = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| DecodeError::Malformed {
            offset: 0,
            message: "missing \"type\" field".into(),
        })?
        .to_string();
    if !KNOWN_TYPES.contains(&record_type.as_str()) {
        return Err(DecodeError::UnknownType {
            record_type,
            raw: line.to_string(),
        });
    }
    Ok(record_type)
}

/// Parses one sample line; the inverse of [`encode_record`] on its image.
pub fn decode_record(line: &str) -> Result<MetricSample, DecodeError> {
    let value = parse_value(line)?;
    let record_type = check_type(&value, line)?;
    if record_type == "motion" {
        return Err(DecodeError::UnknownType {
            record_type,
            raw: line.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| DecodeError::Malformed {
        offset: 0,
        message: e.to_string(),
    })
}

/// Parses one trace line into a sample or a motion annotation.
pub fn decode_trace_record(line: &str) -> Result<TraceRecord, DecodeError> {
    let value = parse_value(line)?;
    let record_type = check_type(&value, line)?;
    if record_type == "motion" {
        let motion: MotionRecord =
            serde_json::from_value(value).map_err(|e| DecodeError::Malformed {
                offset: 0,
                message: e.to_string(),
            })?;
        return Ok(TraceRecord::Motion(motion));
    }
    serde_json::from_value(value)
        .map(TraceRecord::Sample)
        .map_err(|e| DecodeError::Malformed {
            offset: 0,
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rssi_sample() -> MetricSample {
        MetricSample {
            ts_ns: 0,
            side: Side::Robot,
            iface: "wlan0".into(),
            body: MetricBody::Rssi(RssiBody {
                rssi_dbm: -56.0,
                link_quality: None,
                noise_dbm: None,
            }),
        }
    }

    #[test]
    fn rssi_line_carries_type_tag_and_value() {
        let line = encode_record(&rssi_sample());
        assert!(!line.contains('\n'));
        assert!(line.contains("\"type\":\"rssi\""));
        assert!(line.contains("\"rssi_dbm\":-56.0"));
    }

    #[test]
    fn timed_out_delay_serializes_sentinel() {
        let sample = MetricSample {
            ts_ns: 5,
            side: Side::Station,
            iface: "wlan1".into(),
            body: MetricBody::Delay(DelayBody::timed_out()),
        };
        let line = encode_record(&sample);
        assert!(line.contains("\"rtt_ms\":-1"));
        assert!(line.contains("\"timed_out\":true"));
    }

    #[test]
    fn decode_is_inverse_of_encode() {
        let sample = rssi_sample();
        assert_eq!(decode_record(&encode_record(&sample)).unwrap(), sample);
    }

    #[test]
    fn empty_line_is_malformed() {
        match decode_record("") {
            Err(DecodeError::Malformed { .. }) => {}
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_type_preserves_raw_line() {
        let line = r#"{"ts_ns":1,"side":"robot","iface":"wlan0","type":"future_metric","x":1}"#;
        match decode_record(line) {
            Err(DecodeError::UnknownType { record_type, raw }) => {
                assert_eq!(record_type, "future_metric");
                assert_eq!(raw, line);
            }
            other => panic!("expected unknown-type error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_byte_offset() {
        let err = decode_record(r#"{"ts_ns":1,"#).unwrap_err();
        match err {
            DecodeError::Malformed { offset, .. } => assert!(offset > 0),
            other => panic!("expected malformed, got {other:?}"),
        }
    }

    #[test]
    fn delay_body_rejects_inconsistent_wire_values() {
        let line = r#"{"ts_ns":1,"side":"robot","iface":"w","type":"delay","rtt_ms":-1.0,"timed_out":false}"#;
        assert!(decode_record(line).is_err());
        let line = r#"{"ts_ns":1,"side":"robot","iface":"w","type":"delay","rtt_ms":3.5,"timed_out":true}"#;
        assert!(decode_record(line).is_err());
    }

    #[test]
    fn delay_body_construction_enforces_range() {
        assert!(DelayBody::measured(0.0, 2000.0).is_err());
        assert!(DelayBody::measured(2000.1, 2000.0).is_err());
        let ok = DelayBody::measured(12.5, 2000.0).unwrap();
        assert_eq!(ok.rtt_ms(), 12.5);
        assert!(!ok.is_timed_out());
        assert_eq!(DelayBody::timed_out().rtt_ms(), DELAY_SENTINEL_MS);
    }

    #[test]
    fn throughput_total_checked_on_decode() {
        let line = r#"{"ts_ns":1,"side":"robot","iface":"w","type":"throughput","tx_mbps":1.0,"rx_mbps":2.0,"total_mbps":9.0,"tx_packets_delta":1,"rx_packets_delta":2}"#;
        assert!(decode_record(line).is_err());
    }

    #[test]
    fn unknown_fields_are_ignored_on_read() {
        let line = r#"{"ts_ns":1,"side":"robot","iface":"w","type":"rssi","rssi_dbm":-40.0,"vendor_extra":true}"#;
        let sample = decode_record(line).unwrap();
        assert!(matches!(sample.body, MetricBody::Rssi(ref b) if b.rssi_dbm == -40.0));
    }

    #[test]
    fn catalogued_cases_match_table() {
        let c1 = ExperimentCase::catalogued(1).unwrap();
        assert_eq!(c1.topology, Topology::Router);
        assert_eq!(c1.band, Band::Band2g4);
        assert_eq!(c1.robot_iface, "iface1");
        assert_eq!(c1.station_iface, "iface3");

        let c8 = ExperimentCase::catalogued(8).unwrap();
        assert_eq!(c8.topology, Topology::Direct);
        assert_eq!(c8.ap_side, ApSide::Robot);
        assert_eq!(c8.band, Band::Band5g8);
        assert_eq!(c8.robot_iface, "iface2");
        assert_eq!(c8.station_iface, "iface4");

        assert!(ExperimentCase::catalogued(11).is_err());
        assert!(ExperimentCase::catalogued(0).is_err());
    }

    #[test]
    fn case_validation_rejects_router_mismatch() {
        let mut case = ExperimentCase::catalogued(3).unwrap();
        case.case_id = CaseId::Custom("custom".into());
        case.validate().unwrap();
        case.ap_side = ApSide::Router;
        assert!(case.validate().is_err());
    }

    #[test]
    fn simulated_header_requires_seed() {
        let case = ExperimentCase::catalogued(1).unwrap();
        assert!(TraceHeader::new(case.clone(), Utc::now(), TraceOrigin::Simulated, None).is_err());
        assert!(TraceHeader::new(case, Utc::now(), TraceOrigin::Simulated, Some(7)).is_ok());
    }

    #[test]
    fn motion_records_round_trip() {
        let rec = TraceRecord::Motion(MotionRecord {
            ts_ns: 10,
            speed_mps: 0.5,
        });
        let line = encode_trace_record(&rec);
        assert!(line.contains("\"speed_mps\":0.5"));
        assert!(line.contains("\"type\":\"motion\""));
        assert_eq!(decode_trace_record(&line).unwrap(), rec);
    }
}
