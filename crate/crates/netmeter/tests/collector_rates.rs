//! Collector scheduling tests on a virtual clock: the loops must hold their
//! configured rates without real sleeping.

use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};

use netmeter::collect::{run_collector, CollectorConfig, SyntheticClock};
use netmeter::model::{MetricBody, Side, TraceRecord};

const WIRELESS: &str = "\
Inter-| sta-|   Quality        |   Discarded packets               | Missed | WE
 face | tus | link level noise |  nwid  crypt   frag  retry   misc | beacon | 22
 wlan0: 0000   54.  -56.  -95         0      0      0      0      0        0
";

const DEV: &str = "\
Inter-|   Receive                                                |  Transmit
 face |bytes    packets errs drop fifo frame compressed multicast|bytes    packets errs drop fifo colls carrier compressed
 wlan0: 1000 10 0 0 0 0 0 0  2000 20 0 0 0 0 0 0
";

const NETSTAT: &str = "\
Tcp:
    15 segments retransmitted
";

fn stage_stats_root() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("wireless"), WIRELESS).unwrap();
    std::fs::write(dir.path().join("dev"), DEV).unwrap();
    std::fs::write(dir.path().join("netstat"), NETSTAT).unwrap();
    dir
}

fn run_virtual(duration_s: f64) -> Vec<TraceRecord> {
    let root = stage_stats_root();
    let mut cfg = CollectorConfig::new("wlan0");
    cfg.stats_source_root = root.path().to_path_buf();
    let stop = Arc::new(AtomicBool::new(false));
    let clock = SyntheticClock::new((duration_s * 1e9) as u64, stop.clone());
    let sink = Mutex::new(Vec::new());
    run_collector(&cfg, Side::Robot, &clock, &sink, &stop).unwrap();
    sink.into_inner().unwrap()
}

fn count_kinds(records: &[TraceRecord]) -> (usize, usize, usize) {
    let mut rssi = 0;
    let mut tput = 0;
    let mut errors = 0;
    for record in records {
        if let TraceRecord::Sample(s) = record {
            match s.body {
                MetricBody::Rssi(_) => rssi += 1,
                MetricBody::Throughput(_) => tput += 1,
                MetricBody::Errors(_) => errors += 1,
                MetricBody::Delay(_) => {}
            }
        }
    }
    (rssi, tput, errors)
}

#[test]
fn rates_hold_over_ten_virtual_seconds() {
    let records = run_virtual(10.0);
    let (rssi, tput, errors) = count_kinds(&records);
    // 10 Hz RSSI over 10 s: 100 samples, +/- 10%.
    assert!((90..=110).contains(&rssi), "rssi count {rssi} outside [90, 110]");
    // 1 Hz counters: the first throughput sample needs two captures.
    assert!((8..=10).contains(&tput), "throughput count {tput} outside [8, 10]");
    assert!((8..=10).contains(&errors), "errors count {errors} outside [8, 10]");
}

#[test]
fn short_run_still_produces_samples() {
    let records = run_virtual(3.0);
    let (rssi, tput, _) = count_kinds(&records);
    assert!(rssi >= 25, "rssi count {rssi} below 25 in 3 s");
    assert!(tput >= 2, "throughput count {tput} below 2 in 3 s");
}

#[test]
fn static_counters_report_zero_throughput() {
    let records = run_virtual(5.0);
    for record in &records {
        if let TraceRecord::Sample(s) = record {
            if let MetricBody::Throughput(body) = &s.body {
                assert_eq!(body.total_mbps, 0.0);
            }
        }
    }
}

#[test]
fn timestamps_are_monotonic() {
    let records = run_virtual(10.0);
    let mut last = 0u64;
    for record in &records {
        assert!(record.ts_ns() >= last);
        last = record.ts_ns();
    }
}

#[test]
fn missing_wireless_file_suppresses_rssi_only() {
    let root = stage_stats_root();
    std::fs::remove_file(root.path().join("wireless")).unwrap();
    let mut cfg = CollectorConfig::new("wlan0");
    cfg.stats_source_root = root.path().to_path_buf();
    let stop = Arc::new(AtomicBool::new(false));
    let clock = SyntheticClock::new(5_000_000_000, stop.clone());
    let sink = Mutex::new(Vec::new());
    run_collector(&cfg, Side::Robot, &clock, &sink, &stop).unwrap();
    let records = sink.into_inner().unwrap();
    let (rssi, tput, _) = count_kinds(&records);
    assert_eq!(rssi, 0);
    assert!(tput >= 3);
}
