//! End-to-end acceptance checks. Each test prints a single
//! `ACCEPTANCE <name>: PASS` line on success; a failed assertion marks the
//! criterion as failed by the usual test-failure reporting.

use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use netmeter::channel::{
    self, LinkParams, MultipathParams, PathLossParams, ShadowingProcess, TwoRayParams,
};
use netmeter::collect::{
    parse_device_stats, parse_protocol_stats, parse_wireless_stats, CollectError, DeviceCounters,
    ProtocolCounters, SystemClock, WirelessStatLine,
};
use netmeter::model::{
    CaseId, DelayBody, ExperimentCase, MetricBody, MetricSample, Side, ThroughputBody,
    TraceFile, TraceHeader, TraceOrigin, TraceRecord,
};
use netmeter::probe::{serve, serve_with_delay, ProbeConfig};
use netmeter::record::{
    compare_cases, static_vs_moving, summarize, MeanStd, MotionFilter, MotionMode, SummaryRow,
};
use netmeter::sim::{preset_case, run_experiment_suite, simulate, trace_to_bytes, Trajectory};

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

/// Eq. evaluations against independently written high-precision expressions,
/// on randomized parameter sets plus the worked examples.
#[test]
fn channel_model_oracle_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);

    // Worked example: 20 MHz at 30 dB SNR.
    let lp = LinkParams::new(20.0, -90.0, 1.0, 12_000).unwrap();
    let cap = channel::channel_capacity(&lp, -60.0);
    let want = 20.0 * (1.0 + 1000.0f64).ln() / std::f64::consts::LN_2;
    assert!(rel_err(cap, want) < 1e-9, "capacity {cap} vs {want}");
    assert!((cap - 199.34).abs() < 0.005, "capacity {cap} != 199.34");

    // Worked example: path loss exponent 2 at ten reference distances.
    let pl = PathLossParams::new(-40.0, 1.0, 2.0).unwrap();
    let rssi = channel::mean_rssi(&pl, 10.0).unwrap();
    assert!(rel_err(rssi, -60.0) < 1e-9, "mean rssi {rssi} != -60");

    // Worked example: two-ray received power.
    let tr = TwoRayParams::new(0.1, 1.0, 1.0, 2.0, 1.0).unwrap();
    let p = channel::two_ray_power(&tr, 10.0).unwrap();
    assert!(rel_err(p, 4.0e-5) < 1e-9, "two-ray power {p} != 4e-5");

    for _ in 0..64 {
        let p_t: f64 = rng.gen_range(0.01..10.0);
        let g_t: f64 = rng.gen_range(0.5..4.0);
        let g_r: f64 = rng.gen_range(0.5..4.0);
        let h_t: f64 = rng.gen_range(0.5..30.0);
        let h_r: f64 = rng.gen_range(0.2..3.0);
        let d: f64 = rng.gen_range(1.0..500.0);
        let tr = TwoRayParams::new(p_t, g_t, g_r, h_t, h_r).unwrap();
        let want = p_t * g_t * g_r * h_t * h_t * h_r * h_r / (d * d * d * d);
        assert!(rel_err(channel::two_ray_power(&tr, d).unwrap(), want) < 1e-9);

        let rss_d0: f64 = rng.gen_range(-60.0..-20.0);
        let d0: f64 = rng.gen_range(0.5..2.0);
        let eta: f64 = rng.gen_range(1.6..6.0);
        let pl = PathLossParams::new(rss_d0, d0, eta).unwrap();
        let d: f64 = rng.gen_range(d0..1000.0);
        let want = rss_d0 - 10.0 * eta * (d / d0).log10();
        assert!(rel_err(channel::mean_rssi(&pl, d).unwrap(), want) < 1e-9);

        let b: f64 = rng.gen_range(1.0..160.0);
        let pn: f64 = rng.gen_range(-100.0..-80.0);
        let alpha: f64 = rng.gen_range(0.1..1.0);
        let l_bits: u64 = rng.gen_range(1_000..100_000);
        let lp = LinkParams::new(b, pn, alpha, l_bits).unwrap();
        let rssi: f64 = rng.gen_range(-85.0..-30.0);
        let snr = 10f64.powf((rssi - pn) / 10.0);
        let cap_want = b * (1.0 + snr).ln() / std::f64::consts::LN_2;
        let tput_want = alpha * cap_want;
        let delay_want = l_bits as f64 / (tput_want * 1000.0);
        assert!(rel_err(channel::channel_capacity(&lp, rssi), cap_want) < 1e-9);
        assert!(rel_err(channel::model_throughput(&lp, rssi), tput_want) < 1e-9);
        assert!(rel_err(channel::model_delay(&lp, rssi).unwrap(), delay_want) < 1e-9);
        assert!(
            rel_err(channel::transmission_delay(l_bits, tput_want).unwrap(), delay_want) < 1e-9
        );
    }

    assert!(started.elapsed() < Duration::from_secs(1), "oracle suite too slow");
    pass("channel-model-oracle");
}

/// Monotonicity of the model in distance and RSSI, plus the
/// delay * throughput * 1000 = L composition identity.
#[test]
fn channel_monotonicity_and_composition() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);

    for _ in 0..10_000 {
        let pl = PathLossParams::new(
            rng.gen_range(-60.0..-20.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(1.6..6.0),
        )
        .unwrap();
        let mut d1: f64 = rng.gen_range(pl.d0_m..999.0);
        let mut d2: f64 = rng.gen_range(pl.d0_m..999.0);
        if d1 > d2 {
            std::mem::swap(&mut d1, &mut d2);
        }
        assert!(
            channel::mean_rssi(&pl, d1).unwrap() >= channel::mean_rssi(&pl, d2).unwrap(),
            "mean RSSI must not rise with distance"
        );

        let lp = LinkParams::new(
            rng.gen_range(1.0..160.0),
            rng.gen_range(-100.0..-80.0),
            rng.gen_range(0.1..1.0),
            rng.gen_range(1_000..100_000),
        )
        .unwrap();
        let mut r1: f64 = rng.gen_range(-85.0..-30.0);
        let mut r2: f64 = rng.gen_range(-85.0..-30.0);
        if r1 > r2 {
            std::mem::swap(&mut r1, &mut r2);
        }
        assert!(channel::channel_capacity(&lp, r1) <= channel::channel_capacity(&lp, r2));
        assert!(channel::model_delay(&lp, r1).unwrap() >= channel::model_delay(&lp, r2).unwrap());

        let rate = channel::model_throughput(&lp, r1);
        let delay = channel::model_delay(&lp, r1).unwrap();
        assert!(
            rel_err(delay * rate * 1000.0, lp.l_bits as f64) < 1e-6,
            "composition identity violated: {} vs {}",
            delay * rate * 1000.0,
            lp.l_bits
        );
    }

    assert!(started.elapsed() < Duration::from_secs(5), "monotonicity suite too slow");
    pass("channel-monotonicity");
}

/// Monte-Carlo distribution checks on the stochastic channel terms.
#[test]
fn stochastic_term_distributions() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100_000usize;

    // Shadowing: scaled process samples must have std within 2% of sigma.
    let sigma = 3.0;
    let mut shadow = ShadowingProcess::new(None);
    let draws: Vec<f64> = (0..n).map(|_| shadow.step(1.0, &mut rng) * sigma).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    assert!(
        (std - sigma).abs() / sigma < 0.02,
        "shadowing std {std} departs from sigma {sigma} by more than 2%"
    );

    // Multipath power draws at m = 1, omega = 1 are Exp(1); Kolmogorov-
    // Smirnov against the exponential CDF at the 1% level.
    let mp = MultipathParams::new(1.0, 1.0, true).unwrap();
    let mut power: Vec<f64> = (0..n)
        .map(|_| channel::nakagami_power_draw(&mp, &mut rng))
        .collect();
    power.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d_stat = 0.0f64;
    for (i, x) in power.iter().enumerate() {
        let cdf = 1.0 - (-x).exp();
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        d_stat = d_stat.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    let critical = 1.628 / (n as f64).sqrt();
    assert!(
        d_stat < critical,
        "KS statistic {d_stat} exceeds 1% critical value {critical}"
    );

    assert!(started.elapsed() < Duration::from_secs(10), "distribution suite too slow");
    pass("stochastic-distributions");
}

/// Every checked-in stats fixture parses field-exact against its sidecar;
/// corruption fixtures raise the documented error variants.
#[test]
fn parser_fixture_corpus() {
    let started = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).unwrap();

    let mut checked = 0usize;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_owned();
        if !name.ends_with(".txt") || name.contains("corrupt") || name.contains("missing") {
            continue;
        }
        let sidecar = dir.join(name.replace(".txt", ".expected.json"));
        let expected_text = std::fs::read_to_string(&sidecar)
            .unwrap_or_else(|_| panic!("fixture {name} lacks a sidecar"));
        let text = std::fs::read_to_string(&path).unwrap();
        if name.starts_with("wireless") {
            let got = parse_wireless_stats(&text).unwrap();
            let want: Vec<WirelessStatLine> = serde_json::from_str(&expected_text).unwrap();
            assert_eq!(got, want, "fixture {name}");
        } else if name.starts_with("dev") {
            let got = parse_device_stats(&text).unwrap();
            let want: Vec<DeviceCounters> = serde_json::from_str(&expected_text).unwrap();
            assert_eq!(got, want, "fixture {name}");
        } else if name.starts_with("netstat") {
            let got = parse_protocol_stats(&text).unwrap();
            let want: ProtocolCounters = serde_json::from_str(&expected_text).unwrap();
            assert_eq!(got, want, "fixture {name}");
        } else {
            panic!("unclassified fixture {name}");
        }
        checked += 1;
    }
    assert!(checked >= 8, "expected a corpus of good fixtures, found {checked}");

    assert!(matches!(
        parse_wireless_stats(&read("wireless_corrupt_level.txt")),
        Err(CollectError::MalformedLine { .. })
    ));
    assert!(matches!(
        parse_device_stats(&read("dev_corrupt_columns.txt")),
        Err(CollectError::MalformedLine { .. })
    ));
    assert!(matches!(
        parse_protocol_stats(&read("netstat_missing_counter.txt")),
        Err(CollectError::CounterNotFound)
    ));

    assert!(started.elapsed() < Duration::from_secs(1), "fixture suite too slow");
    pass("parser-fixtures");
}

fn run_probe(cfg: &ProbeConfig, samples: u64) -> Vec<DelayBody> {
    let clock = SystemClock::new();
    let sink = Mutex::new(Vec::new());
    let stop = AtomicBool::new(false);
    let emitted =
        netmeter::probe::measure_rtt(cfg, Side::Robot, &clock, &sink, &stop, Some(samples))
            .unwrap();
    assert_eq!(emitted, samples);
    sink.into_inner()
        .unwrap()
        .into_iter()
        .map(|r| match r {
            TraceRecord::Sample(MetricSample { body: MetricBody::Delay(d), .. }) => d,
            other => panic!("unexpected record {other:?}"),
        })
        .collect()
}

/// Runs a wall-clock-sensitive check up to three times; scheduling stalls on
/// a loaded machine should not masquerade as accuracy failures.
fn retry(name: &str, attempt: impl Fn() -> Result<(), String>) {
    let mut last = String::new();
    for _ in 0..3 {
        match attempt() {
            Ok(()) => return,
            Err(e) => last = e,
        }
    }
    panic!("{name} failed on every attempt: {last}");
}

/// Probe accuracy over loopback: injected delay, dead server, and near-zero
/// delay all behave as specified.
#[test]
fn probe_loopback_end_to_end() {
    let started = Instant::now();

    // 50 ms injected echo delay: every RTT in [50, 65] ms.
    retry("injected-delay accuracy", || {
        let server = serve_with_delay("127.0.0.1:0", Duration::from_millis(50)).unwrap();
        let mut cfg = ProbeConfig::new(server.local_addr().to_string());
        cfg.rate_hz = 10.0;
        let delays = run_probe(&cfg, 20);
        server.stop();
        for d in &delays {
            if d.is_timed_out() {
                return Err("unexpected timeout under injected delay".into());
            }
            if !(50.0..=65.0).contains(&d.rtt_ms()) {
                return Err(format!("RTT {} ms outside [50, 65]", d.rtt_ms()));
            }
        }
        Ok(())
    });

    // Dead server: all sentinels, and the summary reports 100% loss. The
    // socket stays bound (and unread) so nothing else can claim the port.
    let dead = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let mut cfg = ProbeConfig::new(dead.local_addr().unwrap().to_string());
    cfg.rate_hz = 20.0;
    cfg.timeout_ms = 100.0;
    let delays = run_probe(&cfg, 10);
    assert!(delays.iter().all(|d| d.is_timed_out()), "expected 100% sentinels");
    let header = TraceHeader::new(
        ExperimentCase::catalogued(1).unwrap(),
        chrono::Utc::now(),
        TraceOrigin::Measured,
        None,
    )
    .unwrap();
    let trace = TraceFile {
        header,
        records: delays
            .iter()
            .enumerate()
            .map(|(i, d)| {
                TraceRecord::Sample(MetricSample {
                    ts_ns: i as u64,
                    side: Side::Robot,
                    iface: "probe".into(),
                    body: MetricBody::Delay(*d),
                })
            })
            .collect(),
    };
    let row = summarize(&trace, MotionMode::All, &MotionFilter::default()).unwrap();
    assert_eq!(row.loss_pct, Some(100.0));

    // No injected delay: loopback median RTT under 5 ms.
    retry("zero-delay median", || {
        let server = serve("127.0.0.1:0").unwrap();
        let mut cfg = ProbeConfig::new(server.local_addr().to_string());
        cfg.rate_hz = 20.0;
        let delays = run_probe(&cfg, 21);
        server.stop();
        let mut rtts: Vec<f64> = delays
            .iter()
            .filter(|d| !d.is_timed_out())
            .map(|d| d.rtt_ms())
            .collect();
        rtts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if rtts.is_empty() {
            return Err("no successful probes over loopback".into());
        }
        let median = rtts[rtts.len() / 2];
        if median >= 5.0 {
            return Err(format!("loopback median RTT {median} ms"));
        }
        Ok(())
    });

    assert!(started.elapsed() < Duration::from_secs(90), "probe suite too slow");
    pass("probe-loopback");
}

fn trace_with(records: Vec<TraceRecord>) -> TraceFile {
    TraceFile {
        header: TraceHeader::new(
            ExperimentCase::catalogued(3).unwrap(),
            chrono::Utc::now(),
            TraceOrigin::Measured,
            None,
        )
        .unwrap(),
        records,
    }
}

fn throughput_record(ts_ns: u64, mbps: f64) -> TraceRecord {
    TraceRecord::Sample(MetricSample {
        ts_ns,
        side: Side::Robot,
        iface: "wlan0".into(),
        body: MetricBody::Throughput(ThroughputBody::new(mbps, 0.0, 1, 0)),
    })
}

fn delay_record(ts_ns: u64, body: DelayBody) -> TraceRecord {
    TraceRecord::Sample(MetricSample {
        ts_ns,
        side: Side::Robot,
        iface: "probe".into(),
        body: MetricBody::Delay(body),
    })
}

/// Hand-checkable summary statistics, including the sentinel-handling
/// contract for delay.
#[test]
fn analyzer_oracle() {
    let started = Instant::now();

    let trace = trace_with(vec![
        throughput_record(0, 10.0),
        throughput_record(1, 20.0),
        throughput_record(2, 30.0),
    ]);
    let row = summarize(&trace, MotionMode::All, &MotionFilter::default()).unwrap();
    let tput = row.throughput_mbps.unwrap();
    assert!((tput.mean - 20.0).abs() < 1e-12);
    assert!((tput.std - 10.0).abs() < 1e-12);

    // 96 losses out of 1000 probes: 9.6% loss.
    let mut records = Vec::new();
    for i in 0..1000u64 {
        let body = if i < 96 {
            DelayBody::timed_out()
        } else {
            DelayBody::measured(5.0 + (i % 7) as f64, 2000.0).unwrap()
        };
        records.push(delay_record(i, body));
    }
    let row = summarize(&trace_with(records), MotionMode::All, &MotionFilter::default()).unwrap();
    assert!((row.loss_pct.unwrap() - 9.6).abs() < 1e-12);
    assert_eq!(row.delay_samples, 1000);

    // Inserting sentinels must not move the delay mean or std.
    let measured: Vec<TraceRecord> = (0..100u64)
        .map(|i| delay_record(i, DelayBody::measured(3.0 + (i % 11) as f64, 2000.0).unwrap()))
        .collect();
    let base = summarize(&trace_with(measured.clone()), MotionMode::All, &MotionFilter::default())
        .unwrap();
    let mut padded = measured;
    for i in 0..40u64 {
        padded.push(delay_record(1000 + i, DelayBody::timed_out()));
    }
    let with_sentinels =
        summarize(&trace_with(padded), MotionMode::All, &MotionFilter::default()).unwrap();
    let (a, b) = (base.delay_ms.unwrap(), with_sentinels.delay_ms.unwrap());
    assert!((a.mean - b.mean).abs() < 1e-12);
    assert!((a.std - b.std).abs() < 1e-12);
    assert_eq!(a.n, b.n);

    assert!(started.elapsed() < Duration::from_secs(1), "analyzer oracle too slow");
    pass("analyzer-oracle");
}

/// Determinism, suite runtime, and the static-vs-moving direction of the
/// seeded simulation.
#[test]
fn simulation_reproducibility_and_direction() {
    let started = Instant::now();
    let traj = Trajectory::default_exploration();

    let preset = preset_case(1).unwrap();
    let a = simulate(&preset, &traj, 300.0, 42).unwrap();
    let b = simulate(&preset, &traj, 300.0, 42).unwrap();
    assert_eq!(trace_to_bytes(&a), trace_to_bytes(&b), "same seed must be byte-identical");

    let outdir = tempfile::tempdir().unwrap();
    let presets: Vec<_> = (1..=10).map(|id| preset_case(id).unwrap()).collect();
    let suite_started = Instant::now();
    let (results, _table) =
        run_experiment_suite(&presets, &traj, 300.0, 42, outdir.path()).unwrap();
    assert!(suite_started.elapsed() < Duration::from_secs(60), "suite too slow");
    assert_eq!(results.len(), 10);
    for (path, _) in &results {
        assert!(path.exists());
    }

    // Parked beats driving: higher throughput, lower delay, separated by
    // at least three standard errors on the seeded run.
    let (stat, moving) = static_vs_moving(&a, &MotionFilter::default()).unwrap();
    let se = |x: &MeanStd, y: &MeanStd| {
        (x.std * x.std / x.n as f64 + y.std * y.std / y.n as f64).sqrt()
    };
    let (ts, tm) = (stat.throughput_mbps.unwrap(), moving.throughput_mbps.unwrap());
    assert!(
        ts.mean - tm.mean > 3.0 * se(&ts, &tm),
        "static throughput {} not above moving {} at 3 sigma",
        ts.mean,
        tm.mean
    );
    let (ds, dm) = (stat.delay_ms.unwrap(), moving.delay_ms.unwrap());
    assert!(
        dm.mean - ds.mean > 3.0 * se(&ds, &dm),
        "static delay {} not below moving {} at 3 sigma",
        ds.mean,
        dm.mean
    );

    assert!(started.elapsed() < Duration::from_secs(60));
    pass("simulation-reproducibility");
}

/// Cross-case table marks the best non-baseline throughput.
#[test]
fn comparison_table_best_of() {
    let row = |id: u8, mean: f64| SummaryRow {
        case_id: CaseId::Numbered(id),
        baseline: id <= 2,
        throughput_mbps: Some(MeanStd { mean, std: 1.0, n: 100 }),
        delay_ms: None,
        loss_pct: None,
        rssi_robot_dbm: None,
        rssi_station_dbm: None,
        retransmits_cum: None,
        delay_samples: 0,
    };
    let table = compare_cases(vec![
        row(1, 12.8),
        row(3, 19.1),
        row(5, 13.1),
        row(7, 50.2),
        row(9, 35.9),
    ]);
    let flagged: Vec<u8> = table
        .rows
        .iter()
        .zip(&table.flags)
        .filter(|(_, f)| f.throughput)
        .map(|(r, _)| match r.case_id {
            CaseId::Numbered(n) => n,
            _ => unreachable!(),
        })
        .collect();
    assert_eq!(flagged, vec![7], "best throughput must be case 7 only");
    assert!(table.rows[0].baseline, "case 1 renders as baseline");
    let text = table.render_text();
    assert!(text.contains("*50.2"), "text rendering must star the best value:\n{text}");

    pass("comparison-table");
}
