//! Synthetic trace generation: a virtual robot follows a waypoint trajectory
//! against a fixed station while the radio model is evaluated per tick.
//! Includes the ten catalogued experiment presets and a mobility-dependent
//! fading switch (extra shadowing plus multipath only while moving).

use std::path::{Path, PathBuf};

use chrono::TimeZone;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    self, ChannelParams, LinkParams, MultipathParams, PathLossParams, ShadowingParams,
    ShadowingProcess,
};
use crate::model::{
    encode_trace_record, Band, DelayBody, ErrorBody, ExperimentCase, MetricBody, MetricSample,
    ModelError, MotionRecord, RssiBody, Side, ThroughputBody, TraceFile, TraceHeader, TraceOrigin,
    TraceRecord,
};
use crate::record::{self, summarize, ComparisonTable, MotionFilter, MotionMode, SummaryRow};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("trajectory: {0}")]
    BadTrajectory(String),
    #[error(transparent)]
    Channel(#[from] channel::ChannelError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Record(#[from] record::RecordError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t_s: f64,
    pub x_m: f64,
    pub y_m: f64,
}

/// Robot waypoint path plus the fixed station position.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    pub station: (f64, f64),
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>, station: (f64, f64)) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::BadTrajectory("need at least one waypoint".into()));
        }
        for pair in waypoints.windows(2) {
            if pair[1].t_s <= pair[0].t_s {
                return Err(SimError::BadTrajectory(format!(
                    "waypoint times must be strictly increasing ({} then {})",
                    pair[0].t_s, pair[1].t_s
                )));
            }
        }
        Ok(Trajectory { waypoints, station })
    }

    /// Parses the trajectory file format: one `t x y` triple per line, a
    /// `station x y` directive, `#` comments.
    pub fn parse(text: &str) -> Result<Self, SimError> {
        let mut waypoints = Vec::new();
        let mut station = (0.0, 0.0);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<f64, SimError> {
                s.parse()
                    .map_err(|e| SimError::BadTrajectory(format!("line {}: {e}", idx + 1)))
            };
            match fields.as_slice() {
                ["station", x, y] => station = (parse(x)?, parse(y)?),
                [t, x, y] => waypoints.push(Waypoint {
                    t_s: parse(t)?,
                    x_m: parse(x)?,
                    y_m: parse(y)?,
                }),
                _ => {
                    return Err(SimError::BadTrajectory(format!(
                        "line {}: expected `t x y` or `station x y`",
                        idx + 1
                    )))
                }
            }
        }
        Trajectory::new(waypoints, station)
    }

    /// Built-in exploration path: parked near the station, a round trip out
    /// to 40 m, then parked again.
    pub fn default_exploration() -> Self {
        Trajectory::new(
            vec![
                Waypoint { t_s: 0.0, x_m: 2.0, y_m: 0.0 },
                Waypoint { t_s: 60.0, x_m: 2.0, y_m: 0.0 },
                Waypoint { t_s: 150.0, x_m: 40.0, y_m: 10.0 },
                Waypoint { t_s: 240.0, x_m: 2.0, y_m: 0.0 },
                Waypoint { t_s: 300.0, x_m: 2.0, y_m: 0.0 },
            ],
            (0.0, 0.0),
        )
        .expect("built-in trajectory is valid")
    }
}

/// Robot position and segment speed at time `t_s`, linearly interpolated and
/// clamped to the endpoints (speed 0 outside the waypoint span).
pub fn position_at(traj: &Trajectory, t_s: f64) -> (f64, f64, f64) {
    let wps = &traj.waypoints;
    let first = wps.first().unwrap();
    let last = wps.last().unwrap();
    if t_s <= first.t_s {
        return (first.x_m, first.y_m, 0.0);
    }
    if t_s >= last.t_s {
        return (last.x_m, last.y_m, 0.0);
    }
    let idx = wps.partition_point(|w| w.t_s <= t_s);
    let (a, b) = (&wps[idx - 1], &wps[idx]);
    let dt = b.t_s - a.t_s;
    let frac = (t_s - a.t_s) / dt;
    let x = a.x_m + frac * (b.x_m - a.x_m);
    let y = a.y_m + frac * (b.y_m - a.y_m);
    let speed = ((b.x_m - a.x_m).hypot(b.y_m - a.y_m)) / dt;
    (x, y, speed)
}

/// One simulated experiment configuration: the catalogued case, the channel
/// constants, and the mobility model knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePreset {
    pub case: ExperimentCase,
    pub channel: ChannelParams,
    pub disconnect_rssi_dbm: f64,
    pub mobility_extra_sigma_db: f64,
    #[serde(default = "default_base_rtt")]
    pub base_rtt_ms: f64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: f64,
}

fn default_base_rtt() -> f64 {
    5.0
}

fn default_timeout() -> f64 {
    2000.0
}

impl CasePreset {
    pub fn validate(&self) -> Result<(), SimError> {
        self.case.validate()?;
        self.channel.validate()?;
        Ok(())
    }
}

/// Preset catalog for cases 1-10. The numeric channel values are assumed
/// configuration defaults, not measured truths: 20 MHz (2.4 GHz band) vs
/// 80 MHz (5.8 GHz band), a lower path loss exponent for the high-mounted
/// router, and a flat 3 dB shadowing plus 3 dB mobility surcharge.
pub fn preset_case(case_id: u8) -> Result<CasePreset, SimError> {
    let case = ExperimentCase::catalogued(case_id)?;
    let b_mhz = match case.band {
        Band::Band2g4 => 20.0,
        Band::Band5g8 => 80.0,
    };
    let eta = if case.is_baseline() { 2.5 } else { 3.0 };
    let channel = ChannelParams {
        two_ray: None,
        path_loss: PathLossParams::new(-40.0, 1.0, eta)?,
        shadowing: ShadowingParams::new(3.0)?,
        multipath: MultipathParams::new(1.0, 1.0, true)?,
        link: LinkParams::new(b_mhz, -90.0, 0.65, 12_000)?,
    };
    Ok(CasePreset {
        case,
        channel,
        disconnect_rssi_dbm: -85.0,
        mobility_extra_sigma_db: 3.0,
        base_rtt_ms: default_base_rtt(),
        timeout_ms: default_timeout(),
    })
}

const RSSI_TICK_NS: u64 = 100_000_000; // 10 Hz
const GENERIC_EVERY: u64 = 10; // 1 Hz

/// Generates one deterministic synthetic trace: (preset, trajectory,
/// duration, seed) fully determines the output, including the header (the
/// wall-clock anchor is pinned to the epoch for simulated traces).
///
/// Per 10 Hz tick an RSSI sample is drawn with the mobility-adjusted model;
/// per 1 Hz tick the same draw also yields throughput, delay (model delay
/// plus the base RTT, or the sentinel below the disconnect threshold), an
/// error-counter sample, and a commanded-speed annotation.
pub fn simulate(
    preset: &CasePreset,
    traj: &Trajectory,
    duration_s: f64,
    seed: u64,
) -> Result<TraceFile, SimError> {
    preset.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let header = TraceHeader::new(
        preset.case.clone(),
        chrono::Utc.timestamp_opt(0, 0).unwrap(),
        TraceOrigin::Simulated,
        Some(seed),
    )?;

    let pl = &preset.channel.path_loss;
    let mp = &preset.channel.multipath;
    let lp = &preset.channel.link;
    let base_sigma = preset.channel.shadowing.sigma_db;
    let mut shadow = ShadowingProcess::new(preset.channel.shadowing.decorrelation_m);

    let ticks = (duration_s * 1e9 / RSSI_TICK_NS as f64).floor() as u64;
    let mut records = Vec::new();
    let mut retransmits: u64 = 0;
    let mut prev_pos: Option<(f64, f64)> = None;

    for tick in 0..=ticks {
        let ts_ns = tick * RSSI_TICK_NS;
        let t_s = ts_ns as f64 / 1e9;
        let (x, y, speed) = position_at(traj, t_s);
        let moved = prev_pos
            .map(|(px, py)| (x - px).hypot(y - py))
            .unwrap_or(0.0);
        prev_pos = Some((x, y));
        let moving = speed > 0.0;

        let d_m = (x - traj.station.0)
            .hypot(y - traj.station.1)
            .max(pl.d0_m);
        let mean = channel::mean_rssi(pl, d_m)?;
        let sigma_eff = base_sigma + if moving { preset.mobility_extra_sigma_db } else { 0.0 };
        let psi = shadow.step(moved, &mut rng) * sigma_eff;
        let omega = if mp.enabled && moving {
            channel::multipath_attenuation_db(mp, &mut rng)
        } else {
            0.0
        };
        let rssi = (mean - psi - omega).clamp(-120.0, 0.0);

        records.push(TraceRecord::Sample(MetricSample {
            ts_ns,
            side: Side::Robot,
            iface: preset.case.robot_iface.clone(),
            body: MetricBody::Rssi(RssiBody {
                rssi_dbm: rssi,
                link_quality: None,
                noise_dbm: Some(lp.pn_dbm),
            }),
        }));

        if tick % GENERIC_EVERY != 0 {
            continue;
        }

        records.push(TraceRecord::Motion(MotionRecord {
            ts_ns,
            speed_mps: speed,
        }));

        let disconnected = rssi < preset.disconnect_rssi_dbm;
        let throughput = if disconnected {
            0.0
        } else {
            channel::model_throughput(lp, rssi)
        };
        let dt_s = (RSSI_TICK_NS * GENERIC_EVERY) as f64 / 1e9;
        let packets = (throughput * 1e6 * dt_s / (8.0 * 1500.0)) as u64;
        records.push(TraceRecord::Sample(MetricSample {
            ts_ns,
            side: Side::Robot,
            iface: preset.case.robot_iface.clone(),
            body: MetricBody::Throughput(ThroughputBody::new(
                throughput / 2.0,
                throughput / 2.0,
                packets / 2,
                packets / 2,
            )),
        }));

        let delay_body = if disconnected {
            retransmits += 1;
            DelayBody::timed_out()
        } else {
            match channel::model_delay(lp, rssi) {
                Ok(delay_ms) => {
                    let total = delay_ms + preset.base_rtt_ms;
                    DelayBody::measured(total, preset.timeout_ms)
                        .unwrap_or_else(|_| DelayBody::timed_out())
                }
                Err(_) => DelayBody::timed_out(),
            }
        };
        records.push(TraceRecord::Sample(MetricSample {
            ts_ns,
            side: Side::Robot,
            iface: preset.case.robot_iface.clone(),
            body: MetricBody::Delay(delay_body),
        }));

        records.push(TraceRecord::Sample(MetricSample {
            ts_ns,
            side: Side::Robot,
            iface: preset.case.robot_iface.clone(),
            body: MetricBody::Errors(ErrorBody {
                retransmits_cum: retransmits,
                rx_dropped_cum: 0,
                tx_errors_cum: 0,
                epoch: 0,
            }),
        }));
    }

    Ok(TraceFile { header, records })
}

/// Serializes a whole trace to its on-disk byte representation.
pub fn trace_to_bytes(trace: &TraceFile) -> Vec<u8> {
    let mut out = serde_json::to_string(&trace.header).expect("headers serialize");
    out.push('\n');
    for record in &trace.records {
        out.push_str(&encode_trace_record(record));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn write_trace(trace: &TraceFile, path: &Path) -> Result<(), SimError> {
    std::fs::write(path, trace_to_bytes(trace)).map_err(|e| SimError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Simulates and summarizes every preset, writing one trace per case under
/// `outdir` and returning the per-case rows plus the comparison table.
/// Per-case seeds are derived as `seed XOR case_id` so cases stay
/// independent but reproducible; duplicate ids get disambiguated paths.
pub fn run_experiment_suite(
    presets: &[CasePreset],
    traj: &Trajectory,
    duration_s: f64,
    seed: u64,
    outdir: &Path,
) -> Result<(Vec<(PathBuf, SummaryRow)>, ComparisonTable), SimError> {
    std::fs::create_dir_all(outdir).map_err(|e| SimError::Io {
        path: outdir.display().to_string(),
        source: e,
    })?;
    let mut results = Vec::new();
    for preset in presets {
        let case_seed = match preset.case.case_id {
            crate::model::CaseId::Numbered(n) => seed ^ n as u64,
            crate::model::CaseId::Custom(_) => seed,
        };
        let trace = simulate(preset, traj, duration_s, case_seed)?;
        let mut path = outdir.join(format!("case_{}.trace", preset.case.case_id));
        let mut suffix = 2;
        while path.exists() {
            path = outdir.join(format!("case_{}_{suffix}.trace", preset.case.case_id));
            suffix += 1;
        }
        write_trace(&trace, &path)?;
        let row = summarize(&trace, MotionMode::All, &MotionFilter::default())?;
        results.push((path, row));
    }
    let table = record::compare_cases(results.iter().map(|(_, row)| row.clone()).collect());
    Ok((results, table))
}
