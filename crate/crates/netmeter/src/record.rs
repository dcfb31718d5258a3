//! Trace persistence and analysis: durable append of sample streams to
//! newline-delimited trace files, per-case summary statistics, and the
//! cross-case comparison table with best-of flags.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collect::SampleSink;
use crate::model::{
    decode_trace_record, encode_trace_record, CaseId, DecodeError, MetricBody, Side, TraceFile,
    TraceHeader, TraceRecord,
};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing or invalid trace header: {0}")]
    MissingHeader(String),
    #[error("corrupt record at line {line_no}: {source}")]
    CorruptLine {
        line_no: usize,
        source: DecodeError,
    },
    #[error("no samples left after applying the motion filter ({context})")]
    EmptyAfterFilter { context: String },
    #[error("trace has no motion annotations and no sidecar intervals")]
    NoMotionData,
}

fn io_err(path: &Path, source: std::io::Error) -> RecordError {
    RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialized, durable appender for one trace file. Concurrent producers are
/// serialized internally; every append lands as one complete line.
pub struct TraceWriter {
    inner: Mutex<BufWriter<File>>,
}

impl TraceWriter {
    /// Creates the file and writes the header line; records may be appended
    /// only after this, so no record can precede the header.
    pub fn create(path: &Path, header: &TraceHeader) -> Result<Self, RecordError> {
        let file = File::create(path).map_err(|e| io_err(path, e))?;
        let mut writer = BufWriter::new(file);
        let line = serde_json::to_string(header).expect("headers always serialize");
        writeln!(writer, "{line}").map_err(|e| io_err(path, e))?;
        writer.flush().map_err(|e| io_err(path, e))?;
        Ok(TraceWriter {
            inner: Mutex::new(writer),
        })
    }

    /// Opens an existing trace for appending. Refuses files that do not
    /// start with a valid header.
    pub fn open_append(path: &Path) -> Result<Self, RecordError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut first_line = String::new();
        BufReader::new(file)
            .read_line(&mut first_line)
            .map_err(|e| io_err(path, e))?;
        parse_header(first_line.trim_end())?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| io_err(path, e))?;
        Ok(TraceWriter {
            inner: Mutex::new(BufWriter::new(file)),
        })
    }

    pub fn append(&self, record: &TraceRecord) -> Result<(), RecordError> {
        let line = encode_trace_record(record);
        let mut writer = self.inner.lock().unwrap();
        writeln!(writer, "{line}").map_err(|e| RecordError::Io {
            path: "<trace>".into(),
            source: e,
        })?;
        writer.flush().map_err(|e| RecordError::Io {
            path: "<trace>".into(),
            source: e,
        })
    }

    pub fn finish(self) -> Result<(), RecordError> {
        let mut writer = self.inner.into_inner().unwrap();
        writer.flush().map_err(|e| RecordError::Io {
            path: "<trace>".into(),
            source: e,
        })
    }
}

impl SampleSink for TraceWriter {
    fn accept(&self, record: TraceRecord) {
        if let Err(e) = self.append(&record) {
            log::error!("trace append failed: {e}");
        }
    }
}

fn parse_header(line: &str) -> Result<TraceHeader, RecordError> {
    if line.trim().is_empty() {
        return Err(RecordError::MissingHeader("empty file".into()));
    }
    serde_json::from_str(line).map_err(|e| RecordError::MissingHeader(e.to_string()))
}

/// How to treat undecodable record lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Corrupt lines abort the read with their line number.
    Strict,
    /// Corrupt lines are skipped and counted.
    Lenient,
}

/// A trace loaded from disk, with counts of anything that was dropped.
#[derive(Debug)]
pub struct LoadedTrace {
    pub trace: TraceFile,
    /// Lines skipped in lenient mode plus unknown-type lines in any mode.
    pub skipped_lines: usize,
    /// True when a truncated final line (crash artifact) was dropped.
    pub dropped_truncated_tail: bool,
}

/// Reads a trace file: the header plus all decodable records. Unknown-type
/// records are skipped with a count in either mode; a truncated final line
/// is dropped with a warning flag rather than failing the file.
pub fn read_trace(path: &Path, mode: ReadMode) -> Result<LoadedTrace, RecordError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let ends_with_newline = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    if lines.is_empty() {
        return Err(RecordError::MissingHeader("empty file".into()));
    }
    let header = parse_header(lines[0])?;

    let mut records = Vec::new();
    let mut skipped_lines = 0usize;
    let mut dropped_truncated_tail = false;
    let last_idx = lines.len() - 1;
    for (idx, line) in lines.iter().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        match decode_trace_record(line) {
            Ok(record) => records.push(record),
            Err(DecodeError::UnknownType { record_type, .. }) => {
                log::warn!("skipping unknown record type {record_type:?} at line {}", idx + 1);
                skipped_lines += 1;
            }
            Err(e) => {
                if idx == last_idx && !ends_with_newline {
                    dropped_truncated_tail = true;
                } else {
                    match mode {
                        ReadMode::Strict => {
                            return Err(RecordError::CorruptLine {
                                line_no: idx + 1,
                                source: e,
                            })
                        }
                        ReadMode::Lenient => skipped_lines += 1,
                    }
                }
            }
        }
    }
    Ok(LoadedTrace {
        trace: TraceFile { header, records },
        skipped_lines,
        dropped_truncated_tail,
    })
}

/// Mean and sample (n-1) standard deviation of one metric column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Some(MeanStd { mean, std, n })
}

/// One row of the per-case summary: the Table-style column set.
///
/// Delay statistics exclude sentinel samples; a `-1` is a loss event, not a
/// latency value, and is counted only in `loss_pct`. RSSI is reported per
/// side and absent when that side produced no RSSI samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case_id: CaseId,
    pub baseline: bool,
    pub throughput_mbps: Option<MeanStd>,
    pub delay_ms: Option<MeanStd>,
    pub loss_pct: Option<f64>,
    pub rssi_robot_dbm: Option<MeanStd>,
    pub rssi_station_dbm: Option<MeanStd>,
    /// Session-delta of the retransmit counter, summed across counter epochs.
    pub retransmits_cum: Option<u64>,
    pub delay_samples: usize,
}

/// Static-vs-moving sample selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    All,
    StaticOnly,
    MovingOnly,
}

/// Motion filter: a mode plus an optional sidecar list of static intervals
/// (`[start_ns, end_ns)`) for traces without commanded-speed annotations.
#[derive(Debug, Clone, Default)]
pub struct MotionFilter {
    pub static_intervals: Option<Vec<(u64, u64)>>,
}

impl MotionFilter {
    /// Parses a sidecar intervals file: one `static <start_ns> <end_ns>`
    /// line per interval, `#` comments.
    pub fn from_intervals_text(text: &str) -> Result<Self, String> {
        let mut intervals = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some("static"), Some(a), Some(b)) => {
                    let start: u64 = a.parse().map_err(|e| format!("line {}: {e}", idx + 1))?;
                    let end: u64 = b.parse().map_err(|e| format!("line {}: {e}", idx + 1))?;
                    if end <= start {
                        return Err(format!("line {}: empty interval", idx + 1));
                    }
                    intervals.push((start, end));
                }
                _ => return Err(format!("line {}: expected `static <start_ns> <end_ns>`", idx + 1)),
            }
        }
        Ok(MotionFilter {
            static_intervals: Some(intervals),
        })
    }
}

/// Predicate over sample timestamps: is the robot static at `ts`?
struct StaticTimeline {
    // (ts_ns, is_static), sorted by ts_ns
    marks: Vec<(u64, bool)>,
}

impl StaticTimeline {
    fn build(trace: &TraceFile, filter: &MotionFilter) -> Result<Self, RecordError> {
        if let Some(intervals) = &filter.static_intervals {
            let mut marks = Vec::new();
            // Interval edges become alternating static/moving marks.
            marks.push((0, false));
            for &(start, end) in intervals {
                marks.push((start, true));
                marks.push((end, false));
            }
            marks.sort_by_key(|m| m.0);
            return Ok(StaticTimeline { marks });
        }
        let mut marks: Vec<(u64, bool)> = trace
            .records
            .iter()
            .filter_map(|r| match r {
                TraceRecord::Motion(m) => Some((m.ts_ns, m.speed_mps == 0.0)),
                _ => None,
            })
            .collect();
        if marks.is_empty() {
            return Err(RecordError::NoMotionData);
        }
        marks.sort_by_key(|m| m.0);
        Ok(StaticTimeline { marks })
    }

    fn is_static(&self, ts_ns: u64) -> bool {
        match self.marks.partition_point(|&(t, _)| t <= ts_ns) {
            0 => self.marks[0].1,
            idx => self.marks[idx - 1].1,
        }
    }
}

/// Computes the summary statistics for one trace under a motion filter.
pub fn summarize(
    trace: &TraceFile,
    mode: MotionMode,
    filter: &MotionFilter,
) -> Result<SummaryRow, RecordError> {
    let timeline = match mode {
        MotionMode::All => None,
        _ => Some(StaticTimeline::build(trace, filter)?),
    };
    let included = |ts_ns: u64| -> bool {
        match (&timeline, mode) {
            (None, _) => true,
            (Some(t), MotionMode::StaticOnly) => t.is_static(ts_ns),
            (Some(t), MotionMode::MovingOnly) => !t.is_static(ts_ns),
            _ => true,
        }
    };

    let mut throughputs = Vec::new();
    let mut delays = Vec::new();
    let mut delay_total = 0usize;
    let mut delay_lost = 0usize;
    let mut rssi_robot = Vec::new();
    let mut rssi_station = Vec::new();
    // Error counter readings grouped by epoch, in stream order.
    let mut error_runs: Vec<(u32, u64, u64)> = Vec::new(); // (epoch, first, last)

    for record in &trace.records {
        let sample = match record {
            TraceRecord::Sample(s) => s,
            TraceRecord::Motion(_) => continue,
        };
        if !included(sample.ts_ns) {
            continue;
        }
        match &sample.body {
            MetricBody::Throughput(b) => throughputs.push(b.total_mbps),
            MetricBody::Delay(b) => {
                delay_total += 1;
                if b.is_timed_out() {
                    delay_lost += 1;
                } else {
                    delays.push(b.rtt_ms());
                }
            }
            MetricBody::Rssi(b) => match sample.side {
                Side::Robot => rssi_robot.push(b.rssi_dbm),
                Side::Station => rssi_station.push(b.rssi_dbm),
            },
            MetricBody::Errors(b) => match error_runs.last_mut() {
                Some((epoch, _, last)) if *epoch == b.epoch => *last = b.retransmits_cum,
                _ => error_runs.push((b.epoch, b.retransmits_cum, b.retransmits_cum)),
            },
        }
    }

    let total_samples =
        throughputs.len() + delay_total + rssi_robot.len() + rssi_station.len() + error_runs.len();
    if total_samples == 0 {
        return Err(RecordError::EmptyAfterFilter {
            context: format!("{mode:?}"),
        });
    }

    let retransmits_cum = if error_runs.is_empty() {
        None
    } else {
        Some(
            error_runs
                .iter()
                .map(|(_, first, last)| last.saturating_sub(*first))
                .sum(),
        )
    };

    Ok(SummaryRow {
        case_id: trace.header.case.case_id.clone(),
        baseline: trace.header.case.is_baseline(),
        throughput_mbps: mean_std(&throughputs),
        delay_ms: mean_std(&delays),
        loss_pct: if delay_total > 0 {
            Some(100.0 * delay_lost as f64 / delay_total as f64)
        } else {
            None
        },
        rssi_robot_dbm: mean_std(&rssi_robot),
        rssi_station_dbm: mean_std(&rssi_station),
        retransmits_cum,
        delay_samples: delay_total,
    })
}

/// Summaries for the static and moving portions of one annotated trace.
pub fn static_vs_moving(
    trace: &TraceFile,
    filter: &MotionFilter,
) -> Result<(SummaryRow, SummaryRow), RecordError> {
    let static_row = summarize(trace, MotionMode::StaticOnly, filter)?;
    let moving_row = summarize(trace, MotionMode::MovingOnly, filter)?;
    Ok((static_row, moving_row))
}

/// Per-column best-of markers for one row of the comparison table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BestFlags {
    pub throughput: bool,
    pub delay: bool,
    pub loss: bool,
    pub rssi_robot: bool,
    pub rssi_station: bool,
    pub retransmits: bool,
}

/// Rendered cross-case comparison: rows plus their best-of flags.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub rows: Vec<SummaryRow>,
    pub flags: Vec<BestFlags>,
}

fn flag_best<T: PartialOrd + Copy>(
    rows: &[SummaryRow],
    flags: &mut [BestFlags],
    value: impl Fn(&SummaryRow) -> Option<T>,
    better: impl Fn(T, T) -> bool,
    set: impl Fn(&mut BestFlags),
) {
    let best = rows
        .iter()
        .filter(|r| !r.baseline)
        .filter_map(&value)
        .fold(None::<T>, |acc, v| match acc {
            None => Some(v),
            Some(b) if better(v, b) => Some(v),
            other => other,
        });
    if let Some(best) = best {
        for (row, flag) in rows.iter().zip(flags.iter_mut()) {
            if row.baseline {
                continue;
            }
            if let Some(v) = value(row) {
                // Ties: every tied row is flagged.
                if v == best {
                    set(flag);
                }
            }
        }
    }
}

/// Flags the best value per column across rows: max throughput, min delay
/// mean, min loss, max RSSI per side, min retransmits. Baseline rows are
/// excluded from best-of but still rendered; ties flag all tied rows.
pub fn compare_cases(rows: Vec<SummaryRow>) -> ComparisonTable {
    let mut flags = vec![BestFlags::default(); rows.len()];
    flag_best(&rows, &mut flags, |r| r.throughput_mbps.map(|m| m.mean), |a, b| a > b, |f| f.throughput = true);
    flag_best(&rows, &mut flags, |r| r.delay_ms.map(|m| m.mean), |a, b| a < b, |f| f.delay = true);
    flag_best(&rows, &mut flags, |r| r.loss_pct, |a, b| a < b, |f| f.loss = true);
    flag_best(&rows, &mut flags, |r| r.rssi_robot_dbm.map(|m| m.mean), |a, b| a > b, |f| f.rssi_robot = true);
    flag_best(&rows, &mut flags, |r| r.rssi_station_dbm.map(|m| m.mean), |a, b| a > b, |f| f.rssi_station = true);
    flag_best(&rows, &mut flags, |r| r.retransmits_cum, |a, b| a < b, |f| f.retransmits = true);
    ComparisonTable { rows, flags }
}

fn fmt_stat(stat: &Option<MeanStd>, flagged: bool) -> String {
    match stat {
        Some(m) => {
            let star = if flagged { "*" } else { "" };
            format!("{star}{:.1} ({:.1})", m.mean, m.std)
        }
        None => "N/A".into(),
    }
}

impl ComparisonTable {
    /// Aligned plain-text rendering; `*` marks the best value per column.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let headers = [
            "case", "tput M(std) mbps", "delay M(std) ms", "% loss", "rssi robot", "rssi station",
            "retransmits",
        ];
        let mut grid: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
        for (row, flag) in self.rows.iter().zip(&self.flags) {
            let case = if row.baseline {
                format!("{} (baseline)", row.case_id)
            } else {
                row.case_id.to_string()
            };
            grid.push(vec![
                case,
                fmt_stat(&row.throughput_mbps, flag.throughput),
                fmt_stat(&row.delay_ms, flag.delay),
                row.loss_pct
                    .map(|l| format!("{}{l:.1}", if flag.loss { "*" } else { "" }))
                    .unwrap_or_else(|| "N/A".into()),
                fmt_stat(&row.rssi_robot_dbm, flag.rssi_robot),
                fmt_stat(&row.rssi_station_dbm, flag.rssi_station),
                row.retransmits_cum
                    .map(|r| format!("{}{r}", if flag.retransmits { "*" } else { "" }))
                    .unwrap_or_else(|| "N/A".into()),
            ]);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|col| grid.iter().map(|row| row[col].len()).max().unwrap_or(0))
            .collect();
        for row in &grid {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// One JSON object per row, same object format as trace lines.
    pub fn render_json(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row).expect("summary rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "case,baseline,tput_mean_mbps,tput_std_mbps,delay_mean_ms,delay_std_ms,loss_pct,rssi_robot_mean_dbm,rssi_robot_std_db,rssi_station_mean_dbm,rssi_station_std_db,retransmits_cum\n",
        );
        let opt_pair = |m: &Option<MeanStd>| match m {
            Some(m) => format!("{},{}", m.mean, m.std),
            None => ",".into(),
        };
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.case_id,
                row.baseline,
                opt_pair(&row.throughput_mbps),
                opt_pair(&row.delay_ms),
                row.loss_pct.map(|l| l.to_string()).unwrap_or_default(),
                format!(
                    "{},{}",
                    opt_pair(&row.rssi_robot_dbm),
                    opt_pair(&row.rssi_station_dbm)
                ),
                row.retransmits_cum.map(|r| r.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}
