//! `netmeter` command line: probe serve/client, live recording, simulation,
//! the full experiment suite, and trace analysis.
//!
//! Exit codes: 0 success, 2 data errors, 3 empty analysis after filtering,
//! 64 usage errors.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use netmeter::collect::{run_collector, Clock, CollectorConfig, SystemClock};
use netmeter::model::{ExperimentCase, Side, TraceHeader, TraceOrigin};
use netmeter::probe::{self, ProbeConfig};
use netmeter::record::{
    compare_cases, read_trace, summarize, MotionFilter, MotionMode, ReadMode, RecordError,
    SummaryRow, TraceWriter,
};
use netmeter::sim::{self, preset_case, CasePreset, Trajectory};

const EXIT_OK: i32 = 0;
const EXIT_DATA: i32 = 2;
const EXIT_EMPTY: i32 = 3;
const EXIT_USAGE: i32 = 64;

#[derive(Parser)]
#[command(name = "netmeter", version, about = "Wireless link performance measurement and simulation toolkit")]
struct Cli {
    /// JSON config file with "channel", "collector", and "probe" sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Increase log verbosity
    #[arg(short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Silence all logging
    #[arg(short = 'q', global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Round-trip delay probe server and client
    Probe {
        #[command(subcommand)]
        command: ProbeCommand,
    },
    /// Record live metrics from OS statistics sources into a trace
    Record(RecordArgs),
    /// Generate a synthetic trace for one experiment case
    Simulate(SimulateArgs),
    /// Simulate and compare a set of experiment cases
    Suite(SuiteArgs),
    /// Summarize one or more traces and render the comparison table
    Analyze(AnalyzeArgs),
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Run the echo server
    Serve {
        /// Address to bind, e.g. 0.0.0.0:9999
        #[arg(long)]
        listen: String,
    },
    /// Run the probing client and record delay samples
    Client(ProbeClientArgs),
}

#[derive(Args)]
struct ProbeClientArgs {
    /// Probe server address, e.g. 192.168.1.10:9999
    #[arg(long)]
    server: String,
    /// Probes per second
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Probe timeout in milliseconds
    #[arg(long = "timeout-ms", default_value_t = 2000.0)]
    timeout_ms: f64,
    /// Payload size in bytes
    #[arg(long, default_value_t = 64)]
    payload: usize,
    /// Stop after this many samples (runs until interrupted if omitted)
    #[arg(long)]
    count: Option<u64>,
    /// Output trace path
    #[arg(long)]
    out: PathBuf,
    /// Experiment case id (1-10) for the trace header
    #[arg(long, default_value_t = 1)]
    case: u8,
    /// Which side of the link this client runs on
    #[arg(long, default_value = "robot")]
    side: SideArg,
}

#[derive(Args)]
struct RecordArgs {
    /// Experiment case id (1-10) for the trace header
    #[arg(long)]
    case: u8,
    /// Output trace path
    #[arg(long)]
    out: PathBuf,
    /// Interface to collect from (defaults to the case's robot interface)
    #[arg(long)]
    iface: Option<String>,
    /// Root of the statistics tree (contains wireless, dev, netstat)
    #[arg(long, default_value = "/proc/net")]
    stats_root: PathBuf,
    /// Recording duration in seconds
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Optional probe server to measure delay against while recording
    #[arg(long)]
    probe_server: Option<String>,
    /// Which side of the link this recorder runs on
    #[arg(long, default_value = "robot")]
    side: SideArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Case id 1-10, or a path to a JSON preset file
    #[arg(long)]
    case: String,
    /// Trajectory file (`t x y` lines plus a `station x y` directive);
    /// built-in exploration path if omitted
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Simulated duration in seconds
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Random seed
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output trace path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SuiteArgs {
    /// Run all ten catalogued cases
    #[arg(long, conflicts_with = "cases")]
    all_cases: bool,
    /// Comma-separated case ids to run
    #[arg(long, value_delimiter = ',')]
    cases: Vec<u8>,
    /// Trajectory file; built-in exploration path if omitted
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Simulated duration in seconds
    #[arg(long, default_value_t = 300.0)]
    duration: f64,
    /// Random seed (per-case seeds derive from it)
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Directory for the generated traces
    #[arg(long)]
    outdir: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trace files to summarize
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Restrict statistics to static or moving intervals
    #[arg(long, default_value = "all")]
    motion: MotionArg,
    /// Output format
    #[arg(long, default_value = "table")]
    emit: EmitArg,
    /// Skip corrupt record lines instead of failing
    #[arg(long)]
    lenient: bool,
    /// Sidecar file of `static <start_ns> <end_ns>` intervals for traces
    /// without motion annotations
    #[arg(long)]
    motion_intervals: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SideArg {
    Robot,
    Station,
}

impl From<SideArg> for Side {
    fn from(side: SideArg) -> Side {
        match side {
            SideArg::Robot => Side::Robot,
            SideArg::Station => Side::Station,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MotionArg {
    All,
    Static,
    Moving,
}

impl From<MotionArg> for MotionMode {
    fn from(arg: MotionArg) -> MotionMode {
        match arg {
            MotionArg::All => MotionMode::All,
            MotionArg::Static => MotionMode::StaticOnly,
            MotionArg::Moving => MotionMode::MovingOnly,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EmitArg {
    Table,
    Csv,
    Json,
}

fn main() {
    std::process::exit(run());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };

    let level = if cli.quiet {
        log::LevelFilter::Off
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).init();

    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code
        }
    }
}

struct CliError {
    message: String,
    exit_code: i32,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

fn data_err(message: impl std::fmt::Display) -> CliError {
    CliError {
        message: message.to_string(),
        exit_code: EXIT_DATA,
    }
}

fn usage_err(message: impl std::fmt::Display) -> CliError {
    CliError {
        message: message.to_string(),
        exit_code: EXIT_USAGE,
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Probe { command } => match command {
            ProbeCommand::Serve { listen } => cmd_probe_serve(&listen),
            ProbeCommand::Client(args) => cmd_probe_client(args),
        },
        Command::Record(args) => cmd_record(args),
        Command::Simulate(args) => cmd_simulate(args, cli.config.as_deref()),
        Command::Suite(args) => cmd_suite(args),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

fn cmd_probe_serve(listen: &str) -> Result<i32, CliError> {
    let handle = probe::serve(listen).map_err(|e| data_err(format!("probe serve: {e}")))?;
    println!("probe server listening on {}", handle.local_addr());
    // Runs until killed; every reply is stateless so interruption is safe.
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}

fn make_header(case_id: u8) -> Result<TraceHeader, CliError> {
    let case = ExperimentCase::catalogued(case_id).map_err(usage_err)?;
    TraceHeader::new(case, chrono::Utc::now(), TraceOrigin::Measured, None).map_err(data_err)
}

fn cmd_probe_client(args: ProbeClientArgs) -> Result<i32, CliError> {
    let cfg = ProbeConfig {
        server: args.server,
        rate_hz: args.rate,
        timeout_ms: args.timeout_ms,
        payload_len: args.payload,
        iface: "probe".into(),
    };
    cfg.validate().map_err(usage_err)?;
    let header = make_header(args.case)?;
    let writer = TraceWriter::create(&args.out, &header).map_err(data_err)?;
    let stop = Arc::new(AtomicBool::new(false));
    let clock = SystemClock::new();
    let emitted = probe::measure_rtt(&cfg, args.side.into(), &clock, &writer, &stop, args.count)
        .map_err(data_err)?;
    writer.finish().map_err(data_err)?;
    println!("recorded {emitted} delay samples to {}", args.out.display());
    Ok(EXIT_OK)
}

fn cmd_record(args: RecordArgs) -> Result<i32, CliError> {
    let header = make_header(args.case)?;
    let iface = args.iface.unwrap_or_else(|| header.case.robot_iface.clone());
    let mut collector_cfg = CollectorConfig::new(iface);
    collector_cfg.stats_source_root = args.stats_root;
    collector_cfg.validate().map_err(usage_err)?;

    let writer = Arc::new(TraceWriter::create(&args.out, &header).map_err(data_err)?);
    let stop = Arc::new(AtomicBool::new(false));
    let clock = Arc::new(SystemClock::new());
    let side: Side = args.side.into();

    let mut threads = Vec::new();
    {
        let writer = Arc::clone(&writer);
        let stop = Arc::clone(&stop);
        let clock = Arc::clone(&clock);
        let cfg = collector_cfg.clone();
        threads.push(std::thread::spawn(move || {
            if let Err(e) = run_collector(&cfg, side, clock.as_ref(), writer.as_ref(), &stop) {
                log::error!("collector failed: {e}");
            }
        }));
    }
    if let Some(server) = args.probe_server {
        let cfg = ProbeConfig::new(server);
        cfg.validate().map_err(usage_err)?;
        let writer = Arc::clone(&writer);
        let stop = Arc::clone(&stop);
        let clock = Arc::clone(&clock);
        threads.push(std::thread::spawn(move || {
            if let Err(e) =
                probe::measure_rtt(&cfg, side, clock.as_ref(), writer.as_ref(), &stop, None)
            {
                log::error!("probe client failed: {e}");
            }
        }));
    }

    let deadline_ns = (args.duration * 1e9) as u64;
    while clock.now_ns() < deadline_ns && !stop.load(Ordering::SeqCst) {
        std::thread::sleep(std::time::Duration::from_millis(100));
    }
    stop.store(true, Ordering::SeqCst);
    for t in threads {
        let _ = t.join();
    }
    println!("recorded to {}", args.out.display());
    Ok(EXIT_OK)
}

fn load_preset(spec: &str, config: Option<&Path>) -> Result<CasePreset, CliError> {
    let mut preset = if let Ok(id) = spec.parse::<u8>() {
        preset_case(id).map_err(usage_err)?
    } else {
        let text = std::fs::read_to_string(spec)
            .map_err(|e| usage_err(format!("--case file {spec}: {e}")))?;
        let preset: CasePreset =
            serde_json::from_str(&text).map_err(|e| data_err(format!("--case file {spec}: {e}")))?;
        preset.validate().map_err(data_err)?;
        preset
    };
    // A --config channel section overrides the preset's channel constants.
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage_err(format!("--config {}: {e}", path.display())))?;
        if text.contains("\"channel\"") {
            let channel = netmeter::channel::ChannelParams::from_config_str(&text)
                .map_err(|e| data_err(format!("--config {}: {e}", path.display())))?;
            preset.channel = channel;
        }
    }
    Ok(preset)
}

fn load_trajectory(path: Option<&Path>) -> Result<Trajectory, CliError> {
    match path {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage_err(format!("--trajectory {}: {e}", path.display())))?;
            Trajectory::parse(&text).map_err(data_err)
        }
        None => Ok(Trajectory::default_exploration()),
    }
}

fn cmd_simulate(args: SimulateArgs, config: Option<&Path>) -> Result<i32, CliError> {
    let preset = load_preset(&args.case, config)?;
    let traj = load_trajectory(args.trajectory.as_deref())?;
    let trace = sim::simulate(&preset, &traj, args.duration, args.seed).map_err(data_err)?;
    sim::write_trace(&trace, &args.out).map_err(data_err)?;
    println!(
        "simulated case {} for {} s (seed {}) -> {}",
        preset.case.case_id,
        args.duration,
        args.seed,
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_suite(args: SuiteArgs) -> Result<i32, CliError> {
    let case_ids: Vec<u8> = if args.all_cases {
        (1..=10).collect()
    } else if !args.cases.is_empty() {
        args.cases.clone()
    } else {
        return Err(usage_err("one of --all-cases or --cases is required"));
    };
    let presets: Vec<CasePreset> = case_ids
        .iter()
        .map(|&id| preset_case(id).map_err(usage_err))
        .collect::<Result<_, _>>()?;
    let traj = load_trajectory(args.trajectory.as_deref())?;
    let (results, table) =
        sim::run_experiment_suite(&presets, &traj, args.duration, args.seed, &args.outdir)
            .map_err(data_err)?;
    for (path, _) in &results {
        println!("wrote {}", path.display());
    }
    print!("{}", table.render_text());
    Ok(EXIT_OK)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<i32, CliError> {
    let mode: MotionMode = args.motion.into();
    let filter = match &args.motion_intervals {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage_err(format!("--motion-intervals {}: {e}", path.display())))?;
            MotionFilter::from_intervals_text(&text).map_err(data_err)?
        }
        None => MotionFilter::default(),
    };
    let read_mode = if args.lenient {
        ReadMode::Lenient
    } else {
        ReadMode::Strict
    };

    let mut rows: Vec<SummaryRow> = Vec::new();
    for path in &args.traces {
        let loaded = read_trace(path, read_mode).map_err(data_err)?;
        if loaded.skipped_lines > 0 {
            log::warn!("{}: skipped {} lines", path.display(), loaded.skipped_lines);
        }
        if loaded.dropped_truncated_tail {
            log::warn!("{}: dropped truncated final line", path.display());
        }
        let row = summarize(&loaded.trace, mode, &filter).map_err(|e| match e {
            RecordError::EmptyAfterFilter { .. } => CliError {
                message: format!("{}: {e}", path.display()),
                exit_code: EXIT_EMPTY,
            },
            other => data_err(format!("{}: {other}", path.display())),
        })?;
        rows.push(row);
    }

    let table = compare_cases(rows);
    match args.emit {
        EmitArg::Table => print!("{}", table.render_text()),
        EmitArg::Csv => print!("{}", table.render_csv()),
        EmitArg::Json => print!("{}", table.render_json()),
    }
    Ok(EXIT_OK)
}
