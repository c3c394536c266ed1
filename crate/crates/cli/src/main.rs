//! `blindwalk`: run simulations, validate layouts, fit threshold data, plan
//! threshold sessions and host interactive sessions.
//!
//! Exit codes: 0 success; 1 layout violations (`validate`); 2 unreadable or
//! invalid input; 3 a run recorded violations.

use std::fs::{self, File};
use std::io::{self, BufWriter, IsTerminal, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blindwalk_core::gain::{detection_range, FitWarning};
use blindwalk_core::session::{parse_input_log, replay};
use blindwalk_core::simulator::{check_trace_invariants, parse_trace, run, RunConfig, RunMetrics, SimError};
use blindwalk_core::{
    fit_psychometric, parse_layout, plan_threshold_session, pse, validate, DistanceClass, RealSpace, ResponseSample,
};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use tracing::{error, info, warn};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "blindwalk", version, about = "Change-blindness redirected walking simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted simulation and print its metrics as JSON.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Trace output (JSON lines); overrides the config.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metrics output file; overrides the config. Metrics always go to stdout too.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Replay a recorded session input log instead of running the policy.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
    /// Check a layout against a tracked space.
    Validate {
        #[arg(long)]
        layout: PathBuf,
        /// Tracked space as WIDTHxDEPTH in meters; defaults to the layout's own.
        #[arg(long, value_parser = parse_real)]
        real: Option<(f64, f64)>,
    },
    /// Fit a psychometric function per distance class to response data.
    Fit {
        /// CSV with header distance_class,gain,answered_larger.
        #[arg(long)]
        responses: PathBuf,
    },
    /// Print a randomized 45-trial threshold session as CSV.
    Plan {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Host an interactive session for the steering UI.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
    },
}

fn parse_real(s: &str) -> Result<(f64, f64), String> {
    let (w, d) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxDEPTH, got {s:?}"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && *x > 0.0)
            .ok_or_else(|| format!("bad dimension {v:?}"))
    };
    Ok((num(w)?, num(d)?))
}

const EXIT_VIOLATIONS: u8 = 3;
const EXIT_INPUT: u8 = 2;

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("BLINDWALK_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_ansi(io::stderr().is_terminal())
        .with_writer(io::stderr)
        .init();

    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            trace,
            metrics,
            replay,
        } => cmd_run(&config, trace, metrics, replay.as_deref()),
        Command::Validate { layout, real } => cmd_validate(&layout, real),
        Command::Fit { responses } => cmd_fit(&responses),
        Command::Plan { seed } => cmd_plan(seed),
        Command::Serve { config, port, host } => cmd_serve(&config, SocketAddr::new(host, port)),
    }
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

/// Writes to a file (if any) and keeps a copy for the checker.
struct Tee {
    file: Option<BufWriter<File>>,
    copy: Vec<u8>,
}

impl Write for Tee {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(f) = &mut self.file {
            f.write_all(buf)?;
        }
        self.copy.extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.file {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

fn create(path: &Path) -> Result<File, SimError> {
    File::create(path).map_err(|e| SimError::io(path, e))
}

fn cmd_run(config: &Path, trace: Option<PathBuf>, metrics: Option<PathBuf>, replay_log: Option<&Path>) -> ExitCode {
    let (cfg, layout) = match RunConfig::load(config) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let trace_path = trace.or_else(|| cfg.trace.clone());
    let metrics_path = metrics.or_else(|| cfg.metrics.clone());
    let file = match trace_path.as_deref().map(create).transpose() {
        Ok(f) => f.map(BufWriter::new),
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let mut tee = Tee { file, copy: Vec::new() };
    let result = match replay_log {
        Some(path) => fs::read_to_string(path)
            .map_err(|e| SimError::io(path, e))
            .and_then(|text| parse_input_log(&text))
            .and_then(|log| replay(&cfg, &layout, &log, &mut tee)),
        None => run(&cfg, &layout, &mut tee),
    };
    let m: RunMetrics = match result {
        Ok(m) => m,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    if let Err(e) = tee.flush() {
        return fail(EXIT_INPUT, e);
    }
    info!(ticks = m.ticks, rooms = m.rooms_visited, "run finished");

    let text = String::from_utf8(tee.copy).expect("trace is UTF-8");
    let events = match parse_trace(&text) {
        Ok(ev) => ev,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let checked = check_trace_invariants(&events, &layout, &cfg.thresholds);
    for v in &checked {
        eprintln!("violation at tick {}: {:?}: {}", v.tick, v.kind, v.detail);
    }
    for e in events.iter().filter(|e| e.kind == blindwalk_core::EventKind::Violation) {
        eprintln!(
            "violation at tick {}: {}",
            e.tick,
            e.reason.as_deref().unwrap_or("unspecified")
        );
    }

    let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
    println!("{json}");
    if let Some(path) = metrics_path {
        if let Err(e) = fs::write(&path, format!("{json}\n")) {
            return fail(EXIT_INPUT, SimError::io(&path, e));
        }
    }
    if m.violations > 0 || !checked.is_empty() {
        ExitCode::from(EXIT_VIOLATIONS)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_validate(path: &Path, real: Option<(f64, f64)>) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_INPUT, SimError::io(path, e)),
    };
    let layout = match parse_layout(&text) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let space = real.map_or(layout.real_space, |(w, d)| RealSpace::new(w, d));
    let violations = validate(&layout, &space);
    if violations.is_empty() {
        println!("OK");
        return ExitCode::SUCCESS;
    }
    for v in &violations {
        println!("{v}");
    }
    ExitCode::from(1)
}

#[derive(Deserialize)]
struct ResponseRow {
    distance_class: String,
    gain: f64,
    answered_larger: u8,
}

#[derive(Serialize)]
struct FitReport {
    distance_class: DistanceClass,
    a: f64,
    b: f64,
    pse: f64,
    x25: f64,
    x75: f64,
    warning: Option<FitWarning>,
}

fn read_responses(path: &Path) -> Result<Vec<ResponseSample>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["distance_class", "gain", "answered_larger"] {
        return Err(format!(
            "expected header distance_class,gain,answered_larger, got {:?}",
            headers
        ));
    }
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<ResponseRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| format!("line {line}: {e}"))?;
        let distance_class = DistanceClass::parse(row.distance_class.trim())
            .ok_or_else(|| format!("line {line}: unknown distance class {:?}", row.distance_class))?;
        let answered_larger = match row.answered_larger {
            0 => false,
            1 => true,
            other => return Err(format!("line {line}: answered_larger must be 0 or 1, got {other}")),
        };
        out.push(ResponseSample {
            gain: row.gain,
            distance_class,
            answered_larger,
        });
    }
    if out.is_empty() {
        return Err("no responses".into());
    }
    Ok(out)
}

fn cmd_fit(path: &Path) -> ExitCode {
    let samples = match read_responses(path) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let mut reports = Vec::new();
    for class in DistanceClass::ALL {
        let of_class: Vec<_> = samples.iter().copied().filter(|s| s.distance_class == class).collect();
        if of_class.is_empty() {
            continue;
        }
        let fit = match fit_psychometric(&of_class) {
            Ok(f) => f,
            Err(e) => return fail(EXIT_INPUT, format!("{class}: {e}")),
        };
        if fit.warning.is_some() {
            warn!(%class, "responses are separated; slope clamped");
        }
        let (x25, x75) = detection_range(&fit);
        reports.push(FitReport {
            distance_class: class,
            a: fit.a,
            b: fit.b,
            pse: pse(&fit),
            x25,
            x75,
            warning: fit.warning,
        });
    }
    for r in &reports {
        println!("{}", serde_json::to_string(r).expect("report serializes"));
    }
    ExitCode::SUCCESS
}

fn cmd_plan(seed: u64) -> ExitCode {
    let mut out = csv::Writer::from_writer(io::stdout().lock());
    let mut write = || -> csv::Result<()> {
        out.write_record(["trial", "distance_class", "gain", "repeat_index"])?;
        for (i, t) in plan_threshold_session(seed).iter().enumerate() {
            out.write_record([
                (i + 1).to_string(),
                t.distance_class.to_string(),
                t.gain.to_string(),
                t.repeat_index.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    };
    match write() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_INPUT, e),
    }
}

fn cmd_serve(config: &Path, addr: SocketAddr) -> ExitCode {
    let (cfg, layout) = match RunConfig::load(config) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    let trace_path = cfg
        .trace
        .clone()
        .unwrap_or_else(|| PathBuf::from("session.trace.jsonl"));
    let inputs_path = cfg
        .input_log
        .clone()
        .unwrap_or_else(|| trace_path.with_extension("inputs.jsonl"));
    let (trace, inputs) = match (create(&trace_path), create(&inputs_path)) {
        (Ok(t), Ok(i)) => (t, i),
        (Err(e), _) | (_, Err(e)) => return fail(EXIT_INPUT, e),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(EXIT_INPUT, e),
    };
    runtime.block_on(async move {
        let server = match blindwalk_server::start_session(
            &layout,
            &cfg,
            addr,
            Box::new(BufWriter::new(trace)),
            Box::new(BufWriter::new(inputs)),
        )
        .await
        {
            Ok(s) => s,
            Err(e) => return fail(EXIT_INPUT, e),
        };
        eprintln!("listening on ws://{}/session", server.local_addr());
        eprintln!("trace: {}  inputs: {}", trace_path.display(), inputs_path.display());
        shutdown_signal().await;
        info!("shutting down");
        match server.shutdown().await {
            Ok(m) => {
                println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialize"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                error!("{e}");
                fail(EXIT_INPUT, e)
            }
        }
    })
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
