use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use log::info;

use lungsync::harness::{
    bench_deform, build_session_inputs, run_scenario, svg_plot, trace_csv, BenchSpec, HarnessError, RunOptions,
    Scenario, TraceRow,
};
use lungsync::lung_model::{make_test_lung, LungMesh, LungShape};
use lungsync::par::Exec;
use lungsync::session::udp::{run_client, run_server, TimedFrame, UdpRunOptions, DEFAULT_PORT};
use lungsync::session::{ClientConfig, ClientState, ServerState};

#[derive(Parser)]
#[command(name = "lungsync", version, about = "Synchronized breathing-lung sessions: run, benchmark, serve, join")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct ExecArgs {
    /// Use the single-threaded code path.
    #[arg(long, global = true)]
    sequential: bool,
}

impl ExecArgs {
    fn exec(self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write traces, drift report and manifest.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write volume.svg.
        #[arg(long)]
        plots: bool,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Time mesh deformation against the 75 frames/s budget.
    Bench {
        #[arg(long, default_value_t = 4)]
        mesh_subdiv: u32,
        #[arg(long, default_value_t = 8)]
        band: usize,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Act as the session server on a UDP socket.
    Serve {
        #[arg(long, default_value_t = SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)))]
        bind: SocketAddr,
        #[arg(long)]
        scenario: PathBuf,
        /// Write the server trace here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seconds to serve; defaults to the scenario length.
        #[arg(long)]
        duration_s: Option<f64>,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Join a server as a client and record the local trace.
    Join {
        #[arg(long)]
        server: SocketAddr,
        #[arg(long)]
        out: PathBuf,
        /// Label for the trace file.
        #[arg(long, default_value_t = 1)]
        id: u32,
        /// Rest mesh; defaults to a subdivision-3 test lung.
        #[arg(long)]
        off: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        mesh_subdiv: u32,
        #[arg(long)]
        duration_s: Option<f64>,
        /// Leave after this long without hearing from the server.
        #[arg(long, default_value_t = 10.0)]
        idle_timeout_s: f64,
        #[arg(long, default_value_t = 40.0)]
        frame_hz: f64,
        /// Add an artificial error to the local clock.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        skew_ms: f64,
        /// Ignore the estimated clock offset.
        #[arg(long)]
        no_sync: bool,
        #[arg(long)]
        plots: bool,
        #[command(flatten)]
        exec: ExecArgs,
    },
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run { scenario, out, seed, plots, exec } => run(&scenario, out, seed, plots, exec.exec()),
        Command::Bench { mesh_subdiv, band, iters, exec } => bench(mesh_subdiv, band, iters, exec.exec()),
        Command::Serve { bind, scenario, out, duration_s, exec } => serve(bind, &scenario, out, duration_s, exec.exec()),
        Command::Join { server, out, id, off, mesh_subdiv, duration_s, idle_timeout_s, frame_hz, skew_ms, no_sync, plots, exec } => {
            let mesh = match off {
                Some(p) => read_mesh(&p)?,
                None => make_test_lung(mesh_subdiv, LungShape::ADULT)?,
            };
            if !positive(frame_hz) || !positive(idle_timeout_s) || duration_s.is_some_and(|d| !positive(d)) {
                return Err(HarnessError::Validation(vec![
                    "frame_hz, idle_timeout_s and duration_s must be positive".into(),
                ]));
            }
            let opts = UdpRunOptions {
                frame_ns: (1e9 / frame_hz).round() as i64,
                duration: duration_s.map(Duration::from_secs_f64),
                idle_timeout: Duration::from_secs_f64(idle_timeout_s),
                clock_skew_ns: (skew_ms * 1e6).round() as i64,
            };
            let config = ClientConfig { sync_enabled: !no_sync, ..ClientConfig::new(id) };
            join(server, &out, ClientState::new(config, mesh, exec.exec())?, opts, plots)
        }
    }
}

fn read_mesh(path: &Path) -> Result<LungMesh, HarnessError> {
    let file = std::fs::File::open(path)
        .map_err(|e| HarnessError::Validation(vec![format!("cannot open {}: {e}", path.display())]))?;
    Ok(LungMesh::read_off(std::io::BufReader::new(file))?)
}

fn run(path: &Path, out: PathBuf, seed: Option<u64>, plots: bool, exec: Exec) -> Result<(), HarnessError> {
    let mut scenario = Scenario::from_path(path)?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let outcome = run_scenario(&scenario, &RunOptions { out_dir: Some(out.clone()), plots, exec })?;
    println!("wrote {} ({} cycles, {} participants)", out.display(), outcome.drift.cycles, scenario.participants);
    for p in &outcome.drift.participants {
        println!(
            "participant {}: mean drift {:.5} %/cycle, max {:.5} %, CPOs received {}",
            p.participant_id,
            p.mean_drift_pct,
            p.max_drift_pct,
            outcome.cpos_received.get(&p.participant_id).copied().unwrap_or(0)
        );
    }
    Ok(())
}

fn bench(subdivisions: u32, band: usize, iters: usize, exec: Exec) -> Result<(), HarnessError> {
    let spec = BenchSpec { exec, ..BenchSpec::new(subdivisions, band, iters) };
    let r = bench_deform(&spec)?;
    println!("nodes {} band {} iterations {} strategy {}", r.nodes, r.band_limit, r.iterations, r.strategy);
    println!("mean {:.3} ms  p95 {:.3} ms  budget {:.1} ms", r.mean_ms, r.p95_ms, r.budget_ms);
    println!("{}  checksum {}", if r.within_budget { "PASS" } else { "FAIL" }, r.checksum);
    Ok(())
}

fn bind(addr: SocketAddr) -> Result<UdpSocket, HarnessError> {
    UdpSocket::bind(addr).map_err(|e| HarnessError::Transport(format!("bind {addr}: {e}")))
}

fn write_trace(dir: &Path, id: u32, frames: &[TimedFrame], time: fn(&TimedFrame) -> i64, plots: bool) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut rows: Vec<TraceRow> = Vec::with_capacity(frames.len());
    for f in frames {
        let t = time(f);
        if rows.last().is_none_or(|r| t > r.time_ns) {
            rows.push(TraceRow {
                time_ns: t,
                pressure: f.frame.pressure,
                volume_l: f.frame.volume_l,
                normalized_volume: f.frame.normalized_volume,
            });
        }
    }
    std::fs::write(dir.join(format!("trace_p{id}.csv")), trace_csv(id, &rows))?;
    if plots {
        let traces = [(id, rows)].into_iter().collect();
        std::fs::write(dir.join(format!("volume_p{id}.svg")), svg_plot(&traces, "normalized volume"))?;
    }
    Ok(())
}

fn serve(addr: SocketAddr, path: &Path, out: Option<PathBuf>, duration_s: Option<f64>, exec: Exec) -> Result<(), HarnessError> {
    let scenario = Scenario::from_path(path)?;
    if duration_s.is_some_and(|d| !positive(d)) {
        return Err(HarnessError::Validation(vec!["duration_s must be positive".into()]));
    }
    let inputs = build_session_inputs(&scenario)?;
    let server = ServerState::new(scenario.params.clone(), inputs.force, inputs.kernel, inputs.mesh, 0, exec)?;
    let socket = bind(addr)?;
    let duration = duration_s.map_or(Duration::from_nanos(scenario.end_ns() as u64), Duration::from_secs_f64);
    info!("serving on {} for {:?}", socket.local_addr()?, duration);
    println!("serving on {}", socket.local_addr()?);
    let opts = UdpRunOptions { frame_ns: scenario.frame_ns(), duration: Some(duration), ..Default::default() };
    let (server, frames) = run_server(server, &socket, Instant::now(), opts)?;
    let joined: Vec<_> = server.participants().collect();
    println!("served {} cycles to {} participants", server.sequence(), joined.len());
    if let Some(dir) = out {
        write_trace(&dir, 0, &frames, |f| f.server_ns, false)?;
    }
    Ok(())
}

fn join(server: SocketAddr, out: &Path, client: ClientState, opts: UdpRunOptions, plots: bool) -> Result<(), HarnessError> {
    let local: SocketAddr = if server.is_ipv4() { ([0, 0, 0, 0], 0).into() } else { (std::net::Ipv6Addr::UNSPECIFIED, 0).into() };
    let socket = bind(local)?;
    let (client, frames) = run_client(client, &socket, server, Instant::now(), opts)?;
    let stats = client.stats();
    if stats.cpos_received == 0 {
        return Err(HarnessError::Transport(format!("no control packets received from {server}")));
    }
    write_trace(out, client.id(), &frames, |f| f.server_ns, plots)?;
    println!(
        "received {} CPOs ({} stale, {} malformed), offset estimate {} ns, {} frames",
        stats.cpos_received,
        stats.stale_ignored,
        stats.decode_errors,
        client.estimator().offset_ns().map_or("n/a".to_string(), |o| o.to_string()),
        frames.len()
    );
    Ok(())
}
