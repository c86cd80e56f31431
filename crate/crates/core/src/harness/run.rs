use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use log::info;

use crate::lung_model::{build_force_coeffs, make_test_lung, ElasticityKernel, LungMesh, Vec3};
use crate::par::Exec;
use crate::session::udp::{self, TimedFrame, UdpRunOptions};
use crate::session::{
    ClientConfig, ClientState, FrameSample, Incoming, NetworkStats, ParticipantId, ServerState, SimNetwork,
    SERVER_ID,
};
use crate::sphere_harmonics::ShCoefficients;
use crate::timesync::{drift_per_cycle, DriftReport, TracePoint};

use super::scenario::{Mode, Scenario};
use super::HarnessError;

const UDP_SLACK: Duration = Duration::from_millis(500);

/// One row of a participant trace, timed on the common (server) base.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_ns: i64,
    pub pressure: f64,
    pub volume_l: f64,
    pub normalized_volume: f64,
}

impl TraceRow {
    fn new(time_ns: i64, f: &FrameSample) -> Self {
        Self { time_ns, pressure: f.pressure, volume_l: f.volume_l, normalized_volume: f.normalized_volume }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: Scenario,
    /// Participant 0 is the server.
    pub traces: BTreeMap<ParticipantId, Vec<TraceRow>>,
    pub drift: DriftReport,
    pub cpos_received: BTreeMap<ParticipantId, u64>,
    pub network: Option<NetworkStats>,
    pub rest_mesh: LungMesh,
    pub exec: Exec,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub plots: bool,
    pub exec: Exec,
}

/// Mesh and deformation inputs shared by every participant.
#[derive(Debug, Clone)]
pub struct SessionInputs {
    pub mesh: LungMesh,
    pub force: ShCoefficients,
    pub kernel: ElasticityKernel,
}

pub fn build_session_inputs(s: &Scenario) -> Result<SessionInputs, HarnessError> {
    let mesh = match &s.mesh.off {
        Some(path) => LungMesh::read_off(BufReader::new(File::open(path)?))?,
        None => make_test_lung(s.mesh.subdivisions, s.mesh.shape)?,
    };
    let g = s.gravity_unit();
    let force = build_force_coeffs(&mesh, Vec3::new(g[0], g[1], g[2]), s.band_limit)?;
    let kernel = match &s.kernel.coeffs {
        Some(c) => ElasticityKernel::new(c.clone())?,
        None => ElasticityKernel::decaying(s.band_limit, s.kernel.t0),
    };
    Ok(SessionInputs { mesh, force, kernel })
}

/// Runs the scenario and, if `opts.out_dir` is set, writes the report bundle.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> Result<RunOutcome, HarnessError> {
    s.validate()?;
    let outcome = match s.mode {
        Mode::Simulated => simulate(s, opts.exec)?,
        Mode::Udp => run_udp(s, opts.exec)?,
    };
    if let Some(dir) = opts.out_dir.as_ref().or(s.output_dir.as_ref()) {
        super::report::write_report(&outcome, dir, opts.plots)?;
    }
    Ok(outcome)
}

fn clients(s: &Scenario, mesh: &LungMesh, exec: Exec) -> Result<Vec<ClientState>, HarnessError> {
    (1..s.participants as ParticipantId)
        .map(|id| {
            let config = ClientConfig { sync_enabled: s.sync, ..ClientConfig::new(id) };
            Ok(ClientState::new(config, mesh.clone(), exec)?)
        })
        .collect()
}

/// Single-threaded run over a virtual clock and the seeded network. The
/// server clock is the true time; client `i` reads true time plus its skew.
pub fn simulate(s: &Scenario, exec: Exec) -> Result<RunOutcome, HarnessError> {
    s.validate()?;
    let inputs = build_session_inputs(s)?;
    let mut net = SimNetwork::new(s.network.config(s.seed));
    let mut server =
        ServerState::new(s.params.clone(), inputs.force.clone(), inputs.kernel.clone(), inputs.mesh.clone(), 0, exec)?;
    let mut clients = clients(s, &inputs.mesh, exec)?;
    for c in &clients {
        for o in server.join(c.id())? {
            net.send(0, SERVER_ID, o.to, o.bytes);
        }
    }
    let mut changes: Vec<_> = s.param_changes.iter().collect();
    changes.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    let mut changes = changes.into_iter().peekable();

    let mut traces: BTreeMap<ParticipantId, Vec<TraceRow>> = BTreeMap::new();
    let (frame_ns, end_ns) = (s.frame_ns(), s.end_ns());
    let mut t = 0;
    while t <= end_ns {
        while let Some(c) = changes.next_if(|c| (c.at_s * 1e9).round() as i64 <= t) {
            server.request_param_change(c.params.clone())?;
        }
        let inbox = net
            .deliver_due(t, SERVER_ID)
            .into_iter()
            .map(|d| Incoming { from: d.src, received_at_ns: d.arrival_ns, bytes: d.bytes })
            .collect();
        for o in server.step(t, inbox)? {
            net.send(t, SERVER_ID, o.to, o.bytes);
        }
        let frame = server.render(t)?;
        traces.entry(SERVER_ID).or_default().push(TraceRow::new(t, &frame));

        for c in &mut clients {
            let skew = s.skew_ns(c.id());
            let inbox = net
                .deliver_due(t, c.id())
                .into_iter()
                .map(|d| Incoming { from: d.src, received_at_ns: d.arrival_ns + skew, bytes: d.bytes })
                .collect();
            let (frame, outgoing) = c.step(t + skew, inbox)?;
            for o in outgoing {
                net.send(t, c.id(), o.to, o.bytes);
            }
            if let Some(f) = frame {
                traces.entry(c.id()).or_default().push(TraceRow::new(t, &f));
            }
        }
        t += frame_ns;
    }
    let cpos_received = clients.iter().map(|c| (c.id(), c.stats().cpos_received)).collect();
    finish(s, traces, cpos_received, Some(net.stats()), inputs.mesh, exec)
}

fn run_udp(s: &Scenario, exec: Exec) -> Result<RunOutcome, HarnessError> {
    let inputs = build_session_inputs(s)?;
    let bind: SocketAddr = ([127, 0, 0, 1], s.udp_port.unwrap_or(0)).into();
    let socket = UdpSocket::bind(bind).map_err(|e| HarnessError::Transport(format!("bind {bind}: {e}")))?;
    let server_addr = socket.local_addr()?;
    info!("udp server on {server_addr}");
    let server =
        ServerState::new(s.params.clone(), inputs.force.clone(), inputs.kernel.clone(), inputs.mesh.clone(), 0, exec)?;
    // Extra slack: the clients' first frames wait on a real round trip.
    let run_for = Duration::from_nanos(s.end_ns() as u64) + UDP_SLACK;
    let server_opts = UdpRunOptions { frame_ns: s.frame_ns(), duration: Some(run_for), ..Default::default() };
    let epoch = Instant::now();

    let (server_frames, client_results) = std::thread::scope(|scope| {
        let server_task = scope.spawn(|| udp::run_server(server, &socket, epoch, server_opts));
        let tasks: Vec<_> = clients(s, &inputs.mesh, exec)?
            .into_iter()
            .map(|c| {
                let opts = UdpRunOptions { clock_skew_ns: s.skew_ns(c.id()), ..server_opts };
                scope.spawn(move || -> Result<(ClientState, Vec<TimedFrame>), HarnessError> {
                    let sock = UdpSocket::bind(("127.0.0.1", 0))
                        .map_err(|e| HarnessError::Transport(format!("client bind: {e}")))?;
                    Ok(udp::run_client(c, &sock, server_addr, epoch, opts)?)
                })
            })
            .collect();
        let clients: Vec<_> = tasks.into_iter().map(|t| t.join().expect("client thread panicked")).collect();
        let (_, frames) = server_task.join().expect("server thread panicked")?;
        Ok::<_, HarnessError>((frames, clients))
    })?;

    let mut traces = BTreeMap::new();
    traces.insert(SERVER_ID, rows(&server_frames));
    let mut cpos_received = BTreeMap::new();
    for r in client_results {
        let (client, frames) = r?;
        cpos_received.insert(client.id(), client.stats().cpos_received);
        traces.insert(client.id(), rows(&frames));
    }
    finish(s, traces, cpos_received, None, inputs.mesh, exec)
}

/// Wall-time rows with strictly increasing timestamps.
fn rows(frames: &[TimedFrame]) -> Vec<TraceRow> {
    let mut out: Vec<TraceRow> = Vec::with_capacity(frames.len());
    for f in frames {
        if out.last().is_none_or(|r| f.wall_ns > r.time_ns) {
            out.push(TraceRow::new(f.wall_ns, &f.frame));
        }
    }
    out
}

fn finish(
    s: &Scenario,
    traces: BTreeMap<ParticipantId, Vec<TraceRow>>,
    cpos_received: BTreeMap<ParticipantId, u64>,
    network: Option<NetworkStats>,
    rest_mesh: LungMesh,
    exec: Exec,
) -> Result<RunOutcome, HarnessError> {
    let points: BTreeMap<ParticipantId, Vec<TracePoint>> = traces
        .iter()
        .map(|(id, rows)| (*id, rows.iter().map(|r| TracePoint { time_ns: r.time_ns, value: r.normalized_volume }).collect()))
        .collect();
    let empty = Vec::new();
    let reference = points.get(&SERVER_ID).unwrap_or(&empty);
    let others: Vec<(u32, &[TracePoint])> = (1..s.participants as ParticipantId)
        .map(|id| (id, points.get(&id).map_or(&[][..], Vec::as_slice)))
        .collect();
    let drift = drift_per_cycle((SERVER_ID, reference), &others, s.params.period_ns(), s.samples_per_cycle)?;
    Ok(RunOutcome { scenario: s.clone(), traces, drift, cpos_received, network, rest_mesh, exec })
}
