//! Blocking UDP drivers for the server and client state machines. Each
//! participant runs on one thread and paces its own frames.

use std::collections::HashMap;
use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::{ClientState, FrameSample, Incoming, ParticipantId, ServerState, SessionError, SERVER_ID};

const MAX_DATAGRAM: usize = 65_536;
pub const DEFAULT_PORT: u16 = 47_001;

#[derive(Debug, Clone, Copy)]
pub struct UdpRunOptions {
    pub frame_ns: i64,
    /// Stop after this long; `None` runs until idle.
    pub duration: Option<Duration>,
    /// Client only: give up after this long without a datagram.
    pub idle_timeout: Duration,
    /// Added to the participant's clock reading.
    pub clock_skew_ns: i64,
}

impl Default for UdpRunOptions {
    fn default() -> Self {
        Self { frame_ns: 25_000_000, duration: None, idle_timeout: Duration::from_secs(10), clock_skew_ns: 0 }
    }
}

/// A rendered frame with the wall time since the shared epoch and the
/// participant's estimate of the server time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedFrame {
    pub wall_ns: i64,
    pub server_ns: i64,
    pub frame: FrameSample,
}

fn elapsed_ns(epoch: Instant) -> i64 {
    epoch.elapsed().as_nanos() as i64
}

fn recv_until(socket: &UdpSocket, epoch: Instant, deadline_ns: i64) -> std::io::Result<Vec<(SocketAddr, Vec<u8>, i64)>> {
    let mut got = Vec::new();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    loop {
        let now = elapsed_ns(epoch);
        if now >= deadline_ns {
            return Ok(got);
        }
        socket.set_read_timeout(Some(Duration::from_nanos((deadline_ns - now) as u64)))?;
        match socket.recv_from(&mut buf) {
            Ok((n, addr)) => got.push((addr, buf[..n].to_vec(), elapsed_ns(epoch))),
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                return Ok(got)
            }
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionRefused => {
                debug!("peer not listening yet: {e}");
            }
            Err(e) => return Err(e),
        }
    }
}

/// Runs `server` on `socket` until `opts.duration` elapses. Every new
/// source address becomes a participant. The server clock is the time
/// since `epoch`.
pub fn run_server(
    mut server: ServerState,
    socket: &UdpSocket,
    epoch: Instant,
    opts: UdpRunOptions,
) -> Result<(ServerState, Vec<TimedFrame>), SessionError> {
    let stop_ns = opts.duration.map_or(i64::MAX, |d| d.as_nanos() as i64);
    let mut ids: HashMap<SocketAddr, ParticipantId> = HashMap::new();
    let mut addrs: HashMap<ParticipantId, SocketAddr> = HashMap::new();
    let mut frames = Vec::new();
    let mut next_frame = elapsed_ns(epoch);
    while next_frame < stop_ns {
        let received = recv_until(socket, epoch, next_frame)?;
        let mut inbox = Vec::with_capacity(received.len());
        for (addr, bytes, at) in received {
            let id = *ids.entry(addr).or_insert_with(|| {
                let id = addrs.len() as ParticipantId + 1;
                info!("participant {id} joined from {addr}");
                addrs.insert(id, addr);
                id
            });
            inbox.push(Incoming { from: id, received_at_ns: at, bytes });
        }
        let now = elapsed_ns(epoch).max(next_frame);
        for out in server.step(now, inbox)? {
            if let Some(addr) = addrs.get(&out.to) {
                if let Err(e) = socket.send_to(&out.bytes, addr) {
                    warn!("send to participant {} failed: {e}", out.to);
                }
            }
        }
        let frame = server.render(now)?;
        frames.push(TimedFrame { wall_ns: now, server_ns: now, frame });
        next_frame += opts.frame_ns;
    }
    Ok((server, frames))
}

/// Runs `client` against `server_addr` until `opts.duration` elapses or
/// the server has been silent for `opts.idle_timeout`.
pub fn run_client(
    mut client: ClientState,
    socket: &UdpSocket,
    server_addr: SocketAddr,
    epoch: Instant,
    opts: UdpRunOptions,
) -> Result<(ClientState, Vec<TimedFrame>), SessionError> {
    let stop_ns = opts.duration.map_or(i64::MAX, |d| d.as_nanos() as i64);
    let idle_ns = opts.idle_timeout.as_nanos() as i64;
    let mut last_heard = elapsed_ns(epoch);
    let mut frames = Vec::new();
    let mut next_frame = elapsed_ns(epoch);
    while next_frame < stop_ns {
        let received = recv_until(socket, epoch, next_frame)?;
        let mut inbox = Vec::with_capacity(received.len());
        for (addr, bytes, at) in received {
            if addr != server_addr {
                debug!("ignoring datagram from {addr}");
                continue;
            }
            last_heard = at;
            inbox.push(Incoming { from: SERVER_ID, received_at_ns: at + opts.clock_skew_ns, bytes });
        }
        let wall = elapsed_ns(epoch).max(next_frame);
        if wall - last_heard > idle_ns {
            info!("client {}: server silent for {:?}, leaving", client.id(), opts.idle_timeout);
            break;
        }
        let local = wall + opts.clock_skew_ns;
        let (frame, outgoing) = client.step(local, inbox)?;
        for out in outgoing {
            if let Err(e) = socket.send_to(&out.bytes, server_addr) {
                warn!("client {}: send failed: {e}", client.id());
            }
        }
        if let Some(frame) = frame {
            frames.push(TimedFrame { wall_ns: wall, server_ns: client.server_time(local), frame });
        }
        next_frame += opts.frame_ns;
    }
    Ok((client, frames))
}
