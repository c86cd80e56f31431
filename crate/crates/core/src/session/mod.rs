//! Server and client session state machines plus the transports that
//! carry their datagrams: a seeded in-process network and real UDP.

mod breath;
mod client;
pub mod network;
mod server;
pub mod udp;

use thiserror::Error;

use crate::cpo_protocol::ProtocolError;
use crate::lung_model::LungError;
use crate::timesync::SyncError;

pub use breath::{ActiveCycle, Breather, FrameSample};
pub use client::{ClientConfig, ClientState, ClientStats, DEFAULT_PING_INTERVAL_NS};
pub use network::{simulated_network_deliver, NetworkConfig, NetworkStats, SendEvent, SimNetwork};
pub use server::ServerState;

/// 0 is the server; clients are numbered from 1.
pub type ParticipantId = u32;
pub const SERVER_ID: ParticipantId = 0;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("clock went backwards: {now} ns after {last} ns")]
    ClockRegression { last: i64, now: i64 },
    #[error("{0}")]
    Rejected(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Lung(#[from] LungError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
}

/// A datagram handed to a participant, stamped on the receiver's clock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Incoming {
    pub from: ParticipantId,
    pub received_at_ns: i64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: ParticipantId,
    pub bytes: Vec<u8>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpo_protocol::{decode_cpo, decode_sync, encode_cpo, encode_sync, SyncKind, SyncMessage};
    use crate::lung_model::{build_force_coeffs, make_test_lung, ElasticityKernel, LungShape, PvParams};
    use crate::par::Exec;

    const MS: i64 = 1_000_000;

    fn server() -> ServerState {
        let mesh = make_test_lung(1, LungShape::ADULT).unwrap();
        let f = build_force_coeffs(&mesh, crate::lung_model::Vec3::new(0.0, 0.0, -1.0), 3).unwrap();
        let t = ElasticityKernel::decaying(3, 0.002);
        ServerState::new(PvParams::default(), f, t, mesh, 0, Exec::Sequential).unwrap()
    }

    fn client(id: u32) -> ClientState {
        let mesh = make_test_lung(1, LungShape::ADULT).unwrap();
        ClientState::new(ClientConfig::new(id), mesh, Exec::Sequential).unwrap()
    }

    fn deliver(out: &[Outgoing], to: u32, at: i64) -> Vec<Incoming> {
        out.iter()
            .filter(|o| o.to == to)
            .map(|o| Incoming { from: SERVER_ID, received_at_ns: at, bytes: o.bytes.clone() })
            .collect()
    }

    #[test]
    fn one_cpo_per_cycle() {
        let mut s = server();
        let joined = s.join(1).unwrap();
        assert_eq!(decode_cpo(&joined[0].bytes).unwrap().sequence, 0);
        let period = PvParams::default().period_ns();
        let mut seqs = Vec::new();
        let mut t = 0;
        while t <= 3 * period {
            for o in s.step(t, vec![]).unwrap() {
                seqs.push(decode_cpo(&o.bytes).unwrap().sequence);
            }
            t += 25 * MS;
        }
        assert_eq!(seqs, vec![1, 2, 3]);
        assert_eq!(s.cpos_sent(1), 4);
        assert_eq!(s.cycle_start_ns(), 3 * period);
    }

    #[test]
    fn large_step_crosses_several_boundaries_with_one_packet() {
        let mut s = server();
        s.join(1).unwrap();
        let out = s.step(10 * PvParams::default().period_ns() + 1, vec![]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(decode_cpo(&out[0].bytes).unwrap().sequence, 10);
    }

    #[test]
    fn server_rejects_clock_regression() {
        let mut s = server();
        s.step(100, vec![]).unwrap();
        assert!(matches!(s.step(99, vec![]), Err(SessionError::ClockRegression { .. })));
    }

    #[test]
    fn pong_echoes_timestamps() {
        let mut s = server();
        s.join(1).unwrap();
        let ping = encode_sync(&SyncMessage::ping(7)).unwrap();
        let out = s.step(30, vec![Incoming { from: 1, received_at_ns: 20, bytes: ping }]).unwrap();
        let pong = decode_sync(&out[0].bytes).unwrap();
        assert_eq!(pong, SyncMessage { kind: SyncKind::Pong, t0: 7, t1: 20, t2: 30 });
    }

    #[test]
    fn unknown_sender_is_auto_joined() {
        let mut s = server();
        let ping = encode_sync(&SyncMessage::ping(0)).unwrap();
        let out = s.step(0, vec![Incoming { from: 4, received_at_ns: 0, bytes: ping }]).unwrap();
        assert!(decode_cpo(&out[0].bytes).is_ok());
        assert!(decode_sync(&out[1].bytes).is_ok());
        assert_eq!(s.participants().collect::<Vec<_>>(), vec![4]);
    }

    #[test]
    fn param_change_preserves_phase_and_is_flagged() {
        let mut s = server();
        s.join(1).unwrap();
        let p0 = PvParams::default().period_ns();
        let now = p0 / 4;
        s.request_param_change(PvParams { rate: 20.0, ..PvParams::default() }).unwrap();
        let out = s.step(now, vec![]).unwrap();
        let cpo = decode_cpo(&out[0].bytes).unwrap();
        assert!(cpo.is_param_change());
        assert_eq!(cpo.sequence, 1);
        assert_eq!(cpo.rate, 20.0);
        let p1 = cpo.params().period_ns();
        assert_eq!(now - cpo.cycle_start_ns, p1 / 4);
        assert!(s.request_param_change(PvParams { rate: -1.0, ..PvParams::default() }).is_err());
    }

    #[test]
    fn client_waits_for_first_cpo_then_dead_reckons() {
        let mut s = server();
        let mut c = client(1);
        let (frame, out) = c.step(0, vec![]).unwrap();
        assert!(frame.is_none());
        assert_eq!(out.len(), 1, "first step pings");
        let joined = s.join(1).unwrap();
        let (frame, _) = c.step(10 * MS, deliver(&joined, 1, 10 * MS)).unwrap();
        let frame = frame.unwrap();
        assert_eq!(frame.sequence, 0);
        // No further packets: the client keeps cycling on its own clock.
        let period = PvParams::default().period_ns();
        let (late, _) = c.step(5 * period + 10 * MS, vec![]).unwrap();
        assert!((late.unwrap().phase - frame.phase).abs() < 1e-12);
    }

    #[test]
    fn client_ignores_stale_and_holds_future_cycles() {
        let mut s = server();
        let mut c = client(1);
        let period = PvParams::default().period_ns();
        let first = s.join(1).unwrap();
        let second = s.step(period, vec![]).unwrap();
        c.step(0, deliver(&first, 1, 0)).unwrap();
        // Cycle 1 arrives early (clock ahead of the packet's start): held.
        c.step(period - 5 * MS, deliver(&second, 1, period - 5 * MS)).unwrap();
        assert_eq!(c.active().unwrap().sequence, 0);
        c.step(period, vec![]).unwrap();
        assert_eq!(c.active().unwrap().sequence, 1);
        // Replaying cycle 0 is ignored.
        c.step(period + MS, deliver(&first, 1, period + MS)).unwrap();
        assert_eq!(c.active().unwrap().sequence, 1);
        assert_eq!(c.stats().stale_ignored, 1);
    }

    #[test]
    fn client_survives_garbage() {
        let mut c = client(1);
        let junk = Incoming { from: 0, received_at_ns: 0, bytes: vec![1, 2, 3] };
        let mut bad = encode_cpo(&crate::cpo_protocol::ControlPacketObject::from_params(
            0,
            0,
            &PvParams::default(),
            vec![1.0],
            vec![1.0],
        ))
        .unwrap();
        bad[30] ^= 0xff;
        let bad = Incoming { from: 0, received_at_ns: 0, bytes: bad };
        let (frame, _) = c.step(0, vec![junk, bad]).unwrap();
        assert!(frame.is_none());
        assert_eq!(c.stats().decode_errors, 2);
    }

    #[test]
    fn client_estimates_offset_from_pongs() {
        let mut c = client(1);
        // Server clock is 50 ms ahead; 5 ms each way.
        let (_, out) = c.step(0, vec![]).unwrap();
        let SyncMessage { t0, .. } = decode_sync(&out[0].bytes).unwrap();
        let pong = encode_sync(&SyncMessage::pong(t0, 55 * MS, 56 * MS)).unwrap();
        c.step(11 * MS, vec![Incoming { from: 0, received_at_ns: 11 * MS, bytes: pong }]).unwrap();
        assert_eq!(c.scheduling_offset_ns(), 50 * MS);
        assert_eq!(c.server_time(0), 50 * MS);
    }

    #[test]
    fn server_and_client_agree_without_skew() {
        let mut s = server();
        let mut c = client(1);
        let joined = s.join(1).unwrap();
        c.step(0, deliver(&joined, 1, 0)).unwrap();
        for k in 0..40 {
            let t = k * 100 * MS;
            s.step(t, vec![]).unwrap();
            let a = s.render(t).unwrap();
            let (b, _) = c.step(t, vec![]).unwrap();
            assert!((a.normalized_volume - b.unwrap().normalized_volume).abs() < 1e-12);
        }
    }
}
