use log::{debug, warn};

use crate::cpo_protocol::{decode_message, encode_sync, ControlPacketObject, Message, SyncKind, SyncMessage};
use crate::lung_model::LungMesh;
use crate::par::Exec;
use crate::timesync::{four_timestamp_offset, DelayEstimator};

use super::breath::{ActiveCycle, Breather, FrameSample};
use super::{Incoming, Outgoing, ParticipantId, SessionError, SERVER_ID};

pub const DEFAULT_PING_INTERVAL_NS: i64 = 250_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientConfig {
    pub id: ParticipantId,
    pub ping_interval_ns: i64,
    /// Apply the estimated server offset when scheduling cycles.
    pub sync_enabled: bool,
    pub alpha: f64,
}

impl ClientConfig {
    pub fn new(id: ParticipantId) -> Self {
        Self { id, ping_interval_ns: DEFAULT_PING_INTERVAL_NS, sync_enabled: true, alpha: crate::timesync::DEFAULT_ALPHA }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub cpos_received: u64,
    pub cpos_applied: u64,
    pub stale_ignored: u64,
    pub decode_errors: u64,
    pub pongs: u64,
    pub rejected_samples: u64,
    pub pings_sent: u64,
}

/// Remote participant. Between packets it dead-reckons from the last CPO
/// on its own clock; the network is never consulted per frame.
#[derive(Debug)]
pub struct ClientState {
    config: ClientConfig,
    active: Option<ActiveCycle>,
    pending: Option<ControlPacketObject>,
    newest_sequence: Option<u64>,
    estimator: DelayEstimator,
    last_ping_ns: Option<i64>,
    last_step_ns: Option<i64>,
    breather: Breather,
    trace: Vec<FrameSample>,
    stats: ClientStats,
}

impl ClientState {
    pub fn new(config: ClientConfig, rest: LungMesh, exec: Exec) -> Result<Self, SessionError> {
        let estimator = DelayEstimator::new(config.alpha)?;
        Ok(Self {
            config,
            active: None,
            pending: None,
            newest_sequence: None,
            estimator,
            last_ping_ns: None,
            last_step_ns: None,
            breather: Breather::new(rest, exec),
            trace: Vec::new(),
            stats: ClientStats::default(),
        })
    }

    pub fn id(&self) -> ParticipantId {
        self.config.id
    }

    pub fn stats(&self) -> ClientStats {
        self.stats
    }

    pub fn estimator(&self) -> &DelayEstimator {
        &self.estimator
    }

    pub fn active(&self) -> Option<&ActiveCycle> {
        self.active.as_ref()
    }

    pub fn trace(&self) -> &[FrameSample] {
        &self.trace
    }

    pub fn mesh(&self) -> Option<&LungMesh> {
        self.breather.mesh()
    }

    /// Offset used for scheduling: the estimate once available, else zero.
    pub fn scheduling_offset_ns(&self) -> i64 {
        if self.config.sync_enabled {
            self.estimator.offset_ns().unwrap_or(0)
        } else {
            0
        }
    }

    /// Local time mapped onto the server clock.
    pub fn server_time(&self, local_ns: i64) -> i64 {
        local_ns + self.scheduling_offset_ns()
    }

    /// Consumes `inbox`, renders a frame if a CPO is active, and emits a
    /// PING when one is due.
    pub fn step(
        &mut self,
        now_ns: i64,
        inbox: Vec<Incoming>,
    ) -> Result<(Option<FrameSample>, Vec<Outgoing>), SessionError> {
        if let Some(last) = self.last_step_ns {
            if now_ns < last {
                return Err(SessionError::ClockRegression { last, now: now_ns });
            }
        }
        self.last_step_ns = Some(now_ns);

        for msg in inbox {
            match decode_message(&msg.bytes) {
                Ok(Message::Cpo(cpo)) => self.accept_cpo(cpo, now_ns),
                Ok(Message::Sync(s)) if s.kind == SyncKind::Pong => {
                    self.stats.pongs += 1;
                    match four_timestamp_offset(s.t0, s.t1, s.t2, msg.received_at_ns) {
                        Ok(sample) => self.estimator = self.estimator.update(sample),
                        Err(e) => {
                            self.stats.rejected_samples += 1;
                            debug!("client {} rejected clock sample: {e}", self.config.id);
                        }
                    }
                }
                Ok(other) => debug!("client {} ignoring {other:?}", self.config.id),
                Err(e) => {
                    self.stats.decode_errors += 1;
                    warn!("client {} dropped malformed datagram: {e}", self.config.id);
                }
            }
        }
        if let Some(p) = &self.pending {
            if p.cycle_start_ns - self.scheduling_offset_ns() <= now_ns {
                let p = self.pending.take().expect("checked");
                self.activate(&p);
            }
        }

        let mut out = Vec::new();
        if self.last_ping_ns.is_none_or(|t| now_ns - t >= self.config.ping_interval_ns) && now_ns >= 0 {
            out.push(Outgoing { to: SERVER_ID, bytes: encode_sync(&SyncMessage::ping(now_ns))? });
            self.last_ping_ns = Some(now_ns);
            self.stats.pings_sent += 1;
        }

        let frame = match &self.active {
            Some(cycle) => {
                let cycle = cycle.clone();
                let frame = self.breather.render(&cycle, now_ns, self.scheduling_offset_ns())?;
                self.trace.push(frame);
                Some(frame)
            }
            None => None,
        };
        Ok((frame, out))
    }

    fn accept_cpo(&mut self, cpo: ControlPacketObject, now_ns: i64) {
        self.stats.cpos_received += 1;
        if self.newest_sequence.is_some_and(|s| cpo.sequence <= s) {
            self.stats.stale_ignored += 1;
            return;
        }
        self.newest_sequence = Some(cpo.sequence);
        let local_start = cpo.cycle_start_ns - self.scheduling_offset_ns();
        if cpo.is_param_change() || local_start <= now_ns || self.active.is_none() {
            self.pending = None;
            self.activate(&cpo);
        } else {
            self.pending = Some(cpo);
        }
    }

    fn activate(&mut self, cpo: &ControlPacketObject) {
        match ActiveCycle::from_cpo(cpo) {
            Ok(cycle) => {
                self.active = Some(cycle);
                self.stats.cpos_applied += 1;
            }
            Err(e) => warn!("client {} discarded CPO {}: {e}", self.config.id, cpo.sequence),
        }
    }
}
