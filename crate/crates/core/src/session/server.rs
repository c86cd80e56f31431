use std::collections::BTreeMap;

use log::{debug, warn};

use crate::cpo_protocol::{decode_message, encode_sync, ControlPacketObject, Message, SyncKind, SyncMessage, FLAG_PARAM_CHANGE};
use crate::lung_model::{ElasticityKernel, LungMesh, PvParams};
use crate::par::Exec;
use crate::sphere_harmonics::ShCoefficients;

use super::breath::{ActiveCycle, Breather, FrameSample};
use super::{Incoming, Outgoing, ParticipantId, SessionError, SERVER_ID};

/// Authoritative participant: owns the session clock, broadcasts one CPO
/// per breathing cycle and answers clock-sync pings.
///
/// The server clock reads nanoseconds since the session epoch.
#[derive(Debug)]
pub struct ServerState {
    params: PvParams,
    force: ShCoefficients,
    kernel: ElasticityKernel,
    sequence: u64,
    cycle_start_ns: i64,
    last_step_ns: Option<i64>,
    pending: Option<PvParams>,
    participants: BTreeMap<ParticipantId, u64>,
    current: ControlPacketObject,
    active: ActiveCycle,
    breather: Breather,
    trace: Vec<FrameSample>,
}

impl ServerState {
    /// Starts the first cycle at `epoch_ns` on the server clock.
    pub fn new(
        params: PvParams,
        force: ShCoefficients,
        kernel: ElasticityKernel,
        rest: LungMesh,
        epoch_ns: i64,
        exec: Exec,
    ) -> Result<Self, SessionError> {
        params.validate()?;
        let current =
            ControlPacketObject::from_params(0, epoch_ns, &params, force.as_slice().to_vec(), kernel.as_slice().to_vec());
        let active = ActiveCycle::from_cpo(&current)?;
        Ok(Self {
            params,
            force,
            kernel,
            sequence: 0,
            cycle_start_ns: epoch_ns,
            last_step_ns: None,
            pending: None,
            participants: BTreeMap::new(),
            current,
            active,
            breather: Breather::new(rest, exec),
            trace: Vec::new(),
        })
    }

    pub fn sequence(&self) -> u64 {
        self.sequence
    }

    pub fn params(&self) -> &PvParams {
        &self.params
    }

    pub fn cycle_start_ns(&self) -> i64 {
        self.cycle_start_ns
    }

    pub fn current_cpo(&self) -> &ControlPacketObject {
        &self.current
    }

    pub fn participants(&self) -> impl Iterator<Item = ParticipantId> + '_ {
        self.participants.keys().copied()
    }

    /// CPOs sent to `id` so far.
    pub fn cpos_sent(&self, id: ParticipantId) -> u64 {
        self.participants.get(&id).copied().unwrap_or(0)
    }

    pub fn trace(&self) -> &[FrameSample] {
        &self.trace
    }

    /// Queues new breathing parameters, broadcast on the next step.
    pub fn request_param_change(&mut self, params: PvParams) -> Result<(), SessionError> {
        params.validate()?;
        self.pending = Some(params);
        Ok(())
    }

    /// Registers a participant and hands it the current cycle's CPO.
    pub fn join(&mut self, id: ParticipantId) -> Result<Vec<Outgoing>, SessionError> {
        if id == SERVER_ID {
            return Err(SessionError::Rejected("participant id 0 is reserved for the server".into()));
        }
        let bytes = self.current.clone();
        let bytes = crate::cpo_protocol::encode_cpo(&bytes)?;
        *self.participants.entry(id).or_default() += 1;
        Ok(vec![Outgoing { to: id, bytes }])
    }

    /// Advances to `now_ns`, answering pings, applying a pending parameter
    /// change and broadcasting on cycle boundaries.
    pub fn step(&mut self, now_ns: i64, inbox: Vec<Incoming>) -> Result<Vec<Outgoing>, SessionError> {
        if let Some(last) = self.last_step_ns {
            if now_ns < last {
                return Err(SessionError::ClockRegression { last, now: now_ns });
            }
        }
        self.last_step_ns = Some(now_ns);
        let mut out = Vec::new();

        for msg in inbox {
            if !self.participants.contains_key(&msg.from) && msg.from != SERVER_ID {
                out.extend(self.join(msg.from)?);
            }
            match decode_message(&msg.bytes) {
                Ok(Message::Sync(SyncMessage { kind: SyncKind::Ping, t0, .. })) => {
                    let pong = SyncMessage::pong(t0, msg.received_at_ns.max(0), now_ns.max(msg.received_at_ns).max(0));
                    out.push(Outgoing { to: msg.from, bytes: encode_sync(&pong)? });
                }
                Ok(other) => debug!("server ignoring {other:?} from {}", msg.from),
                Err(e) => warn!("server dropped malformed datagram from {}: {e}", msg.from),
            }
        }

        let period = self.params.period_ns();
        let mut crossed = false;
        while now_ns >= self.cycle_start_ns + period {
            self.cycle_start_ns += period;
            self.sequence += 1;
            crossed = true;
        }
        if crossed {
            self.refresh_current(0)?;
            out.extend(self.broadcast()?);
        }

        if let Some(params) = self.pending.take() {
            // Keep the breathing phase continuous across the rate change.
            let phase = (now_ns - self.cycle_start_ns) as f64 / period as f64;
            self.params = params;
            self.cycle_start_ns = now_ns - (phase * self.params.period_ns() as f64).round() as i64;
            self.sequence += 1;
            self.refresh_current(FLAG_PARAM_CHANGE)?;
            out.extend(self.broadcast()?);
        }
        Ok(out)
    }

    /// Renders the server's own view at `now_ns` and records it.
    pub fn render(&mut self, now_ns: i64) -> Result<FrameSample, SessionError> {
        let frame = self.breather.render(&self.active, now_ns, 0)?;
        self.trace.push(frame);
        Ok(frame)
    }

    fn refresh_current(&mut self, flags: u16) -> Result<(), SessionError> {
        let mut cpo = ControlPacketObject::from_params(
            self.sequence,
            self.cycle_start_ns,
            &self.params,
            self.force.as_slice().to_vec(),
            self.kernel.as_slice().to_vec(),
        );
        cpo.flags = flags;
        self.active = ActiveCycle::from_cpo(&cpo)?;
        self.current = cpo;
        Ok(())
    }

    fn broadcast(&mut self) -> Result<Vec<Outgoing>, SessionError> {
        let bytes = crate::cpo_protocol::encode_cpo(&self.current)?;
        Ok(self
            .participants
            .iter_mut()
            .map(|(id, count)| {
                *count += 1;
                Outgoing { to: *id, bytes: bytes.clone() }
            })
            .collect())
    }
}
