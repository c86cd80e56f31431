use crate::cpo_protocol::ControlPacketObject;
use crate::lung_model::{
    enclosed_volume_with, normalized_volume, pressure_at_phase, Deformer, ElasticityKernel, LungMesh, PvParams,
};
use crate::par::Exec;
use crate::sphere_harmonics::ShCoefficients;
use crate::timesync::BreathingSchedule;

use super::SessionError;

/// Decoded, validated contents of the CPO currently driving a participant.
#[derive(Debug, Clone)]
pub struct ActiveCycle {
    pub sequence: u64,
    pub cycle_start_ns: i64,
    pub params: PvParams,
    pub force: ShCoefficients,
    pub kernel: ElasticityKernel,
}

impl ActiveCycle {
    pub fn from_cpo(cpo: &ControlPacketObject) -> Result<Self, SessionError> {
        let params = cpo.params();
        params.validate()?;
        let force = ShCoefficients::from_flat(cpo.f.clone()).map_err(crate::lung_model::LungError::from)?;
        let kernel = ElasticityKernel::new(cpo.t.clone())?;
        if kernel.len() < force.len() {
            return Err(SessionError::Rejected(format!(
                "CPO {} carries {} elasticity coefficients for {} force coefficients",
                cpo.sequence,
                kernel.len(),
                force.len()
            )));
        }
        Ok(Self { sequence: cpo.sequence, cycle_start_ns: cpo.cycle_start_ns, params, force, kernel })
    }

    /// Schedule on a clock whose offset from the server is `offset_ns`.
    pub fn schedule(&self, offset_ns: i64) -> BreathingSchedule {
        BreathingSchedule::new(self.params.period_ns(), self.cycle_start_ns, offset_ns)
            .expect("validated params give a positive period")
    }
}

/// One rendered frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    /// Participant's own clock.
    pub local_time_ns: i64,
    pub sequence: u64,
    pub phase: f64,
    pub pressure: f64,
    pub volume_l: f64,
    pub normalized_volume: f64,
}

/// Per-participant deformation pipeline over a fixed rest mesh.
#[derive(Debug, Clone)]
pub struct Breather {
    rest: LungMesh,
    deformer: Option<Deformer>,
    exec: Exec,
    mesh: Option<LungMesh>,
}

impl Breather {
    pub fn new(rest: LungMesh, exec: Exec) -> Self {
        Self { rest, deformer: None, exec, mesh: None }
    }

    /// Latest deformed mesh, if any frame has been rendered.
    pub fn mesh(&self) -> Option<&LungMesh> {
        self.mesh.as_ref()
    }

    pub fn rest(&self) -> &LungMesh {
        &self.rest
    }

    pub fn render(
        &mut self,
        cycle: &ActiveCycle,
        local_now_ns: i64,
        offset_ns: i64,
    ) -> Result<FrameSample, SessionError> {
        let band = cycle.force.band_limit();
        if self.deformer.as_ref().map(Deformer::band_limit) != Some(band) {
            self.deformer = Some(Deformer::new(self.rest.clone(), band, self.exec)?);
        }
        let deformer = self.deformer.as_ref().expect("built above");
        let phase = cycle.schedule(offset_ns).phase(local_now_ns);
        let pressure = pressure_at_phase(phase, &cycle.params);
        let mesh = deformer.deform(&cycle.force, &cycle.kernel, pressure, &cycle.params)?;
        let volume_l = enclosed_volume_with(&mesh, self.exec)?;
        self.mesh = Some(mesh);
        Ok(FrameSample {
            local_time_ns: local_now_ns,
            sequence: cycle.sequence,
            phase,
            pressure,
            volume_l,
            normalized_volume: normalized_volume(volume_l, &cycle.params),
        })
    }
}
