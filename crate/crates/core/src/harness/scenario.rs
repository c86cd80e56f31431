use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::lung_model::{LungShape, PvParams, MAX_SUBDIVISIONS};
use crate::session::NetworkConfig;
use crate::sphere_harmonics::{coeff_count, L_MAX};

use super::HarnessError;

pub const MAX_PARTICIPANTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Simulated,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Scale of the decaying kernel `t0 / (1 + l)^2`.
    #[serde(default = "default_t0")]
    pub t0: f64,
    /// Explicit per-coefficient kernel; overrides `t0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
}

fn default_t0() -> f64 {
    0.002
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self { t0: default_t0(), coeffs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default = "default_subdivisions")]
    pub subdivisions: u32,
    #[serde(default = "default_shape")]
    pub shape: LungShape,
    /// OFF file; relative paths resolve against the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off: Option<PathBuf>,
}

fn default_subdivisions() -> u32 {
    3
}

fn default_shape() -> LungShape {
    LungShape::ADULT
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { subdivisions: default_subdivisions(), shape: default_shape(), off: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default)]
    pub latency_mean_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub drop_probability: f64,
}

impl NetworkSpec {
    pub fn config(&self, seed: u64) -> NetworkConfig {
        NetworkConfig {
            latency_mean_ns: (self.latency_mean_ms * 1e6).round() as i64,
            jitter_ns: (self.jitter_ms * 1e6).round() as i64,
            drop_probability: self.drop_probability,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamChange {
    pub at_s: f64,
    pub params: PvParams,
}

/// A complete, reproducible description of one session run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Server included.
    pub participants: usize,
    #[serde(default)]
    pub params: PvParams,
    #[serde(default = "default_band_limit")]
    pub band_limit: usize,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub mesh: MeshSpec,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    #[serde(default)]
    pub network: NetworkSpec,
    pub cycles: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Offset correction on clients.
    #[serde(default = "default_true")]
    pub sync: bool,
    /// Per-client clock error in ms (client 1 first); missing entries are 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clock_skew_ms: Vec<f64>,
    #[serde(default = "default_frame_hz")]
    pub frame_hz: f64,
    #[serde(default = "default_samples_per_cycle")]
    pub samples_per_cycle: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub param_changes: Vec<ParamChange>,
    /// UDP mode: server port on 127.0.0.1, 0 for any free port.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub udp_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn default_band_limit() -> usize {
    8
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -1.0]
}

fn default_true() -> bool {
    true
}

fn default_frame_hz() -> f64 {
    40.0
}

fn default_samples_per_cycle() -> usize {
    crate::timesync::DEFAULT_SAMPLES_PER_CYCLE
}

impl Scenario {
    /// Minimal valid scenario with every optional field at its default.
    pub fn new(participants: usize, cycles: usize) -> Self {
        serde_json::from_value(serde_json::json!({ "participants": participants, "cycles": cycles }))
            .expect("defaults deserialize")
    }

    /// Parses and validates; relative OFF paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, HarnessError> {
        let mut s: Scenario =
            serde_json::from_str(text).map_err(|e| HarnessError::Validation(vec![format!("scenario JSON: {e}")]))?;
        if let (Some(off), Some(base)) = (&s.mesh.off, base_dir) {
            if off.is_relative() {
                s.mesh.off = Some(base.join(off));
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(vec![format!("cannot read scenario {}: {e}", path.display())]))?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Validation(v))
        }
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.participants < 2 {
            out.push(format!("participants: need at least 2 (server + client), got {}", self.participants));
        }
        if self.participants > MAX_PARTICIPANTS {
            out.push(format!("participants: at most {MAX_PARTICIPANTS}, got {}", self.participants));
        }
        if self.cycles < 1 {
            out.push("cycles: must be at least 1".into());
        }
        out.extend(self.params.violations().into_iter().map(|v| format!("params: {v}")));
        if self.band_limit > L_MAX {
            out.push(format!("band_limit: {} exceeds {L_MAX}", self.band_limit));
        }
        if !self.kernel.t0.is_finite() {
            out.push("kernel.t0: must be finite".into());
        }
        if let Some(c) = &self.kernel.coeffs {
            let need = coeff_count(self.band_limit.min(L_MAX));
            if c.len() < need {
                out.push(format!("kernel.coeffs: {} entries, band limit needs {need}", c.len()));
            }
            if c.iter().any(|x| !x.is_finite()) {
                out.push("kernel.coeffs: entries must be finite".into());
            }
        }
        match &self.mesh.off {
            Some(p) if !p.is_file() => out.push(format!("mesh.off: {} does not exist", p.display())),
            Some(_) => {}
            None => {
                if self.mesh.subdivisions > MAX_SUBDIVISIONS {
                    out.push(format!("mesh.subdivisions: {} exceeds {MAX_SUBDIVISIONS}", self.mesh.subdivisions));
                }
                if !self.mesh.shape.axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
                    out.push("mesh.shape.axes: must be positive and finite".into());
                }
                if !(self.mesh.shape.lobe_amplitude.abs() < 1.0) {
                    out.push("mesh.shape.lobe_amplitude: magnitude must be below 1".into());
                }
            }
        }
        let g = self.gravity;
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            out.push("gravity: must be a nonzero finite vector".into());
        }
        let n = self.network;
        if !(n.latency_mean_ms >= 0.0 && n.latency_mean_ms.is_finite()) {
            out.push(format!("network.latency_mean_ms: {} must be >= 0", n.latency_mean_ms));
        }
        if !(n.jitter_ms >= 0.0 && n.jitter_ms.is_finite()) {
            out.push(format!("network.jitter_ms: {} must be >= 0", n.jitter_ms));
        }
        if !(0.0..=1.0).contains(&n.drop_probability) {
            out.push(format!("network.drop_probability: {} outside [0, 1]", n.drop_probability));
        }
        if self.clock_skew_ms.len() > self.participants.saturating_sub(1) {
            out.push(format!(
                "clock_skew_ms: {} entries for {} clients",
                self.clock_skew_ms.len(),
                self.participants.saturating_sub(1)
            ));
        }
        if self.clock_skew_ms.iter().any(|s| !s.is_finite() || s.abs() > 3.6e6) {
            out.push("clock_skew_ms: entries must be finite and within one hour".into());
        }
        if !(self.frame_hz > 0.0 && self.frame_hz <= 1000.0) {
            out.push(format!("frame_hz: {} outside (0, 1000]", self.frame_hz));
        }
        if self.samples_per_cycle == 0 {
            out.push("samples_per_cycle: must be at least 1".into());
        }
        let duration_s = if self.params.rate > 0.0 { self.cycles as f64 * self.params.period_s() } else { 0.0 };
        for (i, c) in self.param_changes.iter().enumerate() {
            if !(c.at_s >= 0.0 && c.at_s < duration_s) {
                out.push(format!("param_changes[{i}].at_s: {} outside the run [0, {duration_s})", c.at_s));
            }
            out.extend(c.params.violations().into_iter().map(|v| format!("param_changes[{i}].params: {v}")));
        }
        if self.mode == Mode::Simulated && self.udp_port.is_some() {
            out.push("udp_port: only meaningful in udp mode".into());
        }
        out
    }

    pub fn gravity_unit(&self) -> [f64; 3] {
        let g = self.gravity;
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        [g[0] / n, g[1] / n, g[2] / n]
    }

    pub fn frame_ns(&self) -> i64 {
        (1e9 / self.frame_hz).round() as i64
    }

    /// Clock skew of client `id` (1-based) in ns.
    pub fn skew_ns(&self, id: u32) -> i64 {
        let ms = self.clock_skew_ms.get(id as usize - 1).copied().unwrap_or(0.0);
        (ms * 1e6).round() as i64
    }

    /// Session length: `cycles` whole periods plus two frames so the last
    /// boundary packet lands.
    pub fn end_ns(&self) -> i64 {
        self.cycles as i64 * self.params.period_ns() + 2 * self.frame_ns()
    }
}
