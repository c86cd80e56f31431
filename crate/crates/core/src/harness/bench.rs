use std::time::Instant;

use serde::Serialize;

use crate::lung_model::{
    build_force_coeffs, make_test_lung, pressure_at_phase, Deformer, ElasticityKernel, LungShape, PvParams, Vec3,
};
use crate::par::Exec;

use super::HarnessError;

/// Per-frame budget for 75 frames per second.
pub const FRAME_BUDGET_MS: f64 = 1000.0 / 75.0;

const WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSpec {
    pub subdivisions: u32,
    pub shape: LungShape,
    pub band_limit: usize,
    pub iterations: usize,
    pub exec: Exec,
}

impl BenchSpec {
    pub fn new(subdivisions: u32, band_limit: usize, iterations: usize) -> Self {
        Self { subdivisions, shape: LungShape::ADULT, band_limit, iterations, exec: Exec::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub nodes: usize,
    pub band_limit: usize,
    pub iterations: usize,
    pub strategy: &'static str,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub budget_ms: f64,
    pub within_budget: bool,
    /// FNV-1a over every frame's radii; equal across runs of one spec.
    pub checksum: String,
}

/// Times one deformation per iteration, sweeping the breathing phase.
pub fn bench_deform(spec: &BenchSpec) -> Result<BenchReport, HarnessError> {
    if spec.iterations == 0 {
        return Err(HarnessError::Validation(vec!["iterations: must be at least 1".into()]));
    }
    let mesh = make_test_lung(spec.subdivisions, spec.shape)?;
    let params = PvParams::default();
    let force = build_force_coeffs(&mesh, Vec3::new(0.0, 0.0, -1.0), spec.band_limit)?;
    let kernel = ElasticityKernel::decaying(spec.band_limit, 0.002);
    let nodes = mesh.node_count();
    let deformer = Deformer::new(mesh, spec.band_limit, spec.exec)?;

    let pressure = |i: usize| pressure_at_phase(i as f64 / spec.iterations as f64, &params);
    for i in 0..WARMUP {
        deformer.deform(&force, &kernel, pressure(i), &params)?;
    }
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut times = Vec::with_capacity(spec.iterations);
    for i in 0..spec.iterations {
        let start = Instant::now();
        let out = deformer.deform(&force, &kernel, pressure(i), &params)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        for r in out.radii() {
            for b in r.to_bits().to_le_bytes() {
                hash = (hash ^ b as u64).wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    let mean_ms = times.iter().sum::<f64>() / times.len() as f64;
    times.sort_by(f64::total_cmp);
    let p95_ms = times[((times.len() as f64 * 0.95).ceil() as usize).clamp(1, times.len()) - 1];
    Ok(BenchReport {
        nodes,
        band_limit: spec.band_limit,
        iterations: spec.iterations,
        strategy: spec.exec.name(),
        mean_ms,
        p95_ms,
        budget_ms: FRAME_BUDGET_MS,
        within_budget: mean_ms <= FRAME_BUDGET_MS,
        checksum: format!("{hash:016x}"),
    })
}
