use super::mesh::{enclosed_volume_with, LungMesh};
use super::pv::{pv_volume, PvParams};
use super::LungError;
use crate::par::Exec;
use crate::sphere_harmonics::{coeff_count, degree_order, dot, eval_all, BasisMatrix, ShCoefficients};

/// Diagonal transfer operator on SH coefficients: displacement coefficient
/// `i` is force coefficient `i` times `coeffs[i]`. Entries past the force
/// length are carried but unused.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityKernel {
    coeffs: Vec<f64>,
}

impl ElasticityKernel {
    pub fn new(coeffs: Vec<f64>) -> Result<Self, LungError> {
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(LungError::Argument(format!("elasticity coefficient {i} is not finite")));
        }
        Ok(Self { coeffs })
    }

    /// `T_lm = t0 / (1 + l)^2` for every `l <= band_limit`.
    pub fn decaying(band_limit: usize, t0: f64) -> Self {
        let coeffs = (0..coeff_count(band_limit))
            .map(|i| {
                let (l, _) = degree_order(i);
                t0 / ((1 + l) * (1 + l)) as f64
            })
            .collect();
        Self { coeffs }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// `u_i = (pressure / pr) * F_i * T_i`.
pub fn displacement_coeffs(
    force: &ShCoefficients,
    kernel: &ElasticityKernel,
    pressure: f64,
    params: &PvParams,
) -> Result<Vec<f64>, LungError> {
    if kernel.len() < force.len() {
        return Err(LungError::Argument(format!(
            "elasticity kernel has {} entries, force has {}",
            kernel.len(),
            force.len()
        )));
    }
    let scale = pressure / params.pr;
    Ok(force.as_slice().iter().zip(&kernel.coeffs).map(|(f, t)| scale * f * t).collect())
}

/// Deforms `mesh` radially by the synthesized displacement field, then
/// rescales about the centroid so the enclosed volume equals the PV target.
pub fn deform(
    mesh: &LungMesh,
    force: &ShCoefficients,
    kernel: &ElasticityKernel,
    pressure: f64,
    params: &PvParams,
) -> Result<LungMesh, LungError> {
    deform_with(mesh, force, kernel, pressure, params, Exec::default())
}

pub fn deform_with(
    mesh: &LungMesh,
    force: &ShCoefficients,
    kernel: &ElasticityKernel,
    pressure: f64,
    params: &PvParams,
    exec: Exec,
) -> Result<LungMesh, LungError> {
    let target = pv_volume(pressure, params)?;
    let u = displacement_coeffs(force, kernel, pressure, params)?;
    let band = force.band_limit();
    let dirs = mesh.directions();
    let displacement = exec.map(mesh.node_count(), |i| {
        let mut buf = [0.0; 64];
        if u.len() <= buf.len() {
            eval_all(band, dirs[i], &mut buf[..u.len()]);
            dot(&buf[..u.len()], &u)
        } else {
            let mut buf = vec![0.0; u.len()];
            eval_all(band, dirs[i], &mut buf);
            dot(&buf, &u)
        }
    });
    finish(mesh, &displacement, target, exec)
}

fn finish(mesh: &LungMesh, displacement: &[f64], target: f64, exec: Exec) -> Result<LungMesh, LungError> {
    let radii: Vec<f64> = mesh.radii().iter().zip(displacement).map(|(r, d)| r + d).collect();
    if let Some(i) = radii.iter().position(|r| !(*r > 0.0)) {
        return Err(LungError::Deformation { node: i, radius: radii[i] });
    }
    let displaced = mesh.with_radii(radii)?;
    let volume = enclosed_volume_with(&displaced, exec)?;
    let s = (target / volume).cbrt();
    if s == 1.0 {
        return Ok(displaced);
    }
    let scaled = displaced.radii().iter().map(|r| r * s).collect();
    displaced.with_radii(scaled)
}

/// Deformation bound to one rest mesh, with the SH basis at every node
/// evaluated once up front.
#[derive(Debug, Clone)]
pub struct Deformer {
    rest: LungMesh,
    basis: BasisMatrix,
    exec: Exec,
}

impl Deformer {
    pub fn new(rest: LungMesh, band_limit: usize, exec: Exec) -> Result<Self, LungError> {
        let basis = BasisMatrix::new(band_limit, rest.directions(), exec)?;
        Ok(Self { rest, basis, exec })
    }

    pub fn rest(&self) -> &LungMesh {
        &self.rest
    }

    pub fn band_limit(&self) -> usize {
        self.basis.band_limit()
    }

    pub fn deform(
        &self,
        force: &ShCoefficients,
        kernel: &ElasticityKernel,
        pressure: f64,
        params: &PvParams,
    ) -> Result<LungMesh, LungError> {
        if force.band_limit() > self.basis.band_limit() {
            return Err(LungError::Argument(format!(
                "force band limit {} exceeds prepared basis {}",
                force.band_limit(),
                self.basis.band_limit()
            )));
        }
        let target = pv_volume(pressure, params)?;
        let u = displacement_coeffs(force, kernel, pressure, params)?;
        let displacement = self.basis.synthesize(&u, self.exec);
        finish(&self.rest, &displacement, target, self.exec)
    }
}
