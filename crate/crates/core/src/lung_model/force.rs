use super::mesh::{LungMesh, Vec3};
use super::LungError;
use crate::sphere_harmonics::{analyze, ShCoefficients};

/// Normalized gravity loading per node: 0 at the resting (lowest) point,
/// 1 at the node farthest from it against gravity.
pub fn gravity_force_field(mesh: &LungMesh, gravity_dir: Vec3) -> Result<Vec<f64>, LungError> {
    check_unit(gravity_dir, "gravity_dir")?;
    let along: Vec<f64> = mesh.positions().iter().map(|p| p.dot(&gravity_dir)).collect();
    let rest = along.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let depth: Vec<f64> = along.iter().map(|a| rest - a).collect();
    let max = depth.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(LungError::Degenerate("mesh is flat perpendicular to gravity".into()));
    }
    Ok(depth.into_iter().map(|d| d / max).collect())
}

/// SH coefficients of the gravity loading sampled at the node directions.
pub fn build_force_coeffs(mesh: &LungMesh, gravity_dir: Vec3, band_limit: usize) -> Result<ShCoefficients, LungError> {
    let field = gravity_force_field(mesh, gravity_dir)?;
    let samples: Vec<_> = mesh.directions().iter().copied().zip(field).collect();
    Ok(analyze(&samples, band_limit)?)
}

const NEIGHBORS: usize = 3;
const EXACT_MATCH_RAD: f64 = 1e-9;

/// Inverse-geodesic-distance blend of the (up to) three table entries
/// nearest to `query`.
pub fn interpolate_force_coeffs(
    table: &[(Vec3, ShCoefficients)],
    query: Vec3,
) -> Result<ShCoefficients, LungError> {
    let first = table.first().ok_or_else(|| LungError::Argument("empty orientation table".into()))?;
    check_unit(query, "query")?;
    let len = first.1.len();
    for (i, (o, c)) in table.iter().enumerate() {
        check_unit(*o, &format!("orientation {i}"))?;
        if c.len() != len {
            return Err(LungError::Argument(format!("table entry {i} has {} coefficients, expected {len}", c.len())));
        }
    }
    let mut by_angle: Vec<(f64, usize)> = table
        .iter()
        .enumerate()
        .map(|(i, (o, _))| (geodesic(*o, query), i))
        .collect();
    by_angle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (nearest_angle, nearest) = by_angle[0];
    if nearest_angle < EXACT_MATCH_RAD {
        return Ok(table[nearest].1.clone());
    }
    let picked = &by_angle[..NEIGHBORS.min(by_angle.len())];
    let total: f64 = picked.iter().map(|(a, _)| a.recip()).sum();
    let mut out = vec![0.0; len];
    for &(angle, i) in picked {
        let w = angle.recip() / total;
        for (o, c) in out.iter_mut().zip(table[i].1.as_slice()) {
            *o += w * c;
        }
    }
    Ok(ShCoefficients::new(first.1.band_limit(), out)?)
}

fn geodesic(a: Vec3, b: Vec3) -> f64 {
    a.cross(&b).norm().atan2(a.dot(&b))
}

fn check_unit(v: Vec3, what: &str) -> Result<(), LungError> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(LungError::Argument(format!("{what} must be a unit vector (norm {})", v.norm())));
    }
    Ok(())
}
