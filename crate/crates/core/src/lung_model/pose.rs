use nalgebra::{Matrix3, SymmetricEigen, SVD};

use super::mesh::{LungMesh, Vec3};
use super::LungError;
use crate::sphere_harmonics::Direction;

/// Proper rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, LungError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det = rotation.determinant();
        if ortho > 1e-9 || (det - 1.0).abs() > 1e-9 || !translation.iter().all(|v| v.is_finite()) {
            return Err(LungError::Argument(format!(
                "not a proper rigid transform (orthogonality error {ortho:.2e}, det {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }
}

/// Least-squares rigid registration (Kabsch/Umeyama without scale).
///
/// Minimizes `sum |R a_i + t - b_i|^2` over proper rotations.
pub fn estimate_rigid_pose(pairs: &[(Vec3, Vec3)]) -> Result<Pose, LungError> {
    if pairs.len() < 3 {
        return Err(LungError::Degenerate(format!("{} correspondences, need at least 3", pairs.len())));
    }
    let n = pairs.len() as f64;
    let src_mean = pairs.iter().map(|p| p.0).sum::<Vec3>() / n;
    let dst_mean = pairs.iter().map(|p| p.1).sum::<Vec3>() / n;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (a, b) in pairs {
        let (sa, sb) = (a - src_mean, b - dst_mean);
        scatter += sa * sa.transpose();
        cross += sb * sa.transpose();
    }
    let eig = SymmetricEigen::new(scatter).eigenvalues;
    let mut ev: Vec<f64> = eig.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(ev[0] > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(LungError::Degenerate("source points are collinear".into()));
    }

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let translation = dst_mean - rotation * src_mean;
    Ok(Pose { rotation, translation })
}

/// Rigidly moves the mesh; the polar origin moves with it.
pub fn apply_pose(mesh: &LungMesh, pose: &Pose) -> LungMesh {
    let centroid = pose.apply(&mesh.centroid());
    let nodes = mesh
        .radii()
        .iter()
        .zip(mesh.unit_vectors())
        .map(|(r, u)| {
            let dir = Direction::from_vector((pose.rotation * u).into()).expect("rotation preserves norm");
            (*r, dir)
        })
        .collect();
    LungMesh::from_polar(centroid, nodes, mesh.triangles().to_vec()).expect("rigid motion preserves validity")
}
