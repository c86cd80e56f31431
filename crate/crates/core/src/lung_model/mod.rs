//! Lung surface geometry, the pressure-volume driver, SH-domain deformation
//! and rigid registration.

mod deform;
mod force;
mod mesh;
mod pose;
mod pv;

use thiserror::Error;

use crate::sphere_harmonics::ShError;

pub use deform::{deform, deform_with, displacement_coeffs, Deformer, ElasticityKernel};
pub use force::{build_force_coeffs, gravity_force_field, interpolate_force_coeffs};
pub use mesh::{
    enclosed_volume, enclosed_volume_with, make_test_lung, signed_volume_liters, LungMesh, LungShape, Vec3,
    MAX_SUBDIVISIONS,
};
pub use pose::{apply_pose, estimate_rigid_pose, Pose};
pub use pv::{bernstein, normalized_volume, pressure_at_phase, pressure_waveform, pv_volume, PvParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LungError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("mesh has too few nodes or triangles")]
    EmptyMesh,
    #[error("triangle {0} references a missing node or repeats a vertex")]
    BadTriangle(usize),
    #[error("surface is not a closed, consistently oriented 2-manifold at edge ({a}, {b})")]
    NotClosed { a: u32, b: u32 },
    #[error("node {0} has a non-positive radius")]
    NonPositiveRadius(usize),
    #[error("triangle {triangle} faces the centroid; surface is not star-shaped")]
    NotStarShaped { triangle: usize },
    #[error("surface wraps the centroid {0:.6} times; expected exactly once")]
    Winding(f64),
    #[error("enclosed volume {0} L is not positive")]
    NonPositiveVolume(f64),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("deformation collapsed node {node} to radius {radius}")]
    Deformation { node: usize, radius: f64 },
    #[error("OFF: {0}")]
    Off(String),
    #[error(transparent)]
    Sh(#[from] ShError),
}
