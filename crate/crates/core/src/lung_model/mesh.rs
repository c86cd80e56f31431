use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::Vector3;

use super::LungError;
use crate::par::Exec;
use crate::sphere_harmonics::Direction;

pub type Vec3 = Vector3<f64>;

const M3_TO_LITERS: f64 = 1000.0;

/// Closed, outward-oriented triangle surface stored in polar form about
/// `centroid`. Every ray from the centroid crosses the surface once.
#[derive(Debug, Clone, PartialEq)]
pub struct LungMesh {
    centroid: Vec3,
    radii: Vec<f64>,
    shared: Arc<Topology>,
}

/// Per-node directions and connectivity; shared between a rest mesh and its
/// deformations.
#[derive(Debug, PartialEq)]
struct Topology {
    dirs: Vec<Direction>,
    units: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
}

impl LungMesh {
    /// Builds a mesh from polar nodes, validating every invariant.
    pub fn from_polar(
        centroid: Vec3,
        nodes: Vec<(f64, Direction)>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, LungError> {
        let (radii, dirs): (Vec<f64>, Vec<Direction>) = nodes.into_iter().unzip();
        let units = dirs.iter().map(|d| Vec3::from(d.unit_vector())).collect();
        let mesh = Self { centroid, radii, shared: Arc::new(Topology { dirs, units, triangles }) };
        mesh.validate_topology()?;
        mesh.validate_radii()?;
        mesh.validate_star_shape()?;
        Ok(mesh)
    }

    /// Builds a mesh from world positions using the vertex mean as the polar origin.
    pub fn from_positions(positions: &[Vec3], triangles: Vec<[u32; 3]>) -> Result<Self, LungError> {
        if positions.is_empty() {
            return Err(LungError::EmptyMesh);
        }
        let centroid = positions.iter().sum::<Vec3>() / positions.len() as f64;
        Self::from_positions_about(centroid, positions, triangles)
    }

    pub fn from_positions_about(
        centroid: Vec3,
        positions: &[Vec3],
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, LungError> {
        let nodes = positions
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let rel = p - centroid;
                let dir = Direction::from_vector(rel.into()).ok_or(LungError::NonPositiveRadius(i))?;
                Ok((rel.norm(), dir))
            })
            .collect::<Result<Vec<_>, LungError>>()?;
        Self::from_polar(centroid, nodes, triangles)
    }

    /// Same topology and directions with new radii. Checks positivity and
    /// per-triangle orientation; closedness and winding are inherited.
    pub fn with_radii(&self, radii: Vec<f64>) -> Result<Self, LungError> {
        assert_eq!(radii.len(), self.radii.len());
        let mesh = Self { centroid: self.centroid, radii, shared: Arc::clone(&self.shared) };
        mesh.validate_radii()?;
        mesh.validate_orientation()?;
        Ok(mesh)
    }

    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    pub fn node_count(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn directions(&self) -> &[Direction] {
        &self.shared.dirs
    }

    pub fn unit_vectors(&self) -> &[Vec3] {
        &self.shared.units
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.shared.triangles
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.centroid + self.shared.units[i] * self.radii[i]
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.node_count()).map(|i| self.position(i)).collect()
    }

    fn validate_topology(&self) -> Result<(), LungError> {
        if self.shared.triangles.len() < 4 {
            return Err(LungError::EmptyMesh);
        }
        let n = self.radii.len() as u32;
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.shared.triangles.len() * 3);
        for (t, tri) in self.shared.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) || tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(LungError::BadTriangle(t));
            }
            for k in 0..3 {
                *directed.entry((tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(LungError::NotClosed { a, b });
            }
        }
        Ok(())
    }

    fn validate_radii(&self) -> Result<(), LungError> {
        match self.radii.iter().position(|r| !(*r > 0.0) || !r.is_finite()) {
            Some(i) => Err(LungError::NonPositiveRadius(i)),
            None => Ok(()),
        }
    }

    fn validate_orientation(&self) -> Result<(), LungError> {
        match self.shared.triangles.iter().position(|t| self.unit_det(t) <= 0.0) {
            Some(t) => Err(LungError::NotStarShaped { triangle: t }),
            None => Ok(()),
        }
    }

    /// Every triangle faces away from the centroid and the triangles wrap the
    /// centroid exactly once (total solid angle 4 pi).
    fn validate_star_shape(&self) -> Result<(), LungError> {
        self.validate_orientation()?;
        let units = &self.shared.units;
        let total: f64 = self
            .shared
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| units[v as usize]);
                2.0 * self.unit_det(t).atan2(1.0 + a.dot(&b) + b.dot(&c) + c.dot(&a))
            })
            .sum();
        let winding = total / (4.0 * PI);
        if (winding - 1.0).abs() > 1e-6 {
            return Err(LungError::Winding(winding));
        }
        Ok(())
    }

    fn unit_det(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|v| self.shared.units[v as usize]);
        a.dot(&b.cross(&c))
    }

    /// Reads an ASCII OFF file. Faces must be triangles; `#` starts a comment.
    pub fn read_off<R: BufRead>(reader: R) -> Result<Self, LungError> {
        let mut tokens = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| LungError::Off(e.to_string()))?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        if it.next().as_deref() != Some("OFF") {
            return Err(LungError::Off("missing OFF header".into()));
        }
        let mut next_num = |what: &str| -> Result<String, LungError> {
            it.next().ok_or_else(|| LungError::Off(format!("unexpected end of file reading {what}")))
        };
        let parse_usize = |s: String| s.parse::<usize>().map_err(|_| LungError::Off(format!("bad integer {s:?}")));
        let parse_f64 = |s: String| s.parse::<f64>().map_err(|_| LungError::Off(format!("bad number {s:?}")));
        let nv = parse_usize(next_num("vertex count")?)?;
        let nf = parse_usize(next_num("face count")?)?;
        let _ne = parse_usize(next_num("edge count")?)?;
        let mut positions = Vec::with_capacity(nv);
        for _ in 0..nv {
            let x = parse_f64(next_num("vertex")?)?;
            let y = parse_f64(next_num("vertex")?)?;
            let z = parse_f64(next_num("vertex")?)?;
            positions.push(Vec3::new(x, y, z));
        }
        let mut triangles = Vec::with_capacity(nf);
        for f in 0..nf {
            let k = parse_usize(next_num("face")?)?;
            if k != 3 {
                return Err(LungError::Off(format!("face {f} has {k} vertices; only triangles are supported")));
            }
            let mut tri = [0u32; 3];
            for v in &mut tri {
                let idx = parse_usize(next_num("face index")?)?;
                *v = u32::try_from(idx).map_err(|_| LungError::Off(format!("index {idx} too large")))?;
            }
            triangles.push(tri);
        }
        Self::from_positions(&positions, triangles)
    }

    pub fn write_off<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "OFF\n{} {} 0", self.node_count(), self.shared.triangles.len());
        for p in self.positions() {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
        }
        for t in &self.shared.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        out.write_all(s.as_bytes())
    }
}

/// Signed volume in liters of an arbitrary triangle soup, positive when the
/// closed surface is outward oriented. Fails if some edge is not shared by
/// exactly two triangles.
pub fn signed_volume_liters(positions: &[Vec3], triangles: &[[u32; 3]]) -> Result<f64, LungError> {
    let mut edges: HashMap<(u32, u32), u32> = HashMap::new();
    for (t, tri) in triangles.iter().enumerate() {
        if tri.iter().any(|&v| v as usize >= positions.len()) {
            return Err(LungError::BadTriangle(t));
        }
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    if let Some((&(a, b), _)) = edges.iter().find(|(_, &c)| c != 2) {
        return Err(LungError::NotClosed { a, b });
    }
    let sum = Exec::Sequential.sum(triangles.len(), |t| {
        let [a, b, c] = triangles[t].map(|v| positions[v as usize]);
        a.dot(&b.cross(&c))
    });
    Ok(sum / 6.0 * M3_TO_LITERS)
}

/// Volume enclosed by a valid mesh, in liters.
pub fn enclosed_volume(mesh: &LungMesh) -> Result<f64, LungError> {
    enclosed_volume_with(mesh, Exec::default())
}

pub fn enclosed_volume_with(mesh: &LungMesh, exec: Exec) -> Result<f64, LungError> {
    let tris = &mesh.shared.triangles;
    let sum = exec.sum(tris.len(), |t| {
        let [a, b, c] = tris[t].map(|v| v as usize);
        mesh.radii[a] * mesh.radii[b] * mesh.radii[c] * mesh.unit_det(&tris[t])
    });
    let liters = sum / 6.0 * M3_TO_LITERS;
    if !(liters > 0.0) {
        return Err(LungError::NonPositiveVolume(liters));
    }
    Ok(liters)
}

/// Shape of the synthetic test lung: ellipsoid semi-axes in meters and a
/// lobe modulation `1 + amplitude * sin^2(theta) * cos(2 phi)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LungShape {
    pub axes: [f64; 3],
    #[serde(default)]
    pub lobe_amplitude: f64,
}

impl LungShape {
    pub const UNIT_SPHERE: LungShape = LungShape { axes: [1.0, 1.0, 1.0], lobe_amplitude: 0.0 };

    /// Adult-sized default: about 4 L enclosed.
    pub const ADULT: LungShape = LungShape { axes: [0.08, 0.10, 0.12], lobe_amplitude: 0.15 };

    fn radius(&self, u: &Vec3) -> f64 {
        let [a, b, c] = self.axes;
        let ellipsoid = 1.0 / ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt();
        let sin2 = u.x * u.x + u.y * u.y;
        let cos2phi = if sin2 > 0.0 { (u.x * u.x - u.y * u.y) / sin2 } else { 0.0 };
        ellipsoid * (1.0 + self.lobe_amplitude * sin2 * cos2phi)
    }
}

pub const MAX_SUBDIVISIONS: u32 = 6;

/// Subdivided icosahedron (a vertex at each pole) mapped radially onto `shape`.
pub fn make_test_lung(subdivisions: u32, shape: LungShape) -> Result<LungMesh, LungError> {
    if subdivisions > MAX_SUBDIVISIONS {
        return Err(LungError::Argument(format!("subdivisions {subdivisions} > {MAX_SUBDIVISIONS}")));
    }
    if !shape.axes.iter().all(|a| *a > 0.0 && a.is_finite()) {
        return Err(LungError::Argument("axis scales must be positive and finite".into()));
    }
    if !(shape.lobe_amplitude.abs() < 1.0) {
        return Err(LungError::Argument(format!(
            "lobe amplitude {} would collapse the radius to zero",
            shape.lobe_amplitude
        )));
    }
    let (units, triangles) = icosphere(subdivisions);
    let nodes = units
        .iter()
        .map(|u| (shape.radius(u), Direction::from_vector((*u).into()).expect("unit vector")))
        .collect();
    LungMesh::from_polar(Vec3::zeros(), nodes, triangles)
}

fn icosphere(subdivisions: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let h = 1.0 / 5f64.sqrt();
    let rho = 2.0 * h;
    let mut verts = vec![Vec3::new(0.0, 0.0, 1.0)];
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0;
        verts.push(Vec3::new(rho * a.cos(), rho * a.sin(), h));
    }
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0 + PI / 5.0;
        verts.push(Vec3::new(rho * a.cos(), rho * a.sin(), -h));
    }
    verts.push(Vec3::new(0.0, 0.0, -1.0));
    let (top, bottom) = (0u32, 11u32);
    let up = |k: u32| 1 + k % 5;
    let low = |k: u32| 6 + k % 5;
    let mut tris = Vec::with_capacity(20);
    for k in 0..5 {
        tris.push([top, up(k), up(k + 1)]);
        tris.push([up(k), low(k), up(k + 1)]);
        tris.push([low(k), low(k + 1), up(k + 1)]);
        tris.push([low(k), bottom, low(k + 1)]);
    }
    orient_outward(&verts, &mut tris);

    for _ in 0..subdivisions {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *cache.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    (verts, tris)
}

fn orient_outward(verts: &[Vec3], tris: &mut [[u32; 3]]) {
    for t in tris {
        let [a, b, c] = t.map(|v| verts[v as usize]);
        if a.dot(&b.cross(&c)) < 0.0 {
            t.swap(1, 2);
        }
    }
}
