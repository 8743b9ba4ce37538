//! Triangle meshes, point clouds, rigid transforms, OBJ I/O and area-uniform
//! surface sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Point3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Indexed triangle surface with a physical scale record.
///
/// Vertices are in model units; `scale_nm_per_unit` says how many nanometres
/// one model unit represents.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    scale_nm_per_unit: f64,
    source_id: String,
}

impl TriangleMesh {
    pub fn new(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        scale_nm_per_unit: f64,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if !(scale_nm_per_unit > 0.0 && scale_nm_per_unit.is_finite()) {
            return Err(Error::invalid(format!(
                "scale_nm_per_unit must be positive, got {scale_nm_per_unit}"
            )));
        }
        if let Some(v) = vertices.iter().find(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("non-finite vertex {v:?}")));
        }
        let n = vertices.len();
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::invalid(format!(
                    "triangle {k} references a vertex beyond {n}"
                )));
            }
            if is_degenerate(t) {
                return Err(Error::invalid(format!("triangle {k} repeats a vertex: {t:?}")));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            scale_nm_per_unit,
            source_id: source_id.into(),
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn scale_nm_per_unit(&self) -> f64 {
        self.scale_nm_per_unit
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn with_scale(mut self, scale_nm_per_unit: f64) -> Result<Self> {
        if !(scale_nm_per_unit > 0.0 && scale_nm_per_unit.is_finite()) {
            return Err(Error::invalid(format!(
                "scale_nm_per_unit must be positive, got {scale_nm_per_unit}"
            )));
        }
        self.scale_nm_per_unit = scale_nm_per_unit;
        Ok(self)
    }

    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    /// Corner positions of triangle `k`.
    pub fn triangle(&self, k: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[k];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.triangle(k);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Total surface area in model units squared.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|k| self.triangle_area(k)).sum()
    }
}

fn is_degenerate(t: &[usize; 3]) -> bool {
    t[0] == t[1] || t[1] == t[2] || t[0] == t[2]
}

/// Length units carried by a point cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Nm,
    Normalized,
}

/// Sampled surface points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub units: Units,
    pub source_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, units: Units, source_id: impl Into<String>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud has no points".into()));
        }
        if points.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self {
            points,
            units,
            source_id: source_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Multiplies every coordinate by `factor` and relabels the units.
    pub fn scaled(&self, factor: f64, units: Units) -> Self {
        Self {
            points: self.points.iter().map(|p| Point::from(p.coords * factor)).collect(),
            units,
            source_id: self.source_id.clone(),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn from_points(points: &[Point]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Empty("bounding box of no points".into()))?;
        let mut min = *first;
        let mut max = *first;
        for p in &points[1..] {
            for i in 0..3 {
                min[i] = min[i].min(p[i]);
                max[i] = max[i].max(p[i]);
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point {
        nalgebra::center(&self.min, &self.max)
    }

    pub fn max_extent(&self) -> f64 {
        self.extent().max()
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }
}

/// Anything that exposes a point set: meshes and clouds.
pub trait HasPoints {
    fn points(&self) -> &[Point];
}

impl HasPoints for TriangleMesh {
    fn points(&self) -> &[Point] {
        &self.vertices
    }
}

impl HasPoints for PointCloud {
    fn points(&self) -> &[Point] {
        &self.points
    }
}

/// Tight bounding box of a mesh or cloud.
pub fn aabb<T: HasPoints + ?Sized>(shape: &T) -> Result<Aabb> {
    Aabb::from_points(shape.points())
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

/// Orthonormality tolerance on the entries of `R·Rᵀ − I`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let defect = rotation * rotation.transpose() - Matrix3::identity();
        if defect.amax() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (max |R·Rᵀ−I| = {:e})",
                defect.amax()
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!("rotation determinant is {det}, expected +1")));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("non-finite translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_axis_angle(axis: Vec3, angle_rad: f64, translation: Vec3) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle_rad);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    /// Builds from a rotation already known to be proper (e.g. an SVD product).
    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Shapes that can be moved rigidly.
pub trait Transformable: Sized {
    fn transformed(&self, t: &RigidTransform) -> Self;
}

impl Transformable for TriangleMesh {
    fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            vertices: self.vertices.iter().map(|p| t.apply(p)).collect(),
            triangles: self.triangles.clone(),
            scale_nm_per_unit: self.scale_nm_per_unit,
            source_id: self.source_id.clone(),
        }
    }
}

impl Transformable for PointCloud {
    fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            units: self.units,
            source_id: self.source_id.clone(),
        }
    }
}

pub fn apply_transform<T: Transformable>(shape: &T, t: &RigidTransform) -> T {
    shape.transformed(t)
}

/// What to do with faces that repeat a vertex index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateFaces {
    Reject,
    #[default]
    Drop,
}

/// A loaded mesh plus any non-fatal diagnostics.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub warnings: Vec<String>,
}

/// Reads the `v`/`f` subset of Wavefront OBJ.
///
/// Polygons are fan-triangulated from their first vertex. The mesh comes back
/// with `scale_nm_per_unit = 1` and the file stem as its source id.
pub fn load_obj(path: impl AsRef<Path>, degenerate: DegenerateFaces) -> Result<LoadedMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_obj(&text, path, degenerate, source_id)
}

pub(crate) fn parse_obj(
    text: &str,
    path: &Path,
    degenerate: DegenerateFaces,
    source_id: String,
) -> Result<LoadedMesh> {
    let mut vertices: Vec<Point> = Vec::new();
    let mut triangles = Vec::new();
    let mut warnings = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut fields = line.split_whitespace();
        match fields.next() {
            Some("v") => {
                let coords: Vec<f64> = fields
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| Error::parse(path, lineno, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(Error::parse(path, lineno, "vertex needs three coordinates"));
                }
                if !coords.iter().all(|c| c.is_finite()) {
                    return Err(Error::parse(path, lineno, "non-finite vertex coordinate"));
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in fields {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head.parse().map_err(|_| {
                        Error::parse(path, lineno, format!("bad face index {tok:?}"))
                    })?;
                    let resolved = match i {
                        0 => return Err(Error::parse(path, lineno, "face index 0 is invalid")),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(Error::parse(path, lineno, "relative index out of range"));
                            }
                            vertices.len() - back
                        }
                    };
                    if resolved >= vertices.len() {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("face index {i} refers to an undefined vertex"),
                        ));
                    }
                    idx.push(resolved);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(path, lineno, "face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    let tri = [idx[0], idx[k], idx[k + 1]];
                    if is_degenerate(&tri) {
                        match degenerate {
                            DegenerateFaces::Reject => {
                                return Err(Error::parse(
                                    path,
                                    lineno,
                                    format!("degenerate face {:?}", tri.map(|i| i + 1)),
                                ))
                            }
                            DegenerateFaces::Drop => {
                                let msg = format!(
                                    "{}:{lineno}: dropped degenerate face {:?}",
                                    path.display(),
                                    tri.map(|i| i + 1)
                                );
                                log::warn!("{msg}");
                                warnings.push(msg);
                            }
                        }
                    } else {
                        triangles.push(tri);
                    }
                }
            }
            _ => {}
        }
    }

    if triangles.is_empty() {
        return Err(Error::Empty(format!("{}: no faces", path.display())));
    }
    let mesh = TriangleMesh::new(vertices, triangles, 1.0, source_id)?;
    Ok(LoadedMesh { mesh, warnings })
}

/// Writes `v` lines with six decimals and 1-based `f` lines.
pub fn write_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, obj_string(mesh)).map_err(|e| Error::io(path, e))
}

pub fn obj_string(mesh: &TriangleMesh) -> String {
    let mut out = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

/// Result of [`normalize_to_unit_cube`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub mesh: TriangleMesh,
    /// Model units per normalized unit: half the original largest AABB side.
    pub scale: f64,
    /// Original AABB center, subtracted before scaling.
    pub offset: Vec3,
}

/// Centers the mesh and scales its longest AABB side to exactly 2 units.
///
/// `scale_nm_per_unit` is multiplied by the applied factor so the physical
/// size is unchanged.
pub fn normalize_to_unit_cube(mesh: &TriangleMesh) -> Result<Normalized> {
    if mesh.vertices.is_empty() {
        return Err(Error::Empty("cannot normalize a mesh without vertices".into()));
    }
    let bb = aabb(mesh)?;
    let longest = bb.max_extent();
    if longest <= 0.0 {
        return Err(Error::invalid("mesh has zero extent in every dimension"));
    }
    let scale = longest / 2.0;
    let offset = bb.center().coords;
    let inv = 2.0 / longest;
    let vertices = mesh
        .vertices
        .iter()
        .map(|p| Point::from((p.coords - offset) * inv))
        .collect();
    Ok(Normalized {
        mesh: TriangleMesh {
            vertices,
            triangles: mesh.triangles.clone(),
            scale_nm_per_unit: mesh.scale_nm_per_unit * scale,
            source_id: mesh.source_id.clone(),
        },
        scale,
        offset,
    })
}

/// Area-uniform surface samples in model units.
pub fn sample_surface_model(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Point>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for k in 0..mesh.triangles.len() {
        total += mesh.triangle_area(k);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("mesh has zero surface area"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let target = rng.random::<f64>() * total;
        // first triangle whose cumulative area exceeds the target; zero-area
        // triangles are never selected
        let k = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangle(k);
        let r1: f64 = rng.random::<f64>().sqrt();
        let r2: f64 = rng.random();
        let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
        points.push(Point::from(p));
    }
    Ok(points)
}

/// Area-uniform surface samples in nanometres.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let s = mesh.scale_nm_per_unit;
    let points = sample_surface_model(mesh, n, seed)?
        .into_iter()
        .map(|p| Point::from(p.coords * s))
        .collect();
    PointCloud::new(points, Units::Nm, mesh.source_id.clone())
}

/// Axis-aligned box mesh spanning `min..max` (12 triangles, outward winding).
pub fn box_mesh(min: Point, max: Point, scale_nm_per_unit: f64, source_id: &str) -> Result<TriangleMesh> {
    let v = |x: bool, y: bool, z: bool| {
        Point::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [0, 4, 7],
        [0, 7, 3],
    ];
    TriangleMesh::new(vertices, triangles, scale_nm_per_unit, source_id)
}

/// Latitude/longitude sphere tessellation with outward winding.
pub fn uv_sphere(
    center: Point,
    radius: f64,
    stacks: usize,
    slices: usize,
    scale_nm_per_unit: f64,
    source_id: &str,
) -> Result<TriangleMesh> {
    if stacks < 2 || slices < 3 {
        return Err(Error::invalid("uv_sphere needs at least 2 stacks and 3 slices"));
    }
    let mut vertices = vec![center + Vec3::new(0.0, 0.0, radius)];
    for i in 1..stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let phi = std::f64::consts::TAU * j as f64 / slices as f64;
            vertices.push(
                center
                    + Vec3::new(
                        radius * theta.sin() * phi.cos(),
                        radius * theta.sin() * phi.sin(),
                        radius * theta.cos(),
                    ),
            );
        }
    }
    let south = vertices.len();
    vertices.push(center - Vec3::new(0.0, 0.0, radius));

    let ring = |i: usize, j: usize| 1 + (i - 1) * slices + (j % slices);
    let mut triangles = Vec::new();
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    for j in 0..slices {
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }
    TriangleMesh::new(vertices, triangles, scale_nm_per_unit, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn parse(text: &str, degenerate: DegenerateFaces) -> Result<LoadedMesh> {
        parse_obj(text, &PathBuf::from("test.obj"), degenerate, "t".into())
    }

    #[test]
    fn minimal_obj() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", DegenerateFaces::Drop).unwrap();
        assert_eq!(m.mesh.triangles(), &[[0, 1, 2]]);
        assert_eq!(m.mesh.scale_nm_per_unit(), 1.0);
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let m = parse(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
            DegenerateFaces::Drop,
        )
        .unwrap();
        assert_eq!(m.mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slashes_normals_and_comments_are_ignored() {
        let m = parse(
            "# header\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nusemtl x\nf 1/1/1 2//1 -1/3/1\n",
            DegenerateFaces::Reject,
        )
        .unwrap();
        assert_eq!(m.mesh.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn degenerate_face_dropped_with_warning() {
        let m = parse(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\nf 1 2 3\n",
            DegenerateFaces::Drop,
        )
        .unwrap();
        assert_eq!(m.mesh.triangles().len(), 1);
        assert_eq!(m.warnings.len(), 1);
        assert!(m.warnings[0].contains("degenerate"));
    }

    #[test]
    fn degenerate_face_rejected_when_asked() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n", DegenerateFaces::Reject).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let err = parse("v 0 0 0\nv 1 zero 0\n", DegenerateFaces::Drop).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse("v 0 0 0\nf 1 2 3\n", DegenerateFaces::Drop).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn no_faces_is_an_error() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 1\n", DegenerateFaces::Drop).unwrap_err();
        assert!(matches!(err, Error::Empty(_)));
    }

    #[test]
    fn obj_write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.obj");
        let m = box_mesh(Point::origin(), Point::new(1.0, 2.0, 3.0), 1.0, "box").unwrap();
        write_obj(&m, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("v 0.000000 0.000000 0.000000\n"));
        let back = load_obj(&path, DegenerateFaces::Reject).unwrap().mesh;
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.vertices(), m.vertices());
        assert_eq!(back.source_id(), "box");
    }

    #[test]
    fn cube_normalization() {
        let m = box_mesh(Point::origin(), Point::new(10.0, 10.0, 10.0), 1.0, "c").unwrap();
        let n = normalize_to_unit_cube(&m).unwrap();
        let bb = aabb(&n.mesh).unwrap();
        assert_eq!(bb.min, Point::new(-1.0, -1.0, -1.0));
        assert_eq!(bb.max, Point::new(1.0, 1.0, 1.0));
        assert_eq!(n.mesh.scale_nm_per_unit(), 5.0);
        assert_eq!(n.scale, 5.0);
        assert_eq!(n.offset, Vec3::new(5.0, 5.0, 5.0));
    }

    #[test]
    fn normalized_mesh_is_a_fixed_point() {
        let m = box_mesh(Point::new(-1.0, -1.0, -1.0), Point::new(1.0, 1.0, 1.0), 3.0, "c").unwrap();
        let n = normalize_to_unit_cube(&m).unwrap();
        assert_eq!(n.scale, 1.0);
        assert_eq!(n.offset, Vec3::zeros());
        assert_eq!(n.mesh, m);
    }

    #[test]
    fn plate_keeps_aspect_ratio() {
        let m = box_mesh(Point::origin(), Point::new(20.0, 10.0, 2.0), 1.0, "p").unwrap();
        let n = normalize_to_unit_cube(&m).unwrap();
        let e = aabb(&n.mesh).unwrap().extent();
        assert!((e.x - 2.0).abs() < 1e-12);
        assert!((e.y - 1.0).abs() < 1e-12);
        assert!((e.z - 0.2).abs() < 1e-12);
    }

    #[test]
    fn single_point_cannot_be_normalized() {
        let p = Point::new(1.0, 1.0, 1.0);
        let m = TriangleMesh::new(vec![p, p, p], vec![[0, 1, 2]], 1.0, "pt").unwrap();
        assert!(normalize_to_unit_cube(&m).is_err());
    }

    #[test]
    fn samples_stay_inside_single_triangle() {
        let m = TriangleMesh::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(2.0, 0.0, 0.0), Point::new(0.0, 3.0, 0.0)],
            vec![[0, 1, 2]],
            1.0,
            "tri",
        )
        .unwrap();
        let pc = sample_surface(&m, 1000, 11).unwrap();
        for p in &pc.points {
            // barycentric coordinates w.r.t. the right triangle
            let (u, v) = (p.x / 2.0, p.y / 3.0);
            assert!(u >= 0.0 && v >= 0.0 && u + v <= 1.0 + 1e-12, "{p:?}");
            assert_eq!(p.z, 0.0);
        }
    }

    #[test]
    fn area_split_nine_to_one() {
        // triangle A has area 4.5, triangle B area 0.5
        let m = TriangleMesh::new(
            vec![
                Point::new(0.0, 0.0, 0.0),
                Point::new(3.0, 0.0, 0.0),
                Point::new(0.0, 3.0, 0.0),
                Point::new(10.0, 0.0, 0.0),
                Point::new(11.0, 0.0, 0.0),
                Point::new(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            1.0,
            "two",
        )
        .unwrap();
        let n = 100_000;
        let pc = sample_surface(&m, n, 5).unwrap();
        let in_b = pc.points.iter().filter(|p| p.x >= 10.0).count() as f64 / n as f64;
        assert!((in_b - 0.1).abs() < 0.01, "fraction in small triangle {in_b}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = uv_sphere(Point::origin(), 1.0, 8, 16, 1.0, "s").unwrap();
        assert_eq!(sample_surface(&m, 500, 3).unwrap(), sample_surface(&m, 500, 3).unwrap());
        assert_ne!(sample_surface(&m, 500, 3).unwrap(), sample_surface(&m, 500, 4).unwrap());
    }

    #[test]
    fn sampling_carries_nm_scale() {
        let m = box_mesh(Point::origin(), Point::new(1.0, 1.0, 1.0), 7.0, "b").unwrap();
        let pc = sample_surface(&m, 200, 1).unwrap();
        assert_eq!(pc.units, Units::Nm);
        let bb = aabb(&pc).unwrap();
        assert!(bb.max_extent() <= 7.0 + 1e-12 && bb.max_extent() > 6.0);
    }

    #[test]
    fn zero_area_mesh_cannot_be_sampled() {
        let m = TriangleMesh::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0), Point::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            1.0,
            "line",
        )
        .unwrap();
        assert!(sample_surface(&m, 10, 0).is_err());
    }

    #[test]
    fn transform_examples() {
        let pc = PointCloud::new(vec![Point::new(1.0, 0.0, 0.0)], Units::Nm, "p").unwrap();
        assert_eq!(apply_transform(&pc, &RigidTransform::identity()), pc);
        let rz = RigidTransform::from_axis_angle(Vec3::z(), std::f64::consts::FRAC_PI_2, Vec3::zeros());
        let q = apply_transform(&pc, &rz).points[0];
        assert!((q - Point::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mirror = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(mirror, Vec3::zeros()).is_err());
        let sheared = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(sheared, Vec3::zeros()).is_err());
    }

    #[test]
    fn aabb_examples() {
        let cube = box_mesh(Point::origin(), Point::new(1.0, 1.0, 1.0), 1.0, "c").unwrap();
        let bb = aabb(&cube).unwrap();
        assert_eq!(bb.min, Point::origin());
        assert_eq!(bb.max, Point::new(1.0, 1.0, 1.0));

        let p = Point::new(0.5, -2.0, 3.0);
        let single = PointCloud::new(vec![p], Units::Nm, "p").unwrap();
        let bb = aabb(&single).unwrap();
        assert_eq!((bb.min, bb.max), (p, p));

        let s = uv_sphere(Point::origin(), 3.0, 32, 64, 1.0, "s").unwrap();
        let e = aabb(&s).unwrap().extent();
        assert!((e.z - 6.0).abs() < 1e-12);
        assert!((e.x - 6.0).abs() < 0.02 && (e.y - 6.0).abs() < 0.02, "{e:?}");

        assert!(Aabb::from_points(&[]).is_err());
    }
}
