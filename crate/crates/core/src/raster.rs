//! Orthographic z-buffer rasterization of triangle meshes into depth maps.
//!
//! Camera convention: pose `(0, 0, 0)` places the camera on the +X axis looking
//! at the origin with +Z up. Azimuth turns the camera position about +Z,
//! elevation lifts it toward +Z (90° looks straight down −Z), and roll spins
//! the image plane about the view axis. Camera coordinates are `(x, y, depth)`
//! with depth measured along the view axis from the camera.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, RigidTransform, TriangleMesh, Vec3};
use crate::par;

/// Half side of the square frame, in normalized units, that keeps a mesh
/// inside `[−1, 1]³` fully in view under any rotation.
pub const DEFAULT_FRAME_HALF_EXTENT: f64 = 1.732_050_807_568_877_2;
/// Camera distance from the origin in normalized units.
pub const DEFAULT_CAMERA_DISTANCE: f64 = 3.0;
/// Largest image side accepted by [`resolution_from_step`].
pub const DEFAULT_RESOLUTION_CAP: usize = 4096;

/// Orientation of one virtual scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub roll_deg: f64,
    pub distance: f64,
}

impl CameraPose {
    pub fn new(elevation_deg: f64, azimuth_deg: f64, roll_deg: f64, distance: f64) -> Result<Self> {
        let pose = Self {
            elevation_deg,
            azimuth_deg,
            roll_deg,
            distance,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// Top-down view (elevation 90°) at the default distance.
    pub fn top_down() -> Self {
        Self {
            elevation_deg: 90.0,
            azimuth_deg: 0.0,
            roll_deg: 0.0,
            distance: DEFAULT_CAMERA_DISTANCE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.elevation_deg) {
            return Err(Error::invalid(format!("elevation {} outside [-90, 90]", self.elevation_deg)));
        }
        if !(0.0..360.0).contains(&self.azimuth_deg) {
            return Err(Error::invalid(format!("azimuth {} outside [0, 360)", self.azimuth_deg)));
        }
        if !(0.0..360.0).contains(&self.roll_deg) {
            return Err(Error::invalid(format!("roll {} outside [0, 360)", self.roll_deg)));
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(Error::invalid(format!("camera distance {} must be positive", self.distance)));
        }
        Ok(())
    }

    /// Unit direction from the origin toward the camera.
    pub fn position_direction(&self) -> Vec3 {
        let (el, az) = (self.elevation_deg.to_radians(), self.azimuth_deg.to_radians());
        Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    /// Unit direction the camera looks along.
    pub fn view_axis(&self) -> Vec3 {
        -self.position_direction()
    }
}

/// World → camera transform for `pose` (rows: image x, image y, view axis).
pub fn camera_matrix(pose: &CameraPose) -> RigidTransform {
    let (el, az, roll) = (
        pose.elevation_deg.to_radians(),
        pose.azimuth_deg.to_radians(),
        pose.roll_deg.to_radians(),
    );
    let forward = pose.view_axis();
    let up0 = Vec3::new(-el.sin() * az.cos(), -el.sin() * az.sin(), el.cos());
    let right0 = up0.cross(&forward);
    let (s, c) = roll.sin_cos();
    let x_axis = right0 * c + up0 * s;
    let y_axis = up0 * c - right0 * s;
    let rotation = nalgebra::Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        forward.transpose(),
    ]);
    let eye = pose.position_direction() * pose.distance;
    RigidTransform::new(rotation, -(rotation * eye)).expect("camera basis is orthonormal")
}

/// Image side in pixels for a scan of `extent_nm` at `step_nm` per pixel.
pub fn resolution_from_step(extent_nm: f64, step_nm: f64, cap: usize) -> Result<usize> {
    if !(extent_nm > 0.0 && extent_nm.is_finite()) {
        return Err(Error::invalid(format!("extent must be positive, got {extent_nm}")));
    }
    if !(step_nm > 0.0 && step_nm.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step_nm}")));
    }
    let pixels = (extent_nm / step_nm).round().max(1.0);
    if pixels > cap as f64 {
        return Err(Error::ResolutionCap {
            pixels: pixels.min(usize::MAX as f64) as usize,
            cap,
        });
    }
    Ok(pixels as usize)
}

/// Lateral pixel size of a square scan `extent_nm` wide sampled at `pixels`.
pub fn pixel_size_nm(extent_nm: f64, pixels: usize) -> f64 {
    extent_nm / pixels as f64
}

/// Per-pixel distance along the view axis to the nearest surface.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major depths; background pixels hold 0.
    pub values: Vec<f64>,
    pub background: Vec<bool>,
    /// Depth of the mesh's far support plane (largest vertex depth), used as
    /// the substrate when converting to heights.
    pub substrate_depth: Option<f64>,
}

impl DepthMap {
    pub fn foreground_count(&self) -> usize {
        self.background.iter().filter(|b| !**b).count()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = j * self.width + i;
        (!self.background[k]).then(|| self.values[k])
    }
}

/// Pixel-center geometry of the orthographic frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
}

impl Frame {
    pub fn new(width: usize, height: usize, frame_half_extent: f64) -> Self {
        Self {
            width,
            height,
            pixel_size: 2.0 * frame_half_extent / width as f64,
        }
    }

    /// Camera-plane coordinates of pixel `(i, j)`'s center; row 0 is the top.
    pub fn pixel_center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 + 0.5 - self.width as f64 * 0.5) * self.pixel_size,
            (self.height as f64 * 0.5 - j as f64 - 0.5) * self.pixel_size,
        )
    }

    fn column_of(&self, x: f64) -> f64 {
        x / self.pixel_size + self.width as f64 * 0.5 - 0.5
    }

    fn row_of(&self, y: f64) -> f64 {
        self.height as f64 * 0.5 - 0.5 - y / self.pixel_size
    }
}

struct Projected {
    v: [[f64; 3]; 3],
    area2: f64,
    cols: (usize, usize),
}

#[inline]
fn edge(a: &[f64; 3], b: &[f64; 3], px: f64, py: f64) -> f64 {
    (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0])
}

/// Renders the nearest-surface depth for every pixel center.
///
/// Both triangle faces count as hits; hits behind the camera are ignored.
/// On exactly equal depths the lower triangle index wins.
pub fn rasterize_depth(
    mesh: &TriangleMesh,
    pose: &CameraPose,
    width: usize,
    height: usize,
    frame_half_extent: f64,
) -> Result<DepthMap> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!("image must be non-empty, got {width}×{height}")));
    }
    if !(frame_half_extent > 0.0 && frame_half_extent.is_finite()) {
        return Err(Error::invalid("frame half extent must be positive"));
    }
    pose.validate()?;
    let view = camera_matrix(pose);
    let frame = Frame::new(width, height, frame_half_extent);

    let cam: Vec<[f64; 3]> = mesh
        .vertices()
        .iter()
        .map(|p| {
            let q = view.apply(p);
            [q.x, q.y, q.z]
        })
        .collect();
    let substrate_depth = cam.iter().map(|v| v[2]).fold(None, |acc: Option<f64>, z| {
        Some(acc.map_or(z, |m| m.max(z)))
    });

    // bucket triangles by the rows their pixel-center footprint covers
    let mut projected = Vec::with_capacity(mesh.triangles().len());
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); height];
    for t in mesh.triangles() {
        let v = [cam[t[0]], cam[t[1]], cam[t[2]]];
        let area2 = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
        let (xmin, xmax) = min_max([v[0][0], v[1][0], v[2][0]]);
        let (ymin, ymax) = min_max([v[0][1], v[1][1], v[2][1]]);
        let i0 = frame.column_of(xmin).ceil().max(0.0);
        let i1 = frame.column_of(xmax).floor().min(width as f64 - 1.0);
        let j0 = frame.row_of(ymax).ceil().max(0.0);
        let j1 = frame.row_of(ymin).floor().min(height as f64 - 1.0);
        let index = projected.len() as u32;
        projected.push(Projected {
            v,
            area2,
            cols: (i0 as usize, i1.max(-1.0) as usize),
        });
        if area2 == 0.0 || i0 > i1 || j0 > j1 {
            continue;
        }
        for row in &mut rows[j0 as usize..=j1 as usize] {
            row.push(index);
        }
    }

    let mut values = vec![f64::INFINITY; width * height];
    par::for_each_row_mut(&mut values, width, |j, out| {
        for &k in &rows[j] {
            let tri = &projected[k as usize];
            let [a, b, c] = &tri.v;
            for (i, slot) in out.iter_mut().enumerate().take(tri.cols.1 + 1).skip(tri.cols.0) {
                let (px, py) = frame.pixel_center(i, j);
                let w0 = edge(b, c, px, py);
                let w1 = edge(c, a, px, py);
                let w2 = edge(a, b, px, py);
                let inside = if tri.area2 > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                let depth = (w0 * a[2] + w1 * b[2] + w2 * c[2]) / tri.area2;
                if depth >= 0.0 && depth < *slot {
                    *slot = depth;
                }
            }
        }
    });

    let background: Vec<bool> = values.iter().map(|v| v.is_infinite()).collect();
    for v in values.iter_mut().filter(|v| v.is_infinite()) {
        *v = 0.0;
    }
    Ok(DepthMap {
        width,
        height,
        values,
        background,
        substrate_depth,
    })
}

fn min_max(v: [f64; 3]) -> (f64, f64) {
    (v[0].min(v[1]).min(v[2]), v[0].max(v[1]).max(v[2]))
}

/// World-space ray through pixel `(i, j)`: origin on the camera plane and the
/// view direction.
pub fn pixel_ray(pose: &CameraPose, frame: &Frame, i: usize, j: usize) -> (Point, Vec3) {
    let view = camera_matrix(pose);
    let r = view.rotation();
    let (x, y) = frame.pixel_center(i, j);
    let eye = Point::from(pose.position_direction() * pose.distance);
    let x_axis = r.row(0).transpose();
    let y_axis = r.row(1).transpose();
    (eye + x_axis * x + y_axis * y, pose.view_axis())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, uv_sphere, Transformable};

    const ANTIPODE_TOL: f64 = 1e-12;

    #[test]
    fn resolution_examples() {
        assert_eq!(resolution_from_step(400.0, 1.5625, DEFAULT_RESOLUTION_CAP).unwrap(), 256);
        assert!((350.0_f64 / 256.0 - 1.367).abs() < 1e-3);
        assert_eq!(resolution_from_step(100.0, 100.0, DEFAULT_RESOLUTION_CAP).unwrap(), 1);
        assert_eq!(resolution_from_step(10.0, 100.0, DEFAULT_RESOLUTION_CAP).unwrap(), 1);
        assert!(matches!(
            resolution_from_step(10_000.0, 1.0, DEFAULT_RESOLUTION_CAP),
            Err(Error::ResolutionCap { pixels: 10_000, .. })
        ));
        assert!(resolution_from_step(10.0, 0.0, DEFAULT_RESOLUTION_CAP).is_err());
    }

    #[test]
    fn default_frame_is_sqrt3() {
        assert_eq!(DEFAULT_FRAME_HALF_EXTENT, 3f64.sqrt());
    }

    #[test]
    fn camera_convention_anchor() {
        let pose = CameraPose::new(0.0, 0.0, 0.0, 3.0).unwrap();
        assert!((pose.view_axis() - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-15);
        let t = camera_matrix(&pose);
        let eye = t.apply(&Point::new(3.0, 0.0, 0.0));
        assert!(eye.coords.norm() < 1e-15);
        assert!((t.apply(&Point::origin()).z - 3.0).abs() < 1e-15);
        assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pole_view_is_top_down_for_any_azimuth() {
        for az in [0.0, 45.0, 123.0, 359.0] {
            let pose = CameraPose::new(90.0, az, 0.0, 3.0).unwrap();
            let t = camera_matrix(&pose);
            let axis = t.rotation().row(2).transpose();
            assert!((axis - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12, "az {az}: {axis:?}");
        }
    }

    #[test]
    fn antipodal_azimuth() {
        let a = camera_matrix(&CameraPose::new(0.0, 0.0, 0.0, 3.0).unwrap());
        let b = camera_matrix(&CameraPose::new(0.0, 180.0, 0.0, 3.0).unwrap());
        let dot = a.rotation().row(2).dot(&b.rotation().row(2));
        assert!((dot + 1.0).abs() < ANTIPODE_TOL);
    }

    #[test]
    fn roll_spins_about_view_axis() {
        let a = camera_matrix(&CameraPose::new(30.0, 60.0, 0.0, 3.0).unwrap());
        let b = camera_matrix(&CameraPose::new(30.0, 60.0, 90.0, 3.0).unwrap());
        assert!((a.rotation().row(2) - b.rotation().row(2)).norm() < 1e-12);
        // x axis rotates onto y
        assert!((b.rotation().row(0) - a.rotation().row(1)).norm() < 1e-12);
    }

    #[test]
    fn pose_ranges_are_validated() {
        assert!(CameraPose::new(91.0, 0.0, 0.0, 3.0).is_err());
        assert!(CameraPose::new(0.0, 360.0, 0.0, 3.0).is_err());
        assert!(CameraPose::new(0.0, 0.0, -1.0, 3.0).is_err());
        assert!(CameraPose::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn flat_plate_top_down() {
        let plate = TriangleMesh::new(
            vec![
                Point::new(-0.5, -0.5, 0.0),
                Point::new(0.5, -0.5, 0.0),
                Point::new(0.5, 0.5, 0.0),
                Point::new(-0.5, 0.5, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            1.0,
            "plate",
        )
        .unwrap();
        let d = rasterize_depth(&plate, &CameraPose::top_down(), 16, 16, 1.0).unwrap();
        // pixel size 0.125: the plate covers the central 8×8 pixel centers
        assert_eq!(d.foreground_count(), 64);
        for j in 0..16 {
            for i in 0..16 {
                let inside = (4..12).contains(&i) && (4..12).contains(&j);
                match d.get(i, j) {
                    Some(depth) => {
                        assert!(inside);
                        assert!((depth - 3.0).abs() < 1e-12);
                    }
                    None => assert!(!inside),
                }
            }
        }
        assert_eq!(d.substrate_depth, Some(3.0));
    }

    #[test]
    fn empty_frame_region_is_background() {
        let cube = box_mesh(Point::new(0.5, 0.5, -0.1), Point::new(0.9, 0.9, 0.1), 1.0, "c").unwrap();
        let d = rasterize_depth(&cube, &CameraPose::top_down(), 20, 20, 1.0).unwrap();
        assert!(d.foreground_count() > 0);
        assert!(d.background[0] && d.background[20 * 20 - 1]);
        assert_eq!(d.values[0], 0.0);
    }

    #[test]
    fn zero_sized_image_is_rejected() {
        let cube = box_mesh(Point::origin(), Point::new(1.0, 1.0, 1.0), 1.0, "c").unwrap();
        assert!(rasterize_depth(&cube, &CameraPose::top_down(), 0, 4, 1.0).is_err());
    }

    #[test]
    fn hemisphere_depth_profile() {
        let sphere = uv_sphere(Point::origin(), 1.0, 64, 128, 1.0, "s").unwrap();
        let n = 65;
        let d = rasterize_depth(&sphere, &CameraPose::top_down(), n, n, 1.2).unwrap();
        let c = n / 2;
        let centre = d.get(c, c).unwrap();
        assert!((centre - 2.0).abs() < 2e-3, "{centre}");
        let mut last = centre;
        for i in c + 1..n {
            let Some(depth) = d.get(i, c) else { break };
            let (x, _) = Frame::new(n, n, 1.2).pixel_center(i, c);
            let analytic = 3.0 - (1.0 - x * x).sqrt();
            assert!(depth >= last - 1e-12, "depth must grow away from the centre");
            assert!((depth - analytic).abs() < 0.02, "x={x} depth={depth} analytic={analytic}");
            last = depth;
        }
    }

    #[test]
    fn rotating_scene_and_camera_together_is_invariant() {
        let sphere = uv_sphere(Point::new(0.2, -0.1, 0.3), 0.5, 10, 20, 1.0, "s").unwrap();
        let pose = CameraPose::new(20.0, 40.0, 10.0, 3.0).unwrap();
        let a = rasterize_depth(&sphere, &pose, 24, 24, 1.0).unwrap();
        // rotating the mesh by R and the camera by R: same azimuth shift about +Z
        let r = RigidTransform::from_axis_angle(Vec3::z(), 70f64.to_radians(), Vec3::zeros());
        let pose_r = CameraPose::new(20.0, 110.0, 10.0, 3.0).unwrap();
        let b = rasterize_depth(&sphere.transformed(&r), &pose_r, 24, 24, 1.0).unwrap();
        assert_eq!(a.background, b.background);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}
