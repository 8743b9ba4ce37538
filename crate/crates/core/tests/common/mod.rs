//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use afmkit::afm::{HeightMap, TipKernel};
use afmkit::mesh::{Point, TriangleMesh, Vec3};
use afmkit::raster::{pixel_ray, CameraPose, Frame};

/// Grayscale dilation evaluated pixel by pixel from the tap list.
pub fn dilate_naive(h: &HeightMap, kernel: &TipKernel) -> Vec<f32> {
    let (w, ht) = (h.width as i64, h.height as i64);
    let mut out = vec![0f32; h.values_nm.len()];
    for y in 0..ht {
        for x in 0..w {
            let mut best = 0f32;
            for t in &kernel.taps {
                let (sx, sy) = (x + i64::from(t.du), y + i64::from(t.dv));
                let base = if sx >= 0 && sy >= 0 && sx < w && sy < ht {
                    h.values_nm[(sy * w + sx) as usize]
                } else {
                    0.0
                };
                best = best.max(base + t.offset_nm);
            }
            out[(y * w + x) as usize] = best;
        }
    }
    out
}

/// Möller–Trumbore, two-sided, inclusive edges. Returns the ray parameter.
pub fn ray_triangle(origin: &Point, dir: &Vec3, tri: [Point; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t >= 0.0).then_some(t)
}

/// Nearest hit depth per pixel by casting one ray per pixel against every triangle.
pub fn raycast_depth(mesh: &TriangleMesh, pose: &CameraPose, width: usize, height: usize, half_extent: f64) -> Vec<Option<f64>> {
    let frame = Frame::new(width, height, half_extent);
    let mut out = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            let (o, d) = pixel_ray(pose, &frame, i, j);
            let hit = (0..mesh.triangles().len())
                .filter_map(|k| ray_triangle(&o, &d, mesh.triangle(k)))
                .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |m| m.min(t))));
            out.push(hit);
        }
    }
    out
}

fn nn_brute(p: &Point, cloud: &[Point]) -> f64 {
    cloud.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min)
}

/// O(n·m) Chamfer distance (mean of means, non-squared).
pub fn chamfer_brute(a: &[Point], b: &[Point]) -> f64 {
    let ab: f64 = a.iter().map(|p| nn_brute(p, b)).sum::<f64>() / a.len() as f64;
    let ba: f64 = b.iter().map(|p| nn_brute(p, a)).sum::<f64>() / b.len() as f64;
    (ab + ba) / 2.0
}

pub fn hausdorff_brute(a: &[Point], b: &[Point]) -> f64 {
    let ab = a.iter().map(|p| nn_brute(p, b)).fold(0.0, f64::max);
    let ba = b.iter().map(|p| nn_brute(p, a)).fold(0.0, f64::max);
    ab.max(ba)
}

/// (precision %, recall %, F %).
pub fn f_score_brute(pred: &[Point], gt: &[Point], d: f64) -> (f64, f64, f64) {
    let p = pred.iter().filter(|x| nn_brute(x, gt) <= d).count() as f64 / pred.len() as f64;
    let r = gt.iter().filter(|x| nn_brute(x, pred) <= d).count() as f64 / gt.len() as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (100.0 * p, 100.0 * r, 100.0 * f)
}

/// SSIM from the textbook definition: a 2-D Gaussian window placed at every
/// fully contained position, two-pass weighted moments.
pub fn ssim_direct(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    const K: usize = 11;
    let sigma = 1.5f64;
    let mut w = [[0f64; K]; K];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *cell = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *cell;
        }
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - K {
        for x0 in 0..=width - K {
            let px = |img: &[f64], i: usize, j: usize| img[(y0 + i) * width + x0 + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for (i, row) in w.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    let wt = cell / total;
                    ma += wt * px(a, i, j);
                    mb += wt * px(b, i, j);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for (i, row) in w.iter().enumerate() {
                for (j, cell) in row.iter().enumerate() {
                    let wt = cell / total;
                    let (da, db) = (px(a, i, j) - ma, px(b, i, j) - mb);
                    va += wt * da * da;
                    vb += wt * db * db;
                    cov += wt * da * db;
                }
            }
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}

/// Distance from `p` to the surface of the sphere.
pub fn sphere_error(p: &Point, center: &Point, radius: f64) -> f64 {
    ((p - center).norm() - radius).abs()
}
