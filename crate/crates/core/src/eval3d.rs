//! 3-D reconstruction metrics: Chamfer, Hausdorff and F-score on sampled
//! surfaces, with ICP rigid alignment in unit-cube coordinates.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::mesh::{aabb, normalize_to_unit_cube, sample_surface_model, Point, PointCloud, RigidTransform, TriangleMesh, Units, Vec3};
use crate::par;

fn same_units(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.units != b.units {
        return Err(Error::UnitMismatch(format!(
            "{} is in {:?} but {} is in {:?}",
            a.source_id, a.units, b.source_id, b.units
        )));
    }
    Ok(())
}

/// Distance from every point of `from` to its nearest neighbour in `tree`.
pub fn nn_distances(from: &[Point], tree: &KdTree<'_>) -> Vec<f64> {
    par::map_slice(from, |p| tree.nearest_distance(p))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn max(values: &[f64]) -> f64 {
    values.iter().cloned().fold(0.0, f64::max)
}

/// Nearest-neighbour distances in both directions between two clouds.
#[derive(Debug, Clone)]
pub struct PairDistances {
    /// For each point of `a`, distance to `b`.
    pub a_to_b: Vec<f64>,
    /// For each point of `b`, distance to `a`.
    pub b_to_a: Vec<f64>,
}

impl PairDistances {
    pub fn compute(a: &PointCloud, b: &PointCloud) -> Result<Self> {
        same_units(a, b)?;
        Ok(Self::between(&a.points, &b.points))
    }

    fn between(a: &[Point], b: &[Point]) -> Self {
        let ta = KdTree::new(a);
        let tb = KdTree::new(b);
        Self {
            a_to_b: nn_distances(a, &tb),
            b_to_a: nn_distances(b, &ta),
        }
    }

    pub fn chamfer(&self) -> f64 {
        0.5 * (mean(&self.a_to_b) + mean(&self.b_to_a))
    }

    pub fn hausdorff(&self) -> f64 {
        max(&self.a_to_b).max(max(&self.b_to_a))
    }

    /// Treats `a` as the prediction and `b` as ground truth.
    pub fn f_score(&self, threshold: f64) -> FScore {
        let within = |d: &[f64]| d.iter().filter(|&&x| x <= threshold).count() as f64 / d.len() as f64;
        FScore::from_fractions(within(&self.a_to_b), within(&self.b_to_a))
    }
}

/// Mean bidirectional nearest-neighbour distance (non-squared).
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(PairDistances::compute(a, b)?.chamfer())
}

/// Largest nearest-neighbour distance over both directions.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(PairDistances::compute(a, b)?.hausdorff())
}

/// Precision, recall and their harmonic mean, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl FScore {
    fn from_fractions(p: f64, r: f64) -> Self {
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self {
            precision: 100.0 * p,
            recall: 100.0 * r,
            f: 100.0 * f,
        }
    }
}

/// F-score of `pred` against `gt` with inclusive threshold `d`.
pub fn f_score(pred: &PointCloud, gt: &PointCloud, d: f64) -> Result<FScore> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("F-score threshold must be positive, got {d}")));
    }
    Ok(PairDistances::compute(pred, gt)?.f_score(d))
}

/// Largest axis-aligned extent of the mesh, in nm.
pub fn protein_length(gt: &TriangleMesh) -> Result<f64> {
    Ok(aabb(gt)?.max_extent() * gt.scale_nm_per_unit())
}

/// ICP settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Initial rotations tried: the 24 octahedral rotations first, then random ones.
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once the mean correspondence distance changes by less than this.
    pub tolerance: f64,
    /// Points per cloud used while screening restarts; the winner is refined on all points.
    pub screening_points: usize,
    /// Iteration cap per restart while screening.
    pub screening_iterations: usize,
}

impl Default for AlignOptions {
    fn default() -> Self {
        Self {
            restarts: 32,
            seed: 0,
            max_iterations: 200,
            tolerance: 1e-7,
            screening_points: 1000,
            screening_iterations: 40,
        }
    }
}

/// How the winning ICP run went.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignDiagnostics {
    pub best_restart: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Updates where the cross-covariance was rank deficient (planar or linear data).
    pub degenerate_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Maps the prediction onto the ground truth.
    pub transform: RigidTransform,
    /// Chamfer distance after alignment, in input units.
    pub residual: f64,
    pub diagnostics: AlignDiagnostics,
}

/// The 24 proper rotations that map the coordinate axes onto themselves.
pub fn octahedral_rotations() -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for (row, &col) in perm.iter().enumerate() {
                m[(row, col)] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin());
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

fn centroid(points: &[Point]) -> Vec3 {
    points.iter().map(|p| p.coords).sum::<Vec3>() / points.len() as f64
}

/// Least-squares proper rotation + translation taking `src[i]` onto `dst[i]`.
/// Returns whether the cross-covariance was rank deficient.
pub fn kabsch(src: &[Point], dst: &[Point]) -> (RigidTransform, bool) {
    let cs = centroid(src);
    let cd = centroid(dst);
    let mut h = Matrix3::zeros();
    for (p, q) in src.iter().zip(dst) {
        h += (p.coords - cs) * (q.coords - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let sv = svd.singular_values;
    let smallest = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(2);
    let degenerate = sv[smallest] <= 1e-12 * sv.max().max(f64::MIN_POSITIVE);
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(smallest, smallest)] = -1.0;
    }
    let r = v * d * u.transpose();
    let t = cd - r * cs;
    (RigidTransform::from_parts_unchecked(r, t), degenerate)
}

struct IcpRun {
    transform: RigidTransform,
    iterations: usize,
    converged: bool,
    degenerate_updates: usize,
}

fn icp(src: &[Point], target: &KdTree<'_>, target_points: &[Point], init: RigidTransform, max_iterations: usize, tolerance: f64) -> IcpRun {
    let mut transform = init;
    let mut previous = f64::INFINITY;
    let mut degenerate_updates = 0;
    let mut matched = vec![Point::origin(); src.len()];
    for iteration in 0..max_iterations {
        let mut total = 0.0;
        for (p, m) in src.iter().zip(matched.iter_mut()) {
            let (j, d2) = target.nearest(&transform.apply(p)).expect("target is non-empty");
            *m = target_points[j];
            total += d2.sqrt();
        }
        let residual = total / src.len() as f64;
        if (previous - residual).abs() < tolerance {
            return IcpRun {
                transform,
                iterations: iteration,
                converged: true,
                degenerate_updates,
            };
        }
        previous = residual;
        let (next, degenerate) = kabsch(src, &matched);
        degenerate_updates += usize::from(degenerate);
        transform = next;
    }
    IcpRun {
        transform,
        iterations: max_iterations,
        converged: false,
        degenerate_updates,
    }
}

fn stride_subsample(points: &[Point], n: usize) -> Vec<Point> {
    if points.len() <= n || n == 0 {
        return points.to_vec();
    }
    (0..n).map(|k| points[k * points.len() / n]).collect()
}

/// Rigidly aligns `pred` onto `gt` with multi-start point-to-point ICP.
///
/// Each restart starts from a rotation about the prediction's centroid that
/// is then moved onto the ground-truth centroid. Restarts are screened on at
/// most `screening_points` points per cloud; the lowest-Chamfer restart (ties
/// to the lower index) is refined on the full clouds.
pub fn align_rigid(pred: &PointCloud, gt: &PointCloud, opts: &AlignOptions) -> Result<Alignment> {
    same_units(pred, gt)?;
    if opts.restarts == 0 {
        return Err(Error::invalid("at least one ICP restart is required"));
    }
    let rotations = {
        let mut r = octahedral_rotations();
        r.truncate(opts.restarts);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        while r.len() < opts.restarts {
            r.push(random_rotation(&mut rng));
        }
        r
    };
    let cp = centroid(&pred.points);
    let cg = centroid(&gt.points);

    let screen_pred = stride_subsample(&pred.points, opts.screening_points);
    let screen_gt = stride_subsample(&gt.points, opts.screening_points);
    let screen_tree = KdTree::new(&screen_gt);
    let full_tree = KdTree::new(&gt.points);

    let screened: Vec<(f64, IcpRun)> = par::map_slice(&rotations, |r| {
        let init = RigidTransform::from_parts_unchecked(*r, cg - r * cp);
        let cap = opts.screening_iterations.min(opts.max_iterations);
        let run = icp(&screen_pred, &screen_tree, &screen_gt, init, cap, opts.tolerance);
        let moved: Vec<Point> = screen_pred.iter().map(|p| run.transform.apply(p)).collect();
        (PairDistances::between(&moved, &screen_gt).chamfer(), run)
    });
    let mut best = 0;
    for (k, (score, _)) in screened.iter().enumerate() {
        if *score < screened[best].0 {
            best = k;
        }
    }
    let seed_run = &screened[best].1;
    let run = if seed_run.converged && screen_pred.len() == pred.len() && screen_gt.len() == gt.len() {
        IcpRun { ..*seed_run }
    } else {
        let refined = icp(&pred.points, &full_tree, &gt.points, seed_run.transform, opts.max_iterations, opts.tolerance);
        IcpRun {
            iterations: seed_run.iterations + refined.iterations,
            degenerate_updates: seed_run.degenerate_updates + refined.degenerate_updates,
            ..refined
        }
    };
    let moved: Vec<Point> = pred.points.iter().map(|p| run.transform.apply(p)).collect();
    let residual = PairDistances::between(&moved, &gt.points).chamfer();
    if run.degenerate_updates > 0 {
        log::info!("alignment hit {} rank-deficient updates", run.degenerate_updates);
    }
    Ok(Alignment {
        transform: run.transform,
        residual,
        diagnostics: AlignDiagnostics {
            best_restart: best,
            restarts: opts.restarts,
            iterations: run.iterations,
            converged: run.converged,
            degenerate_updates: run.degenerate_updates,
        },
    })
}

/// Settings for [`evaluate_3d`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eval3dOptions {
    pub samples: usize,
    pub seed: u64,
    pub align: bool,
    pub restarts: usize,
}

impl Default for Eval3dOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            align: true,
            restarts: 32,
        }
    }
}

/// Serializable form of the alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    /// Chamfer distance after alignment, normalized units.
    pub residual: f64,
    pub diagnostics: Option<AlignDiagnostics>,
}

impl AlignmentRecord {
    fn new(t: &RigidTransform, residual: f64, diagnostics: Option<AlignDiagnostics>) -> Self {
        let r = t.rotation();
        let tr = t.translation();
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [tr.x, tr.y, tr.z],
            residual,
            diagnostics,
        }
    }

    pub fn transform(&self) -> Result<RigidTransform> {
        let r = Matrix3::from_fn(|i, j| self.rotation[i][j]);
        RigidTransform::new(r, Vec3::from(self.translation))
    }
}

/// One row of 3-D results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eval3dReport {
    pub pred_id: String,
    pub gt_id: String,
    pub cd_nm: f64,
    pub hd_nm: f64,
    /// F-score (%) at 5% of the protein length.
    pub f_at_005: f64,
    /// F-score (%) at 10% of the protein length.
    pub f_at_01: f64,
    pub precision_at_005: f64,
    pub recall_at_005: f64,
    pub precision_at_01: f64,
    pub recall_at_01: f64,
    pub protein_length_nm: f64,
    pub length_definition: String,
    /// Ground-truth nm per normalized unit, used to convert both clouds.
    pub nm_per_normalized_unit: f64,
    pub alignment: AlignmentRecord,
    pub sample_count: usize,
    pub seed: u64,
}

/// Full protocol: normalize both meshes to the unit cube, sample each,
/// align the prediction to the ground truth, then score in nm using the
/// ground truth's scale.
///
/// Both meshes are sampled with the same seed.
pub fn evaluate_3d(pred: &TriangleMesh, gt: &TriangleMesh, opts: &Eval3dOptions) -> Result<Eval3dReport> {
    let length = protein_length(gt)?;
    let pred_n = normalize_to_unit_cube(pred)?.mesh;
    let gt_n = normalize_to_unit_cube(gt)?.mesh;
    let nm_per_unit = gt_n.scale_nm_per_unit();
    let pred_cloud = PointCloud::new(sample_surface_model(&pred_n, opts.samples, opts.seed)?, Units::Normalized, pred.source_id())?;
    let gt_cloud = PointCloud::new(sample_surface_model(&gt_n, opts.samples, opts.seed)?, Units::Normalized, gt.source_id())?;

    let (transform, residual, diagnostics) = if opts.align {
        let a = align_rigid(
            &pred_cloud,
            &gt_cloud,
            &AlignOptions {
                restarts: opts.restarts,
                seed: opts.seed,
                ..Default::default()
            },
        )?;
        (a.transform, a.residual, Some(a.diagnostics))
    } else {
        (RigidTransform::identity(), f64::NAN, None)
    };
    let moved: Vec<Point> = pred_cloud.points.iter().map(|p| transform.apply(p)).collect();
    let mut d = PairDistances::between(&moved, &gt_cloud.points);
    for x in d.a_to_b.iter_mut().chain(d.b_to_a.iter_mut()) {
        *x *= nm_per_unit;
    }
    let residual = if residual.is_nan() { d.chamfer() / nm_per_unit } else { residual };
    let f5 = d.f_score(0.05 * length);
    let f10 = d.f_score(0.1 * length);
    Ok(Eval3dReport {
        pred_id: pred.source_id().to_string(),
        gt_id: gt.source_id().to_string(),
        cd_nm: d.chamfer(),
        hd_nm: d.hausdorff(),
        f_at_005: f5.f,
        f_at_01: f10.f,
        precision_at_005: f5.precision,
        recall_at_005: f5.recall,
        precision_at_01: f10.precision,
        recall_at_01: f10.recall,
        protein_length_nm: length,
        length_definition: "max_aabb_side".into(),
        nm_per_normalized_unit: nm_per_unit,
        alignment: AlignmentRecord::new(&transform, residual, diagnostics),
        sample_count: opts.samples,
        seed: opts.seed,
    })
}

pub const BATCH_COLUMNS: [&str; 9] = [
    "pred_id",
    "gt_id",
    "cd_nm",
    "hd_nm",
    "f_at_005",
    "f_at_01",
    "protein_length_nm",
    "sample_count",
    "seed",
];

/// Tab-separated table, one report per row.
pub fn batch_table(reports: &[Eval3dReport]) -> String {
    let mut out = BATCH_COLUMNS.join("\t");
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.pred_id, r.gt_id, r.cd_nm, r.hd_nm, r.f_at_005, r.f_at_01, r.protein_length_nm, r.sample_count, r.seed
        );
    }
    out
}

pub fn write_batch_table(reports: &[Eval3dReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, batch_table(reports)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, uv_sphere, Transformable};

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(points.iter().map(|p| Point::new(p[0], p[1], p[2])).collect(), Units::Nm, "c").unwrap()
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..n)
            .map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-0.6..0.6), rng.random_range(-0.3..0.3)))
            .collect();
        PointCloud::new(points, Units::Normalized, "r").unwrap()
    }

    #[test]
    fn metric_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer(&a, &b).unwrap(), 1.0);
        let two = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        assert_eq!(hausdorff(&two, &a).unwrap(), 2.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);

        let pred = cloud(&[[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]]);
        let f = f_score(&pred, &a, 1.0).unwrap();
        assert_eq!((f.precision, f.recall), (50.0, 100.0));
        assert!((f.f - 200.0 / 3.0).abs() < 1e-12);
        let same = f_score(&two, &two, 0.01).unwrap();
        assert_eq!((same.precision, same.recall, same.f), (100.0, 100.0, 100.0));
    }

    #[test]
    fn unit_mismatch_is_an_error() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = a.scaled(1.0, Units::Normalized);
        assert!(matches!(chamfer(&a, &b), Err(Error::UnitMismatch(_))));
        assert!(matches!(hausdorff(&a, &b), Err(Error::UnitMismatch(_))));
    }

    #[test]
    fn f_score_zero_when_disjoint() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[5.0, 0.0, 0.0]]);
        assert_eq!(f_score(&a, &b, 1.0).unwrap().f, 0.0);
        assert!(f_score(&a, &b, 0.0).is_err());
    }

    #[test]
    fn protein_length_examples() {
        let b = box_mesh(Point::new(0.0, 0.0, 0.0), Point::new(20.0, 10.0, 5.0), 1.0, "box").unwrap();
        assert_eq!(protein_length(&b).unwrap(), 20.0);
        let s = uv_sphere(Point::origin(), 10.0, 32, 64, 1.0, "s").unwrap();
        assert!((protein_length(&s).unwrap() - 20.0).abs() < 0.1);
    }

    #[test]
    fn octahedral_group() {
        let g = octahedral_rotations();
        assert_eq!(g.len(), 24);
        for (i, a) in g.iter().enumerate() {
            assert_eq!(a.determinant(), 1.0);
            for b in &g[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(g[0], Matrix3::identity());
    }

    #[test]
    fn self_alignment_is_identity() {
        let c = random_cloud(500, 1);
        let a = align_rigid(&c, &c, &AlignOptions::default()).unwrap();
        assert!((a.transform.rotation() - Matrix3::identity()).amax() < 1e-6);
        assert!(a.transform.translation().norm() < 1e-6);
        assert!(a.residual < 1e-9);
    }

    #[test]
    fn recovers_a_rigid_motion() {
        let c = random_cloud(1000, 2);
        let t = RigidTransform::from_axis_angle(Vec3::new(0.3, -1.0, 0.5), 2.2, Vec3::new(0.2, -0.1, 0.3));
        let moved = c.transformed(&t);
        let a = align_rigid(&moved, &c, &AlignOptions::default()).unwrap();
        assert!(a.residual < 1e-3, "{}", a.residual);
        assert!((a.transform.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mirror_image_is_not_reachable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // chiral: three arms of different lengths along x, y, z plus a twist
        let mut points = Vec::new();
        for _ in 0..600 {
            let s: f64 = rng.random();
            let arm = rng.random_range(0..3);
            points.push(match arm {
                0 => Point::new(s, 0.1 * s * s, 0.0),
                1 => Point::new(0.0, 0.6 * s, 0.2 * s),
                _ => Point::new(0.1 * s, 0.0, 0.3 * s),
            });
        }
        let c = PointCloud::new(points, Units::Normalized, "chiral").unwrap();
        let mirrored = PointCloud::new(
            c.points.iter().map(|p| Point::new(-p.x, p.y, p.z)).collect(),
            Units::Normalized,
            "mirror",
        )
        .unwrap();
        let a = align_rigid(&mirrored, &c, &AlignOptions::default()).unwrap();
        assert!((a.transform.rotation().determinant() - 1.0).abs() < 1e-9);
        assert!(a.residual > 1e-2, "{}", a.residual);
    }

    #[test]
    fn planar_cloud_stays_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let points: Vec<Point> = (0..200).map(|_| Point::new(rng.random(), rng.random(), 0.0)).collect();
        let c = PointCloud::new(points, Units::Normalized, "plane").unwrap();
        let a = align_rigid(&c, &c, &AlignOptions::default()).unwrap();
        assert!((a.transform.rotation().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn evaluate_self_and_partial() {
        let gt = uv_sphere(Point::origin(), 1.0, 24, 48, 5.0, "ball").unwrap();
        let opts = Eval3dOptions {
            samples: 3000,
            seed: 4,
            ..Default::default()
        };
        let r = evaluate_3d(&gt, &gt, &opts).unwrap();
        assert!(r.cd_nm < 0.05, "{}", r.cd_nm);
        assert_eq!((r.f_at_005, r.f_at_01), (100.0, 100.0));
        assert!((r.protein_length_nm - 10.0).abs() < 1e-9);
        assert!(r.cd_nm <= r.hd_nm);

        // drop the upper cap; the remaining shape keeps every point near gt
        let keep: Vec<[usize; 3]> = gt
            .triangles()
            .iter()
            .copied()
            .filter(|t| t.iter().map(|&i| gt.vertices()[i].z).sum::<f64>() < 1.2)
            .collect();
        let partial = TriangleMesh::new(gt.vertices().to_vec(), keep, 5.0, "partial").unwrap();
        let r = evaluate_3d(&partial, &gt, &opts).unwrap();
        assert!(r.recall_at_005 < 95.0, "{}", r.recall_at_005);
        assert!(r.precision_at_005 > r.recall_at_005);
    }

    #[test]
    fn report_keys_and_batch_table() {
        let gt = uv_sphere(Point::origin(), 1.0, 8, 16, 1.0, "g").unwrap();
        let r = evaluate_3d(&gt, &gt, &Eval3dOptions { samples: 200, ..Default::default() }).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["cd_nm", "hd_nm", "f_at_005", "f_at_01", "protein_length_nm", "alignment", "sample_count", "seed"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        r.alignment.transform().unwrap();
        let table = batch_table(&[r.clone(), r]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.starts_with("pred_id\tgt_id\tcd_nm"));
    }
}
