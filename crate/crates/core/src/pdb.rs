//! PDB atom parsing and a molecular surface built as the zero level set of a
//! union of probe-inflated van der Waals balls.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::isosurface::{marching_cubes, DensityGrid};
use crate::mesh::{Aabb, Point, TriangleMesh, Vec3};
use crate::par;

/// Water probe radius in nm.
pub const DEFAULT_PROBE_NM: f64 = 0.14;
/// Default voxel edge in nm.
pub const DEFAULT_VOXEL_NM: f64 = 0.05;
/// Radius for elements missing from the built-in table (carbon).
pub const FALLBACK_RADIUS_NM: f64 = 0.17;
/// Default voxel budget, 512³.
pub const DEFAULT_VOXEL_BUDGET: u64 = 512 * 512 * 512;

/// Bondi van der Waals radii in nm.
pub fn vdw_radius_nm(element: &str) -> Option<f64> {
    Some(match element.to_ascii_uppercase().as_str() {
        "H" => 0.120,
        "C" => 0.170,
        "N" => 0.155,
        "O" => 0.152,
        "S" => 0.180,
        "P" => 0.180,
        _ => return None,
    })
}

/// Atom centers (nm), element symbols and radii.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomList {
    pub positions: Vec<Point>,
    pub elements: Vec<String>,
    pub vdw_radius_nm: Vec<f64>,
}

impl AtomList {
    pub fn new(positions: Vec<Point>, elements: Vec<String>, vdw_radius_nm: Vec<f64>) -> Result<Self> {
        if positions.len() != elements.len() || positions.len() != vdw_radius_nm.len() {
            return Err(Error::invalid("atom list columns differ in length"));
        }
        if vdw_radius_nm.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("atom radii must be positive"));
        }
        if positions.iter().any(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("atom positions must be finite"));
        }
        Ok(Self {
            positions,
            elements,
            vdw_radius_nm,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ParsedPdb {
    pub atoms: AtomList,
    pub warnings: Vec<String>,
}

/// Fixed-column slice of a PDB record (1-based inclusive columns).
fn columns(line: &str, from: usize, to: usize) -> Option<&str> {
    let bytes = line.as_bytes();
    if bytes.len() < from {
        return None;
    }
    line.get(from - 1..to.min(bytes.len()))
}

fn element_from_name(name: &str) -> String {
    // element symbols sit right-justified in columns 13–14 of the atom name
    let head: String = name
        .chars()
        .take(2)
        .filter(|c| c.is_ascii_alphabetic())
        .collect();
    if vdw_radius_nm(&head).is_some() {
        return head.to_ascii_uppercase();
    }
    name.chars()
        .find(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_uppercase().to_string())
        .unwrap_or_default()
}

/// Reads ATOM/HETATM records; coordinates are converted from Å to nm.
pub fn parse_pdb(path: impl AsRef<Path>) -> Result<ParsedPdb> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pdb_str(&text, path)
}

pub(crate) fn parse_pdb_str(text: &str, path: &Path) -> Result<ParsedPdb> {
    let mut positions = Vec::new();
    let mut elements = Vec::new();
    let mut radii = Vec::new();
    let mut warnings = Vec::new();
    let mut first_model_done = false;
    let mut warned_models = false;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let record = columns(line, 1, 6).unwrap_or("").trim_end();
        match record {
            "ENDMDL" => first_model_done = true,
            "ATOM" | "HETATM" => {
                if first_model_done {
                    if !warned_models {
                        warnings.push(format!(
                            "{}:{lineno}: ignoring atoms in models after the first",
                            path.display()
                        ));
                        warned_models = true;
                    }
                    continue;
                }
                let coord = |from, to| {
                    columns(line, from, to)
                        .map(str::trim)
                        .and_then(|s| s.parse::<f64>().ok())
                        .filter(|v| v.is_finite())
                };
                let (Some(x), Some(y), Some(z)) = (coord(31, 38), coord(39, 46), coord(47, 54)) else {
                    warnings.push(format!(
                        "{}:{lineno}: malformed coordinates, record skipped",
                        path.display()
                    ));
                    continue;
                };
                let element = columns(line, 77, 78)
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.to_ascii_uppercase())
                    .unwrap_or_else(|| element_from_name(columns(line, 13, 16).unwrap_or("")));
                let radius = vdw_radius_nm(&element).unwrap_or(FALLBACK_RADIUS_NM);
                positions.push(Point::new(x, y, z) / 10.0);
                elements.push(element);
                radii.push(radius);
            }
            _ => {}
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    if positions.is_empty() {
        return Err(Error::Empty(format!("{}: no atoms", path.display())));
    }
    Ok(ParsedPdb {
        atoms: AtomList::new(positions, elements, radii)?,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub probe_nm: f64,
    pub voxel_nm: f64,
    pub padding_nm: f64,
    pub voxel_budget: u64,
}

impl Default for DensityParams {
    fn default() -> Self {
        Self {
            probe_nm: DEFAULT_PROBE_NM,
            voxel_nm: DEFAULT_VOXEL_NM,
            padding_nm: 2.0 * DEFAULT_VOXEL_NM,
            voxel_budget: DEFAULT_VOXEL_BUDGET,
        }
    }
}

/// Uniform bins of atom indices used for exact nearest-surface queries.
struct CellIndex {
    origin: Point,
    cell: f64,
    dims: [i64; 3],
    starts: Vec<usize>,
    atoms: Vec<usize>,
}

impl CellIndex {
    fn new(positions: &[Point], cell: f64) -> Self {
        let bb = Aabb::from_points(positions).expect("non-empty atoms");
        let dims = [0, 1, 2].map(|i| ((bb.max[i] - bb.min[i]) / cell).floor() as i64 + 1);
        let origin = bb.min;
        let n_cells = (dims[0] * dims[1] * dims[2]) as usize;
        let cell_of = |p: &Point| {
            let c = [0, 1, 2].map(|i| (((p[i] - origin[i]) / cell).floor() as i64).clamp(0, dims[i] - 1));
            ((c[2] * dims[1] + c[1]) * dims[0] + c[0]) as usize
        };
        let mut counts = vec![0usize; n_cells + 1];
        for p in positions {
            counts[cell_of(p) + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut atoms = vec![0; positions.len()];
        for (a, p) in positions.iter().enumerate() {
            let c = cell_of(p);
            atoms[fill[c]] = a;
            fill[c] += 1;
        }
        Self {
            origin,
            cell,
            dims,
            starts: counts,
            atoms,
        }
    }

    fn cell_atoms(&self, c: [i64; 3]) -> &[usize] {
        if (0..3).any(|i| c[i] < 0 || c[i] >= self.dims[i]) {
            return &[];
        }
        let idx = ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize;
        &self.atoms[self.starts[idx]..self.starts[idx + 1]]
    }

    /// Exact `min_i (|p − c_i| − R_i)` by expanding cubic shells of cells.
    fn min_field(&self, p: &Point, centers: &[Point], inflated: &[f64], max_inflated: f64) -> f64 {
        let home = [0, 1, 2].map(|i| ((p[i] - self.origin[i]) / self.cell).floor() as i64);
        // shells closer than this lie entirely outside the occupied cells
        let first = (0..3)
            .map(|i| (-home[i]).max(home[i] - (self.dims[i] - 1)).max(0))
            .max()
            .unwrap_or(0);
        let last = (0..3)
            .map(|i| home[i].abs().max((self.dims[i] - 1 - home[i]).abs()))
            .max()
            .unwrap_or(0);
        let mut best = f64::INFINITY;
        for k in first..=last {
            // every atom in shell k is at least (k−1)·cell away from p
            if k >= 1 && (k - 1) as f64 * self.cell - max_inflated >= best {
                break;
            }
            let lo = [0, 1, 2].map(|i| (home[i] - k).max(0));
            let hi = [0, 1, 2].map(|i| (home[i] + k).min(self.dims[i] - 1));
            for cz in lo[2]..=hi[2] {
                for cy in lo[1]..=hi[1] {
                    for cx in lo[0]..=hi[0] {
                        let ring = (cx - home[0])
                            .abs()
                            .max((cy - home[1]).abs())
                            .max((cz - home[2]).abs());
                        if ring != k {
                            continue;
                        }
                        for &a in self.cell_atoms([cx, cy, cz]) {
                            best = best.min((p - centers[a]).norm() - inflated[a]);
                        }
                    }
                }
            }
        }
        best
    }
}

/// Signed distance to the union of balls of radius `vdW + probe`, sampled on
/// a grid covering the atoms plus `padding_nm` and the largest inflated radius.
pub fn atoms_to_density(atoms: &AtomList, params: &DensityParams) -> Result<DensityGrid> {
    let DensityParams {
        probe_nm,
        voxel_nm,
        padding_nm,
        voxel_budget,
    } = *params;
    if !(probe_nm >= 0.0) {
        return Err(Error::invalid(format!("probe radius must be ≥ 0, got {probe_nm}")));
    }
    if !(voxel_nm > 0.0) {
        return Err(Error::invalid(format!("voxel size must be > 0, got {voxel_nm}")));
    }
    if !(padding_nm >= 0.0) {
        return Err(Error::invalid(format!("padding must be ≥ 0, got {padding_nm}")));
    }
    if atoms.is_empty() {
        return Err(Error::Empty("no atoms".into()));
    }

    let inflated: Vec<f64> = atoms.vdw_radius_nm.iter().map(|r| r + probe_nm).collect();
    let max_inflated = inflated.iter().cloned().fold(0.0, f64::max);
    let bb = Aabb::from_points(&atoms.positions)?;
    let margin = padding_nm + max_inflated;
    let origin = bb.min - Vec3::repeat(margin);
    let span = bb.extent() + Vec3::repeat(2.0 * margin);
    let dims = [0, 1, 2].map(|i| ((span[i] / voxel_nm).ceil() as usize + 1).max(2));
    let voxels = dims.iter().map(|&d| d as u64).product::<u64>();
    if voxels > voxel_budget {
        return Err(Error::VoxelBudget {
            voxels,
            budget: voxel_budget,
        });
    }

    // exact near the surface via per-atom splatting, then exact shell search
    // for whatever is left further out
    let band = max_inflated.max(2.0 * voxel_nm);
    let mut by_z: Vec<usize> = (0..atoms.len()).collect();
    by_z.sort_by(|&a, &b| atoms.positions[a].z.total_cmp(&atoms.positions[b].z).then(a.cmp(&b)));
    let index = CellIndex::new(&atoms.positions, band);
    let [nx, ny, nz] = dims;
    let centers = &atoms.positions;

    let mut values = vec![0f32; nx * ny * nz];
    let slice_len = nx * ny;
    par::for_each_row_mut(&mut values, slice_len, |z, slice| {
        let pz = origin.z + z as f64 * voxel_nm;
        let mut field = vec![f64::INFINITY; slice_len];
        let reach = max_inflated + band;
        let lo = by_z.partition_point(|&a| centers[a].z < pz - reach);
        let hi = by_z.partition_point(|&a| centers[a].z <= pz + reach);
        for &a in &by_z[lo..hi] {
            let c = centers[a];
            let r = inflated[a] + band;
            let dz = pz - c.z;
            let disk2 = r * r - dz * dz;
            if disk2 < 0.0 {
                continue;
            }
            let disk = disk2.sqrt();
            let x0 = (((c.x - disk - origin.x) / voxel_nm).floor().max(0.0)) as usize;
            let x1 = ((((c.x + disk - origin.x) / voxel_nm).ceil()) as usize).min(nx - 1);
            let y0 = (((c.y - disk - origin.y) / voxel_nm).floor().max(0.0)) as usize;
            let y1 = ((((c.y + disk - origin.y) / voxel_nm).ceil()) as usize).min(ny - 1);
            for y in y0..=y1 {
                let py = origin.y + y as f64 * voxel_nm;
                for x in x0..=x1 {
                    let px = origin.x + x as f64 * voxel_nm;
                    let d = ((px - c.x).powi(2) + (py - c.y).powi(2) + dz * dz).sqrt() - inflated[a];
                    let cell = &mut field[y * nx + x];
                    if d < *cell {
                        *cell = d;
                    }
                }
            }
        }
        for (i, (out, f)) in slice.iter_mut().zip(&field).enumerate() {
            let v = if *f < band {
                *f
            } else {
                let p = Point::new(
                    origin.x + (i % nx) as f64 * voxel_nm,
                    origin.y + (i / nx) as f64 * voxel_nm,
                    pz,
                );
                index.min_field(&p, centers, &inflated, max_inflated)
            };
            *out = v as f32;
        }
    });

    DensityGrid::new(dims, origin, voxel_nm, values)
}

/// PDB file → molecular surface mesh in nm (`scale_nm_per_unit = 1`).
pub fn pdb_to_mesh(path: impl AsRef<Path>, probe_nm: f64, voxel_nm: f64) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let parsed = parse_pdb(path)?;
    let params = DensityParams {
        probe_nm,
        voxel_nm,
        padding_nm: 2.0 * voxel_nm,
        ..DensityParams::default()
    };
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    atoms_to_mesh(&parsed.atoms, &params, &source_id)
}

pub fn atoms_to_mesh(atoms: &AtomList, params: &DensityParams, source_id: &str) -> Result<TriangleMesh> {
    let grid = atoms_to_density(atoms, params)?;
    let surface = marching_cubes(&grid, 0.0);
    if surface.is_empty() {
        return Err(Error::Empty(format!("{source_id}: empty isosurface")));
    }
    // the field is negative inside, so the extracted winding faces inward
    let flipped = surface.triangles().iter().map(|t| [t[0], t[2], t[1]]).collect();
    TriangleMesh::new(surface.vertices().to_vec(), flipped, 1.0, source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::aabb;
    use std::path::PathBuf;

    fn atom_line(serial: usize, name: &str, x: f64, y: f64, z: f64, element: &str) -> String {
        format!(
            "ATOM  {serial:>5} {name:<4} ALA A   1    {x:>8.3}{y:>8.3}{z:>8.3}  1.00  0.00          {element:>2}"
        )
    }

    fn parse(text: &str) -> Result<ParsedPdb> {
        parse_pdb_str(text, &PathBuf::from("t.pdb"))
    }

    fn single(radius: f64) -> AtomList {
        AtomList::new(vec![Point::origin()], vec!["C".into()], vec![radius]).unwrap()
    }

    #[test]
    fn column_layout_is_standard() {
        let line = atom_line(1, "CA", 10.0, 0.0, 0.0, "C");
        assert_eq!(&line[30..38], "  10.000");
        assert_eq!(&line[76..78], " C");
    }

    #[test]
    fn angstrom_to_nm() {
        let p = parse(&atom_line(1, "CA", 10.0, 0.0, 0.0, "C")).unwrap();
        assert_eq!(p.atoms.positions, vec![Point::new(1.0, 0.0, 0.0)]);
        assert_eq!(p.atoms.elements, vec!["C".to_string()]);
        assert_eq!(p.atoms.vdw_radius_nm, vec![0.170]);
    }

    #[test]
    fn element_fallbacks() {
        let mut no_element = atom_line(1, " N", 0.0, 0.0, 0.0, "");
        no_element.truncate(66);
        let text = [
            no_element,
            atom_line(2, "CA", 1.0, 0.0, 0.0, "XX"),
            atom_line(3, "O", 2.0, 0.0, 0.0, "O"),
        ]
        .join("\n");
        let p = parse(&text).unwrap();
        assert_eq!(p.atoms.elements[0], "N");
        assert_eq!(p.atoms.vdw_radius_nm[0], 0.155);
        assert_eq!(p.atoms.vdw_radius_nm[1], FALLBACK_RADIUS_NM);
        assert_eq!(p.atoms.vdw_radius_nm[2], 0.152);
    }

    #[test]
    fn empty_file_has_no_atoms() {
        let err = parse("").unwrap_err();
        assert!(err.to_string().contains("no atoms"), "{err}");
    }

    #[test]
    fn malformed_records_warn() {
        let text = format!("{}\nATOM      2  CA  ALA A   1     garbage\n", atom_line(1, "CA", 0.0, 0.0, 0.0, "C"));
        let p = parse(&text).unwrap();
        assert_eq!(p.atoms.len(), 1);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn later_models_are_ignored() {
        let text = [
            "MODEL        1".to_string(),
            atom_line(1, "CA", 0.0, 0.0, 0.0, "C"),
            "ENDMDL".to_string(),
            "MODEL        2".to_string(),
            atom_line(1, "CA", 5.0, 0.0, 0.0, "C"),
            "ENDMDL".to_string(),
        ]
        .join("\n");
        let p = parse(&text).unwrap();
        assert_eq!(p.atoms.len(), 1);
        assert!(p.warnings[0].contains("models after the first"));
    }

    fn value_at(grid: &DensityGrid, p: Point) -> f32 {
        let idx = [0, 1, 2].map(|i| ((p[i] - grid.origin()[i]) / grid.spacing_nm()).round() as usize);
        grid.value(idx[0], idx[1], idx[2])
    }

    #[test]
    fn single_atom_field_values() {
        // voxel divides the offsets exactly so nodes land on the probe points
        let params = DensityParams {
            probe_nm: 0.14,
            voxel_nm: 0.01,
            padding_nm: 1.2,
            ..Default::default()
        };
        let g = atoms_to_density(&single(0.17), &params).unwrap();
        let centre = value_at(&g, Point::origin());
        assert!((centre as f64 + 0.31).abs() < 1e-6, "{centre}");
        let outside = value_at(&g, Point::new(1.31, 0.0, 0.0));
        assert!((outside as f64 - 1.0).abs() < 1e-5, "{outside}");
    }

    #[test]
    fn field_is_exact_everywhere() {
        let atoms = AtomList::new(
            vec![Point::new(0.0, 0.0, 0.0), Point::new(0.4, 0.1, 0.0), Point::new(2.0, -0.3, 0.5)],
            vec!["C".into(), "O".into(), "S".into()],
            vec![0.17, 0.152, 0.18],
        )
        .unwrap();
        let params = DensityParams {
            voxel_nm: 0.07,
            padding_nm: 1.0,
            ..Default::default()
        };
        let g = atoms_to_density(&atoms, &params).unwrap();
        let [nx, ny, nz] = g.dims();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = g.node_position(x, y, z);
                    let exact = atoms
                        .positions
                        .iter()
                        .zip(&atoms.vdw_radius_nm)
                        .map(|(c, r)| (p - c).norm() - r - params.probe_nm)
                        .fold(f64::INFINITY, f64::min);
                    assert!((g.value(x, y, z) as f64 - exact).abs() < 1e-5, "{p:?}");
                }
            }
        }
    }

    #[test]
    fn midpoint_of_twin_atoms_matches_single_term() {
        let atoms = AtomList::new(
            vec![Point::new(-0.5, 0.0, 0.0), Point::new(0.5, 0.0, 0.0)],
            vec!["C".into(), "C".into()],
            vec![0.17, 0.17],
        )
        .unwrap();
        let params = DensityParams {
            voxel_nm: 0.01,
            padding_nm: 0.0,
            ..Default::default()
        };
        let g = atoms_to_density(&atoms, &params).unwrap();
        let mid = value_at(&g, Point::origin()) as f64;
        assert!((mid - (0.5 - 0.31)).abs() < 1e-6, "{mid}");
    }

    #[test]
    fn voxel_budget_is_enforced() {
        let params = DensityParams {
            voxel_nm: 0.001,
            voxel_budget: 1000,
            ..Default::default()
        };
        assert!(matches!(
            atoms_to_density(&single(0.17), &params),
            Err(Error::VoxelBudget { .. })
        ));
        let bad = DensityParams {
            voxel_nm: 0.0,
            ..Default::default()
        };
        assert!(atoms_to_density(&single(0.17), &bad).is_err());
    }

    #[test]
    fn single_atom_mesh_is_a_sphere() {
        let params = DensityParams {
            probe_nm: 0.14,
            voxel_nm: 0.02,
            padding_nm: 0.04,
            ..Default::default()
        };
        let m = atoms_to_mesh(&single(0.17), &params, "one").unwrap();
        for v in m.vertices() {
            assert!(((v - Point::origin()).norm() - 0.31).abs() < 0.02);
        }
        let e = aabb(&m).unwrap().extent();
        assert!((e.x - 0.62).abs() < 0.02);
    }

    #[test]
    fn pdb_file_to_mesh() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.pdb");
        fs::write(&path, atom_line(1, "CA", 10.0, 0.0, 0.0, "C") + "\nEND\n").unwrap();
        let m = pdb_to_mesh(&path, 0.14, 0.03).unwrap();
        assert_eq!(m.source_id(), "one");
        assert_eq!(m.scale_nm_per_unit(), 1.0);
        let c = aabb(&m).unwrap().center();
        assert!((c - Point::new(1.0, 0.0, 0.0)).norm() < 0.03);
    }
}
