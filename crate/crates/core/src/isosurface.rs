//! Regular scalar grids, occupancy thresholding and marching cubes.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc_table::TRIANGLE_TABLE;
use crate::mesh::{Point, TriangleMesh, Vec3};
use crate::par;

/// Scalar field sampled on a regular grid; `x` varies fastest, `z` slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    dims: [usize; 3],
    origin: Point,
    spacing_nm: f64,
    values: Vec<f32>,
    occupancy_like: bool,
}

impl DensityGrid {
    pub fn new(dims: [usize; 3], origin: Point, spacing_nm: f64, values: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("grid dims must be ≥ 2 each, got {dims:?}")));
        }
        if !(spacing_nm > 0.0 && spacing_nm.is_finite()) {
            return Err(Error::invalid(format!("grid spacing must be positive, got {spacing_nm}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "grid {dims:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid contains non-finite values"));
        }
        Ok(Self {
            dims,
            origin,
            spacing_nm,
            values,
            occupancy_like: false,
        })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn<F>(dims: [usize; 3], origin: Point, spacing_nm: f64, f: F) -> Result<Self>
    where
        F: Fn(Point) -> f64 + Sync + Send,
    {
        let [nx, ny, _] = dims;
        let values = par::map_range(dims.iter().product(), |idx| {
            let (x, y, z) = (idx % nx, (idx / nx) % ny, idx / (nx * ny));
            f(origin + Vec3::new(x as f64, y as f64, z as f64) * spacing_nm) as f32
        });
        Self::new(dims, origin, spacing_nm, values)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing_nm(&self) -> f64 {
        self.spacing_nm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn occupancy_like(&self) -> bool {
        self.occupancy_like
    }

    pub fn with_occupancy_like(mut self, flag: bool) -> Self {
        self.occupancy_like = flag;
        self
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f32 {
        self.values[self.index(x, y, z)]
    }

    pub fn node_position(&self, x: usize, y: usize, z: usize) -> Point {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.spacing_nm
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Maps each value to 1 when it exceeds `tau`, else 0.
pub fn threshold_occupancy(grid: &DensityGrid, tau: f64) -> DensityGrid {
    DensityGrid {
        values: grid
            .values
            .iter()
            .map(|&v| if f64::from(v) > tau { 1.0 } else { 0.0 })
            .collect(),
        occupancy_like: true,
        ..grid.clone()
    }
}

const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Grid edge identified by its lower endpoint node and axis.
type EdgeKey = u64;

fn edge_key(grid: &DensityGrid, cell: [usize; 3], edge: usize) -> EdgeKey {
    let [a, b] = EDGES[edge];
    let (ca, cb) = (CORNERS[a], CORNERS[b]);
    let lo = [
        cell[0] + ca[0].min(cb[0]),
        cell[1] + ca[1].min(cb[1]),
        cell[2] + ca[2].min(cb[2]),
    ];
    let axis = (0..3).find(|&i| ca[i] != cb[i]).unwrap_or(0);
    grid.index(lo[0], lo[1], lo[2]) as u64 * 3 + axis as u64
}

fn edge_vertex(grid: &DensityGrid, key: EdgeKey, iso: f64) -> Point {
    let node = (key / 3) as usize;
    let axis = (key % 3) as usize;
    let [nx, ny, _] = grid.dims;
    let lo = [node % nx, (node / nx) % ny, node / (nx * ny)];
    let mut hi = lo;
    hi[axis] += 1;
    let a = f64::from(grid.value(lo[0], lo[1], lo[2]));
    let b = f64::from(grid.value(hi[0], hi[1], hi[2]));
    let t = ((iso - a) / (b - a)).clamp(0.0, 1.0);
    let pa = grid.node_position(lo[0], lo[1], lo[2]);
    let mut p = pa;
    p[axis] += t * grid.spacing_nm;
    p
}

/// Extracts the `iso` level set as a welded triangle mesh in nm.
///
/// Triangles face away from the higher-valued side. Returns an empty mesh
/// (no vertices or triangles) when the field never crosses `iso`.
pub fn marching_cubes(grid: &DensityGrid, iso: f64) -> TriangleMesh {
    let [nx, ny, nz] = grid.dims;

    let slabs: Vec<Vec<[EdgeKey; 3]>> = par::map_range(nz - 1, |z| {
        let mut tris = Vec::new();
        for y in 0..ny - 1 {
            for x in 0..nx - 1 {
                let mut case = 0usize;
                for (i, c) in CORNERS.iter().enumerate() {
                    if f64::from(grid.value(x + c[0], y + c[1], z + c[2])) < iso {
                        case |= 1 << i;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRIANGLE_TABLE[case];
                for tri in row.chunks_exact(3).take_while(|t| t[0] >= 0) {
                    let k = |e: i8| edge_key(grid, [x, y, z], e as usize);
                    tris.push([k(tri[0]), k(tri[1]), k(tri[2])]);
                }
            }
        }
        tris
    });

    let mut index_of: HashMap<EdgeKey, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut triangles = Vec::new();
    for tri in slabs.into_iter().flatten() {
        let ids = tri.map(|key| {
            *index_of.entry(key).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            })
        });
        triangles.push(ids);
    }
    let vertices = par::map_slice(&keys, |&key| edge_vertex(grid, key, iso));

    TriangleMesh::new(vertices, triangles, 1.0, "isosurface")
        .expect("marching cubes emits valid triangles")
}

/// Sidecar metadata stored next to a raw `.f32` grid payload.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSidecar {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing_nm: f64,
    #[serde(default)]
    pub occupancy_like: bool,
    #[serde(default = "default_grid_format")]
    pub format: String,
}

fn default_grid_format() -> String {
    "f32le".into()
}

/// `(payload, sidecar)` paths for a grid given either file or their shared stem.
pub fn grid_paths(path: impl AsRef<Path>) -> (PathBuf, PathBuf) {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => (path.with_extension("f32"), path.with_extension("json")),
        _ => {
            let mut raw = path.as_os_str().to_owned();
            raw.push(".f32");
            let mut meta = path.as_os_str().to_owned();
            meta.push(".json");
            (raw.into(), meta.into())
        }
    }
}

pub fn save_grid(grid: &DensityGrid, path: impl AsRef<Path>) -> Result<()> {
    let (raw, meta) = grid_paths(path);
    let bytes: Vec<u8> = grid.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
    let sidecar = GridSidecar {
        dims: grid.dims,
        origin: [grid.origin.x, grid.origin.y, grid.origin.z],
        spacing_nm: grid.spacing_nm,
        occupancy_like: grid.occupancy_like,
        format: default_grid_format(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&meta, text + "\n").map_err(|e| Error::io(&meta, e))
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<DensityGrid> {
    let (raw, meta) = grid_paths(path);
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let sidecar: GridSidecar =
        serde_json::from_str(&text).map_err(|e| Error::parse(&meta, e.line(), e.to_string()))?;
    if sidecar.format != "f32le" {
        return Err(Error::Format(format!("grid payload format {:?}", sidecar.format)));
    }
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let expected = sidecar.dims.iter().product::<usize>() * 4;
    if bytes.len() != expected {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} bytes for dims {:?}, expected {expected}",
            raw.display(),
            bytes.len(),
            sidecar.dims
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let [ox, oy, oz] = sidecar.origin;
    Ok(DensityGrid::new(sidecar.dims, Point::new(ox, oy, oz), sidecar.spacing_nm, values)?
        .with_occupancy_like(sidecar.occupancy_like))
}
