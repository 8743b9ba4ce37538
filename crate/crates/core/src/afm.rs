//! Virtual AFM image synthesis: random scan poses, depth → height inversion,
//! tip-convolution dilation and the `.hgt`/`.json`/`.png` view record.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{normalize_to_unit_cube, TriangleMesh};
use crate::par;
use crate::raster::{
    rasterize_depth, resolution_from_step, CameraPose, DepthMap, DEFAULT_CAMERA_DISTANCE,
    DEFAULT_FRAME_HALF_EXTENT, DEFAULT_RESOLUTION_CAP,
};

/// Surface heights above the substrate, in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    pub width: usize,
    pub height: usize,
    /// Row-major heights; background (substrate) pixels are 0.
    pub values_nm: Vec<f32>,
    pub step_nm: f64,
    pub pose: CameraPose,
    pub source_id: String,
    pub tip_radius_nm: f64,
    pub kernel: KernelShape,
}

impl HeightMap {
    pub fn max_nm(&self) -> f32 {
        self.values_nm.iter().cloned().fold(0.0, f32::max)
    }

    pub fn min_nm(&self) -> f32 {
        self.values_nm.iter().cloned().fold(f32::INFINITY, f32::min).min(self.max_nm())
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values_nm[j * self.width + i]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values_nm.len() != self.width * self.height {
            return Err(Error::DimensionMismatch(format!(
                "height map {}×{} holds {} values",
                self.width,
                self.height,
                self.values_nm.len()
            )));
        }
        if self.values_nm.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("height values must be finite and ≥ 0"));
        }
        if !(self.step_nm > 0.0 && self.step_nm.is_finite()) {
            return Err(Error::invalid(format!("step_nm must be positive, got {}", self.step_nm)));
        }
        Ok(())
    }
}

/// How scan orientations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoseSampling {
    /// Each angle uniform over its range, independently.
    #[default]
    PerAngle,
    /// View directions uniform over the sphere (elevation = asin(u)).
    AreaUniform,
}

/// Draws one scan pose and advances `rng`.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, mode: PoseSampling) -> CameraPose {
    let elevation_deg = match mode {
        PoseSampling::PerAngle => rng.random_range(-90.0..=90.0),
        PoseSampling::AreaUniform => rng.random_range(-1.0f64..=1.0).asin().to_degrees(),
    };
    CameraPose {
        elevation_deg,
        azimuth_deg: rng.random_range(0.0..360.0),
        roll_deg: rng.random_range(0.0..360.0),
        distance: DEFAULT_CAMERA_DISTANCE,
    }
}

/// Generator for view `view` of a render seeded with `seed`.
pub fn view_rng(seed: u64, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view as u64);
    rng
}

/// Inverts a depth map into heights in nm.
///
/// The zero level is the depth map's substrate plane when it has one (the
/// far support plane of the rendered mesh), otherwise the deepest visible
/// pixel. Background stays at 0.
pub fn depth_to_height(d: &DepthMap, scale_nm_per_unit: f64, pose: CameraPose, step_nm: f64) -> Result<HeightMap> {
    if d.values.len() != d.width * d.height || d.background.len() != d.values.len() {
        return Err(Error::DimensionMismatch("depth map buffers disagree with its size".into()));
    }
    if !(scale_nm_per_unit > 0.0) {
        return Err(Error::invalid("scale_nm_per_unit must be positive"));
    }
    let deepest_visible = d
        .values
        .iter()
        .zip(&d.background)
        .filter(|(_, bg)| !**bg)
        .map(|(v, _)| *v)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))));
    let values_nm = match deepest_visible {
        None => {
            log::warn!("depth map has no foreground pixels; height map is all zero");
            vec![0.0; d.values.len()]
        }
        Some(deepest) => {
            let zero = d.substrate_depth.map_or(deepest, |s| s.max(deepest));
            d.values
                .iter()
                .zip(&d.background)
                .map(|(&v, &bg)| if bg { 0.0 } else { (((zero - v) * scale_nm_per_unit).max(0.0)) as f32 })
                .collect()
        }
    };
    Ok(HeightMap {
        width: d.width,
        height: d.height,
        values_nm,
        step_nm,
        pose,
        source_id: String::new(),
        tip_radius_nm: 0.0,
        kernel: KernelShape::default(),
    })
}

/// Tip profile used as the structuring function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    FlatDisk,
    #[default]
    Spherical,
}

impl std::str::FromStr for KernelShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" | "flat-disk" | "flat" => Ok(Self::FlatDisk),
            "spherical" | "sphere" => Ok(Self::Spherical),
            other => Err(Error::invalid(format!("unknown kernel shape {other:?}"))),
        }
    }
}

/// One support pixel of a tip kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTap {
    pub du: i32,
    pub dv: i32,
    /// Structuring value in nm, ≤ 0.
    pub offset_nm: f32,
}

/// Disk-supported structuring function for tip dilation.
#[derive(Debug, Clone, PartialEq)]
pub struct TipKernel {
    pub radius_px: usize,
    pub shape: KernelShape,
    pub taps: Vec<KernelTap>,
}

impl TipKernel {
    /// Kernel with an explicit tap list (any flat or non-flat support).
    pub fn from_taps(shape: KernelShape, taps: Vec<KernelTap>) -> Self {
        let radius_px = taps
            .iter()
            .map(|t| t.du.unsigned_abs().max(t.dv.unsigned_abs()) as usize)
            .max()
            .unwrap_or(0);
        Self { radius_px, shape, taps }
    }

    fn is_flat_disk(&self) -> bool {
        let r = self.radius_px as i64;
        self.shape == KernelShape::FlatDisk
            && self.taps.len() == disk_support(self.radius_px).count()
            && self
                .taps
                .iter()
                .all(|t| t.offset_nm == 0.0 && (t.du as i64).pow(2) + (t.dv as i64).pow(2) <= r * r)
    }
}

fn disk_support(radius_px: usize) -> impl Iterator<Item = (i32, i32)> {
    let r = radius_px as i32;
    (-r..=r).flat_map(move |dv| (-r..=r).map(move |du| (du, dv))).filter(move |(du, dv)| du * du + dv * dv <= r * r)
}

/// Kernel of radius `round(tip / step)` pixels.
///
/// Spherical taps drop by `√(r² − ρ²) − r` nm at lateral distance ρ, bottoming
/// out at `−r` for support pixels beyond the sphere's footprint.
pub fn make_tip_kernel(tip_radius_nm: f64, step_nm: f64, shape: KernelShape) -> Result<TipKernel> {
    if !(tip_radius_nm >= 0.0 && tip_radius_nm.is_finite()) {
        return Err(Error::invalid(format!("tip radius must be ≥ 0, got {tip_radius_nm}")));
    }
    if !(step_nm > 0.0 && step_nm.is_finite()) {
        return Err(Error::invalid(format!("step must be > 0, got {step_nm}")));
    }
    let radius_px = (tip_radius_nm / step_nm).round() as usize;
    let taps = disk_support(radius_px)
        .map(|(du, dv)| {
            let offset_nm = match shape {
                KernelShape::FlatDisk => 0.0,
                KernelShape::Spherical => {
                    let rho2 = f64::from(du * du + dv * dv) * step_nm * step_nm;
                    ((tip_radius_nm * tip_radius_nm - rho2).max(0.0).sqrt() - tip_radius_nm) as f32
                }
            };
            KernelTap { du, dv, offset_nm }
        })
        .collect();
    Ok(TipKernel {
        radius_px,
        shape,
        taps,
    })
}

/// Grayscale dilation `out(x) = max_k [h(x + k) + offset(k)]`, clamped at 0,
/// with pixels outside the map read as substrate (0).
pub fn dilate(h: &HeightMap, kernel: &TipKernel) -> HeightMap {
    let values_nm = if kernel.taps.is_empty() || (kernel.radius_px == 0 && kernel.taps.len() == 1) {
        h.values_nm.iter().map(|&v| (v + kernel.taps.first().map_or(0.0, |t| t.offset_nm)).max(0.0)).collect()
    } else if kernel.is_flat_disk() {
        dilate_flat_disk(&h.values_nm, h.width, h.height, kernel.radius_px)
    } else {
        dilate_taps(&h.values_nm, h.width, h.height, kernel)
    };
    HeightMap {
        values_nm,
        ..h.clone()
    }
}

/// Shift-and-max over a zero-padded copy, one output row per task.
fn dilate_taps(values: &[f32], width: usize, height: usize, kernel: &TipKernel) -> Vec<f32> {
    let r = kernel.radius_px;
    let pw = width + 2 * r;
    let mut padded = vec![0f32; pw * (height + 2 * r)];
    for y in 0..height {
        padded[(y + r) * pw + r..(y + r) * pw + r + width].copy_from_slice(&values[y * width..(y + 1) * width]);
    }
    let mut out = vec![0f32; width * height];
    par::for_each_row_mut(&mut out, width, |y, row| {
        for tap in &kernel.taps {
            let sy = (y as i64 + tap.dv as i64 + r as i64) as usize;
            let sx = (tap.du as i64 + r as i64) as usize;
            let src = &padded[sy * pw + sx..sy * pw + sx + width];
            for (o, &s) in row.iter_mut().zip(src) {
                let v = s + tap.offset_nm;
                if v > *o {
                    *o = v;
                }
            }
        }
    });
    out
}

/// Flat disk as a union of horizontal segments: 1-D running maxima per
/// half-width (van Herk / Gil–Werman), then a max across rows.
fn dilate_flat_disk(values: &[f32], width: usize, height: usize, radius_px: usize) -> Vec<f32> {
    let r = radius_px as i64;
    let half_widths: Vec<usize> = (-r..=r).map(|dv| ((r * r - dv * dv) as f64).sqrt().floor() as usize).collect();
    let mut distinct = half_widths.clone();
    distinct.sort_unstable();
    distinct.dedup();

    let filtered: Vec<Vec<f32>> = distinct
        .iter()
        .map(|&w| {
            let mut m = vec![0f32; width * height];
            par::for_each_row_mut(&mut m, width, |y, row| {
                running_max(&values[y * width..(y + 1) * width], w, row);
            });
            m
        })
        .collect();
    let lookup: Vec<&Vec<f32>> = half_widths
        .iter()
        .map(|w| &filtered[distinct.binary_search(w).expect("width present")])
        .collect();

    let mut out = vec![0f32; width * height];
    par::for_each_row_mut(&mut out, width, |y, row| {
        for (k, m) in lookup.iter().enumerate() {
            let sy = y as i64 + k as i64 - r;
            if sy < 0 || sy >= height as i64 {
                continue;
            }
            let src = &m[sy as usize * width..(sy as usize + 1) * width];
            for (o, &s) in row.iter_mut().zip(src) {
                if s > *o {
                    *o = s;
                }
            }
        }
    });
    out
}

/// `out[i] = max(row[i−w ..= i+w])` with zeros beyond the ends.
fn running_max(row: &[f32], w: usize, out: &mut [f32]) {
    let n = row.len();
    let k = 2 * w + 1;
    let len = n + 2 * w;
    let mut padded = vec![0f32; len];
    padded[w..w + n].copy_from_slice(row);
    let mut prefix = padded.clone();
    let mut suffix = padded.clone();
    for block in prefix.chunks_mut(k) {
        for i in 1..block.len() {
            block[i] = block[i].max(block[i - 1]);
        }
    }
    for block in suffix.chunks_mut(k) {
        for i in (0..block.len() - 1).rev() {
            block[i] = block[i].max(block[i + 1]);
        }
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = suffix[i].max(prefix[i + k - 1]);
    }
}

/// Parameters for [`render_views`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    pub n_views: usize,
    pub step_nm: f64,
    pub tip_radius_nm: f64,
    pub kernel: KernelShape,
    pub seed: u64,
    pub pose_sampling: PoseSampling,
    pub frame_half_extent: f64,
    pub resolution_cap: usize,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            n_views: 6,
            step_nm: 1.5625,
            tip_radius_nm: 1.5,
            kernel: KernelShape::Spherical,
            seed: 0,
            pose_sampling: PoseSampling::PerAngle,
            frame_half_extent: DEFAULT_FRAME_HALF_EXTENT,
            resolution_cap: DEFAULT_RESOLUTION_CAP,
        }
    }
}

/// Renders `n_views` virtual AFM height maps of `mesh`.
///
/// The mesh is normalized to the unit cube; the square frame spans
/// `2 · frame_half_extent` normalized units, which fixes the pixel count from
/// `step_nm`. Each view's pose comes from its own generator stream, so output
/// does not depend on how views are scheduled.
pub fn render_views(mesh: &TriangleMesh, params: &RenderParams) -> Result<Vec<HeightMap>> {
    if params.n_views == 0 {
        return Err(Error::invalid("n_views must be at least 1"));
    }
    if !(params.step_nm > 0.0) {
        return Err(Error::invalid(format!("step_nm must be positive, got {}", params.step_nm)));
    }
    let normalized = normalize_to_unit_cube(mesh)?.mesh;
    let scale = normalized.scale_nm_per_unit();
    let extent_nm = 2.0 * params.frame_half_extent * scale;
    let side = resolution_from_step(extent_nm, params.step_nm, params.resolution_cap)?;
    let step_nm = extent_nm / side as f64;
    let kernel = make_tip_kernel(params.tip_radius_nm, step_nm, params.kernel)?;

    par::map_range(params.n_views, |view| {
        let tag = |e: Error| Error::View {
            view,
            source: Box::new(e),
        };
        let pose = sample_pose(&mut view_rng(params.seed, view), params.pose_sampling);
        let depth = rasterize_depth(&normalized, &pose, side, side, params.frame_half_extent).map_err(tag)?;
        let mut heights = depth_to_height(&depth, scale, pose, step_nm).map_err(tag)?;
        heights = dilate(&heights, &kernel);
        heights.source_id = mesh.source_id().to_string();
        heights.tip_radius_nm = params.tip_radius_nm;
        heights.kernel = params.kernel;
        Ok(heights)
    })
    .into_iter()
    .collect()
}

/// Sidecar metadata written next to each `.hgt` payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightMapSidecar {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub step_nm: f64,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub roll_deg: f64,
    pub camera_distance: f64,
    pub tip_radius_nm: f64,
    pub kernel: KernelShape,
    pub source_id: String,
    pub value_min_nm: f32,
    pub value_max_nm: f32,
    /// Heights mapped linearly from `[png_min_nm, png_max_nm]` onto 0..=65535.
    pub png_min_nm: f32,
    pub png_max_nm: f32,
}

/// The three files of one view record.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewFiles {
    pub hgt: PathBuf,
    pub json: PathBuf,
    pub png: PathBuf,
}

impl ViewFiles {
    pub fn for_base(base: impl AsRef<Path>) -> Self {
        let base = base.as_ref();
        let with = |ext: &str| {
            let mut s = base.as_os_str().to_owned();
            s.push(".");
            s.push(ext);
            PathBuf::from(s)
        };
        Self {
            hgt: with("hgt"),
            json: with("json"),
            png: with("png"),
        }
    }
}

pub fn sidecar_for(h: &HeightMap) -> HeightMapSidecar {
    let max = h.max_nm();
    HeightMapSidecar {
        format: "f32le".into(),
        width: h.width,
        height: h.height,
        step_nm: h.step_nm,
        elevation_deg: h.pose.elevation_deg,
        azimuth_deg: h.pose.azimuth_deg,
        roll_deg: h.pose.roll_deg,
        camera_distance: h.pose.distance,
        tip_radius_nm: h.tip_radius_nm,
        kernel: h.kernel,
        source_id: h.source_id.clone(),
        value_min_nm: h.min_nm(),
        value_max_nm: max,
        png_min_nm: 0.0,
        png_max_nm: max,
    }
}

/// 16-bit grayscale PNG bytes, `[0, max]` → `[0, 65535]`.
pub fn png_bytes(h: &HeightMap) -> Result<Vec<u8>> {
    let max = h.max_nm();
    let pixels: Vec<u16> = h
        .values_nm
        .iter()
        .map(|&v| if max > 0.0 { ((v / max) * 65535.0).round().clamp(0.0, 65535.0) as u16 } else { 0 })
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(h.width as u32, h.height as u32, pixels)
        .ok_or_else(|| Error::DimensionMismatch("height map buffer".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

/// Writes `<base>.hgt`, `<base>.json` and `<base>.png`.
pub fn export_heightmap(h: &HeightMap, base: impl AsRef<Path>) -> Result<ViewFiles> {
    h.validate()?;
    let files = ViewFiles::for_base(base);
    let raw: Vec<u8> = h.values_nm.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&files.hgt, raw).map_err(|e| Error::io(&files.hgt, e))?;
    let text = serde_json::to_string_pretty(&sidecar_for(h)).expect("sidecar serializes") + "\n";
    fs::write(&files.json, text).map_err(|e| Error::io(&files.json, e))?;
    fs::write(&files.png, png_bytes(h)?).map_err(|e| Error::io(&files.png, e))?;
    Ok(files)
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<HeightMapSidecar> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

/// Reads a view record from its `.hgt` path (sidecar alongside).
pub fn load_heightmap(hgt_path: impl AsRef<Path>) -> Result<HeightMap> {
    let hgt = hgt_path.as_ref();
    let meta = read_sidecar(hgt.with_extension("json"))?;
    if meta.format != "f32le" {
        return Err(Error::Format(format!("height map format {:?}", meta.format)));
    }
    let bytes = fs::read(hgt).map_err(|e| Error::io(hgt, e))?;
    if bytes.len() != meta.width * meta.height * 4 {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} bytes for {}×{}",
            hgt.display(),
            bytes.len(),
            meta.width,
            meta.height
        )));
    }
    let h = HeightMap {
        width: meta.width,
        height: meta.height,
        values_nm: bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect(),
        step_nm: meta.step_nm,
        pose: CameraPose {
            elevation_deg: meta.elevation_deg,
            azimuth_deg: meta.azimuth_deg,
            roll_deg: meta.roll_deg,
            distance: meta.camera_distance,
        },
        source_id: meta.source_id,
        tip_radius_nm: meta.tip_radius_nm,
        kernel: meta.kernel,
    };
    h.validate()?;
    Ok(h)
}
