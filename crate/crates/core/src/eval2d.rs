//! Image metrics (MSE, PSNR, SSIM), an external perceptual-score hook, and
//! height/roughness statistics with Welch's t-test.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::DynamicImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::afm::{load_heightmap, HeightMap};
use crate::error::{Error, Result};
use crate::par;

/// Grayscale image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub source_id: String,
}

impl GrayImage {
    /// Values are clamped into `[0, 1]`.
    pub fn new(width: usize, height: usize, values: Vec<f64>, source_id: impl Into<String>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}×{height} image needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self {
            width,
            height,
            values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            source_id: source_id.into(),
        })
    }

    /// Height map scaled by its own maximum.
    pub fn from_heightmap(h: &HeightMap) -> Self {
        let max = f64::from(h.max_nm());
        let values = h
            .values_nm
            .iter()
            .map(|&v| if max > 0.0 { (f64::from(v) / max).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            width: h.width,
            height: h.height,
            values,
            source_id: h.source_id.clone(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Loads an 8/16-bit grayscale PNG (scaled by 255 or 65535) or a `.hgt`
/// height map (scaled by its recorded maximum).
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("hgt")) {
        let mut img = GrayImage::from_heightmap(&load_heightmap(path)?);
        img.source_id = id;
        return Ok(img);
    }
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let values: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(img) => img.into_raw().into_iter().map(|v| f64::from(v) / 65535.0).collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: grayscale required, found {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    GrayImage::new(w, h, values, id)
}

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::DimensionMismatch(format!(
            "{} is {}×{} but {} is {}×{}",
            a.source_id, a.width, a.height, b.source_id, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.values.len() as f64)
}

/// `10·log10(1 / mse)`; `+∞` for identical images.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" correlation: output is `(w−k+1)×(h−k+1)`.
fn filter_valid(values: &[f64], width: usize, height: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (width + 1 - k, height + 1 - k);
    let mut rows = vec![0.0; ow * height];
    par::for_each_row_mut(&mut rows, ow, |y, out| {
        let src = &values[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            *o = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    });
    let mut out = vec![0.0; ow * oh];
    par::for_each_row_mut(&mut out, ow, |y, o| {
        for (x, v) in o.iter_mut().enumerate() {
            *v = taps.iter().enumerate().map(|(j, t)| t * rows[(y + j) * ow + x]).sum();
        }
    });
    out
}

/// Per-window SSIM from local moments.
pub fn ssim_from_moments(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows (σ = 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {}×{}",
            a.width, a.height
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (w, h) = (a.width, a.height);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.values.iter().zip(&b.values).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(&a.values, w, h, &taps);
    let mu_b = filter_valid(&b.values, w, h, &taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            ssim_from_moments(ma, mb, aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb)
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Outcome of an external perceptual scorer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalScore {
    pub score: Option<f64>,
    pub diagnostic: Option<String>,
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

/// Runs `template` through `sh -c` with `{a}` and `{b}` replaced by the
/// quoted image paths and parses the last non-empty stdout line as a real.
pub fn external_perceptual(a: &Path, b: &Path, template: Option<&str>) -> ExternalScore {
    let Some(template) = template else {
        return ExternalScore::default();
    };
    let command = template.replace("{a}", &shell_quote(a)).replace("{b}", &shell_quote(b));
    let missing = |msg: String| {
        log::warn!("{msg}");
        ExternalScore {
            score: None,
            diagnostic: Some(msg),
        }
    };
    let output = match Command::new("sh").arg("-c").arg(&command).output() {
        Ok(o) => o,
        Err(e) => return missing(format!("could not run perceptual scorer: {e}")),
    };
    if !output.status.success() {
        return missing(format!(
            "perceptual scorer exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        ));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let last = stdout.lines().map(str::trim).rfind(|l| !l.is_empty()).unwrap_or("");
    match last.parse::<f64>() {
        Ok(v) if v.is_finite() => ExternalScore {
            score: Some(v),
            diagnostic: None,
        },
        _ => missing(format!("perceptual scorer printed {last:?}, expected a number")),
    }
}

fn ser_db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_db<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Db {
        Num(f64),
        Text(String),
    }
    match Db::deserialize(d)? {
        Db::Num(v) => Ok(v),
        Db::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Db::Text(t) => Err(serde::de::Error::custom(format!("bad dB value {t:?}"))),
    }
}

/// One image pair's scores. `psnr_db` is written as `"inf"` for identical images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eval2dReport {
    pub pair_id: String,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips_diagnostic: Option<String>,
    pub normalization: String,
}

pub const NORMALIZATION: &str = "png: value / (2^bits - 1); hgt: value / map max";

pub fn compare(a: &GrayImage, b: &GrayImage, pair_id: impl Into<String>) -> Result<Eval2dReport> {
    let m = mse(a, b)?;
    Ok(Eval2dReport {
        pair_id: pair_id.into(),
        psnr_db: psnr_from_mse(m),
        ssim: ssim(a, b)?,
        mse: m,
        lpips: None,
        lpips_diagnostic: None,
        normalization: NORMALIZATION.into(),
    })
}

/// One entry of a pairs file.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub a: PathBuf,
    pub b: PathBuf,
    pub pair_id: String,
}

/// Parses `a b [pair_id]` lines; `#` starts a comment. Relative paths are
/// resolved against `base_dir`.
pub fn parse_pairs(text: &str, base_dir: &Path, origin: &Path) -> Result<Vec<ImagePair>> {
    let mut pairs = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::parse(origin, n + 1, "expected `<image_a> <image_b> [pair_id]`"));
        }
        let pair_id = fields.get(2).map_or_else(|| format!("pair_{}", pairs.len()), |s| s.to_string());
        pairs.push(ImagePair {
            a: base_dir.join(fields[0]),
            b: base_dir.join(fields[1]),
            pair_id,
        });
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<ImagePair>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pairs(&text, path.parent().unwrap_or(Path::new(".")), path)
}

/// Scores every pair, in input order.
pub fn evaluate_pairs(pairs: &[ImagePair], perceptual: Option<&str>) -> Vec<Result<Eval2dReport>> {
    par::map_slice(pairs, |p| {
        let a = load_image(&p.a)?;
        let b = load_image(&p.b)?;
        let mut report = compare(&a, &b, p.pair_id.clone())?;
        let ext = external_perceptual(&p.a, &p.b, perceptual);
        report.lpips = ext.score;
        report.lpips_diagnostic = ext.diagnostic;
        Ok(report)
    })
}

pub const DEFAULT_FOREGROUND_THRESHOLD_NM: f64 = 0.3;

/// Height statistics of one map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightStats {
    pub source_id: String,
    pub max_nm: f64,
    pub mean_foreground_nm: Option<f64>,
    pub rq_nm: Option<f64>,
    pub foreground_pixels: usize,
    pub threshold_nm: f64,
}

/// Max over all pixels; mean and RMS roughness over pixels above `threshold_nm`.
pub fn height_stats(h: &HeightMap, threshold_nm: f64) -> HeightStats {
    let fg: Vec<f64> = h.values_nm.iter().map(|&v| f64::from(v)).filter(|&v| v > threshold_nm).collect();
    let (mean, rq) = if fg.is_empty() {
        log::warn!("{}: no pixels above {threshold_nm} nm", h.source_id);
        (None, None)
    } else {
        let mean = fg.iter().sum::<f64>() / fg.len() as f64;
        let ms = fg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / fg.len() as f64;
        (Some(mean), Some(ms.sqrt()))
    };
    HeightStats {
        source_id: h.source_id.clone(),
        max_nm: f64::from(h.max_nm()),
        mean_foreground_nm: mean,
        rq_nm: rq,
        foreground_pixels: fg.len(),
        threshold_nm,
    }
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<TTest> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::invalid("each sample needs at least two values"));
    }
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::DegenerateVariance(format!(
            "sample variances are {vx} and {vy}; both must be non-zero"
        )));
    }
    let (sx, sy) = (vx / x.len() as f64, vy / y.len() as f64);
    let t = (mx - my) / (sx + sy).sqrt();
    let dof = (sx + sy).powi(2) / (sx * sx / (x.len() as f64 - 1.0) + sy * sy / (y.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, dof, p })
}
