//! Manifest-driven, resumable generation of multi-view virtual AFM datasets.
//!
//! Layout under `output_root`:
//!
//! ```text
//! <source_id>/view_<k>.hgt   f32 little-endian heights (nm)
//! <source_id>/view_<k>.json  sidecar metadata
//! <source_id>/view_<k>.png   16-bit preview
//! <source_id>/DONE           completion marker
//! summary.json               run summary
//! progress.jsonl             one event per processed entry
//! ```

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::afm::{export_heightmap, render_views, KernelShape, PoseSampling, RenderParams};
use crate::error::{Error, Result};
use crate::mesh::{load_obj, DegenerateFaces, TriangleMesh};
use crate::par;
use crate::pdb::{pdb_to_mesh, DEFAULT_PROBE_NM, DEFAULT_VOXEL_NM};
use crate::raster::{DEFAULT_FRAME_HALF_EXTENT, DEFAULT_RESOLUTION_CAP};

pub const MARKER_NAME: &str = "DONE";
pub const SUMMARY_NAME: &str = "summary.json";
pub const PROGRESS_NAME: &str = "progress.jsonl";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdb_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_plddt: Option<f64>,
    /// nm per OBJ unit; defaults to 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_nm_per_unit: Option<f64>,
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        let id = &self.source_id;
        if id.is_empty() || id == "." || id == ".." || id.starts_with('.') || id.contains(['/', '\\', '\0']) {
            return Err(Error::invalid(format!("source_id {id:?} is not usable as a directory name")));
        }
        if self.mesh_path.is_some() == self.pdb_path.is_some() {
            return Err(Error::invalid(format!("{id}: exactly one of mesh_path and pdb_path must be set")));
        }
        if let Some(p) = self.avg_plddt {
            if !(0.0..=100.0).contains(&p) {
                return Err(Error::invalid(format!("{id}: avg_plddt {p} outside [0, 100]")));
            }
        }
        if let Some(s) = self.scale_nm_per_unit {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{id}: scale_nm_per_unit must be positive")));
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines records; blank lines and `#` lines are skipped and
/// relative paths resolve against `base_dir`.
pub fn parse_manifest(text: &str, base_dir: &Path, origin: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        entry.validate().map_err(|e| Error::parse(origin, n + 1, e.to_string()))?;
        if !seen.insert(entry.source_id.clone()) {
            return Err(Error::parse(origin, n + 1, format!("duplicate source_id {:?}", entry.source_id)));
        }
        for p in [&mut entry.mesh_path, &mut entry.pdb_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")), path)
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).expect("entry serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub kept: Vec<ManifestEntry>,
    pub dropped: usize,
}

impl Filtered {
    pub fn retention(&self) -> f64 {
        let total = self.kept.len() + self.dropped;
        if total == 0 {
            0.0
        } else {
            self.kept.len() as f64 / total as f64
        }
    }
}

/// Keeps entries with `avg_plddt ≥ min_plddt`. Entries without a score
/// survive only when `min_plddt` is 0.
pub fn filter_manifest(entries: &[ManifestEntry], min_plddt: f64) -> Filtered {
    let (kept, dropped): (Vec<_>, Vec<_>) = entries.iter().cloned().partition(|e| match e.avg_plddt {
        Some(p) => p >= min_plddt,
        None => min_plddt == 0.0,
    });
    Filtered {
        kept,
        dropped: dropped.len(),
    }
}

/// Seed for one entry, from the run seed and the entry's id only.
pub fn entry_seed(seed: u64, source_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(source_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_views: usize,
    pub step_nm: f64,
    pub tip_radius_nm: f64,
    pub kernel: KernelShape,
    pub pose_sampling: PoseSampling,
    pub min_plddt: f64,
    pub seed: u64,
    pub output_root: PathBuf,
    pub workers: usize,
    pub probe_nm: f64,
    pub voxel_nm: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_views: 6,
            step_nm: 1.5625,
            tip_radius_nm: 1.5,
            kernel: KernelShape::Spherical,
            pose_sampling: PoseSampling::PerAngle,
            min_plddt: 80.0,
            seed: 0,
            output_root: PathBuf::from("dataset"),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            probe_nm: DEFAULT_PROBE_NM,
            voxel_nm: DEFAULT_VOXEL_NM,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::invalid("n_views must be at least 1"));
        }
        if !(self.step_nm > 0.0) {
            return Err(Error::invalid("step_nm must be positive"));
        }
        if !(self.tip_radius_nm >= 0.0) || !(self.min_plddt >= 0.0) {
            return Err(Error::invalid("tip radius and pLDDT threshold must be ≥ 0"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    fn render_params(&self, seed: u64) -> RenderParams {
        RenderParams {
            n_views: self.n_views,
            step_nm: self.step_nm,
            tip_radius_nm: self.tip_radius_nm,
            kernel: self.kernel,
            seed,
            pose_sampling: self.pose_sampling,
            frame_half_extent: DEFAULT_FRAME_HALF_EXTENT,
            resolution_cap: DEFAULT_RESOLUTION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryFailure {
    pub source_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub manifest_entries: usize,
    pub kept: usize,
    pub dropped_plddt: usize,
    pub retention: f64,
    pub succeeded: usize,
    pub skipped: usize,
    pub failed: Vec<EntryFailure>,
    pub wall_time_s: f64,
    pub config: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq)]
enum Outcome {
    Done,
    Skipped,
    Failed(String),
}

#[derive(Serialize)]
struct ProgressEvent<'a> {
    source_id: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    elapsed_ms: u128,
}

/// Where an entry's views and marker live.
pub fn entry_dir(output_root: &Path, source_id: &str) -> PathBuf {
    output_root.join(source_id)
}

fn load_entry_mesh(entry: &ManifestEntry, config: &DatasetConfig) -> Result<TriangleMesh> {
    let mesh = match (&entry.mesh_path, &entry.pdb_path) {
        (Some(obj), _) => {
            let loaded = load_obj(obj, DegenerateFaces::Drop)?;
            for w in &loaded.warnings {
                log::warn!("{}: {w}", entry.source_id);
            }
            loaded.mesh.with_scale(entry.scale_nm_per_unit.unwrap_or(1.0))?
        }
        (None, Some(pdb)) => pdb_to_mesh(pdb, config.probe_nm, config.voxel_nm)?,
        (None, None) => return Err(Error::invalid("entry has no input path")),
    };
    Ok(mesh.with_source_id(entry.source_id.clone()))
}

/// Renders into a scratch directory, then marks and renames it into place so
/// a directory with a marker is always complete.
fn process_entry(entry: &ManifestEntry, config: &DatasetConfig) -> Result<Outcome> {
    let root = &config.output_root;
    let final_dir = entry_dir(root, &entry.source_id);
    if final_dir.join(MARKER_NAME).is_file() {
        return Ok(Outcome::Skipped);
    }
    let scratch = root.join(format!(".{}.partial", entry.source_id));
    for stale in [&scratch, &final_dir] {
        if stale.exists() {
            fs::remove_dir_all(stale).map_err(|e| Error::io(stale, e))?;
        }
    }
    fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;

    let result = (|| {
        let mesh = load_entry_mesh(entry, config)?;
        let seed = entry_seed(config.seed, &entry.source_id);
        let views = render_views(&mesh, &config.render_params(seed))?;
        for (k, view) in views.iter().enumerate() {
            export_heightmap(view, scratch.join(format!("view_{k}")))?;
        }
        let marker = serde_json::json!({
            "source_id": entry.source_id,
            "views": views.len(),
            "entry_seed": seed,
        });
        let path = scratch.join(MARKER_NAME);
        fs::write(&path, format!("{marker}\n")).map_err(|e| Error::io(&path, e))?;
        fs::rename(&scratch, &final_dir).map_err(|e| Error::io(&final_dir, e))
    })();
    match result {
        Ok(()) => Ok(Outcome::Done),
        Err(e) => {
            let _ = fs::remove_dir_all(&scratch);
            Ok(Outcome::Failed(e.to_string()))
        }
    }
}

/// Filters the manifest, renders every kept entry not already marked done,
/// and writes `summary.json`. Per-entry failures are recorded, not fatal.
pub fn generate(config: &DatasetConfig, manifest: &[ManifestEntry]) -> Result<DatasetSummary> {
    config.validate()?;
    for e in manifest {
        e.validate()?;
    }
    let started = Instant::now();
    let root = &config.output_root;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let filtered = filter_manifest(manifest, config.min_plddt);
    log::info!(
        "{} of {} entries pass pLDDT ≥ {} ({:.1}%)",
        filtered.kept.len(),
        manifest.len(),
        config.min_plddt,
        100.0 * filtered.retention()
    );

    let log_path = root.join(PROGRESS_NAME);
    let log_file = File::options()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let (tx, rx) = mpsc::channel::<String>();
    let writer = std::thread::spawn(move || -> std::io::Result<()> {
        let mut out = BufWriter::new(log_file);
        for line in rx {
            writeln!(out, "{line}")?;
        }
        out.flush()
    });

    let outcomes: Vec<Outcome> = par::with_threads(config.workers, || {
        par::map_slice(&filtered.kept, |entry| {
            let outcome = process_entry(entry, config).unwrap_or_else(|e| Outcome::Failed(e.to_string()));
            let (status, reason) = match &outcome {
                Outcome::Done => ("done", None),
                Outcome::Skipped => ("skipped", None),
                Outcome::Failed(r) => ("failed", Some(r.as_str())),
            };
            if let Some(r) = reason {
                log::error!("{}: {r}", entry.source_id);
            }
            let event = ProgressEvent {
                source_id: &entry.source_id,
                status,
                reason,
                elapsed_ms: started.elapsed().as_millis(),
            };
            let line = serde_json::to_string(&event).expect("event serializes");
            let _ = tx.send(line);
            outcome
        })
    });
    drop(tx);
    writer
        .join()
        .map_err(|_| Error::invalid("progress log writer panicked"))?
        .map_err(|e| Error::io(&log_path, e))?;

    let mut summary = DatasetSummary {
        manifest_entries: manifest.len(),
        kept: filtered.kept.len(),
        dropped_plddt: filtered.dropped,
        retention: filtered.retention(),
        succeeded: 0,
        skipped: 0,
        failed: Vec::new(),
        wall_time_s: 0.0,
        config: config.clone(),
    };
    for (entry, outcome) in filtered.kept.iter().zip(outcomes) {
        match outcome {
            Outcome::Done => summary.succeeded += 1,
            Outcome::Skipped => summary.skipped += 1,
            Outcome::Failed(reason) => summary.failed.push(EntryFailure {
                source_id: entry.source_id.clone(),
                reason,
            }),
        }
    }
    summary.wall_time_s = started.elapsed().as_secs_f64();
    let path = root.join(SUMMARY_NAME);
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{obj_string, uv_sphere, Point};

    fn entry(id: &str, plddt: Option<f64>) -> ManifestEntry {
        ManifestEntry {
            source_id: id.into(),
            mesh_path: Some(PathBuf::from("m.obj")),
            pdb_path: None,
            avg_plddt: plddt,
            scale_nm_per_unit: None,
        }
    }

    #[test]
    fn plddt_boundary() {
        let entries = vec![entry("a", Some(80.0)), entry("b", Some(79.9)), entry("c", None), entry("d", Some(95.0))];
        let f = filter_manifest(&entries, 80.0);
        let ids: Vec<&str> = f.kept.iter().map(|e| e.source_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "d"]);
        assert_eq!(f.dropped, 2);
        assert_eq!(f.retention(), 0.5);
        assert_eq!(filter_manifest(&entries, 0.0).kept.len(), 4);
    }

    #[test]
    fn manifest_parsing() {
        let text = r#"
# comment
{"source_id": "p1", "mesh_path": "meshes/p1.obj", "avg_plddt": 91.5}
{"source_id": "p2", "pdb_path": "/abs/p2.pdb"}
"#;
        let m = parse_manifest(text, Path::new("/data"), Path::new("m.jsonl")).unwrap();
        assert_eq!(m[0].mesh_path.as_deref(), Some(Path::new("/data/meshes/p1.obj")));
        assert_eq!(m[1].pdb_path.as_deref(), Some(Path::new("/abs/p2.pdb")));

        let both = r#"{"source_id": "x", "mesh_path": "a", "pdb_path": "b"}"#;
        let err = parse_manifest(both, Path::new("."), Path::new("m")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let dup = "{\"source_id\": \"x\", \"mesh_path\": \"a\"}\n{\"source_id\": \"x\", \"mesh_path\": \"b\"}";
        assert!(matches!(parse_manifest(dup, Path::new("."), Path::new("m")), Err(Error::Parse { line: 2, .. })));
        let bad = r#"{"source_id": "../x", "mesh_path": "a"}"#;
        assert!(parse_manifest(bad, Path::new("."), Path::new("m")).is_err());
    }

    #[test]
    fn entry_seed_depends_on_id_and_seed() {
        assert_eq!(entry_seed(1, "a"), entry_seed(1, "a"));
        assert_ne!(entry_seed(1, "a"), entry_seed(1, "b"));
        assert_ne!(entry_seed(1, "a"), entry_seed(2, "a"));
    }

    #[test]
    fn file_count_contract_and_failure_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let sphere = uv_sphere(Point::origin(), 1.0, 8, 16, 1.0, "s").unwrap();
        fs::write(dir.path().join("s.obj"), obj_string(&sphere)).unwrap();
        fs::write(dir.path().join("broken.obj"), "v 0 0 0\nf 1 2 3\n").unwrap();
        let mut entries: Vec<ManifestEntry> = ["a", "b", "c"]
            .iter()
            .map(|id| ManifestEntry {
                mesh_path: Some(dir.path().join("s.obj")),
                scale_nm_per_unit: Some(5.0),
                ..entry(id, Some(90.0))
            })
            .collect();
        entries.push(ManifestEntry {
            mesh_path: Some(dir.path().join("broken.obj")),
            ..entry("bad", Some(90.0))
        });
        let config = DatasetConfig {
            step_nm: 0.5,
            seed: 3,
            workers: 2,
            output_root: dir.path().join("out"),
            ..Default::default()
        };
        let summary = generate(&config, &entries).unwrap();
        assert_eq!(summary.succeeded, 3);
        assert_eq!(summary.failed.len(), 1);
        assert_eq!(summary.failed[0].source_id, "bad");
        for id in ["a", "b", "c"] {
            let files: Vec<_> = fs::read_dir(config.output_root.join(id)).unwrap().collect();
            assert_eq!(files.len(), 19);
        }
        assert!(!config.output_root.join("bad").exists());

        let again = generate(&config, &entries).unwrap();
        assert_eq!((again.succeeded, again.skipped, again.failed.len()), (0, 3, 1));
        let log = fs::read_to_string(config.output_root.join(PROGRESS_NAME)).unwrap();
        assert_eq!(log.lines().count(), 8);
    }
}
