use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use afmkit::afm::{export_heightmap, load_heightmap, render_views, PoseSampling, RenderParams};
use afmkit::dataset::{generate, load_manifest, DatasetConfig};
use afmkit::eval2d::{evaluate_pairs, height_stats, load_pairs, welch_t_test, HeightStats};
use afmkit::eval3d::{batch_table, evaluate_3d, Eval3dOptions, Eval3dReport};
use afmkit::isosurface::{load_grid, marching_cubes, threshold_occupancy};
use afmkit::mesh::{load_obj, write_obj, DegenerateFaces, TriangleMesh};
use afmkit::pdb::pdb_to_mesh;
use afmkit::Error;

use crate::record::RunRecord;
use crate::{Cli, CliError, Command, DatasetArgs, Eval2dArgs, Eval3dArgs, ExtractArgs, RenderArgs, StatsArgs};

type CmdResult = Result<(), CliError>;

pub fn run(cli: &Cli, threads_cap: Option<usize>) -> CmdResult {
    let (name, out) = match &cli.command {
        Command::Render(a) => ("render", &a.out),
        Command::Dataset(a) => ("dataset", &a.out),
        Command::Eval3d(a) => ("eval3d", &a.out),
        Command::ExtractMesh(a) => ("extract-mesh", &a.out),
        Command::Eval2d(a) => ("eval2d", &a.out),
        Command::Stats(a) => ("stats", &a.out),
    };
    let mut record = RunRecord::start(name, threads_cap);
    let result = match &cli.command {
        Command::Render(a) => render(a, cli.pretty, &mut record),
        Command::Dataset(a) => dataset(a, cli.pretty, threads_cap, &mut record),
        Command::Eval3d(a) => eval3d(a, cli.pretty, &mut record),
        Command::ExtractMesh(a) => extract_mesh(a, cli.pretty, &mut record),
        Command::Eval2d(a) => eval2d(a, cli.pretty, &mut record),
        Command::Stats(a) => stats(a, cli.pretty, &mut record),
    };
    let status = if result.is_ok() { "ok" } else { "failed" };
    if let Err(e) = record.write(out, status) {
        log::warn!("could not write run record to {}: {e}", out.display());
    }
    result
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(Error::Io { path: dir.into(), source: e }))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(Error::Io { path: path.into(), source: e }))
}

fn to_json_line<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("report serializes")
}

fn load_mesh(path: &Path, scale: f64) -> Result<TriangleMesh, CliError> {
    let loaded = load_obj(path, DegenerateFaces::Drop)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(loaded.mesh.with_scale(scale)?)
}

fn pose_sampling(area_uniform: bool) -> PoseSampling {
    if area_uniform {
        PoseSampling::AreaUniform
    } else {
        PoseSampling::PerAngle
    }
}

fn render(a: &RenderArgs, pretty: bool, record: &mut RunRecord) -> CmdResult {
    let params = RenderParams {
        n_views: a.views,
        step_nm: a.step_nm,
        tip_radius_nm: a.tip_radius_nm,
        kernel: a.kernel.into(),
        seed: a.seed,
        pose_sampling: pose_sampling(a.area_uniform),
        ..Default::default()
    };
    record.config = json!({
        "mesh": a.mesh, "pdb": a.pdb, "scale_nm_per_unit": a.scale_nm_per_unit,
        "probe_nm": a.probe_nm, "voxel_nm": a.voxel_nm, "render": params,
    });
    record.seeds = vec![a.seed];
    let mesh = match (&a.mesh, &a.pdb) {
        (Some(obj), _) => load_mesh(obj, a.scale_nm_per_unit)?,
        (None, Some(pdb)) => pdb_to_mesh(pdb, a.probe_nm, a.voxel_nm)?,
        (None, None) => return Err(CliError::Usage("one of --mesh or --pdb is required".into())),
    };
    let views = render_views(&mesh, &params)?;
    create_dir(&a.out)?;
    for (k, v) in views.iter().enumerate() {
        export_heightmap(v, a.out.join(format!("view_{k}")))?;
    }
    let first = &views[0];
    if pretty {
        println!("rendered {} views of {} ({}×{} px, {:.4} nm/px) into {}", views.len(), mesh.source_id(), first.width, first.height, first.step_nm, a.out.display());
        for (k, v) in views.iter().enumerate() {
            println!(
                "  view_{k}: elevation {:7.2}°  azimuth {:7.2}°  roll {:7.2}°  max {:.3} nm",
                v.pose.elevation_deg, v.pose.azimuth_deg, v.pose.roll_deg, v.max_nm()
            );
        }
    } else {
        println!(
            "{}",
            json!({"views": views.len(), "width": first.width, "height": first.height, "step_nm": first.step_nm, "out": a.out})
        );
    }
    Ok(())
}

fn dataset(a: &DatasetArgs, pretty: bool, threads_cap: Option<usize>, record: &mut RunRecord) -> CmdResult {
    let requested = a.workers.unwrap_or_else(|| DatasetConfig::default().workers);
    let config = DatasetConfig {
        n_views: a.views,
        step_nm: a.step_nm,
        tip_radius_nm: a.tip_radius_nm,
        kernel: a.kernel.into(),
        pose_sampling: pose_sampling(a.area_uniform),
        min_plddt: a.min_plddt,
        seed: a.seed,
        output_root: a.out.clone(),
        workers: threads_cap.map_or(requested, |cap| requested.min(cap)),
        ..Default::default()
    };
    record.config = json!({"manifest": a.manifest, "dataset": config});
    record.seeds = vec![a.seed];
    let manifest = load_manifest(&a.manifest)?;
    let summary = generate(&config, &manifest)?;
    if pretty {
        println!("manifest entries : {}", summary.manifest_entries);
        println!("kept (pLDDT ≥ {}) : {} ({:.1}%)", config.min_plddt, summary.kept, 100.0 * summary.retention);
        println!("rendered         : {}", summary.succeeded);
        println!("skipped (done)   : {}", summary.skipped);
        println!("failed           : {}", summary.failed.len());
        for f in &summary.failed {
            println!("  {}: {}", f.source_id, f.reason);
        }
        println!("wall time        : {:.2} s", summary.wall_time_s);
    } else {
        println!("{}", to_json_line(&summary));
    }
    Ok(())
}

fn read_eval3d_batch(path: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::Io { path: path.into(), source: e }))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(CliError::Runtime(Error::Parse {
                path: path.into(),
                line: n + 1,
                message: "expected `<pred.obj> <gt.obj>`".into(),
            }));
        }
        pairs.push((base.join(fields[0]), base.join(fields[1])));
    }
    Ok(pairs)
}

fn print_eval3d_table(reports: &[Eval3dReport]) {
    println!(
        "{:<20} {:<20} {:>10} {:>10} {:>9} {:>9} {:>11}",
        "pred", "gt", "CD (nm)", "HD (nm)", "F@0.05", "F@0.1", "Length (nm)"
    );
    for r in reports {
        println!(
            "{:<20} {:<20} {:>10.4} {:>10.4} {:>9.2} {:>9.2} {:>11.2}",
            r.pred_id, r.gt_id, r.cd_nm, r.hd_nm, r.f_at_005, r.f_at_01, r.protein_length_nm
        );
    }
}

fn eval3d(a: &Eval3dArgs, pretty: bool, record: &mut RunRecord) -> CmdResult {
    let opts = Eval3dOptions {
        samples: a.samples,
        seed: a.seed,
        align: !a.no_align,
        restarts: a.restarts,
    };
    record.config = json!({
        "pred": a.pred, "gt": a.gt, "batch": a.batch,
        "pred_scale": a.pred_scale, "gt_scale": a.gt_scale, "eval": opts,
    });
    record.seeds = vec![a.seed];
    let pairs = match (&a.batch, &a.pred, &a.gt) {
        (Some(batch), _, _) => read_eval3d_batch(batch)?,
        (None, Some(p), Some(g)) => vec![(p.clone(), g.clone())],
        _ => return Err(CliError::Usage("give --pred and --gt, or --batch".into())),
    };
    let mut reports = Vec::with_capacity(pairs.len());
    for (pred, gt) in &pairs {
        let pred_mesh = load_mesh(pred, a.pred_scale)?;
        let gt_mesh = load_mesh(gt, a.gt_scale)?;
        reports.push(evaluate_3d(&pred_mesh, &gt_mesh, &opts)?);
    }
    create_dir(&a.out)?;
    if a.batch.is_some() {
        write_text(&a.out.join("eval3d.tsv"), &batch_table(&reports))?;
        let lines: String = reports.iter().map(|r| to_json_line(r) + "\n").collect();
        write_text(&a.out.join("eval3d.jsonl"), &lines)?;
    } else {
        let text = serde_json::to_string_pretty(&reports[0]).expect("report serializes") + "\n";
        write_text(&a.out.join("eval3d.json"), &text)?;
    }
    if pretty {
        print_eval3d_table(&reports);
    } else {
        for r in &reports {
            println!("{}", to_json_line(r));
        }
    }
    Ok(())
}

fn extract_mesh(a: &ExtractArgs, pretty: bool, record: &mut RunRecord) -> CmdResult {
    let grid = load_grid(&a.grid)?;
    let tau = match a.threshold {
        Some(t) if t.is_finite() => t,
        Some(t) => return Err(CliError::Usage(format!("--threshold must be finite, got {t}"))),
        None if grid.occupancy_like() => 0.5,
        None => {
            return Err(CliError::Usage(
                "--threshold is required for grids not marked occupancy_like".into(),
            ))
        }
    };
    record.config = json!({"grid": a.grid, "threshold": tau, "direct_iso": a.direct_iso});
    let mesh = if a.direct_iso {
        marching_cubes(&grid, tau)
    } else {
        marching_cubes(&threshold_occupancy(&grid, tau), 0.5)
    };
    if mesh.is_empty() {
        log::warn!("field never crosses {tau}; writing an empty mesh");
    }
    create_dir(&a.out)?;
    write_obj(&mesh, a.out.join("mesh.obj"))?;
    let report = json!({
        "grid": a.grid,
        "tau": tau,
        "direct_iso": a.direct_iso,
        "vertices": mesh.vertices().len(),
        "triangles": mesh.triangles().len(),
    });
    write_text(&a.out.join("extract_report.json"), &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    if pretty {
        println!(
            "tau {tau} ({}): {} vertices, {} triangles → {}",
            if a.direct_iso { "direct" } else { "occupancy" },
            mesh.vertices().len(),
            mesh.triangles().len(),
            a.out.join("mesh.obj").display()
        );
    } else {
        println!("{report}");
    }
    Ok(())
}

fn eval2d(a: &Eval2dArgs, pretty: bool, record: &mut RunRecord) -> CmdResult {
    record.config = json!({"pairs": a.pairs, "external_perceptual_cmd": a.external_perceptual_cmd});
    let pairs = load_pairs(&a.pairs)?;
    let results = evaluate_pairs(&pairs, a.external_perceptual_cmd.as_deref());
    let mut rows = String::new();
    let mut first_error = None;
    for (pair, r) in pairs.iter().zip(results) {
        match r {
            Ok(report) => {
                rows.push_str(&to_json_line(&report));
                rows.push('\n');
                if pretty {
                    let lpips = report.lpips.map_or("-".to_string(), |v| format!("{v:.4}"));
                    println!("{:<20} PSNR {:>8.3} dB  SSIM {:>7.4}  MSE {:>9.6}  LPIPS {lpips}", report.pair_id, report.psnr_db, report.ssim, report.mse);
                } else {
                    println!("{}", to_json_line(&report));
                }
            }
            Err(e) => {
                log::error!("{}: {e}", pair.pair_id);
                first_error.get_or_insert(e);
            }
        }
    }
    create_dir(&a.out)?;
    write_text(&a.out.join("eval2d.jsonl"), &rows)?;
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn foreground_heights(paths: &[PathBuf], threshold: f64) -> Result<(Vec<HeightStats>, Vec<f64>), CliError> {
    let mut stats = Vec::new();
    let mut heights = Vec::new();
    for p in paths {
        let h = load_heightmap(p)?;
        heights.extend(h.values_nm.iter().map(|&v| f64::from(v)).filter(|&v| v > threshold));
        stats.push(height_stats(&h, threshold));
    }
    Ok((stats, heights))
}

fn stats(a: &StatsArgs, pretty: bool, record: &mut RunRecord) -> CmdResult {
    record.config = json!({"heightmap": a.heightmap, "compare_to": a.compare_to, "foreground_nm": a.foreground_nm});
    let (stats, group_a) = foreground_heights(&a.heightmap, a.foreground_nm)?;
    create_dir(&a.out)?;
    let rows: String = stats.iter().map(|s| to_json_line(s) + "\n").collect();
    write_text(&a.out.join("stats.jsonl"), &rows)?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for s in &stats {
        if pretty {
            println!(
                "{:<20} max {:>8.4} nm  mean {:>8} nm  Rq {:>8} nm  ({} px > {} nm)",
                s.source_id,
                s.max_nm,
                fmt(s.mean_foreground_nm),
                fmt(s.rq_nm),
                s.foreground_pixels,
                s.threshold_nm
            );
        } else {
            println!("{}", to_json_line(s));
        }
    }
    if !a.compare_to.is_empty() {
        let (other, group_b) = foreground_heights(&a.compare_to, a.foreground_nm)?;
        let rows: String = other.iter().map(|s| to_json_line(s) + "\n").collect();
        write_text(&a.out.join("stats_compare.jsonl"), &rows)?;
        let t = welch_t_test(&group_a, &group_b)?;
        let report = json!({"t": t.t, "dof": t.dof, "p": t.p, "n_a": group_a.len(), "n_b": group_b.len()});
        write_text(&a.out.join("ttest.json"), &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
        if pretty {
            println!("Welch t = {:.4}, dof = {:.2}, p = {:.3e}", t.t, t.dof, t.p);
        } else {
            println!("{report}");
        }
    }
    Ok(())
}
