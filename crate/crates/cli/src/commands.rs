use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pano4d::erp::{project_erp_to_perspective, ErpDims, ErpFrame, ErpVideo, PerspectiveCamera, Sampling};
use pano4d::gaussian::{prune_transparent, rasterize, reconstruct_4d, LossModules, LossRecord};
use pano4d::io::{read_camera_list, read_grids, read_json, read_ply, read_png, read_poses, write_camera_list, write_grids, write_json, write_ply, write_png};
use pano4d::spatial::{align, fuse_panorama_depth, TangentDepthSet};
use pano4d::temporal::{align_sequence, MetricReference, TemporalAlignConfig};
use pano4d::trajectory::TrajectorySpec;
use serde::Serialize;

use crate::config::{PipelineConfig, RunRecord};
use crate::CliError;

fn prepare_out(out: &Path, command: &str, inputs: &[(&'static str, &Path)], cfg: &PipelineConfig) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    let record = RunRecord {
        command,
        inputs: inputs.iter().map(|(k, p)| (*k, p.display().to_string())).collect::<BTreeMap<_, _>>(),
        config: cfg,
    };
    write_json(&out.join("config.json"), &record)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn erp_frames(path: &Path) -> Result<Vec<ErpFrame>, CliError> {
    read_grids(path)?
        .into_iter()
        .map(|g| ErpFrame::new(g).map_err(|e| CliError::Input(format!("{}: {e}", path.display()))))
        .collect()
}

/// `view_090.png` for a horizontal view, `view_045_p60.png` for one tilted
/// up by 60°.
pub fn view_file_name(cam: &PerspectiveCamera) -> String {
    let az = cam.azimuth().to_degrees().rem_euclid(360.0).round() as i64 % 360;
    let el = cam.elevation().to_degrees().round() as i64;
    match el {
        0 => format!("view_{az:03}.png"),
        e if e > 0 => format!("view_{az:03}_p{e:02}.png"),
        e => format!("view_{az:03}_m{:02}.png", -e),
    }
}

pub fn project(panorama: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let pano = ErpFrame::new(read_png(panorama)?).map_err(|e| CliError::Input(format!("{}: {e}", panorama.display())))?;
    prepare_out(out, "project", &[("panorama", panorama)], cfg)?;
    let mut names = Vec::new();
    for cam in cfg.rig.cameras() {
        let name = view_file_name(cam);
        if names.contains(&name) {
            return Err(CliError::Input(format!("two rig views share the file name {name}")));
        }
        write_png(&out.join(&name), &project_erp_to_perspective(&pano, cam, Sampling::Bilinear))?;
        names.push(name);
    }
    write_camera_list(&out.join("cameras.json"), cfg.rig.cameras())?;
    Ok(())
}

#[derive(Serialize)]
struct SpatialReport {
    alpha_raw: Vec<f64>,
    alpha_effective: Vec<f64>,
    initial_depth_loss: f64,
    final_depth_loss: f64,
    iterations: usize,
}

pub fn align_spatial(input: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let cameras = read_camera_list(&input.join("cameras.json"))?;
    let depths = read_grids(&input.join("depths.erpf"))?;
    let views = TangentDepthSet::new(cameras, depths)?;
    let alignment = align(&views, &cfg.spatial)?;
    let dims = ErpDims::new(cfg.fused_height)?;
    let fused = fuse_panorama_depth(&views, &alignment.params, &alignment.field, dims)?;
    prepare_out(out, "align-spatial", &[("input", input)], cfg)?;
    write_grids(&out.join("pano_depth.erpf"), std::slice::from_ref(fused.image()))?;
    let report = SpatialReport {
        alpha_raw: alignment.params.raw_scale.clone(),
        alpha_effective: alignment.params.effective_scales(),
        initial_depth_loss: alignment.initial_depth_loss,
        final_depth_loss: alignment.final_depth_loss,
        iterations: alignment.history.len(),
    };
    write_json(&out.join("alignment.json"), &report)?;
    log::info!(
        "aligned {} views: L_depth {:.3e} -> {:.3e}",
        views.len(),
        report.initial_depth_loss,
        report.final_depth_loss
    );
    Ok(())
}

pub fn align_temporal(depths: &Path, metric: &Path, poses: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let pano = erp_frames(depths)?;
    let reference = MetricReference::new(read_grids(metric)?, read_poses(poses)?)?;
    let (aligned, cals) = align_sequence(&pano, &reference, &TemporalAlignConfig::default())?;
    prepare_out(out, "align-temporal", &[("depths", depths), ("metric", metric), ("poses", poses)], cfg)?;
    let grids: Vec<_> = aligned.into_iter().map(ErpFrame::into_image).collect();
    write_grids(&out.join("aligned_depth.erpf"), &grids)?;
    let mut csv = String::from("t,alpha,beta\n");
    for (t, c) in cals.iter().enumerate() {
        writeln!(csv, "{t},{},{}", c.alpha, c.beta).unwrap();
    }
    write_text(&out.join("calibration.csv"), &csv)
}

fn trace_csv(trace: &[LossRecord]) -> String {
    let mut csv = String::from(LossRecord::CSV_HEADER);
    csv.push('\n');
    for r in trace {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    csv
}

pub fn reconstruct(rgb: &Path, depths: &Path, poses: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let video = ErpVideo::new(erp_frames(rgb)?)?;
    if video.frames()[0].channels() != 3 {
        return Err(CliError::Input(format!("{}: color frames must have 3 channels", rgb.display())));
    }
    let depth = erp_frames(depths)?;
    let poses_v = read_poses(poses)?;
    let rec = reconstruct_4d(&video, &depth, &poses_v, &cfg.reconstruct, &LossModules::default())?;
    prepare_out(out, "reconstruct", &[("rgb", rgb), ("depths", depths), ("poses", poses)], cfg)?;
    for (t, (gs, trace)) in rec.frames.frames().iter().zip(&rec.traces).enumerate() {
        write_ply(&out.join(format!("frame_{t:04}.ply")), gs)?;
        write_text(&out.join(format!("loss_{t:04}.csv")), &trace_csv(trace))?;
        if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
            log::info!("frame {t}: {} Gaussians, loss {:.4} -> {:.4}", gs.len(), first.total, last.total);
        }
    }
    Ok(())
}

/// `frame_NNNN.ply` files of a scene directory in frame order.
pub fn scene_frames(scene: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = fs::read_dir(scene).map_err(|e| CliError::Input(format!("{}: {e}", scene.display())))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".ply"))
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(CliError::Input(format!("{}: no frame_*.ply files", scene.display())));
    }
    Ok(frames)
}

pub fn render(scene: &Path, trajectory: &Path, out: &Path, cfg: &PipelineConfig) -> Result<(), CliError> {
    let spec: TrajectorySpec = read_json(trajectory)?;
    let cameras = spec
        .cameras()
        .map_err(|e| CliError::Input(format!("{}: {e}", trajectory.display())))?;
    let frames = scene_frames(scene)?
        .iter()
        .map(|p| read_ply(p))
        .collect::<pano4d::Result<Vec<_>>>()?;
    let steps: Vec<usize> = (0..cameras.len())
        .map(|i| spec.frame_for_step(i, frames.len()))
        .collect::<pano4d::Result<_>>()
        .map_err(|e| CliError::Input(format!("{}: {e}", trajectory.display())))?;
    prepare_out(out, "render", &[("scene", scene), ("trajectory", trajectory)], cfg)?;
    for (i, (cam, &t)) in cameras.iter().zip(&steps).enumerate() {
        let r = rasterize(&frames[t], cam);
        write_png(&out.join(format!("step_{i:04}.png")), &r.color)?;
        if cfg.render.write_depth {
            write_grids(&out.join(format!("depth_{i:04}.erpf")), std::slice::from_ref(&r.depth))?;
        }
    }
    Ok(())
}

pub fn export_ply(input: &Path, output: &Path, prune: Option<f64>) -> Result<(), CliError> {
    let mut gs = read_ply(input)?;
    if let Some(threshold) = prune {
        if !(0.0..1.0).contains(&threshold) {
            return Err(CliError::Input(format!("prune threshold must lie in [0, 1), got {threshold}")));
        }
        gs = prune_transparent(&gs, threshold);
    }
    write_ply(output, &gs)?;
    Ok(())
}
