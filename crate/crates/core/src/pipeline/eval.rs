use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};

use super::config::PipelineConfig;
use super::run::{RunOutput, Timings};
use crate::error::{Error, Result};
use crate::mapper::save_checkpoint;
use crate::metrics::{ate_rmse, psnr, segment_by_query, semantic_metrics, ssim, trajectory_length};
use crate::pose::Pose;
use crate::raster::{render_feature, render_geometric, RenderSettings};
use crate::scene::{CameraIntrinsics, Frame, Gaussian3D};
use crate::synthgen::{write_tum, Dataset};

/// One rendered evaluation view.
#[derive(Debug, Clone)]
pub struct View {
    pub frame_index: usize,
    pub color: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    /// Mean over views.
    pub psnr: f64,
    pub ssim: f64,
    /// Over all valid pixels of all views.
    pub pixel_accuracy: f64,
    pub miou: f64,
}

/// Renders the map at each `(frame index, world-to-camera pose)` and scores
/// color against the frame and argmax-cosine labels against the frame's
/// ground-truth labels.
pub fn evaluate_views(
    gaussians: &[Gaussian3D],
    feature_dim: usize,
    frames: &[Frame],
    views: &[(usize, Pose)],
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    class_embeddings: &[Vec<f64>],
) -> Result<(ImageScores, Vec<View>)> {
    if views.is_empty() {
        return Err(Error::InvalidArgument("no views to evaluate".into()));
    }
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    let mut all_pred = Vec::new();
    let mut all_gt = Vec::new();
    let mut out = Vec::with_capacity(views.len());
    for &(fi, pose) in views {
        let frame = &frames[fi];
        let r = render_geometric(gaussians, &pose, cam, settings);
        let color: Vec<f64> = r.color.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let gt_color: Vec<f64> = frame.color.iter().map(|&v| v as f64).collect();
        psnr_sum += psnr(&color, &gt_color)?;
        ssim_sum += ssim(&color, &gt_color, cam.width, cam.height, 3)?;
        let feat = render_feature(gaussians, &r.topk, feature_dim)?;
        let feat32: Vec<f32> = feat.iter().map(|&v| v as f32).collect();
        let labels = segment_by_query(&feat32, feature_dim, class_embeddings);
        if let Some(gt) = &frame.label {
            all_pred.extend_from_slice(&labels);
            all_gt.extend_from_slice(gt);
        }
        out.push(View {
            frame_index: fi,
            color,
            labels,
        });
    }
    let sem = if all_gt.is_empty() {
        None
    } else {
        Some(semantic_metrics(&all_pred, &all_gt)?)
    };
    let n = views.len() as f64;
    Ok((
        ImageScores {
            psnr: psnr_sum / n,
            ssim: ssim_sum / n,
            pixel_accuracy: sem.map_or(f64::NAN, |s| s.accuracy),
            miou: sem.map_or(f64::NAN, |s| s.miou),
        },
        out,
    ))
}

/// Run summary. Everything except `timings` is reproducible and goes to
/// the report file; timings go to their own file.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub frames: usize,
    pub keyframes: usize,
    pub gaussian_count: usize,
    pub inserted_total: usize,
    pub pruned_total: usize,
    pub map_iterations: u64,
    pub tracking_failures: usize,
    pub trajectory_length: f64,
    pub ate_rmse: f64,
    /// `ate_rmse / trajectory_length`.
    pub ate_ratio: f64,
    pub scores: ImageScores,
    pub timings: Timings,
}

impl MetricsReport {
    pub fn to_report_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("frames", self.frames.to_string());
        kv("keyframes", self.keyframes.to_string());
        kv("gaussian_count", self.gaussian_count.to_string());
        kv("inserted_total", self.inserted_total.to_string());
        kv("pruned_total", self.pruned_total.to_string());
        kv("map_iterations", self.map_iterations.to_string());
        kv("tracking_failures", self.tracking_failures.to_string());
        kv("trajectory_length", self.trajectory_length.to_string());
        kv("ate_rmse", self.ate_rmse.to_string());
        kv("ate_ratio", self.ate_ratio.to_string());
        kv("psnr", self.scores.psnr.to_string());
        kv("ssim", self.scores.ssim.to_string());
        kv("pixel_accuracy", self.scores.pixel_accuracy.to_string());
        kv("miou", self.scores.miou.to_string());
        s
    }

    pub fn to_timings_text(&self) -> String {
        let t = &self.timings;
        let fps = if t.total > 0.0 {
            self.frames as f64 / t.total
        } else {
            0.0
        };
        format!(
            "tracking_s={}\nmapping_s={}\ntotal_s={}\nsystem_fps={}\n",
            t.tracking, t.mapping, t.total, fps
        )
    }
}

/// Scores a finished run: ATE over all frames, image and semantic metrics at
/// the keyframes' estimated poses.
pub fn evaluate_run(
    run: &RunOutput,
    dataset: &Dataset,
    settings: &RenderSettings,
) -> Result<(MetricsReport, Vec<View>)> {
    let gt: Vec<(f64, Pose)> = dataset
        .frames
        .iter()
        .zip(&dataset.groundtruth)
        .map(|(f, p)| (f.timestamp, *p))
        .collect();
    let ate = ate_rmse(&run.trajectory, &gt, true)?;
    let length = trajectory_length(&dataset.groundtruth);
    let views: Vec<(usize, Pose)> = run
        .keyframe_frames
        .iter()
        .zip(&run.map.keyframes)
        .map(|(&fi, kf)| (fi, kf.pose))
        .collect();
    let (scores, rendered) = evaluate_views(
        &run.map.gaussians,
        run.map.feature_dim,
        &dataset.frames,
        &views,
        &dataset.manifest.camera,
        settings,
        &dataset.manifest.class_embeddings,
    )?;
    Ok((
        MetricsReport {
            frames: run.stats.frames,
            keyframes: run.stats.keyframes,
            gaussian_count: run.map.len(),
            inserted_total: run.stats.inserted_total,
            pruned_total: run.stats.pruned_total,
            map_iterations: run.stats.map_iterations,
            tracking_failures: run.stats.tracking_failures,
            trajectory_length: length,
            ate_rmse: ate,
            ate_ratio: if length > 0.0 { ate / length } else { f64::NAN },
            scores,
            timings: run.timings.clone(),
        },
        rendered,
    ))
}

pub const REPORT_FILE: &str = "report.txt";
pub const TIMINGS_FILE: &str = "timings.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const CHECKPOINT_FILE: &str = "map.splf";
pub const CONFIG_FILE: &str = "config.txt";

pub fn save_rgb(path: &Path, color: &[f64], width: usize, height: usize) -> Result<()> {
    let bytes: Vec<u8> = color
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Shape(format!("{} values for a {width}x{height} RGB image", color.len())))?
        .save(path)
        .map_err(|e| Error::dataset(path, e.to_string()))
}

pub fn save_gray(path: &Path, values: Vec<u8>, width: usize, height: usize) -> Result<()> {
    GrayImage::from_raw(width as u32, height as u32, values)
        .ok_or_else(|| Error::Shape(format!("bad size for a {width}x{height} gray image")))?
        .save(path)
        .map_err(|e| Error::dataset(path, e.to_string()))
}

/// Writes the report, timings, effective config, estimated trajectory,
/// checkpoint and per-keyframe renders under `dir`.
pub fn write_run_outputs(
    dir: &Path,
    run: &RunOutput,
    report: &MetricsReport,
    views: &[View],
    cfg: &PipelineConfig,
    cam: &CameraIntrinsics,
) -> Result<()> {
    let renders = dir.join("renders");
    fs::create_dir_all(&renders).map_err(|e| Error::io(&renders, e))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    write(REPORT_FILE, report.to_report_text())?;
    write(TIMINGS_FILE, report.to_timings_text())?;
    write(CONFIG_FILE, cfg.to_text())?;
    write_tum(&dir.join(TRAJECTORY_FILE), &run.trajectory)?;
    save_checkpoint(&dir.join(CHECKPOINT_FILE), &run.map.gaussians, run.map.feature_dim)?;
    for v in views {
        save_rgb(
            &renders.join(format!("kf_{:06}_color.png", v.frame_index)),
            &v.color,
            cam.width,
            cam.height,
        )?;
        save_gray(
            &renders.join(format!("kf_{:06}_label.png", v.frame_index)),
            v.labels.clone(),
            cam.width,
            cam.height,
        )?;
    }
    Ok(())
}
