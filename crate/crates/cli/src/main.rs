use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lfsplat::bench::{feature_pass_benchmark, format_bench_table};
use lfsplat::error::{Error, Result};
use lfsplat::mapper::load_checkpoint;
use lfsplat::pipeline::{
    class_query, evaluate_run, evaluate_views, mask_iou, query_mask, run_slam, save_gray, write_run_outputs, Mode,
    PipelineConfig,
};
use lfsplat::raster::{render_feature, render_geometric};
use lfsplat::scene::CameraIntrinsics;
use lfsplat::synthgen::{generate_dataset, read_dataset, read_tum, write_dataset, GenerateSpec, TrajectoryKind};

#[derive(Parser)]
#[command(
    name = "lfsplat",
    version,
    about = "Gaussian-splatting RGB-D SLAM with a Top-K semantic feature field"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Trajectory {
    Orbit,
    Lawnmower,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic RGB-D-feature dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, value_enum, default_value = "orbit")]
        trajectory: Trajectory,
        /// Full circles of an orbit; 2 revisits every viewpoint.
        #[arg(long, default_value_t = 1)]
        laps: usize,
        /// Standard deviation of additive depth noise.
        #[arg(long, default_value_t = 0.0)]
        depth_noise: f64,
        #[arg(long, default_value_t = 160)]
        width: usize,
        #[arg(long, default_value_t = 120)]
        height: usize,
    },
    /// Track and map a dataset; writes report, trajectory, checkpoint and renders.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Score a checkpoint against a dataset at its ground-truth poses, or at
    /// the poses of an estimated trajectory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// TUM trajectory (camera-to-world) to render from; also reports ATE.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate every n-th frame.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Similarity heat map and mask for a class name at one frame's pose.
    Query {
        /// Without a checkpoint the dataset's own feature map is queried.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature-pass timing over Top-K sizes and feature dimensions.
    Bench {
        #[arg(long, default_value_t = 10_000)]
        gaussians: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    path.map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate {
            out,
            seed,
            frames,
            trajectory,
            laps,
            depth_noise,
            width,
            height,
        } => {
            let mut spec = GenerateSpec {
                seed,
                depth_noise,
                width,
                height,
                ..Default::default()
            };
            spec.trajectory.frames = frames;
            spec.trajectory.laps = laps;
            spec.trajectory.kind = match trajectory {
                Trajectory::Orbit => TrajectoryKind::Orbit,
                Trajectory::Lawnmower => TrajectoryKind::Lawnmower,
            };
            let (_, dataset) = generate_dataset(&spec)?;
            write_dataset(&dataset, &out)?;
            println!("frames={}", dataset.frames.len());
            println!("dataset={}", out.display());
        }
        Command::Run {
            dataset,
            out,
            config,
            seed,
            mode,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            cfg.validate()?;
            let ds = read_dataset(&dataset)?;
            let run = run_slam(&ds, &cfg)?;
            let (report, views) = evaluate_run(&run, &ds, &cfg.render)?;
            create_dir(&out)?;
            write_run_outputs(&out, &run, &report, &views, &cfg, &ds.manifest.camera)?;
            print!("{}{}", report.to_report_text(), report.to_timings_text());
        }
        Command::Eval {
            checkpoint,
            dataset,
            trajectory,
            config,
            stride,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = read_dataset(&dataset)?;
            let (gaussians, d) = load_checkpoint(&checkpoint)?;
            if d != ds.manifest.feature_dim {
                return Err(Error::Shape(format!(
                    "checkpoint has {d} feature channels, dataset has {}",
                    ds.manifest.feature_dim
                )));
            }
            let mut text = String::new();
            let c2w = match &trajectory {
                Some(p) => {
                    let est = read_tum(p)?;
                    let gt: Vec<_> = ds
                        .frames
                        .iter()
                        .zip(&ds.groundtruth)
                        .map(|(f, p)| (f.timestamp, *p))
                        .collect();
                    let ate = lfsplat::metrics::ate_rmse(&est, &gt, true)?;
                    text.push_str(&format!("ate_rmse={ate}\n"));
                    if est.len() != ds.frames.len() {
                        return Err(Error::dataset(
                            p,
                            format!("{} poses for {} frames", est.len(), ds.frames.len()),
                        ));
                    }
                    est.into_iter().map(|(_, p)| p).collect()
                }
                None => ds.groundtruth.clone(),
            };
            let views: Vec<_> = (0..ds.frames.len())
                .step_by(stride.max(1))
                .map(|i| (i, c2w[i].inverse()))
                .collect();
            let (scores, _) = evaluate_views(
                &gaussians,
                d,
                &ds.frames,
                &views,
                &ds.manifest.camera,
                &cfg.render,
                &ds.manifest.class_embeddings,
            )?;
            text.push_str(&format!(
                "views={}\ngaussian_count={}\npsnr={}\nssim={}\npixel_accuracy={}\nmiou={}\n",
                views.len(),
                gaussians.len(),
                scores.psnr,
                scores.ssim,
                scores.pixel_accuracy,
                scores.miou
            ));
            print!("{text}");
        }
        Command::Query {
            checkpoint,
            dataset,
            class,
            frame,
            threshold,
            out,
        } => {
            let ds = read_dataset(&dataset)?;
            let m = &ds.manifest;
            let (class_id, query) = class_query(&m.class_names, &m.class_embeddings, &class)?;
            let f = ds.frames.get(frame).ok_or_else(|| {
                Error::InvalidArgument(format!("frame {frame} out of range (0..{})", ds.frames.len()))
            })?;
            let features: Vec<f32> = match &checkpoint {
                Some(p) => {
                    let (gaussians, d) = load_checkpoint(p)?;
                    let cfg = PipelineConfig::default();
                    let pose = ds.groundtruth[frame].inverse();
                    let r = render_geometric(&gaussians, &pose, &m.camera, &cfg.render);
                    render_feature(&gaussians, &r.topk, d)?
                        .into_iter()
                        .map(|v| v as f32)
                        .collect()
                }
                None => f.feature.clone(),
            };
            let (heat, mask) = query_mask(&features, m.feature_dim, query, threshold);
            create_dir(&out)?;
            let CameraIntrinsics { width, height, .. } = m.camera;
            let heat_px = heat
                .iter()
                .map(|&s| (s.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            save_gray(&out.join("heat.png"), heat_px, width, height)?;
            save_gray(
                &out.join("mask.png"),
                mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
                width,
                height,
            )?;
            let mut text = format!(
                "class={class}\nclass_id={class_id}\nframe={frame}\nthreshold={threshold}\nmask_pixels={}\n",
                mask.iter().filter(|&&b| b).count()
            );
            if let Some(labels) = &f.label {
                text.push_str(&format!("mask_iou={}\n", mask_iou(&mask, labels, class_id as u8)));
            }
            write_text(&out.join("query.txt"), &text)?;
            print!("{text}");
        }
        Command::Bench {
            gaussians,
            size,
            repeats,
            seed,
            out,
        } => {
            let f = size as f64;
            let cam = CameraIntrinsics::new(f, f, (f - 1.0) / 2.0, (f - 1.0) / 2.0, size, size, 0.05, 50.0)?;
            let ks = [Some(1), Some(3), Some(5), Some(10), None];
            let rows = feature_pass_benchmark(gaussians, &cam, &ks, &[16, 64], repeats, seed)?;
            let table = format_bench_table(&rows, size * size);
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_text(&dir.join("bench.txt"), &table)?;
            }
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
