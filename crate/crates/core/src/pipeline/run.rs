use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Mode, PipelineConfig};
use crate::error::{Error, Result};
use crate::mapper::{insert_gaussians, optimize_step, Keyframe, SceneMap};
use crate::pose::Pose;
use crate::scene::{CameraIntrinsics, Frame};
use crate::synthgen::Dataset;
use crate::tracker::{
    backproject_depth, gicp_align, keyframe_decision, refine_pose_photometric, SourcePoint, TrackingTarget,
};

/// Counters describing what a run did; all deterministic in deterministic
/// mode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub frames: usize,
    pub keyframes: usize,
    pub inserted_total: usize,
    pub pruned_total: usize,
    pub map_iterations: u64,
    /// Frames where G-ICP did not converge or had no valid depth.
    pub tracking_failures: usize,
}

/// Wall-clock seconds per stage. Kept apart from everything that must be
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timings {
    pub tracking: f64,
    pub mapping: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub map: SceneMap,
    /// Estimated camera-to-world pose per frame (refined poses for keyframes).
    pub trajectory: Vec<(f64, Pose)>,
    /// Dataset frame index of each keyframe, in map keyframe order.
    pub keyframe_frames: Vec<usize>,
    pub stats: RunStats,
    pub timings: Timings,
}

struct KeyframeMsg {
    frame_index: usize,
    pose: Pose,
    source: Vec<SourcePoint>,
    distances: Vec<f64>,
}

/// Owns the map; every mutation happens here.
struct Mapper<'a> {
    cfg: &'a PipelineConfig,
    cam: &'a CameraIntrinsics,
    frames: &'a [Frame],
    map: SceneMap,
    keyframe_frames: Vec<usize>,
    rng: ChaCha8Rng,
    iteration: u64,
    inserted_total: usize,
    pruned_total: usize,
    time: Duration,
}

impl<'a> Mapper<'a> {
    fn new(cfg: &'a PipelineConfig, cam: &'a CameraIntrinsics, frames: &'a [Frame], feature_dim: usize) -> Self {
        Self {
            cfg,
            cam,
            frames,
            map: SceneMap::new(feature_dim, cfg.learning_rates),
            keyframe_frames: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            iteration: 0,
            inserted_total: 0,
            pruned_total: 0,
            time: Duration::ZERO,
        }
    }

    fn ingest(&mut self, msg: KeyframeMsg) -> Result<()> {
        let start = Instant::now();
        let distances = if self.cfg.redundancy_check {
            msg.distances
        } else {
            vec![f64::INFINITY; msg.source.len()]
        };
        self.inserted_total +=
            insert_gaussians(&mut self.map, &msg.source, &msg.pose, &distances, self.cfg.tau_insert)?;
        self.map.keyframes.push(Keyframe {
            frame: self.frames[msg.frame_index].clone(),
            pose: msg.pose,
        });
        self.keyframe_frames.push(msg.frame_index);
        self.time += start.elapsed();
        Ok(())
    }

    /// Runs up to `iterations` optimization steps within the time budget,
    /// then optionally refines the newest keyframe pose.
    fn optimize(&mut self, iterations: usize, refine: bool) -> Result<()> {
        let start = Instant::now();
        let budget = Duration::from_millis(self.cfg.mapping_time_budget_ms);
        for _ in 0..iterations {
            if self.cfg.mapping_time_budget_ms > 0 && start.elapsed() >= budget {
                break;
            }
            if self.map.is_empty() {
                break;
            }
            let rec = optimize_step(
                &mut self.map,
                self.cam,
                &self.cfg.render,
                &self.cfg.loss,
                &self.cfg.schedule,
                self.iteration,
                &mut self.rng,
            )?;
            self.pruned_total += rec.pruned;
            self.iteration += 1;
        }
        if refine && self.cfg.refine_poses && self.map.keyframes.len() > 1 {
            let kf = self.map.keyframes.last().unwrap();
            let res = refine_pose_photometric(
                &self.map.gaussians,
                &kf.frame,
                self.cam,
                &kf.pose,
                &self.cfg.render,
                &self.cfg.loss,
                &self.cfg.refine,
            )?;
            self.map.keyframes.last_mut().unwrap().pose = res.pose;
        }
        self.time += start.elapsed();
        Ok(())
    }

    fn latest_pose(&self) -> Pose {
        self.map.keyframes.last().map(|k| k.pose).unwrap_or_default()
    }

    fn snapshot(&self) -> Result<TrackingTarget> {
        TrackingTarget::from_gaussians(&self.map.gaussians, &self.cfg.gicp)
    }
}

struct Tracked {
    pose: Pose,
    source: Vec<SourcePoint>,
    distances: Vec<f64>,
    keyframe: bool,
    failed: bool,
}

fn track(
    frame: &Frame,
    index: usize,
    cam: &CameraIntrinsics,
    cfg: &PipelineConfig,
    target: Option<&TrackingTarget>,
    init: &Pose,
) -> Result<Tracked> {
    let source = backproject_depth(frame, cam, cfg.stride, cfg.gicp.knn)?;
    let n = source.len();
    match target {
        Some(t) if index > 0 && !t.is_empty() => {
            if source.is_empty() {
                return Ok(Tracked {
                    pose: *init,
                    source,
                    distances: vec![],
                    keyframe: false,
                    failed: true,
                });
            }
            let res = gicp_align(&source, t, init, &cfg.gicp);
            Ok(Tracked {
                pose: res.pose,
                keyframe: keyframe_decision(&res, cfg.keyframe_threshold),
                failed: !res.converged,
                distances: res.correspondence_distances,
                source,
            })
        }
        _ => Ok(Tracked {
            pose: *init,
            source,
            distances: vec![f64::INFINITY; n],
            keyframe: true,
            failed: false,
        }),
    }
}

/// Runs tracking and mapping over a dataset. The first frame is placed at
/// its ground-truth pose; later frames start from the previous estimate.
pub fn run_slam(dataset: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if dataset.frames.is_empty() {
        return Err(Error::InvalidArgument("dataset has no frames".into()));
    }
    match cfg.mode {
        Mode::Deterministic => run_sequential(dataset, cfg),
        Mode::Concurrent => run_concurrent(dataset, cfg),
    }
}

fn finish(
    dataset: &Dataset,
    mapper: Mapper<'_>,
    mut poses: Vec<Pose>,
    failures: usize,
    tracking: Duration,
    total: Duration,
) -> RunOutput {
    for (kf, &fi) in mapper.map.keyframes.iter().zip(&mapper.keyframe_frames) {
        poses[fi] = kf.pose;
    }
    let trajectory = dataset
        .frames
        .iter()
        .zip(&poses)
        .map(|(f, p)| (f.timestamp, p.inverse()))
        .collect();
    RunOutput {
        stats: RunStats {
            frames: dataset.frames.len(),
            keyframes: mapper.map.keyframes.len(),
            inserted_total: mapper.inserted_total,
            pruned_total: mapper.pruned_total,
            map_iterations: mapper.iteration,
            tracking_failures: failures,
        },
        timings: Timings {
            tracking: tracking.as_secs_f64(),
            mapping: mapper.time.as_secs_f64(),
            total: total.as_secs_f64(),
        },
        trajectory,
        keyframe_frames: mapper.keyframe_frames,
        map: mapper.map,
    }
}

fn run_sequential(dataset: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let cam = &dataset.manifest.camera;
    let mut mapper = Mapper::new(cfg, cam, &dataset.frames, dataset.manifest.feature_dim);
    let mut target: Option<TrackingTarget> = None;
    let mut prev = dataset.groundtruth[0].inverse();
    let mut poses = Vec::with_capacity(dataset.frames.len());
    let mut failures = 0;
    let mut tracking = Duration::ZERO;
    for (i, frame) in dataset.frames.iter().enumerate() {
        let t0 = Instant::now();
        let tr = track(frame, i, cam, cfg, target.as_ref(), &prev)?;
        tracking += t0.elapsed();
        failures += tr.failed as usize;
        let mut pose = tr.pose;
        if tr.keyframe && !tr.source.is_empty() {
            mapper.ingest(KeyframeMsg {
                frame_index: i,
                pose,
                source: tr.source,
                distances: tr.distances,
            })?;
            mapper.optimize(cfg.iterations_per_keyframe, true)?;
            pose = mapper.latest_pose();
            let t0 = Instant::now();
            target = Some(mapper.snapshot()?);
            tracking += t0.elapsed();
        }
        poses.push(pose);
        prev = pose;
    }
    mapper.optimize(cfg.final_iterations, false)?;
    Ok(finish(dataset, mapper, poses, failures, tracking, start.elapsed()))
}

/// State the mapper publishes to the tracker.
struct Snapshot {
    target: Option<Arc<TrackingTarget>>,
    ingested: usize,
    error: bool,
}

fn run_concurrent(dataset: &Dataset, cfg: &PipelineConfig) -> Result<RunOutput> {
    let start = Instant::now();
    let cam = &dataset.manifest.camera;
    let shared = Arc::new((
        Mutex::new(Snapshot {
            target: None,
            ingested: 0,
            error: false,
        }),
        Condvar::new(),
    ));
    let (tx, rx) = mpsc::channel::<KeyframeMsg>();

    std::thread::scope(|scope| {
        let mapper_shared = Arc::clone(&shared);
        let mapper_handle = scope.spawn(move || -> Result<Mapper<'_>> {
            let mut mapper = Mapper::new(cfg, cam, &dataset.frames, dataset.manifest.feature_dim);
            let publish = |mapper: &Mapper<'_>, ingested: usize| -> Result<()> {
                let target = Arc::new(mapper.snapshot()?);
                let (lock, cv) = &*mapper_shared;
                let mut s = lock.lock().unwrap();
                s.target = Some(target);
                s.ingested = ingested;
                cv.notify_all();
                Ok(())
            };
            let result = (|| {
                let mut ingested = 0;
                while let Ok(msg) = rx.recv() {
                    mapper.ingest(msg)?;
                    ingested += 1;
                    publish(&mapper, ingested)?;
                    mapper.optimize(cfg.iterations_per_keyframe, true)?;
                    publish(&mapper, ingested)?;
                }
                mapper.optimize(cfg.final_iterations, false)
            })();
            if result.is_err() {
                let (lock, cv) = &*mapper_shared;
                lock.lock().unwrap().error = true;
                cv.notify_all();
            }
            result.map(|_| mapper)
        });

        let tracker_result = (|| -> Result<(Vec<Pose>, usize, Duration)> {
            let mut prev = dataset.groundtruth[0].inverse();
            let mut poses = Vec::with_capacity(dataset.frames.len());
            let mut failures = 0;
            let mut tracking = Duration::ZERO;
            let mut sent = 0;
            for (i, frame) in dataset.frames.iter().enumerate() {
                let target = {
                    let (lock, cv) = &*shared;
                    // wait until the mapper has ingested every keyframe sent so far
                    let s = cv
                        .wait_while(lock.lock().unwrap(), |s| s.ingested < sent && !s.error)
                        .unwrap();
                    if s.error {
                        return Err(Error::InvalidArgument("mapper stopped".into()));
                    }
                    s.target.clone()
                };
                let t0 = Instant::now();
                let tr = track(frame, i, cam, cfg, target.as_deref(), &prev)?;
                tracking += t0.elapsed();
                failures += tr.failed as usize;
                if tr.keyframe && !tr.source.is_empty() {
                    tx.send(KeyframeMsg {
                        frame_index: i,
                        pose: tr.pose,
                        source: tr.source,
                        distances: tr.distances,
                    })
                    .map_err(|_| Error::InvalidArgument("mapper stopped".into()))?;
                    sent += 1;
                }
                poses.push(tr.pose);
                prev = tr.pose;
            }
            Ok((poses, failures, tracking))
        })();
        drop(tx);
        let mapper = mapper_handle.join().expect("mapper thread panicked")?;
        let (poses, failures, tracking) = tracker_result?;
        Ok(finish(dataset, mapper, poses, failures, tracking, start.elapsed()))
    })
}
