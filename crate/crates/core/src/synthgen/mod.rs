//! Synthetic ground truth: a box room tiled with flat Gaussians of known
//! class, camera paths through it, rendered RGB-D-feature frames and the
//! dataset files that carry them.

mod dataset;
mod render;
mod scene;

pub use dataset::*;
pub use render::*;
pub use scene::*;

use crate::error::Result;
use crate::scene::CameraIntrinsics;

/// Everything needed to produce a dataset from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSpec {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    /// Standard deviation of additive depth noise (0 = noise-free).
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            trajectory: TrajectorySpec::default(),
            width: 160,
            height: 120,
            fov_deg: 70.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }
}

impl GenerateSpec {
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        let f = self.width as f64 / 2.0 / (self.fov_deg.to_radians() / 2.0).tan();
        CameraIntrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
            0.05,
            50.0,
        )
    }
}

/// Builds the scene, trajectory and frames described by `spec`.
pub fn generate_dataset(spec: &GenerateSpec) -> Result<(SyntheticScene, Dataset)> {
    let mut scene_spec = spec.scene.clone();
    scene_spec.seed = spec.seed;
    let scene = build_synthetic_scene(&scene_spec)?;
    let poses = generate_trajectory(&scene, &spec.trajectory)?;
    let cam = spec.camera()?;
    let frames = render_ground_truth(&scene, &poses, &cam, spec.depth_noise, spec.seed)?;
    let manifest = DatasetManifest {
        frame_count: frames.len(),
        camera: cam,
        depth_scale: DEFAULT_DEPTH_SCALE,
        feature_dim: scene_spec.feature_dim,
        class_names: scene.class_names.clone(),
        class_embeddings: scene.class_embeddings.clone(),
    };
    let dataset = Dataset {
        manifest,
        frames,
        groundtruth: poses.iter().map(|p| p.inverse()).collect(),
    };
    Ok((scene, dataset))
}
