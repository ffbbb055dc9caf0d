use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::SyntheticScene;
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::raster::{render_geometric, RenderSettings};
use crate::scene::{CameraIntrinsics, Frame, LABEL_INVALID};

/// Frame spacing used for synthetic timestamps (30 Hz).
pub const FRAME_INTERVAL: f64 = 1.0 / 30.0;

pub const COVERAGE_MIN: f64 = 0.5;

/// Renders color, depth, feature and label images at each pose.
///
/// Color is the rendered splat image. Labels come from the top-weight
/// Gaussian (K = 1) and features are the exact class embedding of the label.
/// Depth is ray-cast against the analytic surfaces the Gaussians tile, so
/// back-projected points lie exactly on the scene geometry. Pixels with
/// accumulated alpha below [`COVERAGE_MIN`] or no surface hit count as
/// uncovered: depth 0, a zero feature and the invalid label. With
/// `depth_noise > 0`, valid depths get seeded Gaussian noise.
pub fn render_ground_truth(
    scene: &SyntheticScene,
    poses: &[Pose],
    cam: &CameraIntrinsics,
    depth_noise: f64,
    seed: u64,
) -> Result<Vec<Frame>> {
    if !(depth_noise >= 0.0) {
        return Err(Error::InvalidArgument("depth noise must be >= 0".into()));
    }
    let settings = RenderSettings {
        top_k: 1,
        ..Default::default()
    };
    let d = scene.spec.feature_dim;
    let noise = Normal::new(0.0, depth_noise.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let embeddings: Vec<Vec<f32>> = scene
        .class_embeddings
        .iter()
        .map(|e| e.iter().map(|&v| v as f32).collect())
        .collect();
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let out = render_geometric(&scene.gaussians, pose, cam, &settings);
            let n = cam.pixel_count();
            let exact = raycast_depth(scene, pose, cam);
            let mut depth = vec![0.0f32; n];
            let mut feature = vec![0.0f32; n * d];
            let mut label = vec![LABEL_INVALID; n];
            for p in 0..n {
                match out.topk.pixel(p).0.first() {
                    Some(&g) if out.alpha[p] >= COVERAGE_MIN && exact[p] > 0.0 => {
                        depth[p] = exact[p] as f32;
                        let class = scene.classes[g as usize];
                        label[p] = class;
                        feature[p * d..(p + 1) * d].copy_from_slice(&embeddings[class as usize]);
                    }
                    _ => {}
                }
            }
            if depth_noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
                for z in depth.iter_mut().filter(|z| **z > 0.0) {
                    *z = (*z as f64 + noise.sample(&mut rng)).max(1e-3) as f32;
                }
            }
            Frame::new(
                i as f64 * FRAME_INTERVAL,
                cam.width,
                cam.height,
                d,
                out.color.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
                depth,
                feature,
                Some(label),
            )
        })
        .collect()
}

/// Camera-space depth of the nearest analytic surface per pixel (0 = none).
pub fn raycast_depth(scene: &SyntheticScene, pose: &Pose, cam: &CameraIntrinsics) -> Vec<f64> {
    let c2w = pose.inverse();
    let r = c2w.rotation_matrix();
    let origin = c2w.translation;
    let mut out = vec![0.0; cam.pixel_count()];
    for v in 0..cam.height {
        for u in 0..cam.width {
            // unit camera-space depth, so the ray parameter is the depth
            let dir = r * cam.unproject(u as f64, v as f64, 1.0);
            out[v * cam.width + u] = scene
                .surfaces
                .iter()
                .filter_map(|s| s.intersect(&origin, &dir, cam.near))
                .fold(0.0, |best: f64, t| if best == 0.0 || t < best { t } else { best });
        }
    }
    out
}
