//! Feature-pass throughput across Top-K sizes and feature dimensions.

use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::pose::Pose;
use crate::raster::{
    render_feature_full_blend, render_feature_into, render_geometric_with_plan, RasterPlan, RenderSettings,
};
use crate::scene::{CameraIntrinsics, Gaussian3D};

/// `None` is the full-blend feature pass.
pub type TopK = Option<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub top_k: TopK,
    pub feature_dim: usize,
    /// Best-of-repeats feature-pass wall time in seconds.
    pub feature_seconds: f64,
    /// Best-of-repeats geometric pass wall time in seconds.
    pub geometry_seconds: f64,
}

impl BenchRow {
    pub fn k_label(&self) -> String {
        self.top_k.map_or_else(|| "full".to_string(), |k| k.to_string())
    }
}

/// Random Gaussians filling the view of an identity camera.
pub fn bench_scene(count: usize, feature_dim: usize, seed: u64) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z = rng.random_range(2.0..6.0);
            let mean = Vector3::new(rng.random_range(-0.5..0.5) * z, rng.random_range(-0.5..0.5) * z, z);
            let s = rng.random_range(0.02..0.08);
            let scale = Vector3::new(s, s * rng.random_range(0.3..1.0), s * rng.random_range(0.3..1.0));
            let rot = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let mut f: Vec<f64> = (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            f.iter_mut().for_each(|v| *v /= n);
            let color = Vector3::new(rng.random(), rng.random(), rng.random());
            Gaussian3D::new(mean, scale, rot, rng.random_range(0.3..0.95), color, f)
        })
        .collect()
}

/// Times the feature pass for each `(K, D)` pair: Top-K aggregation from the
/// records of a geometric pass with that `K`, or the full-blend pass.
pub fn feature_pass_benchmark(
    count: usize,
    cam: &CameraIntrinsics,
    ks: &[TopK],
    dims: &[usize],
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let pose = Pose::identity();
    let mut rows = Vec::new();
    for &d in dims {
        let gaussians = bench_scene(count, d, seed);
        for &k in ks {
            let settings = RenderSettings {
                top_k: k.unwrap_or(1),
                ..Default::default()
            };
            let plan = RasterPlan::build(&gaussians, &pose, cam, &settings);
            let mut best_feat = f64::INFINITY;
            let mut best_geo = f64::INFINITY;
            let mut buf = vec![0.0; cam.pixel_count() * d];
            // one untimed pass warms caches and the allocator
            for rep in 0..=repeats.max(1) {
                let t = Instant::now();
                let out = render_geometric_with_plan(&plan, &settings);
                let geo = t.elapsed().as_secs_f64();
                let t = Instant::now();
                match k {
                    Some(_) => render_feature_into(&gaussians, &out.topk, d, &mut buf)?,
                    None => buf = render_feature_full_blend(&gaussians, &plan, &settings, d).0,
                }
                let feat = t.elapsed().as_secs_f64();
                std::hint::black_box(&buf);
                if rep > 0 {
                    best_geo = best_geo.min(geo);
                    best_feat = best_feat.min(feat);
                }
            }
            rows.push(BenchRow {
                top_k: k,
                feature_dim: d,
                feature_seconds: best_feat,
                geometry_seconds: best_geo,
            });
        }
    }
    Ok(rows)
}

/// Plain-text table, one row per configuration.
pub fn format_bench_table(rows: &[BenchRow], pixels: usize) -> String {
    let mut s = String::from("K\tD\tfeature_ms\tfeature_fps\tgeometry_ms\tmpix_per_s\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.3}\t{:.1}\t{:.3}\t{:.2}\n",
            r.k_label(),
            r.feature_dim,
            r.feature_seconds * 1e3,
            1.0 / r.feature_seconds,
            r.geometry_seconds * 1e3,
            pixels as f64 / r.feature_seconds / 1e6
        ));
    }
    s
}
