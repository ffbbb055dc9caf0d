#![allow(dead_code)]

use lfsplat::raster::RenderSettings;
use lfsplat::scene::{project_gaussian_with, CameraIntrinsics, Gaussian3D};
use lfsplat::Pose;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_camera(w: usize, h: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(
        w as f64,
        w as f64,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        w,
        h,
        0.05,
        50.0,
    )
    .unwrap()
}

pub fn unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random anisotropic Gaussians in front of an identity camera.
pub fn random_scene(seed: u64, n: usize, d: usize, opacity: (f64, f64)) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = rng.random_range(1.5..3.0);
            let mean = Vector3::new(rng.random_range(-0.35..0.35) * z, rng.random_range(-0.35..0.35) * z, z);
            let scale = Vector3::new(
                rng.random_range(0.03..0.15),
                rng.random_range(0.03..0.15),
                rng.random_range(0.03..0.15),
            );
            let rot = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let op = rng.random_range(opacity.0..opacity.1);
            let color = Vector3::new(rng.random(), rng.random(), rng.random());
            Gaussian3D::new(mean, scale, rot, op, color, unit_vector(&mut rng, d))
        })
        .collect()
}

pub struct OraclePixel {
    pub color: [f64; 3],
    pub depth: f64,
    pub trans: f64,
    /// `(gaussian, weight, depth)` front to back.
    pub weights: Vec<(usize, f64, f64)>,
}

/// Per-pixel blend over every Gaussian: no tiles, no early stop.
pub fn brute_force_render(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
) -> Vec<OraclePixel> {
    let mut proj: Vec<(usize, f64, [f64; 2], [f64; 3], f64)> = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        let p = project_gaussian_with(g, pose, cam, settings.cov_dilation);
        if !p.visible {
            continue;
        }
        let inv = p.cov2d.try_inverse().unwrap();
        proj.push((
            i,
            p.depth,
            [p.mean2d.x, p.mean2d.y],
            [inv[(0, 0)], inv[(0, 1)], inv[(1, 1)]],
            g.opacity(),
        ));
    }
    proj.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut d = 0.0;
            let mut weights = Vec::new();
            for (i, z, m, q, op) in &proj {
                let dx = x as f64 - m[0];
                let dy = y as f64 - m[1];
                let power = -0.5 * (q[0] * dx * dx + 2.0 * q[1] * dx * dy + q[2] * dy * dy);
                let a = (op * power.exp()).min(settings.alpha_max);
                if op * power.exp() < settings.alpha_min {
                    continue;
                }
                let w = a * t;
                let col = gaussians[*i].color;
                c[0] += w * col.x;
                c[1] += w * col.y;
                c[2] += w * col.z;
                d += w * z;
                weights.push((*i, w, *z));
                t *= 1.0 - a;
            }
            let bg = settings.background;
            out.push(OraclePixel {
                color: [c[0] + t * bg.x, c[1] + t * bg.y, c[2] + t * bg.z],
                depth: d,
                trans: t,
                weights,
            });
        }
    }
    out
}

/// Relative error `‖a − b‖ / ‖b‖` of two gradient vectors.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let num: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den < 1e-14 {
        num
    } else {
        num / den
    }
}

/// Central finite difference of `f` over every scalar reachable by `access`.
pub fn central_diff<F, A>(gaussians: &[Gaussian3D], h: f64, count: usize, access: A, f: F) -> Vec<f64>
where
    F: Fn(&[Gaussian3D]) -> f64,
    A: Fn(&mut [Gaussian3D], usize) -> &mut f64,
{
    let mut out = Vec::with_capacity(count);
    let mut work = gaussians.to_vec();
    for k in 0..count {
        let orig = *access(&mut work, k);
        *access(&mut work, k) = orig + h;
        let fp = f(&work);
        *access(&mut work, k) = orig - h;
        let fm = f(&work);
        *access(&mut work, k) = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// Accessors for each parameter group, flattened per Gaussian.
pub fn mean_at(gs: &mut [Gaussian3D], k: usize) -> &mut f64 {
    &mut gs[k / 3].mean[k % 3]
}
pub fn log_scale_at(gs: &mut [Gaussian3D], k: usize) -> &mut f64 {
    &mut gs[k / 3].log_scale[k % 3]
}
pub fn color_at(gs: &mut [Gaussian3D], k: usize) -> &mut f64 {
    &mut gs[k / 3].color[k % 3]
}
pub fn opacity_at(gs: &mut [Gaussian3D], k: usize) -> &mut f64 {
    &mut gs[k].opacity_logit
}
pub fn rotation_at(gs: &mut [Gaussian3D], k: usize) -> &mut f64 {
    let q = &mut gs[k / 4].rotation;
    match k % 4 {
        0 => &mut q.w,
        1 => &mut q.i,
        2 => &mut q.j,
        _ => &mut q.k,
    }
}
pub fn feature_at(d: usize) -> impl Fn(&mut [Gaussian3D], usize) -> &mut f64 {
    move |gs: &mut [Gaussian3D], k: usize| &mut gs[k / d].feature[k % d]
}

/// Packs a render into a frame (f32), with features filled when present.
/// Depth is normalized by coverage and dropped below half coverage.
pub fn frame_from_render(out: &lfsplat::raster::RenderOutput, feature_dim: usize) -> lfsplat::Frame {
    let n = out.width * out.height;
    let feature = if out.feature.is_empty() {
        vec![0.0f32; n * feature_dim]
    } else {
        out.feature.iter().map(|&v| v as f32).collect()
    };
    lfsplat::Frame::new(
        0.0,
        out.width,
        out.height,
        feature_dim,
        out.color.iter().map(|&v| v as f32).collect(),
        // coverage-normalized, like a depth sensor
        out.depth
            .iter()
            .zip(&out.alpha)
            .map(|(&d, &a)| if a > 0.5 { (d / a) as f32 } else { 0.0 })
            .collect(),
        feature,
        None,
    )
    .unwrap()
}

/// Densely overlapping, randomly colored Gaussians filling the view of an
/// identity camera, at depths in `[1.5, 2.5]`.
pub fn textured_wall(seed: u64, per_side: usize) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..per_side {
        for j in 0..per_side {
            let x = -1.2 + 2.4 * (i as f64 + 0.5) / per_side as f64;
            let y = -1.2 + 2.4 * (j as f64 + 0.5) / per_side as f64;
            let z = 2.0 + 0.5 * (1.7 * x).sin() * (1.3 * y).cos();
            let s = 2.4 / per_side as f64 * rng.random_range(0.6..1.0);
            out.push(Gaussian3D::new(
                Vector3::new(x, y, z),
                Vector3::new(s, s, s * 0.3),
                UnitQuaternion::from_euler_angles(0.0, 0.0, rng.random_range(0.0..3.0)),
                0.95,
                Vector3::new(rng.random(), rng.random(), rng.random()),
                vec![1.0],
            ));
        }
    }
    out
}

/// Points on three mutually orthogonal, bounded planar patches plus a tilted
/// one, so that every pose component is constrained.
pub fn multi_plane_cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            match i % 4 {
                0 => Vector3::new(a * 2.0 - 1.0, b * 2.0 - 1.0, 0.0),
                1 => Vector3::new(-1.0, a * 2.0 - 1.0, b * 1.5),
                2 => Vector3::new(a * 2.0 - 1.0, 1.0, b * 1.5),
                _ => Vector3::new(0.3 + 0.4 * a, -0.5 + 0.4 * b, 0.2 + 0.5 * a),
            }
        })
        .collect()
}
