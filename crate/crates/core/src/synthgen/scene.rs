use nalgebra::{DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::Gaussian3D;

pub const DEFAULT_CLASS_NAMES: [&str; 4] = ["floor", "wall", "ceiling", "box"];

/// Parameters of the generated box room (z up, floor at z = 0).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Room extent along x, y, z.
    pub room: Vector3<f64>,
    pub class_count: usize,
    pub feature_dim: usize,
    /// Grid spacing of the Gaussians tiling each surface.
    pub spacing: f64,
    /// Footprint of the box standing on the floor (size x, y, z).
    pub object_size: Vector3<f64>,
    /// Floor-plane center of the box, relative to the room center.
    pub object_offset: (f64, f64),
    pub opacity: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room: Vector3::new(4.0, 4.0, 2.5),
            class_count: 4,
            feature_dim: 16,
            spacing: 0.08,
            object_size: Vector3::new(0.8, 0.6, 0.7),
            object_offset: (0.3, -0.2),
            opacity: 0.98,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub gaussians: Vec<Gaussian3D>,
    /// Class id per Gaussian.
    pub classes: Vec<u8>,
    /// `C` mutually orthogonal unit vectors of length `D`, f32-representable.
    pub class_embeddings: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
    /// The analytic rectangles the Gaussians tile.
    pub surfaces: Vec<Surface>,
}

impl SyntheticScene {
    pub fn room_center(&self) -> Vector3<f64> {
        self.spec.room / 2.0
    }

    pub fn room_diagonal(&self) -> f64 {
        self.spec.room.norm()
    }
}

/// A planar rectangle `origin + a·u + b·v`, `a, b ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub origin: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub class: usize,
    pub color: Vector3<f64>,
}

impl Surface {
    /// Ray parameter `t > t_min` where `origin + t·dir` hits the rectangle.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<f64> {
        let n = self.u.cross(&self.v);
        let denom = n.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = n.dot(&(self.origin - origin)) / denom;
        if !(t > t_min) {
            return None;
        }
        let q = origin + dir * t - self.origin;
        let a = q.dot(&self.u) / self.u.norm_squared();
        let b = q.dot(&self.v) / self.v.norm_squared();
        ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some(t)
    }
}

/// `C` orthonormal vectors in `R^D` (Gram-Schmidt on seeded Gaussian draws),
/// rounded to f32 so that features stored on disk are exact.
pub fn class_embeddings(class_count: usize, feature_dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if feature_dim < class_count {
        return Err(Error::FeatureDimTooSmall {
            dim: feature_dim,
            classes: class_count,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a5);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(class_count);
    while basis.len() < class_count {
        let mut v = DVector::from_fn(feature_dim, |_, _| StandardNormal.sample(&mut rng));
        for b in &basis {
            let d = b.dot(&v);
            v -= b * d;
        }
        let n = v.norm();
        if n > 1e-6 {
            basis.push(v / n);
        }
    }
    Ok(basis
        .into_iter()
        .map(|v| v.iter().map(|&x| x as f32 as f64).collect())
        .collect())
}

pub fn build_synthetic_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    if spec.class_count == 0 || spec.class_count > 255 {
        return Err(Error::InvalidArgument("class count must be in 1..=255".into()));
    }
    if !(spec.spacing > 0.0) || spec.room.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "room extent and spacing must be positive".into(),
        ));
    }
    let embeddings = class_embeddings(spec.class_count, spec.feature_dim, spec.seed)?;
    let class_names = (0..spec.class_count)
        .map(|c| {
            DEFAULT_CLASS_NAMES
                .get(c)
                .map_or_else(|| format!("class{c}"), |s| s.to_string())
        })
        .collect();
    let r = spec.room;
    let c = spec.class_count;
    let x = Vector3::x();
    let y = Vector3::y();
    let z = Vector3::z();
    let mut surfaces = vec![
        Surface {
            origin: Vector3::zeros(),
            u: x * r.x,
            v: y * r.y,
            class: 0,
            color: Vector3::new(0.55, 0.45, 0.35),
        },
        Surface {
            origin: Vector3::new(0.0, 0.0, r.z),
            u: x * r.x,
            v: y * r.y,
            class: 2,
            color: Vector3::new(0.9, 0.9, 0.86),
        },
        Surface {
            origin: Vector3::zeros(),
            u: x * r.x,
            v: z * r.z,
            class: 1,
            color: Vector3::new(0.75, 0.7, 0.6),
        },
        Surface {
            origin: Vector3::new(0.0, r.y, 0.0),
            u: x * r.x,
            v: z * r.z,
            class: 1,
            color: Vector3::new(0.6, 0.7, 0.78),
        },
        Surface {
            origin: Vector3::zeros(),
            u: y * r.y,
            v: z * r.z,
            class: 1,
            color: Vector3::new(0.72, 0.6, 0.7),
        },
        Surface {
            origin: Vector3::new(r.x, 0.0, 0.0),
            u: y * r.y,
            v: z * r.z,
            class: 1,
            color: Vector3::new(0.62, 0.74, 0.58),
        },
    ];
    let s = spec.object_size;
    let lo = Vector3::new(
        r.x / 2.0 + spec.object_offset.0 - s.x / 2.0,
        r.y / 2.0 + spec.object_offset.1 - s.y / 2.0,
        0.0,
    );
    let box_color = Vector3::new(0.8, 0.25, 0.2);
    let box_faces = [
        (lo + z * s.z, x * s.x, y * s.y),
        (lo, x * s.x, z * s.z),
        (lo + y * s.y, x * s.x, z * s.z),
        (lo, y * s.y, z * s.z),
        (lo + x * s.x, y * s.y, z * s.z),
    ];
    for (origin, u, v) in box_faces {
        surfaces.push(Surface {
            origin,
            u,
            v,
            class: 3,
            color: box_color,
        });
    }

    let mut gaussians = Vec::new();
    let mut classes = Vec::new();
    for surf in surfaces.iter_mut() {
        surf.class %= c;
    }
    for surf in &surfaces {
        let class = surf.class;
        let (lu, lv) = (surf.u.norm(), surf.v.norm());
        let (du, dv) = (surf.u / lu, surf.v / lv);
        let n = du.cross(&dv);
        let rot = nalgebra::Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[du, dv, n]));
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
        let nu = (lu / spec.spacing).round().max(1.0) as usize;
        let nv = (lv / spec.spacing).round().max(1.0) as usize;
        let (su, sv) = (lu / nu as f64, lv / nv as f64);
        let scale = Vector3::new(0.6 * su, 0.6 * sv, 0.05 * su.min(sv));
        for i in 0..nu {
            for j in 0..nv {
                let mean = surf.origin + du * (su * (i as f64 + 0.5)) + dv * (sv * (j as f64 + 0.5));
                gaussians.push(Gaussian3D::new(
                    mean,
                    scale,
                    q,
                    spec.opacity,
                    surf.color,
                    embeddings[class].clone(),
                ));
                classes.push(class as u8);
            }
        }
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        gaussians,
        classes,
        class_embeddings: embeddings,
        class_names,
        surfaces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Circle around the room center looking inward.
    Orbit,
    /// Serpentine sweep between opposite corners with a fixed view direction.
    Lawnmower,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    /// Number of full circles for an orbit; >1 revisits viewpoints.
    pub laps: usize,
    pub radius: f64,
    pub eye_height: f64,
    pub target_height: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::Orbit,
            frames: 100,
            laps: 1,
            radius: 1.2,
            eye_height: 1.3,
            target_height: 0.5,
        }
    }
}

/// Camera poses (world-to-camera) along the requested path.
pub fn generate_trajectory(scene: &SyntheticScene, spec: &TrajectorySpec) -> Result<Vec<Pose>> {
    let n = spec.frames;
    if n < 2 {
        return Err(Error::InvalidArgument("a trajectory needs at least 2 frames".into()));
    }
    let r = scene.spec.room;
    let center = scene.room_center();
    let up = Vector3::z();
    let poses = match spec.kind {
        TrajectoryKind::Orbit => {
            let laps = spec.laps.max(1) as f64;
            (0..n)
                .map(|k| {
                    let theta = 2.0 * std::f64::consts::PI * laps * k as f64 / n as f64;
                    let eye = Vector3::new(
                        center.x + spec.radius * theta.cos(),
                        center.y + spec.radius * theta.sin(),
                        spec.eye_height,
                    );
                    let target = Vector3::new(center.x, center.y, spec.target_height);
                    Pose::look_at(&eye, &target, &up).inverse()
                })
                .collect()
        }
        TrajectoryKind::Lawnmower => {
            let margin = 0.2 * r.x.min(r.y);
            let (x0, x1) = (margin, r.x - margin);
            let (y0, y1) = (margin, r.y - margin);
            let rows = 3usize;
            // serpentine polyline through the row endpoints
            let mut corners = Vec::new();
            for row in 0..rows {
                let y = y0 + (y1 - y0) * row as f64 / (rows - 1) as f64;
                if row % 2 == 0 {
                    corners.push(Vector3::new(x0, y, spec.eye_height));
                    corners.push(Vector3::new(x1, y, spec.eye_height));
                } else {
                    corners.push(Vector3::new(x1, y, spec.eye_height));
                    corners.push(Vector3::new(x0, y, spec.eye_height));
                }
            }
            let seg: Vec<f64> = corners.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
            let total: f64 = seg.iter().sum();
            let view = Vector3::new(0.6, 0.8, -0.45).normalize();
            (0..n)
                .map(|k| {
                    let mut s = total * k as f64 / (n - 1) as f64;
                    let mut i = 0;
                    while i + 1 < seg.len() && s > seg[i] {
                        s -= seg[i];
                        i += 1;
                    }
                    let t = if seg[i] > 0.0 { (s / seg[i]).min(1.0) } else { 0.0 };
                    let eye = corners[i] + (corners[i + 1] - corners[i]) * t;
                    Pose::look_at(&eye, &(eye + view), &up).inverse()
                })
                .collect()
        }
    };
    Ok(poses)
}
