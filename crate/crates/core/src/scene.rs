//! Map primitives, camera model, observations and per-Gaussian projection.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::pose::Pose;

/// Default low-pass dilation added to the diagonal of every projected
/// covariance, in px².
pub const COV2D_DILATION: f64 = 0.3;

/// Label id marking pixels without a class.
pub const LABEL_INVALID: u8 = 255;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a (not necessarily normalized) quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Quaternion<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q.w / n, q.i / n, q.j / n, q.k / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// One map primitive.
///
/// Scale is stored as log-scale and opacity as a logit so that unconstrained
/// optimizer updates keep the covariance positive definite and the opacity in
/// `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, i, j, k)`; kept at unit norm by the optimizer.
    pub rotation: Quaternion<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    pub feature: Vec<f64>,
    /// Times selected into a per-pixel Top-K set since the last prune.
    pub topk_count: u64,
    /// Running maximum of the blending weight since the last prune.
    pub max_contribution: f64,
}

impl Gaussian3D {
    pub fn new(
        mean: Vector3<f64>,
        scale: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        opacity: f64,
        color: Vector3<f64>,
        feature: Vec<f64>,
    ) -> Self {
        Self {
            mean,
            log_scale: scale.map(f64::ln),
            rotation: rotation.into_inner(),
            opacity_logit: logit(opacity),
            color,
            feature,
            topk_count: 0,
            max_contribution: 0.0,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&self.rotation)
    }

    /// World-space covariance `R·diag(s²)·Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let m = r * Matrix3::from_diagonal(&s);
        m * m.transpose()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.len()
    }

    /// Rescales the feature to unit length; a zero feature is left untouched.
    pub fn normalize_feature(&mut self) {
        let n = self.feature.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            self.feature.iter_mut().for_each(|v| *v /= n);
        }
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation /= n;
        } else {
            self.rotation = Quaternion::identity();
        }
    }
}

/// Pinhole intrinsics; pixel `(u, v)` has its center at coordinate `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize, near: f64, far: f64) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidArgument("focal lengths must be positive".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidArgument("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image must be non-empty".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Half-angle tangents beyond which a Gaussian mean is culled.
    pub fn guard_band(&self) -> (f64, f64) {
        let hx = self.cx.max(self.width as f64 - 1.0 - self.cx) + 0.5;
        let hy = self.cy.max(self.height as f64 - 1.0 - self.cy) + 0.5;
        (1.3 * hx / self.fx, 1.3 * hy / self.fy)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(depth * (u - self.cx) / self.fx, depth * (v - self.cy) / self.fy, depth)
    }
}

/// One timestamped RGB-D + feature observation.
///
/// Images are row-major; `color` is `H·W·3`, `depth` is `H·W` (0 = invalid),
/// `feature` is `H·W·D` (zero vector = invalid).
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    pub color: Vec<f32>,
    pub depth: Vec<f32>,
    pub feature: Vec<f32>,
    pub label: Option<Vec<u8>>,
}

impl Frame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        timestamp: f64,
        width: usize,
        height: usize,
        feature_dim: usize,
        color: Vec<f32>,
        depth: Vec<f32>,
        feature: Vec<f32>,
        label: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = width * height;
        if color.len() != n * 3 || depth.len() != n || feature.len() != n * feature_dim {
            return Err(Error::Shape(format!(
                "frame {width}x{height} D={feature_dim}: color {}, depth {}, feature {}",
                color.len(),
                depth.len(),
                feature.len()
            )));
        }
        if let Some(l) = &label {
            if l.len() != n {
                return Err(Error::Shape(format!("label has {} pixels, expected {n}", l.len())));
            }
        }
        Ok(Self {
            timestamp,
            width,
            height,
            feature_dim,
            color,
            depth,
            feature,
            label,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn feature_at(&self, pixel: usize) -> &[f32] {
        &self.feature[pixel * self.feature_dim..(pixel + 1) * self.feature_dim]
    }

    pub fn color_at(&self, pixel: usize) -> [f32; 3] {
        let c = &self.color[pixel * 3..pixel * 3 + 3];
        [c[0], c[1], c[2]]
    }

    pub fn feature_valid(&self, pixel: usize) -> bool {
        self.feature_at(pixel).iter().any(|v| *v != 0.0)
    }
}

/// A Gaussian projected into one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Camera-space z of the mean.
    pub depth: f64,
    pub visible: bool,
    /// Camera-space mean.
    pub mean_cam: Vector3<f64>,
    /// Camera-space 3D covariance `W·Σ·Wᵀ`.
    pub cov_cam: Matrix3<f64>,
    /// Projection Jacobian at the mean.
    pub jacobian: Matrix2x3<f64>,
}

impl Projected2D {
    fn hidden(mean_cam: Vector3<f64>) -> Self {
        Self {
            mean2d: Vector2::zeros(),
            cov2d: Matrix2::zeros(),
            depth: mean_cam.z,
            visible: false,
            mean_cam,
            cov_cam: Matrix3::zeros(),
            jacobian: Matrix2x3::zeros(),
        }
    }
}

/// Perspective Jacobian of `p ↦ (fx·x/z + cx, fy·y/z + cy)`.
#[inline]
pub fn projection_jacobian(cam: &CameraIntrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * p.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * p.y * iz * iz,
    )
}

/// EWA projection with the default dilation.
pub fn project_gaussian(g: &Gaussian3D, pose: &Pose, cam: &CameraIntrinsics) -> Projected2D {
    project_gaussian_with(g, pose, cam, COV2D_DILATION)
}

/// EWA projection: `cov2d = J·W·Σ·Wᵀ·Jᵀ + dilation·I`.
pub fn project_gaussian_with(g: &Gaussian3D, pose: &Pose, cam: &CameraIntrinsics, dilation: f64) -> Projected2D {
    let mean_cam = pose.transform_point(&g.mean);
    if !(mean_cam.z > cam.near && mean_cam.z < cam.far) {
        return Projected2D::hidden(mean_cam);
    }
    // guard band of 1.3x the field of view: near-plane Gaussians far outside
    // the view would otherwise project to enormous splats
    let (lim_x, lim_y) = cam.guard_band();
    if (mean_cam.x / mean_cam.z).abs() > lim_x || (mean_cam.y / mean_cam.z).abs() > lim_y {
        return Projected2D::hidden(mean_cam);
    }
    let w = pose.rotation_matrix();
    let cov_cam = w * g.covariance() * w.transpose();
    let jacobian = projection_jacobian(cam, &mean_cam);
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    // exact symmetry
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    cov2d[(0, 0)] += dilation;
    cov2d[(1, 1)] += dilation;
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - off * off;
    Projected2D {
        mean2d: cam.project(&mean_cam),
        cov2d,
        depth: mean_cam.z,
        visible: det > 0.0 && cov2d[(0, 0)] > 0.0,
        mean_cam,
        cov_cam,
        jacobian,
    }
}
