use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3, Vector6};
use rayon::prelude::*;

use super::{RasterPlan, RenderSettings};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::scene::{quat_to_matrix, CameraIntrinsics, Gaussian3D};

/// Parameter gradients of the geometric pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryGrads {
    pub mean: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    /// `(w, x, y, z)` components of the stored quaternion.
    pub rotation: Vec<[f64; 4]>,
    pub opacity_logit: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// Gradient w.r.t. a left-multiplied twist `(ω, v)` on the
    /// world-to-camera pose.
    pub pose: Vector6<f64>,
}

impl GeometryGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            opacity_logit: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            pose: Vector6::zeros(),
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct SplatGrad {
    mean2d: [f64; 2],
    /// w.r.t. conic `(a, b, c)`, with `b` counted once.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.mean2d[0] += o.mean2d[0];
        self.mean2d[1] += o.mean2d[1];
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.opacity += o.opacity;
        self.depth += o.depth;
    }
}

/// Upstream gradients of a loss w.r.t. the rendered geometric images.
#[derive(Debug, Clone, Copy)]
pub struct Upstream<'a> {
    /// `H·W·3`.
    pub color: &'a [f64],
    /// `H·W`.
    pub depth: &'a [f64],
    /// `H·W` w.r.t. accumulated opacity `1 − T_final`; empty means zero.
    pub alpha: &'a [f64],
}

impl<'a> Upstream<'a> {
    pub fn new(color: &'a [f64], depth: &'a [f64]) -> Self {
        Self {
            color,
            depth,
            alpha: &[],
        }
    }

    pub fn with_alpha(self, alpha: &'a [f64]) -> Self {
        Self { alpha, ..self }
    }
}

/// Reverse of the alpha-blended color/depth pass.
pub fn backward_geometric(
    gaussians: &[Gaussian3D],
    pose: &Pose,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    upstream: Upstream,
) -> Result<GeometryGrads> {
    let plan = RasterPlan::build(gaussians, pose, cam, settings);
    backward_geometric_with_plan(gaussians, &plan, pose, cam, settings, upstream)
}

pub fn backward_geometric_with_plan(
    gaussians: &[Gaussian3D],
    plan: &RasterPlan,
    pose: &Pose,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    upstream: Upstream,
) -> Result<GeometryGrads> {
    let n = plan.width * plan.height;
    let Upstream { color, depth, alpha } = upstream;
    if color.len() != n * 3 || depth.len() != n || !(alpha.is_empty() || alpha.len() == n) {
        return Err(Error::Shape(format!(
            "upstream gradients: color {}, depth {}, alpha {}, image has {n} pixels",
            color.len(),
            depth.len(),
            alpha.len()
        )));
    }
    if plan.gaussian_count != gaussians.len() {
        return Err(Error::StaleIndex {
            index: plan.gaussian_count,
            len: gaussians.len(),
        });
    }

    let tiles: Vec<Vec<SplatGrad>> = (0..plan.tile_count())
        .into_par_iter()
        .map(|t| backward_tile(plan, t, settings, &upstream))
        .collect();

    // merged in tile order for run-to-run determinism
    let mut screen = vec![SplatGrad::default(); plan.splats.len()];
    for (t, local) in tiles.iter().enumerate() {
        for (&s, g) in plan.tile_list(t).iter().zip(local) {
            screen[s as usize].add(g);
        }
    }

    let w = pose.rotation_matrix();
    let per_splat: Vec<SplatParamGrad> = screen
        .par_iter()
        .enumerate()
        .map(|(s, sg)| chain_to_params(&gaussians[plan.splats[s].gaussian as usize], plan, s, sg, &w, cam))
        .collect();

    let mut grads = GeometryGrads::zeros(gaussians.len());
    for (s, pg) in per_splat.iter().enumerate() {
        let i = plan.splats[s].gaussian as usize;
        grads.mean[i] += pg.mean;
        grads.log_scale[i] += pg.log_scale;
        for c in 0..4 {
            grads.rotation[i][c] += pg.rotation[c];
        }
        grads.opacity_logit[i] += pg.opacity_logit;
        grads.color[i] += pg.color;
        grads.pose += pg.pose;
    }
    Ok(grads)
}

struct Contributor {
    entry: usize,
    alpha: f64,
    trans: f64,
    falloff: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

fn backward_tile(plan: &RasterPlan, t: usize, settings: &RenderSettings, up: &Upstream) -> Vec<SplatGrad> {
    let list = plan.tile_list(t);
    let mut local = vec![SplatGrad::default(); list.len()];
    if list.is_empty() {
        return local;
    }
    let (x0, x1, y0, y1) = plan.tile_rect(t);
    let bg = settings.background;
    let mut contributors: Vec<Contributor> = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let p = y * plan.width + x;
            let gc = [up.color[p * 3], up.color[p * 3 + 1], up.color[p * 3 + 2]];
            let gd = up.depth[p];
            let ga = up.alpha.get(p).copied().unwrap_or(0.0);
            if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                continue;
            }
            // replay the forward traversal
            contributors.clear();
            let mut trans = 1.0;
            for (j, &s) in list.iter().enumerate() {
                let sp = &plan.splats[s as usize];
                let Some(hit) = sp.hit(x as f64, y as f64, settings) else {
                    continue;
                };
                contributors.push(Contributor {
                    entry: j,
                    alpha: hit.alpha,
                    trans,
                    falloff: hit.falloff,
                    clamped: hit.clamped,
                    dx: hit.dx,
                    dy: hit.dy,
                });
                trans *= 1.0 - hit.alpha;
                if trans < settings.transmittance_floor {
                    break;
                }
            }

            // suffix = Σ_{later} w·(gc·c + gd·z + ga) + T_final·(gc·bg)
            let mut suffix = trans * (gc[0] * bg.x + gc[1] * bg.y + gc[2] * bg.z);
            for c in contributors.iter().rev() {
                let sp = &plan.splats[list[c.entry] as usize];
                let dot = gc[0] * sp.color[0] + gc[1] * sp.color[1] + gc[2] * sp.color[2] + gd * sp.depth + ga;
                let w = c.alpha * c.trans;
                let g = &mut local[c.entry];
                g.color[0] += gc[0] * w;
                g.color[1] += gc[1] * w;
                g.color[2] += gc[2] * w;
                g.depth += gd * w;
                let d_alpha = c.trans * dot - suffix / (1.0 - c.alpha);
                suffix += w * dot;
                if c.clamped {
                    continue;
                }
                g.opacity += d_alpha * c.falloff;
                let d_power = d_alpha * sp.opacity * c.falloff;
                let [a, b, cc] = sp.conic;
                g.mean2d[0] += d_power * (a * c.dx + b * c.dy);
                g.mean2d[1] += d_power * (b * c.dx + cc * c.dy);
                g.conic[0] += d_power * (-0.5 * c.dx * c.dx);
                g.conic[1] += d_power * (-c.dx * c.dy);
                g.conic[2] += d_power * (-0.5 * c.dy * c.dy);
            }
        }
    }
    local
}

struct SplatParamGrad {
    mean: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
    color: Vector3<f64>,
    pose: Vector6<f64>,
}

fn chain_to_params(
    g: &Gaussian3D,
    plan: &RasterPlan,
    s: usize,
    sg: &SplatGrad,
    w: &Matrix3<f64>,
    cam: &CameraIntrinsics,
) -> SplatParamGrad {
    let sp = &plan.splats[s];
    let proj = &plan.projected[s];
    let p = proj.mean_cam;
    let jac: Matrix2x3<f64> = proj.jacobian;
    let sigma_c = proj.cov_cam;

    // conic → 2D covariance, as full symmetric matrices
    let [a, b, c] = sp.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let g_cov2d = -(conic * g_conic * conic);

    // cov2d = J Σc Jᵀ + δI
    let g_sigma_c: Matrix3<f64> = jac.transpose() * g_cov2d * jac;
    let g_jac: Matrix2x3<f64> = 2.0 * g_cov2d * jac * sigma_c;

    // camera-space mean: through mean2d, J and depth
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut g_p = Vector3::new(
        fx * iz * sg.mean2d[0],
        fy * iz * sg.mean2d[1],
        -fx * p.x * iz2 * sg.mean2d[0] - fy * p.y * iz2 * sg.mean2d[1] + sg.depth,
    );
    g_p.x += g_jac[(0, 2)] * (-fx * iz2);
    g_p.y += g_jac[(1, 2)] * (-fy * iz2);
    g_p.z += g_jac[(0, 0)] * (-fx * iz2)
        + g_jac[(0, 2)] * (2.0 * fx * p.x * iz2 * iz)
        + g_jac[(1, 1)] * (-fy * iz2)
        + g_jac[(1, 2)] * (2.0 * fy * p.y * iz2 * iz);

    // pose twist (ω, v), left-multiplied on world-to-camera
    let m = sigma_c * g_sigma_c - g_sigma_c * sigma_c;
    let vee = Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]);
    let g_omega = p.cross(&g_p) - 2.0 * vee;
    let pose = Vector6::new(g_omega.x, g_omega.y, g_omega.z, g_p.x, g_p.y, g_p.z);

    // world parameters
    let mean = w.transpose() * g_p;
    let g_sigma = w.transpose() * g_sigma_c * w;
    let r = quat_to_matrix(&g.rotation);
    let scale = g.scale();
    let mmat = r * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_sigma * mmat;
    let mut log_scale = Vector3::zeros();
    let mut g_r = Matrix3::zeros();
    for k in 0..3 {
        let mut gs = 0.0;
        for row in 0..3 {
            gs += g_m[(row, k)] * r[(row, k)];
            g_r[(row, k)] = g_m[(row, k)] * scale[k];
        }
        log_scale[k] = gs * scale[k];
    }
    let rotation = quat_grad(&g.rotation, &g_r);

    let op = sp.opacity;
    SplatParamGrad {
        mean,
        log_scale,
        rotation,
        opacity_logit: sg.opacity * op * (1.0 - op),
        color: Vector3::new(sg.color[0], sg.color[1], sg.color[2]),
        pose,
    }
}

/// Pulls a rotation-matrix gradient back to raw quaternion components,
/// including the normalization.
fn quat_grad(q: &nalgebra::Quaternion<f64>, g_r: &Matrix3<f64>) -> [f64; 4] {
    let norm = q.norm();
    let (w, x, y, z) = (q.w / norm, q.i / norm, q.j / norm, q.k / norm);
    let dot = |m: [[f64; 3]; 3]| -> f64 {
        let mut s = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                s += m[r][c] * g_r[(r, c)];
            }
        }
        s
    };
    let gw = dot([
        [0.0, -2.0 * z, 2.0 * y],
        [2.0 * z, 0.0, -2.0 * x],
        [-2.0 * y, 2.0 * x, 0.0],
    ]);
    let gx = dot([
        [0.0, 2.0 * y, 2.0 * z],
        [2.0 * y, -4.0 * x, -2.0 * w],
        [2.0 * z, 2.0 * w, -4.0 * x],
    ]);
    let gy = dot([
        [-4.0 * y, 2.0 * x, 2.0 * w],
        [2.0 * x, 0.0, 2.0 * z],
        [-2.0 * w, 2.0 * z, -4.0 * y],
    ]);
    let gz = dot([
        [-4.0 * z, -2.0 * w, 2.0 * x],
        [2.0 * w, -4.0 * z, 2.0 * y],
        [2.0 * x, 2.0 * y, 0.0],
    ]);
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let proj: f64 = gn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gn[i] - qn[i] * proj) / norm;
    }
    out
}
