use nalgebra::Vector6;

use crate::error::Result;
use crate::loss::{geometric_loss, LossWeights};
use crate::pose::Pose;
use crate::raster::{backward_geometric_with_plan, render_geometric_with_plan, RasterPlan, RenderSettings, Upstream};
use crate::scene::{CameraIntrinsics, Frame, Gaussian3D};

#[derive(Debug, Clone, PartialEq)]
pub struct RefineParams {
    pub iterations: usize,
    /// Twist norm of the first trial step.
    pub initial_step: f64,
    pub max_halvings: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            iterations: 20,
            initial_step: 1e-3,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// World-to-camera.
    pub pose: Pose,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub accepted_steps: usize,
}

/// Geometric loss of the map rendered at `pose` against `frame`.
pub fn pose_loss(
    gaussians: &[Gaussian3D],
    frame: &Frame,
    cam: &CameraIntrinsics,
    pose: &Pose,
    settings: &RenderSettings,
    weights: &LossWeights,
) -> Result<f64> {
    let plan = RasterPlan::build(gaussians, pose, cam, settings);
    let out = render_geometric_with_plan(&plan, settings);
    Ok(geometric_loss(&out, frame, weights)?.loss)
}

/// Gradient of [`pose_loss`] with respect to a left twist `(ω, v)` on the
/// world-to-camera pose, together with the loss itself.
pub fn pose_loss_gradient(
    gaussians: &[Gaussian3D],
    frame: &Frame,
    cam: &CameraIntrinsics,
    pose: &Pose,
    settings: &RenderSettings,
    weights: &LossWeights,
) -> Result<(f64, Vector6<f64>)> {
    let plan = RasterPlan::build(gaussians, pose, cam, settings);
    let out = render_geometric_with_plan(&plan, settings);
    let l = geometric_loss(&out, frame, weights)?;
    let up = Upstream::new(&l.grad_color, &l.grad_depth).with_alpha(&l.grad_alpha);
    let grads = backward_geometric_with_plan(gaussians, &plan, pose, cam, settings, up)?;
    Ok((l.loss, grads.pose))
}

/// Normalized gradient descent on the geometric loss over the camera pose,
/// map frozen. Steps are accepted only on strict decrease, so the returned
/// loss never exceeds the initial one.
pub fn refine_pose_photometric(
    gaussians: &[Gaussian3D],
    frame: &Frame,
    cam: &CameraIntrinsics,
    pose: &Pose,
    settings: &RenderSettings,
    weights: &LossWeights,
    params: &RefineParams,
) -> Result<RefineResult> {
    let mut current = *pose;
    let (initial_loss, mut grad) = pose_loss_gradient(gaussians, frame, cam, &current, settings, weights)?;
    let mut loss = initial_loss;
    let mut step = params.initial_step;
    let mut accepted_steps = 0;
    for _ in 0..params.iterations {
        let norm = grad.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        let dir = -grad / norm;
        let mut accepted = None;
        for _ in 0..=params.max_halvings {
            let candidate = current.perturbed(&(dir * step));
            let (l, g) = pose_loss_gradient(gaussians, frame, cam, &candidate, settings, weights)?;
            if l < loss {
                accepted = Some((candidate, l, g));
                step *= 1.5;
                break;
            }
            step *= 0.5;
        }
        if accepted.is_none() {
            // The loss is piecewise smooth; at a kink the negative gradient
            // need not descend, so probe the twist axes directly.
            step = params.initial_step;
            accepted = coordinate_probe(gaussians, frame, cam, &current, loss, step, settings, weights)?;
        }
        let Some((candidate, l, g)) = accepted else {
            break;
        };
        current = candidate;
        loss = l;
        grad = g;
        accepted_steps += 1;
    }
    Ok(RefineResult {
        pose: current,
        initial_loss,
        final_loss: loss,
        accepted_steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn coordinate_probe(
    gaussians: &[Gaussian3D],
    frame: &Frame,
    cam: &CameraIntrinsics,
    pose: &Pose,
    loss: f64,
    step: f64,
    settings: &RenderSettings,
    weights: &LossWeights,
) -> Result<Option<(Pose, f64, Vector6<f64>)>> {
    let mut best: Option<(Pose, f64)> = None;
    for scale in [1.0, 0.25, 0.0625] {
        for k in 0..6 {
            for sign in [1.0, -1.0] {
                let mut twist = Vector6::zeros();
                twist[k] = sign * step * scale;
                let candidate = pose.perturbed(&twist);
                let l = pose_loss(gaussians, frame, cam, &candidate, settings, weights)?;
                if l < best.as_ref().map_or(loss, |b| b.1) {
                    best = Some((candidate, l));
                }
            }
        }
        if best.is_some() {
            break;
        }
    }
    match best {
        Some((p, _)) => {
            let (l, g) = pose_loss_gradient(gaussians, frame, cam, &p, settings, weights)?;
            Ok(Some((p, l, g)))
        }
        None => Ok(None),
    }
}
