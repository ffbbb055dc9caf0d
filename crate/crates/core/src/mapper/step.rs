use rand::Rng;

use super::map::{prune_map, update_contribution_stats, SceneMap};
use crate::error::{Error, Result};
use crate::loss::{compute_losses, LossWeights};
use crate::raster::{
    backward_feature, backward_geometric_with_plan, render_feature, render_geometric_with_plan, RasterPlan,
    RenderSettings, Upstream,
};
use crate::scene::CameraIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    /// Features are optimized on iterations divisible by this.
    pub feature_update_period: usize,
    pub prune_period: usize,
    pub prune_ratio: f64,
    pub topk_count_threshold: u64,
    pub pruning_enabled: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            feature_update_period: 5,
            prune_period: 500,
            prune_ratio: 0.5,
            topk_count_threshold: 0,
            pruning_enabled: true,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.feature_update_period == 0 || self.prune_period == 0 {
            return Err(Error::InvalidArgument("schedule periods must be >= 1".into()));
        }
        if !(self.prune_ratio > 0.0 && self.prune_ratio <= 1.0) {
            return Err(Error::InvalidArgument("prune ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_feature_step(&self, iteration: u64) -> bool {
        iteration % self.feature_update_period as u64 == 0
    }

    pub fn is_prune_step(&self, iteration: u64) -> bool {
        self.pruning_enabled && iteration > 0 && iteration % self.prune_period as u64 == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub keyframe: usize,
    pub loss_map: f64,
    pub loss_geo: f64,
    /// Zero on iterations without the feature pass.
    pub loss_feat: f64,
    pub feature_step: bool,
    pub pruned: usize,
}

/// One mapping iteration on a uniformly sampled keyframe.
///
/// Geometry is updated every iteration; the feature pass and its update run
/// only on feature iterations. Contribution statistics are accumulated from
/// every render and pruning runs on prune iterations.
pub fn optimize_step(
    map: &mut SceneMap,
    cam: &CameraIntrinsics,
    settings: &RenderSettings,
    weights: &LossWeights,
    schedule: &Schedule,
    iteration: u64,
    rng: &mut impl Rng,
) -> Result<StepRecord> {
    if map.keyframes.is_empty() {
        return Err(Error::InvalidArgument(
            "optimize_step needs at least one keyframe".into(),
        ));
    }
    let k = rng.random_range(0..map.keyframes.len());
    let feature_step = schedule.is_feature_step(iteration);
    let (pose, plan) = {
        let kf = &map.keyframes[k];
        (kf.pose, RasterPlan::build(&map.gaussians, &kf.pose, cam, settings))
    };
    let mut out = render_geometric_with_plan(&plan, settings);
    out.generation = map.generation;
    if feature_step {
        out.feature = render_feature(&map.gaussians, &out.topk, map.feature_dim)?;
        out.feature_dim = map.feature_dim;
    }
    let losses = compute_losses(&out, &map.keyframes[k].frame, weights)?;
    let grads = backward_geometric_with_plan(
        &map.gaussians,
        &plan,
        &pose,
        cam,
        settings,
        Upstream::new(&losses.grad_color, &losses.grad_depth).with_alpha(&losses.grad_alpha),
    )?;
    let feat_grads = if feature_step {
        Some(backward_feature(
            &out.topk,
            &losses.grad_feature,
            map.gaussians.len(),
            map.feature_dim,
        )?)
    } else {
        None
    };
    update_contribution_stats(map, &out)?;
    let SceneMap {
        gaussians, optimizer, ..
    } = map;
    optimizer.step_geometry(gaussians, &grads);
    if let Some(fg) = feat_grads {
        optimizer.step_features(gaussians, &fg);
    }
    let pruned = if schedule.is_prune_step(iteration) {
        prune_map(map, schedule.prune_ratio, schedule.topk_count_threshold, rng)?.len()
    } else {
        0
    };
    Ok(StepRecord {
        iteration,
        keyframe: k,
        loss_map: if feature_step {
            losses.map
        } else {
            weights.lambda_geo * losses.geo
        },
        loss_geo: losses.geo,
        loss_feat: losses.feat,
        feature_step,
        pruned,
    })
}
