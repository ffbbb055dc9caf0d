use nalgebra::{Matrix3, Rotation3, SymmetricEigen, UnitQuaternion, Vector3};
use rand::Rng;

use super::optimizer::{LearningRates, OptimizerState};
use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::raster::RenderOutput;
use crate::scene::{Frame, Gaussian3D};
use crate::tracker::SourcePoint;

/// Opacity given to newly inserted Gaussians.
pub const INSERT_OPACITY: f64 = 0.5;

/// Shape of a new Gaussian from its source point: the regularized
/// covariance scaled so that in-plane extents equal the stride footprint.
/// Returns `(scale, camera-frame rotation)`.
pub fn insertion_shape(s: &SourcePoint) -> (Vector3<f64>, UnitQuaternion<f64>) {
    let eig = SymmetricEigen::new(s.covariance);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(f64::MIN_POSITIVE);
    let scale = Vector3::from_fn(|k, _| s.spacing * (eig.eigenvalues[order[k]].max(0.0) / top).sqrt().max(1e-3));
    let a = eig.eigenvectors.column(order[0]).into_owned();
    let b = eig.eigenvectors.column(order[1]).into_owned();
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[a, b, a.cross(&b)]));
    (scale, UnitQuaternion::from_rotation_matrix(&rot))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    pub frame: Frame,
    /// World-to-camera; refined in place.
    pub pose: Pose,
}

/// The Gaussian map with its keyframes and optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneMap {
    pub gaussians: Vec<Gaussian3D>,
    /// Bumped on every structural change (insertion, removal).
    pub generation: u64,
    pub keyframes: Vec<Keyframe>,
    pub feature_dim: usize,
    pub optimizer: OptimizerState,
}

impl SceneMap {
    pub fn new(feature_dim: usize, lr: LearningRates) -> Self {
        Self {
            gaussians: Vec::new(),
            generation: 0,
            keyframes: Vec::new(),
            feature_dim,
            optimizer: OptimizerState::new(lr, feature_dim),
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Appends Gaussians with fresh optimizer state.
    pub fn push_gaussians(&mut self, new: Vec<Gaussian3D>) -> Result<()> {
        if let Some(g) = new.iter().find(|g| g.feature.len() != self.feature_dim) {
            return Err(Error::Shape(format!(
                "gaussian feature has {} channels, map expects {}",
                g.feature.len(),
                self.feature_dim
            )));
        }
        if new.is_empty() {
            return Ok(());
        }
        self.optimizer.extend(new.len());
        self.gaussians.extend(new);
        self.generation += 1;
        Ok(())
    }

    /// Removes Gaussians whose `keep` flag is false, compacting the
    /// optimizer in lockstep.
    pub fn retain(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.gaussians.len());
        if keep.iter().all(|k| *k) {
            return;
        }
        let mut i = 0;
        self.gaussians.retain(|_| {
            i += 1;
            keep[i - 1]
        });
        self.optimizer.retain(keep);
        self.generation += 1;
    }
}

/// Inserts one Gaussian per source point whose correspondence distance is at
/// least `tau_insert`; returns how many were inserted.
///
/// `pose` is the world-to-camera pose the source points were observed from.
pub fn insert_gaussians(
    map: &mut SceneMap,
    source: &[SourcePoint],
    pose: &Pose,
    distances: &[f64],
    tau_insert: f64,
) -> Result<usize> {
    if source.len() != distances.len() {
        return Err(Error::Shape(format!(
            "{} source points but {} distances",
            source.len(),
            distances.len()
        )));
    }
    let cam_to_world = pose.inverse();
    let new: Vec<Gaussian3D> = source
        .iter()
        .zip(distances)
        .filter(|(_, &d)| d >= tau_insert)
        .map(|(s, _)| {
            let (scale, rot) = insertion_shape(s);
            let mut g = Gaussian3D::new(
                cam_to_world.transform_point(&s.position),
                scale,
                cam_to_world.rotation * rot,
                INSERT_OPACITY,
                s.color,
                s.feature.clone(),
            );
            g.normalize_feature();
            g
        })
        .collect();
    let n = new.len();
    map.push_gaussians(new)?;
    Ok(n)
}

/// Accumulates Top-K selection counts and running maximum contributions.
pub fn update_contribution_stats(map: &mut SceneMap, render: &RenderOutput) -> Result<()> {
    if render.generation != map.generation {
        return Err(Error::GenerationMismatch {
            render: render.generation,
            map: map.generation,
        });
    }
    render.topk.check_indices(map.gaussians.len())?;
    if render.contributions.len() != map.gaussians.len() {
        return Err(Error::Shape(format!(
            "render has {} contributions, map has {} gaussians",
            render.contributions.len(),
            map.gaussians.len()
        )));
    }
    for p in 0..render.topk.pixel_count() {
        for &g in render.topk.pixel(p).0 {
            map.gaussians[g as usize].topk_count += 1;
        }
    }
    for (g, &c) in map.gaussians.iter_mut().zip(&render.contributions) {
        if c > g.max_contribution {
            g.max_contribution = c;
        }
    }
    Ok(())
}

/// Indices of prune candidates: Top-K count at most `threshold`.
pub fn prune_candidates(gaussians: &[Gaussian3D], threshold: u64) -> Vec<usize> {
    (0..gaussians.len())
        .filter(|&i| gaussians[i].topk_count <= threshold)
        .collect()
}

/// Chooses which of the weighted items survive: `keep` items drawn without
/// replacement with probability proportional to weight (successive
/// sampling). Once positive mass is exhausted the remaining slots are filled
/// uniformly from zero-weight items. Returns a flag per item.
pub fn sample_survivors(weights: &[f64], keep: usize, rng: &mut impl Rng) -> Vec<bool> {
    // Exponential-key form: the items with the largest ln(u)/w are
    // distributed as successive proportional draws.
    let mut positive: Vec<(f64, usize)> = Vec::new();
    let mut zero: Vec<(f64, usize)> = Vec::new();
    for (i, &w) in weights.iter().enumerate() {
        let u: f64 = rng.random::<f64>();
        let u = u.max(f64::MIN_POSITIVE);
        if w > 0.0 {
            positive.push((u.ln() / w, i));
        } else {
            zero.push((u, i));
        }
    }
    let by_key_desc = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    positive.sort_by(by_key_desc);
    zero.sort_by(by_key_desc);
    let mut out = vec![false; weights.len()];
    for &(_, i) in positive.iter().chain(&zero).take(keep) {
        out[i] = true;
    }
    out
}

/// Two-stage pruning: low Top-K participation makes a Gaussian a candidate;
/// `⌈ratio·|candidates|⌉` candidates survive, sampled in proportion to their
/// normalized maximum contribution. Statistics of every remaining Gaussian
/// are reset. Returns the removed indices (ascending, pre-removal numbering).
pub fn prune_map(map: &mut SceneMap, ratio: f64, threshold: u64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "prune ratio must be in (0, 1], got {ratio}"
        )));
    }
    let candidates = prune_candidates(&map.gaussians, threshold);
    let mass: f64 = candidates.iter().map(|&i| map.gaussians[i].max_contribution).sum();
    let mut removed = Vec::new();
    if !candidates.is_empty() && mass > 0.0 {
        let keep_count = (ratio * candidates.len() as f64).ceil() as usize;
        let weights: Vec<f64> = candidates
            .iter()
            .map(|&i| map.gaussians[i].max_contribution / mass)
            .collect();
        let survive = sample_survivors(&weights, keep_count, rng);
        let mut keep = vec![true; map.gaussians.len()];
        for (&i, &s) in candidates.iter().zip(&survive) {
            if !s {
                keep[i] = false;
                removed.push(i);
            }
        }
        map.retain(&keep);
    }
    for g in &mut map.gaussians {
        g.topk_count = 0;
        g.max_contribution = 0.0;
    }
    Ok(removed)
}
