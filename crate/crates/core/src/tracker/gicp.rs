use std::collections::HashMap;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::source::{estimate_covariances, SourcePoint, PLANE_EPSILON};
use crate::error::{Error, Result};
use crate::pose::{skew, Pose};
use crate::scene::Gaussian3D;

#[derive(Debug, Clone, PartialEq)]
pub struct GicpParams {
    /// Correspondence gate (scene units); also the voxel size of the index.
    pub tau_corr: f64,
    /// Distance below which a source point counts as overlapping the map.
    pub tau_overlap: f64,
    pub max_iterations: usize,
    /// Stop once the accepted update norm falls below this.
    pub update_tolerance: f64,
    pub min_correspondences: usize,
    /// Neighbors used for target covariances.
    pub knn: usize,
    pub step_halving: bool,
}

impl Default for GicpParams {
    fn default() -> Self {
        Self {
            tau_corr: 0.1,
            tau_overlap: 0.05,
            max_iterations: 30,
            update_tolerance: 1e-6,
            min_correspondences: 10,
            knn: 10,
            step_halving: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// World-to-camera.
    pub pose: Pose,
    /// Per source point, distance to the nearest map mean under `pose`;
    /// `+∞` when nothing lies within the correspondence gate.
    pub correspondence_distances: Vec<f64>,
    pub overlap_ratio: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Per accepted iteration, the G-ICP cost before and after the step under
    /// that iteration's correspondences.
    pub cost_trace: Vec<(f64, f64)>,
}

/// Uniform voxel hash over points; exact nearest neighbor within one cell
/// size of the query.
#[derive(Debug, Clone)]
pub struct VoxelIndex {
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl VoxelIndex {
    pub fn new(points: &[Vector3<f64>], cell: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, cells }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Nearest point with distance `<= max_dist` (`max_dist` at most the cell
    /// size). Ties go to the lower index.
    pub fn nearest(&self, points: &[Vector3<f64>], q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        debug_assert!(max_dist <= self.cell * (1.0 + 1e-12));
        let k = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let limit = max_dist * max_dist;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) else {
                        continue;
                    };
                    for &i in list {
                        let d2 = (points[i as usize] - q).norm_squared();
                        if d2 > limit {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bd)) => d2 < bd || (d2 == bd && (i as usize) < bi),
                        };
                        if better {
                            best = Some((i as usize, d2));
                        }
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }
}

/// Map-side data for G-ICP: means, plane-regularized covariances and the
/// voxel index. Build once per map snapshot.
#[derive(Debug, Clone)]
pub struct TrackingTarget {
    pub means: Vec<Vector3<f64>>,
    pub covariances: Vec<Matrix3<f64>>,
    index: VoxelIndex,
    cell: f64,
}

impl TrackingTarget {
    pub fn from_gaussians(gaussians: &[Gaussian3D], params: &GicpParams) -> Result<Self> {
        let means: Vec<Vector3<f64>> = gaussians.iter().map(|g| g.mean).collect();
        Self::from_points(means, params)
    }

    pub fn from_points(means: Vec<Vector3<f64>>, params: &GicpParams) -> Result<Self> {
        if !(params.tau_corr > 0.0) {
            return Err(Error::InvalidArgument("tau_corr must be positive".into()));
        }
        let covariances = if means.len() >= 2 {
            estimate_covariances(&means, params.knn.min(means.len() - 1))?
        } else {
            vec![Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, PLANE_EPSILON)); means.len()]
        };
        let index = VoxelIndex::new(&means, params.tau_corr);
        Ok(Self {
            means,
            covariances,
            index,
            cell: params.tau_corr,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn nearest(&self, q: &Vector3<f64>, max_dist: f64) -> Option<(usize, f64)> {
        self.index.nearest(&self.means, q, max_dist.min(self.cell))
    }
}

struct Association {
    source: usize,
    target: usize,
}

/// Aligns camera-frame source points to the map starting from `init`
/// (world-to-camera).
///
/// Gauss-Newton on `Σ dᵀ (C_t + R C_s Rᵀ)⁻¹ d` with a left twist on the
/// camera-to-world transform. Correspondences are re-associated every
/// iteration; within an iteration the step is halved until the cost under
/// those correspondences does not increase.
pub fn gicp_align(source: &[SourcePoint], target: &TrackingTarget, init: &Pose, params: &GicpParams) -> TrackResult {
    let mut cam_to_world = init.inverse();
    let mut cost_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    if !target.is_empty() && !source.is_empty() {
        for iter in 0..params.max_iterations {
            let assoc = associate(source, target, &cam_to_world, params.tau_corr);
            if assoc.len() < params.min_correspondences {
                if iter == 0 {
                    return finish(source, target, *init, params, false, 0, cost_trace);
                }
                break;
            }
            let (cost, h, b) = linearize(source, target, &assoc, &cam_to_world);
            let Some(step) = h.cholesky().map(|c| -c.solve(&b)) else {
                break;
            };
            let mut scale = 1.0;
            let mut accepted = None;
            for _ in 0..20 {
                let candidate = Pose::exp(&(step * scale)).compose(&cam_to_world);
                let c = cost_under(source, target, &assoc, &candidate);
                if c <= cost || !params.step_halving {
                    accepted = Some((candidate, c));
                    break;
                }
                scale *= 0.5;
            }
            iterations = iter + 1;
            let Some((candidate, c)) = accepted else {
                // no descent along the Gauss-Newton direction: stationary
                converged = true;
                break;
            };
            cam_to_world = candidate;
            cost_trace.push((cost, c));
            if (step * scale).norm() < params.update_tolerance {
                converged = true;
                break;
            }
        }
    }
    finish(
        source,
        target,
        cam_to_world.inverse(),
        params,
        converged,
        iterations,
        cost_trace,
    )
}

fn associate(source: &[SourcePoint], target: &TrackingTarget, t: &Pose, gate: f64) -> Vec<Association> {
    source
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let p = t.transform_point(&s.position);
            target
                .nearest(&p, gate)
                .map(|(j, _)| Association { source: i, target: j })
        })
        .collect()
}

fn residual_info(
    s: &SourcePoint,
    target: &TrackingTarget,
    j: usize,
    t: &Pose,
    r: &Matrix3<f64>,
) -> (Vector3<f64>, Vector3<f64>, Matrix3<f64>) {
    let p = t.transform_point(&s.position);
    let d = p - target.means[j];
    let c = target.covariances[j] + r * s.covariance * r.transpose();
    let info = c.try_inverse().unwrap_or_else(Matrix3::identity);
    (p, d, info)
}

fn linearize(
    source: &[SourcePoint],
    target: &TrackingTarget,
    assoc: &[Association],
    t: &Pose,
) -> (f64, Matrix6<f64>, Vector6<f64>) {
    let r = t.rotation_matrix();
    let mut h = Matrix6::zeros();
    let mut b = Vector6::zeros();
    let mut cost = 0.0;
    for a in assoc {
        let (p, d, info) = residual_info(&source[a.source], target, a.target, t, &r);
        cost += d.dot(&(info * d));
        // d(exp(ξ)·p)/dξ at ξ = 0 is [-[p]×, I]
        let mut j = nalgebra::Matrix3x6::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&p)));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        let jt_info = j.transpose() * info;
        h += jt_info * j;
        b += jt_info * d;
    }
    (cost, h, b)
}

fn cost_under(source: &[SourcePoint], target: &TrackingTarget, assoc: &[Association], t: &Pose) -> f64 {
    let r = t.rotation_matrix();
    assoc
        .iter()
        .map(|a| {
            let (_, d, info) = residual_info(&source[a.source], target, a.target, t, &r);
            d.dot(&(info * d))
        })
        .sum()
}

fn finish(
    source: &[SourcePoint],
    target: &TrackingTarget,
    pose: Pose,
    params: &GicpParams,
    converged: bool,
    iterations: usize,
    cost_trace: Vec<(f64, f64)>,
) -> TrackResult {
    let correspondence_distances = correspondence_distances(source, target, &pose, params.tau_corr);
    let overlap_ratio = overlap_ratio(&correspondence_distances, params.tau_overlap);
    TrackResult {
        pose,
        correspondence_distances,
        overlap_ratio,
        converged,
        iterations,
        cost_trace,
    }
}

/// Distance from each source point (under world-to-camera `pose`) to its
/// nearest map mean, `+∞` beyond `gate`.
pub fn correspondence_distances(source: &[SourcePoint], target: &TrackingTarget, pose: &Pose, gate: f64) -> Vec<f64> {
    let t = pose.inverse();
    source
        .iter()
        .map(|s| {
            target
                .nearest(&t.transform_point(&s.position), gate)
                .map_or(f64::INFINITY, |(_, d)| d)
        })
        .collect()
}

/// Fraction of distances strictly below `tau_overlap`; 0 for no points.
pub fn overlap_ratio(distances: &[f64], tau_overlap: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d < tau_overlap).count() as f64 / distances.len() as f64
}
