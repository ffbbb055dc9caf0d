//! Per-frame tracking: depth back-projection, G-ICP against the map,
//! overlap-based keyframing and optional photometric pose refinement.

mod gicp;
mod refine;
mod source;

pub use gicp::{
    correspondence_distances, gicp_align, overlap_ratio, GicpParams, TrackResult, TrackingTarget, VoxelIndex,
};
pub use refine::{pose_loss, pose_loss_gradient, refine_pose_photometric, RefineParams, RefineResult};
pub use source::{backproject_depth, estimate_covariances, plane_normal, regularize_plane, SourcePoint, PLANE_EPSILON};

/// True when the frame overlaps the map too little; strict less-than.
pub fn keyframe_decision(result: &TrackResult, threshold: f64) -> bool {
    result.overlap_ratio < threshold
}
