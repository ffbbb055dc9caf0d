//! Map mutation and optimization: redundancy-aware insertion, consistency
//! pruning, and the hybrid geometry/feature schedule.

mod checkpoint;
mod map;
mod optimizer;
mod step;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use map::{
    insert_gaussians, insertion_shape, prune_candidates, prune_map, sample_survivors, update_contribution_stats,
    Keyframe, SceneMap, INSERT_OPACITY,
};
pub use optimizer::{LearningRates, OptimizerState};
pub use step::{optimize_step, Schedule, StepRecord};
