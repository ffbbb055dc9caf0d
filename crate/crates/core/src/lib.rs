//! Gaussian-splatting RGB-D SLAM with a Top-K rendered semantic feature field.
//!
//! The crate is organized by pipeline stage:
//!
//! * [`scene`] and [`pose`]: map primitives, camera model, SE(3) helpers.
//! * [`raster`]: tiled forward/backward rasterization with Top-K records.
//! * [`tracker`]: depth back-projection, G-ICP alignment, keyframing and
//!   photometric pose refinement.
//! * [`mapper`]: insertion, consistency pruning, losses and the hybrid
//!   optimization schedule.
//! * [`synthgen`]: synthetic ground-truth scenes and the dataset format.
//! * [`metrics`] and [`pipeline`]: evaluation and the end-to-end driver.

pub mod bench;
pub mod error;
pub mod loss;
pub mod mapper;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod raster;
pub mod scene;
pub mod synthgen;
pub mod tracker;

pub use error::{Error, Result};
pub use pose::Pose;
pub use scene::{CameraIntrinsics, Frame, Gaussian3D, Projected2D};
