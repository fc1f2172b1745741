//! Cone keypoint perception toolkit.
//!
//! The pipeline stages are:
//!
//! 1. **Synth** ([`synth`]) – flat-shaded cone crops and stereo scenes with exact
//!    keypoint, bounding-box and 3D ground truth.
//! 2. **Data** ([`data`]) – annotation schema, filtering, rotation and boundary
//!    crop augmentation, deterministic train/val/test splits.
//! 3. **Models** ([`model`]) – UNet heatmap regressor and a ResNet-style
//!    baseline, training with AdamW, checkpoints.
//! 4. **Metrics** ([`loss`], [`metrics`]) – heatmap + position loss and the
//!    MSE / RMSE / Norm ME / Std Dev / mAP@3px report.
//! 5. **Stereo** ([`stereo`]) – keypoint-mean disparity, depth, back-projection
//!    and keypoint-mask color estimation.
//! 6. **Pipeline** ([`pipeline`]) – simulated end-to-end runs, confusion
//!    matrices, distance-binned covariances and throughput measurements.

pub mod camera;
pub mod data;
pub mod error;
pub mod imaging;
pub mod keypoints;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod stereo;
pub mod synth;

pub use camera::{CameraIntrinsics, StereoRig};
pub use error::{Error, Result};
pub use keypoints::{ConeColor, Point, NUM_KEYPOINTS};
