//! Single-view 3D mouse pose lifting and its supporting machinery.
//!
//! The crate reconstructs 3D mouse poses from one camera's 2D keypoints by
//! constrained kinematic optimization under a learned Gaussian-mixture pose
//! prior, and provides the surrounding tooling: multiview triangulation for
//! ground truth, OKS and registered-3D-error evaluation, stride/gait
//! analytics, deterministic file formats and synthetic data generation.

pub mod camera;
pub mod error;
pub mod gait;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod prior;
pub(crate) mod real;
pub mod skeleton;
pub mod triangulation;

pub use camera::CameraModel;
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{KeypointFrame, MaskedPose};
pub use optimizer::{fit_pose, FitConfig, FitResult};
pub use prior::GaussianMixture;
pub use skeleton::{KeypointName, Pose3D, PoseParams, Skeleton};
