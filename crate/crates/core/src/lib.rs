//! Keypoint-based 6D object pose estimation toolkit.
//!
//! Selects 3D keypoints on object models, renders and decodes keypoint
//! heatmaps, recovers pose with PnP + RANSAC and scores it with ADD/ADD-S.

pub mod cli;
pub mod geometry;
pub mod heatmap;
pub mod knn;
pub mod mesh_io;
pub mod metrics;
pub mod pnp;
pub mod sampling;
pub mod simulator;
pub mod trainmath;

pub use geometry::{CameraIntrinsics, GeometryError, Pose, RoiTransform, Vec2, Vec3};
pub use heatmap::HeatmapError;
pub use mesh_io::MeshError;
pub use metrics::MetricsError;
pub use pnp::PnpError;
pub use sampling::SamplingError;
pub use simulator::SimError;
pub use trainmath::TrainMathError;
