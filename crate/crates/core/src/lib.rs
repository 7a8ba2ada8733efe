//! Two-expert pose-free Gaussian splatting at desk scale.
//!
//! Geometry, rendering, losses and optimizers are generic over [`Real`]
//! (`f32` or `f64`). Concrete aliases for both precisions are exported below.

pub mod bench;
pub mod camera;
pub mod error;
pub mod experts;
pub mod gaussian;
pub mod harness;
pub mod image;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod render;
pub mod scalar;

pub use camera::{
    invert_pose, normalize_scene_scale, project_point, relative_pose, rotation_geodesic_angle, CameraPose, Intrinsics,
    PointProjection, RelativePose,
};
pub use error::{Error, Result};
pub use gaussian::{
    covariance_from_attributes, unproject_pixel_aligned, validate_scene, Gaussian, GaussianScene, InitConfig,
    SceneReport,
};
pub use image::{DepthMap, ImageBuffer, ScalarMap};
pub use linalg::{Mat3, Quat, Vec3};
pub use loss::{LossBreakdown, LossWeights};
pub use render::{
    project_gaussian, render, render_reference, render_with_gradients, GradientBundle, ProjectedGaussian, RenderConfig,
};
pub use scalar::Real;

pub type CameraPose32 = CameraPose<f32>;
pub type CameraPose64 = CameraPose<f64>;
pub type Intrinsics32 = Intrinsics<f32>;
pub type Intrinsics64 = Intrinsics<f64>;
pub type Gaussian32 = Gaussian<f32>;
pub type Gaussian64 = Gaussian<f64>;
pub type GaussianScene32 = GaussianScene<f32>;
pub type GaussianScene64 = GaussianScene<f64>;
pub type ImageBuffer32 = ImageBuffer<f32>;
pub type ImageBuffer64 = ImageBuffer<f64>;
pub type GradientBundle64 = GradientBundle<f64>;
