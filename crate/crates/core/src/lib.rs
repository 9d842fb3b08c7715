//! Gaussian splatting with per-image motion blur, defocus and color models.
//!
//! The crate covers the full pipeline: scene and camera types, the forward
//! renderer with its Monte-Carlo blur reference, analytic gradients, Adam
//! fitting and test-time adaptation, synthetic datasets, and metrics.

pub mod camera;
pub mod eval;
pub mod grad;
pub mod image;
pub mod optim;
pub mod math;
pub mod ply;
pub mod render;
pub mod robust;
pub mod scene;
pub mod sh;
pub mod synth;

pub use camera::{project, projection_jacobian, to_camera, CameraRecord, PinholeCamera};
pub use eval::{blurriness, psnr, select_test_views, ssim, ConflictMode, SelectionRule, ViewRecord};
pub use image::ImageBuffer;
pub use math::{Mat2, Mat3, Quaternion, SpdMat3, Vec2, Vec3};
pub use ply::{read_ply, write_ply};
pub use render::{render, render_mc_oracle, splat, RenderOptions, Splat2D};
pub use robust::{ColorParams, DefocusParams, Mechanisms, MotionBlurParams, PerImageParams};
pub use scene::{GaussianPrimitive, Rgb, Scene};
pub use synth::{generate_dataset, generate_scene, orbit_cameras, CorruptionSpec, Dataset};
