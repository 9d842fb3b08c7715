//! Pinhole camera, projection and its Jacobian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{quat_to_rotation, Mat2x3, Mat3, Quaternion, Vec2, Vec3};

/// Points at or in front of this camera-space depth are culled.
pub const Z_NEAR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("point at depth {depth} is behind the near plane")]
pub struct BehindCamera {
    pub depth: f64,
}

/// Pinhole intrinsics and world-to-camera extrinsics. Pixel centers sit at
/// integer coordinates; camera looks down +z, +x right, +y down.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl PinholeCamera {
    /// Camera at `eye` looking at `target`, with `up` roughly upward in the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        PinholeCamera {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation: -(rotation * eye),
        }
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Viewing direction (camera +z) in world coordinates.
    pub fn optical_axis(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }
}

/// World point to camera coordinates; `z` is the depth.
pub fn to_camera(cam: &PinholeCamera, x: &Vec3) -> Vec3 {
    cam.rotation * x + cam.translation
}

pub fn project(cam: &PinholeCamera, x_cam: &Vec3) -> Result<(Vec2, f64), BehindCamera> {
    let z = x_cam.z;
    if z <= Z_NEAR {
        return Err(BehindCamera { depth: z });
    }
    Ok((Vec2::new(cam.fx * x_cam.x / z + cam.cx, cam.fy * x_cam.y / z + cam.cy), z))
}

/// Jacobian of [`project`] w.r.t. the camera-space point.
pub fn projection_jacobian(cam: &PinholeCamera, x_cam: &Vec3) -> Result<Mat2x3, BehindCamera> {
    let z = x_cam.z;
    if z <= Z_NEAR {
        return Err(BehindCamera { depth: z });
    }
    let iz = 1.0 / z;
    Ok(Mat2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * x_cam.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * x_cam.y * iz * iz,
    ))
}

/// One entry of a camera-set JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub id: String,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation as a `(w, x, y, z)` quaternion.
    pub rotation: [f64; 4],
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub image_path: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CameraError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("camera json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("camera {id:?}: {reason}")]
    Invalid { id: String, reason: String },
}

impl CameraRecord {
    pub fn from_camera(id: impl Into<String>, cam: &PinholeCamera, image_path: impl Into<String>) -> Self {
        CameraRecord {
            id: id.into(),
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            rotation: Quaternion::from_rotation(&cam.rotation).to_array(),
            translation: cam.translation.into(),
            image_path: image_path.into(),
        }
    }

    pub fn to_camera(&self) -> Result<PinholeCamera, CameraError> {
        let invalid = |reason: &str| CameraError::Invalid { id: self.id.clone(), reason: reason.into() };
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(invalid("fx and fy must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("width and height must be at least 1"));
        }
        let q = Quaternion::from(self.rotation);
        if !(q.norm() > 0.0) {
            return Err(invalid("rotation quaternion has zero norm"));
        }
        Ok(PinholeCamera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
            rotation: quat_to_rotation(&q),
            translation: Vec3::from(self.translation),
        })
    }
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<Vec<CameraRecord>, CameraError> {
    let text = std::fs::read_to_string(path)?;
    let records: Vec<CameraRecord> = serde_json::from_str(&text)?;
    for r in &records {
        r.to_camera()?;
    }
    Ok(records)
}

pub fn write_cameras(path: impl AsRef<Path>, records: &[CameraRecord]) -> Result<(), CameraError> {
    let text = serde_json::to_string_pretty(records)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
