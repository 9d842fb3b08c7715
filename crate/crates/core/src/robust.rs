//! Per-image robustness models: a Gaussian distribution over rigid world
//! transforms (camera motion blur, with pose correction as its zero-spread
//! case), defocus as image-plane covariance inflation, and an affine color
//! transform that can be folded back into SH features.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{quat_to_rotation, skew, so3_exp, Mat2, Mat3, Quaternion, SpdMat3, Vec3};
use crate::scene::{Rgb, COLOR_OFFSET};
use crate::sh::SH_C0;

/// Blur log-std used when a fit starts; small enough to be visually inert.
pub const INITIAL_LOG_STD: f64 = -9.210_340_371_976_182; // ln(1e-4)

/// Which per-image models take part in rendering. A disabled model behaves
/// exactly like its identity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mechanisms {
    pub pose: bool,
    pub motion_blur: bool,
    pub defocus: bool,
    pub color: bool,
}

impl Mechanisms {
    pub const ALL: Mechanisms = Mechanisms { pose: true, motion_blur: true, defocus: true, color: true };
    pub const NONE: Mechanisms = Mechanisms { pose: false, motion_blur: false, defocus: false, color: false };
}

impl Default for Mechanisms {
    fn default() -> Self {
        Mechanisms::ALL
    }
}

/// Rigid offset `(R, t)` plus diagonal log-stds of the rotation-vector and
/// translation noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionBlurParams {
    pub rotation: Quaternion,
    pub translation: Vec3,
    /// `-inf` entries mean exactly zero spread on that axis.
    pub log_std_rotation: Vec3,
    pub log_std_translation: Vec3,
}

impl MotionBlurParams {
    pub fn identity() -> Self {
        MotionBlurParams {
            rotation: Quaternion::IDENTITY,
            translation: Vec3::zeros(),
            log_std_rotation: Vec3::repeat(f64::NEG_INFINITY),
            log_std_translation: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotation(&self.rotation)
    }

    pub fn rotation_std(&self) -> Vec3 {
        self.log_std_rotation.map(f64::exp)
    }

    pub fn translation_std(&self) -> Vec3 {
        self.log_std_translation.map(f64::exp)
    }

    pub fn rotation_cov(&self) -> Mat3 {
        Mat3::from_diagonal(&self.log_std_rotation.map(|l| (2.0 * l).exp()))
    }

    pub fn translation_cov(&self) -> Mat3 {
        Mat3::from_diagonal(&self.log_std_translation.map(|l| (2.0 * l).exp()))
    }

    pub fn has_blur(&self) -> bool {
        self.rotation_std().iter().chain(self.translation_std().iter()).any(|s| *s > 0.0)
    }
}

/// Defocus: circle-of-confusion radius `aperture * (focus_inv_depth - 1/depth)` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefocusParams {
    pub aperture: f64,
    pub focus_inv_depth: f64,
}

impl DefocusParams {
    pub fn identity() -> Self {
        DefocusParams { aperture: 0.0, focus_inv_depth: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorParams {
    pub matrix: Mat3,
    pub offset: Vec3,
}

impl ColorParams {
    pub fn identity() -> Self {
        ColorParams { matrix: Mat3::identity(), offset: Vec3::zeros() }
    }

    /// `other` applied after `self`.
    pub fn then(&self, other: &ColorParams) -> ColorParams {
        ColorParams { matrix: other.matrix * self.matrix, offset: other.matrix * self.offset + other.offset }
    }
}

/// Everything one training image carries besides its camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerImageParams {
    pub motion: MotionBlurParams,
    pub defocus: DefocusParams,
    pub color: ColorParams,
    pub enabled: Mechanisms,
}

impl PerImageParams {
    /// Identity values with every mechanism switched on.
    pub fn identity() -> Self {
        PerImageParams {
            motion: MotionBlurParams::identity(),
            defocus: DefocusParams::identity(),
            color: ColorParams::identity(),
            enabled: Mechanisms::ALL,
        }
    }

    /// Identity values with every mechanism switched off (plain splatting).
    pub fn disabled() -> Self {
        PerImageParams { enabled: Mechanisms::NONE, ..Self::identity() }
    }

    /// Starting point for a fit: identity pose, near-zero blur, pinhole focus
    /// at `1 / median_depth` with a small aperture so its gradient is nonzero.
    pub fn initial(enabled: Mechanisms, median_depth: f64, aperture: f64) -> Self {
        PerImageParams {
            motion: MotionBlurParams {
                log_std_rotation: Vec3::repeat(INITIAL_LOG_STD),
                log_std_translation: Vec3::repeat(INITIAL_LOG_STD),
                ..MotionBlurParams::identity()
            },
            defocus: DefocusParams { aperture, focus_inv_depth: 1.0 / median_depth },
            color: ColorParams::identity(),
            enabled,
        }
    }
}

/// Result of pushing one Gaussian through the linearized world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurredGaussian {
    pub mean: Vec3,
    pub cov: SpdMat3,
    pub opacity: f64,
}

/// Linearized push-forward of `N(mean, cov)` through the random rigid
/// transform, with opacity rescaled so `opacity * sqrt(det cov)` is kept.
pub fn motion_blur_transform(mean: &Vec3, cov: &SpdMat3, opacity: f64, p: &MotionBlurParams) -> BlurredGaussian {
    let r = p.rotation_matrix();
    let k = skew(mean);
    let inner = cov.matrix() + k * p.rotation_cov() * k.transpose() + p.translation_cov();
    let blurred = r * inner * r.transpose();
    let det_ratio = cov.matrix().determinant() / inner.determinant();
    BlurredGaussian {
        mean: r * mean + p.translation,
        cov: SpdMat3::new_unchecked(0.5 * (blurred + blurred.transpose())),
        opacity: opacity * det_ratio.sqrt(),
    }
}

/// The exact (non-linearized) random rigid transform for one noise draw.
pub fn zeta_exact(x: &Vec3, eps_rotation: &Vec3, eps_translation: &Vec3, p: &MotionBlurParams) -> Vec3 {
    let (r, t) = zeta_rigid(eps_rotation, eps_translation, p);
    r * x + t
}

/// The rigid transform `(R', t')` with `zeta_exact(x) == R' x + t'`.
pub fn zeta_rigid(eps_rotation: &Vec3, eps_translation: &Vec3, p: &MotionBlurParams) -> (Mat3, Vec3) {
    let r = p.rotation_matrix();
    let rot_noise = so3_exp(&p.rotation_std().component_mul(eps_rotation));
    let trans_noise = p.translation_std().component_mul(eps_translation);
    (r * rot_noise, r * trans_noise + p.translation)
}

/// Signed circle-of-confusion radius in pixels; only its square is used.
pub fn defocus_radius(depth: f64, p: &DefocusParams) -> f64 {
    p.aperture * (p.focus_inv_depth - 1.0 / depth)
}

/// Inflates a 2D covariance by `radius^2 I` and rescales opacity to keep
/// `opacity * sqrt(det cov)` fixed.
pub fn apply_defocus(cov2d: &Mat2, opacity: f64, radius: f64) -> (Mat2, f64) {
    let r2 = radius * radius;
    let inflated = cov2d + Mat2::identity() * r2;
    let scale = (cov2d.determinant() / inflated.determinant()).sqrt();
    (inflated, opacity * scale)
}

pub fn apply_color_affine(rgb: &Rgb, p: &ColorParams) -> Rgb {
    p.matrix * rgb + p.offset
}

/// SH features whose decoded color equals `W * decode(features) + q` for
/// every direction, before the renderer's non-negativity clamp.
pub fn absorb_color_into_sh(features: &[Rgb], p: &ColorParams) -> Vec<Rgb> {
    let w = &p.matrix;
    let mut out: Vec<Rgb> = features.iter().map(|f| w * f).collect();
    let shift = p.offset + (w - Mat3::identity()) * Vec3::repeat(COLOR_OFFSET);
    out[0] += shift / SH_C0;
    out
}

/// Elementwise average of several color transforms.
pub fn mean_color_params(params: &[ColorParams]) -> ColorParams {
    if params.is_empty() {
        return ColorParams::identity();
    }
    let n = params.len() as f64;
    let matrix = params.iter().fold(Mat3::zeros(), |a, p| a + p.matrix) / n;
    let offset = params.iter().fold(Vec3::zeros(), |a, p| a + p.offset) / n;
    ColorParams { matrix, offset }
}

// JSON sidecar. Log-stds of `-inf` (exactly zero blur) are written as null.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    rotation: [f64; 4],
    translation: [f64; 3],
    log_std_rotation: [Option<f64>; 3],
    log_std_translation: [Option<f64>; 3],
    aperture: f64,
    focus_inv_depth: f64,
    color_matrix: [[f64; 3]; 3],
    color_offset: [f64; 3],
    enabled: Mechanisms,
}

fn encode_log_std(v: &Vec3) -> [Option<f64>; 3] {
    [0, 1, 2].map(|i| if v[i].is_finite() { Some(v[i]) } else { None })
}

fn decode_log_std(v: &[Option<f64>; 3]) -> Vec3 {
    Vec3::new(
        v[0].unwrap_or(f64::NEG_INFINITY),
        v[1].unwrap_or(f64::NEG_INFINITY),
        v[2].unwrap_or(f64::NEG_INFINITY),
    )
}

impl From<&PerImageParams> for ParamsRecord {
    fn from(p: &PerImageParams) -> Self {
        let m = &p.color.matrix;
        ParamsRecord {
            rotation: p.motion.rotation.to_array(),
            translation: p.motion.translation.into(),
            log_std_rotation: encode_log_std(&p.motion.log_std_rotation),
            log_std_translation: encode_log_std(&p.motion.log_std_translation),
            aperture: p.defocus.aperture,
            focus_inv_depth: p.defocus.focus_inv_depth,
            color_matrix: [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]]),
            color_offset: p.color.offset.into(),
            enabled: p.enabled,
        }
    }
}

impl From<ParamsRecord> for PerImageParams {
    fn from(r: ParamsRecord) -> Self {
        let cm = r.color_matrix;
        PerImageParams {
            motion: MotionBlurParams {
                rotation: r.rotation.into(),
                translation: r.translation.into(),
                log_std_rotation: decode_log_std(&r.log_std_rotation),
                log_std_translation: decode_log_std(&r.log_std_translation),
            },
            defocus: DefocusParams { aperture: r.aperture, focus_inv_depth: r.focus_inv_depth },
            color: ColorParams {
                matrix: Mat3::new(
                    cm[0][0], cm[0][1], cm[0][2], cm[1][0], cm[1][1], cm[1][2], cm[2][0], cm[2][1], cm[2][2],
                ),
                offset: r.color_offset.into(),
            },
            enabled: r.enabled,
        }
    }
}

impl Serialize for PerImageParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ParamsRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for PerImageParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        ParamsRecord::deserialize(d).map(PerImageParams::from)
    }
}

/// Per-image parameters keyed by image id.
pub type ParamsSidecar = BTreeMap<String, PerImageParams>;

#[derive(Debug, thiserror::Error)]
pub enum SidecarError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("params json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_params(path: impl AsRef<Path>, params: &ParamsSidecar) -> Result<(), SidecarError> {
    std::fs::write(path, serde_json::to_string_pretty(params)? + "\n")?;
    Ok(())
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamsSidecar, SidecarError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
