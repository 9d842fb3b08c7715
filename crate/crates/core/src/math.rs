//! Small fixed-size linear algebra and rotation helpers.
//!
//! Matrices are row-major in memory and vectors are columns, so `m * v`
//! applies `m` to `v`. Everything here is a pure function on value types.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat2x3 = Matrix2x3<f64>;

/// Below this rotation angle `so3_exp` switches to its Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Negative eigenvalues down to this magnitude are treated as zero.
pub const SPD_TOLERANCE: f64 = 1e-9;

/// Maximum asymmetry accepted by [`spd_factor`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MathError {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive semi-definite (pivot {0:e})")]
    NotPositive(f64),
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation vector to rotation matrix (Rodrigues).
pub fn so3_exp(v: &Vec3) -> Mat3 {
    let theta2 = v.norm_squared();
    let k = skew(v);
    if theta2.sqrt() < SMALL_ANGLE {
        return Mat3::identity() + k + 0.5 * k * k;
    }
    let theta = theta2.sqrt();
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / theta2;
    Mat3::identity() + a * k + b * k * k
}

/// Quaternion stored as `(w, x, y, z)`.
///
/// Optimizers keep these unnormalized; every consumer goes through
/// [`Quaternion::normalized`] or [`quat_to_rotation`], which normalize first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quaternion {
    fn from(q: [f64; 4]) -> Self {
        Quaternion::new(q[0], q[1], q[2], q[3])
    }
}

impl From<Quaternion> for [f64; 4] {
    fn from(q: Quaternion) -> Self {
        q.to_array()
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Quaternion {
        let n = self.norm();
        Quaternion::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Unit quaternion for a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: &Vec3) -> Quaternion {
        let theta = v.norm();
        if theta < SMALL_ANGLE {
            return Quaternion::new(1.0, 0.5 * v.x, 0.5 * v.y, 0.5 * v.z).normalized();
        }
        let s = (0.5 * theta).sin() / theta;
        Quaternion::new((0.5 * theta).cos(), s * v.x, s * v.y, s * v.z)
    }

    /// Rotation matrix to unit quaternion (Shepperd's method).
    pub fn from_rotation(r: &Mat3) -> Quaternion {
        let tr = r.trace();
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            Quaternion::new(
                0.25 * s,
                (r[(2, 1)] - r[(1, 2)]) / s,
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(1, 0)] - r[(0, 1)]) / s,
            )
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(2, 1)] - r[(1, 2)]) / s,
                0.25 * s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
            )
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(0, 2)] - r[(2, 0)]) / s,
                (r[(0, 1)] + r[(1, 0)]) / s,
                0.25 * s,
                (r[(1, 2)] + r[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            Quaternion::new(
                (r[(1, 0)] - r[(0, 1)]) / s,
                (r[(0, 2)] + r[(2, 0)]) / s,
                (r[(1, 2)] + r[(2, 1)]) / s,
                0.25 * s,
            )
        };
        q.normalized()
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

/// Rotation matrix of a unit quaternion. The input is normalized first.
pub fn quat_to_rotation(q: &Quaternion) -> Mat3 {
    let Quaternion { w, x, y, z } = q.normalized();
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient w.r.t. the rotation matrix back to the raw (unnormalized)
/// quaternion that produced it through [`quat_to_rotation`].
pub fn quat_to_rotation_backward(q: &Quaternion, grad_r: &Mat3) -> [f64; 4] {
    let n = q.normalized();
    let (w, x, y, z) = (n.w, n.x, n.y, n.z);
    let g = grad_r;
    // d R / d(w, x, y, z) contracted with g
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    // through q / |q|
    let norm = q.norm();
    let gn = [gw, gx, gy, gz];
    let u = [w, x, y, z];
    let dot: f64 = gn.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (gn[i] - dot * u[i]) / norm;
    }
    out
}

/// Symmetric positive semi-definite 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdMat3(Mat3);

impl SpdMat3 {
    /// Wraps `m` after checking symmetry; positivity is checked by [`spd_factor`].
    pub fn new(m: Mat3) -> Result<Self, MathError> {
        let asym = (m - m.transpose()).abs().max();
        if asym > SYMMETRY_TOLERANCE {
            return Err(MathError::NotSymmetric(asym));
        }
        Ok(SpdMat3(m))
    }

    /// Wraps a matrix that is symmetric by construction.
    pub fn new_unchecked(m: Mat3) -> Self {
        SpdMat3(m)
    }

    pub fn from_diagonal(d: &Vec3) -> Self {
        SpdMat3(Mat3::from_diagonal(d))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }
}

/// Lower-triangular `L` with `L * L^T == s`.
///
/// Cholesky with clamping: pivots in `[-1e-9, 0]` are treated as zero and the
/// corresponding column is left empty, so PSD-but-singular inputs work.
pub fn spd_factor(s: &Mat3) -> Result<Mat3, MathError> {
    let asym = (s - s.transpose()).abs().max();
    if asym > SYMMETRY_TOLERANCE {
        return Err(MathError::NotSymmetric(asym));
    }
    let a = 0.5 * (s + s.transpose());
    let scale = a.diagonal().abs().max().max(1.0);
    let mut l = Mat3::zeros();
    for j in 0..3 {
        let mut pivot = a[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if pivot < -SPD_TOLERANCE * scale {
            return Err(MathError::NotPositive(pivot));
        }
        if pivot <= SPD_TOLERANCE * scale * 1e-6 {
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..3 {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Ok(l)
}

/// Draws `mean + factor * z` with `z` three independent standard normals.
pub fn sample_mvn<R: Rng + ?Sized>(mean: &Vec3, factor: &Mat3, rng: &mut R) -> Vec3 {
    let z = standard_normal3(rng);
    mean + factor * z
}

pub fn standard_normal3<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of a 2x2 matrix; `None` when the determinant is not positive-finite.
pub fn inverse2(m: &Mat2) -> Option<Mat2> {
    let det = m.determinant();
    if !(det.is_finite() && det != 0.0) {
        return None;
    }
    Some(Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det)
}
