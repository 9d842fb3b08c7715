//! Gaussian primitives and the scene container.

use crate::math::{quat_to_rotation, sigmoid, Mat3, Quaternion, SpdMat3, Vec3};
use crate::sh::{self, ShError};

/// Color triple in raw pixel-value units.
pub type Rgb = Vec3;

/// Constant added by the color decoder.
pub const COLOR_OFFSET: f64 = 0.5;

/// One anisotropic 3D Gaussian.
///
/// `sh` holds `(degree + 1)^2` RGB coefficient triples, DC first.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: Quaternion,
    pub opacity_logit: f64,
    pub sh: Vec<Rgb>,
}

impl GaussianPrimitive {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_rotation(&self.rotation)
    }

    pub fn sh_degree(&self) -> Option<usize> {
        sh::degree_from_coeffs(self.sh.len())
    }
}

/// `R * diag(exp(2 * log_scale)) * R^T`.
pub fn covariance_of(p: &GaussianPrimitive) -> SpdMat3 {
    let r = p.rotation_matrix();
    let var = p.log_scale.map(|s| (2.0 * s).exp());
    let m = r * Mat3::from_diagonal(&var) * r.transpose();
    // exact symmetry for downstream determinant/factor code
    SpdMat3::new_unchecked(0.5 * (m + m.transpose()))
}

/// Linear part of the decoder: `sum_l basis_l(dir) * f_l`, without offset or clamp.
pub fn sh_linear(features: &[Rgb], basis: &[f64]) -> Rgb {
    features.iter().zip(basis).fold(Rgb::zeros(), |acc, (f, b)| acc + f * *b)
}

/// View-dependent color along unit direction `dir`, clamped below at zero.
pub fn decode_color(p: &GaussianPrimitive, dir: &Vec3) -> Result<Rgb, ShError> {
    let degree = p.sh_degree().ok_or(ShError::Degree(usize::MAX))?;
    let basis = sh::sh_eval_basis(dir, degree)?;
    Ok((sh_linear(&p.sh, &basis).add_scalar(COLOR_OFFSET)).map(|c| c.max(0.0)))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("primitive {index} has {found} SH coefficients, scene degree {degree} needs {expected}")]
    ShMismatch { index: usize, found: usize, expected: usize, degree: usize },
    #[error("SH degree {0} is not supported")]
    Degree(usize),
    #[error("scene is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub primitives: Vec<GaussianPrimitive>,
    pub sh_degree: usize,
}

impl Scene {
    pub fn new(primitives: Vec<GaussianPrimitive>, sh_degree: usize) -> Result<Self, SceneError> {
        let scene = Scene { primitives, sh_degree };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(SceneError::Degree(self.sh_degree));
        }
        let expected = sh::coeff_count(self.sh_degree);
        for (index, p) in self.primitives.iter().enumerate() {
            if p.sh.len() != expected {
                return Err(SceneError::ShMismatch {
                    index,
                    found: p.sh.len(),
                    expected,
                    degree: self.sh_degree,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn coeffs_per_primitive(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }

    /// Centroid of the primitive means.
    pub fn centroid(&self) -> Vec3 {
        let n = self.primitives.len().max(1) as f64;
        self.primitives.iter().fold(Vec3::zeros(), |a, p| a + p.position) / n
    }

    /// Longest side of the axis-aligned box around the means.
    pub fn extent(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.primitives {
            lo = lo.inf(&p.position);
            hi = hi.sup(&p.position);
        }
        if self.primitives.is_empty() {
            return 0.0;
        }
        (hi - lo).max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::standard_normal3;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn primitive(degree: usize) -> GaussianPrimitive {
        GaussianPrimitive {
            position: Vec3::zeros(),
            log_scale: Vec3::zeros(),
            rotation: Quaternion::IDENTITY,
            opacity_logit: 0.0,
            sh: vec![Rgb::zeros(); sh::coeff_count(degree)],
        }
    }

    fn random_primitive(rng: &mut ChaCha8Rng, degree: usize) -> GaussianPrimitive {
        GaussianPrimitive {
            position: standard_normal3(rng),
            log_scale: Vec3::new(rng.random_range(-3.0..0.5), rng.random_range(-3.0..0.5), rng.random_range(-3.0..0.5)),
            rotation: Quaternion::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            opacity_logit: rng.random_range(-3.0..3.0),
            sh: (0..sh::coeff_count(degree)).map(|_| standard_normal3(rng)).collect(),
        }
    }

    #[test]
    fn covariance_examples() {
        let p = primitive(0);
        assert_eq!(*covariance_of(&p).matrix(), Mat3::identity());
        let mut p = primitive(0);
        p.log_scale = Vec3::new(2f64.ln(), 0.0, 0.0);
        let c = covariance_of(&p);
        assert!((c.matrix() - Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0))).abs().max() < 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_primitive(&mut rng, 0);
            let eig = SymmetricEigen::new(*covariance_of(&p).matrix());
            let mut got: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = p.log_scale.iter().map(|s| (2.0 * s).exp()).collect();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9 * w.max(1.0));
                assert!(*g >= -1e-9);
            }
        }
    }

    #[test]
    fn decode_color_examples() {
        let dir = Vec3::new(0.0, 0.6, 0.8);
        assert_eq!(decode_color(&primitive(3), &dir).unwrap(), Rgb::repeat(0.5));
        let mut p = primitive(3);
        p.sh[0] = Rgb::new(0.7, 0.0, 0.0);
        let c = decode_color(&p, &dir).unwrap();
        assert!((c.x - (0.5 + 0.28209479 * 0.7)).abs() < 1e-8);
        assert_eq!(c.y, 0.5);
    }

    #[test]
    fn dc_only_color_is_view_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_primitive(&mut rng, 0);
        let d = standard_normal3(&mut rng).normalize();
        assert_eq!(decode_color(&p, &d).unwrap(), decode_color(&p, &-d).unwrap());
    }

    #[test]
    fn decoder_linear_part_is_linear_in_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_primitive(&mut rng, 3).sh;
        let g = random_primitive(&mut rng, 3).sh;
        let (a, b) = (0.7, -1.3);
        let mix: Vec<Rgb> = f.iter().zip(&g).map(|(x, y)| x * a + y * b).collect();
        for _ in 0..20 {
            let d = standard_normal3(&mut rng).normalize();
            let basis = sh::sh_eval_basis(&d, 3).unwrap();
            let lhs = sh_linear(&mix, &basis);
            let rhs = sh_linear(&f, &basis) * a + sh_linear(&g, &basis) * b;
            assert!((lhs - rhs).abs().max() < 1e-12);
        }
    }

    #[test]
    fn validate_rejects_mixed_degrees() {
        let err = Scene::new(vec![primitive(1), primitive(2)], 1).unwrap_err();
        assert!(matches!(err, SceneError::ShMismatch { index: 1, .. }));
    }
}
