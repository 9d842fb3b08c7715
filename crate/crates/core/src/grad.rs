//! Reverse-mode gradients of [`render`](crate::render::render), a flat
//! parameter addressing scheme, and a finite-difference checker.
//!
//! # Reduction order
//!
//! Pixel adjoints are accumulated per splat inside fixed blocks of
//! [`ROW_BLOCK`] image rows. Blocks run in parallel, then their partial sums
//! are added in block order. Per-image parameter contributions are summed
//! over splats in compositing order. Neither order depends on the number of
//! worker threads, so gradients are bit-identical across thread counts.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::camera::PinholeCamera;
use crate::image::ImageBuffer;
use crate::math::{quat_to_rotation_backward, skew, Mat2, Mat3, Quaternion, Vec3};
use crate::render::{
    composite_pixel, frame_signature, prepare_frame, render, row_candidates, Contribution, FrameSetup,
    PrimitiveForward, RenderOptions, WorldTransform,
};
use crate::robust::{ColorParams, DefocusParams, Mechanisms, MotionBlurParams, PerImageParams};
use crate::scene::{GaussianPrimitive, Rgb, Scene};
use crate::sh::{basis_into, coeff_count};

/// Image rows per backward reduction block.
pub const ROW_BLOCK: usize = 8;

/// Offsets inside one primitive's parameter block.
pub mod prim {
    pub const POSITION: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    /// SH coefficients follow, coefficient-major then channel.
    pub const SH: usize = 11;
}

/// Offsets inside one image's parameter block.
pub mod img {
    pub const ROTATION: usize = 0;
    pub const TRANSLATION: usize = 4;
    pub const LOG_STD_ROTATION: usize = 7;
    pub const LOG_STD_TRANSLATION: usize = 10;
    pub const APERTURE: usize = 13;
    pub const FOCUS: usize = 14;
    /// Row-major 3x3.
    pub const COLOR_MATRIX: usize = 15;
    pub const COLOR_OFFSET: usize = 24;
    pub const STRIDE: usize = 27;
}

pub const fn primitive_stride(sh_degree: usize) -> usize {
    prim::SH + 3 * coeff_count(sh_degree)
}

/// Parameter groups, used for learning rates and for gradient reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Opacity,
    Sh,
    PoseRotation,
    PoseTranslation,
    BlurRotation,
    BlurTranslation,
    Defocus,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 11] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Sh,
        ParamGroup::PoseRotation,
        ParamGroup::PoseTranslation,
        ParamGroup::BlurRotation,
        ParamGroup::BlurTranslation,
        ParamGroup::Defocus,
        ParamGroup::Color,
    ];

    pub fn of_primitive_offset(offset: usize) -> ParamGroup {
        match offset {
            0..=2 => ParamGroup::Position,
            3..=5 => ParamGroup::Scale,
            6..=9 => ParamGroup::Rotation,
            10 => ParamGroup::Opacity,
            _ => ParamGroup::Sh,
        }
    }

    pub fn of_image_offset(offset: usize) -> ParamGroup {
        match offset {
            0..=3 => ParamGroup::PoseRotation,
            4..=6 => ParamGroup::PoseTranslation,
            7..=9 => ParamGroup::BlurRotation,
            10..=12 => ParamGroup::BlurTranslation,
            13 | 14 => ParamGroup::Defocus,
            15..=26 => ParamGroup::Color,
            _ => panic!("image offset {offset} out of range"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Scale => "log_scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
            ParamGroup::PoseRotation => "pose_rotation",
            ParamGroup::PoseTranslation => "pose_translation",
            ParamGroup::BlurRotation => "blur_log_std_rotation",
            ParamGroup::BlurTranslation => "blur_log_std_translation",
            ParamGroup::Defocus => "defocus",
            ParamGroup::Color => "color",
        }
    }

    /// Whether a gradient for this group is produced under `enabled`.
    pub fn is_active(self, enabled: &Mechanisms) -> bool {
        match self {
            ParamGroup::PoseRotation | ParamGroup::PoseTranslation => enabled.pose,
            ParamGroup::BlurRotation | ParamGroup::BlurTranslation => enabled.motion_blur,
            ParamGroup::Defocus => enabled.defocus,
            ParamGroup::Color => enabled.color,
            _ => true,
        }
    }
}

pub fn scene_to_vec(scene: &Scene) -> Vec<f64> {
    let stride = primitive_stride(scene.sh_degree);
    let mut out = Vec::with_capacity(stride * scene.len());
    for p in &scene.primitives {
        out.extend_from_slice(p.position.as_slice());
        out.extend_from_slice(p.log_scale.as_slice());
        out.extend_from_slice(&p.rotation.to_array());
        out.push(p.opacity_logit);
        for f in &p.sh {
            out.extend_from_slice(f.as_slice());
        }
    }
    out
}

/// Inverse of [`scene_to_vec`].
pub fn vec_to_scene(v: &[f64], sh_degree: usize) -> Scene {
    let stride = primitive_stride(sh_degree);
    assert_eq!(v.len() % stride, 0, "parameter vector does not match SH degree");
    let primitives = v
        .chunks_exact(stride)
        .map(|b| GaussianPrimitive {
            position: Vec3::new(b[0], b[1], b[2]),
            log_scale: Vec3::new(b[3], b[4], b[5]),
            rotation: Quaternion::new(b[6], b[7], b[8], b[9]),
            opacity_logit: b[10],
            sh: b[prim::SH..].chunks_exact(3).map(|c| Rgb::new(c[0], c[1], c[2])).collect(),
        })
        .collect();
    Scene { primitives, sh_degree }
}

pub fn params_to_vec(p: &PerImageParams) -> [f64; img::STRIDE] {
    let mut out = [0.0; img::STRIDE];
    out[0..4].copy_from_slice(&p.motion.rotation.to_array());
    out[4..7].copy_from_slice(p.motion.translation.as_slice());
    out[7..10].copy_from_slice(p.motion.log_std_rotation.as_slice());
    out[10..13].copy_from_slice(p.motion.log_std_translation.as_slice());
    out[13] = p.defocus.aperture;
    out[14] = p.defocus.focus_inv_depth;
    for r in 0..3 {
        for c in 0..3 {
            out[15 + 3 * r + c] = p.color.matrix[(r, c)];
        }
    }
    out[24..27].copy_from_slice(p.color.offset.as_slice());
    out
}

/// Inverse of [`params_to_vec`]; the mechanism flags are not part of the vector.
pub fn vec_to_params(v: &[f64], enabled: Mechanisms) -> PerImageParams {
    assert_eq!(v.len(), img::STRIDE);
    PerImageParams {
        motion: MotionBlurParams {
            rotation: Quaternion::new(v[0], v[1], v[2], v[3]),
            translation: Vec3::new(v[4], v[5], v[6]),
            log_std_rotation: Vec3::new(v[7], v[8], v[9]),
            log_std_translation: Vec3::new(v[10], v[11], v[12]),
        },
        defocus: DefocusParams { aperture: v[13], focus_inv_depth: v[14] },
        color: ColorParams {
            matrix: Mat3::from_row_slice(&v[15..24]),
            offset: Vec3::new(v[24], v[25], v[26]),
        },
        enabled,
    }
}

/// Gradient of a scalar loss with respect to one render's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradient {
    /// Laid out like [`scene_to_vec`].
    pub scene: Vec<f64>,
    /// Laid out like [`params_to_vec`].
    pub image: [f64; img::STRIDE],
}

impl RenderGradient {
    pub fn zeros(scene: &Scene) -> Self {
        RenderGradient { scene: vec![0.0; primitive_stride(scene.sh_degree) * scene.len()], image: [0.0; img::STRIDE] }
    }

    pub fn is_finite(&self) -> bool {
        self.scene.iter().chain(self.image.iter()).all(|v| v.is_finite())
    }
}

/// Per-splat pixel adjoints: mean2d (2), conic (4, row-major), alpha_eff, color (3).
const ACC: usize = 10;

fn accumulate_pixel(
    splats: &[PrimitiveForward],
    rec: &[Contribution],
    g: Rgb,
    t_final: f64,
    bg: Rgb,
    acc: &mut [f64],
) {
    let mut behind = bg * t_final;
    for c in rec.iter().rev() {
        let s = &splats[c.slot];
        let a = &mut acc[ACC * c.slot..ACC * (c.slot + 1)];
        let w = c.transmittance * c.alpha;
        a[7] += g.x * w;
        a[8] += g.y * w;
        a[9] += g.z * w;
        let g_alpha = c.transmittance * g.dot(&s.color) - g.dot(&behind) / (1.0 - c.alpha);
        behind += s.color * w;
        if c.clamped {
            continue;
        }
        a[6] += g_alpha * c.gauss;
        let g_power = g_alpha * s.alpha_eff * c.gauss;
        let d = c.offset;
        let pd = 0.5 * (s.conic + s.conic.transpose()) * d;
        a[0] += g_power * pd.x;
        a[1] += g_power * pd.y;
        a[2] += -0.5 * g_power * d.x * d.x;
        a[3] += -0.5 * g_power * d.x * d.y;
        a[4] += -0.5 * g_power * d.x * d.y;
        a[5] += -0.5 * g_power * d.y * d.y;
    }
}

fn sym(m: &Mat3) -> Mat3 {
    0.5 * (m + m.transpose())
}

/// Gradient of `R diag(v) R^T` (symmetrized) pulled back to `R` and `v`.
fn rotated_diag_backward(g: &Mat3, r: &Mat3, v: &Vec3) -> (Mat3, Vec3) {
    let gs = sym(g);
    let g_r = (gs + gs.transpose()) * r * Mat3::from_diagonal(v);
    let inner = r.transpose() * gs * r;
    (g_r, Vec3::new(inner[(0, 0)], inner[(1, 1)], inner[(2, 2)]))
}

fn unskew_grad(gk: &Mat3) -> Vec3 {
    Vec3::new(
        -gk[(1, 2)] + gk[(2, 1)],
        gk[(0, 2)] - gk[(2, 0)],
        -gk[(0, 1)] + gk[(1, 0)],
    )
}

/// Pulls one splat's pixel adjoints back to its primitive parameters and
/// its share of the image parameters.
fn primitive_backward(
    p: &GaussianPrimitive,
    s: &PrimitiveForward,
    acc: &[f64],
    setup: &FrameSetup,
) -> (Vec<f64>, [f64; img::STRIDE]) {
    let stride = primitive_stride(setup.degree);
    let mut gp = vec![0.0; stride];
    let mut gi = [0.0; img::STRIDE];
    let cam = setup.cam;

    let g_mean2 = nalgebra::Vector2::new(acc[0], acc[1]);
    let g_conic = Mat2::new(acc[2], acc[3], acc[4], acc[5]);
    let g_aeff = acc[6];
    let g_color = Rgb::new(acc[7], acc[8], acc[9]);

    // clamp, then color affine
    let g_pre = Rgb::from_fn(|k, _| if s.pre_clamp[k] >= 0.0 { g_color[k] } else { 0.0 });
    let g_raw = match setup.color {
        Some(c) => {
            let m = g_pre * s.raw_color.transpose();
            for r in 0..3 {
                for k in 0..3 {
                    gi[img::COLOR_MATRIX + 3 * r + k] += m[(r, k)];
                }
            }
            for k in 0..3 {
                gi[img::COLOR_OFFSET + k] += g_pre[k];
            }
            c.matrix.transpose() * g_pre
        }
        None => g_pre,
    };
    let n = coeff_count(setup.degree);
    let mut basis = [0.0; 16];
    let mut dbasis = [Vec3::zeros(); 16];
    basis_into(&s.dir, setup.degree, &mut basis[..n], Some(&mut dbasis[..n]));
    let mut g_dir = Vec3::zeros();
    for k in 0..n {
        for ch in 0..3 {
            gp[prim::SH + 3 * k + ch] = basis[k] * g_raw[ch];
        }
        g_dir += dbasis[k] * p.sh[k].dot(&g_raw);
    }
    let vnorm = s.view.norm();
    let g_view = (g_dir - s.dir * s.dir.dot(&g_dir)) / vnorm;
    let mut g_mw = g_view;

    // opacity scalings
    let g_alpha = g_aeff * s.mb_scale * s.def_scale;
    let g_mb = g_aeff * s.alpha * s.def_scale;
    let g_def = g_aeff * s.alpha * s.mb_scale;

    // conic -> final covariance -> defocus
    let mut g_covf = -(s.conic.transpose() * g_conic * s.conic.transpose());
    let mut g_z = 0.0;
    let g_cov2d = match setup.defocus {
        Some(d) => {
            let inv2 = s.cov2d.try_inverse().unwrap_or_else(Mat2::zeros);
            let invf = s.cov_final.try_inverse().unwrap_or_else(Mat2::zeros);
            let mut g2 = g_def * s.def_scale * 0.5 * inv2.transpose();
            g_covf -= g_def * s.def_scale * 0.5 * invf.transpose();
            g2 += g_covf;
            let g_r = 2.0 * s.radius * g_covf.trace();
            let z = s.x_cam.z;
            gi[img::APERTURE] += g_r * (d.focus_inv_depth - 1.0 / z);
            gi[img::FOCUS] += g_r * d.aperture;
            g_z += g_r * d.aperture / (z * z);
            g2
        }
        None => g_covf,
    };

    // splat: cov2d = T Sw T^T + floor, T = J Rwc, mean2d = proj(x_cam)
    let t = &s.t_mat;
    let g_cw = t.transpose() * g_cov2d * t;
    let g_t = (g_cov2d + g_cov2d.transpose()) * t * s.cov_world;
    let g_j = g_t * cam.rotation.transpose();
    let (x, y, z) = (s.x_cam.x, s.x_cam.y, s.x_cam.z);
    let mut g_xcam = s.jac.transpose() * g_mean2;
    let (fx, fy) = (cam.fx, cam.fy);
    g_xcam.x += g_j[(0, 2)] * (-fx / (z * z));
    g_xcam.y += g_j[(1, 2)] * (-fy / (z * z));
    g_xcam.z += g_z
        + g_j[(0, 0)] * (-fx / (z * z))
        + g_j[(0, 2)] * (2.0 * fx * x / (z * z * z))
        + g_j[(1, 1)] * (-fy / (z * z))
        + g_j[(1, 2)] * (2.0 * fy * y / (z * z * z));
    g_mw += cam.rotation.transpose() * g_xcam;

    // world transform
    let mut g_cov = Mat3::zeros();
    let mut g_mu = Vec3::zeros();
    let (pose, blur, motion) = match setup.transform {
        WorldTransform::Linearized { params, pose, blur } => (pose, blur, params),
        WorldTransform::Rigid { .. } => unreachable!("rigid transforms are not differentiated"),
    };
    let mut g_inner = Mat3::zeros();
    if blur {
        let inv_c = s.cov.try_inverse().unwrap_or_else(Mat3::zeros);
        let inv_i = s.inner.try_inverse().unwrap_or_else(Mat3::zeros);
        g_cov += g_mb * s.mb_scale * 0.5 * inv_c.transpose();
        g_inner -= g_mb * s.mb_scale * 0.5 * inv_i.transpose();
    }
    if pose {
        let r = motion.rotation_matrix();
        let gc = sym(&g_cw);
        g_inner += r.transpose() * gc * r;
        let mut g_r = (gc + gc.transpose()) * r * s.inner;
        g_mu += r.transpose() * g_mw;
        g_r += g_mw * p.position.transpose();
        let gq = quat_to_rotation_backward(&motion.rotation, &g_r);
        for k in 0..4 {
            gi[img::ROTATION + k] += gq[k];
        }
        for k in 0..3 {
            gi[img::TRANSLATION + k] += g_mw[k];
        }
    } else {
        g_inner += g_cw;
        g_mu += g_mw;
    }
    g_cov += g_inner;
    if blur {
        let k = skew(&p.position);
        let cov_r = motion.rotation_cov();
        let g_sr = k.transpose() * g_inner * k;
        let g_k = (g_inner + g_inner.transpose()) * k * cov_r;
        g_mu += unskew_grad(&g_k);
        let vr = cov_r.diagonal();
        let vt = motion.translation_cov().diagonal();
        for a in 0..3 {
            gi[img::LOG_STD_ROTATION + a] += g_sr[(a, a)] * 2.0 * vr[a];
            gi[img::LOG_STD_TRANSLATION + a] += g_inner[(a, a)] * 2.0 * vt[a];
        }
    }

    // primitive parametrization
    let (g_rot, g_var) = rotated_diag_backward(&g_cov, &s.rot, &s.var);
    let gq = quat_to_rotation_backward(&p.rotation, &g_rot);
    for k in 0..3 {
        gp[prim::POSITION + k] = g_mu[k];
        gp[prim::LOG_SCALE + k] = g_var[k] * 2.0 * s.var[k];
    }
    gp[prim::ROTATION..prim::ROTATION + 4].copy_from_slice(&gq);
    gp[prim::OPACITY] = g_alpha * s.alpha * (1.0 - s.alpha);
    (gp, gi)
}

/// Exact adjoint of [`render`] for the adjoint image `grad_out`
/// (`dL/d pixel`, same layout as [`ImageBuffer::data`]).
pub fn render_backward(
    scene: &Scene,
    cam: &PinholeCamera,
    params: &PerImageParams,
    opts: &RenderOptions,
    grad_out: &ImageBuffer,
) -> RenderGradient {
    assert_eq!((grad_out.width, grad_out.height), (cam.width, cam.height), "adjoint size must match camera");
    let setup = FrameSetup::closed_form(cam, params, scene.sh_degree, opts);
    let splats = prepare_frame(scene, &setup);
    let n = splats.len();
    let bg = opts.background();
    let blocks: Vec<Vec<f64>> = (0..cam.height.div_ceil(ROW_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; ACC * n];
            let mut cand = Vec::new();
            let mut rec = Vec::new();
            for y in b * ROW_BLOCK..((b + 1) * ROW_BLOCK).min(cam.height) {
                row_candidates(&splats, y, &mut cand);
                for x in 0..cam.width {
                    let go = grad_out.pixel(x, y);
                    if go == Rgb::zeros() {
                        continue;
                    }
                    rec.clear();
                    let (c, t) = composite_pixel(x, y, &splats, &cand, opts, Some(&mut rec));
                    let g = Rgb::from_fn(|k, _| if (0.0..=1.0).contains(&c[k]) { go[k] } else { 0.0 });
                    accumulate_pixel(&splats, &rec, g, t, bg, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; ACC * n];
    for b in &blocks {
        for (a, v) in acc.iter_mut().zip(b) {
            *a += v;
        }
    }
    let per_splat: Vec<(Vec<f64>, [f64; img::STRIDE])> = splats
        .par_iter()
        .enumerate()
        .map(|(slot, s)| primitive_backward(&scene.primitives[s.index], s, &acc[ACC * slot..ACC * (slot + 1)], &setup))
        .collect();
    let mut out = RenderGradient::zeros(scene);
    let stride = primitive_stride(scene.sh_degree);
    for (s, (gp, gi)) in splats.iter().zip(per_splat) {
        out.scene[stride * s.index..stride * (s.index + 1)].copy_from_slice(&gp);
        for (a, v) in out.image.iter_mut().zip(gi) {
            *a += v;
        }
    }
    out
}

/// Step used for coordinate `theta` at relative step `h_rel`.
pub fn fd_step(theta: f64, h_rel: f64) -> f64 {
    (h_rel * theta.abs()).max(1e-6)
}

/// Central finite differences of `loss` at `theta`, one coordinate at a time.
pub fn fd_gradient(loss: impl Fn(&[f64]) -> f64, theta: &[f64], h_rel: f64) -> Vec<f64> {
    assert!(h_rel > 0.0, "h_rel must be positive");
    let mut work = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let h = fd_step(theta[i], h_rel);
            work[i] = theta[i] + h;
            let fp = loss(&work);
            work[i] = theta[i] - h;
            let fm = loss(&work);
            work[i] = theta[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Relative error threshold used by [`check_gradients`].
pub const REL_TOLERANCE: f64 = 1e-3;
/// Absolute threshold for coordinates whose FD magnitude is below [`TINY_GRADIENT`].
pub const ABS_TOLERANCE: f64 = 1e-6;
pub const TINY_GRADIENT: f64 = 1e-8;
pub const DEFAULT_H_REL: f64 = 1e-4;

/// Where one parameter lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamAddress {
    Primitive { index: usize, offset: usize },
    Image { offset: usize },
}

impl fmt::Display for ParamAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamAddress::Primitive { index, offset } => write!(f, "primitive[{index}]+{offset}"),
            ParamAddress::Image { offset } => write!(f, "image+{offset}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub compared: usize,
    /// Coordinates skipped because a step crossed a clamp or cutoff.
    pub excluded: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<ParamAddress>,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOLERANCE && self.max_abs_error <= ABS_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(GroupReport::passed)
    }

    pub fn group(&self, g: ParamGroup) -> Option<&GroupReport> {
        self.groups.iter().find(|r| r.group == g)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<26} {:>8} {:>8} {:>12} {:>12}  {:<20} status", "group", "compared", "excluded", "max_rel", "max_abs", "worst")?;
        for g in &self.groups {
            let worst = g.worst.map(|a| a.to_string()).unwrap_or_else(|| "-".into());
            writeln!(
                f,
                "{:<26} {:>8} {:>8} {:>12.3e} {:>12.3e}  {:<20} {}",
                g.group.name(),
                g.compared,
                g.excluded,
                g.max_rel_error,
                g.max_abs_error,
                worst,
                if g.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

/// Compares [`render_backward`] with central differences of the functional
/// `sum(G * render)`, where `G` is a fixed random adjoint drawn from `seed`.
///
/// Coordinates whose steps (up to two step sizes either way) change
/// [`frame_signature`] are excluded. Quaternion gradients are projected onto
/// the tangent space of the unit sphere before comparison. Parameters of
/// disabled mechanisms and log-stds of exactly zero blur are not compared.
pub fn check_gradients(scene: &Scene, cam: &PinholeCamera, params: &PerImageParams, opts: &RenderOptions, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjoint = ImageBuffer {
        width: cam.width,
        height: cam.height,
        data: (0..3 * cam.width * cam.height).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let analytic = render_backward(scene, cam, params, opts, &adjoint);
    let base_sig = frame_signature(scene, cam, params, opts);
    let theta_s = scene_to_vec(scene);
    let theta_i = params_to_vec(params);
    let stride = primitive_stride(scene.sh_degree);
    let degree = scene.sh_degree;
    let enabled = params.enabled;

    let loss_of = |img: &ImageBuffer| img.data.iter().zip(&adjoint.data).map(|(a, b)| a * b).sum::<f64>();
    let eval_scene = |v: &[f64]| {
        let s = vec_to_scene(v, degree);
        (loss_of(&render(&s, cam, params, opts)), frame_signature(&s, cam, params, opts))
    };
    let eval_image = |v: &[f64]| {
        let p = vec_to_params(v, enabled);
        (loss_of(&render(scene, cam, &p, opts)), frame_signature(scene, cam, &p, opts))
    };

    struct Coord {
        addr: ParamAddress,
        group: ParamGroup,
    }
    let mut coords = Vec::new();
    for index in 0..scene.len() {
        for offset in 0..stride {
            coords.push(Coord { addr: ParamAddress::Primitive { index, offset }, group: ParamGroup::of_primitive_offset(offset) });
        }
    }
    for offset in 0..img::STRIDE {
        let group = ParamGroup::of_image_offset(offset);
        if !group.is_active(&enabled) || !theta_i[offset].is_finite() {
            continue;
        }
        coords.push(Coord { addr: ParamAddress::Image { offset }, group });
    }

    // (fd, smooth) per coordinate
    let fd: Vec<(f64, bool)> = coords
        .par_iter()
        .map(|c| {
            let (theta, pos, eval): (Vec<f64>, usize, &(dyn Fn(&[f64]) -> (f64, u64) + Sync)) = match c.addr {
                ParamAddress::Primitive { index, offset } => (theta_s.clone(), stride * index + offset, &eval_scene),
                ParamAddress::Image { offset } => (theta_i.to_vec(), offset, &eval_image),
            };
            let h = fd_step(theta[pos], DEFAULT_H_REL);
            let at = |delta: f64| {
                let mut t = theta.clone();
                t[pos] += delta;
                eval(&t)
            };
            let (fp, sp) = at(h);
            let (fm, sm) = at(-h);
            let (_, sp2) = at(2.0 * h);
            let (_, sm2) = at(-2.0 * h);
            let smooth = [sp, sm, sp2, sm2].iter().all(|s| *s == base_sig);
            ((fp - fm) / (2.0 * h), smooth)
        })
        .collect();

    let analytic_of = |addr: ParamAddress| match addr {
        ParamAddress::Primitive { index, offset } => analytic.scene[stride * index + offset],
        ParamAddress::Image { offset } => analytic.image[offset],
    };
    let value_of = |addr: ParamAddress| match addr {
        ParamAddress::Primitive { index, offset } => theta_s[stride * index + offset],
        ParamAddress::Image { offset } => theta_i[offset],
    };

    // tangent projection of quaternion blocks, applied to both gradients
    let mut a_vals: Vec<f64> = coords.iter().map(|c| analytic_of(c.addr)).collect();
    let mut f_vals: Vec<f64> = fd.iter().map(|(v, _)| *v).collect();
    let mut smooth: Vec<bool> = fd.iter().map(|(_, s)| *s).collect();
    let mut i = 0;
    while i < coords.len() {
        let is_quat_start = matches!(coords[i].addr, ParamAddress::Primitive { offset, .. } if offset == prim::ROTATION)
            || matches!(coords[i].addr, ParamAddress::Image { offset } if offset == img::ROTATION);
        if is_quat_start && i + 4 <= coords.len() {
            let q: Vec<f64> = (0..4).map(|k| value_of(coords[i + k].addr)).collect();
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            let u: Vec<f64> = q.iter().map(|v| v / norm).collect();
            for vals in [&mut a_vals, &mut f_vals] {
                let dot: f64 = (0..4).map(|k| vals[i + k] * u[k]).sum();
                for k in 0..4 {
                    vals[i + k] -= dot * u[k];
                }
            }
            let all = (0..4).all(|k| smooth[i + k]);
            for k in 0..4 {
                smooth[i + k] = all;
            }
            i += 4;
        } else {
            i += 1;
        }
    }

    let groups = ParamGroup::ALL
        .iter()
        .filter_map(|&group| {
            let members: Vec<usize> = (0..coords.len()).filter(|&k| coords[k].group == group).collect();
            if members.is_empty() {
                return None;
            }
            let mut r = GroupReport { group, compared: 0, excluded: 0, max_rel_error: 0.0, max_abs_error: 0.0, worst: None };
            let mut worst_score = -1.0;
            for k in members {
                if !smooth[k] {
                    r.excluded += 1;
                    continue;
                }
                r.compared += 1;
                let (a, f) = (a_vals[k], f_vals[k]);
                let diff = (a - f).abs();
                let score = if f.abs() < TINY_GRADIENT {
                    r.max_abs_error = r.max_abs_error.max(diff);
                    diff / ABS_TOLERANCE * REL_TOLERANCE
                } else {
                    let rel = diff / a.abs().max(f.abs());
                    r.max_rel_error = r.max_rel_error.max(rel);
                    rel
                };
                if score > worst_score {
                    worst_score = score;
                    r.worst = Some(coords[k].addr);
                }
            }
            Some(r)
        })
        .collect();
    GradReport { groups }
}

/// Scene, camera and per-image parameters for a gradient check: a small
/// degree-2 scene seen from an orbit view, with every mechanism active and
/// away from its identity value.
pub fn check_fixture(primitives: usize, size: usize, seed: u64) -> (Scene, PinholeCamera, PerImageParams) {
    let scene = crate::synth::generate_scene(primitives, 1.0, 2, seed);
    let cam = crate::synth::orbit_cameras(4, 1.0, 0.2, size, size)[1].clone();
    let mut p = PerImageParams::identity();
    p.motion.rotation = Quaternion::from_rotation_vector(&Vec3::new(0.01, -0.02, 0.015));
    p.motion.translation = Vec3::new(0.02, -0.01, 0.015);
    p.motion.log_std_rotation = Vec3::new(0.01f64.ln(), 0.02f64.ln(), 0.015f64.ln());
    p.motion.log_std_translation = Vec3::new(0.01f64.ln(), 0.005f64.ln(), 0.02f64.ln());
    p.defocus = DefocusParams { aperture: 3.0, focus_inv_depth: 0.35 };
    p.color.matrix = Mat3::new(1.05, 0.02, -0.01, 0.0, 0.95, 0.03, -0.02, 0.01, 1.1);
    p.color.offset = Vec3::new(0.02, -0.03, 0.01);
    (scene, cam, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, orbit_cameras};

    fn blurred_params() -> PerImageParams {
        check_fixture(5, 32, 21).2
    }

    fn fixture() -> (Scene, PinholeCamera) {
        let (scene, cam, _) = check_fixture(5, 32, 21);
        (scene, cam)
    }

    #[test]
    fn flat_layout_round_trips() {
        let (scene, _) = fixture();
        let v = scene_to_vec(&scene);
        assert_eq!(v.len(), 5 * primitive_stride(2));
        assert_eq!(vec_to_scene(&v, 2), scene);
        let p = blurred_params();
        assert_eq!(vec_to_params(&params_to_vec(&p), Mechanisms::ALL), p);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let (scene, cam) = fixture();
        let g = render_backward(&scene, &cam, &blurred_params(), &RenderOptions::default(), &ImageBuffer::new(32, 32));
        assert!(g.scene.iter().chain(g.image.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn uncovered_pixels_do_not_touch_color_params() {
        let scene = Scene {
            primitives: vec![GaussianPrimitive {
                position: Vec3::zeros(),
                log_scale: Vec3::repeat(0.02f64.ln()),
                rotation: Quaternion::IDENTITY,
                opacity_logit: 1.0,
                sh: vec![Rgb::zeros()],
            }],
            sh_degree: 0,
        };
        let cam = orbit_cameras(1, 1.0, 0.0, 32, 32).remove(0);
        let mut adjoint = ImageBuffer::new(32, 32);
        adjoint.set_pixel(0, 0, Rgb::repeat(1.0));
        let g = render_backward(&scene, &cam, &blurred_params(), &RenderOptions::default(), &adjoint);
        assert!(g.image[img::COLOR_MATRIX..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_is_linear_in_adjoint() {
        let (scene, cam) = fixture();
        let p = blurred_params();
        let opts = RenderOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_img = || ImageBuffer { width: 32, height: 32, data: (0..3072).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (a, b) = (rand_img(), rand_img());
        let sum = ImageBuffer { data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(), ..a.clone() };
        let ga = render_backward(&scene, &cam, &p, &opts, &a);
        let gb = render_backward(&scene, &cam, &p, &opts, &b);
        let gs = render_backward(&scene, &cam, &p, &opts, &sum);
        for ((x, y), z) in ga.scene.iter().chain(&ga.image).zip(gb.scene.iter().chain(&gb.image)).zip(gs.scene.iter().chain(&gs.image)) {
            assert!((x + y - z).abs() <= 1e-9 * (1.0 + z.abs()));
        }
    }

    #[test]
    fn identity_params_give_finite_blur_gradients() {
        let (scene, cam) = fixture();
        let adjoint = ImageBuffer::filled(32, 32, Rgb::repeat(1.0));
        let p = PerImageParams::initial(Mechanisms::ALL, 2.5, 0.5);
        let g = render_backward(&scene, &cam, &p, &RenderOptions::default(), &adjoint);
        assert!(g.is_finite());
        let g = render_backward(&scene, &cam, &PerImageParams::identity(), &RenderOptions::default(), &adjoint);
        assert!(g.is_finite());
    }

    #[test]
    fn backward_is_thread_count_independent() {
        let (scene, cam) = fixture();
        let adjoint = ImageBuffer::filled(32, 32, Rgb::new(0.3, -0.2, 0.5));
        let p = blurred_params();
        let opts = RenderOptions::default();
        let a = render_backward(&scene, &cam, &p, &opts, &adjoint);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| render_backward(&scene, &cam, &p, &opts, &adjoint));
        assert_eq!(a, b);
    }

    #[test]
    fn fd_gradient_examples() {
        let theta = [0.5, -2.0, 3.0, 0.0];
        let g = fd_gradient(|t| 0.5 * t.iter().map(|v| v * v).sum::<f64>(), &theta, DEFAULT_H_REL);
        for (a, b) in g.iter().zip(theta) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(fd_gradient(|_| 3.0, &theta, DEFAULT_H_REL).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_primitive_l2_cross_check() {
        let scene = generate_scene(1, 1.0, 1, 8);
        let cam = orbit_cameras(2, 1.0, 0.0, 24, 24).remove(0);
        let opts = RenderOptions::default();
        let p = blurred_params();
        let target = ImageBuffer::filled(24, 24, Rgb::repeat(0.2));
        let loss = |v: &[f64]| {
            let r = render(&vec_to_scene(v, 1), &cam, &p, &opts);
            0.5 * r.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let r = render(&scene, &cam, &p, &opts);
        let adjoint = ImageBuffer { data: r.data.iter().zip(&target.data).map(|(a, b)| a - b).collect(), ..r.clone() };
        let g = render_backward(&scene, &cam, &p, &opts, &adjoint);
        let fd = fd_gradient(loss, &scene_to_vec(&scene), DEFAULT_H_REL);
        for (k, (a, f)) in g.scene.iter().zip(&fd).enumerate() {
            assert!((a - f).abs() <= 1e-4 * a.abs().max(f.abs()) + 1e-7, "coordinate {k}: {a} vs {f}");
        }
    }

    #[test]
    fn check_passes_on_fixture_in_every_group() {
        let (scene, cam) = fixture();
        let report = check_gradients(&scene, &cam, &blurred_params(), &RenderOptions::default(), 3);
        println!("{report}");
        assert!(report.passed(), "\n{report}");
        for g in ParamGroup::ALL {
            assert!(report.group(g).unwrap().compared > 0, "{g:?} had nothing to compare");
        }
    }

    #[test]
    fn check_outcome_is_seed_independent() {
        let (scene, cam) = fixture();
        let p = PerImageParams { enabled: Mechanisms { defocus: false, ..Mechanisms::ALL }, ..blurred_params() };
        let a = check_gradients(&scene, &cam, &p, &RenderOptions::default(), 1);
        let b = check_gradients(&scene, &cam, &p, &RenderOptions::default(), 2);
        assert_eq!(a.passed(), b.passed());
        assert!(a.group(ParamGroup::Defocus).is_none());
    }
}
