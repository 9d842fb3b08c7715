//! Forward rendering: per-image world transform, splatting, defocus
//! inflation, opacity rescaling, and depth-sorted alpha compositing.
//!
//! Rows are composited in parallel; each pixel walks the same globally
//! sorted splat list, so output does not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{project, projection_jacobian, to_camera, PinholeCamera};
use crate::image::ImageBuffer;
use crate::math::{inverse2, skew, standard_normal3, Mat2, Mat2x3, Mat3, Vec2, Vec3};
use crate::robust::{defocus_radius, zeta_rigid, ColorParams, DefocusParams, MotionBlurParams, PerImageParams};
use crate::scene::{covariance_of, GaussianPrimitive, Rgb, Scene, COLOR_OFFSET};
use crate::sh::{self, basis_into};

/// Isotropic variance (px^2) added to every projected covariance.
pub const BLUR_FLOOR: f64 = 0.3;

/// Splats whose final 2D covariance determinant falls below this are skipped.
pub const MIN_COV_DET: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub sigma_cutoff: f64,
    pub min_alpha: f64,
    pub transmittance_floor: f64,
    pub alpha_clamp_max: f64,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            sigma_cutoff: 3.0,
            min_alpha: 1.0 / 255.0,
            transmittance_floor: 1e-4,
            alpha_clamp_max: 0.999,
            background: [0.0; 3],
        }
    }
}

impl RenderOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("sigma_cutoff", self.sigma_cutoff),
            ("min_alpha", self.min_alpha),
            ("transmittance_floor", self.transmittance_floor),
            ("alpha_clamp_max", self.alpha_clamp_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.alpha_clamp_max >= 1.0 {
            return Err("alpha_clamp_max must be below 1".into());
        }
        Ok(())
    }

    pub fn background(&self) -> Rgb {
        Rgb::from(self.background)
    }
}

/// A projected primitive ready for compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vec2,
    pub cov2d: Mat2,
    pub depth: f64,
    pub alpha_eff: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Culled {
    BehindCamera,
    OutsideImage,
    Degenerate,
}

/// Image-plane footprint of a (possibly blurred) 3D Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub mean2d: Vec2,
    /// Includes the [`BLUR_FLOOR`] dilation.
    pub cov2d: Mat2,
    pub depth: f64,
}

/// Projects a world-space Gaussian `(mean, cov)` through `cam`.
pub fn splat(mean: &Vec3, cov: &Mat3, cam: &PinholeCamera, opts: &RenderOptions) -> Result<Footprint, Culled> {
    let x_cam = to_camera(cam, mean);
    let (mean2d, depth) = project(cam, &x_cam).map_err(|_| Culled::BehindCamera)?;
    let jac = projection_jacobian(cam, &x_cam).map_err(|_| Culled::BehindCamera)?;
    let t = jac * cam.rotation;
    let cov2d = t * cov * t.transpose() + Mat2::identity() * BLUR_FLOOR;
    if bounding_box(&mean2d, &cov2d, cam, opts.sigma_cutoff).is_none() {
        return Err(Culled::OutsideImage);
    }
    Ok(Footprint { mean2d, cov2d, depth })
}

/// Pixel rectangle (inclusive) covered by the `cutoff`-sigma ellipse.
fn bounding_box(mean: &Vec2, cov: &Mat2, cam: &PinholeCamera, cutoff: f64) -> Option<[usize; 4]> {
    let ex = cutoff * cov[(0, 0)].max(0.0).sqrt();
    let ey = cutoff * cov[(1, 1)].max(0.0).sqrt();
    let x0 = (mean.x - ex).ceil().max(0.0);
    let x1 = (mean.x + ex).floor().min(cam.width as f64 - 1.0);
    let y0 = (mean.y - ey).ceil().max(0.0);
    let y1 = (mean.y + ey).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

/// How primitives are moved into the camera's world frame for one render.
#[derive(Debug, Clone, Copy)]
pub(crate) enum WorldTransform<'a> {
    /// Closed-form blur (first-order push-forward) with optional pose.
    Linearized { params: &'a MotionBlurParams, pose: bool, blur: bool },
    /// One fixed rigid transform; no covariance inflation, no opacity change.
    Rigid { rotation: Mat3, translation: Vec3 },
}

/// Every intermediate of the per-primitive forward pass; the backward pass
/// reuses these instead of recomputing them.
#[derive(Debug, Clone)]
pub(crate) struct PrimitiveForward {
    pub index: usize,
    pub rot: Mat3,
    pub var: Vec3,
    pub cov: Mat3,
    pub alpha: f64,
    /// Pre-rotation blurred covariance; equals `cov` without blur.
    pub inner: Mat3,
    #[allow(dead_code)]
    pub mean_world: Vec3,
    pub cov_world: Mat3,
    pub mb_scale: f64,
    pub x_cam: Vec3,
    pub jac: Mat2x3,
    pub t_mat: Mat2x3,
    pub cov2d: Mat2,
    pub radius: f64,
    pub cov_final: Mat2,
    pub conic: Mat2,
    pub def_scale: f64,
    pub alpha_eff: f64,
    pub view: Vec3,
    pub dir: Vec3,
    pub raw_color: Rgb,
    pub pre_clamp: Rgb,
    pub color: Rgb,
    pub mean2d: Vec2,
    pub bbox: [usize; 4],
}

pub(crate) struct FrameSetup<'a> {
    pub cam: &'a PinholeCamera,
    pub center: Vec3,
    pub transform: WorldTransform<'a>,
    pub defocus: Option<&'a DefocusParams>,
    pub color: Option<&'a ColorParams>,
    pub degree: usize,
    pub opts: &'a RenderOptions,
}

impl<'a> FrameSetup<'a> {
    pub fn closed_form(cam: &'a PinholeCamera, params: &'a PerImageParams, degree: usize, opts: &'a RenderOptions) -> Self {
        let e = params.enabled;
        FrameSetup {
            cam,
            center: cam.center(),
            transform: WorldTransform::Linearized { params: &params.motion, pose: e.pose, blur: e.motion_blur },
            defocus: e.defocus.then_some(&params.defocus),
            color: e.color.then_some(&params.color),
            degree,
            opts,
        }
    }
}

pub(crate) fn forward_primitive(p: &GaussianPrimitive, index: usize, f: &FrameSetup) -> Option<PrimitiveForward> {
    let rot = p.rotation_matrix();
    let var = p.log_scale.map(|s| (2.0 * s).exp());
    let cov = *covariance_of(p).matrix();
    let alpha = p.opacity();

    let (inner, mean_world, cov_world, mb_scale) = match f.transform {
        WorldTransform::Linearized { params, pose, blur } => {
            let inner = if blur {
                let k = skew(&p.position);
                cov + k * params.rotation_cov() * k.transpose() + params.translation_cov()
            } else {
                cov
            };
            let (mean_world, cov_world) = if pose {
                let r = params.rotation_matrix();
                let c = r * inner * r.transpose();
                (r * p.position + params.translation, 0.5 * (c + c.transpose()))
            } else {
                (p.position, inner)
            };
            let mb = if blur { (cov.determinant() / inner.determinant()).sqrt() } else { 1.0 };
            (inner, mean_world, cov_world, mb)
        }
        WorldTransform::Rigid { rotation, translation } => {
            let c = rotation * cov * rotation.transpose();
            (cov, rotation * p.position + translation, 0.5 * (c + c.transpose()), 1.0)
        }
    };
    if !mb_scale.is_finite() {
        return None;
    }

    let cam = f.cam;
    let x_cam = to_camera(cam, &mean_world);
    let (mean2d, depth) = project(cam, &x_cam).ok()?;
    let jac = projection_jacobian(cam, &x_cam).ok()?;
    let t_mat = jac * cam.rotation;
    let cov2d = t_mat * cov_world * t_mat.transpose() + Mat2::identity() * BLUR_FLOOR;

    let (radius, cov_final, def_scale) = match f.defocus {
        Some(d) => {
            let radius = defocus_radius(depth, d);
            let cov_final = cov2d + Mat2::identity() * (radius * radius);
            (radius, cov_final, (cov2d.determinant() / cov_final.determinant()).sqrt())
        }
        None => (0.0, cov2d, 1.0),
    };
    if !(cov_final.determinant() >= MIN_COV_DET) || !def_scale.is_finite() {
        return None;
    }
    let conic = inverse2(&cov_final)?;
    let bbox = bounding_box(&mean2d, &cov_final, cam, f.opts.sigma_cutoff)?;
    let alpha_eff = alpha * mb_scale * def_scale;

    let view = mean_world - f.center;
    let dir = view.normalize();
    let mut basis = [0.0; 16];
    let n = sh::coeff_count(f.degree);
    basis_into(&dir, f.degree, &mut basis[..n], None);
    let raw_color = crate::scene::sh_linear(&p.sh, &basis[..n]).add_scalar(COLOR_OFFSET);
    let pre_clamp = match f.color {
        Some(c) => c.matrix * raw_color + c.offset,
        None => raw_color,
    };
    let color = pre_clamp.map(|c| c.max(0.0));

    Some(PrimitiveForward {
        index,
        rot,
        var,
        cov,
        alpha,
        inner,
        mean_world,
        cov_world,
        mb_scale,
        x_cam,
        jac,
        t_mat,
        cov2d,
        radius,
        cov_final,
        conic,
        def_scale,
        alpha_eff,
        view,
        dir,
        raw_color,
        pre_clamp,
        color,
        mean2d,
        bbox,
    })
}

/// Forward pass over all primitives, sorted front to back (ties by index).
pub(crate) fn prepare_frame(scene: &Scene, f: &FrameSetup) -> Vec<PrimitiveForward> {
    let mut out: Vec<PrimitiveForward> = scene
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| forward_primitive(p, i, f))
        .collect();
    out.sort_by(|a, b| a.x_cam.z.total_cmp(&b.x_cam.z).then(a.index.cmp(&b.index)));
    out
}

/// One accepted blend step at a pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Position in the sorted splat list.
    pub slot: usize,
    pub alpha: f64,
    pub gauss: f64,
    pub clamped: bool,
    pub transmittance: f64,
    pub offset: Vec2,
}

/// Composites one pixel. Returns the unclamped color and final transmittance;
/// `record` receives every accepted blend step in order.
pub(crate) fn composite_pixel(
    x: usize,
    y: usize,
    splats: &[PrimitiveForward],
    candidates: &[usize],
    opts: &RenderOptions,
    mut record: Option<&mut Vec<Contribution>>,
) -> (Rgb, f64) {
    let mut color = Rgb::zeros();
    let mut t = 1.0;
    let p = Vec2::new(x as f64, y as f64);
    for &slot in candidates {
        let s = &splats[slot];
        if x < s.bbox[0] || x > s.bbox[1] {
            continue;
        }
        let d = p - s.mean2d;
        let power = -0.5 * (d.x * d.x * s.conic[(0, 0)] + d.x * d.y * (s.conic[(0, 1)] + s.conic[(1, 0)]) + d.y * d.y * s.conic[(1, 1)]);
        let gauss = power.exp();
        let raw = s.alpha_eff * gauss;
        if raw < opts.min_alpha {
            continue;
        }
        let clamped = raw > opts.alpha_clamp_max;
        let a = if clamped { opts.alpha_clamp_max } else { raw };
        if let Some(r) = record.as_deref_mut() {
            r.push(Contribution { slot, alpha: a, gauss, clamped, transmittance: t, offset: d });
        }
        color += s.color * (t * a);
        t *= 1.0 - a;
        if t < opts.transmittance_floor {
            break;
        }
    }
    (color + opts.background() * t, t)
}

/// Indices of splats whose bounding box covers row `y`.
pub(crate) fn row_candidates(splats: &[PrimitiveForward], y: usize, out: &mut Vec<usize>) {
    out.clear();
    out.extend(splats.iter().enumerate().filter(|(_, s)| s.bbox[2] <= y && y <= s.bbox[3]).map(|(i, _)| i));
}

/// Composites all pixels; values are left unclamped.
pub(crate) fn rasterize_raw(splats: &[PrimitiveForward], cam: &PinholeCamera, opts: &RenderOptions) -> ImageBuffer {
    let mut img = ImageBuffer::new(cam.width, cam.height);
    let row_len = 3 * cam.width;
    img.data.par_chunks_mut(row_len).enumerate().for_each(|(y, row)| {
        let mut cand = Vec::new();
        row_candidates(splats, y, &mut cand);
        for x in 0..cam.width {
            let (c, _) = composite_pixel(x, y, splats, &cand, opts, None);
            row[3 * x..3 * x + 3].copy_from_slice(c.as_slice());
        }
    });
    img
}

/// Renders `scene` from `cam` with one image's robustness parameters.
///
/// Output is clamped to `[0, 1]`. An empty scene renders the background.
pub fn render(scene: &Scene, cam: &PinholeCamera, params: &PerImageParams, opts: &RenderOptions) -> ImageBuffer {
    let setup = FrameSetup::closed_form(cam, params, scene.sh_degree, opts);
    let splats = prepare_frame(scene, &setup);
    rasterize_raw(&splats, cam, opts).clamped()
}

/// Projected splats in compositing order, for inspection and tests.
pub fn splats(scene: &Scene, cam: &PinholeCamera, params: &PerImageParams, opts: &RenderOptions) -> Vec<Splat2D> {
    let setup = FrameSetup::closed_form(cam, params, scene.sh_degree, opts);
    prepare_frame(scene, &setup)
        .into_iter()
        .map(|s| Splat2D { mean2d: s.mean2d, cov2d: s.cov_final, depth: s.x_cam.z, alpha_eff: s.alpha_eff, color: s.color })
        .collect()
}

/// Hash of every discrete decision a render makes: which primitives
/// survive culling, which blend at each pixel and in what order, which hit
/// the opacity clamp, and which colors clip. Two parameter settings with the
/// same signature lie on the same smooth piece of the render function.
pub fn frame_signature(scene: &Scene, cam: &PinholeCamera, params: &PerImageParams, opts: &RenderOptions) -> u64 {
    use std::hash::{Hash, Hasher};
    let setup = FrameSetup::closed_form(cam, params, scene.sh_degree, opts);
    let splats = prepare_frame(scene, &setup);
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for s in &splats {
        s.index.hash(&mut h);
        for c in s.pre_clamp.iter() {
            (*c < 0.0).hash(&mut h);
        }
    }
    let mut cand = Vec::new();
    let mut rec = Vec::new();
    for y in 0..cam.height {
        row_candidates(&splats, y, &mut cand);
        for x in 0..cam.width {
            rec.clear();
            let (c, _) = composite_pixel(x, y, &splats, &cand, opts, Some(&mut rec));
            rec.len().hash(&mut h);
            for r in &rec {
                (r.slot, r.clamped).hash(&mut h);
            }
            for v in c.iter() {
                ((*v < 0.0) as u8 + 2 * (*v > 1.0) as u8).hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Monte-Carlo reference for motion blur: the average of `n_samples`
/// renders, each applying one exact random rigid transform (shared by all
/// primitives) instead of the closed-form covariance inflation. Defocus and
/// color are applied exactly as in [`render`].
///
/// Sample `i` draws its noise from a ChaCha8 stream seeded by `seed` at
/// stream `i`, so results are independent of scheduling.
pub fn render_mc_oracle(
    scene: &Scene,
    cam: &PinholeCamera,
    params: &PerImageParams,
    opts: &RenderOptions,
    n_samples: usize,
    seed: u64,
) -> ImageBuffer {
    assert!(n_samples >= 1, "need at least one sample");
    let e = params.enabled;
    let blur = e.motion_blur && params.motion.has_blur();
    let base = if e.pose { params.motion } else { MotionBlurParams::identity() };
    let draw = |i: usize| -> (Mat3, Vec3) {
        if !blur {
            return zeta_rigid(&Vec3::zeros(), &Vec3::zeros(), &base);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let er = standard_normal3(&mut rng);
        let et = standard_normal3(&mut rng);
        zeta_rigid(&er, &et, &MotionBlurParams { ..base_with_blur(&base, &params.motion) })
    };
    let render_sample = |i: usize| {
        let (rotation, translation) = draw(i);
        let setup = FrameSetup {
            cam,
            center: cam.center(),
            transform: WorldTransform::Rigid { rotation, translation },
            defocus: e.defocus.then_some(&params.defocus),
            color: e.color.then_some(&params.color),
            degree: scene.sh_degree,
            opts,
        };
        rasterize_raw(&prepare_frame(scene, &setup), cam, opts).clamped()
    };
    if !blur {
        return render_sample(0);
    }
    let mut acc = vec![0.0; 3 * cam.width * cam.height];
    for i in 0..n_samples {
        let img = render_sample(i);
        for (a, v) in acc.iter_mut().zip(&img.data) {
            *a += v;
        }
    }
    let inv = n_samples as f64;
    ImageBuffer { width: cam.width, height: cam.height, data: acc.into_iter().map(|v| v / inv).collect() }
}

fn base_with_blur(base: &MotionBlurParams, blur: &MotionBlurParams) -> MotionBlurParams {
    MotionBlurParams { log_std_rotation: blur.log_std_rotation, log_std_translation: blur.log_std_translation, ..*base }
}
